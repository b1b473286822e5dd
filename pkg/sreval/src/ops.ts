/** Differentiable ops over CHW tensors: direct convolutions (strided,
 * dilated, asymmetrically padded), transposed conv, depthwise conv,
 * elementwise math, pooling, pixel shuffle, interpolation upsamplers,
 * channel concat, and L1 loss.  Each op pushes its backward closure onto
 * the tape; pass tape = null on inference paths to skip all of it. */

import { Param, Tape, Tensor } from "./tensor";

function needsGrad(tape: Tape | null, ...inputs: Tensor[]): boolean {
  return tape !== null && inputs.some((t) => t.requiresGrad);
}

export interface ConvOpts {
  stride?: number;
  padTop?: number;
  padBottom?: number;
  padLeft?: number;
  padRight?: number;
  dilation?: number;
}

/** Copy x into a zero-padded [c, h+pt+pb, w+pl+pr] buffer; hot loops then
 * run branch-free over contiguous rows. */
function padTensor(x: Tensor, pt: number, pb: number, pl: number, pr: number): Float64Array {
  const Hp = x.h + pt + pb;
  const Wp = x.w + pl + pr;
  const out = new Float64Array(x.c * Hp * Wp);
  for (let c = 0; c < x.c; c++) {
    for (let y = 0; y < x.h; y++) {
      const src = (c * x.h + y) * x.w;
      const dst = (c * Hp + y + pt) * Wp + pl;
      out.set(x.data.subarray(src, src + x.w), dst);
    }
  }
  return out;
}

/** dst[d..d+n) += sum_k w[wOff+k] * src[s + i*sStep + k*tap]; one pass per
 * kernel row, fixed-width fast paths so this slow host still feeds the ALU. */
function accRow(
  dst: Float64Array, d: number, src: Float64Array, s: number, n: number,
  w: Float64Array, wOff: number, kw: number, tap: number, sStep: number,
): void {
  if (sStep === 1) {
    switch (kw) {
      case 1: {
        const w0 = w[wOff];
        for (let i = 0; i < n; i++) dst[d + i] += w0 * src[s + i];
        return;
      }
      case 3: {
        const w0 = w[wOff], w1 = w[wOff + 1], w2 = w[wOff + 2];
        const t1 = tap, t2 = 2 * tap;
        for (let i = 0; i < n; i++) {
          dst[d + i] += w0 * src[s + i] + w1 * src[s + i + t1] + w2 * src[s + i + t2];
        }
        return;
      }
      case 4: {
        const w0 = w[wOff], w1 = w[wOff + 1], w2 = w[wOff + 2], w3 = w[wOff + 3];
        const t1 = tap, t2 = 2 * tap, t3 = 3 * tap;
        for (let i = 0; i < n; i++) {
          dst[d + i] += w0 * src[s + i] + w1 * src[s + i + t1] + w2 * src[s + i + t2] + w3 * src[s + i + t3];
        }
        return;
      }
      case 5: {
        const w0 = w[wOff], w1 = w[wOff + 1], w2 = w[wOff + 2], w3 = w[wOff + 3], w4 = w[wOff + 4];
        const t1 = tap, t2 = 2 * tap, t3 = 3 * tap, t4 = 4 * tap;
        for (let i = 0; i < n; i++) {
          dst[d + i] += w0 * src[s + i] + w1 * src[s + i + t1] + w2 * src[s + i + t2]
            + w3 * src[s + i + t3] + w4 * src[s + i + t4];
        }
        return;
      }
      case 6: {
        const w0 = w[wOff], w1 = w[wOff + 1], w2 = w[wOff + 2];
        const w3 = w[wOff + 3], w4 = w[wOff + 4], w5 = w[wOff + 5];
        const t1 = tap, t2 = 2 * tap, t3 = 3 * tap, t4 = 4 * tap, t5 = 5 * tap;
        for (let i = 0; i < n; i++) {
          dst[d + i] += w0 * src[s + i] + w1 * src[s + i + t1] + w2 * src[s + i + t2]
            + w3 * src[s + i + t3] + w4 * src[s + i + t4] + w5 * src[s + i + t5];
        }
        return;
      }
    }
  }
  for (let i = 0; i < n; i++) {
    let acc = 0;
    const base = s + i * sStep;
    for (let k = 0; k < kw; k++) acc += w[wOff + k] * src[base + k * tap];
    dst[d + i] += acc;
  }
}

/** Scatter one input row through kw taps: dst[d + i*st + k] += w[k]*src[s+i]. */
function scatterRow(
  dst: Float64Array, d: number, src: Float64Array, s: number, n: number,
  w: Float64Array, wOff: number, kw: number, st: number,
): void {
  if (kw === 4) {
    const w0 = w[wOff], w1 = w[wOff + 1], w2 = w[wOff + 2], w3 = w[wOff + 3];
    for (let i = 0; i < n; i++) {
      const v = src[s + i];
      const base = d + i * st;
      dst[base] += w0 * v;
      dst[base + 1] += w1 * v;
      dst[base + 2] += w2 * v;
      dst[base + 3] += w3 * v;
    }
    return;
  }
  if (kw === 6) {
    const w0 = w[wOff], w1 = w[wOff + 1], w2 = w[wOff + 2];
    const w3 = w[wOff + 3], w4 = w[wOff + 4], w5 = w[wOff + 5];
    for (let i = 0; i < n; i++) {
      const v = src[s + i];
      const base = d + i * st;
      dst[base] += w0 * v;
      dst[base + 1] += w1 * v;
      dst[base + 2] += w2 * v;
      dst[base + 3] += w3 * v;
      dst[base + 4] += w4 * v;
      dst[base + 5] += w5 * v;
    }
    return;
  }
  for (let i = 0; i < n; i++) {
    const v = src[s + i];
    const base = d + i * st;
    for (let k = 0; k < kw; k++) dst[base + k] += w[wOff + k] * v;
  }
}

/** Backward of scatterRow: wAcc[k] += sum_i gop[d+i*st+k]*src[s+i] and
 * gsrc[s+i] += sum_k w[k]*gop[d+i*st+k]. */
function scatterRowBackward(
  gop: Float64Array, d: number, src: Float64Array, gsrc: Float64Array | null, s: number, n: number,
  w: Float64Array, wOff: number, wAcc: Float64Array, kw: number, st: number,
): void {
  for (let i = 0; i < n; i++) {
    const v = src[s + i];
    const base = d + i * st;
    let gx = 0;
    for (let k = 0; k < kw; k++) {
      const g = gop[base + k];
      wAcc[k] += g * v;
      gx += g * w[wOff + k];
    }
    if (gsrc !== null) gsrc[s + i] += gx;
  }
}

/** Backward twin of accRow: given the output-row grad g at dst, accumulate
 * tap-weight grads into wAcc[0..kw) and input grads into gsrc. */
function accRowBackward(
  go: Float64Array, d: number, src: Float64Array, gsrc: Float64Array | null, s: number, n: number,
  w: Float64Array, wOff: number, wAcc: Float64Array, kw: number, tap: number, sStep: number,
): void {
  if (gsrc !== null && sStep === 1 && kw === 3) {
    const w0 = w[wOff], w1 = w[wOff + 1], w2 = w[wOff + 2];
    let a0 = 0, a1 = 0, a2 = 0;
    const t1 = tap, t2 = 2 * tap;
    for (let i = 0; i < n; i++) {
      const g = go[d + i];
      const b = s + i;
      a0 += g * src[b];
      a1 += g * src[b + t1];
      a2 += g * src[b + t2];
      gsrc[b] += g * w0;
      gsrc[b + t1] += g * w1;
      gsrc[b + t2] += g * w2;
    }
    wAcc[0] += a0; wAcc[1] += a1; wAcc[2] += a2;
    return;
  }
  for (let k = 0; k < kw; k++) {
    const off = k * tap;
    const wv = w[wOff + k];
    let acc = 0;
    if (gsrc !== null) {
      for (let i = 0; i < n; i++) {
        const g = go[d + i];
        const b = s + i * sStep + off;
        acc += g * src[b];
        gsrc[b] += g * wv;
      }
    } else {
      for (let i = 0; i < n; i++) acc += go[d + i] * src[s + i * sStep + off];
    }
    wAcc[k] += acc;
  }
}

export function conv2d(x: Tensor, w: Param, b: Param | null, tape: Tape | null, opts: ConvOpts = {}): Tensor {
  const [cOut, cIn, kh, kw] = w.shape;
  if (cIn !== x.c) throw new Error(`conv2d: weight cIn ${cIn} != input channels ${x.c}`);
  const s = opts.stride ?? 1;
  const d = opts.dilation ?? 1;
  const pt = opts.padTop ?? 0;
  const pb = opts.padBottom ?? pt;
  const pl = opts.padLeft ?? pt;
  const pr = opts.padRight ?? pl;
  const hOut = Math.floor((x.h + pt + pb - d * (kh - 1) - 1) / s) + 1;
  const wOut = Math.floor((x.w + pl + pr - d * (kw - 1) - 1) / s) + 1;
  if (hOut <= 0 || wOut <= 0) throw new Error("conv2d: empty output");
  const Hp = x.h + pt + pb;
  const Wp = x.w + pl + pr;
  const xp = padTensor(x, pt, pb, pl, pr);

  const out = new Tensor(cOut, hOut, wOut);
  const wd = w.data;
  const od = out.data;
  if (b) {
    for (let co = 0; co < cOut; co++) od.fill(b.data[co], co * hOut * wOut, (co + 1) * hOut * wOut);
  }
  for (let ci = 0; ci < cIn; ci++) {
    const xBase = ci * Hp;
    for (let co = 0; co < cOut; co++) {
      const wBase = (co * cIn + ci) * kh * kw;
      const oBase = co * hOut;
      for (let ky = 0; ky < kh; ky++) {
        for (let oy = 0; oy < hOut; oy++) {
          const src = (xBase + oy * s + ky * d) * Wp;
          const dst = (oBase + oy) * wOut;
          accRow(od, dst, xp, src, wOut, wd, wBase + ky * kw, kw, d, s);
        }
      }
    }
  }

  if (tape !== null) {
    out.requiresGrad = true;
    tape.touch(w);
    if (b) tape.touch(b);
    tape.push(() => {
      const go = out.ensureGrad();
      const gw = w.grad;
      if (b) {
        const gb = b.grad;
        for (let co = 0; co < cOut; co++) {
          let acc = 0;
          for (let i = co * hOut * wOut; i < (co + 1) * hOut * wOut; i++) acc += go[i];
          gb[co] += acc;
        }
      }
      const gxp = x.requiresGrad ? new Float64Array(xp.length) : null;
      const wAcc = new Float64Array(kw);
      for (let ci = 0; ci < cIn; ci++) {
        const xBase = ci * Hp;
        for (let co = 0; co < cOut; co++) {
          const wBase = (co * cIn + ci) * kh * kw;
          const oBase = co * hOut;
          for (let ky = 0; ky < kh; ky++) {
            wAcc.fill(0);
            for (let oy = 0; oy < hOut; oy++) {
              const src = (xBase + oy * s + ky * d) * Wp;
              const dst = (oBase + oy) * wOut;
              accRowBackward(go, dst, xp, gxp, src, wOut, wd, wBase + ky * kw, wAcc, kw, d, s);
            }
            for (let k = 0; k < kw; k++) gw[wBase + ky * kw + k] += wAcc[k];
          }
        }
      }
      if (gxp) {
        const gx = x.ensureGrad();
        for (let c = 0; c < cIn; c++) {
          for (let y = 0; y < x.h; y++) {
            const src = (c * Hp + y + pt) * Wp + pl;
            const dst = (c * x.h + y) * x.w;
            for (let i = 0; i < x.w; i++) gx[dst + i] += gxp[src + i];
          }
        }
      }
    });
  }
  return out;
}

/** Transposed conv, weight [cIn, cOut, k, k]; hOut = (h-1)*stride - 2*pad + k.
 * Scatters into a padded accumulator so inner loops stay branch-free, then
 * crops by pad. */
export function conv2dTranspose(x: Tensor, w: Param, b: Param | null, tape: Tape | null, stride: number, pad: number): Tensor {
  const [cIn, cOut, kh, kw] = w.shape;
  if (cIn !== x.c) throw new Error(`deconv: weight cIn ${cIn} != input channels ${x.c}`);
  const hOut = (x.h - 1) * stride - 2 * pad + kh;
  const wOut = (x.w - 1) * stride - 2 * pad + kw;
  if (hOut <= 0 || wOut <= 0) throw new Error("deconv: empty output");
  const Hp = (x.h - 1) * stride + kh; // uncropped accumulator dims
  const Wp = (x.w - 1) * stride + kw;
  const H = x.h;
  const W = x.w;
  const xd = x.data;
  const wd = w.data;

  const acc = new Float64Array(cOut * Hp * Wp);
  for (let ci = 0; ci < cIn; ci++) {
    const xBase = ci * H;
    for (let co = 0; co < cOut; co++) {
      const wBase = (ci * cOut + co) * kh * kw;
      const aBase = co * Hp;
      for (let ky = 0; ky < kh; ky++) {
        for (let iy = 0; iy < H; iy++) {
          const src = (xBase + iy) * W;
          const dst = (aBase + iy * stride + ky) * Wp;
          scatterRow(acc, dst, xd, src, W, wd, wBase + ky * kw, kw, stride);
        }
      }
    }
  }
  const out = new Tensor(cOut, hOut, wOut);
  const od = out.data;
  for (let co = 0; co < cOut; co++) {
    const bias = b ? b.data[co] : 0;
    for (let oy = 0; oy < hOut; oy++) {
      const src = (co * Hp + oy + pad) * Wp + pad;
      const dst = (co * hOut + oy) * wOut;
      for (let ox = 0; ox < wOut; ox++) od[dst + ox] = acc[src + ox] + bias;
    }
  }

  if (tape !== null) {
    out.requiresGrad = true;
    tape.touch(w);
    if (b) tape.touch(b);
    tape.push(() => {
      const go = out.ensureGrad();
      const gw = w.grad;
      if (b) {
        const gb = b.grad;
        for (let co = 0; co < cOut; co++) {
          let s = 0;
          for (let i = co * hOut * wOut; i < (co + 1) * hOut * wOut; i++) s += go[i];
          gb[co] += s;
        }
      }
      // embed the output grad back into the uncropped frame
      const gop = new Float64Array(cOut * Hp * Wp);
      for (let co = 0; co < cOut; co++) {
        for (let oy = 0; oy < hOut; oy++) {
          const dst = (co * Hp + oy + pad) * Wp + pad;
          const src = (co * hOut + oy) * wOut;
          for (let ox = 0; ox < wOut; ox++) gop[dst + ox] = go[src + ox];
        }
      }
      const gx = x.requiresGrad ? x.ensureGrad() : null;
      const wAcc = new Float64Array(kw);
      for (let ci = 0; ci < cIn; ci++) {
        const xBase = ci * H;
        for (let co = 0; co < cOut; co++) {
          const wBase = (ci * cOut + co) * kh * kw;
          const aBase = co * Hp;
          for (let ky = 0; ky < kh; ky++) {
            wAcc.fill(0);
            for (let iy = 0; iy < H; iy++) {
              const src = (xBase + iy) * W;
              const dst = (aBase + iy * stride + ky) * Wp;
              scatterRowBackward(gop, dst, xd, gx, src, W, wd, wBase + ky * kw, wAcc, kw, stride);
            }
            for (let k = 0; k < kw; k++) gw[wBase + ky * kw + k] += wAcc[k];
          }
        }
      }
    });
  }
  return out;
}

/** Depthwise conv, weight [c, k, k], symmetric padding. */
export function depthwiseConv2d(x: Tensor, w: Param, b: Param | null, tape: Tape | null, pad: number): Tensor {
  const [c, kh, kw] = w.shape;
  if (c !== x.c) throw new Error("depthwise: channel mismatch");
  const hOut = x.h + 2 * pad - kh + 1;
  const wOut = x.w + 2 * pad - kw + 1;
  const Hp = x.h + 2 * pad;
  const Wp = x.w + 2 * pad;
  const xp = padTensor(x, pad, pad, pad, pad);
  const out = new Tensor(c, hOut, wOut);
  const wd = w.data;
  const od = out.data;
  if (b) {
    for (let ci = 0; ci < c; ci++) od.fill(b.data[ci], ci * hOut * wOut, (ci + 1) * hOut * wOut);
  }
  for (let ci = 0; ci < c; ci++) {
    const wBase = ci * kh * kw;
    const xBase = ci * Hp;
    const oBase = ci * hOut;
    for (let ky = 0; ky < kh; ky++) {
      for (let oy = 0; oy < hOut; oy++) {
        accRow(od, (oBase + oy) * wOut, xp, (xBase + oy + ky) * Wp, wOut, wd, wBase + ky * kw, kw, 1, 1);
      }
    }
  }
  if (tape !== null) {
    out.requiresGrad = true;
    tape.touch(w);
    if (b) tape.touch(b);
    tape.push(() => {
      const go = out.ensureGrad();
      const gw = w.grad;
      if (b) {
        const gb = b.grad;
        for (let ci = 0; ci < c; ci++) {
          let s = 0;
          for (let i = ci * hOut * wOut; i < (ci + 1) * hOut * wOut; i++) s += go[i];
          gb[ci] += s;
        }
      }
      const gxp = x.requiresGrad ? new Float64Array(xp.length) : null;
      const wAcc = new Float64Array(kw);
      for (let ci = 0; ci < c; ci++) {
        const wBase = ci * kh * kw;
        const xBase = ci * Hp;
        const oBase = ci * hOut;
        for (let ky = 0; ky < kh; ky++) {
          wAcc.fill(0);
          for (let oy = 0; oy < hOut; oy++) {
            accRowBackward(
              go, (oBase + oy) * wOut, xp, gxp, (xBase + oy + ky) * Wp, wOut, wd, wBase + ky * kw, wAcc, kw, 1, 1,
            );
          }
          for (let k = 0; k < kw; k++) gw[wBase + ky * kw + k] += wAcc[k];
        }
      }
      if (gxp) {
        const gx = x.ensureGrad();
        for (let ci = 0; ci < c; ci++) {
          for (let y = 0; y < x.h; y++) {
            const src = (ci * Hp + y + pad) * Wp + pad;
            const dst = (ci * x.h + y) * x.w;
            for (let i = 0; i < x.w; i++) gx[dst + i] += gxp[src + i];
          }
        }
      }
    });
  }
  return out;
}

export function relu(x: Tensor, tape: Tape | null): Tensor {
  const out = new Tensor(x.c, x.h, x.w);
  for (let i = 0; i < x.size; i++) out.data[i] = x.data[i] > 0 ? x.data[i] : 0;
  if (needsGrad(tape, x)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      const gx = x.ensureGrad();
      for (let i = 0; i < x.size; i++) if (x.data[i] > 0) gx[i] += go[i];
    });
  }
  return out;
}

export function scale(x: Tensor, k: number, tape: Tape | null): Tensor {
  const out = new Tensor(x.c, x.h, x.w);
  for (let i = 0; i < x.size; i++) out.data[i] = k * x.data[i];
  if (needsGrad(tape, x)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      const gx = x.ensureGrad();
      for (let i = 0; i < x.size; i++) gx[i] += k * go[i];
    });
  }
  return out;
}

export function sigmoid(x: Tensor, tape: Tape | null): Tensor {
  const out = new Tensor(x.c, x.h, x.w);
  for (let i = 0; i < x.size; i++) out.data[i] = 1 / (1 + Math.exp(-x.data[i]));
  if (needsGrad(tape, x)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      const gx = x.ensureGrad();
      for (let i = 0; i < x.size; i++) gx[i] += go[i] * out.data[i] * (1 - out.data[i]);
    });
  }
  return out;
}

function sameShape(a: Tensor, b: Tensor): void {
  if (a.c !== b.c || a.h !== b.h || a.w !== b.w) {
    throw new Error(`shape mismatch: ${a.c}x${a.h}x${a.w} vs ${b.c}x${b.h}x${b.w}`);
  }
}

export function add(a: Tensor, b: Tensor, tape: Tape | null): Tensor {
  sameShape(a, b);
  const out = new Tensor(a.c, a.h, a.w);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] + b.data[i];
  if (needsGrad(tape, a, b)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      if (a.requiresGrad) {
        const ga = a.ensureGrad();
        for (let i = 0; i < a.size; i++) ga[i] += go[i];
      }
      if (b.requiresGrad) {
        const gb = b.ensureGrad();
        for (let i = 0; i < b.size; i++) gb[i] += go[i];
      }
    });
  }
  return out;
}

export function sub(a: Tensor, b: Tensor, tape: Tape | null): Tensor {
  sameShape(a, b);
  const out = new Tensor(a.c, a.h, a.w);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] - b.data[i];
  if (needsGrad(tape, a, b)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      if (a.requiresGrad) {
        const ga = a.ensureGrad();
        for (let i = 0; i < a.size; i++) ga[i] += go[i];
      }
      if (b.requiresGrad) {
        const gb = b.ensureGrad();
        for (let i = 0; i < b.size; i++) gb[i] -= go[i];
      }
    });
  }
  return out;
}

/** x [c,h,w] scaled per channel by s [c,1,1]. */
export function channelScale(x: Tensor, s: Tensor, tape: Tape | null): Tensor {
  if (s.c !== x.c || s.h !== 1 || s.w !== 1) throw new Error("channelScale: scale must be [c,1,1]");
  const out = new Tensor(x.c, x.h, x.w);
  const hw = x.h * x.w;
  for (let c = 0; c < x.c; c++) {
    const sc = s.data[c];
    for (let i = c * hw; i < (c + 1) * hw; i++) out.data[i] = x.data[i] * sc;
  }
  if (needsGrad(tape, x, s)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      if (x.requiresGrad) {
        const gx = x.ensureGrad();
        for (let c = 0; c < x.c; c++) {
          const sc = s.data[c];
          for (let i = c * hw; i < (c + 1) * hw; i++) gx[i] += go[i] * sc;
        }
      }
      if (s.requiresGrad) {
        const gs = s.ensureGrad();
        for (let c = 0; c < x.c; c++) {
          let acc = 0;
          for (let i = c * hw; i < (c + 1) * hw; i++) acc += go[i] * x.data[i];
          gs[c] += acc;
        }
      }
    });
  }
  return out;
}

export function globalAvgPool(x: Tensor, tape: Tape | null): Tensor {
  const out = new Tensor(x.c, 1, 1);
  const hw = x.h * x.w;
  for (let c = 0; c < x.c; c++) {
    let acc = 0;
    for (let i = c * hw; i < (c + 1) * hw; i++) acc += x.data[i];
    out.data[c] = acc / hw;
  }
  if (needsGrad(tape, x)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      const gx = x.ensureGrad();
      for (let c = 0; c < x.c; c++) {
        const g = go[c] / hw;
        for (let i = c * hw; i < (c + 1) * hw; i++) gx[i] += g;
      }
    });
  }
  return out;
}

/** [c*r*r, h, w] -> [c, h*r, w*r]; out[c, y*r+i, x*r+j] = in[c*r*r + i*r + j, y, x]. */
export function pixelShuffle(x: Tensor, r: number, tape: Tape | null): Tensor {
  if (x.c % (r * r) !== 0) throw new Error(`pixelShuffle: channels ${x.c} not divisible by ${r * r}`);
  const c = x.c / (r * r);
  const out = new Tensor(c, x.h * r, x.w * r);
  const map = (co: number, oy: number, ox: number): number => {
    const i = oy % r;
    const j = ox % r;
    const ci = co * r * r + i * r + j;
    return (ci * x.h + Math.floor(oy / r)) * x.w + Math.floor(ox / r);
  };
  for (let co = 0; co < c; co++) {
    for (let oy = 0; oy < out.h; oy++) {
      for (let ox = 0; ox < out.w; ox++) {
        out.data[(co * out.h + oy) * out.w + ox] = x.data[map(co, oy, ox)];
      }
    }
  }
  if (needsGrad(tape, x)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      const gx = x.ensureGrad();
      for (let co = 0; co < c; co++) {
        for (let oy = 0; oy < out.h; oy++) {
          for (let ox = 0; ox < out.w; ox++) {
            gx[map(co, oy, ox)] += go[(co * out.h + oy) * out.w + ox];
          }
        }
      }
    });
  }
  return out;
}

/** Nearest-neighbor x2; integer-factor area interpolation reduces to the same map. */
export function upsampleNearest2(x: Tensor, tape: Tape | null): Tensor {
  const out = new Tensor(x.c, x.h * 2, x.w * 2);
  for (let c = 0; c < x.c; c++) {
    for (let oy = 0; oy < out.h; oy++) {
      const iRow = (c * x.h + (oy >> 1)) * x.w;
      const oRow = (c * out.h + oy) * out.w;
      for (let ox = 0; ox < out.w; ox++) out.data[oRow + ox] = x.data[iRow + (ox >> 1)];
    }
  }
  if (needsGrad(tape, x)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      const gx = x.ensureGrad();
      for (let c = 0; c < x.c; c++) {
        for (let oy = 0; oy < out.h; oy++) {
          const iRow = (c * x.h + (oy >> 1)) * x.w;
          const oRow = (c * out.h + oy) * out.w;
          for (let ox = 0; ox < out.w; ox++) gx[iRow + (ox >> 1)] += go[oRow + ox];
        }
      }
    });
  }
  return out;
}

/** Bilinear x2, half-pixel centers (align_corners = false). */
export function upsampleBilinear2(x: Tensor, tape: Tape | null): Tensor {
  const out = new Tensor(x.c, x.h * 2, x.w * 2);
  const H = x.h;
  const W = x.w;
  // precompute per-axis taps
  const taps = (n: number, outN: number) => {
    const i0 = new Int32Array(outN);
    const i1 = new Int32Array(outN);
    const w1 = new Float64Array(outN);
    for (let o = 0; o < outN; o++) {
      const src = (o + 0.5) / 2 - 0.5;
      const f = Math.floor(src);
      i0[o] = Math.min(Math.max(f, 0), n - 1);
      i1[o] = Math.min(Math.max(f + 1, 0), n - 1);
      w1[o] = Math.min(Math.max(src - f, 0), 1);
    }
    return { i0, i1, w1 };
  };
  const ty = taps(H, out.h);
  const tx = taps(W, out.w);
  for (let c = 0; c < x.c; c++) {
    const base = c * H * W;
    for (let oy = 0; oy < out.h; oy++) {
      const r0 = base + ty.i0[oy] * W;
      const r1 = base + ty.i1[oy] * W;
      const fy = ty.w1[oy];
      const oRow = (c * out.h + oy) * out.w;
      for (let ox = 0; ox < out.w; ox++) {
        const fx = tx.w1[ox];
        const a = x.data[r0 + tx.i0[ox]] * (1 - fx) + x.data[r0 + tx.i1[ox]] * fx;
        const b = x.data[r1 + tx.i0[ox]] * (1 - fx) + x.data[r1 + tx.i1[ox]] * fx;
        out.data[oRow + ox] = a * (1 - fy) + b * fy;
      }
    }
  }
  if (needsGrad(tape, x)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      const gx = x.ensureGrad();
      for (let c = 0; c < x.c; c++) {
        const base = c * H * W;
        for (let oy = 0; oy < out.h; oy++) {
          const r0 = base + ty.i0[oy] * W;
          const r1 = base + ty.i1[oy] * W;
          const fy = ty.w1[oy];
          const oRow = (c * out.h + oy) * out.w;
          for (let ox = 0; ox < out.w; ox++) {
            const fx = tx.w1[ox];
            const g = go[oRow + ox];
            gx[r0 + tx.i0[ox]] += g * (1 - fy) * (1 - fx);
            gx[r0 + tx.i1[ox]] += g * (1 - fy) * fx;
            gx[r1 + tx.i0[ox]] += g * fy * (1 - fx);
            gx[r1 + tx.i1[ox]] += g * fy * fx;
          }
        }
      }
    });
  }
  return out;
}

export function avgPool2(x: Tensor, tape: Tape | null): Tensor {
  if (x.h % 2 !== 0 || x.w % 2 !== 0) throw new Error("avgPool2: odd spatial size");
  const out = new Tensor(x.c, x.h / 2, x.w / 2);
  for (let c = 0; c < x.c; c++) {
    for (let oy = 0; oy < out.h; oy++) {
      const r0 = (c * x.h + 2 * oy) * x.w;
      const r1 = r0 + x.w;
      const oRow = (c * out.h + oy) * out.w;
      for (let ox = 0; ox < out.w; ox++) {
        const i = 2 * ox;
        out.data[oRow + ox] = 0.25 * (x.data[r0 + i] + x.data[r0 + i + 1] + x.data[r1 + i] + x.data[r1 + i + 1]);
      }
    }
  }
  if (needsGrad(tape, x)) {
    out.requiresGrad = true;
    tape!.push(() => {
      const go = out.ensureGrad();
      const gx = x.ensureGrad();
      for (let c = 0; c < x.c; c++) {
        for (let oy = 0; oy < out.h; oy++) {
          const r0 = (c * x.h + 2 * oy) * x.w;
          const r1 = r0 + x.w;
          const oRow = (c * out.h + oy) * out.w;
          for (let ox = 0; ox < out.w; ox++) {
            const g = 0.25 * go[oRow + ox];
            const i = 2 * ox;
            gx[r0 + i] += g;
            gx[r0 + i + 1] += g;
            gx[r1 + i] += g;
            gx[r1 + i + 1] += g;
          }
        }
      }
    });
  }
  return out;
}

export function concatChannels(parts: Tensor[], tape: Tape | null): Tensor {
  const h = parts[0].h;
  const w = parts[0].w;
  for (const p of parts) {
    if (p.h !== h || p.w !== w) throw new Error("concat: spatial mismatch");
  }
  const c = parts.reduce((acc, p) => acc + p.c, 0);
  const out = new Tensor(c, h, w);
  let offset = 0;
  for (const p of parts) {
    out.data.set(p.data, offset);
    offset += p.size;
  }
  if (tape !== null && parts.some((p) => p.requiresGrad)) {
    out.requiresGrad = true;
    tape.push(() => {
      const go = out.ensureGrad();
      let off = 0;
      for (const p of parts) {
        if (p.requiresGrad) {
          const gp = p.ensureGrad();
          for (let i = 0; i < p.size; i++) gp[i] += go[off + i];
        }
        off += p.size;
      }
    });
  }
  return out;
}

/** Mean absolute error; seeds pred.grad when backward runs. */
export function l1Loss(pred: Tensor, target: Tensor, tape: Tape | null): number {
  sameShape(pred, target);
  let acc = 0;
  for (let i = 0; i < pred.size; i++) acc += Math.abs(pred.data[i] - target.data[i]);
  const loss = acc / pred.size;
  if (needsGrad(tape, pred)) {
    tape!.push(() => {
      const gp = pred.ensureGrad();
      const n = pred.size;
      for (let i = 0; i < n; i++) {
        const d = pred.data[i] - target.data[i];
        gp[i] += (d > 0 ? 1 : d < 0 ? -1 : 0) / n;
      }
    });
  }
  return loss;
}
