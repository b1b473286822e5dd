/** Image plumbing: binary PPM (P6) read/write, bicubic resampling with a
 * Catmull-Rom kernel (widened for downscaling so it antialiases), PSNR. */

import * as fs from "fs";

import { Tensor } from "./tensor";

export function writePpm(path: string, img: Tensor): void {
  if (img.c !== 3) throw new Error("ppm: expected 3 channels");
  const header = Buffer.from(`P6\n${img.w} ${img.h}\n255\n`, "ascii");
  const body = Buffer.alloc(img.w * img.h * 3);
  let i = 0;
  for (let y = 0; y < img.h; y++) {
    for (let x = 0; x < img.w; x++) {
      for (let c = 0; c < 3; c++) {
        const v = Math.round(img.at(c, y, x) * 255);
        body[i++] = Math.min(255, Math.max(0, v));
      }
    }
  }
  fs.writeFileSync(path, Buffer.concat([header, body]));
}

export function readPpm(path: string): Tensor {
  const buf = fs.readFileSync(path);
  // header: magic, width, height, maxval separated by whitespace/comments
  let pos = 0;
  const token = (): string => {
    while (pos < buf.length) {
      const ch = buf[pos];
      if (ch === 0x23) {
        while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
        pos++;
      } else break;
    }
    const start = pos;
    while (pos < buf.length && ![0x20, 0x09, 0x0a, 0x0d].includes(buf[pos])) pos++;
    return buf.subarray(start, pos).toString("ascii");
  };
  const magic = token();
  if (magic !== "P6") throw new Error(`${path}: not a P6 ppm (magic ${magic})`);
  const w = parseInt(token(), 10);
  const h = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(w > 0 && h > 0 && maxval === 255)) throw new Error(`${path}: unsupported ppm header`);
  pos++; // single whitespace after maxval
  const img = new Tensor(3, h, w);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      for (let c = 0; c < 3; c++) {
        img.data[(c * h + y) * w + x] = buf[pos++] / 255;
      }
    }
  }
  return img;
}

function catmullRom(t: number): number {
  const a = -0.5;
  const at = Math.abs(t);
  if (at <= 1) return (a + 2) * at * at * at - (a + 3) * at * at + 1;
  if (at < 2) return a * at * at * at - 5 * a * at * at + 8 * a * at - 4 * a;
  return 0;
}

/** Bicubic resize to (hOut, wOut); kernel support widens by the scale
 * factor when shrinking, which is what makes downscaling antialiased. */
export function resizeBicubic(img: Tensor, hOut: number, wOut: number): Tensor {
  const out = new Tensor(img.c, hOut, wOut);

  const axisTaps = (nIn: number, nOut: number) => {
    const scale = nIn / nOut;
    const support = scale > 1 ? 2 * scale : 2;
    const taps: { idx: Int32Array; wgt: Float64Array }[] = [];
    for (let o = 0; o < nOut; o++) {
      const center = (o + 0.5) * scale - 0.5;
      const lo = Math.floor(center - support + 0.5);
      const hi = Math.floor(center + support + 0.5);
      const idx: number[] = [];
      const wgt: number[] = [];
      let sum = 0;
      for (let i = lo; i <= hi; i++) {
        const t = scale > 1 ? (i - center) / scale : i - center;
        const w = catmullRom(t);
        if (w === 0) continue;
        idx.push(Math.min(Math.max(i, 0), nIn - 1));
        wgt.push(w);
        sum += w;
      }
      for (let k = 0; k < wgt.length; k++) wgt[k] /= sum;
      taps.push({ idx: Int32Array.from(idx), wgt: Float64Array.from(wgt) });
    }
    return taps;
  };

  const ty = axisTaps(img.h, hOut);
  const tx = axisTaps(img.w, wOut);

  // horizontal then vertical
  const mid = new Tensor(img.c, img.h, wOut);
  for (let c = 0; c < img.c; c++) {
    for (let y = 0; y < img.h; y++) {
      const row = (c * img.h + y) * img.w;
      const oRow = (c * img.h + y) * wOut;
      for (let ox = 0; ox < wOut; ox++) {
        const { idx, wgt } = tx[ox];
        let acc = 0;
        for (let k = 0; k < idx.length; k++) acc += wgt[k] * img.data[row + idx[k]];
        mid.data[oRow + ox] = acc;
      }
    }
  }
  for (let c = 0; c < img.c; c++) {
    for (let oy = 0; oy < hOut; oy++) {
      const { idx, wgt } = ty[oy];
      const oRow = (c * hOut + oy) * wOut;
      for (let ox = 0; ox < wOut; ox++) {
        let acc = 0;
        for (let k = 0; k < idx.length; k++) acc += wgt[k] * mid.data[(c * img.h + idx[k]) * wOut + ox];
        out.data[oRow + ox] = acc;
      }
    }
  }
  return out;
}

export const PSNR_CAP_DB = 100;

/** 10*log10(1/MSE) for images in [0,1]; identical images cap at 100 dB. */
export function psnr(a: Tensor, b: Tensor): number {
  if (a.c !== b.c || a.h !== b.h || a.w !== b.w) {
    throw new Error(`psnr: shape mismatch ${a.c}x${a.h}x${a.w} vs ${b.c}x${b.h}x${b.w}`);
  }
  let acc = 0;
  for (let i = 0; i < a.size; i++) {
    const d = a.data[i] - b.data[i];
    acc += d * d;
  }
  const mse = acc / a.size;
  if (mse === 0) return PSNR_CAP_DB;
  return Math.min(10 * Math.log10(1 / mse), PSNR_CAP_DB);
}

export function clamp01(img: Tensor): Tensor {
  const out = new Tensor(img.c, img.h, img.w);
  for (let i = 0; i < img.size; i++) out.data[i] = Math.min(1, Math.max(0, img.data[i]));
  return out;
}

export function cropTensor(img: Tensor, y0: number, x0: number, h: number, w: number): Tensor {
  const out = new Tensor(img.c, h, w);
  for (let c = 0; c < img.c; c++) {
    for (let y = 0; y < h; y++) {
      const src = (c * img.h + y0 + y) * img.w + x0;
      out.data.set(img.data.subarray(src, src + w), (c * h + y) * w);
    }
  }
  return out;
}
