/** The two-branch parameter-sharing super network.
 *
 * Every layer owns weights for both cell kinds and every (node, source, op)
 * edge; a sampled architecture activates one sub-graph.  Output is a global
 * residual over the bicubic x2 upscale of the input, with a zero-initialized
 * tail conv, so an untrained sub-network scores exactly the bicubic
 * baseline and training is pure upside.
 */

import { buildNormalOp, buildUpsampleOp, OpForward, ParamStore } from "./blocks";
import { centerCrop, Crop, Dataset, sampleCrop } from "./data";
import { clamp01, psnr, resizeBicubic } from "./image";
import { add, concatChannels, conv2d, l1Loss, scale as scaleT, upsampleNearest2 } from "./ops";
import { Adam, cosineLr } from "./optim";
import { Rng } from "./rng";
import { Tape, Tensor } from "./tensor";

export interface ArchJson {
  schema_version: number;
  B: number;
  L: number;
  normal_cell: [number, string, number, string][];
  upsample_cell: [number, string, number, string][];
  position: number;
}

export function validateArchJson(doc: any): ArchJson {
  if (typeof doc !== "object" || doc === null) throw new Error("arch: not an object");
  if (doc.schema_version !== 1) throw new Error(`arch: unsupported schema_version ${doc.schema_version}`);
  for (const key of ["normal_cell", "upsample_cell"]) {
    if (!Array.isArray(doc[key]) || doc[key].length !== doc.B - 2) {
      throw new Error(`arch: ${key} must have B-2 rows`);
    }
    doc[key].forEach((row: any, t: number) => {
      if (!Array.isArray(row) || row.length !== 4) throw new Error(`arch: ${key}[${t}] malformed`);
      for (const src of [row[0], row[2]]) {
        if (!Number.isInteger(src) || src < -2 || src > t - 1) {
          throw new Error(`arch: ${key}[${t}] source ${src} out of range`);
        }
      }
    });
  }
  if (!Number.isInteger(doc.position) || doc.position < 1 || doc.position > doc.L) {
    throw new Error(`arch: position ${doc.position} outside [1, ${doc.L}]`);
  }
  return doc as ArchJson;
}

export interface SupernetOptions {
  seed: number;
  width?: number; // per-op channels
  lrMax?: number;
  lrMin?: number;
  horizon?: number; // cosine schedule length in shared-weight steps
  batch?: number;
  crop?: number; // LR crop size for training
  evalCrop?: number; // LR window for validation PSNR
  residualScale?: number; // damping on the learned residual over the bicubic base
}

const SCALE = 2; // the only supported upsampling factor

export class Supernet {
  readonly store: ParamStore;
  readonly width: number;
  readonly adam = new Adam();
  readonly lrMax: number;
  readonly lrMin: number;
  readonly horizon: number;
  readonly batch: number;
  readonly crop: number;
  readonly evalCrop: number;
  readonly residualScale: number;
  stepCount = 0;
  private cropRng: Rng;

  constructor(opts: SupernetOptions) {
    this.store = new ParamStore(opts.seed);
    this.width = opts.width ?? 8;
    this.lrMax = opts.lrMax ?? 1e-3;
    this.lrMin = opts.lrMin ?? 1e-5;
    this.horizon = opts.horizon ?? 2000;
    this.batch = opts.batch ?? 1;
    this.crop = opts.crop ?? 12;
    this.evalCrop = opts.evalCrop ?? 24;
    this.residualScale = opts.residualScale ?? 0.1;
    this.cropRng = new Rng(opts.seed ^ 0xc40b);
  }

  private stemParams(cw: number) {
    return {
      w: this.store.get("stem.w", [cw, 3, 3, 3], 3 * 9),
      b: this.store.get("stem.b", [cw], 3 * 9, true),
    };
  }

  private tailParams(cw: number) {
    // split tail, both zero-init so an untrained sub-network reproduces the
    // bicubic base exactly: an image head on the base channels learns an
    // architecture-independent correction with clean gradients, while the
    // trunk head contributes architecture-specific detail, damped so
    // cross-architecture interference cannot swamp the image head
    return {
      imgW: this.store.get("tail.img.w", [3, 3, 3, 3], 27, true),
      imgB: this.store.get("tail.img.b", [3], 27, true),
      trunkW: this.store.get("tail.trunk.w", [3, cw, 3, 3], cw * 9, true),
      trunkB: this.store.get("tail.trunk.b", [3], cw * 9, true),
    };
  }

  private calibParams(layer: number, kind: string, slot: number, cw: number) {
    const prefix = `l${layer}.${kind}.calib${slot}`;
    return {
      w: this.store.get(`${prefix}.w`, [this.width, cw, 1, 1], cw),
      b: this.store.get(`${prefix}.b`, [this.width], cw, true),
    };
  }

  private edgeOp(layer: number, kind: string, t: number, src: number, op: string, atScale: boolean): OpForward {
    const prefix = `l${layer}.${kind}.n${t}.s${src}.${op}`;
    return kind === "upsample"
      ? buildUpsampleOp(op, this.store, prefix, this.width, atScale)
      : buildNormalOp(op, this.store, prefix, this.width);
  }

  private cellForward(
    layer: number,
    kind: "normal" | "upsample",
    rows: [number, string, number, string][],
    inPrev2: Tensor,
    inPrev1: Tensor,
    tape: Tape | null,
  ): Tensor {
    const cw = rows.length * this.width;
    const c2 = this.calibParams(layer, kind, -2, inPrev2.c);
    const c1 = this.calibParams(layer, kind, -1, inPrev1.c);
    const cal2 = conv2d(inPrev2, c2.w, c2.b, tape, {});
    const cal1 = conv2d(inPrev1, c1.w, c1.b, tape, {});
    const nodes: Tensor[] = [];
    for (let t = 0; t < rows.length; t++) {
      const [srcA, opA, srcB, opB] = rows[t];
      const parts: Tensor[] = [];
      for (const [src, op] of [
        [srcA, opA],
        [srcB, opB],
      ] as [number, string][]) {
        const input = src === -2 ? cal2 : src === -1 ? cal1 : nodes[src];
        const atScale = kind === "upsample" && src < 0;
        parts.push(this.edgeOp(layer, kind, t, src, op, atScale)(input, tape));
      }
      if (parts[0].h !== parts[1].h || parts[0].w !== parts[1].w) {
        throw new Error(`layer ${layer} node ${t}: intermediate resolutions diverge`);
      }
      // average, not sum: keeps the activation scale flat across depth
      nodes.push(scaleT(add(parts[0], parts[1], tape), 0.5, tape));
    }
    const out = concatChannels(nodes, tape);
    if (out.c !== cw) throw new Error(`layer ${layer}: concat width ${out.c} != ${cw}`);
    return out;
  }

  /** SR forward pass; returns the unclamped HR estimate. */
  forward(arch: ArchJson, lr: Tensor, tape: Tape | null): Tensor {
    const cw = (arch.B - 2) * this.width;
    const stem = this.stemParams(cw);
    const tail = this.tailParams(cw);
    let prev = conv2d(lr, stem.w, stem.b, tape, { padTop: 1 });
    let prev2 = prev;
    for (let layer = 1; layer <= arch.L; layer++) {
      const kind = layer === arch.position ? "upsample" : "normal";
      let in2 = prev2;
      if (in2.h < prev.h) in2 = upsampleNearest2(in2, tape); // bridge the jump
      if (in2.h !== prev.h || in2.w !== prev.w) {
        throw new Error(`layer ${layer}: input resolutions diverge (${in2.h} vs ${prev.h})`);
      }
      const rows = kind === "upsample" ? arch.upsample_cell : arch.normal_cell;
      const out = this.cellForward(layer, kind, rows, in2, prev, tape);
      const expect = kind === "upsample" ? prev.h * SCALE : prev.h;
      if (out.h !== expect) {
        throw new Error(`layer ${layer}: expected height ${expect}, got ${out.h}`);
      }
      prev2 = prev;
      prev = out;
    }
    if (prev.h !== lr.h * SCALE) {
      throw new Error(`network output ${prev.h} != input ${lr.h} x scale ${SCALE}`);
    }
    const base = resizeBicubic(lr, lr.h * SCALE, lr.w * SCALE);
    const imgRes = conv2d(base, tail.imgW, tail.imgB, tape, { padTop: 1 });
    const trunkRes = scaleT(conv2d(prev, tail.trunkW, tail.trunkB, tape, { padTop: 1 }), this.residualScale, tape);
    return add(add(imgRes, trunkRes, tape), base, tape);
  }

  /** One shared-weight step: L1 loss over a mini-batch of crops, sampling
   * one architecture per step (round-robin over the provided list). */
  trainStep(archs: ArchJson[], ds: Dataset, stepIndex: number): number {
    const arch = archs[stepIndex % archs.length];
    const lr = cosineLr(this.stepCount, this.horizon, this.lrMax, this.lrMin);
    const tape = new Tape();
    let loss = 0;
    const crops: Crop[] = [];
    for (let b = 0; b < this.batch; b++) {
      const pair = ds.train[this.cropRng.int(ds.train.length)];
      crops.push(sampleCrop(pair, Math.min(this.crop, pair.lr.h), ds.scale, this.cropRng));
    }
    for (const crop of crops) {
      const out = this.forward(arch, crop.lr, tape);
      loss += l1Loss(out, crop.hr, tape);
    }
    tape.backward();
    if (this.batch > 1) {
      for (const p of tape.touched) {
        for (let i = 0; i < p.grad.length; i++) p.grad[i] /= this.batch;
      }
    }
    this.adam.step(tape.touched, lr);
    this.stepCount += 1;
    return loss / this.batch;
  }

  train(archs: ArchJson[], ds: Dataset, steps: number): { first: number; last: number } {
    let first = 0;
    let last = 0;
    for (let s = 0; s < steps; s++) {
      const loss = this.trainStep(archs, ds, s);
      if (s === 0) first = loss;
      last = loss;
    }
    return { first, last };
  }

  /** Mean validation-window PSNR of one sub-network under the current
   * shared weights. */
  evaluate(arch: ArchJson, ds: Dataset): number {
    let acc = 0;
    for (const pair of ds.val) {
      const { lr, hr } = centerCrop(pair, this.evalCrop, ds.scale);
      const out = clamp01(this.forward(arch, lr, null));
      acc += psnr(out, hr);
    }
    return acc / ds.val.length;
  }
}
