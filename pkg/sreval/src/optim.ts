/** Adam over the shared parameter store, updating only tensors touched by
 * the sampled sub-network this step (per-tensor step counters handle the
 * bias correction), plus the cosine learning-rate schedule. */

import { Param } from "./tensor";

export function cosineLr(step: number, horizon: number, lrMax: number, lrMin: number): number {
  const t = Math.min(step, horizon);
  return lrMin + 0.5 * (lrMax - lrMin) * (1 + Math.cos((Math.PI * t) / horizon));
}

interface Slot {
  m: Float64Array;
  v: Float64Array;
  t: number;
}

export class Adam {
  private slots = new Map<Param, Slot>();

  constructor(
    readonly beta1 = 0.9,
    readonly beta2 = 0.999,
    readonly eps = 1e-8,
  ) {}

  step(touched: Iterable<Param>, lr: number): void {
    for (const p of touched) {
      let slot = this.slots.get(p);
      if (slot === undefined) {
        slot = { m: new Float64Array(p.data.length), v: new Float64Array(p.data.length), t: 0 };
        this.slots.set(p, slot);
      }
      slot.t += 1;
      const bc1 = 1 - Math.pow(this.beta1, slot.t);
      const bc2 = 1 - Math.pow(this.beta2, slot.t);
      const { m, v } = slot;
      const g = p.grad;
      const d = p.data;
      for (let i = 0; i < d.length; i++) {
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g[i];
        v[i] = this.beta2 * v[i] + (1 - this.beta2) * g[i] * g[i];
        d[i] -= (lr * (m[i] / bc1)) / (Math.sqrt(v[i] / bc2) + this.eps);
      }
      g.fill(0);
    }
  }
}
