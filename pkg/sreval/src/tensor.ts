/** Minimal CHW tensors with a backward tape.
 *
 * Activations are [c, h, w]; conv weights [cOut, cIn, k, k]; biases [c].
 * Float64 throughout: V8 computes doubles natively, and exact gradients make
 * the finite-difference tests clean.
 */

export class Tensor {
  data: Float64Array;
  grad: Float64Array | null = null;
  readonly c: number;
  readonly h: number;
  readonly w: number;
  requiresGrad: boolean;

  constructor(c: number, h: number, w: number, data?: Float64Array, requiresGrad = false) {
    this.c = c;
    this.h = h;
    this.w = w;
    this.data = data ?? new Float64Array(c * h * w);
    if (data && data.length !== c * h * w) {
      throw new Error(`tensor data length ${data.length} != ${c}x${h}x${w}`);
    }
    this.requiresGrad = requiresGrad;
  }

  get size(): number {
    return this.data.length;
  }

  at(c: number, y: number, x: number): number {
    return this.data[(c * this.h + y) * this.w + x];
  }

  ensureGrad(): Float64Array {
    if (this.grad === null) this.grad = new Float64Array(this.size);
    return this.grad;
  }

  zeroGrad(): void {
    if (this.grad) this.grad.fill(0);
  }

  clone(): Tensor {
    return new Tensor(this.c, this.h, this.w, this.data.slice(), this.requiresGrad);
  }
}

/** Flat parameter tensor (weights/bias): shape kept as metadata only. */
export class Param {
  data: Float64Array;
  grad: Float64Array;
  readonly shape: number[];
  readonly name: string;

  constructor(name: string, shape: number[], data: Float64Array) {
    const n = shape.reduce((a, b) => a * b, 1);
    if (data.length !== n) throw new Error(`${name}: data length ${data.length} != shape ${shape}`);
    this.name = name;
    this.shape = shape;
    this.data = data;
    this.grad = new Float64Array(n);
  }
}

export type BackwardFn = () => void;

/** Records backward closures during a forward pass; replayed in reverse. */
export class Tape {
  private ops: BackwardFn[] = [];
  /** params touched this pass, for sparse optimizer updates */
  touched = new Set<Param>();

  push(fn: BackwardFn): void {
    this.ops.push(fn);
  }

  touch(...params: Param[]): void {
    for (const p of params) this.touched.add(p);
  }

  backward(): void {
    for (let i = this.ops.length - 1; i >= 0; i--) this.ops[i]();
  }
}

/** No-op tape for inference paths. */
export const NO_TAPE: Tape | null = null;
