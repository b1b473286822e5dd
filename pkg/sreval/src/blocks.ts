/** Candidate-op builders and the shared parameter store.
 *
 * Weight values are a pure function of (tensor name, global seed), so two
 * processes that touch weights in different orders still end up with
 * identical values: evaluation results replay exactly under a fixed seed.
 * A weight name encodes (layer, cell kind, node, source, op), which is the
 * sharing key: every sampled sub-network containing that edge reuses it.
 */

import {
  add,
  channelScale,
  conv2d,
  conv2dTranspose,
  depthwiseConv2d,
  globalAvgPool,
  pixelShuffle,
  relu,
  sigmoid,
  sub,
  upsampleBilinear2,
  upsampleNearest2,
  avgPool2,
} from "./ops";
import { Rng } from "./rng";
import { Param, Tape, Tensor } from "./tensor";

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

export class ParamStore {
  readonly params = new Map<string, Param>();

  constructor(readonly seed: number) {}

  /** He-style uniform init: variance gain/fanIn (gain 2 before ReLU, 1 on
   * linear paths) keeps activation scale flat across depth, which is what
   * lets one shared tail serve every sampled architecture. */
  get(name: string, shape: number[], fanIn: number, zeroInit = false, gain = 1): Param {
    let p = this.params.get(name);
    if (p === undefined) {
      const n = shape.reduce((a, b) => a * b, 1);
      const data = new Float64Array(n);
      if (!zeroInit) {
        const rng = new Rng((fnv1a(name) ^ this.seed) >>> 0);
        const s = Math.sqrt((3 * gain) / fanIn);
        for (let i = 0; i < n; i++) data[i] = rng.uniform(-s, s);
      }
      p = new Param(name, shape, data);
      this.params.set(name, p);
    }
    return p;
  }

  totalParams(): number {
    let n = 0;
    for (const p of this.params.values()) n += p.data.length;
    return n;
  }
}

export type OpForward = (x: Tensor, tape: Tape | null) => Tensor;

export const NORMAL_OPS = [
  "identity",
  "dil_conv_3x3",
  "dil_conv_5x5",
  "sep_conv_3x3",
  "sep_conv_5x5",
  "udpb",
  "rcab",
] as const;

export const UPSAMPLE_OPS = ["area", "bilinear", "nearest", "sub_pixel", "deconv"] as const;

function convLayer(store: ParamStore, prefix: string, cIn: number, cOut: number, k: number, gain = 1) {
  const w = store.get(`${prefix}.w`, [cOut, cIn, k, k], cIn * k * k, false, gain);
  const b = store.get(`${prefix}.b`, [cOut], cIn * k * k, true);
  return { w, b };
}

export function buildNormalOp(op: string, store: ParamStore, prefix: string, width: number): OpForward {
  switch (op) {
    case "identity":
      return (x) => x;
    case "dil_conv_3x3": {
      const { w, b } = convLayer(store, prefix, width, width, 3, 2);
      return (x, tape) => relu(conv2d(x, w, b, tape, { padTop: 2, dilation: 2 }), tape);
    }
    case "dil_conv_5x5": {
      const { w, b } = convLayer(store, prefix, width, width, 5, 2);
      return (x, tape) => relu(conv2d(x, w, b, tape, { padTop: 4, dilation: 2 }), tape);
    }
    case "sep_conv_3x3":
    case "sep_conv_5x5": {
      const k = op === "sep_conv_3x3" ? 3 : 5;
      const dw = store.get(`${prefix}.dw`, [width, k, k], k * k, false, 2);
      const pw = convLayer(store, `${prefix}.pw`, width, width, 1, 2);
      return (x, tape) =>
        relu(conv2d(depthwiseConv2d(x, dw, null, tape, (k - 1) / 2), pw.w, pw.b, tape, {}), tape);
    }
    case "udpb": {
      // DBPN-style x2 projection unit folded back to the input resolution:
      // deconv up, conv down, deconv on the down-projection residual, then a
      // parameter-free mean-pool back down so the block preserves shape
      // effective fan-in of a k6 s2 deconv output element is width * (6/2)^2
      const up1 = store.get(`${prefix}.up1.w`, [width, width, 6, 6], width * 9);
      const up1b = store.get(`${prefix}.up1.b`, [width], width * 9, true);
      const down = convLayer(store, `${prefix}.down`, width, width, 6);
      const up2 = store.get(`${prefix}.up2.w`, [width, width, 6, 6], width * 9);
      const up2b = store.get(`${prefix}.up2.b`, [width], width * 9, true);
      return (x, tape) => {
        const h0 = conv2dTranspose(x, up1, up1b, tape, 2, 2);
        const l0 = conv2d(h0, down.w, down.b, tape, { stride: 2, padTop: 2 });
        const h1 = conv2dTranspose(sub(l0, x, tape), up2, up2b, tape, 2, 2);
        return avgPool2(add(h0, h1, tape), tape);
      };
    }
    case "rcab": {
      const c1 = convLayer(store, `${prefix}.c1`, width, width, 3, 2);
      const c2 = convLayer(store, `${prefix}.c2`, width, width, 3);
      const squeeze = Math.max(Math.floor(width / 4), 1);
      const f1 = convLayer(store, `${prefix}.f1`, width, squeeze, 1, 2);
      const f2 = convLayer(store, `${prefix}.f2`, squeeze, width, 1);
      return (x, tape) => {
        const y = conv2d(relu(conv2d(x, c1.w, c1.b, tape, { padTop: 1 }), tape), c2.w, c2.b, tape, { padTop: 1 });
        const s = sigmoid(conv2d(relu(conv2d(globalAvgPool(y, tape), f1.w, f1.b, tape, {}), tape), f2.w, f2.b, tape, {}), tape);
        return add(x, channelScale(y, s, tape), tape);
      };
    }
    default:
      throw new Error(`unknown normal op ${op}`);
  }
}

/** Upsampling-cell ops.  atScale=true when the edge leaves an input node
 * (resolution jump happens here); false between intermediates, where the op
 * degenerates: interpolation to identity, sub-pixel to a plain 3x3 conv,
 * deconv to a 4x4 same-size conv. */
export function buildUpsampleOp(
  op: string,
  store: ParamStore,
  prefix: string,
  width: number,
  atScale: boolean,
): OpForward {
  if (!atScale) {
    switch (op) {
      case "area":
      case "bilinear":
      case "nearest":
        return (x) => x;
      case "sub_pixel": {
        const { w, b } = convLayer(store, `${prefix}.flat`, width, width, 3);
        return (x, tape) => conv2d(x, w, b, tape, { padTop: 1 });
      }
      case "deconv": {
        const { w, b } = convLayer(store, `${prefix}.flat`, width, width, 4);
        return (x, tape) =>
          conv2d(x, w, b, tape, { padTop: 2, padBottom: 1, padLeft: 2, padRight: 1 });
      }
      default:
        throw new Error(`unknown upsample op ${op}`);
    }
  }
  switch (op) {
    case "area": // integer-factor area upscaling == nearest replication
    case "nearest":
      return (x, tape) => upsampleNearest2(x, tape);
    case "bilinear":
      return (x, tape) => upsampleBilinear2(x, tape);
    case "sub_pixel": {
      const { w, b } = convLayer(store, prefix, width, width * 4, 3);
      return (x, tape) => pixelShuffle(conv2d(x, w, b, tape, { padTop: 1 }), 2, tape);
    }
    case "deconv": {
      // k4 s2 deconv: effective fan-in width * (4/2)^2
      const w = store.get(`${prefix}.w`, [width, width, 4, 4], width * 4);
      const b = store.get(`${prefix}.b`, [width], width * 4, true);
      return (x, tape) => conv2dTranspose(x, w, b, tape, 2, 1);
    }
    default:
      throw new Error(`unknown upsample op ${op}`);
  }
}
