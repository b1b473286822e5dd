/** Toy dataset: procedurally generated HR images, bicubic x2-downsampled LR
 * partners, a deterministic 40/60 split (shared-weight training vs policy
 * validation), and crop sampling.
 *
 * Directory layout (lexicographic pairing): <dir>/hr/img_NNN.ppm and
 * <dir>/lr/img_NNN.ppm with identical basenames.  Drop in any paired image
 * set with the same layout to replace the synthetic one.
 */

import * as fs from "fs";
import * as path from "path";

import { cropTensor, psnr, readPpm, resizeBicubic, writePpm } from "./image";
import { Rng } from "./rng";
import { Tensor } from "./tensor";

export interface Pair {
  name: string;
  lr: Tensor;
  hr: Tensor;
}

export interface Dataset {
  train: Pair[]; // 40%: shared-weight updates
  val: Pair[]; // 60%: policy validation
  scale: number;
}

/** Edge- and texture-dense synthetic HR image: thin oriented lines, line
 * gratings near the LR Nyquist rate, fine checkerboards, and many small
 * hard-edged boxes/disks over a mild gradient.  Dense high-frequency
 * structure is where plain bicubic upscaling leaves the most headroom for a
 * learned model. */
export function syntheticHr(rng: Rng, size: number): Tensor {
  const img = new Tensor(3, size, size);
  const gx = rng.uniform(-0.2, 0.2);
  const gy = rng.uniform(-0.2, 0.2);
  const base = [rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65)];
  for (let c = 0; c < 3; c++) {
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        img.data[(c * size + y) * size + x] = base[c] + (gx * x + gy * y) / size;
      }
    }
  }

  const paint = (x: number, y: number, delta: number[]) => {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    for (let c = 0; c < 3; c++) img.data[(c * size + y) * size + x] += delta[c];
  };

  // thin oriented lines, 1-2 px wide
  const lines = 8 + rng.int(6);
  for (let k = 0; k < lines; k++) {
    const theta = rng.uniform(0, Math.PI);
    const cs = Math.cos(theta);
    const sn = Math.sin(theta);
    const cx = rng.int(size);
    const cy = rng.int(size);
    const len = size * rng.uniform(0.3, 1.0);
    const wline = 1 + rng.int(2);
    const delta = [rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45)];
    for (let t = -len / 2; t < len / 2; t += 0.5) {
      const px = Math.round(cx + t * cs);
      const py = Math.round(cy + t * sn);
      for (let o = 0; o < wline; o++) paint(px - Math.round(o * sn), py + Math.round(o * cs), delta);
    }
  }

  // grating patches with periods straddling the LR Nyquist rate
  const gratings = 2 + rng.int(3);
  for (let k = 0; k < gratings; k++) {
    const gw = 16 + rng.int(size / 2);
    const gh = 16 + rng.int(size / 2);
    const x0 = rng.int(size - gw);
    const y0 = rng.int(size - gh);
    const period = 4 + rng.int(5);
    const vertical = rng.next() < 0.5;
    const amp = rng.uniform(0.15, 0.3);
    for (let y = y0; y < y0 + gh; y++) {
      for (let x = x0; x < x0 + gw; x++) {
        const phase = vertical ? x : y;
        const v = (Math.floor(phase / (period / 2)) % 2) * 2 - 1;
        for (let c = 0; c < 3; c++) img.data[(c * size + y) * size + x] += amp * v;
      }
    }
  }

  // small hard-edged boxes and disks
  const boxes = 8 + rng.int(8);
  for (let k = 0; k < boxes; k++) {
    const bw = 3 + rng.int(14);
    const bh = 3 + rng.int(14);
    const x0 = rng.int(size - bw);
    const y0 = rng.int(size - bh);
    const delta = [rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)];
    const disk = rng.next() < 0.35;
    const cxc = x0 + bw / 2;
    const cyc = y0 + bh / 2;
    const rad = Math.min(bw, bh) / 2;
    for (let y = y0; y < y0 + bh; y++) {
      for (let x = x0; x < x0 + bw; x++) {
        if (disk && (x - cxc) ** 2 + (y - cyc) ** 2 > rad * rad) continue;
        for (let c = 0; c < 3; c++) img.data[(c * size + y) * size + x] += delta[c];
      }
    }
  }

  // one fine checkerboard patch
  if (rng.next() < 0.7) {
    const cell = 3 + rng.int(2);
    const gw = 20 + rng.int(size / 2);
    const gh = 20 + rng.int(size / 2);
    const x0 = rng.int(size - gw);
    const y0 = rng.int(size - gh);
    const amp = rng.uniform(0.12, 0.25);
    for (let y = y0; y < y0 + gh; y++) {
      for (let x = x0; x < x0 + gw; x++) {
        const s = ((Math.floor(x / cell) + Math.floor(y / cell)) % 2) * 2 - 1;
        for (let c = 0; c < 3; c++) img.data[(c * size + y) * size + x] += amp * s;
      }
    }
  }

  for (let i = 0; i < img.size; i++) img.data[i] = Math.min(1, Math.max(0, img.data[i]));
  return img;
}

export function generateDataset(dir: string, count: number, hrSize: number, scale: number, seed: number): void {
  const rng = new Rng(seed);
  fs.mkdirSync(path.join(dir, "hr"), { recursive: true });
  fs.mkdirSync(path.join(dir, "lr"), { recursive: true });
  for (let i = 0; i < count; i++) {
    const hr = syntheticHr(rng, hrSize);
    const lr = resizeBicubic(hr, hrSize / scale, hrSize / scale);
    const name = `img_${String(i).padStart(3, "0")}.ppm`;
    writePpm(path.join(dir, "hr", name), hr);
    writePpm(path.join(dir, "lr", name), lr);
  }
}

export function loadDataset(dir: string, seed: number, scale = 2): Dataset {
  const hrDir = path.join(dir, "hr");
  const lrDir = path.join(dir, "lr");
  const names = fs.readdirSync(hrDir).filter((n) => n.endsWith(".ppm")).sort();
  if (names.length < 3) throw new Error(`dataset at ${dir}: need at least 3 image pairs`);
  const pairs: Pair[] = names.map((name) => ({
    name,
    hr: readPpm(path.join(hrDir, name)),
    lr: readPpm(path.join(lrDir, name)),
  }));
  for (const p of pairs) {
    if (p.hr.h !== p.lr.h * scale || p.hr.w !== p.lr.w * scale) {
      throw new Error(`${p.name}: hr ${p.hr.h}x${p.hr.w} is not ${scale}x the lr ${p.lr.h}x${p.lr.w}`);
    }
  }
  // deterministic 40/60 split; no image appears in both slices
  const order = new Rng(seed ^ 0x5eed).shuffled(pairs);
  const nTrain = Math.max(1, Math.round(0.4 * order.length));
  return { train: order.slice(0, nTrain), val: order.slice(nTrain), scale };
}

export interface Crop {
  lr: Tensor;
  hr: Tensor;
}

export function sampleCrop(pair: Pair, lrCrop: number, scale: number, rng: Rng): Crop {
  const y0 = rng.int(pair.lr.h - lrCrop + 1);
  const x0 = rng.int(pair.lr.w - lrCrop + 1);
  return {
    lr: cropTensor(pair.lr, y0, x0, lrCrop, lrCrop),
    hr: cropTensor(pair.hr, y0 * scale, x0 * scale, lrCrop * scale, lrCrop * scale),
  };
}

/** Fixed central window used for every PSNR evaluation (keeps the eval cost
 * bounded on slow hosts; model and bicubic baseline see identical pixels). */
export function centerCrop(pair: Pair, lrCrop: number, scale: number): Crop {
  const size = Math.min(lrCrop, pair.lr.h, pair.lr.w);
  const y0 = (pair.lr.h - size) >> 1;
  const x0 = (pair.lr.w - size) >> 1;
  return {
    lr: cropTensor(pair.lr, y0, x0, size, size),
    hr: cropTensor(pair.hr, y0 * scale, x0 * scale, size * scale, size * scale),
  };
}

/** Mean bicubic-upscale PSNR over the validation windows: the reference the
 * trained supernet has to beat. */
export function bicubicBaseline(ds: Dataset, evalCrop: number): number {
  let acc = 0;
  for (const p of ds.val) {
    const { lr, hr } = centerCrop(p, evalCrop, ds.scale);
    acc += psnr(resizeBicubic(lr, hr.h, hr.w), hr);
  }
  return acc / ds.val.length;
}
