import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { describe, expect, it } from "vitest";

import { clamp01, PSNR_CAP_DB, psnr, readPpm, resizeBicubic, writePpm } from "../src/image";
import { generateDataset, loadDataset, bicubicBaseline, sampleCrop } from "../src/data";
import { Rng } from "../src/rng";
import { Tensor } from "../src/tensor";

function tmpdir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "sreval-test-"));
}

describe("psnr", () => {
  it("caps identical images", () => {
    const a = new Tensor(3, 4, 4, new Float64Array(48).fill(0.25));
    expect(psnr(a, a)).toBe(PSNR_CAP_DB);
  });

  it("zeros vs ones is 0 dB", () => {
    const a = new Tensor(1, 2, 2, new Float64Array(4).fill(0));
    const b = new Tensor(1, 2, 2, new Float64Array(4).fill(1));
    expect(psnr(a, b)).toBeCloseTo(0, 12);
  });

  it("matches a hand-computed 3x3 pair", () => {
    // diffs 0.1 on 3 of 9 pixels: mse = 3*0.01/9, psnr = 10*log10(1/mse)
    const a = new Tensor(1, 3, 3, Float64Array.from([0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]));
    const b = new Tensor(1, 3, 3, Float64Array.from([0.6, 0.5, 0.5, 0.4, 0.5, 0.5, 0.5, 0.6, 0.5]));
    const mse = (3 * 0.01) / 9;
    expect(psnr(a, b)).toBeCloseTo(10 * Math.log10(1 / mse), 9);
  });

  it("rejects shape mismatch", () => {
    const a = new Tensor(1, 2, 2);
    const b = new Tensor(1, 2, 3);
    expect(() => psnr(a, b)).toThrow(/shape mismatch/);
  });
});

describe("ppm round-trip", () => {
  it("read(write(x)) equals x up to 8-bit quantization", () => {
    const dir = tmpdir();
    const rng = new Rng(3);
    const img = new Tensor(3, 6, 5);
    for (let i = 0; i < img.size; i++) img.data[i] = rng.next();
    const file = path.join(dir, "x.ppm");
    writePpm(file, img);
    const back = readPpm(file);
    expect([back.c, back.h, back.w]).toEqual([3, 6, 5]);
    for (let i = 0; i < img.size; i++) {
      expect(Math.abs(back.data[i] - img.data[i])).toBeLessThanOrEqual(0.5 / 255 + 1e-9);
    }
  });
});

describe("bicubic resize", () => {
  it("preserves constants in both directions", () => {
    const img = new Tensor(3, 8, 8, new Float64Array(192).fill(0.42));
    for (const [h, w] of [[16, 16], [4, 4]]) {
      const out = resizeBicubic(img, h, w);
      for (let i = 0; i < out.size; i++) expect(out.data[i]).toBeCloseTo(0.42, 10);
    }
  });

  it("downscale antialiases a Nyquist checkerboard to its mean", () => {
    const img = new Tensor(1, 8, 8);
    for (let y = 0; y < 8; y++) for (let x = 0; x < 8; x++) img.data[y * 8 + x] = (x + y) % 2;
    const down = resizeBicubic(img, 4, 4);
    const center = down.at(0, 2, 2);
    expect(Math.abs(center - 0.5)).toBeLessThan(0.15);
  });
});

describe("dataset", () => {
  it("generates paired files and a deterministic 40/60 split", () => {
    const dir = tmpdir();
    generateDataset(dir, 10, 64, 2, 5);
    expect(fs.readdirSync(path.join(dir, "hr")).length).toBe(10);
    expect(fs.readdirSync(path.join(dir, "lr")).length).toBe(10);
    const a = loadDataset(dir, 9);
    const b = loadDataset(dir, 9);
    expect(a.train.map((p) => p.name)).toEqual(b.train.map((p) => p.name));
    expect(a.train.length).toBe(4);
    expect(a.val.length).toBe(6);
    const names = new Set(a.train.map((p) => p.name));
    for (const p of a.val) expect(names.has(p.name)).toBe(false);
  });

  it("lr files are half-size of hr", () => {
    const dir = tmpdir();
    generateDataset(dir, 3, 64, 2, 6);
    const ds = loadDataset(dir, 1);
    for (const p of [...ds.train, ...ds.val]) {
      expect(p.hr.h).toBe(p.lr.h * 2);
      expect(p.hr.w).toBe(p.lr.w * 2);
    }
  });

  it("crops are aligned across scales", () => {
    const dir = tmpdir();
    generateDataset(dir, 3, 64, 2, 8);
    const ds = loadDataset(dir, 1);
    const rng = new Rng(2);
    const crop = sampleCrop(ds.train[0], 8, 2, rng);
    expect([crop.lr.h, crop.lr.w]).toEqual([8, 8]);
    expect([crop.hr.h, crop.hr.w]).toEqual([16, 16]);
    // the bicubic upscale of the lr crop should correlate strongly with hr
    const up = resizeBicubic(crop.lr, 16, 16);
    expect(psnr(clamp01(up), crop.hr)).toBeGreaterThan(10);
  });

  it("bicubic baseline is finite and plausible", () => {
    const dir = tmpdir();
    generateDataset(dir, 6, 64, 2, 9);
    const ds = loadDataset(dir, 1);
    const base = bicubicBaseline(ds, 24);
    expect(base).toBeGreaterThan(10);
    expect(base).toBeLessThan(45);
  });
});
