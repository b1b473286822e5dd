/** Entry point.
 *
 *   serve     long-running NDJSON evaluator on stdin/stdout
 *   gen-data  write the synthetic paired LR/HR dataset
 *   calibrate offline training run printing the PSNR trajectory
 *
 * Protocol (one JSON object per line):
 *   {"id", "v": 1, "cmd": "ping"}                          -> {"id", "ok": true}
 *   {"id", "v": 1, "cmd": "eval", "arch": {...}, "seed"}   -> {"id", "ok": true, "psnr", "cost": null}
 *   {"id", "v": 1, "cmd": "train", "archs": [...], "steps"} -> {"id", "ok": true, "archs", "loss"}
 * Errors come back as {"id", "ok": false, "error": "..."}.
 */

import * as fs from "fs";
import * as readline from "readline";

import { bicubicBaseline, Dataset, generateDataset, loadDataset } from "./data";
import { ArchJson, Supernet, validateArchJson } from "./supernet";
import { Rng } from "./rng";

interface Args {
  cmd: string;
  data: string;
  seed: number;
  count: number;
  size: number;
  width: number;
  batch: number;
  crop: number;
  evalCrop: number;
  horizon: number;
  lrMax: number;
  lrMin: number;
  steps: number;
  residualScale: number;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {
    cmd: argv[0] ?? "",
    data: "toy-data",
    seed: 7,
    count: 12,
    size: 128,
    width: 8,
    batch: 1,
    crop: 12,
    evalCrop: 24,
    horizon: 2000,
    lrMax: 1e-3,
    lrMin: 1e-5,
    steps: 2000,
    residualScale: 0.1,
  };
  for (let i = 1; i < argv.length; i += 2) {
    const key = argv[i];
    const val = argv[i + 1];
    switch (key) {
      case "--data": args.data = val; break;
      case "--seed": args.seed = parseInt(val, 10); break;
      case "--count": args.count = parseInt(val, 10); break;
      case "--size": args.size = parseInt(val, 10); break;
      case "--width": args.width = parseInt(val, 10); break;
      case "--batch": args.batch = parseInt(val, 10); break;
      case "--crop": args.crop = parseInt(val, 10); break;
      case "--eval-crop": args.evalCrop = parseInt(val, 10); break;
      case "--horizon": args.horizon = parseInt(val, 10); break;
      case "--lr-max": args.lrMax = parseFloat(val); break;
      case "--lr-min": args.lrMin = parseFloat(val); break;
      case "--steps": args.steps = parseInt(val, 10); break;
      case "--residual-scale": args.residualScale = parseFloat(val); break;
      case "--out": args.data = val; break;
      default: throw new Error(`unknown flag ${key}`);
    }
  }
  return args;
}

function ensureDataset(args: Args): Dataset {
  if (!fs.existsSync(args.data)) {
    process.stderr.write(`sreval: generating synthetic dataset at ${args.data}\n`);
    generateDataset(args.data, args.count, args.size, 2, args.seed);
  }
  return loadDataset(args.data, args.seed);
}

function serve(args: Args): void {
  const ds = ensureDataset(args);
  const net = new Supernet({
    seed: args.seed,
    width: args.width,
    batch: args.batch,
    crop: args.crop,
    evalCrop: args.evalCrop,
    horizon: args.horizon,
    lrMax: args.lrMax,
    lrMin: args.lrMin,
    residualScale: args.residualScale,
  });
  const baseline = bicubicBaseline(ds, args.evalCrop);
  process.stderr.write(
    `sreval: serving (train ${ds.train.length} / val ${ds.val.length} images, bicubic baseline ${baseline.toFixed(3)} dB)\n`,
  );

  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  const reply = (obj: unknown) => process.stdout.write(JSON.stringify(obj) + "\n");

  rl.on("line", (line) => {
    line = line.trim();
    if (!line) return;
    let id: unknown = null;
    try {
      const req = JSON.parse(line);
      id = req.id ?? null;
      if (req.v !== 1) throw new Error(`unsupported protocol version ${req.v}`);
      switch (req.cmd) {
        case "ping":
          reply({ id, ok: true });
          return;
        case "eval": {
          const arch = validateArchJson(req.arch);
          const psnrDb = net.evaluate(arch, ds);
          reply({ id, ok: true, psnr: psnrDb, cost: null });
          return;
        }
        case "train": {
          const archs: ArchJson[] = (req.archs ?? []).map(validateArchJson);
          if (archs.length === 0) throw new Error("train: empty arch list");
          const steps = Number.isInteger(req.steps) && req.steps > 0 ? req.steps : 1;
          const { last } = net.train(archs, ds, steps);
          reply({ id, ok: true, archs: archs.length, loss: last });
          return;
        }
        default:
          throw new Error(`unknown cmd ${req.cmd}`);
      }
    } catch (err) {
      reply({ id, ok: false, error: String(err instanceof Error ? err.message : err) });
    }
  });
  rl.on("close", () => process.exit(0));
}

function randomArch(rng: Rng, B = 6, L = 8): ArchJson {
  const normalOps = ["identity", "dil_conv_3x3", "dil_conv_5x5", "sep_conv_3x3", "sep_conv_5x5", "udpb", "rcab"];
  const upOps = ["area", "bilinear", "nearest", "sub_pixel", "deconv"];
  const cell = (ops: string[]) => {
    const rows: [number, string, number, string][] = [];
    for (let t = 0; t < B - 2; t++) {
      rows.push([
        rng.int(t + 2) - 2,
        ops[rng.int(ops.length)],
        rng.int(t + 2) - 2,
        ops[rng.int(ops.length)],
      ]);
    }
    return rows;
  };
  return {
    schema_version: 1,
    B,
    L,
    normal_cell: cell(normalOps),
    upsample_cell: cell(upOps),
    position: 1 + rng.int(L),
  };
}

function calibrate(args: Args): void {
  const ds = ensureDataset(args);
  const net = new Supernet({
    seed: args.seed,
    width: args.width,
    batch: args.batch,
    crop: args.crop,
    evalCrop: args.evalCrop,
    horizon: args.horizon,
    lrMax: args.lrMax,
    lrMin: args.lrMin,
    residualScale: args.residualScale,
  });
  const baseline = bicubicBaseline(ds, args.evalCrop);
  const rng = new Rng(args.seed ^ 0xa5c1);
  const probes = [randomArch(rng), randomArch(rng), randomArch(rng)];
  console.log(`bicubic baseline: ${baseline.toFixed(4)} dB`);
  const untrained = probes.map((a) => net.evaluate(a, ds));
  console.log(`untrained psnr:   ${untrained.map((p) => p.toFixed(4)).join("  ")}`);

  const t0 = Date.now();
  const checkEvery = Math.max(1, Math.floor(args.steps / 10));
  for (let s = 0; s < args.steps; s++) {
    const trainArchs = [randomArch(rng)];
    const loss = net.trainStep(trainArchs, ds, 0);
    if ((s + 1) % checkEvery === 0) {
      const p = net.evaluate(probes[0], ds);
      const dt = (Date.now() - t0) / 1000;
      console.log(
        `step ${String(s + 1).padStart(5)}  loss ${loss.toFixed(5)}  probe psnr ${p.toFixed(4)} dB  (+${(p - baseline).toFixed(4)})  ${dt.toFixed(0)}s`,
      );
    }
  }
  const finals = probes.map((a) => net.evaluate(a, ds));
  console.log(`final psnr:       ${finals.map((p) => p.toFixed(4)).join("  ")}`);
  console.log(`gain over bicubic: ${finals.map((p) => (p - baseline).toFixed(4)).join("  ")}`);
  console.log(`wall: ${((Date.now() - t0) / 1000).toFixed(1)}s for ${args.steps} steps`);
}

function main(): void {
  const args = parseArgs(process.argv.slice(2));
  switch (args.cmd) {
    case "serve":
      serve(args);
      break;
    case "gen-data":
      generateDataset(args.data, args.count, args.size, 2, args.seed);
      console.log(`wrote ${args.count} hr/lr pairs to ${args.data}`);
      break;
    case "calibrate":
      calibrate(args);
      break;
    default:
      console.error("usage: main.js serve|gen-data|calibrate [--data DIR --seed N ...]");
      process.exit(2);
  }
}

main();
