#!/usr/bin/env node
/** CLI: train a model from an NDT1 file, emit forward-check vectors. */

import * as fs from "node:fs";
import { parseArgs } from "node:util";

import { emitCheckVectors, writeCkv } from "./ckv.js";
import { readCfw } from "./cfw.js";
import { readNdt } from "./ndt.js";
import { ConfigError, DEFAULT_CONFIG, train } from "./train.js";

function usage(): never {
  console.error(
    "usage:\n" +
    "  cli.js train --ndt <in.ndt> --out <out.cfw1> [--hidden N] [--reduction N]\n" +
    "               [--epochs N] [--lr X] [--seed N]\n" +
    "  cli.js emit-vectors --weights <in.cfw1> --out <out.ckv1> [--seed N]\n" +
    "               [--count N] [--size N]",
  );
  process.exit(2);
}

function cmdTrain(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      ndt: { type: "string" },
      out: { type: "string" },
      hidden: { type: "string", default: String(DEFAULT_CONFIG.hidden) },
      reduction: { type: "string", default: String(DEFAULT_CONFIG.reduction) },
      epochs: { type: "string", default: String(DEFAULT_CONFIG.epochs) },
      lr: { type: "string", default: String(DEFAULT_CONFIG.lr) },
      seed: { type: "string", default: String(DEFAULT_CONFIG.seed) },
    },
  });
  if (!values.ndt || !values.out) usage();
  const data = readNdt(new Uint8Array(fs.readFileSync(values.ndt)));
  const result = train(data, {
    hidden: Number(values.hidden),
    reduction: Number(values.reduction),
    epochs: Number(values.epochs),
    lr: Number(values.lr),
    seed: Number(values.seed),
  });
  fs.writeFileSync(values.out, result.cfw);
  const first = result.history[0];
  const last = result.history[result.history.length - 1];
  console.log(
    `trained ${values.epochs} epochs on ${data.dims.join("x")} ` +
    `(${data.cIn} input channels): mse ${first.toFixed(4)} -> ${last.toFixed(4)}`,
  );
  console.log(`wrote ${values.out} (${result.cfw.length} bytes)`);
  return 0;
}

function cmdEmitVectors(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      weights: { type: "string" },
      out: { type: "string" },
      seed: { type: "string", default: "1" },
      count: { type: "string", default: "3" },
      size: { type: "string", default: "12" },
    },
  });
  if (!values.weights || !values.out) usage();
  const model = readCfw(new Uint8Array(fs.readFileSync(values.weights)));
  const vectors = emitCheckVectors(model, Number(values.seed), Number(values.count),
                                   Number(values.size));
  fs.writeFileSync(values.out, writeCkv(vectors, model.arch.cIn, model.arch.cOut));
  console.log(`wrote ${values.out}: ${vectors.length} vectors, ` +
              `dims ${vectors[0].dims.join("x")}`);
  return 0;
}

function main(): number {
  const [cmd, ...rest] = process.argv.slice(2);
  try {
    if (cmd === "train") return cmdTrain(rest);
    if (cmd === "emit-vectors") return cmdEmitVectors(rest);
    usage();
  } catch (err) {
    if (err instanceof ConfigError) {
      console.error(`config error: ${err.message}`);
      return 2;
    }
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exit(main());
