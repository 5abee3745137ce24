/** Training loop: Adam on MSE over normalized target differences. */

import { Arch, initParams, LAYER_KEYS, Model, Params, paramSizes, validateArch, writeCfw } from "./cfw.js";
import { backward, castParamsF32, forward, mseLoss } from "./model.js";
import { TrainingTensors } from "./ndt.js";
import { Prng } from "./prng.js";

export interface TrainConfig {
  hidden: number;
  reduction: number;
  epochs: number;
  lr: number;
  seed: number;
}

export const DEFAULT_CONFIG: TrainConfig = {
  hidden: 16,
  reduction: 4,
  epochs: 100,
  lr: 1e-3,
  seed: 1,
};

export class ConfigError extends Error {}

export interface TrainResult {
  model: Model;
  cfw: Uint8Array;
  /** MSE after each epoch's update, plus the initial loss at index 0. */
  history: number[];
}

class Adam {
  private m: Record<string, Float64Array> = {};
  private v: Record<string, Float64Array> = {};
  private t = 0;

  constructor(private beta1 = 0.9, private beta2 = 0.999, private eps = 1e-8) {}

  step(params: Params, grads: Params, lr: number): void {
    this.t += 1;
    const c1 = 1 - Math.pow(this.beta1, this.t);
    const c2 = 1 - Math.pow(this.beta2, this.t);
    for (const key of LAYER_KEYS) {
      if (!this.m[key]) {
        this.m[key] = new Float64Array(params[key].length);
        this.v[key] = new Float64Array(params[key].length);
      }
      const p = params[key];
      const g = grads[key];
      const m = this.m[key];
      const v = this.v[key];
      for (let i = 0; i < p.length; i++) {
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g[i];
        v[i] = this.beta2 * v[i] + (1 - this.beta2) * g[i] * g[i];
        p[i] -= (lr * (m[i] / c1)) / (Math.sqrt(v[i] / c2) + this.eps);
      }
    }
  }
}

export function train(data: TrainingTensors, config: Partial<TrainConfig> = {}): TrainResult {
  const cfg = { ...DEFAULT_CONFIG, ...config };
  if (cfg.hidden <= 0 || cfg.reduction <= 0 || cfg.hidden % cfg.reduction !== 0) {
    throw new ConfigError(`hidden (${cfg.hidden}) must be divisible by reduction (${cfg.reduction})`);
  }
  if (data.cTarget !== data.ndim) {
    throw new ConfigError(`tensor file has ${data.cTarget} target channels, expected ${data.ndim}`);
  }
  if (data.cIn % data.ndim !== 0) {
    throw new ConfigError(`input channel count ${data.cIn} is not a multiple of ndim`);
  }
  const arch: Arch = {
    ndim: data.ndim,
    cIn: data.cIn,
    hidden: cfg.hidden,
    reduction: cfg.reduction,
    cOut: data.cTarget,
    k: 3,
    nAnchors: data.cIn / data.ndim,
  };
  validateArch(arch);

  const rng = new Prng(cfg.seed);
  const params = initParams(arch, () => rng.next());
  const n = data.dims.reduce((a, b) => a * b, 1);

  // Channels normalized to [0, 300] sit far off-center, which conditions
  // gradient descent terribly (every weight step drags the output mean).
  // Train on mean-centered inputs and fold the centering into conv1's bias
  // at export: an exact affine reparameterization of the same function.
  const inputMean = new Float64Array(arch.cIn);
  const padFill = new Float64Array(arch.cIn);
  const centered = new Float32Array(data.inputs.length);
  for (let c = 0; c < arch.cIn; c++) {
    let acc = 0;
    for (let i = 0; i < n; i++) acc += data.inputs[c * n + i];
    inputMean[c] = acc / n;
    padFill[c] = -inputMean[c];  // centered ghost zeros = raw ghost zeros
    for (let i = 0; i < n; i++) {
      centered[c * n + i] = Math.fround(data.inputs[c * n + i] - inputMean[c]);
    }
  }
  // start as the mean predictor: Adam's bounded per-step movement would
  // otherwise spend thousands of epochs walking the output bias to ~150
  for (let c = 0; c < arch.cOut; c++) {
    let acc = 0;
    for (let i = 0; i < n; i++) acc += data.targets[c * n + i];
    params.conv2_b[c] = acc / n;
  }
  const opt = new Adam();
  const history: number[] = [];

  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    const cast = castParamsF32(params);
    const cache = forward(arch, cast, centered, data.dims, "f32", padFill);
    const { loss, grad } = mseLoss(cache.y, data.targets);
    history.push(loss);
    const grads = backward(arch, cast, cache, grad, padFill);
    // cosine decay to a tenth of the base rate settles the tail
    const lr = cfg.lr * (0.55 + 0.45 * Math.cos((Math.PI * epoch) / Math.max(1, cfg.epochs)));
    opt.step(params, grads, lr);
  }
  const final = forward(arch, castParamsF32(params), centered, data.dims, "f32", padFill);
  history.push(mseLoss(final.y, data.targets).loss);

  // fold input centering into the first convolution's bias
  const kk = Math.pow(arch.k, arch.ndim);
  for (let h = 0; h < arch.hidden; h++) {
    let shift = 0;
    for (let ci = 0; ci < arch.cIn; ci++) {
      for (let o = 0; o < kk; o++) {
        shift += params.conv1_w[(h * arch.cIn + ci) * kk + o] * inputMean[ci];
      }
    }
    params.conv1_b[h] -= shift;
  }

  const model: Model = {
    arch,
    inNorm: data.norm.slice(0, 2 * data.cIn),
    outNorm: data.norm.slice(2 * data.cIn),
    params,
  };
  return { model, cfw: writeCfw(toF32Model(model)), history };
}

/** Snap master weights to the float32 values the file will hold. */
function toF32Model(model: Model): Model {
  return { ...model, params: castParamsF32(model.params) };
}
