/** Synthetic NDT1 construction for trainer tests. */

import { Prng } from "../src/prng.js";
import { TrainingTensors } from "../src/ndt.js";

export function smoothField(rng: Prng, dims: number[], passes = 3): Float32Array {
  const n = dims.reduce((a, b) => a * b, 1);
  let data = new Float64Array(n);
  for (let i = 0; i < n; i++) data[i] = rng.gaussian();
  // separable box blur per axis; keeps things cheap and deterministic
  for (let pass = 0; pass < passes; pass++) {
    for (let axis = 0; axis < dims.length; axis++) {
      const out = new Float64Array(n);
      const stride = dims.slice(axis + 1).reduce((a, b) => a * b, 1);
      const len = dims[axis];
      for (let i = 0; i < n; i++) {
        const pos = Math.floor(i / stride) % len;
        let acc = data[i];
        let cnt = 1;
        if (pos > 0) { acc += data[i - stride]; cnt++; }
        if (pos < len - 1) { acc += data[i + stride]; cnt++; }
        out[i] = acc / cnt;
      }
      data = out;
    }
  }
  return Float32Array.from(data);
}

export function backwardDiff(data: Float32Array, dims: number[], axis: number): Float32Array {
  const n = data.length;
  const stride = dims.slice(axis + 1).reduce((a, b) => a * b, 1);
  const len = dims[axis];
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    const pos = Math.floor(i / stride) % len;
    out[i] = pos === 0 ? data[i] : Math.fround(data[i] - data[i - stride]);
  }
  return out;
}

function normalizeTo(span: number, channels: Float32Array[], n: number):
    { norm: Float32Array; data: Float32Array } {
  const norm = new Float32Array(2 * channels.length);
  const data = new Float32Array(channels.length * n);
  for (let c = 0; c < channels.length; c++) {
    let lo = Infinity, hi = -Infinity;
    for (const v of channels[c]) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    const scale = hi > lo ? (hi - lo) / span : 1;
    norm[2 * c] = Math.fround(lo);
    norm[2 * c + 1] = Math.fround(scale);
    for (let i = 0; i < n; i++) {
      data[c * n + i] = Math.fround((channels[c][i] - norm[2 * c]) / norm[2 * c + 1]);
    }
  }
  return { norm, data };
}

/** Target diffs are a fixed linear mix of anchor diffs: exactly learnable. */
export function linearMixNdt(seed: number, dims: number[], nAnchors = 2,
                             span = 300): TrainingTensors {
  const rng = new Prng(seed);
  const ndim = dims.length;
  const n = dims.reduce((a, b) => a * b, 1);
  const anchors: Float32Array[] = [];
  for (let m = 0; m < nAnchors; m++) anchors.push(smoothField(rng, dims));

  const inputChans: Float32Array[] = [];
  for (const a of anchors) {
    for (let axis = 0; axis < ndim; axis++) inputChans.push(backwardDiff(a, dims, axis));
  }
  const mix: number[] = [];
  for (let m = 0; m < nAnchors; m++) mix.push(rng.uniform(0.6, 1.6) * (m % 2 === 0 ? 1 : -1));
  const targetChans: Float32Array[] = [];
  for (let axis = 0; axis < ndim; axis++) {
    const t = new Float32Array(n);
    for (let i = 0; i < n; i++) {
      let acc = 0;
      for (let m = 0; m < nAnchors; m++) acc += mix[m] * inputChans[m * ndim + axis][i];
      t[i] = Math.fround(acc);
    }
    targetChans.push(t);
  }

  const inN = normalizeTo(span, inputChans, n);
  const tgN = normalizeTo(span, targetChans, n);
  const norm = new Float32Array(inN.norm.length + tgN.norm.length);
  norm.set(inN.norm);
  norm.set(tgN.norm, inN.norm.length);
  return {
    ndim,
    dims,
    cIn: inputChans.length,
    cTarget: ndim,
    norm,
    inputs: inN.data,
    targets: tgN.data,
  };
}
