/** CFW1 weight files: the exact on-disk contract of the inference engine. */

import { ByteReader, ByteWriter, crc32 } from "./binio.js";

export interface Arch {
  ndim: number;
  cIn: number;
  hidden: number;
  reduction: number;
  cOut: number;
  k: number;
  nAnchors: number;
}

export const LAYER_KEYS = [
  "conv1_w", "conv1_b",
  "dw_w", "dw_b",
  "pw_w", "pw_b",
  "fc1_w", "fc1_b",
  "fc2_w", "fc2_b",
  "conv2_w", "conv2_b",
] as const;

export type LayerKey = (typeof LAYER_KEYS)[number];
export type Params = Record<LayerKey, Float64Array>;

export interface Model {
  arch: Arch;
  inNorm: Float32Array; // (offset, scale) pairs, cIn of them
  outNorm: Float32Array; // cOut pairs
  params: Params;
}

export function paramSizes(a: Arch): Record<LayerKey, number> {
  const kk = Math.pow(a.k, a.ndim);
  const h = a.hidden;
  const hr = h / a.reduction;
  return {
    conv1_w: h * a.cIn * kk, conv1_b: h,
    dw_w: h * kk, dw_b: h,
    pw_w: h * h, pw_b: h,
    fc1_w: hr * h, fc1_b: hr,
    fc2_w: h * hr, fc2_b: h,
    conv2_w: a.cOut * h * kk, conv2_b: a.cOut,
  };
}

export function validateArch(a: Arch): void {
  if (a.ndim !== 2 && a.ndim !== 3) throw new Error(`ndim must be 2 or 3, got ${a.ndim}`);
  if (a.cOut !== a.ndim) throw new Error("cOut must equal ndim");
  if (a.cIn !== a.nAnchors * a.ndim) throw new Error("cIn must equal nAnchors*ndim");
  if (a.hidden <= 0 || a.reduction <= 0 || a.hidden % a.reduction !== 0) {
    throw new Error(`hidden (${a.hidden}) must be divisible by reduction (${a.reduction})`);
  }
  if (a.k < 1 || a.k % 2 === 0) throw new Error("kernel size must be odd");
}

export function writeCfw(model: Model): Uint8Array {
  validateArch(model.arch);
  const a = model.arch;
  const w = new ByteWriter();
  w.ascii("CFW1");
  w.u32(1);
  w.u8(a.ndim);
  w.u16(a.cIn);
  w.u16(a.hidden);
  w.u16(a.reduction);
  w.u16(a.cOut);
  w.u16(a.k);
  w.u16(a.nAnchors);
  w.f32Array(model.inNorm);
  w.f32Array(model.outNorm);
  const sizes = paramSizes(a);
  for (const key of LAYER_KEYS) {
    const arr = model.params[key];
    if (arr.length !== sizes[key]) {
      throw new Error(`parameter ${key} has ${arr.length} values, expected ${sizes[key]}`);
    }
    w.u64(arr.length);
    w.f32Array(arr);
  }
  const body = w.finish();
  const out = new ByteWriter();
  out.bytes(body);
  out.u32(crc32(body));
  return out.finish();
}

export function readCfw(blob: Uint8Array): Model {
  if (blob.length < 4 + 4 + 1 + 12 + 4) throw new Error("weight file truncated");
  const body = blob.subarray(0, blob.length - 4);
  const storedCrc = new DataView(blob.buffer, blob.byteOffset + blob.length - 4, 4).getUint32(0, true);
  if (crc32(body) !== storedCrc) throw new Error("weight file CRC32 mismatch");
  const r = new ByteReader(body);
  if (r.ascii(4) !== "CFW1") throw new Error("bad magic");
  if (r.u32() !== 1) throw new Error("unsupported version");
  const arch: Arch = {
    ndim: r.u8(),
    cIn: r.u16(),
    hidden: r.u16(),
    reduction: r.u16(),
    cOut: r.u16(),
    k: r.u16(),
    nAnchors: r.u16(),
  };
  validateArch(arch);
  const inNorm = r.f32Array(2 * arch.cIn);
  const outNorm = r.f32Array(2 * arch.cOut);
  const sizes = paramSizes(arch);
  const params = {} as Params;
  for (const key of LAYER_KEYS) {
    const count = r.u64();
    if (count !== sizes[key]) {
      throw new Error(`parameter ${key} stores ${count} values, expected ${sizes[key]}`);
    }
    params[key] = Float64Array.from(r.f32Array(count));
  }
  if (r.remaining() !== 0) throw new Error("trailing bytes in weight file");
  return { arch, inNorm, outNorm, params };
}

export function initParams(a: Arch, seedRandom: () => number): Params {
  const sizes = paramSizes(a);
  const kk = Math.pow(a.k, a.ndim);
  const fanIn: Record<LayerKey, number> = {
    conv1_w: a.cIn * kk, conv1_b: 0,
    dw_w: kk, dw_b: 0,
    pw_w: a.hidden, pw_b: 0,
    fc1_w: a.hidden, fc1_b: 0,
    fc2_w: a.hidden / a.reduction, fc2_b: 0,
    conv2_w: a.hidden * kk, conv2_b: 0,
  };
  // Inputs are normalized to [0, 300], so plain 1/sqrt(fanIn) limits blow
  // the pooled statistics past sigmoid saturation and strangle channels at
  // birth; damp the convolutions and keep the attention MLP near its
  // linear regime (gates start by 0.5).
  const scale: Record<LayerKey, number> = {
    conv1_w: 0.3, conv1_b: 0,
    dw_w: 0.3, dw_b: 0,
    pw_w: 0.3, pw_b: 0,
    fc1_w: 0.1, fc1_b: 0,
    fc2_w: 0.1, fc2_b: 0,
    conv2_w: 0.3, conv2_b: 0,
  };
  const params = {} as Params;
  for (const key of LAYER_KEYS) {
    const arr = new Float64Array(sizes[key]);
    if (fanIn[key] > 0) {
      const lim = scale[key] / Math.sqrt(fanIn[key]);
      for (let i = 0; i < arr.length; i++) {
        arr[i] = (seedRandom() * 2 - 1) * lim;
      }
    }
    params[key] = arr;
  }
  return params;
}
