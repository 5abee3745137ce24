/** CKV1 golden-vector files binding this trainer's forward pass to the
 * inference engine's: fixed-seed inputs plus our denormalized outputs,
 * which the engine must reproduce within 1e-5 max-abs. */

import { ByteReader, ByteWriter } from "./binio.js";
import { Model } from "./cfw.js";
import { denormalize, forward } from "./model.js";
import { Prng } from "./prng.js";

export interface CheckVector {
  dims: number[];
  input: Float32Array;
  output: Float32Array;
}

export function emitCheckVectors(model: Model, seed: number, count = 3,
                                 size = 12): CheckVector[] {
  const a = model.arch;
  const rng = new Prng(seed);
  const vectors: CheckVector[] = [];
  for (let v = 0; v < count; v++) {
    const dims = Array(a.ndim).fill(size);
    const n = dims.reduce((x: number, y: number) => x * y, 1);
    const input = new Float32Array(a.cIn * n);
    for (let i = 0; i < input.length; i++) {
      input[i] = Math.fround(rng.uniform(0, 300));
    }
    const cache = forward(a, model.params, input, dims, "f32");
    const output = denormalize(cache.y, a.cOut, n, model.outNorm, "f32") as Float32Array;
    vectors.push({ dims, input, output });
  }
  return vectors;
}

export function writeCkv(vectors: CheckVector[], cIn: number, cOut: number): Uint8Array {
  const w = new ByteWriter();
  w.ascii("CKV1");
  w.u32(vectors.length);
  for (const vec of vectors) {
    w.u8(vec.dims.length);
    for (const d of vec.dims) w.u64(d);
    w.u32(cIn);
    w.u32(cOut);
    w.f32Array(vec.input);
    w.f32Array(vec.output);
  }
  return w.finish();
}

export function readCkv(blob: Uint8Array): { dims: number[]; cIn: number; cOut: number;
                                             input: Float32Array; output: Float32Array }[] {
  const r = new ByteReader(blob);
  if (r.ascii(4) !== "CKV1") throw new Error("not a CKV1 vector file");
  const count = r.u32();
  const out = [];
  for (let v = 0; v < count; v++) {
    const ndim = r.u8();
    const dims: number[] = [];
    for (let d = 0; d < ndim; d++) dims.push(r.u64());
    const cIn = r.u32();
    const cOut = r.u32();
    const n = dims.reduce((x, y) => x * y, 1);
    out.push({ dims, cIn, cOut, input: r.f32Array(cIn * n), output: r.f32Array(cOut * n) });
  }
  if (r.remaining() !== 0) throw new Error("trailing bytes in vector file");
  return out;
}
