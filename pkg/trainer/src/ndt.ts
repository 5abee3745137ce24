/** NDT1 training-tensor files exported by the compressor. */

import { ByteReader, ByteWriter } from "./binio.js";

export interface TrainingTensors {
  ndim: number;
  dims: number[];
  cIn: number;
  cTarget: number;
  /** (offset, scale) pairs for all cIn + cTarget channels. */
  norm: Float32Array;
  /** Normalized channels, channel-major: inputs then targets. */
  inputs: Float32Array;
  targets: Float32Array;
}

export function readNdt(blob: Uint8Array): TrainingTensors {
  const r = new ByteReader(blob);
  if (r.ascii(4) !== "NDT1") throw new Error("not an NDT1 tensor file");
  const ndim = r.u8();
  if (ndim !== 2 && ndim !== 3) throw new Error(`bad ndim ${ndim}`);
  const dims: number[] = [];
  for (let d = 0; d < ndim; d++) dims.push(r.u64());
  const cIn = r.u32();
  const cTarget = r.u32();
  const norm = r.f32Array(2 * (cIn + cTarget));
  const n = dims.reduce((a, b) => a * b, 1);
  const inputs = r.f32Array(cIn * n);
  const targets = r.f32Array(cTarget * n);
  if (r.remaining() !== 0) throw new Error("tensor file size mismatch");
  return { ndim, dims, cIn, cTarget, norm, inputs, targets };
}

export function writeNdt(t: TrainingTensors): Uint8Array {
  const w = new ByteWriter();
  w.ascii("NDT1");
  w.u8(t.ndim);
  for (const d of t.dims) w.u64(d);
  w.u32(t.cIn);
  w.u32(t.cTarget);
  w.f32Array(t.norm);
  w.f32Array(t.inputs);
  w.f32Array(t.targets);
  return w.finish();
}
