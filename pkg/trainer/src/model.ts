/** Forward and backward passes of the cross-field difference predictor.
 *
 * The forward pass reproduces the inference engine's numeric contract
 * exactly in "f32" mode: float32 weights/activations, convolutions
 * accumulating in float32 from the bias with terms added in (in-channel,
 * row-major kernel offset) order, pooled statistics and the attention MLP
 * in float64 with the sigmoid gate rounded to float32. "f64" mode skips all
 * rounding (used for gradient checking). Gradients are always float64.
 */

import { Arch, LAYER_KEYS, LayerKey, Params, paramSizes } from "./cfw.js";

export type Precision = "f32" | "f64";

const fround = Math.fround;
const ident = (x: number) => x;

function rounder(precision: Precision): (x: number) => number {
  return precision === "f32" ? fround : ident;
}

function alloc(precision: Precision, n: number): Float32Array | Float64Array {
  return precision === "f32" ? new Float32Array(n) : new Float64Array(n);
}

type Arr = Float32Array | Float64Array;

export interface ForwardCache {
  precision: Precision;
  dims: number[];
  n: number;
  x: Arr;
  h1: Arr;
  s2: Arr;
  h2: Arr;
  avg: Float64Array;
  mx: Float64Array;
  amax: Int32Array;
  uAvg: Float64Array;
  uMx: Float64Array;
  gate: Float64Array; // pre-rounding; gateR holds the applied value
  gateR: Arr;
  h3: Arr;
  y: Arr;
}

function offsets(ndim: number, k: number): number[][] {
  const out: number[][] = [];
  if (ndim === 2) {
    for (let a = 0; a < k; a++) for (let b = 0; b < k; b++) out.push([a, b]);
  } else {
    for (let a = 0; a < k; a++) for (let b = 0; b < k; b++) for (let c = 0; c < k; c++) out.push([a, b, c]);
  }
  return out;
}

function padChannel(src: Arr, srcOff: number, dims: number[], p: number, precision: Precision,
                    fill = 0): Arr {
  if (dims.length === 2) {
    const [d0, d1] = dims;
    const p0 = d0 + 2 * p, p1 = d1 + 2 * p;
    const out = alloc(precision, p0 * p1);
    if (fill !== 0) out.fill(fill);
    for (let i = 0; i < d0; i++) {
      const dst = (i + p) * p1 + p;
      const s = srcOff + i * d1;
      for (let j = 0; j < d1; j++) out[dst + j] = src[s + j];
    }
    return out;
  }
  const [d0, d1, d2] = dims;
  const p0 = d0 + 2 * p, p1 = d1 + 2 * p, p2 = d2 + 2 * p;
  const out = alloc(precision, p0 * p1 * p2);
  if (fill !== 0) out.fill(fill);
  for (let i = 0; i < d0; i++) {
    for (let j = 0; j < d1; j++) {
      const dst = ((i + p) * p1 + (j + p)) * p2 + p;
      const s = srcOff + (i * d1 + j) * d2;
      for (let l = 0; l < d2; l++) out[dst + l] = src[s + l];
    }
  }
  return out;
}

/** out[pos] += rnd(wv * xp[pos+off]) over all positions, in row-major order. */
function accumulateShifted(out: Arr, outOff: number, xp: Arr, dims: number[], p: number,
                           off: number[], wv: number, rnd: (x: number) => number): void {
  if (wv === 0 && rnd === ident) {
    // exact zero contributions cannot change f64 results; f32 mode keeps
    // them so the op sequence matches the inference engine bit for bit
    return;
  }
  if (dims.length === 2) {
    const [d0, d1] = dims;
    const p1 = d1 + 2 * p;
    for (let i = 0; i < d0; i++) {
      const bp = (i + off[0]) * p1 + off[1];
      const bo = outOff + i * d1;
      for (let j = 0; j < d1; j++) {
        out[bo + j] = rnd(out[bo + j] + rnd(wv * xp[bp + j]));
      }
    }
  } else {
    const [d0, d1, d2] = dims;
    const p1 = d1 + 2 * p, p2 = d2 + 2 * p;
    for (let i = 0; i < d0; i++) {
      for (let j = 0; j < d1; j++) {
        const bp = ((i + off[0]) * p1 + (j + off[1])) * p2 + off[2];
        const bo = outOff + (i * d1 + j) * d2;
        for (let l = 0; l < d2; l++) {
          out[bo + l] = rnd(out[bo + l] + rnd(wv * xp[bp + l]));
        }
      }
    }
  }
}

function convSame(x: Arr, cIn: number, cOut: number, dims: number[], k: number,
                  w: Params[LayerKey], b: Params[LayerKey], depthwise: boolean,
                  precision: Precision, padFill?: Float64Array): Arr {
  const rnd = rounder(precision);
  const n = dims.reduce((a, c) => a * c, 1);
  const p = (k - 1) / 2;
  const offs = offsets(dims.length, k);
  const kk = offs.length;
  const padded: Arr[] = [];
  for (let ci = 0; ci < cIn; ci++) {
    const fill = padFill ? rnd(padFill[ci]) : 0;
    padded.push(padChannel(x, ci * n, dims, p, precision, fill));
  }
  const out = alloc(precision, cOut * n);
  for (let co = 0; co < cOut; co++) {
    const base = co * n;
    const bias = rnd(b[co]);
    for (let i = 0; i < n; i++) out[base + i] = bias;
    if (depthwise) {
      for (let oi = 0; oi < kk; oi++) {
        accumulateShifted(out, base, padded[co], dims, p, offs[oi], rnd(w[co * kk + oi]), rnd);
      }
    } else {
      for (let ci = 0; ci < cIn; ci++) {
        for (let oi = 0; oi < kk; oi++) {
          accumulateShifted(out, base, padded[ci], dims, p, offs[oi], rnd(w[(co * cIn + ci) * kk + oi]), rnd);
        }
      }
    }
  }
  return out;
}

function mlpShared(params: Params, pooled: Float64Array, hidden: number, hr: number):
    { u: Float64Array; z: Float64Array } {
  const u = new Float64Array(hr);
  for (let i = 0; i < hr; i++) {
    let acc = 0;
    for (let j = 0; j < hidden; j++) acc += params.fc1_w[i * hidden + j] * pooled[j];
    u[i] = acc + params.fc1_b[i];
  }
  const z = new Float64Array(hidden);
  for (let i = 0; i < hidden; i++) {
    let acc = 0;
    for (let j = 0; j < hr; j++) acc += params.fc2_w[i * hr + j] * Math.max(u[j], 0);
    z[i] = acc + params.fc2_b[i];
  }
  return { u, z };
}

/** fround every parameter, mirroring the float32 weights the file stores. */
export function castParamsF32(params: Params): Params {
  const out = {} as Params;
  for (const key of LAYER_KEYS) {
    const src = params[key];
    const dst = new Float64Array(src.length);
    for (let i = 0; i < src.length; i++) dst[i] = fround(src[i]);
    out[key] = dst;
  }
  return out;
}

export function forward(arch: Arch, rawParams: Params, x: Arr, dims: number[],
                        precision: Precision, inputPadFill?: Float64Array): ForwardCache {
  const rnd = rounder(precision);
  // the engine reads float32 weights from the file; cast before any use
  const params = precision === "f32" ? castParamsF32(rawParams) : rawParams;
  const n = dims.reduce((a, c) => a * c, 1);
  if (x.length !== arch.cIn * n) {
    throw new Error(`input has ${x.length} values, expected ${arch.cIn * n}`);
  }
  const h = arch.hidden;
  const hr = h / arch.reduction;

  const s1 = convSame(x, arch.cIn, h, dims, arch.k, params.conv1_w, params.conv1_b, false,
                      precision, inputPadFill);
  const h1 = alloc(precision, h * n);
  for (let i = 0; i < s1.length; i++) h1[i] = Math.max(s1[i], 0);

  const s2 = convSame(h1, h, h, dims, arch.k, params.dw_w, params.dw_b, true, precision);

  const s3 = alloc(precision, h * n);
  for (let co = 0; co < h; co++) {
    const base = co * n;
    const bias = rnd(params.pw_b[co]);
    for (let i = 0; i < n; i++) s3[base + i] = bias;
    for (let ci = 0; ci < h; ci++) {
      const wv = rnd(params.pw_w[co * h + ci]);
      const src = ci * n;
      for (let i = 0; i < n; i++) {
        s3[base + i] = rnd(s3[base + i] + rnd(wv * s2[src + i]));
      }
    }
  }
  const h2 = alloc(precision, h * n);
  for (let i = 0; i < s3.length; i++) h2[i] = Math.max(s3[i], 0);

  // pooled statistics and the gate run in float64
  const avg = new Float64Array(h);
  const mx = new Float64Array(h);
  const amax = new Int32Array(h);
  for (let c = 0; c < h; c++) {
    let acc = 0;
    let best = -Infinity;
    let bestIdx = 0;
    const base = c * n;
    for (let i = 0; i < n; i++) {
      const v = h2[base + i];
      acc += v;
      if (v > best) {
        best = v;
        bestIdx = i;
      }
    }
    avg[c] = acc / n;
    mx[c] = best;
    amax[c] = bestIdx;
  }
  const mAvg = mlpShared(params, avg, h, hr);
  const mMx = mlpShared(params, mx, h, hr);
  const gate = new Float64Array(h);
  const gateR = alloc(precision, h);
  for (let c = 0; c < h; c++) {
    gate[c] = 1 / (1 + Math.exp(-(mAvg.z[c] + mMx.z[c])));
    gateR[c] = gate[c];
  }

  const h3 = alloc(precision, h * n);
  for (let c = 0; c < h; c++) {
    const g = gateR[c];
    const base = c * n;
    for (let i = 0; i < n; i++) h3[base + i] = rnd(h2[base + i] * g);
  }

  const y = convSame(h3, h, arch.cOut, dims, arch.k, params.conv2_w, params.conv2_b, false, precision);
  return {
    precision, dims, n, x, h1, s2, h2,
    avg, mx, amax, uAvg: mAvg.u, uMx: mMx.u,
    gate, gateR, h3, y,
  };
}

/** Denormalized prediction in value units (the engine's forward contract). */
export function denormalize(y: Arr, cOut: number, n: number, outNorm: Float32Array,
                            precision: Precision): Arr {
  const rnd = rounder(precision);
  const out = alloc(precision, y.length);
  for (let c = 0; c < cOut; c++) {
    const off = outNorm[2 * c];
    const scale = outNorm[2 * c + 1];
    const base = c * n;
    for (let i = 0; i < n; i++) {
      out[base + i] = rnd(rnd(y[base + i] * scale) + off);
    }
  }
  return out;
}

export function zeroGrads(arch: Arch): Params {
  const sizes = paramSizes(arch);
  const out = {} as Params;
  for (const key of LAYER_KEYS) out[key] = new Float64Array(sizes[key]);
  return out;
}

/** dL/dOut of conv input plus weight/bias grads; transpose via padded scatter. */
function convBackward(g: Float64Array, x: Arr, cIn: number, cOut: number, dims: number[],
                      k: number, w: Params[LayerKey], depthwise: boolean,
                      gradW: Float64Array, gradB: Float64Array,
                      padFill?: Float64Array): Float64Array {
  const n = dims.reduce((a, c) => a * c, 1);
  const p = (k - 1) / 2;
  const offs = offsets(dims.length, k);
  const kk = offs.length;
  const paddedX: Float64Array[] = [];
  for (let ci = 0; ci < cIn; ci++) {
    const fill = padFill ? padFill[ci] : 0;
    paddedX.push(padChannel(x, ci * n, dims, p, "f64", fill) as Float64Array);
  }
  const padN = paddedX[0].length;
  const gradPad: Float64Array[] = [];
  for (let ci = 0; ci < cIn; ci++) gradPad.push(new Float64Array(padN));

  const accumulate = (co: number, ci: number, widx: number) => {
    const xp = paddedX[ci];
    const gp = gradPad[ci];
    const wv = w[widx];
    let dw = 0;
    if (dims.length === 2) {
      const [d0, d1] = dims;
      const p1 = d1 + 2 * p;
      const off = offs[widx % kk];
      for (let i = 0; i < d0; i++) {
        const bp = (i + off[0]) * p1 + off[1];
        const bo = co * n + i * d1;
        for (let j = 0; j < d1; j++) {
          const gv = g[bo + j];
          dw += gv * xp[bp + j];
          gp[bp + j] += wv * gv;
        }
      }
    } else {
      const [d0, d1, d2] = dims;
      const p1 = d1 + 2 * p, p2 = d2 + 2 * p;
      const off = offs[widx % kk];
      for (let i = 0; i < d0; i++) {
        for (let j = 0; j < d1; j++) {
          const bp = ((i + off[0]) * p1 + (j + off[1])) * p2 + off[2];
          const bo = co * n + (i * d1 + j) * d2;
          for (let l = 0; l < d2; l++) {
            const gv = g[bo + l];
            dw += gv * xp[bp + l];
            gp[bp + l] += wv * gv;
          }
        }
      }
    }
    gradW[widx] += dw;
  };

  for (let co = 0; co < cOut; co++) {
    let db = 0;
    for (let i = 0; i < n; i++) db += g[co * n + i];
    gradB[co] += db;
    if (depthwise) {
      for (let oi = 0; oi < kk; oi++) accumulate(co, co, co * kk + oi);
    } else {
      for (let ci = 0; ci < cIn; ci++) {
        for (let oi = 0; oi < kk; oi++) accumulate(co, ci, (co * cIn + ci) * kk + oi);
      }
    }
  }

  const gradX = new Float64Array(cIn * n);
  for (let ci = 0; ci < cIn; ci++) {
    const gp = gradPad[ci];
    if (dims.length === 2) {
      const [d0, d1] = dims;
      const p1 = d1 + 2 * p;
      for (let i = 0; i < d0; i++) {
        const src = (i + p) * p1 + p;
        const dst = ci * n + i * d1;
        for (let j = 0; j < d1; j++) gradX[dst + j] = gp[src + j];
      }
    } else {
      const [d0, d1, d2] = dims;
      const p1 = d1 + 2 * p, p2 = d2 + 2 * p;
      for (let i = 0; i < d0; i++) {
        for (let j = 0; j < d1; j++) {
          const src = ((i + p) * p1 + (j + p)) * p2 + p;
          const dst = ci * n + (i * d1 + j) * d2;
          for (let l = 0; l < d2; l++) gradX[dst + l] = gp[src + l];
        }
      }
    }
  }
  return gradX;
}

/** Backprop of dL/dy through the whole network; returns parameter grads. */
export function backward(arch: Arch, params: Params, cache: ForwardCache,
                         gradY: Float64Array, inputPadFill?: Float64Array): Params {
  const h = arch.hidden;
  const hr = h / arch.reduction;
  const n = cache.n;
  const grads = zeroGrads(arch);

  const gradH3 = convBackward(gradY, cache.h3, h, arch.cOut, cache.dims, arch.k,
                              params.conv2_w, false, grads.conv2_w, grads.conv2_b);

  // h3 = h2 * gate
  const gradGate = new Float64Array(h);
  const gradH2 = new Float64Array(h * n);
  for (let c = 0; c < h; c++) {
    const g = cache.gateR[c];
    const base = c * n;
    let dg = 0;
    for (let i = 0; i < n; i++) {
      dg += gradH3[base + i] * cache.h2[base + i];
      gradH2[base + i] = gradH3[base + i] * g;
    }
    gradGate[c] = dg;
  }

  // gate = sigmoid(z_avg + z_mx), shared two-layer MLP on both pooled vectors
  const gradZ = new Float64Array(h);
  for (let c = 0; c < h; c++) {
    gradZ[c] = gradGate[c] * cache.gate[c] * (1 - cache.gate[c]);
  }
  const gradPooled: Float64Array[] = [];
  for (const u of [cache.uAvg, cache.uMx]) {
    const r = new Float64Array(hr);
    for (let i = 0; i < hr; i++) r[i] = Math.max(u[i], 0);
    const gradR = new Float64Array(hr);
    for (let i = 0; i < h; i++) {
      for (let j = 0; j < hr; j++) {
        grads.fc2_w[i * hr + j] += gradZ[i] * r[j];
        gradR[j] += params.fc2_w[i * hr + j] * gradZ[i];
      }
      grads.fc2_b[i] += gradZ[i];
    }
    const gradU = new Float64Array(hr);
    for (let j = 0; j < hr; j++) gradU[j] = u[j] > 0 ? gradR[j] : 0;
    const pooled = u === cache.uAvg ? cache.avg : cache.mx;
    const gradP = new Float64Array(h);
    for (let i = 0; i < hr; i++) {
      for (let j = 0; j < h; j++) {
        grads.fc1_w[i * h + j] += gradU[i] * pooled[j];
        gradP[j] += params.fc1_w[i * h + j] * gradU[i];
      }
      grads.fc1_b[i] += gradU[i];
    }
    gradPooled.push(gradP);
  }
  for (let c = 0; c < h; c++) {
    const base = c * n;
    const dAvg = gradPooled[0][c] / n;
    for (let i = 0; i < n; i++) gradH2[base + i] += dAvg;
    gradH2[base + cache.amax[c]] += gradPooled[1][c];
  }

  // h2 = relu(s3); s3 = pointwise(s2)
  const gradS3 = new Float64Array(h * n);
  for (let i = 0; i < h * n; i++) gradS3[i] = cache.h2[i] > 0 ? gradH2[i] : 0;
  const gradS2 = new Float64Array(h * n);
  for (let co = 0; co < h; co++) {
    let db = 0;
    const base = co * n;
    for (let i = 0; i < n; i++) db += gradS3[base + i];
    grads.pw_b[co] += db;
    for (let ci = 0; ci < h; ci++) {
      const wv = params.pw_w[co * h + ci];
      const src = ci * n;
      let dw = 0;
      for (let i = 0; i < n; i++) {
        const gv = gradS3[base + i];
        dw += gv * cache.s2[src + i];
        gradS2[src + i] += wv * gv;
      }
      grads.pw_w[co * h + ci] += dw;
    }
  }

  const gradH1 = convBackward(gradS2, cache.h1, h, h, cache.dims, arch.k,
                              params.dw_w, true, grads.dw_w, grads.dw_b);

  const gradS1 = new Float64Array(h * n);
  for (let i = 0; i < h * n; i++) gradS1[i] = cache.h1[i] > 0 ? gradH1[i] : 0;
  convBackward(gradS1, cache.x, arch.cIn, h, cache.dims, arch.k,
               params.conv1_w, false, grads.conv1_w, grads.conv1_b, inputPadFill);
  return grads;
}

/** Mean-squared error on normalized targets plus its input gradient. */
export function mseLoss(y: Arr, t: Arr): { loss: number; grad: Float64Array } {
  const m = y.length;
  const grad = new Float64Array(m);
  let acc = 0;
  for (let i = 0; i < m; i++) {
    const d = y[i] - t[i];
    acc += d * d;
    grad[i] = (2 * d) / m;
  }
  return { loss: acc / m, grad };
}
