import { describe, expect, it } from "vitest";

import { readCfw } from "../src/cfw.js";
import { forward, mseLoss } from "../src/model.js";
import { ConfigError, train } from "../src/train.js";
import { linearMixNdt } from "./helpers.js";

describe("training on a linear mix of anchor diffs", () => {
  it("reaches 1% of the initial MSE within 200 epochs", () => {
    const data = linearMixNdt(404, [24, 24]);
    const result = train(data, { hidden: 16, reduction: 4, epochs: 200, lr: 0.05, seed: 5 });
    const initial = result.history[0];
    const final = result.history[result.history.length - 1];
    expect(final).toBeLessThanOrEqual(0.01 * initial);
  });

  it("loss decreases on a 3-d tensor too", () => {
    const data = linearMixNdt(505, [8, 9, 8]);
    const result = train(data, { hidden: 8, reduction: 4, epochs: 60, lr: 0.03, seed: 5 });
    const initial = result.history[0];
    const final = result.history[result.history.length - 1];
    expect(final).toBeLessThan(0.5 * initial);
  });

  it("exported weights reproduce the training loss on raw inputs", () => {
    // input centering is folded into conv1's bias; the file must encode the
    // same function over the uncentered [0,300] channels it will be fed
    const data = linearMixNdt(606, [16, 16]);
    const result = train(data, { hidden: 8, reduction: 4, epochs: 40, lr: 0.05, seed: 2 });
    const model = readCfw(result.cfw);
    const cache = forward(model.arch, model.params, data.inputs, data.dims, "f32");
    const mse = mseLoss(cache.y, data.targets).loss;
    const final = result.history[result.history.length - 1];
    expect(Math.abs(mse - final)).toBeLessThan(0.02 * final + 1e-3);
  });
});

describe("determinism", () => {
  it("identical invocations produce byte-identical weight files", () => {
    const data = linearMixNdt(123, [12, 12]);
    const cfg = { hidden: 8, reduction: 4, epochs: 25, lr: 0.01, seed: 9 };
    const a = train(data, cfg).cfw;
    const b = train(data, cfg).cfw;
    expect(Buffer.compare(Buffer.from(a), Buffer.from(b))).toBe(0);
  });

  it("a different seed changes the weights", () => {
    const data = linearMixNdt(123, [12, 12]);
    const a = train(data, { epochs: 5, seed: 1 }).cfw;
    const b = train(data, { epochs: 5, seed: 2 }).cfw;
    expect(Buffer.compare(Buffer.from(a), Buffer.from(b))).not.toBe(0);
  });
});

describe("edge configurations", () => {
  it("epochs=0 still writes a loadable initialization", () => {
    const data = linearMixNdt(77, [10, 10]);
    const result = train(data, { epochs: 0, hidden: 8, reduction: 4, seed: 3 });
    const model = readCfw(result.cfw);
    expect(model.arch.hidden).toBe(8);
    expect(model.arch.cIn).toBe(data.cIn);
    expect(result.history).toHaveLength(1);
  });

  it("rejects hidden not divisible by reduction", () => {
    const data = linearMixNdt(77, [10, 10]);
    expect(() => train(data, { hidden: 5, reduction: 2 })).toThrow(ConfigError);
  });

  it("carries the tensor normalization into the weight file", () => {
    const data = linearMixNdt(88, [10, 10]);
    const model = readCfw(train(data, { epochs: 0 }).cfw);
    expect(Array.from(model.inNorm)).toEqual(Array.from(data.norm.slice(0, 2 * data.cIn)));
    expect(Array.from(model.outNorm)).toEqual(Array.from(data.norm.slice(2 * data.cIn)));
  });
});
