#!/usr/bin/env python3
"""Generate the CFW1/CKV1 test fixtures checked into tests/fixtures/.

Uses torch (dev-only dependency, preinstalled on the dev box) as an
independent implementation of the forward pass: it trains the synthetic
cross-field model and emits golden vectors that the package's own engine
must reproduce within 1e-5. Rerunning regenerates equivalent fixtures.

    python scripts/make_fixtures.py
"""

from __future__ import annotations

import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from synthdata import synthetic_trio  # noqa: E402

from xfcomp import cfnn  # noqa: E402
from xfcomp.fields import Field, ErrorBoundSpec, resolve_error_bound  # noqa: E402
from xfcomp.pipeline import compress_field_hybrid, compress_field_lorenzo  # noqa: E402

FIXTURES = ROOT / "tests" / "fixtures"


class TorchCfnn(nn.Module):
    def __init__(self, ndim: int, c_in: int, hidden: int, reduction: int, c_out: int, k: int):
        super().__init__()
        Conv = nn.Conv3d if ndim == 3 else nn.Conv2d
        self.ndim = ndim
        self.conv1 = Conv(c_in, hidden, k, padding=k // 2)
        self.dw = Conv(hidden, hidden, k, padding=k // 2, groups=hidden)
        self.pw = Conv(hidden, hidden, 1)
        self.fc1 = nn.Linear(hidden, hidden // reduction)
        self.fc2 = nn.Linear(hidden // reduction, hidden)
        self.conv2 = Conv(hidden, c_out, k, padding=k // 2)

    def forward(self, x):
        h1 = F.relu(self.conv1(x))
        h2 = F.relu(self.pw(self.dw(h1)))
        spatial = tuple(range(2, 2 + self.ndim))
        avg = h2.mean(dim=spatial)
        mx = h2.amax(dim=spatial)
        gate = torch.sigmoid(self.fc2(F.relu(self.fc1(avg))) + self.fc2(F.relu(self.fc1(mx))))
        h3 = h2 * gate.view(gate.shape + (1,) * self.ndim)
        return self.conv2(h3)


def to_cfw(model: TorchCfnn, ndim, n_anchors, hidden, reduction, k, in_norm, out_norm):
    w = cfnn.CfnnWeights(
        ndim=ndim, c_in=n_anchors * ndim, hidden=hidden, reduction=reduction,
        c_out=ndim, k=k, n_anchors=n_anchors,
        in_norm=np.asarray(in_norm, np.float32), out_norm=np.asarray(out_norm, np.float32),
        params={
            "conv1_w": model.conv1.weight.detach().numpy().astype(np.float32),
            "conv1_b": model.conv1.bias.detach().numpy().astype(np.float32),
            "dw_w": model.dw.weight.detach().numpy().squeeze(1).astype(np.float32),
            "dw_b": model.dw.bias.detach().numpy().astype(np.float32),
            "pw_w": model.pw.weight.detach().numpy().reshape(hidden, hidden).astype(np.float32),
            "pw_b": model.pw.bias.detach().numpy().astype(np.float32),
            "fc1_w": model.fc1.weight.detach().numpy().astype(np.float32),
            "fc1_b": model.fc1.bias.detach().numpy().astype(np.float32),
            "fc2_w": model.fc2.weight.detach().numpy().astype(np.float32),
            "fc2_b": model.fc2.bias.detach().numpy().astype(np.float32),
            "conv2_w": model.conv2.weight.detach().numpy().astype(np.float32),
            "conv2_b": model.conv2.bias.detach().numpy().astype(np.float32),
        },
    )
    w.validate()
    return w


def torch_forward_denorm(model: TorchCfnn, x: np.ndarray, out_norm: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        y = model(torch.from_numpy(x[None]).float())[0].numpy()
    out = np.empty_like(y, dtype=np.float32)
    for ch in range(y.shape[0]):
        out[ch] = y[ch] * np.float32(out_norm[ch, 1]) + np.float32(out_norm[ch, 0])
    return out


def write_ckv(path: Path, vectors: list[tuple[np.ndarray, np.ndarray]]) -> None:
    out = [struct.pack("<4sI", b"CKV1", len(vectors))]
    for x, y in vectors:
        ndim = x.ndim - 1
        out.append(struct.pack("<B", ndim))
        out.append(struct.pack(f"<{ndim}Q", *x.shape[1:]))
        out.append(struct.pack("<II", x.shape[0], y.shape[0]))
        out.append(np.ascontiguousarray(x, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(y, dtype="<f4").tobytes())
    path.write_bytes(b"".join(out))


def check_parity(w: cfnn.CfnnWeights, vectors) -> float:
    worst = 0.0
    for x, expected in vectors:
        got = cfnn.forward(w, x)
        worst = max(worst, float(np.max(np.abs(got - expected))))
    return worst


def make_zero_models() -> None:
    for name, ndim, n_anchors in (("zero2d", 2, 1), ("zero3d", 3, 2)):
        w = cfnn.zero_weights(ndim=ndim, n_anchors=n_anchors, hidden=4, reduction=2)
        cfnn.write_weights(w, str(FIXTURES / f"{name}.cfw1"))
        print(f"{name}.cfw1: {w.param_count()} params")


def make_torch_reference(name: str, ndim: int, n_anchors: int, dims, seed: int) -> None:
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    hidden, reduction, k = 8, 4, 3
    c_in = n_anchors * ndim
    model = TorchCfnn(ndim, c_in, hidden, reduction, ndim, k)
    with torch.no_grad():
        for p in model.parameters():
            p.mul_(0.4)
    in_norm = np.tile(np.array([0.0, 1.0], np.float32), (c_in, 1))
    out_norm = np.stack([
        rng.uniform(-0.5, 0.5, size=ndim).astype(np.float32),
        rng.uniform(0.05, 0.2, size=ndim).astype(np.float32),
    ], axis=1)
    w = to_cfw(model, ndim, n_anchors, hidden, reduction, k, in_norm, out_norm)
    vectors = []
    for _ in range(3):
        x = rng.normal(size=(c_in,) + dims).astype(np.float32)
        vectors.append((x, torch_forward_denorm(model, x, out_norm)))
    worst = check_parity(w, vectors)
    assert worst <= 1e-5, f"{name}: parity {worst:.2e}"
    cfnn.write_weights(w, str(FIXTURES / f"{name}.cfw1"))
    write_ckv(FIXTURES / f"{name}.ckv1", vectors)
    print(f"{name}: parity {worst:.2e} over {len(vectors)} vectors")


def train_synth_model(epochs: int = 400, lr: float = 1e-3, seed: int = 7) -> None:
    anchors, target = synthetic_trio()
    ndt = cfnn.export_training_tensors(anchors, target, "")
    x_np, y_np, norm = cfnn.read_training_tensors(ndt)
    c_in, ndim = x_np.shape[0], target.ndim
    hidden, reduction, k = 8, 4, 3

    torch.manual_seed(seed)
    model = TorchCfnn(ndim, c_in, hidden, reduction, ndim, k)
    x = torch.from_numpy(x_np[None]).float()
    y = torch.from_numpy(y_np[None]).float()
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    initial = None
    for epoch in range(epochs):
        opt.zero_grad()
        loss = F.mse_loss(model(x), y)
        loss.backward()
        opt.step()
        if initial is None:
            initial = loss.item()
        if epoch % 50 == 0 or epoch == epochs - 1:
            print(f"  epoch {epoch:4d} mse {loss.item():.4f}")
    print(f"  mse {initial:.2f} -> {loss.item():.4f}")

    in_norm = norm[:c_in]
    out_norm = norm[c_in:]
    w = to_cfw(model, ndim, c_in // ndim, hidden, reduction, k, in_norm, out_norm)

    # golden inputs drawn from the data distribution the model actually sees
    rng = np.random.default_rng(seed)
    xv = np.stack([
        rng.normal(x_np[c].mean(), x_np[c].std(), size=(20, 20, 20)) for c in range(c_in)
    ]).astype(np.float32)
    crops = [
        np.ascontiguousarray(x_np[:, 16:36, 10:30, 5:25]),
        np.ascontiguousarray(x_np[:, -16:, -16:, -16:]),
    ]
    vectors = [(v, torch_forward_denorm(model, v, out_norm)) for v in [xv] + crops]
    worst = check_parity(w, vectors)
    assert worst <= 1e-5, f"synth3d parity {worst:.2e}"
    cfnn.write_weights(w, str(FIXTURES / "synth3d.cfw1"))
    write_ckv(FIXTURES / "synth3d.ckv1", vectors)
    print(f"synth3d: parity {worst:.2e}")

    # the fixture must actually buy compression ratio at rel 1e-3
    blob = (FIXTURES / "synth3d.cfw1").read_bytes()
    spec = ErrorBoundSpec("rel", 1e-3)
    eb_t = resolve_error_bound(spec, target)
    dec_anchors = []
    for a in anchors:
        eb_a = resolve_error_bound(spec, a)
        from xfcomp.quantize import dequantize, prequantize
        dec_anchors.append(dequantize(prequantize(a, eb_a)))
    _, base, _ = compress_field_lorenzo(target, eb_t)
    _, hyb, _ = compress_field_hybrid(target, dec_anchors, blob, eb_t)
    gain = hyb.cr / base.cr - 1.0
    print(f"synth3d CR: lorenzo {base.cr:.2f}, hybrid {hyb.cr:.2f} ({gain:+.1%})")
    assert gain >= 0.10, "trained fixture must beat Lorenzo by a clear margin"


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    make_zero_models()
    make_torch_reference("torch_ref_2d", ndim=2, n_anchors=2, dims=(24, 24), seed=101)
    make_torch_reference("torch_ref_3d", ndim=3, n_anchors=3, dims=(16, 16, 16), seed=202)
    print("training synth3d ...")
    train_synth_model()


if __name__ == "__main__":
    main()
