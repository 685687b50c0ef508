#!/usr/bin/env python3
"""Smoke test for the tonelab_py extension module.

Build the module first, then run this script:

    cargo build -p tonelab-py --release
    python3 python/smoke_test.py
"""

import math
import random
import shutil
import sys
import tempfile
from pathlib import Path


def load_module():
    """Imports tonelab_py, copying the cargo-built cdylib if needed."""
    try:
        import tonelab_py  # noqa: F401

        return tonelab_py
    except ImportError:
        pass
    root = Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libtonelab_py.so", "libtonelab_py.dylib", "tonelab_py.dll")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("tonelab_py not built; run `cargo build -p tonelab-py --release` first")
    stage = Path(tempfile.mkdtemp(prefix="tonelab_py_"))
    suffix = ".pyd" if built.suffix == ".dll" else ".so"
    shutil.copy2(built, stage / f"tonelab_py{suffix}")
    sys.path.insert(0, str(stage))
    import tonelab_py

    return tonelab_py


def main():
    tl = load_module()
    rng = random.Random(0)

    # evidence ratio: e^(10/2)
    assert abs(tl.evidence_ratio(10.0) - math.exp(5.0)) < 1e-9

    # center_scale: mean 0, range 1
    scaled = tl.center_scale([3.0, 7.0, 5.0, 11.0])
    assert abs(sum(scaled) / len(scaled)) < 1e-12
    assert abs((max(scaled) - min(scaled)) - 1.0) < 1e-12

    # quantile: median of 1..5
    assert tl.quantile([5.0, 1.0, 3.0, 2.0, 4.0], 0.5) == 3.0

    # chance baseline: sum of squared proportions
    assert abs(tl.chance_baseline(["a", "a", "b", "b"]) - 0.5) < 1e-12

    # AR(1) estimate on simulated residuals
    rho, series, starts = 0.6, [], [0]
    for _ in range(200):
        e = rng.gauss(0.0, 1.0)
        series.append(e)
        for _ in range(29):
            e = rho * e + math.sqrt(1 - rho * rho) * rng.gauss(0.0, 1.0)
            series.append(e)
        starts.append(len(series))
    est = tl.estimate_rho(series, starts)
    assert abs(est - rho) < 0.05, f"estimate_rho gave {est}"

    # linear map recovers an affine truth exactly
    x = [[rng.uniform(-1, 1) for _ in range(3)] for _ in range(40)]
    y = [[2.0 * a - b + 0.5 * c + 1.0, a + b - c] for a, b, c in x]
    lm = tl.LinearMap.train(x, y, 0.0)
    assert lm.input_dim == 3 and lm.output_dim == 2
    pred = lm.predict(x)
    err = max(abs(p - t) for pr, tr in zip(pred, y) for p, t in zip(pr, tr))
    assert err < 1e-9, f"linear map error {err}"

    # nearest-neighbor accuracy: perfect predictions score 1
    labels = [f"w{i % 3}" for i in range(len(y))]
    acc = tl.nearest_neighbor_accuracy(y, labels, y, labels, "cosine")
    assert acc == 1.0

    # smooth fit recovers a noisy sine
    xs = [i / 299 for i in range(300)]
    ys = [math.sin(2 * math.pi * v) + rng.gauss(0.0, 0.1) for v in xs]
    fit = tl.SmoothFit(xs, ys, k=15)
    fitted = fit.predict(xs)
    rmse = math.sqrt(
        sum((f - math.sin(2 * math.pi * v)) ** 2 for f, v in zip(fitted, xs)) / len(xs)
    )
    assert rmse < 0.06, f"smooth fit rmse {rmse}"
    assert 2.0 < fit.edf < 20.0

    print("smoke test passed")


if __name__ == "__main__":
    main()
