"""Acceptance criteria, one status line per criterion.

    pytest tests/test_acceptance.py -v      # lines appear under "acceptance criteria"
    python tests/test_acceptance.py         # same checks, plain output

Criteria 7 and 9 train on real CIFAR-10 and run only when ``FPNET_DATA_DIR``
points at the binary files (about 35 min each on one CPU core).
"""
from __future__ import annotations

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fpnet import cli, ops
from fpnet.data import DATA_DIR_ENV
from fpnet.fp_block import FPBlock, FpBlockSpec
from fpnet.reference import conv2d_naive, grouped_conv2d_naive
from fpnet.tensor import Tensor, default_dtype, rng
from fpnet.trainer import metrics_without_wall, read_metrics_csv
from fpnet.verify import closed_form_mismatches, gradcheck_errors, orthogonal_triple, reference_totals, volterra_max_error

# expected band for the optional 200-epoch FP-ResNet-32 "001" run: mean +- 3 std, in percent
FULL_RUN_BAND = (7.85 - 3 * 0.22, 7.85 + 3 * 0.22)

SMOKE_ARGS = ["--model", "resnet20", "--config", "001", "--subset", "5000", "--epochs", "10",
              "--milestones", "8", "--seed", "0"]


def line(num, title, passed, measured, seconds=None, limit=None):
    status = {True: "PASS", False: "FAIL", None: "NOT RUN", "doc": "DOC"}[passed]
    timing = "" if seconds is None else f" [{seconds:.2f}s" + (f" / limit {limit:g}s]" if limit else "]")
    return f"criterion {num} {status:<7} {title}: {measured}{timing}"


def check(acceptance, num, title, passed, measured, seconds, limit):
    in_time = seconds < limit
    acceptance(line(num, title, passed and in_time, measured + ("" if in_time else " (too slow)"), seconds, limit))
    assert passed, measured
    assert in_time, f"{seconds:.2f}s exceeds {limit}s"


def test_c1_volterra_equivalence(acceptance):
    t0 = time.perf_counter()
    err = volterra_max_error(1000, (1, 3, 5), seed=0)
    check(acceptance, 1, "quadratic form == feature product", err <= 1e-9,
          f"max rel err {err:.2e} over 1000 triples (tol 1e-9)", time.perf_counter() - t0, 5)


def test_c2_orthogonal_suppression(acceptance):
    t0 = time.perf_counter()
    g = rng(2)
    zeros = 0
    with default_dtype(np.float64):
        for i in range(100):
            k = (1, 3, 5)[i % 3]
            f_a, f_b, patch = orthogonal_triple(g, k)
            block = FPBlock(FpBlockSpec(1, 1, q=1, k=k), seed=i)
            block.filter_a.weight.data = f_a.reshape(1, 1, k, k)
            block.filter_b.weight.data = f_b.reshape(1, 1, k, k)
            prod = block.feature_product(Tensor(patch.reshape(1, 1, k, k))).data
            zeros += prod[0, 0, k // 2, k // 2] == 0.0
    check(acceptance, 2, "orthogonal input suppressed before BN", zeros == 100,
          f"{zeros}/100 exactly zero", time.perf_counter() - t0, 1)


def test_c3_closed_form_count(acceptance):
    t0 = time.perf_counter()
    bad = closed_form_mismatches(50, seed=0)
    check(acceptance, 3, "closed-form count == enumeration", not bad,
          f"{50 - len(bad)}/50 random specs equal", time.perf_counter() - t0, 10)


def test_c4_reported_totals(acceptance):
    t0 = time.perf_counter()
    t = reference_totals()
    parts = {
        "FP-ResNet-32 001 -> 166K": round(t["fp_resnet32_001"] / 1000) == 166,
        "ablation -> 162K": round(t["fp_resnet32_001_ablation"] / 1000) == 162,
        "difference == 3456": t["difference"] == 3456,
        "ResNet-20 in 275K +- 10K": abs(t["resnet20"] - 275_000) <= 10_000,
        "270K-660K bracket": round(t["resnet20"] / 1000) >= 270 and round(t["resnet44"] / 1000) <= 660,
        "FP-ResNet-50 16M +- 0.5M": abs(t["fp_resnet50"] - 16_000_000) <= 500_000,
    }
    failed = [k for k, ok in parts.items() if not ok]
    measured = ", ".join(f"{k}={v:,}" for k, v in t.items()) + (f"; failed: {failed}" if failed else "")
    check(acceptance, 4, "parameter totals", not failed, measured, time.perf_counter() - t0, 10)


def test_c5_gradient_checks(acceptance):
    t0 = time.perf_counter()
    errors = gradcheck_errors(instances=20, seed=0)
    worst = max(errors, key=errors.get)
    bad = [k for k, v in errors.items() if v > 1e-6]
    check(acceptance, 5, f"finite-difference gradients ({len(errors)} ops/blocks x 20)", not bad,
          f"worst {worst} {errors[worst]:.2e} (tol 1e-6)" + (f"; over tol: {bad}" if bad else ""),
          time.perf_counter() - t0, 120)


def test_c6_convolution_oracles(acceptance):
    t0 = time.perf_counter()
    g = rng(6)
    worst = 0.0
    for _ in range(50):
        n, c, o = (int(v) for v in g.integers(1, 4, size=3))
        k = int(g.choice([1, 3, 5]))
        s, p = int(g.integers(1, 3)), int(g.integers(0, 3))
        h, w = (int(v) for v in g.integers(k, 9, size=2))
        x = g.standard_normal((n, c, h, w))
        wt = g.standard_normal((o, c, k, k))
        got = ops.conv2d(Tensor(x), Tensor(wt), stride=s, padding=p).data
        worst = max(worst, np.abs(got - conv2d_naive(x, wt, stride=s, padding=p)).max())
        dw = g.standard_normal((c, 1, k, k))
        got = ops.dws_conv(Tensor(x), Tensor(dw)).data
        worst = max(worst, np.abs(got - grouped_conv2d_naive(x, dw, c, padding=k // 2)).max())
    check(acceptance, 6, "conv2d and dws_conv vs nested loops", worst <= 1e-5,
          f"50 shapes each, max abs err {worst:.1e} (tol 1e-5)", time.perf_counter() - t0, 60)


_runs: dict[str, Path] = {}


def smoke_run(tag: str, data_dir: str, root: Path) -> tuple[Path, float]:
    out = root / tag
    t0 = time.perf_counter()
    code = cli.main(["train", *SMOKE_ARGS, "--data-dir", data_dir, "--out-dir", str(out)])
    assert code == 0, f"training run {tag} exited with {code}"
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def cifar_dir():
    return os.environ.get(DATA_DIR_ENV)


def test_c7_training_smoke(acceptance, cifar_dir, tmp_path_factory):
    title = "FP-ResNet-20 001, 5000 images, 10 epochs"
    if not cifar_dir:
        acceptance(line(7, title, None, f"CIFAR-10 not available (set {DATA_DIR_ENV})"))
        pytest.skip("CIFAR-10 not available")
    out, seconds = smoke_run("a", cifar_dir, tmp_path_factory.mktemp("smoke"))
    _runs["a"] = out
    recs = read_metrics_csv(out / "metrics.csv")
    drop = 1 - recs[-1].train_loss / recs[0].train_loss
    err = recs[-1].test_error
    acc = recs[-1].train_acc
    # the trainer contract adds: final train accuracy above 55%
    check(acceptance, 7, title, drop >= 0.40 and err < 0.60 and acc > 0.55,
          f"loss drop {drop:.1%} (>= 40%), test error {err:.4f} (< 0.60), train acc {acc:.3f} (> 0.55)",
          seconds, 30 * 60)


def test_c8_full_protocol_documented(acceptance):
    script = Path(__file__).resolve().parents[1] / "demos" / "04_full_cifar_protocol.py"
    ok = script.exists()
    lo, hi = FULL_RUN_BAND
    acceptance(line(8, "headline error rates", "doc",
                    f"not reproducible at desk scale; optional run {script.name} "
                    f"expects {lo:.2f}%-{hi:.2f}% ({'script present' if ok else 'script MISSING'})"))
    assert ok


def test_c9_determinism(acceptance, cifar_dir, tmp_path_factory):
    title = "repeat of criterion 7 gives identical metrics"
    if not cifar_dir:
        acceptance(line(9, title, None, f"CIFAR-10 not available (set {DATA_DIR_ENV})"))
        pytest.skip("CIFAR-10 not available")
    if "a" not in _runs:
        _runs["a"], _ = smoke_run("a", cifar_dir, tmp_path_factory.mktemp("smoke"))
    b, seconds = smoke_run("b", cifar_dir, tmp_path_factory.mktemp("smoke"))
    same = metrics_without_wall(_runs["a"] / "metrics.csv") == metrics_without_wall(b / "metrics.csv")
    check(acceptance, 9, title, same, "byte-equal without wall_seconds" if same else "metrics differ",
          seconds, 30 * 60)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
