"""Self-checks runnable from the command line (``fpnet verify --suite ...``)."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from . import ops
from .fp_block import (
    FPBlock, FpBlockSpec, count_block_params, count_fp_block_params, expand_volterra,
    feature_product_patch,
)
from .gradcheck import gradcheck, module_gradcheck
from .models import CifarResNet, ModelSpec, build_fp_resnet50_spec, count_learnable
from .reference import quadratic_form_double_sum
from .tensor import Tensor, default_dtype, elementwise_mul, rng

SUITES = ("gradcheck", "volterra", "params", "data")


@dataclass
class Check:
    name: str
    passed: bool
    measured: str
    tolerance: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        tol = f" (tol {self.tolerance})" if self.tolerance else ""
        return f"[{status}] {self.name}: {self.measured}{tol} [{self.seconds:.2f}s]"


def _timed(name, fn, tolerance=""):
    t0 = time.perf_counter()
    passed, measured = fn()
    return Check(name, bool(passed), measured, tolerance, time.perf_counter() - t0)


def volterra_max_error(n_triples: int = 1000, kernel_sizes=(1, 3, 5), seed: int = 0) -> float:
    """Worst relative gap between the explicit double-sum quadratic form and (f_a.x)(f_b.x)."""
    g = rng(seed)
    worst = 0.0
    for t in range(n_triples):
        k = kernel_sizes[t % len(kernel_sizes)]
        f_a, f_b, x = g.standard_normal((3, k * k))
        direct = feature_product_patch(x, f_a, f_b)
        via_kernel = quadratic_form_double_sum(expand_volterra(f_a, f_b).weights, x)
        worst = max(worst, abs(via_kernel - direct) / max(abs(direct), abs(via_kernel), 1e-300))
    return worst


def random_fp_specs(n: int, seed: int = 0):
    g = rng(seed)
    for _ in range(n):
        yield FpBlockSpec(int(g.integers(8, 129)), int(g.integers(8, 129)), q=int(g.integers(1, 5)),
                          k=int(g.choice([1, 3, 5])), downsample=bool(g.integers(0, 2)))


def closed_form_mismatches(n: int = 50, seed: int = 0) -> list:
    bad = []
    for spec in random_fp_specs(n, seed):
        built = count_learnable(FPBlock(spec), exclude_bn=True)
        if built != count_fp_block_params(spec):
            bad.append((spec, built))
    return bad


def reference_totals() -> dict:
    fp = CifarResNet(ModelSpec("resnet32", "001")).num_parameters()
    abl = CifarResNet(ModelSpec("resnet32", "001", ablation=True)).num_parameters()
    return {
        "fp_resnet32_001": fp,
        "fp_resnet32_001_ablation": abl,
        "difference": fp - abl,
        "resnet20": CifarResNet(ModelSpec("resnet20")).num_parameters(),
        "resnet44": CifarResNet(ModelSpec("resnet44")).num_parameters(),
        "fp_resnet50": build_fp_resnet50_spec().total_params,
    }


def _op_cases():
    """(name, builder) pairs; builder(g) returns (fn, arrays) for one random instance."""

    def conv(g):
        c, o, k = g.integers(1, 4), g.integers(1, 4), int(g.choice([1, 3]))
        s, p = int(g.integers(1, 3)), int(g.integers(0, 2))
        hw = int(g.integers(k, 7))
        x = g.standard_normal((2, c, hw, hw))
        w = g.standard_normal((o, c, k, k))
        b = g.standard_normal(o)
        return (lambda x, w, b: ops.conv2d(x, w, b, s, p)), [x, w, b]

    def dws(g):
        c, k = g.integers(1, 4), int(g.choice([1, 3, 5]))
        hw = int(g.integers(3, 7))
        return ops.dws_conv, [g.standard_normal((2, c, hw, hw)), g.standard_normal((c, 1, k, k))]

    def bn_train(g):
        c = int(g.integers(1, 4))
        state = ops.BatchNormState(c, np.float64)
        return ((lambda x, w, b: ops.batch_norm(x, state, True, w, b)),
                [g.standard_normal((3, c, 3, 3)), g.standard_normal(c), g.standard_normal(c)])

    def bn_noaffine(g):
        c = int(g.integers(1, 4))
        state = ops.BatchNormState(c, np.float64)
        return (lambda x: ops.batch_norm(x, state, True)), [g.standard_normal((3, c, 2, 3))]

    def bn_eval(g):
        c = int(g.integers(1, 4))
        state = ops.BatchNormState(c, np.float64)
        state.running_mean.data = g.standard_normal(c)
        state.running_var.data = g.uniform(0.5, 2, c)
        return ((lambda x, w, b: ops.batch_norm(x, state, False, w, b)),
                [g.standard_normal((2, c, 3, 3)), g.standard_normal(c), g.standard_normal(c)])

    def relu(g):
        x = g.standard_normal((2, 3, 4, 4))
        x += np.sign(x) * 0.01  # stay clear of the kink
        return ops.relu, [x]

    def pool(g):
        hw = int(g.integers(2, 9))
        win = int(g.integers(1, min(3, hw) + 1))
        stride = int(g.integers(1, 3))
        return (lambda x: ops.max_pool2d(x, win, stride)), [g.permutation(2 * 2 * hw * hw).reshape(2, 2, hw, hw) * 0.01]

    def gap(g):
        return ops.global_avg_pool, [g.standard_normal((2, 3, 3, 4))]

    def lin(g):
        i, o = g.integers(1, 6), g.integers(1, 6)
        return ops.linear, [g.standard_normal((3, i)), g.standard_normal((o, i)), g.standard_normal(o)]

    def xent(g):
        n, k = int(g.integers(1, 5)), int(g.integers(2, 6))
        labels = g.integers(0, k, n)
        return (lambda z: ops.softmax_cross_entropy(z, labels)), [g.standard_normal((n, k)) * 3]

    def mul(g):
        return elementwise_mul, [g.standard_normal((2, 3, 4, 4)), g.standard_normal((2, 3, 4, 4))]

    def shortcut(g):
        c = int(g.integers(1, 4))
        return (lambda x: ops.subsample_pad(x, 2 * c, 2)), [g.standard_normal((2, c, 4, 4))]

    return [("conv2d", conv), ("dws_conv", dws), ("batch_norm_train", bn_train),
            ("batch_norm_no_affine", bn_noaffine), ("batch_norm_eval", bn_eval), ("relu", relu),
            ("max_pool2d", pool), ("global_avg_pool", gap), ("linear", lin),
            ("softmax_cross_entropy", xent), ("elementwise_mul", mul), ("subsample_pad", shortcut)]


def gradcheck_errors(instances: int = 20, seed: int = 0) -> dict:
    """Worst relative error per op (64-bit, eps 1e-5) over ``instances`` random cases."""
    out = {}
    with default_dtype(np.float64):
        for name, builder in _op_cases():
            g = rng((seed, len(out)))
            worst = 0.0
            for i in range(instances):
                fn, arrays = builder(g)
                worst = max(worst, gradcheck(fn, [np.asarray(a, np.float64) for a in arrays], 1e-5, (seed, i)))
            out[name] = worst
        for name, ablation in (("fp_block", False), ("ablation_block", True)):
            g = rng((seed, name == "fp_block"))
            worst = 0.0
            for i in range(instances):
                spec = FpBlockSpec(int(g.integers(1, 4)), int(g.integers(1, 4)), q=int(g.integers(1, 3)),
                                   k=3, downsample=bool(i % 2), ablation=ablation)
                block = FPBlock(spec, seed=(seed, i))
                x = g.standard_normal((2, spec.d_in, 4, 4))
                worst = max(worst, module_gradcheck(block, x, 1e-5, (seed, i)))
            out[name] = worst
    return out


def suite_gradcheck() -> list[Check]:
    tol = 1e-6
    t0 = time.perf_counter()
    errors = gradcheck_errors()
    dt = time.perf_counter() - t0
    return [Check(f"gradcheck {name}", err <= tol, f"max rel err {err:.2e} over 20 instances",
                  f"{tol:g}", dt / len(errors)) for name, err in errors.items()]


def suite_volterra() -> list[Check]:
    def quad():
        err = volterra_max_error()
        return err <= 1e-9, f"1000 triples, k in (1,3,5): max rel err {err:.2e}"

    def suppress():
        g = rng(1)
        hits = 0
        for _ in range(100):
            f_a, f_b, x = orthogonal_triple(g, 3)
            hits += feature_product_patch(x, f_a, f_b) == 0.0
        return hits == 100, f"{hits}/100 orthogonal patches give exactly 0"

    def symmetry():
        g = rng(2)
        ok = all(feature_product_patch(x, a, b) == feature_product_patch(x, b, a)
                 for a, b, x in (g.standard_normal((3, 9)) for _ in range(200)))
        return ok, "g(x; f_a, f_b) == g(x; f_b, f_a) on 200 draws"

    def rank():
        g = rng(3)
        ranks = [expand_volterra(*g.standard_normal((2, 9))).rank() for _ in range(50)]
        return max(ranks) <= 2, f"max rank of symmetrized kernel {max(ranks)}"

    return [_timed("volterra equivalence", quad, "1e-9"),
            _timed("orthogonal suppression", suppress, "exact"),
            _timed("filter-pair symmetry", symmetry, "exact"),
            _timed("kernel rank", rank, "<= 2")]


def orthogonal_triple(g, k: int):
    """Random filters with ``x`` exactly orthogonal to ``f_a`` in floating point.

    ``x`` lives on the zero set of ``f_a`` plus one pair (i, j) carrying
    ``(f_a[j], -f_a[i])``; every product is exact and the pair cancels exactly.
    """
    n = k * k
    f_a = g.standard_normal(n)
    f_b = g.standard_normal(n)
    x = np.zeros(n)
    if n == 1:
        f_a[0] = 0.0
        x[0] = g.standard_normal()
        return f_a, f_b, x
    idx = g.permutation(n)
    i, j = idx[:2]
    zeros = idx[2:2 + int(g.integers(0, n - 1))]
    f_a[zeros] = 0.0
    x[zeros] = g.standard_normal(len(zeros))
    x[i], x[j] = f_a[j], -f_a[i]
    return f_a, f_b, x


def suite_params() -> list[Check]:
    def eq4():
        bad = closed_form_mismatches()
        return not bad, f"{50 - len(bad)}/50 random specs: formula == enumeration"

    def table():
        t = reference_totals()
        ok = (round(t["fp_resnet32_001"] / 1000) == 166 and round(t["fp_resnet32_001_ablation"] / 1000) == 162
              and t["difference"] == 3456 and abs(t["resnet20"] - 275_000) <= 10_000
              and round(t["resnet20"] / 1000) >= 270 and round(t["resnet44"] / 1000) <= 660
              and abs(t["fp_resnet50"] - 16_000_000) <= 500_000)
        return ok, ", ".join(f"{k}={v:,}" for k, v in t.items())

    def bn_accounting():
        spec = FpBlockSpec(32, 64, 2, 3)
        n = FPBlock(spec).num_parameters()
        return n == count_block_params(spec, include_bn=True), f"block with BN: {n:,}"

    return [_timed("closed-form count vs enumeration", eq4, "exact"),
            _timed("reported parameter totals", table, "166K / 162K / 3456 / 16M"),
            _timed("BN accounting", bn_accounting, "exact")]


def suite_data(data_dir) -> list[Check]:
    if data_dir is None:
        return [Check("data", False, f"no data directory (use --data-dir or ${data_mod.DATA_DIR_ENV})")]
    train = load = None
    checks = []
    t0 = time.perf_counter()
    try:
        train = data_mod.load_cifar10(data_dir, "train")
        load = data_mod.load_cifar10(data_dir, "test")
    except (OSError, ValueError) as e:
        return [Check("data load", False, str(e))]
    checks.append(Check("split sizes", len(train) == 50000 and len(load) == 10000,
                        f"train={len(train)}, test={len(load)}", "50000/10000", time.perf_counter() - t0))
    counts = np.bincount(load.labels, minlength=10)
    checks.append(Check("test class balance", bool(np.all(counts == 1000)), f"{counts.tolist()}"))
    mean, std = data_mod.channel_stats(train)
    dm = np.abs(mean - data_mod.CIFAR10_MEAN).max()
    ds = np.abs(std - data_mod.CIFAR10_STD).max()
    checks.append(Check("normalization constants", dm < 1e-3 and ds < 1e-3,
                        f"mean={np.round(mean, 4).tolist()} std={np.round(std, 4).tolist()}", "1e-3"))
    return checks


def run_suite(name: str, data_dir=None) -> list[Check]:
    if name == "gradcheck":
        return suite_gradcheck()
    if name == "volterra":
        return suite_volterra()
    if name == "params":
        return suite_params()
    if name == "data":
        return suite_data(data_dir)
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
