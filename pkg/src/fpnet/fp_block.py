"""Feature-product (FP) blocks.

An FP-block expands its input with a 1x1 conv, filters every expanded channel
with two independent depthwise kernels, multiplies the two responses
pointwise, normalizes the product (no affine), and recombines channels with a
second 1x1 conv. Per patch the product is ``(f_a . x)(f_b . x)``, a rank-limited
second-order Volterra kernel ``w = outer(f_a, f_b)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .layers import BatchNorm2d, DwsConv, MaxPool2d, Module, conv_bn_relu
from .ops import BatchNormSpec, DwsConvSpec
from .tensor import Tensor, child_seed, elementwise_mul


@dataclass(frozen=True)
class FpBlockSpec:
    d_in: int
    d_out: int
    q: int = 2
    k: int = 3
    downsample: bool = False
    ablation: bool = False

    def __post_init__(self):
        if self.d_in < 1 or self.d_out < 1 or self.q < 1:
            raise ValueError(f"d_in, d_out and q must be positive: {self}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.k}")

    @property
    def width(self) -> int:
        """Internal channel count q * d_out."""
        return self.q * self.d_out


def count_fp_block_params(spec: FpBlockSpec) -> int:
    """Learnable weights of an FP-block outside batch norm.

    ``q d_in d_out`` (1x1 expand) + ``2 q k^2 d_out`` (filter pair)
    + ``q d_out^2`` (1x1 recombine). Convs carry no bias.
    """
    q, k, d_in, d_out = spec.q, spec.k, spec.d_in, spec.d_out
    return q * d_in * d_out + 2 * q * k * k * d_out + q * d_out * d_out


def count_block_params(spec: FpBlockSpec, include_bn: bool = True) -> int:
    """Closed-form count for either block variant, optionally with BN scale/shift."""
    n = count_fp_block_params(spec)
    if spec.ablation:
        n -= spec.q * spec.k * spec.k * spec.d_out
    if include_bn:
        n += 2 * spec.width + 2 * spec.d_out
    return n


class FPBlock(Module):
    """FP-block, or its single-filter ablation when ``spec.ablation`` is set.

    No residual shortcut. With ``downsample`` a 2x2 max-pool is appended.
    """

    def __init__(self, spec: FpBlockSpec, seed=0):
        super().__init__()
        self.spec = spec
        width = spec.width
        self.expand = conv_bn_relu(spec.d_in, width, 1, seed=child_seed(seed, 0))
        self.filter_a = DwsConv(DwsConvSpec(width, spec.k), child_seed(seed, 1))
        if spec.ablation:
            self.filter_b = None
            self.product_bn = None
        else:
            self.filter_b = DwsConv(DwsConvSpec(width, spec.k), child_seed(seed, 2))
            self.product_bn = BatchNorm2d(BatchNormSpec(width, affine=False))
        self.recombine = conv_bn_relu(width, spec.d_out, 1, seed=child_seed(seed, 3))
        self.pool = MaxPool2d(2, 2) if spec.downsample else None

    def feature_product(self, h: Tensor) -> Tensor:
        """Filter-pair stage on the expanded map ``h``: pointwise product, before BN."""
        if self.spec.ablation:
            raise ValueError("the ablation block has a single filter and no product stage")
        return elementwise_mul(self.filter_a(h), self.filter_b(h))

    def forward(self, x):
        h = self.expand(x)
        if self.spec.ablation:
            h = ops.relu(self.filter_a(h))
        else:
            h = self.product_bn(self.feature_product(h))
        h = self.recombine(h)
        if self.pool is not None:
            h = self.pool(h)
        return h

    def extra_repr(self):
        s = self.spec
        kind = "ablation, " if s.ablation else ""
        return f"{kind}{s.d_in}->{s.d_out}, q={s.q}, k={s.k}, downsample={s.downsample}"


def build_fp_block(spec: FpBlockSpec, seed=0) -> FPBlock:
    if spec.ablation:
        raise ValueError("spec has ablation=True; use build_ablation_block")
    return FPBlock(spec, seed)


def build_ablation_block(spec: FpBlockSpec, seed=0) -> FPBlock:
    return FPBlock(replace(spec, ablation=True), seed)


def feature_product_patch(x, f_a, f_b) -> float:
    """``(f_a . x) * (f_b . x)`` for one flattened k x k patch."""
    x, f_a, f_b = (np.asarray(v, dtype=np.float64).ravel() for v in (x, f_a, f_b))
    if not x.shape == f_a.shape == f_b.shape:
        raise ValueError(f"length mismatch: x={x.size}, f_a={f_a.size}, f_b={f_b.size}")
    # fsum of the rounded products: exact cancellation stays exactly zero (no FMA)
    return math.fsum(f_a * x) * math.fsum(f_b * x)


@dataclass(frozen=True)
class VolterraKernel:
    """Second-order kernel ``w[i, j]``; ``evaluate(x) = sum_ij w[i, j] x[i] x[j]``."""

    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size

    def symmetrized(self) -> np.ndarray:
        return 0.5 * (self.weights + self.weights.T)

    def rank(self, tol: float = 1e-10) -> int:
        return int(np.linalg.matrix_rank(self.symmetrized(), tol=tol))

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).ravel()
        return float(x @ self.weights @ x)


def expand_volterra(f_a, f_b) -> VolterraKernel:
    f_a = np.asarray(f_a, dtype=np.float64).ravel()
    f_b = np.asarray(f_b, dtype=np.float64).ravel()
    if f_a.shape != f_b.shape:
        raise ValueError(f"length mismatch: f_a={f_a.size}, f_b={f_b.size}")
    return VolterraKernel(np.outer(f_a, f_b))
