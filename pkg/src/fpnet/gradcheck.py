"""Central finite-difference checking of the autodiff tape."""
from __future__ import annotations

import numpy as np

from .reference import central_difference, relative_error
from .tensor import Tensor, backward, rng


def gradcheck(fn, arrays, eps: float = 1e-5, seed=0) -> float:
    """Relative error between tape gradients and central differences.

    The error is norm-wise over all inputs' gradients concatenated, so a
    tensor whose true gradient is zero (e.g. a conv weight made scale-invariant
    by a following batch norm) does not turn rounding noise into a failure.

    ``fn`` maps Tensors built from ``arrays`` to an output Tensor; the scalar
    being differentiated is ``sum(out * r)`` with a fixed random projection
    ``r`` so every output element contributes. ``arrays`` are perturbed in
    place during the check and restored afterwards.
    """
    arrays = [np.asarray(a) for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    proj = rng(seed).standard_normal(out.shape).astype(out.dtype)
    backward((out * Tensor(proj)).sum())

    def scalar():
        # reduce in float64 so 32-bit checks see only the op's own rounding
        return float(np.dot(fn(*[Tensor(a) for a in arrays]).data.ravel().astype(np.float64), proj.ravel()))

    analytic, numeric = [], []
    for leaf, arr in zip(leaves, arrays):
        # the leaf shares memory with arr, so perturbing arr is seen by scalar()
        numeric.append(central_difference(scalar, arr, eps).ravel())
        analytic.append((leaf.grad if leaf.grad is not None else np.zeros_like(arr)).ravel())
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def module_gradcheck(module, x: np.ndarray, eps: float = 1e-5, seed=0) -> float:
    """Gradient check of a module with respect to its input and every learnable parameter."""
    params = module.parameters()

    def run(inp):
        return module(Tensor(inp) if not isinstance(inp, Tensor) else inp)

    xt = Tensor(x, requires_grad=True)
    module.zero_grad()
    out = run(xt)
    proj = rng(seed).standard_normal(out.shape).astype(out.dtype)
    backward((out * Tensor(proj)).sum())

    def scalar():
        return float(np.dot(run(x).data.ravel().astype(np.float64), proj.ravel()))

    analytic = [xt.grad.ravel()] + [p.grad.ravel() for p in params]
    numeric = [central_difference(scalar, x, eps).ravel()]
    numeric += [central_difference(scalar, p.data, eps).ravel() for p in params]
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))
