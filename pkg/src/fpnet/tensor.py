"""Dense tensors with tape-based reverse-mode autodiff.

Every differentiable op produces a :class:`Tensor` that records its parents
and a closure mapping the output gradient to one gradient per parent.
:func:`backward` replays those closures in reverse topological order.

Random fills use numpy's ``PCG64`` bit generator (PCG-XSL-RR 128/64), so a
given seed reproduces bit-identical values across builds and platforms.
"""
from __future__ import annotations

import contextlib
import math
import sys
import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True
_CHECK_FINITE = False


class ShapeError(ValueError):
    pass


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the precision used for new tensors and parameters."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def check_finite(enabled: bool = True):
    """Validation mode: raise ``FloatingPointError`` as soon as an op emits NaN/Inf."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = old


def rng(seed) -> np.random.Generator:
    """The project-wide generator: PCG64 seeded through ``SeedSequence``.

    ``seed`` may be an int or a sequence of ints (e.g. ``(seed, epoch, batch)``)
    so independent streams can be derived without shared state.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _validate_shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        shape = (shape,)
    shape = tuple(int(d) for d in shape)
    for d in shape:
        if d < 1:
            raise ShapeError(f"every extent must be >= 1, got shape {shape}")
    count = math.prod(shape)
    if count > sys.maxsize // 8:
        raise OverflowError(f"element count {count} of shape {shape} is not addressable")
    return shape


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return elementwise_mul(self, other)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named model tensor.

    Learnable parameters take part in autodiff; non-learnable ones (BN running
    statistics) are carried in checkpoints and never receive gradients.
    """

    __slots__ = ("learnable", "decay")

    def __init__(self, data, name: str | None = None, learnable: bool = True, decay: bool = False):
        super().__init__(data, requires_grad=learnable, name=name)
        self.learnable = learnable
        self.decay = decay

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, learnable={self.learnable})"


def tensor_create(shape, fill="zeros", *, value: float = 0.0, lo: float = 0.0, hi: float = 1.0,
                  mean: float = 0.0, std: float = 1.0, seed=None, dtype=None,
                  requires_grad: bool = False) -> Tensor:
    """Allocate a tensor filled with ``zeros``, ``ones``, ``constant``, ``uniform`` or ``normal``.

    Random fills require ``seed``; identical arguments give bitwise-identical data.
    """
    shape = _validate_shape(shape)
    dtype = np.dtype(dtype) if dtype is not None else _DEFAULT_DTYPE
    if fill == "zeros":
        data = np.zeros(shape, dtype)
    elif fill == "ones":
        data = np.ones(shape, dtype)
    elif fill == "constant":
        data = np.full(shape, value, dtype)
    elif fill in ("uniform", "normal"):
        if seed is None:
            raise ValueError(f"{fill} fill requires a seed")
        g = rng(seed)
        if fill == "uniform":
            data = g.uniform(lo, hi, size=shape)
        else:
            data = g.normal(mean, std, size=shape)
        data = data.astype(dtype)
    else:
        raise ValueError(f"unknown fill {fill!r}")
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op's output, recording it on the tape when any parent needs a gradient.

    ``backward_fn(grad_out)`` must return one array (or None) per parent.
    """
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {backward_fn.__qualname__}")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every reachable leaf that requires a gradient.

    Gradients accumulate: two calls without ``zero_grad`` give twice the
    gradient of one call.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        warnings.warn("loss is not connected to any tensor requiring grad; no gradients computed",
                      RuntimeWarning, stacklevel=2)
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# elementwise and reduction ops


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "elementwise_mul")

    def bw(g):
        return g * b.data, g * a.data

    return make_result(a.data * b.data, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def tensor_sum(a: Tensor) -> Tensor:
    def bw(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bw)


def tensor_mean(a: Tensor) -> Tensor:
    n = a.size

    def bw(g):
        return (np.full(a.shape, g / n, dtype=a.dtype),)

    return make_result(np.asarray(a.data.mean(), dtype=a.dtype), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def child_seed(seed, *path: int) -> tuple[int, ...]:
    """Derive a deterministic sub-seed, e.g. one per layer, from a parent seed."""
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return base + tuple(int(p) for p in path)
