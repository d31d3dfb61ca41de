"""Small tape-based reverse-mode autodiff over float64 numpy arrays.

Every differentiable op appends a node to the active tape; ``backward`` walks
the tape in reverse creation order and clears it.  Backward rules live in
``RULES`` keyed by op kind so they can be inspected (and, in tests, broken).
"""
from __future__ import annotations

import contextlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in the output of an op."""


class GradcheckError(AssertionError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._node = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)


@dataclass
class TapeNode:
    kind: str
    inputs: tuple
    out: Tensor
    saved: tuple = ()


class Tape:
    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.enabled = True

    def clear(self):
        self.nodes.clear()


_TAPE = Tape()


def get_tape() -> Tape:
    return _TAPE


@contextlib.contextmanager
def no_grad():
    prev = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = prev


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(kind: str, data: np.ndarray, inputs: tuple, saved: tuple = ()) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by op '{kind}'")
    track = _TAPE.enabled and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = None
    out.name = None
    out._node = None
    if track:
        node = TapeNode(kind, inputs, out, saved)
        out._node = node
        _TAPE.nodes.append(node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---- forward ops -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("add", a.data + b.data, (a, b))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("sub", a.data - b.data, (a, b))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("mul", a.data * b.data, (a, b))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("div", a.data / b.data, (a, b))


def neg(a):
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,))


def square(a):
    a = as_tensor(a)
    return _emit("square", a.data * a.data, (a,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("matmul", a.data @ b.data, (a, b))


def affine(x, w, b):
    """``x @ w + b`` for x of shape (batch, in)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.shape[0] != x.data.shape[1] or b.data.shape != (w.data.shape[1],):
        raise ValueError(f"affine shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    return _emit("affine", x.data @ w.data + b.data, (x, w, b))


def relu(a):
    a = as_tensor(a)
    return _emit("relu", np.maximum(a.data, 0.0), (a,))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), (y,))


def sigmoid(a):
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit("sigmoid", y, (a,), (y,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _emit("exp", y, (a,), (y,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    return _emit("log", np.log(a.data), (a,))


def clip(a, lo: float, hi: float):
    a = as_tensor(a)
    return _emit("clip", np.clip(a.data, lo, hi), (a,), (lo, hi))


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("minimum", np.minimum(a.data, b.data), (a, b))


def concat(parts: Sequence[Tensor], axis: int = -1):
    parts = tuple(as_tensor(p) for p in parts)
    return _emit("concat", np.concatenate([p.data for p in parts], axis=axis), parts, (axis,))


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001
    a = as_tensor(a)
    return _emit("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), (axis, keepdims))


def mean(a, axis=None, keepdims: bool = False):
    a = as_tensor(a)
    return _emit("mean", np.mean(a.data, axis=axis, keepdims=keepdims), (a,), (axis, keepdims))


def var(a, axis=None, keepdims: bool = False):
    """Population variance (divides by n)."""
    a = as_tensor(a)
    return _emit("var", np.var(a.data, axis=axis, keepdims=keepdims), (a,), (axis, keepdims))


# ---- backward rules ---------------------------------------------------------

def _expand(g, a, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, a.shape)


def _count(a, axis):
    if axis is None:
        return a.size
    axes = axis if isinstance(axis, tuple) else (axis,)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return n


def _r_add(g, n):
    a, b = n.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _r_sub(g, n):
    a, b = n.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _r_mul(g, n):
    a, b = n.inputs
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def _r_div(g, n):
    a, b = n.inputs
    return (_unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape))


def _r_affine(g, n):
    x, w, _ = n.inputs
    gx = g @ w.data.T if x.requires_grad else None
    gw = x.data.T @ g if w.requires_grad else None
    return gx, gw, g.sum(axis=0)


def _r_matmul(g, n):
    a, b = n.inputs
    return g @ b.data.T, a.data.T @ g


def _r_concat(g, n):
    (axis,) = n.saved
    sizes = np.cumsum([p.shape[axis] for p in n.inputs])[:-1]
    return tuple(np.split(g, sizes, axis=axis))


def _r_sum(g, n):
    (a,) = n.inputs
    axis, keep = n.saved
    return (_expand(g, a.data, axis, keep),)


def _r_mean(g, n):
    (a,) = n.inputs
    axis, keep = n.saved
    return (_expand(g, a.data, axis, keep) / _count(a.data, axis),)


def _r_var(g, n):
    (a,) = n.inputs
    axis, keep = n.saved
    m = np.mean(a.data, axis=axis, keepdims=True)
    return (_expand(g, a.data, axis, keep) * 2.0 * (a.data - m) / _count(a.data, axis),)


def _r_clip(g, n):
    (a,) = n.inputs
    lo, hi = n.saved
    return (g * ((a.data >= lo) & (a.data <= hi)),)


def _r_minimum(g, n):
    a, b = n.inputs
    pick_a = a.data <= b.data
    return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)


RULES: dict[str, Callable] = {
    "add": _r_add,
    "sub": _r_sub,
    "mul": _r_mul,
    "div": _r_div,
    "neg": lambda g, n: (-g,),
    "square": lambda g, n: (2.0 * g * n.inputs[0].data,),
    "matmul": _r_matmul,
    "affine": _r_affine,
    "relu": lambda g, n: (g * (n.inputs[0].data > 0),),
    "tanh": lambda g, n: (g * (1.0 - n.saved[0] ** 2),),
    "sigmoid": lambda g, n: (g * n.saved[0] * (1.0 - n.saved[0]),),
    "exp": lambda g, n: (g * n.saved[0],),
    "log": lambda g, n: (g / n.inputs[0].data,),
    "clip": _r_clip,
    "minimum": _r_minimum,
    "concat": _r_concat,
    "sum": _r_sum,
    "mean": _r_mean,
    "var": _r_var,
}


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1:
        raise ValueError("backward() needs a scalar loss")
    tape = _TAPE
    try:
        if loss._node is None:
            if loss.requires_grad:
                loss.grad += 1.0
            return
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, RULES[node.kind](g, node)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    inp.grad += gi
                else:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
    finally:
        tape.clear()


# ---- parameters and optimizer ----------------------------------------------

class ParamStore:
    """Ordered named parameters with gradient and Adam moment slots."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad[...] = 0.0

    @contextlib.contextmanager
    def frozen(self):
        """Treat parameters as constants for the duration (no gradient bookkeeping)."""
        for t in self.params.values():
            t.requires_grad = False
        try:
            yield self
        finally:
            for t in self.params.values():
                t.requires_grad = True

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data.copy()) for k, t in self.params.items())

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = ""):
        for name, t in self.params.items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"missing tensor {key!r}")
            src = np.asarray(arrays[key], dtype=np.float64)
            if src.shape != t.data.shape:
                raise ValueError(f"shape mismatch for tensor {key!r}: expected {t.data.shape}, got {src.shape}")
            t.data[...] = src

    def copy_structure(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self.params.items():
            out.add(name, t.data.copy())
        return out


def adam_step(store: ParamStore, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
    b1, b2 = betas
    store.step_count += 1
    k = store.step_count
    bc1 = 1.0 - b1 ** k
    bc2 = 1.0 - b2 ** k
    for name, t in store.params.items():
        g = t.grad
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= (lr / bc1) * m / (np.sqrt(v) / np.sqrt(bc2) + eps)


# ---- gradient checking -----------------------------------------------------

@dataclass
class GradcheckReport:
    ok: bool
    max_rel_error: float
    worst: str
    details: dict = field(default_factory=dict)


def _rel_err(a: np.ndarray, b: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradcheck(fn: Callable[[], Tensor], tensors: Iterable[Tensor], tol: float = 1e-4,
              h: float = 1e-5, floor: float = 1e-6, max_entries: int | None = None,
              rng: np.random.Generator | None = None, raise_on_fail: bool = False) -> GradcheckReport:
    """Compare analytic gradients of scalar ``fn()`` with central differences.

    ``tensors`` must be leaves with ``requires_grad``; ``max_entries`` caps how
    many coordinates per tensor get probed (randomly chosen).

    The relative error's denominator is floored at ``floor`` or at the
    difference quotient's own roundoff level divided by ``tol``, whichever is
    larger, so entries whose gradient is below what central differences can
    resolve for this ``fn`` do not count as failures. Roundoff is estimated
    from the largest L1 mass of any intermediate on the tape, since a small
    ``fn()`` can still be the difference of large terms.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad[...] = 0.0
    _TAPE.clear()
    out = fn()
    scale = max((float(np.abs(n.out.data).sum()) for n in _TAPE.nodes), default=abs(out.item()))
    backward(out)
    # two evaluations, each rounded to ~eps * scale, divided by 2h
    fd_noise = np.finfo(np.float64).eps * max(scale, 1.0) / h
    floor = max(floor, fd_noise / tol)
    analytic = [t.grad.copy() for t in tensors]
    worst_err, worst_name, details = 0.0, "", {}
    with no_grad():
        for ti, t in enumerate(tensors):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
            numeric = np.empty(idx.size)
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + h
                fp = fn().item()
                flat[i] = old - h
                fm = fn().item()
                flat[i] = old
                numeric[j] = (fp - fm) / (2 * h)
            err = _rel_err(analytic[ti].reshape(-1)[idx], numeric, floor)
            e = float(err.max()) if err.size else 0.0
            label = t.name or f"input{ti}"
            details[label] = e
            if e > worst_err:
                worst_err, worst_name = e, label
    report = GradcheckReport(worst_err <= tol, worst_err, worst_name, details)
    if raise_on_fail and not report.ok:
        raise GradcheckError(f"gradcheck failed: rel error {worst_err:.3g} on {worst_name} (tol {tol:g})")
    return report


def _leaf(rng, shape, name, positive=False, scale=1.0):
    data = rng.uniform(0.5, 2.0, shape) if positive else rng.normal(0.0, scale, shape)
    return Tensor(data, requires_grad=True, name=name)


def _case_binary(op):
    def build(rng):
        a = _leaf(rng, (4, 3), "a")
        b = _leaf(rng, (3,), "b", positive=(op is div))
        return (lambda: sum(op(a, b) * op(a, b))), [a, b]
    return build


def _case_unary(op, positive=False):
    def build(rng):
        a = _leaf(rng, (4, 3), "a", positive=positive)
        c = Tensor(rng.normal(size=(4, 3)))
        return (lambda: sum(op(a) * c)), [a]
    return build


def _case_affine(rng):
    x, w, b = _leaf(rng, (5, 4), "x"), _leaf(rng, (4, 3), "w"), _leaf(rng, (3,), "b")
    c = Tensor(rng.normal(size=(5, 3)))
    return (lambda: sum(affine(x, w, b) * c)), [x, w, b]


def _case_matmul(rng):
    a, b = _leaf(rng, (3, 4), "a"), _leaf(rng, (4, 2), "b")
    return (lambda: sum(square(matmul(a, b)))), [a, b]


def _case_reduce(op):
    def build(rng):
        a = _leaf(rng, (4, 5), "a")
        c = Tensor(rng.normal(size=(4, 1)))
        return (lambda: sum(op(a, axis=1, keepdims=True) * c) + op(a)), [a]
    return build


def _case_clip(rng):
    a = _leaf(rng, (4, 3), "a", scale=2.0)
    c = Tensor(rng.normal(size=(4, 3)))
    return (lambda: sum(clip(a, -1.0, 1.0) * c)), [a]


def _case_minimum(rng):
    a, b = _leaf(rng, (6,), "a"), _leaf(rng, (6,), "b")
    return (lambda: sum(square(minimum(a, b)))), [a, b]


def _case_concat(rng):
    a, b = _leaf(rng, (3, 2), "a"), _leaf(rng, (3, 4), "b")
    c = Tensor(rng.normal(size=(3, 6)))
    return (lambda: sum(concat([a, b], axis=1) * c)), [a, b]


# op kind -> builder(rng) -> (scalar fn, leaves); other modules may register composites
CHECK_CASES: dict[str, Callable] = {
    "add": _case_binary(add),
    "sub": _case_binary(sub),
    "mul": _case_binary(mul),
    "div": _case_binary(div),
    "neg": _case_unary(neg),
    "square": _case_unary(square),
    "matmul": _case_matmul,
    "affine": _case_affine,
    "relu": _case_unary(relu),
    "tanh": _case_unary(tanh),
    "sigmoid": _case_unary(sigmoid),
    "exp": _case_unary(exp),
    "log": _case_unary(log, positive=True),
    "clip": _case_clip,
    "minimum": _case_minimum,
    "concat": _case_concat,
    "sum": _case_reduce(sum),
    "mean": _case_reduce(mean),
    "var": _case_reduce(var),
}


def gradcheck_all(seed: int = 0, tol: float = 1e-4) -> dict[str, GradcheckReport]:
    rng = np.random.default_rng(seed)
    out = {}
    for kind, build in CHECK_CASES.items():
        fn, leaves = build(rng)
        out[kind] = gradcheck(fn, leaves, tol=tol)
    return out
