"""Dense tensors with reverse-mode automatic differentiation.

Small on purpose: float64 ndarrays (float32 optional), a recording Tape,
and just the operations the model needs. Broadcasting is restricted to
scalar-with-tensor and equal shapes; richer alignment goes through
dedicated primitives (add_rowvec, rowscale, ...) with hand-written
backward rules.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class DimensionError(ValueError):
    """Shapes passed to an operation do not line up."""


class ContractError(RuntimeError):
    """An operation was used outside its contract (e.g. backward on a non-scalar)."""


def set_default_dtype(dtype) -> None:
    global DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    DEFAULT_DTYPE = dtype


_tls = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tape:
    """Execution-ordered record of differentiable operations.

    Reverse replay of the recording order is a valid topological order,
    so backward() walks the list once from the end. Ops whose output
    never received a gradient are skipped (zero contribution).
    """

    def __init__(self):
        self.ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise ContractError("a Tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.tape = None

    def record(self, out: "Tensor", backward_fn: Callable[[np.ndarray], None]) -> None:
        self.ops.append((out, backward_fn))

    def backward(self, loss: "Tensor") -> None:
        """Populate .grad for every requires_grad ancestor of a scalar loss.

        Each call contributes one full gradient: leaf grads accumulate
        across calls, while op outputs are pass-local and reset here so a
        replay never double-counts stale values.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        for out, _fn in self.ops:
            out.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self.ops):
            if out.grad is not None:
                fn(out.grad)


class Tensor:
    """A dense float array plus an optional gradient slot.

    Treat the data as immutable once it has been used in a forward op;
    only optimizers mutate .data, and only between tape recordings.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.name = name

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            if other.data.size != 1:
                raise DimensionError("division only supports scalar divisors")
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def backward(self) -> None:
        if self.tape is None:
            raise ContractError("tensor was not produced under an active Tape")
        self.tape.backward(self)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def _acc(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient contribution into t.grad."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.reshape(t.data.shape)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording its backward rule on the active tape."""
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.tape = tape
        tape.record(out, backward_fn(out))
    return out


def backward(loss: Tensor) -> None:
    """Module-level entry point: run reverse-mode accumulation from a scalar."""
    loss.backward()


# -- constructors -------------------------------------------------------


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DEFAULT_DTYPE), requires_grad=requires_grad)


# -- elementwise --------------------------------------------------------


def _broadcast_check(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast "
                         "(only scalar-with-tensor and equal shapes are supported)")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.data.size == 1 and g.size != 1:
        return np.sum(g).reshape(t.data.shape)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b)
    data = a.data + b.data

    def bwd(out):
        def fn(g):
            _acc(a, _reduce_to(g, a))
            _acc(b, _reduce_to(g, b))
        return fn

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b)
    data = a.data * b.data

    def bwd(out):
        def fn(g):
            _acc(a, _reduce_to(g * b.data, a))
            _acc(b, _reduce_to(g * a.data, b))
        return fn

    return _make(data, (a, b), bwd)


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    data = a.data ** p

    def bwd(out):
        def fn(g):
            _acc(a, g * p * a.data ** (p - 1.0))
        return fn

    return _make(data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # stable in both tails
    data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def bwd(out):
        def fn(g):
            _acc(a, g * data * (1.0 - data))
        return fn

    return _make(data, (a,), bwd)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def bwd(out):
        def fn(g):
            _acc(a, g * (1.0 - data * data))
        return fn

    return _make(data, (a,), bwd)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def bwd(out):
        def fn(g):
            _acc(a, g * (a.data > 0))
        return fn

    return _make(data, (a,), bwd)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def bwd(out):
        def fn(g):
            _acc(a, g * data)
        return fn

    return _make(data, (a,), bwd)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def bwd(out):
        def fn(g):
            _acc(a, g / a.data)
        return fn

    return _make(data, (a,), bwd)


def clamp_min(a, floor: float) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, floor)

    def bwd(out):
        def fn(g):
            _acc(a, g * (a.data > floor))
        return fn

    return _make(data, (a,), bwd)


# -- linear algebra ------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError("matmul supports 1-D and 2-D operands only")
    ak = a.shape[-1]
    bk = b.shape[0]
    if ak != bk:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(out):
        def fn(g):
            if a.ndim == 2 and b.ndim == 2:
                _acc(a, g @ b.data.T)
                _acc(b, a.data.T @ g)
            elif a.ndim == 1 and b.ndim == 2:   # (k,)@(k,n) -> (n,)
                _acc(a, b.data @ g)
                _acc(b, np.outer(a.data, g))
            elif a.ndim == 2 and b.ndim == 1:   # (m,k)@(k,) -> (m,)
                _acc(a, np.outer(g, b.data))
                _acc(b, a.data.T @ g)
            else:                               # (k,)@(k,) -> ()
                _acc(a, g * b.data)
                _acc(b, g * a.data)
        return fn

    return _make(data, (a, b), bwd)


def dot(a, b) -> Tensor:
    return matmul(a, b)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError("transpose expects a 2-D tensor")
    data = a.data.T.copy()

    def bwd(out):
        def fn(g):
            _acc(a, g.T)
        return fn

    return _make(data, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def bwd(out):
        def fn(g):
            _acc(a, g.reshape(a.data.shape))
        return fn

    return _make(data, (a,), bwd)


# -- reductions ----------------------------------------------------------


def tsum(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis)

    def bwd(out):
        def fn(g):
            if axis is None:
                _acc(a, np.broadcast_to(g, a.data.shape).copy())
            else:
                _acc(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())
        return fn

    return _make(data, (a,), bwd)


def tmean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


# -- structural -----------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat needs at least one tensor")
    ref = list(ts[0].shape)
    for t in ts[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise DimensionError(f"concat shapes mismatch off axis {axis}: {[t.shape for t in ts]}")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def bwd(out):
        def fn(g):
            offs = np.cumsum([0] + sizes)
            for t, lo, hi in zip(ts, offs[:-1], offs[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _acc(t, g[tuple(idx)])
        return fn

    return _make(data, ts, bwd)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack needs at least one tensor")
    if any(t.shape != ts[0].shape for t in ts):
        raise DimensionError("stack needs equal shapes")
    data = np.stack([t.data for t in ts])

    def bwd(out):
        def fn(g):
            for i, t in enumerate(ts):
                _acc(t, g[i])
        return fn

    return _make(data, ts, bwd)


def take(a, key) -> Tensor:
    """Basic indexing (ints and slices) with scatter backward."""
    a = _as_tensor(a)
    data = a.data[key].copy()

    def bwd(out):
        def fn(g):
            buf = np.zeros_like(a.data)
            buf[key] += g
            _acc(a, buf)
        return fn

    return _make(data, (a,), bwd)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of table at integer ids; backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError("embedding ids must be 1-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError("embedding id out of range")
    data = table.data[ids].copy()

    def bwd(out):
        def fn(g):
            if not table.requires_grad:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)
        return fn

    return _make(data, (table,), bwd)


def gather(x: Tensor, ids) -> Tensor:
    """Pick entries of a 1-D tensor at integer ids (duplicates allowed)."""
    x = _as_tensor(x)
    ids = np.asarray(ids, dtype=np.int64)
    if x.ndim != 1 or ids.ndim != 1:
        raise DimensionError("gather expects a 1-D tensor and 1-D ids")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[0]):
        raise DimensionError("gather id out of range")
    data = x.data[ids].copy()

    def bwd(out):
        def fn(g):
            if not x.requires_grad:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, ids, g)
        return fn

    return _make(data, (x,), bwd)


def scatter_add(size: int, ids, values: Tensor) -> Tensor:
    """Sum values into a fresh zero vector of the given length at ids."""
    ids = np.asarray(ids, dtype=np.int64)
    values = _as_tensor(values)
    if ids.shape != values.shape:
        raise DimensionError("scatter_add ids and values must align")
    if ids.size and (ids.min() < 0 or ids.max() >= size):
        raise DimensionError("scatter_add id out of range")
    data = np.zeros(size, dtype=DEFAULT_DTYPE)
    np.add.at(data, ids, values.data)

    def bwd(out):
        def fn(g):
            _acc(values, g[ids])
        return fn

    return _make(data, (values,), bwd)


# -- row-wise helpers ------------------------------------------------------


def rowscale(m: Tensor, s: Tensor) -> Tensor:
    """Scale row i of a matrix by scalar s[i]."""
    m, s = _as_tensor(m), _as_tensor(s)
    if m.ndim != 2 or s.shape != (m.shape[0],):
        raise DimensionError(f"rowscale expects (r,c) and (r,), got {m.shape} and {s.shape}")
    data = m.data * s.data[:, None]

    def bwd(out):
        def fn(g):
            _acc(m, g * s.data[:, None])
            _acc(s, (g * m.data).sum(axis=1))
        return fn

    return _make(data, (m, s), bwd)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-c vector to every row of an (r,c) matrix."""
    m, v = _as_tensor(m), _as_tensor(v)
    if m.ndim != 2 or v.shape != (m.shape[1],):
        raise DimensionError(f"add_rowvec expects (r,c) and (c,), got {m.shape} and {v.shape}")
    data = m.data + v.data[None, :]

    def bwd(out):
        def fn(g):
            _acc(m, g)
            _acc(v, g.sum(axis=0))
        return fn

    return _make(data, (m, v), bwd)


def mul_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of an (r,c) matrix elementwise by a length-c vector."""
    m, v = _as_tensor(m), _as_tensor(v)
    if m.ndim != 2 or v.shape != (m.shape[1],):
        raise DimensionError(f"mul_rowvec expects (r,c) and (c,), got {m.shape} and {v.shape}")
    data = m.data * v.data[None, :]

    def bwd(out):
        def fn(g):
            _acc(m, g * v.data[None, :])
            _acc(v, (g * m.data).sum(axis=0))
        return fn

    return _make(data, (m, v), bwd)


# -- normalizers -----------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    if a.data.shape == () or a.data.shape[axis] < 1:
        raise DimensionError("softmax needs a non-empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(out):
        def fn(g):
            inner = (g * data).sum(axis=axis, keepdims=True)
            _acc(a, data * (g - inner))
        return fn

    return _make(data, (a,), bwd)


def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean/unit-variance over the last axis, then affine."""
    x = _as_tensor(x)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    data = gain.data * xhat + bias.data

    def bwd(out):
        def fn(g):
            dxhat = g * gain.data
            dx = ivar / d * (d * dxhat
                             - dxhat.sum(axis=-1, keepdims=True)
                             - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
            _acc(x, dx)
            lead = tuple(range(g.ndim - 1))
            _acc(gain, (g * xhat).sum(axis=lead))
            _acc(bias, g.sum(axis=lead))
        return fn

    return _make(data, (x, gain, bias), bwd)


# -- convolution -------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid 2-D convolution on an (H,W,Cin) image with (kh,kw,Cin,Cout) filters."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError("conv2d expects (H,W,Cin) input and (kh,kw,Cin,Cout) weights")
    H, W, ci = x.shape
    kh, kw, wci, co = w.shape
    if wci != ci:
        raise DimensionError(f"conv2d channel mismatch: input {ci}, weights {wci}")
    if b.shape != (co,):
        raise DimensionError("conv2d bias must be (Cout,)")
    if H < kh or W < kw:
        raise DimensionError(f"conv2d input {H}x{W} smaller than kernel {kh}x{kw}")
    ho = (H - kh) // stride + 1
    wo = (W - kw) // stride + 1

    cols = np.empty((ho, wo, kh * kw * ci), dtype=x.data.dtype)
    k = 0
    for di in range(kh):
        for dj in range(kw):
            sub = x.data[di:di + (ho - 1) * stride + 1:stride,
                         dj:dj + (wo - 1) * stride + 1:stride, :]
            cols[:, :, k:k + ci] = sub
            k += ci
    wmat = w.data.reshape(kh * kw * ci, co)
    data = cols.reshape(ho * wo, -1) @ wmat + b.data
    data = data.reshape(ho, wo, co)

    def bwd(out):
        def fn(g):
            gmat = g.reshape(ho * wo, co)
            _acc(w, (cols.reshape(ho * wo, -1).T @ gmat).reshape(w.data.shape))
            _acc(b, gmat.sum(axis=0))
            if x.requires_grad:
                dcols = (gmat @ wmat.T).reshape(ho, wo, kh * kw * ci)
                dx = np.zeros_like(x.data)
                k = 0
                for di in range(kh):
                    for dj in range(kw):
                        dx[di:di + (ho - 1) * stride + 1:stride,
                           dj:dj + (wo - 1) * stride + 1:stride, :] += dcols[:, :, k:k + ci]
                        k += ci
                _acc(x, dx)
        return fn

    return _make(data, (x, w, b), bwd)


# -- parameters ---------------------------------------------------------------


class ParameterStore:
    """Named trainable tensors with deterministic iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape, rng: np.random.Generator | None = None,
            std: float = 0.05, init: np.ndarray | None = None) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if init is not None:
            data = np.asarray(init, dtype=DEFAULT_DTYPE).reshape(shape)
        elif rng is not None:
            data = rng.normal(0.0, std, size=shape).astype(DEFAULT_DTYPE)
        else:
            data = np.zeros(shape, dtype=DEFAULT_DTYPE)
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, t in self._params.items():
            arr = np.asarray(arrays[k], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise DimensionError(f"parameter {k}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()


# -- gradient checking ---------------------------------------------------------


class GradCheckReport:
    """Outcome of comparing autodiff grads to central finite differences."""

    def __init__(self, tol: float):
        self.tol = tol
        self.per_param: dict[str, float] = {}
        self.worst: tuple[str, int] | None = None
        self.max_rel_err = 0.0
        self.failures: list[str] = []

    @property
    def ok(self) -> bool:
        return not self.failures and self.max_rel_err <= self.tol

    def note(self, name: str, coord: int, rel: float) -> None:
        self.per_param[name] = max(self.per_param.get(name, 0.0), rel)
        if rel > self.max_rel_err:
            self.max_rel_err = rel
            self.worst = (name, coord)

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        worst = f" worst={self.worst[0]}[{self.worst[1]}]" if self.worst else ""
        lines = [f"gradcheck {status}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e}){worst}"]
        lines += [f"  {msg}" for msg in self.failures]
        return "\n".join(lines)


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor],
               eps: float = 1e-5, tol: float = 1e-4,
               max_coords_per_param: int | None = None,
               rng: np.random.Generator | None = None,
               mutate_grads: Callable[[dict[str, np.ndarray]], None] | None = None) -> GradCheckReport:
    """Compare autodiff gradients of a scalar function against central differences.

    f rebuilds its forward pass on every call and must be deterministic.
    With max_coords_per_param set, coordinates are subsampled per tensor
    (deterministically given rng); otherwise every coordinate is checked.
    mutate_grads is a test hook that may tamper with the analytic grads
    before comparison (to prove the checker catches bad backward rules).
    """
    report = GradCheckReport(tol)

    for t in params.values():
        t.grad = None
    with Tape() as _:
        loss = f()
        if not np.isfinite(loss.data).all():
            report.failures.append("loss is non-finite at the evaluation point")
            return report
        loss.backward()

    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items()}
    if mutate_grads is not None:
        mutate_grads(analytic)

    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            r = rng if rng is not None else np.random.default_rng(0)
            coords = r.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                report.failures.append(f"non-finite loss while perturbing {name}[{i}]")
                return report
            fd = (hi - lo) / (2.0 * eps)
            ad = float(analytic[name].reshape(-1)[i])
            report.note(name, int(i), _rel_err(ad, fd))
    return report
