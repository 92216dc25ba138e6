"""Dense float64 tensors with a reverse-mode differentiation tape.

Every operation that receives at least one tensor with ``requires_grad`` set
records a node holding its parents and a closure that pushes the upstream
gradient back into them.  :func:`backward` walks the recorded graph in
reverse topological order.

Shapes must match exactly for binary elementwise operations; the only
implicit broadcasting is between a tensor and a scalar (a Python number or a
0-d tensor).  Operations that need a wider fan-out (bias addition, tiling,
pairwise sums) are explicit functions with their own backward rules.
"""

from __future__ import annotations

import contextlib
import json
import zipfile
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from clim.exceptions import ConfigError, ContractError, DataError, DimensionError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.array(values, dtype=DTYPE)
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("division is only defined by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def parameter(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(values: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.name = None
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add ``g`` into ``t.grad``; ``owned`` means ``g`` is a fresh array we may keep."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if owned and g.dtype == DTYPE and g.flags.writeable and g.base is None \
            else np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _accum_at(t: Tensor, index, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros(t.shape, dtype=DTYPE)
    t.grad[index] += g


def _shape_error(op: str, a, b) -> DimensionError:
    return DimensionError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def _is_scalar(x) -> bool:
    if isinstance(x, Tensor):
        return x.ndim == 0
    return np.ndim(x) == 0


# elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        if not _is_scalar(b):
            raise _shape_error("add", a.shape, np.shape(b))
        c = float(b)
        return _record(a.values + c, (a,), lambda g: _accum(a, g))
    if a.shape == b.shape:
        def backward(g):
            _accum(a, g)
            _accum(b, g)
        return _record(a.values + b.values, (a, b), backward)
    if b.ndim == 0 or a.ndim == 0:
        big, small = (a, b) if b.ndim == 0 else (b, a)

        def backward(g):
            _accum(big, g)
            _accum(small, np.sum(g))
        return _record(a.values + b.values, (a, b), backward)
    raise _shape_error("add", a.shape, b.shape)


def neg(a: Tensor) -> Tensor:
    return _record(-a.values, (a,), lambda g: _accum(a, -g, owned=True))


def sub(a, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, neg(b))
    return add(a, -float(b))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        if not _is_scalar(b):
            raise _shape_error("mul", a.shape, np.shape(b))
        c = float(b)
        return _record(a.values * c, (a,), lambda g: _accum(a, g * c))
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        av, bv = a.values, b.values
        if a.shape == b.shape:
            def backward(g):
                _accum(a, g * bv, owned=True)
                _accum(b, g * av, owned=True)
        else:
            def backward(g):
                ga, gb = g * bv, g * av
                _accum(a, np.sum(ga) if a.ndim == 0 else ga)
                _accum(b, np.sum(gb) if b.ndim == 0 else gb)
        return _record(av * bv, (a, b), backward)
    raise _shape_error("mul", a.shape, b.shape)


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant (non-differentiated) array, e.g. a mask.

    ``c`` may broadcast to ``a.shape`` but never enlarges it.
    """
    c = np.asarray(c, dtype=DTYPE)
    try:
        out = a.values * c
    except ValueError:
        raise _shape_error("mul_const", a.shape, c.shape) from None
    if out.shape != a.shape:
        raise _shape_error("mul_const", a.shape, c.shape)
    return _record(out, (a,), lambda g: _accum(a, g * c, owned=True))


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    c = np.asarray(c, dtype=DTYPE)
    try:
        out = a.values + c
    except ValueError:
        raise _shape_error("add_const", a.shape, c.shape) from None
    if out.shape != a.shape:
        raise _shape_error("add_const", a.shape, c.shape)
    return _record(out, (a,), lambda g: _accum(a, g))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    return _record(y, (a,), lambda g: _accum(a, g * (1.0 - y * y), owned=True))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * a.values))
    return _record(y, (a,), lambda g: _accum(a, g * y * (1.0 - y), owned=True))


def relu(a: Tensor) -> Tensor:
    keep = a.values > 0
    return _record(a.values * keep, (a,), lambda g: _accum(a, g * keep, owned=True))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.values)
    return _record(y, (a,), lambda g: _accum(a, g * y))


def log(a: Tensor) -> Tensor:
    x = a.values
    return _record(np.log(x), (a,), lambda g: _accum(a, g / x))


_ELEMENTWISE = {"add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either a 2-D matrix shared across all leading axes of ``a`` or
    has exactly the same leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    av, bv = a.values, b.values
    if b.ndim == 2:
        out = av @ bv

        def backward(g):
            if a.requires_grad:
                _accum(a, g @ bv.T, owned=True)
            if b.requires_grad:
                k, n = bv.shape
                _accum(b, av.reshape(-1, k).T @ g.reshape(-1, n), owned=True)
        return _record(out, (a, b), backward)
    if a.shape[:-2] != b.shape[:-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    out = av @ bv

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(bv, -1, -2), owned=True)
        if b.requires_grad:
            _accum(b, np.swapaxes(av, -1, -2) @ g, owned=True)
    return _record(out, (a, b), backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a 1-D bias along the last axis of ``x``."""
    if bias.ndim != 1 or x.shape[-1:] != bias.shape:
        raise _shape_error("add_bias", x.shape, bias.shape)
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        _accum(x, g)
        if bias.requires_grad:
            _accum(bias, g.sum(axis=lead), owned=True)
    return _record(x.values + bias.values, (x, bias), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return add_bias(y, bias) if bias is not None else y


# reductions and shape ops ---------------------------------------------------

def sum_(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    out = np.sum(a.values, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, shape))
    return _record(np.asarray(out, dtype=DTYPE), (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", old, shape) from None
    return _record(out, (a,), lambda g: _accum(a, g.reshape(old)))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(a.values.transpose(axes), (a,), lambda g: _accum(a, g.transpose(inverse)))


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing; the result is a copy."""
    out = np.array(a.values[index], dtype=DTYPE)
    return _record(out, (a,), lambda g: _accum_at(a, index, g))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        s = t.shape
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise _shape_error("concat", ref, s)
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.values for t in tensors], axis=ax)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accum(t, g[tuple(sl)])
    return _record(out, tensors, backward)


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    ax = axis % a.ndim
    if sum(sizes) != a.shape[ax]:
        raise _shape_error("split", a.shape, tuple(sizes))
    parts, lo = [], 0
    for n in sizes:
        sl = [slice(None)] * a.ndim
        sl[ax] = slice(lo, lo + n)
        parts.append(take(a, tuple(sl)))
        lo += n
    return parts


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise _shape_error("stack", ref, t.shape)
    out = np.stack([t.values for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, np.take(g, i, axis=ax))
    return _record(out, tensors, backward)


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of length ``n`` by tiling ``a`` along it."""
    ex = np.expand_dims(a.values, axis)
    reps = [1] * ex.ndim
    ax = axis % ex.ndim
    reps[ax] = n
    out = np.tile(ex, reps)
    return _record(out, (a,), lambda g: _accum(a, g.sum(axis=ax), owned=True))


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    ax = axis % a.ndim
    width = [(0, 0)] * a.ndim
    width[ax] = (before, after)
    out = np.pad(a.values, width)
    sl = [slice(None)] * a.ndim
    sl[ax] = slice(before, before + a.shape[ax])
    sl = tuple(sl)
    return _record(out, (a,), lambda g: _accum(a, g[sl]))


def pairwise_add(a: Tensor, b: Tensor) -> Tensor:
    """``out[..., i, j, :] = a[..., i, :] + b[..., j, :]``."""
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise _shape_error("pairwise_add", a.shape, b.shape)
    out = a.values[..., :, None, :] + b.values[..., None, :, :]

    def backward(g):
        _accum(a, g.sum(axis=-2), owned=True)
        _accum(b, g.sum(axis=-3), owned=True)
    return _record(out, (a, b), backward)


# normalisation / probability ------------------------------------------------

def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-stabilised softmax.  Entries where ``mask`` is 0 get exactly zero weight."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for shape {x.shape}")
    v = x.values
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        if not m.any(axis=axis).all():
            raise ContractError("softmax: a row is fully masked")
        shifted = np.where(m, v, -np.inf)
        z = shifted - shifted.max(axis=axis, keepdims=True)
        e = np.where(m, np.exp(z), 0.0)
    else:
        e = np.exp(v - v.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(x, s * (g - (g * s).sum(axis=axis, keepdims=True)), owned=True)
    return _record(s, (x,), backward)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood over the positions where ``weights`` is non-zero.

    ``logits`` has shape ``[..., C]`` and ``targets`` the integer shape ``[...]``.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise _shape_error("cross_entropy", logits.shape, targets.shape)
    w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=DTYPE)
    total = w.sum()
    if total <= 0:
        raise ContractError("cross_entropy: every position is masked")
    n_cls = logits.shape[-1]
    active = w != 0
    if np.any((targets[active] < 0) | (targets[active] >= n_cls)):
        raise ContractError("cross_entropy: target id out of range")
    safe = np.where(active, targets, 0)
    v = logits.values
    shifted = v - v.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - log_z
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * w).sum() / total

    def backward(g):
        p = np.exp(logp)
        np.put_along_axis(p, safe[..., None], np.take_along_axis(p, safe[..., None], -1) - 1.0, -1)
        _accum(logits, p * (w / total)[..., None] * g, owned=True)
    return _record(np.asarray(loss, dtype=DTYPE), (logits,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise _shape_error("layer_norm", x.shape, gain.shape)
    v = x.values
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.values + bias.values
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).sum(axis=lead))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=lead))
        if x.requires_grad:
            gx = g * gain.values
            _accum(x, inv * (gx - gx.mean(axis=-1, keepdims=True)
                             - xhat * (gx * xhat).mean(axis=-1, keepdims=True)), owned=True)
    return _record(out, (x, gain, bias), backward)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    bad = np.argwhere((ids < 0) | (ids >= vocab))
    if bad.size:
        pos = tuple(int(i) for i in bad[0])
        raise DataError(f"token id {int(ids[pos])} at position {pos} outside vocabulary of size {vocab}")
    out = table.values[ids]

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros(table.shape, dtype=DTYPE)
            np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
    return _record(out, (table,), backward)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-length 1-D convolution over the second-to-last axis.

    ``x``: ``[..., T, c_in]``; ``kernel``: ``[w, c_in, c_out]`` with odd ``w``.
    Positions outside the sequence are zero.
    """
    w, c_in, c_out = kernel.shape
    if w % 2 == 0:
        raise ConfigError(f"conv1d kernel width must be odd, got {w}")
    if x.shape[-1] != c_in:
        raise _shape_error("conv1d", x.shape, kernel.shape)
    T = x.shape[-2]
    half = w // 2
    width = [(0, 0)] * x.ndim
    width[-2] = (half, half)
    xp = np.pad(x.values, width)
    cols = np.concatenate([xp[..., k:k + T, :] for k in range(w)], axis=-1)
    flat_k = kernel.values.reshape(w * c_in, c_out)
    out = cols @ flat_k
    if bias is not None:
        out = out + bias.values
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        if kernel.requires_grad:
            gk = cols.reshape(-1, w * c_in).T @ g.reshape(-1, c_out)
            _accum(kernel, gk.reshape(w, c_in, c_out).copy(), owned=True)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=lead))
        if x.requires_grad:
            gcols = g @ flat_k.T
            gxp = np.zeros(xp.shape, dtype=DTYPE)
            for k in range(w):
                gxp[..., k:k + T, :] += gcols[..., k * c_in:(k + 1) * c_in]
            _accum(x, gxp[..., half:half + T, :])
    return _record(out, parents, backward)


# tape -----------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf tensor.

    Gradients add onto whatever is already stored; clear them explicitly
    between optimisation steps.
    """
    if loss.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the tape (no input requires a gradient)")
    order = _topological(loss)
    loss.grad = np.ones((), dtype=DTYPE) if loss.grad is None else loss.grad + 1.0
    for node in reversed(order):
        if node._backward is None:
            continue
        if node.grad is not None:
            node._backward(node.grad)
        # interior gradients are never read again
        node.grad = None


# optimiser ------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray | None],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place, over every entry of ``params``."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ContractError(f"no gradient for trainable parameter {name!r}")
        if g.shape != p.shape:
            raise _shape_error(f"adam_step[{name}]", p.shape, g.shape)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros(p.shape, dtype=DTYPE)
            state.second_moment[name] = np.zeros(p.shape, dtype=DTYPE)
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v / c2)
        denom += state.epsilon
        step = m / denom
        step *= state.learning_rate / c1
        p.values -= step


class Adam:
    """Convenience wrapper binding :func:`adam_step` to a set of tensors."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, params: Iterable[str] | None = None) -> None:
        names = self.params if params is None else params
        active = {n: self.params[n] for n in names}
        adam_step(active, {n: p.grad for n, p in active.items()}, self.state)


# checkpoint container -------------------------------------------------------

CHECKPOINT_FORMAT = "clim-checkpoint"
CHECKPOINT_VERSION = 1
_META_ENTRY = "__meta__.json"


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    """Write a zip container of ``<name>.npy`` members plus a JSON header.

    Layout (version 1): ``__meta__.json`` holds ``{"format", "version",
    "names", "meta"}``; every parameter is a little-endian float64 ``.npy``
    member named after its dotted path.  Members carry a fixed timestamp so
    identical inputs give identical bytes.
    """
    names = sorted(arrays)
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "names": names, "meta": meta or {}}
    stamp = (1980, 1, 1, 0, 0, 0)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo(_META_ENTRY, stamp),
                    json.dumps(header, sort_keys=True, indent=1))
        for name in names:
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            info = zipfile.ZipInfo(name + ".npy", stamp)
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, arr, allow_pickle=False)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    with zf:
        try:
            header = json.loads(zf.read(_META_ENTRY))
        except KeyError:
            raise DataError(f"{path}: missing {_META_ENTRY}") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: not a checkpoint file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arrays = {}
        for name in header["names"]:
            with zf.open(name + ".npy") as fh:
                arrays[name] = np.lib.format.read_array(fh, allow_pickle=False)
    return arrays, header["meta"]
