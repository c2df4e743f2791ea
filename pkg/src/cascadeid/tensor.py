"""Dense tensors with reverse-mode automatic differentiation.

Arrays are laid out batch/time/frequency/channel (``N, T, F, C``).  Axis
names ``"T"``, ``"F"`` and ``"C"`` always refer to the last three axes, so
the same op works on a single feature map (``T, F, C``) or on a batch.

Training runs in 32-bit floats; gradient checks switch the default dtype to
64-bit with :func:`default_dtype`.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

AXIS_NAMES = {"T": -3, "F": -2, "C": -1}

_state = threading.local()


def get_default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype new tensors are created with."""
    prev = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def record_branches():
    """Collect the branch taken by every relu and max-pool run inside.

    Yields a list that receives one array per op: the relu's active mask or
    the max-pool's argmax indices.  Two evaluations with equal lists lie on
    the same smooth piece of the function.
    """
    prev = getattr(_state, "branches", None)
    _state.branches = []
    try:
        yield _state.branches
    finally:
        _state.branches = prev


def _note_branch(choice: np.ndarray) -> None:
    sink = getattr(_state, "branches", None)
    if sink is not None:
        sink.append(choice)


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping needed to backpropagate into it."""

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=get_default_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= 4:
            raise ValueError(f"tensors have 1 to 4 axes, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by forward op")
    out = Tensor.__new__(Tensor)
    out.data = data.astype(get_default_dtype(), copy=False) if data.dtype != get_default_dtype() else data
    if out.data.ndim == 0:
        out.data = out.data.reshape(1)
    out.grad = None
    out.name = None
    parents = tuple(parents)
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _axis(axis, ndim: int) -> int:
    if isinstance(axis, str):
        if axis not in AXIS_NAMES:
            raise ValueError(f"unknown axis name {axis!r}")
        axis = AXIS_NAMES[axis]
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} absent from a {ndim}-axis tensor")
    return axis % ndim


# ---------------------------------------------------------------------------
# Elementwise and linear ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), bw)


def mul_broadcast(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``a * b`` where every axis of ``b`` equals ``a``'s or is 1.

    The result always has ``a``'s shape; gradients for ``b`` are summed over
    the replicated axes.
    """
    if b.ndim > a.ndim:
        raise ValueError(f"cannot broadcast {b.shape} onto {a.shape}")
    for na, nb in zip(a.shape[::-1], b.shape[::-1]):
        if nb not in (1, na):
            raise ValueError(f"cannot broadcast {b.shape} onto {a.shape}")
    return mul(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(x: Tensor, w: Tensor) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"matmul shape mismatch: {x.shape} @ {w.shape}")
    out = x.data @ w.data

    def bw(g):
        return g @ w.data.T, x.data.T @ g

    return _result(out, (x, w), bw)


def fully_connected(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (rows, din)."""
    if b is not None and b.shape[-1] != w.shape[1]:
        raise ValueError(f"bias extent {b.shape} does not match {w.shape}")
    y = matmul(x, w)
    return y if b is None else add(y, b)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _note_branch(mask)
    # gradient at exactly 0 is taken as 0
    return _result(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1 / (1 + e), e / (1 + e))

    def bw(g):
        return (g * s * (1 - s),)

    return _result(s, (x,), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def total(x: Tensor) -> Tensor:
    """Sum of every element, as a one-element tensor."""
    src = x.shape
    return _result(np.array([x.data.sum()]), (x,), lambda g: (np.broadcast_to(g[0], src).copy(),))


def mean(x: Tensor) -> Tensor:
    return scale(total(x), 1.0 / x.data.size)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    diff = add(pred, neg(target))
    return mean(mul(diff, diff))


# ---------------------------------------------------------------------------
# Pooling and concatenation
# ---------------------------------------------------------------------------

def pool_over(x: Tensor, axes, mode: str = "avg") -> Tensor:
    """Max or mean over the named axes, keeping them with extent 1.

    Max pooling routes the gradient to the first maximal element in row-major
    order over the reduced axes.
    """
    if isinstance(axes, (str, int)):
        axes = (axes,)
    if not axes:
        raise ValueError("pool_over needs at least one axis")
    ax = sorted({_axis(a, x.ndim) for a in axes})
    if mode == "avg":
        out = x.data.mean(axis=tuple(ax), keepdims=True)
        count = int(np.prod([x.shape[a] for a in ax]))
        src = x.shape

        def bw(g):
            return (np.broadcast_to(g / count, src).copy(),)

        return _result(out, (x,), bw)
    if mode != "max":
        raise ValueError(f"unknown pooling mode {mode!r}")

    keep = [a for a in range(x.ndim) if a not in ax]
    perm = keep + ax
    xt = x.data.transpose(perm)
    kept_shape = xt.shape[: len(keep)]
    flat = xt.reshape(kept_shape + (-1,))
    idx = flat.argmax(axis=-1)[..., None]
    _note_branch(idx)
    out = np.take_along_axis(flat, idx, axis=-1).reshape(kept_shape + (1,) * len(ax))
    out = out.transpose(np.argsort(perm))

    def bw(g):
        gt = g.transpose(perm).reshape(kept_shape + (1,))
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx, gt, axis=-1)
        return (gflat.reshape(xt.shape).transpose(np.argsort(perm)),)

    return _result(out, (x,), bw)


def concat(tensors: Sequence[Tensor], axis) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    nd = tensors[0].ndim
    ax = _axis(axis, nd)
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ValueError(f"concat extents disagree: {[t.shape for t in tensors]}")
    if len(tensors) == 1:
        return tensors[0]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(out, tensors, bw)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def _pair(v) -> tuple:
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v)


def conv_output_extent(length: int, kernel: int, stride: int, dilation: int, padding: str) -> int:
    span = (kernel - 1) * dilation + 1
    if padding == "same":
        return -(-length // stride)
    if padding == "valid":
        if length < span:
            raise ValueError(f"extent {length} shorter than dilated kernel span {span}")
        return (length - span) // stride + 1
    raise ValueError(f"unknown padding {padding!r}")


def _pad_amounts(length, kernel, stride, dilation, padding) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    span = (kernel - 1) * dilation + 1
    out = -(-length // stride)
    total_pad = max((out - 1) * stride + span - length, 0)
    return total_pad // 2, total_pad - total_pad // 2


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1, dilation=1,
           padding="same") -> Tensor:
    """2-D cross-correlation over the T and F axes.

    ``x`` is (T, F, Cin) or (N, T, F, Cin), ``kernel`` is (kT, kF, Cin, Cout).
    ``padding`` is ``"same"``, ``"valid"`` or a per-axis pair of those; same
    padding yields ``ceil(L / stride)`` outputs and pads with zeros, putting
    the odd element at the trailing edge.
    """
    sT, sF = _pair(stride)
    dT, dF = _pair(dilation)
    pT, pF = _pair(padding)
    if min(sT, sF) < 1 or min(dT, dF) < 1:
        raise ValueError("stride and dilation must be positive")
    if kernel.ndim != 4 or min(kernel.shape[:2]) < 1:
        raise ValueError(f"kernel must be (kT, kF, Cin, Cout), got {kernel.shape}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d input must have 3 or 4 axes, got {x.shape}")
    kT, kF, cin, cout = kernel.shape
    if xd.shape[-1] != cin:
        raise ValueError(f"input has {xd.shape[-1]} channels, kernel expects {cin}")
    if bias is not None and bias.shape[-1] != cout:
        raise ValueError(f"bias extent {bias.shape} does not match {cout} output channels")

    n, T, F, _ = xd.shape
    To = conv_output_extent(T, kT, sT, dT, pT)
    Fo = conv_output_extent(F, kF, sF, dF, pF)
    padT = _pad_amounts(T, kT, sT, dT, pT)
    padF = _pad_amounts(F, kF, sF, dF, pF)
    spanT, spanF = (kT - 1) * dT + 1, (kF - 1) * dF + 1
    xp = np.pad(xd, ((0, 0), padT, padF, (0, 0)))
    windows = sliding_window_view(xp, (spanT, spanF), axis=(1, 2))
    cols = windows[:, : (To - 1) * sT + 1 : sT, : (Fo - 1) * sF + 1 : sF, :, ::dT, ::dF]
    w = kernel.data.transpose(2, 0, 1, 3)  # Cin, kT, kF, Cout
    out = np.tensordot(cols, w, axes=([3, 4, 5], [0, 1, 2]))
    if bias is not None:
        out = out + bias.data.reshape(cout)
    if squeeze:
        out = out[0]

    def bw(g):
        g4 = g[None] if squeeze else g
        gk = np.tensordot(cols, g4, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
        gxp = np.zeros(xp.shape, dtype=g4.dtype)
        g2 = g4.reshape(-1, cout)
        for i in range(kT):
            for j in range(kF):
                t0, f0 = i * dT, j * dF
                contrib = (g2 @ kernel.data[i, j].T).reshape(n, To, Fo, cin)
                gxp[:, t0 : t0 + (To - 1) * sT + 1 : sT, f0 : f0 + (Fo - 1) * sF + 1 : sF] += contrib
        gx = gxp[:, padT[0] : padT[0] + T, padF[0] : padF[0] + F]
        if squeeze:
            gx = gx[0]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 1, 2)).reshape(bias.shape))
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, bw)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over rows of a (rows, K) tensor."""
    if logits.ndim != 2:
        raise ValueError(f"logits must be (rows, K), got {logits.shape}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    rows, k = logits.shape
    if labels.shape != (rows,):
        raise ValueError(f"{rows} logit rows but {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label out of range [0, {k})")
    logp = log_softmax(logits.data.astype(np.float64))
    loss = -logp[np.arange(rows), labels].mean()

    def bw(g):
        grad = np.exp(logp)
        grad[np.arange(rows), labels] -= 1
        return ((grad * (g[0] / rows)).astype(logits.data.dtype),)

    return _result(np.array([loss]), (logits,), bw)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

class Tape:
    """Executed ops reachable from a result, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(out, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t.requires_grad and t._backward is None]

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss is disconnected from every tracked tensor")
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return tape


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-4,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               stats: dict | None = None) -> float:
    """Largest relative gap between backprop and finite-difference gradients.

    Numeric derivatives use the fourth-order stencil on ``x +- eps`` and
    ``x +- 2 eps``.  For each input the gap is ``max|a - n| / max(max|a|,
    max|n|)`` over its entries, i.e. errors are measured against the scale of
    that input's gradient; entries far below that scale sit under the
    difference quotient's round-off.

    A coordinate whose perturbations flip any relu or max-pool branch is
    left out, since no difference quotient straddling a kink estimates a
    derivative.  ``stats`` (if given) receives the checked / skipped counts.

    ``fn`` must return a one-element tensor.  Inputs larger than
    ``max_entries`` are checked on a random subset of coordinates.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    with record_branches() as base:
        out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    backward(out)

    def same_branches(seen):
        return len(seen) == len(base) and all(np.array_equal(a, b) for a, b in zip(seen, base))

    worst, checked, skipped = 0.0, 0, 0
    with no_grad():
        for t in inputs:
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            aflat = analytic.reshape(-1)
            coords = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                coords = rng.choice(flat.size, size=max_entries, replace=False)
            keep, numeric = [], []
            for i in coords:
                orig = flat[i]
                vals, smooth = [], True
                for step in (2 * eps, eps, -eps, -2 * eps):
                    flat[i] = orig + step
                    with record_branches() as seen:
                        vals.append(fn(*inputs).item())
                    smooth = smooth and same_branches(seen)
                flat[i] = orig
                if not smooth:
                    skipped += 1
                    continue
                f2, f1, m1, m2 = vals
                keep.append(i)
                numeric.append((-f2 + 8 * f1 - 8 * m1 + m2) / (12 * eps))
            if not keep:
                continue
            checked += len(keep)
            numeric = np.array(numeric)
            scale = max(float(np.max(np.abs(aflat))), float(np.max(np.abs(numeric))), 1e-12)
            worst = max(worst, float(np.max(np.abs(aflat[keep] - numeric))) / scale)
    if stats is not None:
        stats["checked"] = stats.get("checked", 0) + checked
        stats["skipped"] = stats.get("skipped", 0) + skipped
    return worst
