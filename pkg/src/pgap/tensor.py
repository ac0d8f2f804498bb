"""Small reverse-mode differentiation engine on top of numpy arrays.

Only the operations the descriptor model and its losses need are provided.
Operations record themselves on the active :class:`Tape`; with no tape active
they run as plain numpy code, which is what inference uses.

Every op accepts optional leading batch dimensions, so a stack of scans
``[B, n, 3]`` flows through the same code as a single scan ``[n, 3]``.
"""
from __future__ import annotations

import contextvars
import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DegenerateDescriptorError, DimensionError, EmptyInputError

NORM_EPS = 1e-12

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("pgap_tape", default=None)
_param_ids = itertools.count()


class Tensor:
    """A dense float array that may take part in a recorded computation."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if any(s < 1 for s in arr.shape):
            raise EmptyInputError(f"tensor shape entries must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"tensor of shape {self.shape} is not a scalar")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """Trainable leaf tensor; gradients accumulate additively into ``grad``."""

    __slots__ = ("name", "uid")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.uid = next(_param_ids)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = tuple(inputs)
        self.backward = backward


class Tape:
    """Ordered record of the differentiable ops of one forward pass.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded. A tape belongs to the thread that created it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if _is_leaf(inp):
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    grads[key] = gi if key not in grads else grads[key] + gi
        if id(loss) in grads and _is_leaf(loss):
            loss.grad = grads[id(loss)]


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _is_leaf(t: Tensor) -> bool:
    return not isinstance(t, _Produced)


class _Produced(Tensor):
    """Output of a recorded op; its gradient lives only inside backward."""

    __slots__ = ()


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _active_tape.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = _Produced(data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, backward)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_rows(F: Tensor, op: str) -> None:
    if F.data.ndim < 2:
        raise DimensionError(f"{op} expects [..., n, c], got {F.shape}")


# ---------------------------------------------------------------------------
# model ops


def linear(x: Tensor, W: Tensor, bias: Tensor | None = None) -> Tensor:
    """Row-wise affine map ``x @ W + bias`` over the last axis."""
    if W.data.ndim != 2 or x.data.shape[-1] != W.data.shape[0]:
        raise DimensionError(f"linear: cannot multiply x{x.shape} by W{W.shape}")
    if bias is not None and bias.data.shape != (W.data.shape[1],):
        raise DimensionError(f"linear: bias{bias.shape} does not match W{W.shape}")
    xd, Wd = x.data, W.data
    a, b = Wd.shape
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, a)
    out = x2 @ Wd
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (b,))

    def back(g):
        g2 = g.reshape(-1, b)
        gx = (g2 @ Wd.T).reshape(xd.shape) if x.requires_grad else None
        gW = x2.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gW, gb

    inputs = (x, W) if bias is None else (x, W, bias)
    return _emit(out, inputs, back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(x.data * mask, (x,), lambda g: (g * mask,))


def mean_rows(F: Tensor) -> Tensor:
    """Average over the row axis: ``[..., n, c] -> [..., c]``."""
    _check_rows(F, "mean_rows")
    n = F.data.shape[-2]
    if n == 0:
        raise EmptyInputError("mean_rows of zero rows")
    out = F.data.mean(axis=-2)

    def back(g):
        return (np.broadcast_to(g[..., None, :] / n, F.data.shape).copy(),)

    return _emit(out, (F,), back)


def gram(F: Tensor) -> Tensor:
    """Pairwise feature interactions ``F^T F / n``: ``[..., n, c] -> [..., c, c]``."""
    _check_rows(F, "gram")
    Fd = F.data
    n = Fd.shape[-2]
    if n == 0:
        raise EmptyInputError("gram of zero rows")
    G = np.swapaxes(Fd, -1, -2) @ Fd / n
    G = 0.5 * (G + np.swapaxes(G, -1, -2))

    def back(g):
        return (Fd @ (g + np.swapaxes(g, -1, -2)) / n,)

    return _emit(G, (F,), back)


def l2_normalize(v: Tensor) -> Tensor:
    """Scale each vector along the last axis to unit Euclidean length."""
    vd = v.data
    norm = np.sqrt(np.sum(vd * vd, axis=-1, keepdims=True))
    if np.any(norm <= NORM_EPS):
        raise DegenerateDescriptorError("cannot normalize a vector with (near) zero norm")
    u = vd / norm

    def back(g):
        return ((g - u * np.sum(g * u, axis=-1, keepdims=True)) / norm,)

    return _emit(u, (v,), back)


def log_softmax(z: Tensor) -> Tensor:
    zd = z.data
    shifted = zd - zd.max(axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _emit(out, (z,), back)


# ---------------------------------------------------------------------------
# structural and loss helpers


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.data.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def flatten_last(x: Tensor, k: int = 2) -> Tensor:
    """Merge the trailing ``k`` axes into one."""
    shape = x.data.shape
    return reshape(x, shape[:-k] + (int(np.prod(shape[-k:])),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    cuts = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit(out, tuple(tensors), back)


def take(x: Tensor, index) -> Tensor:
    """Gather along axis 0 with an int or a list of ints."""
    idx = np.asarray(index, dtype=np.intp)
    out = x.data[idx]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _emit(out, (x,), back)


def pick(x: Tensor, cols: Sequence[int]) -> Tensor:
    """``out[i] = x[i, cols[i]]`` for a 2-d ``x``."""
    rows = np.arange(x.data.shape[0])
    cols = np.asarray(cols, dtype=np.intp)
    out = x.data[rows, cols]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        return (gx,)

    return _emit(out, (x,), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def scale(x: Tensor, c: float) -> Tensor:
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def shift(x: Tensor, c: float) -> Tensor:
    return _emit(x.data + c, (x,), lambda g: (g,))


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a 1-element tensor."""
    shape = x.data.shape
    return _emit(np.array([x.data.sum()]), (x,), lambda g: (np.full(shape, g[0]),))


def norm(x: Tensor) -> Tensor:
    """Euclidean norm along the last axis; subgradient 0 at the origin."""
    xd = x.data
    n = np.sqrt(np.sum(xd * xd, axis=-1))

    def back(g):
        safe = np.where(n > 0, n, 1.0)
        return (np.where((n > 0)[..., None], xd / safe[..., None], 0.0) * g[..., None],)

    return _emit(n, (x,), back)
