"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations record themselves on the active :class:`Graph` (entered with a
``with`` block).  Outside a graph they only compute values, which is what
inference uses.  Broadcasting is deliberately limited to adding a bias
vector to the rows of a matrix; every other shape mismatch raises
:class:`ShapeError`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "Node",
    "ShapeError",
    "GradientCheckError",
    "GradCheckResult",
    "active_graph",
    "backward",
    "grad_check",
    "forward_op",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "negate",
    "concat",
    "concat_last_axis",
    "stack",
    "expand",
    "tanh",
    "sigmoid",
    "softmax",
    "log_softmax",
    "log",
    "embedding_lookup",
    "slice_axis",
    "select",
    "reshape",
    "tensor_sum",
    "detach",
    "gru_step",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class GradientCheckError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "node_id", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_local = threading.local()


def active_graph() -> "Graph | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Graph:
    """Tape of recorded operations in construction (hence topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind, inputs, output, backward_fn) -> None:
        output.node_id = len(self.nodes)
        self.nodes.append(Node(kind, inputs, output, backward_fn))

    def backward(self, loss: Tensor, params=None):
        return backward(self, loss, params)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(kind: str, inputs: tuple[Tensor, ...], value: np.ndarray, backward_fn) -> Tensor:
    graph = active_graph()
    if graph is None or not any(t.requires_grad for t in inputs):
        return Tensor(value)
    out = Tensor(value, requires_grad=True)
    graph.record(kind, inputs, out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b, trans_b: bool = False) -> Tensor:
    """``a @ b`` (or ``a @ b.T``) with ``b`` a vector, a matrix, or a batch of matrices.

    With a 1-D or 2-D right operand the left operand may have any number of
    leading axes.  With two 3-D operands the product is batched over axis 0.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim == 0:
        raise ShapeError(f"matmul: left operand must have rank >= 1, got {av.shape}")
    if bv.ndim == 1:
        if trans_b or av.shape[-1] != bv.shape[0]:
            raise ShapeError(f"matmul: shapes {av.shape} and {bv.shape} not aligned")
        out = av @ bv

        def _back(g):
            ga = g[..., None] * bv
            gb = av.reshape(-1, bv.shape[0]).T @ g.reshape(-1)
            return ga, gb

        return _emit("matmul", (a, b), out, _back)
    if bv.ndim == 2:
        bm = bv.T if trans_b else bv
        if av.shape[-1] != bm.shape[0]:
            raise ShapeError(
                f"matmul: shapes {av.shape} and {bv.shape}{' (transposed)' if trans_b else ''} not aligned"
            )
        out = av @ bm

        def _back(g):
            ga = g @ bm.T
            gm = av.reshape(-1, bm.shape[0]).T @ g.reshape(-1, bm.shape[1])
            return ga, (gm.T if trans_b else gm)

        return _emit("matmul", (a, b), out, _back)
    if bv.ndim == 3 and av.ndim == 3 and not trans_b:
        if av.shape[0] != bv.shape[0] or av.shape[2] != bv.shape[1]:
            raise ShapeError(f"matmul: batched shapes {av.shape} and {bv.shape} not aligned")
        out = av @ bv

        def _back(g):
            return g @ bv.transpose(0, 2, 1), av.transpose(0, 2, 1) @ g

        return _emit("matmul", (a, b), out, _back)
    raise ShapeError(f"matmul: unsupported operand shapes {av.shape} and {bv.shape}")


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector added to every row of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        return _emit("add", (a, b), av + bv, lambda g: (g, g))
    if bv.ndim == 1 and av.ndim >= 1 and av.shape[-1] == bv.shape[0]:
        n = bv.shape[0]
        return _emit("add", (a, b), av + bv, lambda g: (g, g.reshape(-1, n).sum(axis=0)))
    raise ShapeError(f"add: incompatible shapes {av.shape} and {bv.shape}")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _emit("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ShapeError(f"mul: incompatible shapes {av.shape} and {bv.shape}")
    return _emit("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit("scale", (a,), a.value * c, lambda g: (g * c,))


def negate(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("negate", (a,), -a.value, lambda g: (-g,))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(_as_tensor(x) for x in xs)
    if not xs:
        raise ShapeError("concat: no operands")
    ndim = xs[0].value.ndim
    ax = axis % ndim
    for x in xs:
        if x.value.ndim != ndim or any(
            x.shape[i] != xs[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]} on axis {axis}")
    out = np.concatenate([x.value for x in xs], axis=ax)
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def _back(g):
        return np.split(g, bounds, axis=ax)

    return _emit("concat", xs, out, _back)


def concat_last_axis(xs: Sequence[Tensor]) -> Tensor:
    return concat(xs, axis=-1)


def stack(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = tuple(_as_tensor(x) for x in xs)
    if not xs:
        raise ShapeError("stack: no operands")
    if any(x.shape != xs[0].shape for x in xs):
        raise ShapeError(f"stack: operands differ in shape {[t.shape for t in xs]}")
    out = np.stack([x.value for x in xs], axis=axis)
    n = len(xs)

    def _back(g):
        return [np.take(g, i, axis=axis) for i in range(n)]

    return _emit("stack", xs, out, _back)


def expand(a, n: int, axis: int = 1) -> Tensor:
    """Repeat ``a`` ``n`` times along a new axis (explicit, not implicit broadcasting)."""
    a = _as_tensor(a)
    out = np.repeat(np.expand_dims(a.value, axis), n, axis=axis)
    return _emit("expand", (a,), out, lambda g: (g.sum(axis=axis),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.value)
    return _emit("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _emit("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a) -> Tensor:
    a = _as_tensor(a)
    y = _softmax(a.value)

    def _back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (a,), y, _back)


def log_softmax(a) -> Tensor:
    a = _as_tensor(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse

    def _back(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", (a,), y, _back)


def log(a) -> Tensor:
    a = _as_tensor(a)
    av = a.value
    return _emit("log", (a,), np.log(av), lambda g: (g / av,))


def embedding_lookup(table, ids) -> Tensor:
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.value.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: ids outside [0, {table.shape[0]}) for table {table.shape}"
        )
    out = table.value[ids]

    def _back(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _emit("embedding_lookup", (table,), out, _back)


def slice_axis(a, start: int, stop: int, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    ax = axis % a.value.ndim
    n = a.shape[ax]
    if not 0 <= start <= stop <= n:
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    index = [slice(None)] * a.value.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def _back(g):
        full = np.zeros_like(a.value)
        full[index] = g
        return (full,)

    return _emit("slice", (a,), a.value[index], _back)


def select(a, i: int, axis: int = 1) -> Tensor:
    """Pick index ``i`` along ``axis``, dropping that axis."""
    a = _as_tensor(a)
    ax = axis % a.value.ndim
    if not 0 <= i < a.shape[ax]:
        raise ShapeError(f"select: index {i} out of range for axis {axis} of {a.shape}")

    def _back(g):
        full = np.zeros_like(a.value)
        index = [slice(None)] * a.value.ndim
        index[ax] = i
        full[tuple(index)] = g
        return (full,)

    return _emit("select", (a,), np.take(a.value, i, axis=ax), _back)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    old = a.shape
    return _emit("reshape", (a,), out, lambda g: (g.reshape(old),))


def tensor_sum(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    av = a.value
    if axis is None:
        return _emit("sum", (a,), np.asarray(av.sum()), lambda g: (np.full_like(av, g),))
    ax = axis % av.ndim

    def _back(g):
        return (np.repeat(np.expand_dims(g, ax), av.shape[ax], axis=ax),)

    return _emit("sum", (a,), av.sum(axis=ax), _back)


def detach(a) -> Tensor:
    return Tensor(_as_tensor(a).value)


def gru_step(x, h, W_update, W_reset, W_cand, U_update, U_reset, U_cand, b_update, b_reset, b_cand) -> Tensor:
    """Fused GRU cell on (B, input) / (B, hidden), recorded as a single node.

    z = sigmoid(W_update x + U_update h + b_update)
    r = sigmoid(W_reset x + U_reset h + b_reset)
    c = tanh(W_cand x + U_cand (r * h) + b_cand)
    h' = h + z * (c - h)
    """
    inputs = tuple(_as_tensor(t) for t in (x, h, W_update, W_reset, W_cand, U_update, U_reset, U_cand,
                                            b_update, b_reset, b_cand))
    xv, hv, Wz, Wr, Wc, Uz, Ur, Uc, bz, br, bc = (t.value for t in inputs)
    if xv.ndim != 2 or hv.ndim != 2 or xv.shape[0] != hv.shape[0]:
        raise ShapeError(f"gru_step: expected (B, input) and (B, hidden), got {xv.shape} and {hv.shape}")
    H, n_in = hv.shape[1], xv.shape[1]
    for W in (Wz, Wr, Wc):
        if W.shape != (H, n_in):
            raise ShapeError(f"gru_step: input weights must be {(H, n_in)}, got {W.shape}")
    for U in (Uz, Ur, Uc):
        if U.shape != (H, H):
            raise ShapeError(f"gru_step: recurrent weights must be {(H, H)}, got {U.shape}")
    for b in (bz, br, bc):
        if b.shape != (H,):
            raise ShapeError(f"gru_step: biases must be {(H,)}, got {b.shape}")

    z = 0.5 * (1.0 + np.tanh(0.5 * (xv @ Wz.T + hv @ Uz.T + bz)))
    r = 0.5 * (1.0 + np.tanh(0.5 * (xv @ Wr.T + hv @ Ur.T + br)))
    rh = r * hv
    c = np.tanh(xv @ Wc.T + rh @ Uc.T + bc)
    out = hv + z * (c - hv)

    def _back(g):
        dz = g * (c - hv) * z * (1.0 - z)
        dc = g * z * (1.0 - c * c)
        drh = dc @ Uc
        dr = drh * hv * r * (1.0 - r)
        dh = g * (1.0 - z) + drh * r + dz @ Uz + dr @ Ur
        dx = dz @ Wz + dr @ Wr + dc @ Wc
        return (
            dx, dh,
            dz.T @ xv, dr.T @ xv, dc.T @ xv,
            dz.T @ hv, dr.T @ hv, dc.T @ rh,
            dz.sum(axis=0), dr.sum(axis=0), dc.sum(axis=0),
        )

    return _emit("gru_cell", inputs, out, _back)


_KINDS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "negate": negate,
    "concat": concat,
    "concat_last_axis": lambda *xs: concat(xs, axis=-1),
    "stack": lambda *xs, axis=1: stack(xs, axis=axis),
    "expand": expand,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax_last_axis": softmax,
    "log_softmax_last_axis": log_softmax,
    "log": log,
    "embedding_lookup": embedding_lookup,
    "slice": slice_axis,
    "select": select,
    "reshape": reshape,
    "sum": tensor_sum,
    "gru_cell": gru_step,
}


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; known: {sorted(_KINDS)}") from None
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# reverse pass


def _param_items(params) -> list[tuple[str, Tensor]]:
    if params is None:
        return []
    if isinstance(params, Mapping):
        return list(params.items())
    return [(p.name or f"param{i}", p) for i, p in enumerate(params)]


def backward(graph: Graph, loss: Tensor, params=None) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) over ``graph`` in reverse construction order.

    Every tensor in ``params`` (a name->Tensor mapping or a sequence) gets its
    ``grad`` overwritten, with zeros when it is not reachable from ``loss``.
    Returns the same gradients keyed by name.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi

    out = {}
    for name, p in _param_items(params):
        g = grads.get(id(p))
        p.grad = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
        out[name] = p.grad
    return out


@dataclass
class GradCheckResult:
    max_error: float
    worst_param: str | None
    worst_index: tuple[int, ...] | None
    per_param: dict[str, float]
    checked: int

    def passed(self, tol: float) -> bool:
        return self.max_error < tol


def grad_check(
    loss_builder: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    samples_per_param: int | None = None,
    seed: int = 0,
    corrupt: Callable[[dict[str, np.ndarray]], None] | None = None,
) -> GradCheckResult:
    """Compare analytic gradients with central differences.

    The error for one coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``; the
    result holds the maximum over the sampled coordinates (all of them when
    ``samples_per_param`` is None).  ``corrupt`` may tamper with the analytic
    gradients before comparison, which is how failure paths are exercised.
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    with Graph() as graph:
        loss = loss_builder(params)
    if not np.isfinite(loss.value).all():
        raise GradientCheckError("non-finite loss at the unperturbed point")
    analytic = {k: v.copy() for k, v in backward(graph, loss, params).items()}
    if corrupt is not None:
        corrupt(analytic)

    rng = np.random.default_rng(seed)
    worst, worst_name, worst_idx = 0.0, None, None
    per_param: dict[str, float] = {}
    checked = 0
    for name, p in params.items():
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if samples_per_param is not None and flat.size > samples_per_param:
            coords = np.sort(rng.choice(flat.size, size=samples_per_param, replace=False))
        agrad = analytic[name].reshape(-1)
        pmax = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            plus = loss_builder(params).item()
            flat[c] = orig - eps
            minus = loss_builder(params).item()
            flat[c] = orig
            idx = tuple(int(i) for i in np.unravel_index(c, p.shape))
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise GradientCheckError(f"non-finite loss when perturbing {name}{list(idx)}")
            numeric = (plus - minus) / (2.0 * eps)
            a = agrad[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if err > pmax:
                pmax = err
            if err > worst:
                worst, worst_name, worst_idx = err, name, idx
        per_param[name] = pmax
    return GradCheckResult(worst, worst_name, worst_idx, per_param, checked)
