"""Dense float64 matrices with tape-based reverse-mode differentiation.

Every value is a 2-D C-contiguous float64 array.  A Tape records
each primitive in execution order; backward() walks the records in reverse,
accumulating adjoints, so shared subexpressions receive summed gradients.
Matrices are treated as immutable once recorded: primitives always allocate
fresh output arrays and parameter updates swap in new arrays rather than
mutating in place.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray


def as_matrix(data, name: str = "matrix") -> Array:
    """Coerce to a 2-D C-contiguous float64 array with positive dimensions."""
    out = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dimensions, got {out.shape}")
    return out


def stable_sigmoid(x: Array) -> Array:
    """Logistic function computed without overflow for large |x|."""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def stable_softplus(x: Array) -> Array:
    """log(1 + exp(x)) computed as logaddexp(0, x); finite for any float."""
    return np.logaddexp(0.0, x)


class Parameter:
    """A trainable matrix that persists across tapes."""

    __slots__ = ("value", "name")

    def __init__(self, value, name: str = "") -> None:
        self.value = as_matrix(value, name or "parameter")
        self.name = name

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Parameter({self.name or hex(id(self))}, shape={self.value.shape})"


class Var:
    """One node on a tape: a value plus backward edges to its parents."""

    __slots__ = ("tape", "index", "value", "tracked", "source", "edges", "recompute")

    def __init__(
        self,
        tape: "Tape",
        index: int,
        value: Array,
        tracked: bool,
        source: Optional[Parameter],
        edges: Tuple[Tuple["Var", Callable[[Array], Array]], ...],
        recompute: Optional[Callable[[], Array]],
    ) -> None:
        self.tape = tape
        self.index = index
        self.value = value
        self.tracked = tracked
        self.source = source
        self.edges = edges
        self.recompute = recompute

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    # Operator sugar so loss expressions read like plain numpy code.
    def __add__(self, other: "Var") -> "Var":
        return add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return multiply(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Var":
        return scale(self, float(other))

    def __neg__(self) -> "Var":
        return scale(self, -1.0)

    def __matmul__(self, other: "Var") -> "Var":
        return matmul(self, other)


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self) -> None:
        self.nodes: List[Var] = []

    def leaf(self, param: Parameter) -> Var:
        """Insert a trainable parameter; gradients will flow to it."""
        return self._record(param.value, (), tracked=True, source=param)

    def constant(self, data) -> Var:
        """Insert a fixed matrix; backward treats it as a constant."""
        return self._record(as_matrix(data, "constant"), (), tracked=False)

    def _record(
        self,
        value: Array,
        edges: Tuple[Tuple[Var, Callable[[Array], Array]], ...],
        tracked: bool,
        source: Optional[Parameter] = None,
        recompute: Optional[Callable[[], Array]] = None,
    ) -> Var:
        node = Var(self, len(self.nodes), value, tracked, source, edges, recompute)
        self.nodes.append(node)
        return node

    def replay(self) -> None:
        """Recompute every non-leaf value in recording order.

        With unchanged leaves this reproduces the recorded values bitwise:
        every primitive is a deterministic function of its parents.
        """
        for node in self.nodes:
            if node.recompute is not None:
                node.value = node.recompute()


def _op(
    tape: Tape,
    value: Array,
    parents: Sequence[Tuple[Var, Callable[[Array], Array]]],
    recompute: Callable[[], Array],
) -> Var:
    # Only edges to tracked parents are kept: frozen subgraphs cost nothing
    # during backward.  The node itself is tracked if any parent is.
    edges = tuple((p, fn) for p, fn in parents if p.tracked)
    return tape._record(value, edges, tracked=bool(edges), recompute=recompute)


def _same_tape(*vs: Var) -> Tape:
    tape = vs[0].tape
    for v in vs[1:]:
        if v.tape is not tape:
            raise ContractError("operands were recorded on different tapes")
    return tape


def matmul(a: Var, b: Var) -> Var:
    """Matrix product a @ b."""
    tape = _same_tape(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    value = a.value @ b.value
    return _op(
        tape,
        value,
        [(a, lambda g: g @ b.value.T), (b, lambda g: a.value.T @ g)],
        lambda: a.value @ b.value,
    )


def _require_same_shape(a: Var, b: Var, opname: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname} operands differ in shape: {a.shape} vs {b.shape}")


def add(a: Var, b: Var) -> Var:
    """Elementwise sum of equally shaped matrices."""
    tape = _same_tape(a, b)
    _require_same_shape(a, b, "add")
    return _op(
        tape,
        a.value + b.value,
        [(a, lambda g: g), (b, lambda g: g)],
        lambda: a.value + b.value,
    )


def sub(a: Var, b: Var) -> Var:
    """Elementwise difference of equally shaped matrices."""
    tape = _same_tape(a, b)
    _require_same_shape(a, b, "sub")
    return _op(
        tape,
        a.value - b.value,
        [(a, lambda g: g), (b, lambda g: -g)],
        lambda: a.value - b.value,
    )


def multiply(a: Var, b: Var) -> Var:
    """Elementwise (Hadamard) product of equally shaped matrices."""
    tape = _same_tape(a, b)
    _require_same_shape(a, b, "multiply")
    return _op(
        tape,
        a.value * b.value,
        [(a, lambda g: g * b.value), (b, lambda g: g * a.value)],
        lambda: a.value * b.value,
    )


def scale(x: Var, s: float) -> Var:
    """Multiply every entry by the Python scalar s."""
    s = float(s)
    return _op(x.tape, x.value * s, [(x, lambda g: g * s)], lambda: x.value * s)


def scale_var(x: Var, s: Var) -> Var:
    """Multiply every entry of x by the single entry of the 1x1 node s."""
    tape = _same_tape(x, s)
    if s.shape != (1, 1):
        raise ShapeError(f"scale_var weight must be 1x1, got {s.shape}")
    return _op(
        tape,
        x.value * s.value[0, 0],
        [
            (x, lambda g: g * s.value[0, 0]),
            (s, lambda g: np.array([[np.sum(g * x.value)]])),
        ],
        lambda: x.value * s.value[0, 0],
    )


def add_rowvec(x: Var, b: Var) -> Var:
    """Add the 1xC row vector b to every row of the MxC matrix x."""
    tape = _same_tape(x, b)
    if b.shape != (1, x.shape[1]):
        raise ShapeError(f"row vector {b.shape} does not match matrix {x.shape}")
    return _op(
        tape,
        x.value + b.value,
        [(x, lambda g: g), (b, lambda g: g.sum(axis=0, keepdims=True))],
        lambda: x.value + b.value,
    )


def transpose(x: Var) -> Var:
    """Matrix transpose."""
    return _op(
        x.tape,
        np.ascontiguousarray(x.value.T),
        [(x, lambda g: g.T)],
        lambda: np.ascontiguousarray(x.value.T),
    )


def slice_cols(x: Var, start: int, stop: int) -> Var:
    """Columns [start, stop) as a new matrix."""
    if not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(
            f"column slice [{start}, {stop}) out of range for shape {x.shape}"
        )

    def spread(g: Array) -> Array:
        out = np.zeros(x.shape)
        out[:, start:stop] = g
        return out

    return _op(
        x.tape,
        np.ascontiguousarray(x.value[:, start:stop]),
        [(x, spread)],
        lambda: np.ascontiguousarray(x.value[:, start:stop]),
    )


def relu(x: Var) -> Var:
    """Elementwise max(0, x)."""
    return _op(
        x.tape,
        np.maximum(x.value, 0.0),
        [(x, lambda g: g * (x.value > 0.0))],
        lambda: np.maximum(x.value, 0.0),
    )


def tanh(x: Var) -> Var:
    """Elementwise hyperbolic tangent; outputs lie in (-1, 1)."""
    y = np.tanh(x.value)
    return _op(
        x.tape,
        y,
        [(x, lambda g: g * (1.0 - np.tanh(x.value) ** 2))],
        lambda: np.tanh(x.value),
    )


def sigmoid(x: Var) -> Var:
    """Elementwise logistic function; outputs lie in (0, 1)."""
    y = stable_sigmoid(x.value)

    def back(g: Array) -> Array:
        s = stable_sigmoid(x.value)
        return g * s * (1.0 - s)

    return _op(x.tape, y, [(x, back)], lambda: stable_sigmoid(x.value))


def softplus(x: Var) -> Var:
    """Elementwise log(1 + exp(x)), overflow-free for any input."""
    return _op(
        x.tape,
        stable_softplus(x.value),
        [(x, lambda g: g * stable_sigmoid(x.value))],
        lambda: stable_softplus(x.value),
    )


def log(x: Var) -> Var:
    """Elementwise natural logarithm; entries must be strictly positive."""
    if np.any(x.value <= 0.0):
        raise ContractError("log requires strictly positive entries")
    return _op(
        x.tape,
        np.log(x.value),
        [(x, lambda g: g / x.value)],
        lambda: np.log(x.value),
    )


def exp(x: Var) -> Var:
    """Elementwise exponential."""
    return _op(
        x.tape,
        np.exp(x.value),
        [(x, lambda g: g * np.exp(x.value))],
        lambda: np.exp(x.value),
    )


def reduce_sum(x: Var) -> Var:
    """Sum of all entries as a 1x1 matrix."""
    return _op(
        x.tape,
        np.array([[np.sum(x.value)]]),
        [(x, lambda g: np.full(x.shape, g[0, 0]))],
        lambda: np.array([[np.sum(x.value)]]),
    )


def frobenius_sq(x: Var) -> Var:
    """Squared Frobenius norm, sum of squared entries, as a 1x1 matrix."""
    return _op(
        x.tape,
        np.array([[np.sum(x.value * x.value)]]),
        [(x, lambda g: 2.0 * g[0, 0] * x.value)],
        lambda: np.array([[np.sum(x.value * x.value)]]),
    )


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(x: Var, kind: str) -> Var:
    """Apply a named activation; kind is one of relu, tanh, sigmoid."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(x)


def backward(loss: Var, params: Iterable[Parameter]) -> Dict[Parameter, Array]:
    """Gradients of the scalar loss with respect to each given parameter.

    Parameters that do not influence the loss (or never entered the tape)
    map to zero matrices.  Adjoint buffers are fresh on every call, so
    repeated backward passes over the same tape give identical results.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward requires a 1x1 loss node, got shape {loss.shape}")
    adjoint: Dict[int, Array] = {loss.index: np.ones((1, 1))}
    collected: Dict[Parameter, Array] = {}
    nodes = loss.tape.nodes
    for idx in range(loss.index, -1, -1):
        g = adjoint.pop(idx, None)
        if g is None:
            continue
        node = nodes[idx]
        for parent, fn in node.edges:
            # Accumulation is never in place: grad closures may return the
            # adjoint array itself, which other parents can share.
            piece = fn(g)
            acc = adjoint.get(parent.index)
            adjoint[parent.index] = piece if acc is None else acc + piece
        if node.source is not None:
            prev = collected.get(node.source)
            collected[node.source] = g.copy() if prev is None else prev + g
    return {p: collected.get(p, np.zeros(p.shape)) for p in params}


def sgd_step(
    params: Sequence[Parameter],
    grads: Dict[Parameter, Array],
    lr: float,
    direction: str = "descent",
) -> None:
    """Apply one gradient step to every parameter.

    All new values are computed before any parameter is touched, so a step
    is atomic: readers observe either the old set or the new set.
    """
    if lr <= 0.0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    if direction not in ("descent", "ascent"):
        raise ContractError(f"direction must be 'descent' or 'ascent', got {direction!r}")
    sign = -1.0 if direction == "descent" else 1.0
    updates = []
    for p in params:
        if p not in grads:
            raise ContractError(f"missing gradient for parameter {p.name or id(p)}")
        g = grads[p]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        updates.append((p, p.value + sign * lr * g))
    for p, new_value in updates:
        p.value = new_value
