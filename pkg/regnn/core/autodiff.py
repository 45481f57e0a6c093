"""
Minimal reverse-mode automatic differentiation over dense matrices.
A Tape is an append-only Wengert list; every recorded Var keeps the closure
that maps its adjoint to the adjoints of its parents.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from regnn.config import settings


logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(ValueError):
    """A NaN or Inf entered the computation."""


class BackwardError(RuntimeError):
    """Backward pass requested from something other than a scalar loss."""


class Var:
    """Handle to one node of a Tape: a value matrix and, after backward, its adjoint."""

    __slots__ = ("tape", "value", "grad", "parents", "backward_fn", "name", "is_param", "index")

    def __init__(
        self,
        tape: "Tape",
        value: np.ndarray,
        parents: Sequence["Var"] = (),
        backward_fn: Optional[BackwardFn] = None,
        name: Optional[str] = None,
        is_param: bool = False,
    ):
        self.tape = tape
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name
        self.is_param = is_param
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        label = self.name or ("param" if self.is_param else "var")
        return f"Var({label}, shape={self.value.shape})"


class Tape:
    """
    Append-only record of operations.

    Args:
        dtype: float64 (verification) or float32 (training switch)
        checked: reject non-finite values as they are created
    """

    def __init__(self, dtype=np.float64, checked: Optional[bool] = None):
        self.dtype = np.dtype(dtype)
        self.checked = settings.CHECKED_MODE if checked is None else checked
        self.nodes: List[Var] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _as_matrix(self, value) -> np.ndarray:
        arr = np.asarray(value, dtype=self.dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"only 2-d values are supported, got ndim={arr.ndim}")
        return arr

    def _check(self, value: np.ndarray, what: str) -> None:
        if self.checked and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by {what}")

    def _append(self, var: Var) -> Var:
        var.index = len(self.nodes)
        self.nodes.append(var)
        return var

    def param(self, value, name: Optional[str] = None) -> Var:
        """Leaf that receives a gradient. The array is copied."""
        arr = self._as_matrix(value).copy()
        self._check(arr, f"param {name or ''}".strip())
        return self._append(Var(self, arr, name=name, is_param=True))

    def constant(self, value, name: Optional[str] = None) -> Var:
        """Leaf that is never differentiated."""
        arr = self._as_matrix(value)
        self._check(arr, f"constant {name or ''}".strip())
        return self._append(Var(self, arr, name=name))

    def record(
        self,
        value: np.ndarray,
        parents: Sequence[Var],
        backward_fn: BackwardFn,
        name: Optional[str] = None,
    ) -> Var:
        """Append a derived node; used by every op, including fused ops outside this module."""
        for p in parents:
            if p.tape is not self:
                raise ValueError("operands belong to a different tape")
        value = np.asarray(value, dtype=self.dtype)
        self._check(value, name or "operation")
        return self._append(Var(self, value, parents, backward_fn, name=name))

    def params(self) -> List[Var]:
        return [v for v in self.nodes if v.is_param]

    def backward(self, loss: Var) -> None:
        """
        Populate adjoints of every node reachable from `loss`.

        The seed adjoint is 1; parameters that do not influence the loss end
        with a zero adjoint.

        Raises:
            BackwardError: loss is not a 1x1 Var of this tape
        """
        if loss.tape is not self:
            raise BackwardError("loss belongs to a different tape")
        if loss.value.size != 1:
            raise BackwardError(f"loss must be scalar, got shape {loss.value.shape}")

        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)

        for node in reversed(self.nodes[: loss.index + 1]):
            if node.grad is None or node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, parent_grads):
                if g is None:
                    continue
                if g.shape != parent.value.shape:
                    raise ShapeError(
                        f"adjoint shape {g.shape} != value shape {parent.value.shape} "
                        f"in backward of {node.name or 'operation'}"
                    )
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=self.dtype, copy=True)
                else:
                    parent.grad += g

        for node in self.nodes:
            if node.is_param and node.grad is None:
                node.grad = np.zeros_like(node.value)


def backward(tape: Tape, loss: Var) -> Dict[str, np.ndarray]:
    """Run the backward pass and return the adjoints of named parameters."""
    tape.backward(loss)
    return {v.name: v.grad for v in tape.params() if v.name is not None}


# ============================================================================
# Dense operations
# ============================================================================

def matmul(a: Var, b: Var) -> Var:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.value.shape} x {b.value.shape}")
    av, bv = a.value, b.value

    def _backward(g):
        return g @ bv.T, av.T @ g

    return a.tape.record(av @ bv, (a, b), _backward, name="matmul")


def spmm(s: sp.spmatrix, h: Var) -> Var:
    """Sparse constant times Var; S receives no gradient."""
    if s.shape[1] != h.value.shape[0]:
        raise ShapeError(f"spmm dims differ: {s.shape} x {h.value.shape}")
    s = sp.csr_matrix(s)
    st = s.T.tocsr()

    def _backward(g):
        return (np.asarray(st @ g),)

    return h.tape.record(np.asarray(s @ h.value), (h,), _backward, name="spmm")


def add(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shapes differ: {a.value.shape} vs {b.value.shape}")
    return a.tape.record(a.value + b.value, (a, b), lambda g: (g, g), name="add")


def sub(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub shapes differ: {a.value.shape} vs {b.value.shape}")
    return a.tape.record(a.value - b.value, (a, b), lambda g: (g, -g), name="sub")


def mul(a: Var, b: Var) -> Var:
    """Elementwise product."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul shapes differ: {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    return a.tape.record(av * bv, (a, b), lambda g: (g * bv, g * av), name="mul")


def add_bias(x: Var, b: Var) -> Var:
    """Broadcast a 1 x d bias over the rows of x."""
    if b.value.shape != (1, x.value.shape[1]):
        raise ShapeError(f"bias shape {b.value.shape} does not fit {x.value.shape}")

    def _backward(g):
        return g, g.sum(axis=0, keepdims=True)

    return x.tape.record(x.value + b.value, (x, b), _backward, name="add_bias")


def scale(x: Var, c: float) -> Var:
    """Multiply by a constant scalar."""
    c = float(c)
    return x.tape.record(x.value * c, (x,), lambda g: (g * c,), name="scale")


def mul_scalar_var(x: Var, s: Var) -> Var:
    """Multiply x by a 1x1 Var."""
    if s.value.shape != (1, 1):
        raise ShapeError(f"scalar operand must be 1x1, got {s.value.shape}")
    xv, sv = x.value, s.value

    def _backward(g):
        return g * sv[0, 0], np.array([[np.sum(g * xv)]])

    return x.tape.record(xv * sv[0, 0], (x, s), _backward, name="mul_scalar")


def sum_all(x: Var) -> Var:
    shape = x.value.shape
    return x.tape.record(
        np.array([[x.value.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),), name="sum"
    )


# ============================================================================
# Nonlinearities
# ============================================================================

def relu(x: Var) -> Var:
    mask = x.value >= 0
    return x.tape.record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), name="relu")


def leaky_relu(x: Var, slope: Optional[float] = None) -> Var:
    slope = settings.LEAKY_RELU_SLOPE if slope is None else slope
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    factor = np.where(x.value >= 0, 1.0, slope)
    return x.tape.record(x.value * factor, (x,), lambda g: (g * factor,), name="leaky_relu")


def activation(x: Var, kind: str, slope: Optional[float] = None) -> Var:
    """Elementwise activation; the derivative at 0 is the positive-branch value 1."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation '{kind}'")


def dropout(x: Var, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Var:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    return x.tape.record(x.value * keep, (x,), lambda g: (g * keep,), name="dropout")


def softmax_rows(x: Var) -> Var:
    """Row-wise softmax."""
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def _backward(g):
        return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)

    return x.tape.record(p, (x,), _backward, name="softmax")


def softmax_cross_entropy(logits: Var, labels: np.ndarray, mask: np.ndarray) -> Var:
    """
    Mean masked cross-entropy.

    Args:
        logits: N x C Var
        labels: class id per row of logits
        mask: row indices included in the mean

    Returns:
        1x1 loss Var
    """
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("cross-entropy mask is empty")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.value.shape
    if labels.shape[0] != n:
        raise ShapeError(f"labels length {labels.shape[0]} != logits rows {n}")
    y = labels[mask]
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}) on masked rows")

    z = logits.value[mask]
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    loss = -log_p[np.arange(mask.size), y].mean()

    def _backward(g):
        grad = np.zeros_like(logits.value)
        p = np.exp(log_p)
        p[np.arange(mask.size), y] -= 1.0
        np.add.at(grad, mask, p * (g[0, 0] / mask.size))
        return (grad,)

    return logits.tape.record(np.array([[loss]]), (logits,), _backward, name="cross_entropy")


# ============================================================================
# Structural operations
# ============================================================================

def vstack(parts: Sequence[Var]) -> Var:
    if not parts:
        raise ShapeError("vstack of nothing")
    widths = {p.value.shape[1] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"vstack column counts differ: {sorted(widths)}")
    bounds = np.cumsum([0] + [p.value.shape[0] for p in parts])

    def _backward(g):
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return parts[0].tape.record(
        np.vstack([p.value for p in parts]), parts, _backward, name="vstack"
    )


def concat_cols(parts: Sequence[Var]) -> Var:
    if not parts:
        raise ShapeError("concat of nothing")
    heights = {p.value.shape[0] for p in parts}
    if len(heights) != 1:
        raise ShapeError(f"concat row counts differ: {sorted(heights)}")
    bounds = np.cumsum([0] + [p.value.shape[1] for p in parts])

    def _backward(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return parts[0].tape.record(
        np.hstack([p.value for p in parts]), parts, _backward, name="concat"
    )


def gather_rows(x: Var, rows: np.ndarray) -> Var:
    rows = np.asarray(rows, dtype=np.int64)
    shape = x.value.shape

    def _backward(g):
        grad = np.zeros(shape, dtype=g.dtype)
        np.add.at(grad, rows, g)
        return (grad,)

    return x.tape.record(x.value[rows], (x,), _backward, name="gather_rows")


# ============================================================================
# Finite-difference oracle
# ============================================================================

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central differences of f w.r.t. every entry of x, perturbing x in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        f_plus = f()
        x[idx] = orig - h
        f_minus = f()
        x[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"non-finite evaluation at entry {idx}")
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def gradient_errors(
    build_loss: Callable[[Tape, Dict[str, Var]], Var],
    params: Dict[str, np.ndarray],
    h: Optional[float] = None,
    atol: float = 0.0,
) -> Dict[str, float]:
    """
    Compare tape adjoints with central differences, per parameter.

    Args:
        build_loss: builds a scalar loss on a fresh tape from the parameter Vars
        params: parameter values by name (float64)
        h: finite-difference step; defaults to settings.FD_STEP
        atol: entries whose absolute difference is at most atol count as exact

    Returns:
        Max relative error per parameter name
    """
    h = settings.FD_STEP if h is None else h
    values = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}

    def evaluate(with_grad: bool):
        tape = Tape(dtype=np.float64)
        handles = {k: tape.param(v, name=k) for k, v in values.items()}
        loss = build_loss(tape, handles)
        if with_grad:
            tape.backward(loss)
            return {k: handles[k].grad.reshape(values[k].shape) for k in values}
        return float(loss.value[0, 0])

    analytic = evaluate(True)
    errors = {}
    for name, arr in values.items():
        numeric = numeric_gradient(lambda: evaluate(False), arr, h)
        err = relative_error(analytic[name], numeric)
        if atol > 0:
            err = np.where(np.abs(analytic[name] - numeric) <= atol, 0.0, err)
        errors[name] = float(err.max()) if err.size else 0.0
    logger.debug("Gradient check errors: %s", errors)
    return errors


def finite_diff_check(
    build_loss: Callable[[Tape, Dict[str, Var]], Var],
    params: Dict[str, np.ndarray],
    h: Optional[float] = None,
    atol: float = 0.0,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    errors = gradient_errors(build_loss, params, h, atol)
    return max(errors.values()) if errors else 0.0
