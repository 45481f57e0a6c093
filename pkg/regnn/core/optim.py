"""
Gradient-based optimizers and the two-trajectory gradient-scaling check.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from regnn.schemas.reports import ScalingReport
from regnn.schemas.run_schemas import OptimizerKind


logger = logging.getLogger(__name__)

SGD_FAMILY = (OptimizerKind.SGD, OptimizerKind.MOMENTUM, OptimizerKind.NESTEROV)
ADAPTIVE = (OptimizerKind.ADAGRAD, OptimizerKind.ADAM)


class OptimizerError(ValueError):
    """Unknown optimizer kind, negative learning rate or shape mismatch."""


@dataclass
class OptimizerState:
    """Hyperparameters plus kind-specific buffers keyed by parameter name."""
    kind: OptimizerKind
    lr: float
    weight_decay: float = 0.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    velocity: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    accumulator: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    m: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    v: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num / den with 0 where den == 0 (the eps = 0 case at a zero gradient)."""
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


class Optimizer:
    """
    One optimizer over a dictionary of named parameter arrays.

    Weight decay is L2: decay * theta is added to the gradient before the
    kind-specific update. The last applied update of every parameter is kept
    in `last_update`.
    """

    def __init__(
        self,
        kind: str,
        lr: float,
        weight_decay: float = 0.0,
        momentum: float = 0.9,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        try:
            kind = OptimizerKind(kind)
        except ValueError:
            raise OptimizerError(f"Unknown optimizer kind '{kind}'") from None
        if lr < 0:
            raise OptimizerError(f"learning rate must be non-negative, got {lr}")
        if weight_decay < 0:
            raise OptimizerError(f"weight decay must be non-negative, got {weight_decay}")
        for name, beta in (("beta1", beta1), ("beta2", beta2), ("momentum", momentum)):
            if not 0.0 <= beta < 1.0:
                raise OptimizerError(f"{name} must lie in [0, 1), got {beta}")
        self.state = OptimizerState(
            kind=kind, lr=lr, weight_decay=weight_decay, momentum=momentum,
            beta1=beta1, beta2=beta2, eps=eps,
        )
        self.last_update: Dict[str, np.ndarray] = {}

    @property
    def kind(self) -> OptimizerKind:
        return self.state.kind

    def _buffer(self, store: Dict[str, np.ndarray], name: str, like: np.ndarray) -> np.ndarray:
        if name not in store:
            store[name] = np.zeros_like(like, dtype=np.float64)
        return store[name]

    def step(
        self,
        params: Dict[str, np.ndarray],
        grads: Dict[str, np.ndarray],
        no_decay: Sequence[str] = (),
    ) -> Dict[str, np.ndarray]:
        """
        Apply one update in place.

        Args:
            params: Parameter arrays, modified in place
            grads: Gradients for a subset of params (missing names are skipped)
            no_decay: Names exempt from weight decay

        Returns:
            The applied update per parameter name
        """
        st = self.state
        st.t += 1
        updates = {}
        for name, grad in grads.items():
            if name not in params:
                raise OptimizerError(f"gradient for unknown parameter '{name}'")
            theta = params[name]
            if grad.shape != theta.shape:
                raise OptimizerError(
                    f"gradient shape {grad.shape} != parameter shape {theta.shape} for '{name}'"
                )
            g = np.asarray(grad, dtype=np.float64)
            if st.weight_decay and name not in no_decay:
                g = g + st.weight_decay * theta

            if st.kind == OptimizerKind.SGD:
                update = -st.lr * g
            elif st.kind == OptimizerKind.MOMENTUM:
                vel = self._buffer(st.velocity, name, theta)
                vel *= st.momentum
                vel += g
                update = -st.lr * vel
            elif st.kind == OptimizerKind.NESTEROV:
                vel = self._buffer(st.velocity, name, theta)
                vel *= st.momentum
                vel += g
                update = -st.lr * (g + st.momentum * vel)
            elif st.kind == OptimizerKind.ADAGRAD:
                acc = self._buffer(st.accumulator, name, theta)
                acc += g * g
                update = -st.lr * _safe_ratio(g, np.sqrt(acc) + st.eps)
            else:
                m = self._buffer(st.m, name, theta)
                v = self._buffer(st.v, name, theta)
                m *= st.beta1
                m += (1.0 - st.beta1) * g
                v *= st.beta2
                v += (1.0 - st.beta2) * g * g
                m_hat = m / (1.0 - st.beta1 ** st.t)
                v_hat = v / (1.0 - st.beta2 ** st.t)
                update = -st.lr * _safe_ratio(m_hat, np.sqrt(v_hat) + st.eps)

            params[name] = (theta + update).astype(theta.dtype, copy=False)
            updates[name] = update
        self.last_update = updates
        return updates


def optimizer_step(
    optimizer: Optimizer,
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
) -> Dict[str, np.ndarray]:
    """Functional alias of Optimizer.step; returns the updated params dict."""
    optimizer.step(params, grads)
    return params


# ============================================================================
# Gradient-scaling identity
# ============================================================================

def expected_ratios(kind: str, lam: float) -> tuple:
    """(d e' / d e, d alpha' / d alpha) for a trajectory fed lambda * g."""
    kind = OptimizerKind(kind)
    if kind in SGD_FAMILY:
        return lam, lam * lam
    return 1.0, lam


def random_trace(rng: np.random.Generator, steps: int, dim: int = 8) -> List[np.ndarray]:
    return [rng.normal(size=dim) for _ in range(steps)]


def _buffer_pairs(scaled: Optimizer, base: Optimizer, lam: float):
    """(scaled-run buffer, unscaled-run buffer, expected factor) for the stateful kinds."""
    ss, sb = scaled.state, base.state
    name = "e"
    if ss.kind in (OptimizerKind.MOMENTUM, OptimizerKind.NESTEROV):
        yield ss.velocity[name], sb.velocity[name], lam
    elif ss.kind == OptimizerKind.ADAGRAD:
        yield ss.accumulator[name], sb.accumulator[name], lam * lam
    elif ss.kind == OptimizerKind.ADAM:
        yield ss.m[name], sb.m[name], lam
        yield ss.v[name], sb.v[name], lam * lam


def _max_rel_dev(observed: np.ndarray, expected: np.ndarray) -> float:
    mask = expected != 0
    if not np.any(mask):
        return float(np.max(np.abs(observed))) if observed.size else 0.0
    dev = np.abs(observed[mask] - expected[mask]) / np.abs(expected[mask])
    return float(dev.max())


def verify_scaling_identity(
    kind: str,
    lam: float,
    gradient_trace: Sequence[np.ndarray],
    steps: Optional[int] = None,
    lr: float = 0.01,
    eps: float = 0.0,
    tolerance: float = 1e-9,
) -> ScalingReport:
    """
    Feed g_t to one optimizer and lambda * g_t to a twin, and compare updates.

    Weight decay is off. With eps = 0 the identities are exact and the report
    passes iff the maximum relative deviation is below `tolerance`; with
    eps > 0 the deviation is recorded and not asserted.

    Raises:
        OptimizerError: unknown kind, steps < 1 or a trace shorter than steps
    """
    try:
        kind = OptimizerKind(kind)
    except ValueError:
        raise OptimizerError(f"Unknown optimizer kind '{kind}'") from None
    steps = len(gradient_trace) if steps is None else steps
    if steps < 1 or steps > len(gradient_trace):
        raise OptimizerError(f"steps must lie in [1, {len(gradient_trace)}], got {steps}")

    exp_e, exp_alpha = expected_ratios(kind, lam)
    base = Optimizer(kind, lr=lr, eps=eps)
    scaled = Optimizer(kind, lr=lr, eps=eps)
    theta = {"e": np.zeros_like(np.asarray(gradient_trace[0], dtype=np.float64))}
    theta_scaled = {"e": theta["e"].copy()}

    e_ratios, alpha_ratios = [], []
    max_dev = 0.0
    max_buffer_dev = 0.0
    for t in range(steps):
        g = np.asarray(gradient_trace[t], dtype=np.float64)
        de = base.step(theta, {"e": g})["e"]
        de_scaled = scaled.step(theta_scaled, {"e": lam * g})["e"]
        d_alpha = de
        d_alpha_scaled = lam * de_scaled

        nz = de != 0
        if np.any(nz):
            e_ratios.append(float(np.mean(de_scaled[nz] / de[nz])))
            alpha_ratios.append(float(np.mean(d_alpha_scaled[nz] / d_alpha[nz])))
        else:
            e_ratios.append(exp_e)
            alpha_ratios.append(exp_alpha)
        max_dev = max(
            max_dev,
            _max_rel_dev(de_scaled, exp_e * de),
            _max_rel_dev(d_alpha_scaled, exp_alpha * d_alpha),
        )
        for observed, reference, factor in _buffer_pairs(scaled, base, lam):
            max_buffer_dev = max(max_buffer_dev, _max_rel_dev(observed, factor * reference))

    asserted = eps == 0.0
    passed = (max(max_dev, max_buffer_dev) < tolerance) if asserted else True
    return ScalingReport(
        kind=kind.value,
        lam=lam,
        eps=eps,
        steps=steps,
        observed_e_ratio=e_ratios,
        observed_alpha_ratio=alpha_ratios,
        expected_e_ratio=exp_e,
        expected_alpha_ratio=exp_alpha,
        max_deviation=max_dev,
        max_buffer_deviation=max_buffer_dev,
        tolerance=tolerance,
        asserted=asserted,
        passed=passed,
    )


def verify_scaling_batch(
    kind: str,
    lam: float,
    traces: int,
    steps: int,
    seed: int = 0,
    eps: float = 0.0,
    dim: int = 8,
) -> ScalingReport:
    """Run verify_scaling_identity over random traces and merge into one report."""
    rng = np.random.default_rng(seed)
    merged: Optional[ScalingReport] = None
    for _ in range(traces):
        report = verify_scaling_identity(kind, lam, random_trace(rng, steps, dim), eps=eps)
        if merged is None:
            merged = report
            continue
        merged = merged.model_copy(update={
            "max_deviation": max(merged.max_deviation, report.max_deviation),
            "max_buffer_deviation": max(merged.max_buffer_deviation, report.max_buffer_deviation),
            "passed": merged.passed and report.passed,
        })
    merged = merged.model_copy(update={"traces": traces})
    logger.info(
        "Scaling identity %s lambda=%g over %d traces: max deviation %.3e (%s)",
        kind, lam, traces, max(merged.max_deviation, merged.max_buffer_deviation),
        "pass" if merged.passed else "FAIL",
    )
    return merged
