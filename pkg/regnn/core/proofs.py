"""
Numeric witnesses for the expressivity results.

Each check builds the layers prescribed by a constructive argument, runs them
on sampled inputs inside the stated bounds, and compares outputs to a
floating-point tolerance. Results are EquivalenceReports.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from regnn.core import autodiff as ad
from regnn.core.autodiff import Tape, gradient_errors
from regnn.core.hgraph import HeteroGraph, graph_from_document, homogenized_adjacency, random_hetero_graph
from regnn.core.layers import (
    dense_layer,
    gtn_composite_adjacency,
    init_params,
    gtn_layer,
    model_forward,
)
from regnn.core.relemb import (
    AdjacencyPattern,
    RelationEmbeddings,
    aggregate_with_gradients,
    assemble_adjacency,
    build_pattern,
    embeddings_for_graph,
    graph_pattern,
    weighted_values,
)
from regnn.schemas.graph_schemas import GraphFile
from regnn.schemas.reports import EquivalenceReport
from regnn.schemas.run_schemas import ModelConfig


logger = logging.getLogger(__name__)


class ProofPreconditionError(ValueError):
    """Inputs violate the bounds or weight conditions a construction assumes."""


@dataclass(frozen=True)
class BoundSpec:
    """
    Bounds of an MLP-form layer.

    k_in bounds the squared 2-norm of inputs, k_w the squared 2-norm of weight
    columns and k_b the max-abs bias entry.
    """
    k_in: float
    k_w: float
    k_b: float

    @property
    def k(self) -> float:
        return max(self.k_in, self.k_w, self.k_b)

    @classmethod
    def of_layer(cls, k_in: float, w: np.ndarray, b: np.ndarray) -> "BoundSpec":
        return cls(k_in=float(k_in), k_w=column_bound(w), k_b=bias_bound(b))


def column_bound(w: np.ndarray) -> float:
    return float(np.max(np.sum(np.asarray(w) ** 2, axis=0)))


def bias_bound(b: np.ndarray) -> float:
    b = np.asarray(b)
    return float(np.max(np.abs(b))) if b.size else 0.0


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _check_inputs(h: np.ndarray, k_in: float) -> None:
    norms = np.sum(np.atleast_2d(h) ** 2, axis=1)
    worst = int(np.argmax(norms))
    if norms[worst] >= k_in:
        raise ProofPreconditionError(
            f"input row {worst} has squared norm {norms[worst]:.6g} >= bound {k_in:.6g}"
        )


def positive_offset(bound: BoundSpec) -> float:
    """Bias entry (k + k_w) / 2 that keeps h W + b' strictly positive for bounded h."""
    return 0.5 * (bound.k + bound.k_w)


# ============================================================================
# MLP layers
# ============================================================================

def lemma3_equivalence(
    w: np.ndarray,
    b: np.ndarray,
    samples: np.ndarray,
    k_in: float,
    tolerance: float = 1e-10,
) -> EquivalenceReport:
    """
    Split f(h) = relu(h W + b) into f2(f1(h)) with f1 = (W, b') and f2 = (I, b - b').

    b' is (k + k_w) / 2 in every coordinate, so h W + b' > 0 on the bounded set
    and the inner ReLU is the identity.

    Raises:
        ProofPreconditionError: a sample violates ||h||^2 < k_in
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).reshape(1, -1)
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    _check_inputs(samples, k_in)
    bound = BoundSpec.of_layer(k_in, w, b)
    b1 = np.full_like(b, positive_offset(bound))
    w2 = np.eye(w.shape[1])
    b2 = b - b1

    target = relu(samples @ w + b)
    inner = samples @ w + b1
    composed = relu(relu(inner) @ w2 + b2)
    deviation = float(np.max(np.abs(composed - target))) if target.size else 0.0

    f2_bound = max(column_bound(w2), bias_bound(b2))
    checks = {
        "inner_preactivation_positive": bool(np.all(inner > 0)),
        "f1_bias_bound": bool(bias_bound(b1) <= positive_offset(bound) + 1e-12),
        "f2_bound": bool(f2_bound <= max(1.0, 2.0 * bound.k) + 1e-12),
    }
    return EquivalenceReport(
        construction="lemma3",
        max_deviation=deviation,
        tolerance=tolerance,
        bound_checks=checks,
        details={"k": bound.k, "k_w": bound.k_w, "k_b": bound.k_b, "f2_bound": f2_bound},
        passed=deviation < tolerance and all(checks.values()),
    )


def lemma3_random(
    rng: np.random.Generator,
    trials: int = 100,
    samples: int = 100,
    dim_in: int = 4,
    dim_out: int = 3,
    k_in: float = 1.0,
) -> EquivalenceReport:
    """lemma3_equivalence over random layers with k = 1 and random bounded samples."""
    worst: Optional[EquivalenceReport] = None
    all_passed = True
    for _ in range(trials):
        w = rng.normal(size=(dim_in, dim_out))
        w /= np.sqrt(np.max(np.sum(w ** 2, axis=0)))
        b = rng.uniform(-1.0, 1.0, size=(1, dim_out))
        h = sample_in_ball(rng, samples, dim_in, k_in)
        report = lemma3_equivalence(w, b, h, k_in)
        all_passed &= report.passed
        if worst is None or report.max_deviation > worst.max_deviation:
            worst = report
    return worst.model_copy(update={
        "construction": "lemma3_random",
        "details": {**worst.details, "trials": trials, "samples": samples},
        "passed": all_passed,
    })


def sample_in_ball(rng: np.random.Generator, count: int, dim: int, k: float) -> np.ndarray:
    """Points with squared norm strictly below k."""
    x = rng.normal(size=(count, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    radius = np.sqrt(k) * rng.uniform(0.0, 0.999, size=(count, 1))
    return x * radius


def lemma4_bound_check(h_set: np.ndarray, p: np.ndarray, k: float) -> EquivalenceReport:
    """
    A convex combination of points bounded by k is bounded by k.

    Raises:
        ProofPreconditionError: p is not a probability vector or a point is out of bound
    """
    h_set = np.atleast_2d(np.asarray(h_set, dtype=np.float64))
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size != h_set.shape[0] or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ProofPreconditionError("weights must be a probability vector over the points")
    _check_inputs(h_set, k)
    o = p @ h_set
    norm = float(o @ o)
    return EquivalenceReport(
        construction="lemma4",
        max_deviation=max(0.0, norm - k),
        tolerance=0.0,
        bound_checks={"combination_bounded": norm < k},
        details={"squared_norm": norm, "k": k},
        passed=norm < k,
    )


def lemma4_monte_carlo(
    rng: np.random.Generator,
    draws: int = 10_000,
    points: int = 5,
    dim: int = 3,
    k: float = 1.0,
) -> EquivalenceReport:
    violations = 0
    worst = 0.0
    for _ in range(draws):
        h = sample_in_ball(rng, points, dim, k)
        p = rng.dirichlet(np.ones(points))
        p /= p.sum()
        report = lemma4_bound_check(h, p, k)
        worst = max(worst, report.details["squared_norm"])
        violations += 0 if report.passed else 1
    return EquivalenceReport(
        construction="lemma4_monte_carlo",
        max_deviation=max(0.0, worst - k),
        tolerance=0.0,
        bound_checks={"no_violations": violations == 0},
        details={"draws": draws, "violations": violations, "max_squared_norm": worst, "k": k},
        passed=violations == 0,
    )


# ============================================================================
# GTN and its RE-GCN construction
# ============================================================================

@dataclass
class GTNLayerSpec:
    """
    One non-ensembled GTN layer.

    soft_weights is length x (R + 1); the last column weights the identity
    candidate. The layer computes relu(D^-1 M_1 ... M_l H W + B).
    """
    soft_weights: np.ndarray
    w: np.ndarray
    b: np.ndarray

    @property
    def length(self) -> int:
        return self.soft_weights.shape[0]


@dataclass
class ProofGraph:
    """Relation adjacencies and node types the constructions run on."""
    adjacencies: List[sp.csr_matrix]
    type_of: np.ndarray
    pattern: AdjacencyPattern = field(init=False, repr=False)

    def __post_init__(self):
        self.pattern = build_pattern(self.adjacencies, self.type_of, "embedded")

    @property
    def num_nodes(self) -> int:
        return int(self.type_of.size)

    @property
    def num_types(self) -> int:
        return int(self.type_of.max()) + 1


def regular_proof_graph(
    rng: np.random.Generator,
    n: int = 8,
    num_relations: int = 3,
    num_types: int = 2,
    max_in_degree: int = 3,
) -> ProofGraph:
    """Random relations in which every node has the same in-degree per relation."""
    adjacencies = []
    for _ in range(num_relations):
        k = int(rng.integers(1, min(max_in_degree, n) + 1))
        rows, cols = [], []
        for u in range(n):
            rows.extend([u] * k)
            cols.extend(rng.choice(n, size=k, replace=False).tolist())
        a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        a.sort_indices()
        adjacencies.append(a)
    type_of = np.sort(rng.integers(num_types, size=n))
    type_of[0] = 0
    return ProofGraph(adjacencies=adjacencies, type_of=type_of)


def single_node_graph() -> ProofGraph:
    a = sp.csr_matrix(np.ones((1, 1)))
    return ProofGraph(adjacencies=[a], type_of=np.zeros(1, dtype=np.int64))


def random_gtn_layer(
    rng: np.random.Generator,
    num_relations: int,
    length: int,
    dim_in: int,
    dim_out: int,
) -> GTNLayerSpec:
    scores = rng.normal(size=(length, num_relations + 1))
    soft = np.exp(scores - scores.max(axis=1, keepdims=True))
    soft /= soft.sum(axis=1, keepdims=True)
    w = rng.normal(size=(dim_in, dim_out)) / np.sqrt(dim_in)
    b = rng.uniform(-0.5, 0.5, size=(1, dim_out))
    return GTNLayerSpec(soft_weights=soft, w=w, b=b)


def _check_soft_weights(spec: GTNLayerSpec) -> None:
    if np.any(spec.soft_weights < 0):
        raise ProofPreconditionError("GTN mixture weights must be non-negative")
    if not np.allclose(spec.soft_weights.sum(axis=1), 1.0, atol=1e-12):
        raise ProofPreconditionError("GTN mixture weights must sum to 1 per step")


def gtn_forward(graph: ProofGraph, layers: Sequence[GTNLayerSpec], x: np.ndarray) -> np.ndarray:
    """Reference GTN output: composite adjacency per layer, no extra self-loop."""
    tape = Tape(dtype=np.float64, checked=True)
    h = tape.constant(x)
    for spec in layers:
        a_p = gtn_composite_adjacency(graph.adjacencies, spec.soft_weights, identity_candidate=True)
        h = gtn_layer(a_p, h, tape.constant(spec.w), tape.constant(spec.b), add_identity=False)
    return h.value


@dataclass
class REGCNLayerSpec:
    """Weights of one constructed RE-GCN layer; alpha per relation, beta per node type."""
    alpha: np.ndarray
    beta: np.ndarray
    w: np.ndarray
    b: np.ndarray


def regcn_stack_forward(graph: ProofGraph, layers: Sequence[REGCNLayerSpec], x: np.ndarray) -> np.ndarray:
    """Row-normalized RE-GCN layers with ReLU after every layer."""
    tape = Tape(dtype=np.float64, checked=True)
    h = tape.constant(x)
    for spec in layers:
        agg = aggregate_with_gradients(
            graph.pattern, h, tape.constant(spec.alpha), tape.constant(spec.beta), norm="row",
        )
        h = dense_layer(agg, tape.constant(spec.w), tape.constant(spec.b), activate=True)
    return h.value


def _step_weights(graph: ProofGraph, spec: GTNLayerSpec, step: int) -> Tuple[np.ndarray, np.ndarray]:
    """alpha = mixture weights of a step; beta = its identity weight for every type."""
    row = spec.soft_weights[step]
    return row[:-1].copy(), np.full(graph.num_types, row[-1])


def construct_regcn(
    graph: ProofGraph,
    layers: Sequence[GTNLayerSpec],
    input_bounds: Sequence[float],
) -> Tuple[List[REGCNLayerSpec], Dict[str, bool], List[np.ndarray]]:
    """
    RE-GCN layers reproducing a stack of GTN layers.

    For a GTN layer of length l the RE-GCN uses l layers, the first one
    applying the last mixture. The first carries (W_P, b') with b' from the
    input bound, the middle ones (I, 0) and the last (I, B_P - b'). A length-1
    GTN layer maps to a single layer (W_P, B_P).

    Returns:
        Layer specs, bound checks, and the b' offset used per GTN layer
    """
    built: List[REGCNLayerSpec] = []
    checks: Dict[str, bool] = {}
    offsets = []
    for k, (spec, xi) in enumerate(zip(layers, input_bounds)):
        _check_soft_weights(spec)
        length = spec.length
        if length == 1:
            alpha, beta = _step_weights(graph, spec, 0)
            built.append(REGCNLayerSpec(alpha, beta, spec.w, spec.b))
            offsets.append(np.zeros_like(spec.b))
            continue
        bound = BoundSpec.of_layer(xi, spec.w, spec.b)
        b1 = np.full_like(spec.b, positive_offset(bound))
        offsets.append(b1)
        eye = np.eye(spec.w.shape[1])
        for i in range(length):
            alpha, beta = _step_weights(graph, spec, length - 1 - i)
            if i == 0:
                built.append(REGCNLayerSpec(alpha, beta, spec.w, b1))
            elif i < length - 1:
                built.append(REGCNLayerSpec(alpha, beta, eye, np.zeros_like(spec.b)))
            else:
                last_bias = spec.b - b1
                built.append(REGCNLayerSpec(alpha, beta, eye, last_bias))
                f2_bound = max(column_bound(eye), bias_bound(last_bias))
                checks[f"layer{k}_last_bound"] = bool(f2_bound <= max(1.0, 2.0 * bound.k) + 1e-12)
    return built, checks, offsets


def uniform_row_sums(graph: ProofGraph, spec: GTNLayerSpec, tol: float = 1e-12) -> bool:
    """Every mixture after the first has equal row sums across nodes."""
    for step in range(1, spec.length):
        alpha, beta = _step_weights(graph, spec, step)
        degree = np.bincount(
            graph.pattern.rows,
            weights=weighted_values(graph.pattern, alpha, beta),
            minlength=graph.num_nodes,
        )
        if np.ptp(degree) > tol:
            return False
    return True


def degree_factorization_deviation(graph: ProofGraph, spec: GTNLayerSpec) -> float:
    """max | rowsum(A_1 A_0) - rowsum(A_1) * rowsum(A_0) | over the RE-GCN pair of a 2-step layer."""
    mats = []
    for i in range(2):
        alpha, beta = _step_weights(graph, spec, spec.length - 1 - i)
        mats.append(graph.pattern.csr(weighted_values(graph.pattern, alpha, beta)))
    a0, a1 = mats
    d0 = np.asarray(a0.sum(axis=1)).ravel()
    d1 = np.asarray(a1.sum(axis=1)).ravel()
    d2 = np.asarray((a1 @ a0).sum(axis=1)).ravel()
    return float(np.max(np.abs(d2 - d1 * d0)))


def _stack_equivalence(
    name: str,
    graph: ProofGraph,
    layers: Sequence[GTNLayerSpec],
    x: np.ndarray,
    xi: float,
    tolerance: float,
) -> EquivalenceReport:
    _check_inputs(x, xi)
    # bounds of the inputs of every GTN layer after the first are measured on the samples
    bounds = [xi]
    h = x
    for spec in layers[:-1]:
        h = gtn_forward(graph, [spec], h)
        bounds.append(float(np.max(np.sum(h ** 2, axis=1))) * (1.0 + 1e-6) + 1e-12)

    built, checks, _ = construct_regcn(graph, layers, bounds)
    z_p = gtn_forward(graph, layers, x)
    z_h = regcn_stack_forward(graph, built, x)
    deviation = float(np.max(np.abs(z_h - z_p)))

    checks["input_bound"] = True
    checks["uniform_row_sums"] = all(uniform_row_sums(graph, spec) for spec in layers)
    factorization = max(
        (degree_factorization_deviation(graph, spec) for spec in layers if spec.length >= 2),
        default=0.0,
    )
    checks["degree_factorization"] = factorization < 1e-12
    return EquivalenceReport(
        construction=name,
        max_deviation=deviation,
        tolerance=tolerance,
        bound_checks=checks,
        details={
            "gtn_layers": len(layers),
            "length": layers[0].length if layers else 0,
            "regcn_layers": len(built),
            "degree_factorization_deviation": factorization,
            "nodes": graph.num_nodes,
        },
        passed=deviation < tolerance and all(checks.values()),
    )


def corollary5_equivalence(
    graph: ProofGraph,
    gtn: GTNLayerSpec,
    x: np.ndarray,
    xi: float,
    tolerance: float = 1e-8,
) -> EquivalenceReport:
    """
    A length-2 GTN layer equals two constructed RE-GCN layers.

    Raises:
        ProofPreconditionError: a row of x violates ||x||^2 < xi or a mixture weight is negative
    """
    if gtn.length != 2:
        raise ProofPreconditionError(f"expected a length-2 GTN layer, got length {gtn.length}")
    return _stack_equivalence("corollary5", graph, [gtn], x, xi, tolerance)


def theorem6_stack_equivalence(
    graph: ProofGraph,
    layers: Sequence[GTNLayerSpec],
    x: np.ndarray,
    xi: float,
    tolerance: float = 1e-7,
) -> EquivalenceReport:
    """A K-layer, length-L non-ensembled GTN equals a constructed K*L-layer RE-GCN."""
    lengths = {spec.length for spec in layers}
    if len(lengths) != 1:
        raise ProofPreconditionError("all GTN layers must share one meta-path length")
    return _stack_equivalence("theorem6", graph, layers, x, xi, tolerance)


def corollary5_random(
    rng: np.random.Generator,
    trials: int = 20,
    n: int = 8,
    num_relations: int = 3,
    dim: int = 4,
    xi: float = 1.0,
) -> EquivalenceReport:
    """corollary5_equivalence on random graphs and random GTN layers."""
    reports = []
    for _ in range(trials):
        graph = regular_proof_graph(rng, n, num_relations)
        gtn = random_gtn_layer(rng, num_relations, 2, dim, dim)
        x = sample_in_ball(rng, n, dim, xi)
        reports.append(corollary5_equivalence(graph, gtn, x, xi))
    return _merge("corollary5_random", reports, trials)


def theorem6_random(
    rng: np.random.Generator,
    graphs: int = 5,
    n: int = 6,
    num_relations: int = 2,
    num_layers: int = 2,
    length: int = 2,
    dim: int = 4,
    xi: float = 1.0,
) -> EquivalenceReport:
    reports = []
    for _ in range(graphs):
        graph = regular_proof_graph(rng, n, num_relations)
        layers = [random_gtn_layer(rng, num_relations, length, dim, dim) for _ in range(num_layers)]
        x = sample_in_ball(rng, n, dim, xi)
        reports.append(theorem6_stack_equivalence(graph, layers, x, xi))
    return _merge("theorem6_random", reports, graphs)


def _merge(name: str, reports: Sequence[EquivalenceReport], trials: int) -> EquivalenceReport:
    worst = max(reports, key=lambda r: r.max_deviation)
    checks: Dict[str, bool] = {}
    for r in reports:
        for key, ok in r.bound_checks.items():
            if not key.startswith("layer"):
                checks[key] = checks.get(key, True) and ok
    checks["all_layer_bounds"] = all(
        ok for r in reports for key, ok in r.bound_checks.items() if key.startswith("layer")
    )
    return EquivalenceReport(
        construction=name,
        max_deviation=worst.max_deviation,
        tolerance=worst.tolerance,
        bound_checks=checks,
        details={**worst.details, "trials": trials},
        passed=all(r.passed for r in reports),
    )


# ============================================================================
# Separation witnesses
# ============================================================================

def _doc_graph(node_types, relations) -> HeteroGraph:
    return graph_from_document(GraphFile.model_validate({
        "format": "regnn-graph/1",
        "node_types": node_types,
        "relations": relations,
    }))


def mlp_separation_witness(
    inputs: Sequence[float] = (-1.0, 0.5, 2.0),
    gap_factor: float = 10.0,
) -> EquivalenceReport:
    """
    A single-node self-loop graph turns RE-GCN layers into MLP layers; the
    target relu(x) - relu(-x) + relu(x - 1) has a two-layer construction but no
    affine fit through the sampled inputs.
    """
    xs = np.asarray(inputs, dtype=np.float64)
    target = relu(xs) - relu(-xs) + relu(xs - 1.0)

    design = np.stack([xs, np.ones_like(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    linear_residual = float(np.sum((design @ coef - target) ** 2))

    # one isolated node with a self-loop per input
    n = xs.size
    g = _doc_graph(
        [{"name": "N", "count": n, "features": [[x] for x in xs.tolist()]}],
        [{"name": "self", "src": "N", "dst": "N", "edges": [[i, i] for i in range(n)]}],
    )
    pattern = graph_pattern(g, "embedded")
    tape = Tape(dtype=np.float64)
    one = tape.constant([1.0])
    h = tape.constant(g.features[0])
    h = dense_layer(
        aggregate_with_gradients(pattern, h, one, one, norm="row"),
        tape.constant([[1.0, -1.0, 1.0]]), tape.constant([[0.0, 0.0, -1.0]]), activate=True,
    )
    h = dense_layer(
        aggregate_with_gradients(pattern, h, one, one, norm="row"),
        tape.constant([[1.0], [-1.0], [1.0]]), tape.constant([[0.0]]), activate=False,
    )
    constructed_residual = float(np.sum((h.value.ravel() - target) ** 2))
    passed = constructed_residual < 1e-6 and linear_residual > gap_factor * constructed_residual
    return EquivalenceReport(
        construction="theorem7_mlp_separation",
        max_deviation=constructed_residual,
        tolerance=1e-6,
        bound_checks={"linear_fit_fails": linear_residual > 0.0},
        details={
            "inputs": xs.tolist(),
            "linear_residual": linear_residual,
            "constructed_residual": constructed_residual,
            "gap_factor": gap_factor,
        },
        passed=passed,
    )


def determinant_witness_pair() -> Tuple[np.ndarray, np.ndarray]:
    """
    Two layer adjacencies of one graph: I (relation off, self-loops on) and a
    matrix with a zero row (the isolated type's self-loop switched off).
    """
    g = _doc_graph(
        [{"name": "A", "count": 1}, {"name": "B", "count": 1}],
        [{"name": "BA", "src": "B", "dst": "A", "edges": [[0, 0]]}],
    )
    emb = RelationEmbeddings(
        lam=1.0,
        e=[np.array([0.0]), np.array([1.0])],
        s=[np.array([1.0, 1.0]), np.array([1.0, 0.0])],
        relation_names=("BA",),
        type_names=("A", "B"),
    )
    a0 = assemble_adjacency(g, emb, 0).raw.toarray()
    a1 = assemble_adjacency(g, emb, 1).raw.toarray()
    return a0, a1


def determinant_witness(
    a0: np.ndarray,
    a1: np.ndarray,
    k1: int = 1,
    k2: int = 2,
) -> EquivalenceReport:
    """
    No single A_P satisfies A_P^k1 = a0 and A_P^k2 = a1 when exactly one of
    them is singular, since det(A^n) = det(A)^n.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    if k1 == k2 and a0.shape == a1.shape and np.array_equal(a0, a1):
        return EquivalenceReport(
            construction="theorem7_determinant",
            max_deviation=0.0,
            tolerance=0.0,
            details={"reason": "identical matrices at equal powers"},
            skipped=True,
            passed=True,
        )
    det0 = float(np.linalg.det(a0))
    det1 = float(np.linalg.det(a1))
    zero_row = bool(np.any(np.all(a1 == 0, axis=1)))
    separated = (det0 != 0.0) != (det1 != 0.0)
    return EquivalenceReport(
        construction="theorem7_determinant",
        max_deviation=0.0,
        tolerance=0.0,
        bound_checks={"nonsingular_first": det0 != 0.0, "singular_by_zero_row": zero_row},
        details={"det0": det0, "det1": det1, "k1": k1, "k2": k2},
        passed=separated,
    )


def theorem7_witnesses() -> Tuple[EquivalenceReport, EquivalenceReport]:
    a0, a1 = determinant_witness_pair()
    return mlp_separation_witness(), determinant_witness(a0, a1)


# ============================================================================
# Properties
# ============================================================================

def row_stochastic_absorption(rng: np.random.Generator, n: int = 6, d: int = 3, trials: int = 20) -> EquivalenceReport:
    """A row-stochastic matrix leaves a row-constant matrix unchanged."""
    worst = 0.0
    for _ in range(trials):
        a = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
        a[np.arange(n), np.arange(n)] += rng.random(n) + 0.1
        a /= a.sum(axis=1, keepdims=True)
        b = np.tile(rng.normal(size=(1, d)), (n, 1))
        worst = max(worst, float(np.max(np.abs(a @ b - b))))
    return EquivalenceReport(
        construction="row_stochastic_absorption",
        max_deviation=worst,
        tolerance=1e-12,
        passed=worst < 1e-12,
    )


def degree_factorization_check(rng: np.random.Generator, graphs: int = 10) -> EquivalenceReport:
    worst = 0.0
    for _ in range(graphs):
        graph = regular_proof_graph(rng)
        spec = random_gtn_layer(rng, len(graph.adjacencies), 2, 2, 2)
        worst = max(worst, degree_factorization_deviation(graph, spec))
    return EquivalenceReport(
        construction="degree_factorization",
        max_deviation=worst,
        tolerance=1e-12,
        passed=worst < 1e-12,
    )


def degeneration_check(
    g: HeteroGraph,
    rng: np.random.Generator,
    layers: int = 2,
    hidden: int = 8,
    num_classes: int = 3,
) -> EquivalenceReport:
    """RE-GCN with alpha = beta = 1 frozen equals GCN on the homogenized graph."""
    config = ModelConfig(
        backbone="regcn", layers=layers, hidden=hidden, dropout=0.0,
        freeze_relations=True, freeze_selfloops=True,
    )
    params = init_params(config, g, num_classes, rng)
    emb = embeddings_for_graph(g, config.lam, layers)
    regcn = model_forward(config, g, emb, params).logits.value

    homog = homogenized_adjacency(g, self_loops=True)
    degree = np.maximum(np.asarray(homog.sum(axis=1)).ravel(), 1e-12)
    a_tilde = sp.diags(1.0 / degree) @ homog
    h = np.vstack([
        x @ params[f"proj.W.{name}"] + params[f"proj.b.{name}"]
        for x, name in zip(g.features, g.node_types)
    ])
    for l in range(layers):
        h = a_tilde @ h @ params[f"layer{l}.W"] + params[f"layer{l}.b"]
        if l < layers - 1:
            h = relu(h)
    gcn = h[g.target_global_ids()]
    deviation = float(np.max(np.abs(regcn - gcn)))
    return EquivalenceReport(
        construction="degeneration",
        max_deviation=deviation,
        tolerance=1e-12,
        passed=deviation < 1e-12,
    )


def gradient_check(
    rng: np.random.Generator,
    graphs: int = 10,
    lam: float = 100.0,
    tolerance: float = 1e-4,
    atol: float = 1e-7,
) -> EquivalenceReport:
    """
    Every parameter gradient of a 2-layer RE-GCN, relation and self-loop
    embeddings included, against central differences on random small graphs.
    """
    worst = 0.0
    worst_param = None
    for _ in range(graphs):
        counts = tuple(int(c) for c in rng.integers(2, 6, size=int(rng.integers(2, 4))))
        g = random_hetero_graph(rng, counts=counts, num_relations=int(rng.integers(1, 5)),
                                num_classes=3)
        pattern = graph_pattern(g, "embedded")
        config = ModelConfig(backbone="regcn", layers=2, hidden=4, dropout=0.0, **{"lambda": lam})
        params = init_params(config, g, 3, rng)
        emb = embeddings_for_graph(g, lam, 2)
        for l in range(2):
            emb.e[l] = emb.e[l] * rng.uniform(0.5, 1.5, size=emb.e[l].shape)
            emb.s[l] = emb.s[l] * rng.uniform(0.5, 1.5, size=emb.s[l].shape)
            params[f"emb.e.{l}"] = emb.e[l]
            params[f"emb.s.{l}"] = emb.s[l]
        mask = np.arange(g.node_counts[0])

        def build(tape: Tape, handles):
            h = model_forward_on_tape(tape, handles, g, pattern, lam)
            return ad.softmax_cross_entropy(h, g.labels, mask)

        errors = gradient_errors(build, params, atol=atol)
        name, err = max(errors.items(), key=lambda kv: kv[1])
        if err > worst:
            worst, worst_param = err, name
    return EquivalenceReport(
        construction="gradient_check",
        max_deviation=worst,
        tolerance=tolerance,
        details={"graphs": graphs, "worst_parameter": worst_param, "lam": lam},
        passed=worst < tolerance,
    )


def model_forward_on_tape(tape: Tape, handles, g: HeteroGraph, pattern: AdjacencyPattern, lam: float):
    """Two-layer RE-GCN logits built from existing parameter Vars (for gradient checks)."""
    xs = [tape.constant(x) for x in g.features]
    blocks = [
        ad.add_bias(ad.matmul(x, handles[f"proj.W.{name}"]), handles[f"proj.b.{name}"])
        for x, name in zip(xs, g.node_types)
    ]
    h = ad.vstack(blocks)
    for l in range(2):
        alpha = ad.scale(handles[f"emb.e.{l}"], lam)
        beta = ad.scale(handles[f"emb.s.{l}"], lam)
        agg = aggregate_with_gradients(pattern, h, alpha, beta, norm="row")
        h = dense_layer(agg, handles[f"layer{l}.W"], handles[f"layer{l}.b"], activate=(l == 0))
    return ad.gather_rows(h, g.target_global_ids())
