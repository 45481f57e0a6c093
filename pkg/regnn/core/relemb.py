"""
Relation and self-loop embeddings.
Weighted-adjacency assembly over the union sparsity pattern of all relations,
row/symmetric normalization, and fused aggregation ops whose backward pass
reaches the embeddings through both the edge weights and the degrees.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from regnn.config import settings
from regnn.core.autodiff import ShapeError, Var
from regnn.core.hgraph import HeteroGraph


logger = logging.getLogger(__name__)

SELFLOOP_MODES = ("embedded", "identity", "none")
NORM_MODES = ("row", "sym", "none")


class EmbeddingError(ValueError):
    """Invalid embedding configuration (lambda <= 0, unknown layer)."""


class NormalizationDomainError(ValueError):
    """Symmetric normalization met a negative entry."""


# ============================================================================
# Embeddings
# ============================================================================

@dataclass
class RelationEmbeddings:
    """
    Per-layer scalars e (one per relation) and s (one per node type).

    The weights used by the model are alpha = lambda * e and beta = lambda * s.
    """
    lam: float
    e: List[np.ndarray] = field(repr=False)
    s: List[np.ndarray] = field(repr=False)
    relation_names: Tuple[str, ...] = ()
    type_names: Tuple[str, ...] = ()

    @property
    def num_layers(self) -> int:
        return len(self.e)

    @property
    def num_relations(self) -> int:
        return self.e[0].size if self.e else 0

    @property
    def num_types(self) -> int:
        return self.s[0].size if self.s else 0

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer < self.num_layers:
            raise EmbeddingError(f"layer {layer} out of range [0, {self.num_layers})")

    def alpha(self, layer: int) -> np.ndarray:
        self._check_layer(layer)
        return self.lam * self.e[layer]

    def beta(self, layer: int) -> np.ndarray:
        self._check_layer(layer)
        return self.lam * self.s[layer]

    def overhead_per_layer(self) -> int:
        return self.num_relations + self.num_types


def init_embeddings(
    lam: float,
    num_relations: int,
    num_types: int,
    num_layers: int,
    relation_names: Sequence[str] = (),
    type_names: Sequence[str] = (),
) -> RelationEmbeddings:
    """
    Initialize every e and s to 1/lambda so that alpha = beta = 1.

    Raises:
        EmbeddingError: lambda <= 0 or num_layers < 1
    """
    if not lam > 0:
        raise EmbeddingError(f"lambda must be positive, got {lam}")
    if num_layers < 1:
        raise EmbeddingError(f"num_layers must be >= 1, got {num_layers}")
    value = 1.0 / lam
    return RelationEmbeddings(
        lam=float(lam),
        e=[np.full(num_relations, value) for _ in range(num_layers)],
        s=[np.full(num_types, value) for _ in range(num_layers)],
        relation_names=tuple(relation_names),
        type_names=tuple(type_names),
    )


def embeddings_for_graph(g: HeteroGraph, lam: float, num_layers: int) -> RelationEmbeddings:
    return init_embeddings(
        lam, g.num_relations, g.num_types, num_layers,
        relation_names=[r.name for r in g.relations],
        type_names=g.node_types,
    )


def tau(x, slope: Optional[float] = None):
    """LeakyReLU applied to relation weights."""
    slope = settings.LEAKY_RELU_SLOPE if slope is None else slope
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, x, slope * x)
    return float(out) if out.ndim == 0 else out


def tau_prime(x, slope: Optional[float] = None) -> np.ndarray:
    slope = settings.LEAKY_RELU_SLOPE if slope is None else slope
    return np.where(np.asarray(x) >= 0, 1.0, slope)


# ============================================================================
# Weighted adjacency
# ============================================================================

@dataclass(frozen=True, eq=False)
class AdjacencyPattern:
    """
    Union sparsity pattern of all relations (+ diagonal) with per-entry provenance.

    relation_slots[r] lists, for every edge of relation r, its position in the
    CSR data array; diag_slots[u] is the position of entry (u, u).
    """
    num_nodes: int
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    rows: np.ndarray = field(repr=False)
    relation_slots: Tuple[np.ndarray, ...] = field(repr=False)
    diag_slots: Optional[np.ndarray] = field(repr=False)
    type_of: np.ndarray = field(repr=False)
    selfloop: str = "embedded"

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def csr(self, data: np.ndarray) -> sp.csr_matrix:
        n = self.num_nodes
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def provenance(self) -> List[List[int]]:
        """Relation ids contributing to each nonzero, in CSR order."""
        owners: List[List[int]] = [[] for _ in range(self.nnz)]
        for r, slots in enumerate(self.relation_slots):
            for slot in slots:
                owners[slot].append(r)
        return owners


def build_pattern(
    adjacencies: Sequence[sp.spmatrix],
    type_of: np.ndarray,
    selfloop: str = "embedded",
) -> AdjacencyPattern:
    """Union pattern for the given relation adjacencies."""
    if selfloop not in SELFLOOP_MODES:
        raise ValueError(f"selfloop must be one of {SELFLOOP_MODES}, got '{selfloop}'")
    n = int(type_of.size)
    union = sp.csr_matrix((n, n), dtype=np.float64)
    for a in adjacencies:
        if a.shape != (n, n):
            raise ShapeError(f"relation adjacency shape {a.shape} != ({n}, {n})")
        union = union + abs(sp.csr_matrix(a, dtype=np.float64))
    if selfloop != "none":
        union = union + sp.identity(n, format="csr")
    union = sp.csr_matrix(union)
    union.sum_duplicates()
    union.sort_indices()

    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(union.indptr))
    keys = rows * n + union.indices.astype(np.int64)
    relation_slots = []
    for a in adjacencies:
        coo = sp.coo_matrix(a)
        r_keys = coo.row.astype(np.int64) * n + coo.col.astype(np.int64)
        relation_slots.append(np.searchsorted(keys, np.sort(r_keys)))
    diag_slots = None
    if selfloop != "none":
        diag = np.arange(n, dtype=np.int64)
        diag_slots = np.searchsorted(keys, diag * n + diag)

    return AdjacencyPattern(
        num_nodes=n,
        indptr=union.indptr.copy(),
        indices=union.indices.copy(),
        rows=rows,
        relation_slots=tuple(relation_slots),
        diag_slots=diag_slots,
        type_of=np.asarray(type_of),
        selfloop=selfloop,
    )


def graph_pattern(g: HeteroGraph, selfloop: str = "embedded") -> AdjacencyPattern:
    return build_pattern([rel.edges for rel in g.relations], g.node_type_of, selfloop)


def weighted_values(pattern: AdjacencyPattern, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """CSR data of A_H: sum of tau(alpha_r) per relation edge plus the diagonal term."""
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    if alpha.size != len(pattern.relation_slots):
        raise ShapeError(f"{alpha.size} relation weights for {len(pattern.relation_slots)} relations")
    data = np.zeros(pattern.nnz)
    for r, slots in enumerate(pattern.relation_slots):
        np.add.at(data, slots, tau(alpha[r]))
    if pattern.selfloop == "embedded":
        beta = np.asarray(beta, dtype=np.float64).ravel()
        data[pattern.diag_slots] += tau(beta)[pattern.type_of]
    elif pattern.selfloop == "identity":
        data[pattern.diag_slots] += 1.0
    return data


@dataclass
class WeightedAdjacency:
    """A_H for one layer, optionally with its normalized form and degrees."""
    pattern: AdjacencyPattern = field(repr=False)
    raw: sp.csr_matrix = field(repr=False)
    degree: np.ndarray = field(repr=False)
    normalized: Optional[sp.csr_matrix] = field(default=None, repr=False)
    mode: str = "none"

    @property
    def matrix(self) -> sp.csr_matrix:
        return self.normalized if self.normalized is not None else self.raw


def assemble_adjacency(
    g: HeteroGraph,
    emb: RelationEmbeddings,
    layer: int,
    selfloop: str = "embedded",
    pattern: Optional[AdjacencyPattern] = None,
) -> WeightedAdjacency:
    """
    Build the weighted adjacency A_H of one layer.

    Args:
        g: Graph providing the relation adjacencies
        emb: Embeddings providing alpha and beta for `layer`
        layer: Layer index
        selfloop: embedded (tau(beta) diagonal), identity (+I) or none
        pattern: Cached pattern for (g, selfloop)

    Returns:
        Unnormalized WeightedAdjacency
    """
    pattern = pattern or graph_pattern(g, selfloop)
    data = weighted_values(pattern, emb.alpha(layer), emb.beta(layer))
    raw = pattern.csr(data)
    return WeightedAdjacency(pattern=pattern, raw=raw, degree=np.asarray(raw.sum(axis=1)).ravel())


def clamp_degree(degree: np.ndarray) -> np.ndarray:
    return np.maximum(degree, settings.DEGREE_EPS)


def _check_nonnegative(pattern: AdjacencyPattern, data: np.ndarray) -> None:
    negative = np.flatnonzero(data < 0)
    if negative.size:
        k = negative[0]
        raise NormalizationDomainError(
            f"symmetric normalization needs non-negative entries; "
            f"entry ({pattern.rows[k]}, {pattern.indices[k]}) = {data[k]:.6g}"
        )


def normalize_adjacency(wa: WeightedAdjacency, mode: str = "row") -> WeightedAdjacency:
    """
    Row: D^-1 A. Symmetric: D^-1/2 A D^-1/2. Degrees are clamped at DEGREE_EPS.

    Raises:
        NormalizationDomainError: symmetric mode with a negative entry
    """
    pattern = wa.pattern
    data = wa.raw.data
    d = clamp_degree(wa.degree)
    if mode == "row":
        norm = data / d[pattern.rows]
    elif mode == "sym":
        _check_nonnegative(pattern, data)
        inv_sqrt = 1.0 / np.sqrt(d)
        norm = data * inv_sqrt[pattern.rows] * inv_sqrt[pattern.indices]
    elif mode == "none":
        norm = data.copy()
    else:
        raise ValueError(f"normalization mode must be one of {NORM_MODES}, got '{mode}'")
    return WeightedAdjacency(
        pattern=pattern, raw=wa.raw, degree=wa.degree,
        normalized=pattern.csr(norm), mode=mode,
    )


# ============================================================================
# Fused differentiable aggregation
# ============================================================================

def _weight_gradients(
    pattern: AdjacencyPattern,
    g_entries: np.ndarray,
    alpha: np.ndarray,
    beta: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Route per-nonzero adjoints to alpha and beta through tau."""
    d_alpha = np.array([g_entries[slots].sum() for slots in pattern.relation_slots])
    d_alpha = d_alpha * tau_prime(alpha)
    d_beta = np.zeros_like(beta)
    if pattern.selfloop == "embedded":
        per_node = g_entries[pattern.diag_slots]
        d_beta = np.bincount(pattern.type_of, weights=per_node, minlength=beta.size)
        d_beta = d_beta * tau_prime(beta)
    return d_alpha, d_beta


def aggregate_with_gradients(
    pattern: AdjacencyPattern,
    h: Var,
    alpha: Var,
    beta: Var,
    norm: str = "row",
) -> Var:
    """
    Y = A~_H H with A_H assembled from alpha (1 x R) and beta (1 x F).

    The backward pass returns dL/dH = A~^T G and the gradients of alpha and
    beta, including the dependence of the degrees on the weights.
    """
    if h.value.shape[0] != pattern.num_nodes:
        raise ShapeError(f"H has {h.value.shape[0]} rows for {pattern.num_nodes} nodes")
    a = alpha.value.ravel().astype(np.float64)
    b = beta.value.ravel().astype(np.float64)
    data = weighted_values(pattern, a, b)
    rows, cols = pattern.rows, pattern.indices
    degree = np.bincount(rows, weights=data, minlength=pattern.num_nodes)
    d = clamp_degree(degree)
    active = degree > settings.DEGREE_EPS

    if norm == "row":
        norm_data = data / d[rows]
    elif norm == "sym":
        _check_nonnegative(pattern, data)
        inv_sqrt = 1.0 / np.sqrt(d)
        norm_data = data * inv_sqrt[rows] * inv_sqrt[cols]
    elif norm == "none":
        norm_data = data
    else:
        raise ValueError(f"normalization mode must be one of {NORM_MODES}, got '{norm}'")

    mat = pattern.csr(norm_data)
    mat_t = mat.T.tocsr()
    hv = h.value
    y = np.asarray(mat @ hv)

    def _backward(grad):
        d_h = np.asarray(mat_t @ grad)
        pair = np.einsum("ij,ij->i", grad[rows], hv[cols])
        if norm == "row":
            g_entries = pair / d[rows]
            dd = -np.einsum("ij,ij->i", grad, y) / d
            g_entries = g_entries + np.where(active, dd, 0.0)[rows]
        elif norm == "sym":
            g_entries = pair / np.sqrt(d[rows] * d[cols])
            dd = -0.5 / d * (np.einsum("ij,ij->i", grad, y) + np.einsum("ij,ij->i", hv, d_h))
            g_entries = g_entries + np.where(active, dd, 0.0)[rows]
        else:
            g_entries = pair
        d_alpha, d_beta = _weight_gradients(pattern, g_entries, a, b)
        return (
            d_h,
            d_alpha.reshape(alpha.value.shape),
            d_beta.reshape(beta.value.shape),
        )

    return h.tape.record(y, (h, alpha, beta), _backward, name=f"aggregate_{norm}")


def khop_aggregate(
    pattern: AdjacencyPattern,
    h: Var,
    alphas: Sequence[Var],
    betas: Sequence[Var],
) -> Var:
    """
    Y = (D_{K-1} ... D_0)^-1 A_{K-1} ... A_0 H for K per-layer weighted adjacencies.

    The per-layer degrees multiply instead of being recomputed for the product,
    which is the collapsed form of K stacked linear row-normalized layers.
    """
    if len(alphas) != len(betas) or not alphas:
        raise ShapeError("khop_aggregate needs one (alpha, beta) pair per hop")
    if h.value.shape[0] != pattern.num_nodes:
        raise ShapeError(f"H has {h.value.shape[0]} rows for {pattern.num_nodes} nodes")
    rows, cols = pattern.rows, pattern.indices
    hops = []
    for alpha, beta in zip(alphas, betas):
        a = alpha.value.ravel().astype(np.float64)
        b = beta.value.ravel().astype(np.float64)
        data = weighted_values(pattern, a, b)
        degree = np.bincount(rows, weights=data, minlength=pattern.num_nodes)
        hops.append((a, b, pattern.csr(data), clamp_degree(degree), degree > settings.DEGREE_EPS))

    zs = [h.value]
    for _, _, mat, _, _ in hops:
        zs.append(np.asarray(mat @ zs[-1]))
    c = 1.0 / np.prod([d for _, _, _, d, _ in hops], axis=0)
    y = zs[-1] * c[:, None]

    def _backward(grad):
        gy = np.einsum("ij,ij->i", grad, y)
        dz = grad * c[:, None]
        d_alphas, d_betas = [], []
        for k in range(len(hops) - 1, -1, -1):
            a, b, mat, d, active = hops[k]
            g_entries = np.einsum("ij,ij->i", dz[rows], zs[k][cols])
            g_entries = g_entries + np.where(active, -gy / d, 0.0)[rows]
            d_alpha, d_beta = _weight_gradients(pattern, g_entries, a, b)
            d_alphas.append(d_alpha.reshape(alphas[k].value.shape))
            d_betas.append(d_beta.reshape(betas[k].value.shape))
            dz = np.asarray(mat.T.tocsr() @ dz)
        d_alphas.reverse()
        d_betas.reverse()
        return [dz] + d_alphas + d_betas

    parents = [h] + list(alphas) + list(betas)
    return h.tape.record(y, parents, _backward, name="khop_aggregate")
