"""
Model layers.
Type-specific feature projection, the RE-GCN / RE-SGC / RE-GIN backbones,
the GTN comparison layer, whole-model assembly and parameter counting.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from regnn.config import settings
from regnn.core import autodiff as ad
from regnn.core.autodiff import ShapeError, Tape, Var
from regnn.core.hgraph import HeteroGraph
from regnn.core.relemb import (
    AdjacencyPattern,
    RelationEmbeddings,
    aggregate_with_gradients,
    clamp_degree,
    graph_pattern,
    khop_aggregate,
)
from regnn.schemas.run_schemas import Backbone, ModelConfig


logger = logging.getLogger(__name__)

HIDDEN_ACTIVATION = "relu"


# ============================================================================
# Parameters
# ============================================================================

def xavier_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def gtn_candidates(config: ModelConfig, g: HeteroGraph) -> int:
    return g.num_relations + (1 if config.gtn_identity_candidate else 0)


def _layer_dims(config: ModelConfig, num_classes: int) -> List[Tuple[int, int]]:
    """(in, out) of each backbone weight; the last one emits logits unless a head follows."""
    h = config.hidden
    final = h if config.output_head else num_classes
    if config.backbone == Backbone.RESGC:
        return [(h, final)]
    if config.backbone == Backbone.GTN and config.gtn_channels > 1:
        return [(h, h)] * config.layers
    return [(h, h)] * (config.layers - 1) + [(h, final)]


def param_shapes(config: ModelConfig, g: HeteroGraph, num_classes: int) -> Dict[str, Tuple[int, ...]]:
    """Shapes of every trainable array except the relation embeddings."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    for t, name in enumerate(g.node_types):
        shapes[f"proj.W.{name}"] = (g.features[t].shape[1], config.hidden)
        shapes[f"proj.b.{name}"] = (1, config.hidden)

    dims = _layer_dims(config, num_classes)
    if config.backbone == Backbone.GTN:
        for c in range(config.gtn_channels):
            for l, (d_in, d_out) in enumerate(dims):
                shapes[f"gtn.{c}.layer{l}.scores"] = (config.gtn_length, gtn_candidates(config, g))
                shapes[f"gtn.{c}.layer{l}.W"] = (d_in, d_out)
                shapes[f"gtn.{c}.layer{l}.b"] = (1, d_out)
    elif config.backbone == Backbone.REGIN:
        for l, (d_in, d_out) in enumerate(dims):
            shapes[f"layer{l}.W1"] = (d_in, config.hidden)
            shapes[f"layer{l}.b1"] = (1, config.hidden)
            shapes[f"layer{l}.W2"] = (config.hidden, d_out)
            shapes[f"layer{l}.b2"] = (1, d_out)
            shapes[f"layer{l}.eps"] = (1, 1)
    else:
        for l, (d_in, d_out) in enumerate(dims):
            shapes[f"layer{l}.W"] = (d_in, d_out)
            shapes[f"layer{l}.b"] = (1, d_out)

    if config.output_head or (config.backbone == Backbone.GTN and config.gtn_channels > 1):
        head_in = config.hidden * (config.gtn_channels if config.backbone == Backbone.GTN else 1)
        shapes["head.W"] = (head_in, num_classes)
        shapes["head.b"] = (1, num_classes)
    return shapes


def param_role(name: str) -> str:
    """
    Kind of array a parameter name refers to ("W", "W1", "b", "eps", "scores", ...).

    Projection names carry the node type last (proj.W.<type>), so their role is
    the second segment; every other name ends with its role.
    """
    parts = name.split(".")
    if parts[0] == "proj":
        return parts[1]
    return parts[-1]


def init_params(
    config: ModelConfig,
    g: HeteroGraph,
    num_classes: int,
    rng: np.random.Generator,
) -> Dict[str, np.ndarray]:
    """Xavier-uniform weights, zero biases, uniform GTN soft weights."""
    params = {}
    for name, shape in param_shapes(config, g, num_classes).items():
        role = param_role(name)
        if role.startswith("W"):
            params[name] = xavier_uniform(shape[0], shape[1], rng)
        elif role == "eps":
            params[name] = np.full(shape, float(config.gin_eps))
        else:
            params[name] = np.zeros(shape)
    return params


@dataclass(frozen=True)
class ParamCount:
    total: int
    projection: int
    backbone: int
    embedding_per_layer: int
    embedding_total: int


def embedding_overhead_per_layer(config: ModelConfig, g: HeteroGraph) -> int:
    """Trainable relation/self-loop scalars per layer; GTN carries none."""
    if config.backbone == Backbone.GTN:
        return 0
    count = 0
    if not config.freeze_relations:
        count += g.num_relations
    if config.selfloop == "embedded" and not config.freeze_selfloops:
        count += g.num_types
    return count


def param_count(config: ModelConfig, g: HeteroGraph, num_classes: int) -> ParamCount:
    shapes = param_shapes(config, g, num_classes)
    projection = sum(int(np.prod(s)) for k, s in shapes.items() if k.startswith("proj."))
    backbone = sum(int(np.prod(s)) for k, s in shapes.items() if not k.startswith("proj."))
    per_layer = embedding_overhead_per_layer(config, g)
    embedding_total = per_layer * config.layers
    return ParamCount(
        total=projection + backbone + embedding_total,
        projection=projection,
        backbone=backbone,
        embedding_per_layer=per_layer,
        embedding_total=embedding_total,
    )


# ============================================================================
# Layer operations
# ============================================================================

def project_features(
    features: Sequence[Var],
    weights: Sequence[Var],
    biases: Sequence[Var],
) -> Var:
    """Stack X_t W_t + b_t over node types in declaration (global id) order."""
    if not len(features) == len(weights) == len(biases):
        raise ShapeError("one projection per node type is required")
    blocks = []
    for x, w, b in zip(features, weights, biases):
        if x.value.shape[1] != w.value.shape[0]:
            raise ShapeError(
                f"feature dim {x.value.shape[1]} does not match projection {w.value.shape}"
            )
        blocks.append(ad.add_bias(ad.matmul(x, w), b))
    return blocks[0] if len(blocks) == 1 else ad.vstack(blocks)


def dense_layer(h: Var, w: Var, b: Var, activate: bool = True) -> Var:
    out = ad.add_bias(ad.matmul(h, w), b)
    return ad.activation(out, HIDDEN_ACTIVATION) if activate else out


def regcn_layer(
    pattern: AdjacencyPattern,
    h: Var,
    w: Var,
    b: Var,
    alpha: Var,
    beta: Var,
    norm: str = "row",
    activate: bool = True,
) -> Var:
    """sigma(A~_H H W + b); the last layer passes activate=False to emit logits."""
    return dense_layer(aggregate_with_gradients(pattern, h, alpha, beta, norm), w, b, activate)


def resgc_forward(
    pattern: AdjacencyPattern,
    h: Var,
    w: Var,
    b: Var,
    alphas: Sequence[Var],
    betas: Sequence[Var],
    activate: bool = False,
) -> Var:
    """Collapsed K-hop layer: (prod_l D_l)^-1 A_{K-1} ... A_0 H W + b."""
    return dense_layer(khop_aggregate(pattern, h, alphas, betas), w, b, activate)


def regin_layer(
    pattern: AdjacencyPattern,
    h: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    eps: Var,
    alpha: Var,
    beta: Var,
    activate: bool = True,
) -> Var:
    """GIN-style sum aggregation over the unnormalized weighted adjacency."""
    summed = aggregate_with_gradients(pattern, h, alpha, beta, norm="none")
    one_plus_eps = ad.add(eps, h.tape.constant(1.0))
    inner = ad.add(summed, ad.mul_scalar_var(h, one_plus_eps))
    hidden = dense_layer(inner, w1, b1, activate=True)
    return dense_layer(hidden, w2, b2, activate=activate)


# ============================================================================
# GTN
# ============================================================================

def relation_mixture(
    adjacencies: Sequence[sp.spmatrix],
    weights: np.ndarray,
    identity_candidate: bool = False,
) -> sp.csr_matrix:
    """sum_r w_r A_r (+ w_I I when the identity is a candidate)."""
    n = adjacencies[0].shape[0] if adjacencies else None
    expected = len(adjacencies) + (1 if identity_candidate else 0)
    if weights.size != expected:
        raise ShapeError(f"{weights.size} mixture weights for {expected} candidates")
    if n is None:
        raise ShapeError("relation mixture needs at least one relation")
    out = sp.csr_matrix((n, n), dtype=np.float64)
    for w, a in zip(weights, adjacencies):
        out = out + w * sp.csr_matrix(a, dtype=np.float64)
    if identity_candidate:
        out = out + weights[-1] * sp.identity(n, format="csr")
    return sp.csr_matrix(out)


def gtn_composite_adjacency(
    adjacencies: Sequence[sp.spmatrix],
    soft_weights: np.ndarray,
    identity_candidate: bool = False,
) -> sp.csr_matrix:
    """
    Product of per-step convex relation mixtures, computed left to right.

    Args:
        adjacencies: Candidate relation adjacencies
        soft_weights: length x candidates, each row a probability vector
        identity_candidate: Last column weights the identity matrix

    Returns:
        A_P as CSR
    """
    soft_weights = np.atleast_2d(np.asarray(soft_weights, dtype=np.float64))
    if np.any(soft_weights < 0) or not np.allclose(soft_weights.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("GTN soft weights must be probability vectors")
    product = None
    for step in soft_weights:
        mix = relation_mixture(adjacencies, step, identity_candidate)
        product = mix if product is None else sp.csr_matrix(product @ mix)
    product.sort_indices()
    return product


def gtn_layer(
    a_p: sp.spmatrix,
    h: Var,
    w: Var,
    b: Var,
    add_identity: bool = True,
    activate: bool = True,
) -> Var:
    """sigma(D^-1 (A_P + I) H W + B) with A_P held constant."""
    n = a_p.shape[0]
    mat = sp.csr_matrix(a_p, dtype=np.float64)
    if add_identity:
        mat = sp.csr_matrix(mat + sp.identity(n, format="csr"))
    d = clamp_degree(np.asarray(mat.sum(axis=1)).ravel())
    normalized = sp.diags(1.0 / d) @ mat
    return dense_layer(ad.spmm(normalized, h), w, b, activate)


def gtn_ensemble(channel_outputs: Sequence[Var]) -> Var:
    """Concatenate channel outputs along features."""
    if len(channel_outputs) == 1:
        return channel_outputs[0]
    return ad.concat_cols(channel_outputs)


def gtn_aggregate(
    adjacencies: Sequence[sp.spmatrix],
    soft_weights: Var,
    h: Var,
    identity_candidate: bool = True,
    add_identity: bool = False,
) -> Var:
    """
    Y = D^-1 P H with P = M_1 ... M_l (+ I), differentiable in the soft weights.

    M_j mixes the candidates with row j of `soft_weights`. The weight adjoint
    of step j and candidate r is <L_j^T dP R_j^T, A_r> with L_j, R_j the
    products left and right of M_j and dP = U H^T - w 1^T, U = D^-1 G.
    """
    n = h.value.shape[0]
    weights = soft_weights.value.astype(np.float64)
    candidates = [sp.csr_matrix(a, dtype=np.float64) for a in adjacencies]
    if identity_candidate:
        candidates.append(sp.identity(n, format="csr"))
    if weights.shape[1] != len(candidates):
        raise ShapeError(f"{weights.shape[1]} soft weights per step for {len(candidates)} candidates")
    mixes = [
        sp.csr_matrix(sum(w * a for w, a in zip(row, candidates)))
        for row in weights
    ]
    length = len(mixes)
    hv = h.value

    def apply_from(j: int, x: np.ndarray) -> np.ndarray:
        """M_j ... M_{l-1} x (0-based steps)."""
        for m in reversed(mixes[j:]):
            x = np.asarray(m @ x)
        return x

    ones = np.ones((n, 1))
    ph = apply_from(0, hv)
    p1 = apply_from(0, ones).ravel()
    if add_identity:
        ph = ph + hv
        p1 = p1 + 1.0
    degree = p1
    d = clamp_degree(degree)
    active = degree > settings.DEGREE_EPS
    y = ph / d[:, None]

    def _backward(grad):
        u = grad / d[:, None]
        w = np.where(active, np.einsum("ij,ij->i", grad, y) / d, 0.0)[:, None]
        # left products transposed, applied to U and w: L_j^T x = M_{j-1}^T ... M_0^T x
        left_u, left_w = [u], [w]
        for m in mixes[:-1]:
            left_u.append(np.asarray(m.T @ left_u[-1]))
            left_w.append(np.asarray(m.T @ left_w[-1]))
        d_weights = np.zeros_like(weights)
        for j in range(length):
            right_h = apply_from(j + 1, hv)
            right_1 = apply_from(j + 1, ones)
            for r, a in enumerate(candidates):
                d_weights[j, r] = (
                    np.sum(left_u[j] * np.asarray(a @ right_h))
                    - np.sum(left_w[j] * np.asarray(a @ right_1))
                )
        # dH = P^T U
        d_h = u
        for m in mixes:
            d_h = np.asarray(m.T @ d_h)
        if add_identity:
            d_h = d_h + u
        return d_h, d_weights

    return h.tape.record(y, (h, soft_weights), _backward, name="gtn_aggregate")


# ============================================================================
# Whole model
# ============================================================================

@dataclass
class ForwardPass:
    """Everything a caller needs after one forward pass."""
    tape: Tape
    logits: Var
    representation: Var
    params: Dict[str, Var] = field(repr=False)
    embedding_vars: Dict[str, Var] = field(default_factory=dict, repr=False)


def _embedding_vars(
    tape: Tape,
    config: ModelConfig,
    emb: RelationEmbeddings,
    layer: int,
) -> Tuple[Var, Var, Dict[str, Var]]:
    """alpha and beta of one layer as lambda * e, lambda * s on the tape."""
    created = {}
    if config.freeze_relations:
        e = tape.constant(np.full(emb.num_relations, 1.0 / emb.lam))
    else:
        e = tape.param(emb.e[layer], name=f"emb.e.{layer}")
        created[e.name] = e
    if config.freeze_selfloops or config.selfloop != "embedded":
        s = tape.constant(np.full(emb.num_types, 1.0 / emb.lam))
    else:
        s = tape.param(emb.s[layer], name=f"emb.s.{layer}")
        created[s.name] = s
    return ad.scale(e, emb.lam), ad.scale(s, emb.lam), created


def model_forward(
    config: ModelConfig,
    g: HeteroGraph,
    emb: Optional[RelationEmbeddings],
    params: Dict[str, np.ndarray],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dtype=np.float64,
    pattern: Optional[AdjacencyPattern] = None,
) -> ForwardPass:
    """
    Projection, dropout before every backbone layer, the backbone, and the
    target-type rows of the output.

    Args:
        config: Architecture
        g: Graph with a target type
        emb: Relation embeddings (ignored by GTN)
        params: Arrays named as in param_shapes
        training: Enables dropout
        rng: Dropout generator, required when training with dropout > 0
        dtype: Tape precision
        pattern: Cached union pattern for (g, config.selfloop)

    Returns:
        ForwardPass with logits of shape (N_target, C)
    """
    tape = Tape(dtype=dtype)
    handles = {name: tape.param(value, name=name) for name, value in params.items()}
    features = [tape.constant(x, name=f"X.{name}") for x, name in zip(g.features, g.node_types)]
    h = project_features(
        features,
        [handles[f"proj.W.{name}"] for name in g.node_types],
        [handles[f"proj.b.{name}"] for name in g.node_types],
    )
    rate = config.dropout
    last = config.layers - 1
    head = "head.W" in handles
    emb_handles: Dict[str, Var] = {}
    backbone = config.backbone

    if backbone != Backbone.GTN:
        if emb is None:
            raise ValueError(f"backbone '{backbone}' needs relation embeddings")
        if emb.num_layers != config.layers:
            raise ShapeError(f"{emb.num_layers} embedding layers for a {config.layers}-layer model")
        pattern = pattern or graph_pattern(g, config.selfloop)

    if backbone == Backbone.REGCN:
        for l in range(config.layers):
            alpha, beta, created = _embedding_vars(tape, config, emb, l)
            emb_handles.update(created)
            h = ad.dropout(h, rate, training, rng)
            agg = aggregate_with_gradients(pattern, h, alpha, beta, config.norm)
            if l == last:
                representation = agg if config.layers == 1 else h
            h = dense_layer(agg, handles[f"layer{l}.W"], handles[f"layer{l}.b"],
                            activate=(l < last or head))
        if head:
            representation = h

    elif backbone == Backbone.RESGC:
        alphas, betas = [], []
        for l in range(config.layers):
            alpha, beta, created = _embedding_vars(tape, config, emb, l)
            emb_handles.update(created)
            alphas.append(alpha)
            betas.append(beta)
        h = ad.dropout(h, rate, training, rng)
        agg = khop_aggregate(pattern, h, alphas, betas)
        representation = agg
        h = dense_layer(agg, handles["layer0.W"], handles["layer0.b"], activate=head)
        if head:
            representation = h

    elif backbone == Backbone.REGIN:
        for l in range(config.layers):
            alpha, beta, created = _embedding_vars(tape, config, emb, l)
            emb_handles.update(created)
            h = ad.dropout(h, rate, training, rng)
            if l == last:
                representation = h
            h = regin_layer(
                pattern, h,
                handles[f"layer{l}.W1"], handles[f"layer{l}.b1"],
                handles[f"layer{l}.W2"], handles[f"layer{l}.b2"],
                handles[f"layer{l}.eps"], alpha, beta,
                activate=(l < last or head),
            )
        if head:
            representation = h

    elif backbone == Backbone.GTN:
        adjacencies = [rel.edges for rel in g.relations]
        ensembled = config.gtn_channels > 1
        channel_outputs = []
        channel_inputs = []
        for c in range(config.gtn_channels):
            hc = h
            for l in range(config.layers):
                soft = ad.softmax_rows(handles[f"gtn.{c}.layer{l}.scores"])
                hc = ad.dropout(hc, rate, training, rng)
                agg = gtn_aggregate(adjacencies, soft, hc,
                                    identity_candidate=config.gtn_identity_candidate,
                                    add_identity=True)
                if l == last:
                    channel_inputs.append(agg if config.layers == 1 else hc)
                hc = dense_layer(agg, handles[f"gtn.{c}.layer{l}.W"], handles[f"gtn.{c}.layer{l}.b"],
                                 activate=(l < last or head or ensembled))
            channel_outputs.append(hc)
        h = gtn_ensemble(channel_outputs)
        representation = h if head else gtn_ensemble(channel_inputs)

    else:
        raise ValueError(f"unknown backbone '{backbone}'")

    if head:
        h = dense_layer(h, handles["head.W"], handles["head.b"], activate=False)

    targets = g.target_global_ids()
    logits = ad.gather_rows(h, targets)
    representation = ad.gather_rows(representation, targets)
    return ForwardPass(
        tape=tape,
        logits=logits,
        representation=representation,
        params=handles,
        embedding_vars=emb_handles,
    )


def gtn_soft_weights(params: Dict[str, np.ndarray], channel: int = 0, layer: int = 0) -> np.ndarray:
    """Row-wise softmax of the raw selection scores of one channel and layer."""
    scores = params[f"gtn.{channel}.layer{layer}.scores"]
    z = np.exp(scores - scores.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)
