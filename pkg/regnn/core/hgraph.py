"""
Heterogeneous graph data model.
Typed nodes with a global id space, per-relation CSR adjacency, the JSON
graph format, reverse-relation augmentation and a synthetic generator.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import ValidationError

from regnn.schemas.graph_schemas import (
    GRAPH_FORMAT,
    GraphFile,
    SyntheticSpec,
)


logger = logging.getLogger(__name__)


class GraphParseError(ValueError):
    """Graph document is not valid JSON or does not match the schema."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(prefix + message)


class GraphValidationError(ValueError):
    """Graph violates a structural invariant (e.g. dangling edge endpoint)."""


class GenerationError(ValueError):
    """Synthetic spec cannot be realized."""


@dataclass(frozen=True)
class RelationDef:
    """An edge type. `edges` is N x N over global ids with row = receiver (dst)."""
    name: str
    src_type: int
    dst_type: int
    edges: sp.csr_matrix = field(repr=False, compare=False)
    is_reverse: bool = False

    @property
    def num_edges(self) -> int:
        return int(self.edges.nnz)


@dataclass(frozen=True)
class Splits:
    """Pairwise disjoint local indices into the target node type."""
    train: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)
    test: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """
    Immutable heterogeneous graph.

    Global ids concatenate node types in declaration order, so type t owns the
    contiguous id range [offsets[t], offsets[t] + node_counts[t]).
    """
    node_types: Tuple[str, ...]
    node_counts: Tuple[int, ...]
    relations: Tuple[RelationDef, ...]
    features: Tuple[np.ndarray, ...] = field(repr=False)
    target_type: Optional[int] = None
    labels: Optional[np.ndarray] = field(default=None, repr=False)
    splits: Optional[Splits] = None
    generator: Optional[Dict[str, Any]] = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return int(sum(self.node_counts))

    @property
    def num_types(self) -> int:
        return len(self.node_types)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def num_classes(self) -> int:
        if self.labels is None or len(self.labels) == 0:
            return 0
        return int(self.labels.max()) + 1

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.node_counts)[:-1]]).astype(np.int64)

    @property
    def node_type_of(self) -> np.ndarray:
        """phi: type id of every global node."""
        return np.repeat(np.arange(self.num_types), self.node_counts)

    def type_index(self, name: str) -> int:
        try:
            return self.node_types.index(name)
        except ValueError:
            raise KeyError(f"Unknown node type '{name}'") from None

    def relation_index(self, name: str) -> int:
        for i, rel in enumerate(self.relations):
            if rel.name == name:
                return i
        raise KeyError(f"Unknown relation '{name}'")

    def to_global(self, type_id: int, local: int) -> int:
        if not 0 <= local < self.node_counts[type_id]:
            raise IndexError(
                f"local index {local} out of range for type '{self.node_types[type_id]}'"
            )
        return int(self.offsets[type_id] + local)

    def to_local(self, global_id: int) -> Tuple[int, int]:
        if not 0 <= global_id < self.num_nodes:
            raise IndexError(f"global id {global_id} out of range")
        type_id = int(np.searchsorted(self.offsets, global_id, side="right") - 1)
        return type_id, int(global_id - self.offsets[type_id])

    def type_slice(self, type_id: int) -> slice:
        start = int(self.offsets[type_id])
        return slice(start, start + self.node_counts[type_id])

    def target_global_ids(self) -> np.ndarray:
        if self.target_type is None:
            raise GraphValidationError("graph has no target node type")
        sl = self.type_slice(self.target_type)
        return np.arange(sl.start, sl.stop)

    def validate(self) -> None:
        """Raise GraphValidationError when any structural invariant fails."""
        n = self.num_nodes
        if len(self.node_counts) != len(self.node_types):
            raise GraphValidationError("node_counts and node_types differ in length")
        if len(self.features) != self.num_types:
            raise GraphValidationError("one feature matrix per node type is required")
        for t, (x, count) in enumerate(zip(self.features, self.node_counts)):
            if x.ndim != 2 or x.shape[0] != count:
                raise GraphValidationError(
                    f"features of type '{self.node_types[t]}' have shape {x.shape}, "
                    f"expected ({count}, d)"
                )
        type_of = self.node_type_of
        for rel in self.relations:
            a = rel.edges
            if a.shape != (n, n):
                raise GraphValidationError(
                    f"relation '{rel.name}' adjacency shape {a.shape} != ({n}, {n})"
                )
            rows = np.repeat(np.arange(n), np.diff(a.indptr))
            if np.any(type_of[rows] != rel.dst_type) or np.any(type_of[a.indices] != rel.src_type):
                raise GraphValidationError(
                    f"relation '{rel.name}' has endpoints outside its declared types"
                )
            for r in range(n):
                cols = a.indices[a.indptr[r]:a.indptr[r + 1]]
                if cols.size > 1 and np.any(np.diff(cols) <= 0):
                    raise GraphValidationError(
                        f"relation '{rel.name}' row {r} has unsorted or duplicate columns"
                    )
        if self.labels is not None:
            if self.target_type is None:
                raise GraphValidationError("labels given without a target type")
            if len(self.labels) != self.node_counts[self.target_type]:
                raise GraphValidationError("labels must cover every target node")
        if self.splits is not None:
            if self.target_type is None:
                raise GraphValidationError("splits given without a target type")
            count = self.node_counts[self.target_type]
            parts = [self.splits.train, self.splits.valid, self.splits.test]
            for part in parts:
                if part.size and (part.min() < 0 or part.max() >= count):
                    raise GraphValidationError("split index outside the target type")
            merged = np.concatenate(parts)
            if np.unique(merged).size != merged.size:
                raise GraphValidationError("train/valid/test splits overlap")


# ============================================================================
# Construction helpers
# ============================================================================

def _edges_to_csr(
    edges: Sequence[Tuple[int, int]],
    src_offset: int,
    dst_offset: int,
    num_nodes: int,
) -> sp.csr_matrix:
    """Unit-valued receiver-row CSR; duplicate pairs collapse to one entry."""
    if len(edges) == 0:
        return sp.csr_matrix((num_nodes, num_nodes), dtype=np.float64)
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = arr[:, 1] + dst_offset
    cols = arr[:, 0] + src_offset
    a = sp.csr_matrix(
        (np.ones(len(arr), dtype=np.float64), (rows, cols)), shape=(num_nodes, num_nodes)
    )
    a.sum_duplicates()
    a.data[:] = 1.0
    a.sort_indices()
    return a


def one_hot_features(count: int) -> np.ndarray:
    return np.eye(count, dtype=np.float64)


def graph_from_document(doc: GraphFile) -> HeteroGraph:
    """Build and validate a HeteroGraph from a parsed graph document."""
    names = [nt.name for nt in doc.node_types]
    counts = [nt.count for nt in doc.node_types]
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    n = int(sum(counts))

    features = []
    for nt in doc.node_types:
        if nt.features is None:
            features.append(one_hot_features(nt.count))
        else:
            features.append(np.asarray(nt.features, dtype=np.float64))

    relations = []
    for rel in doc.relations:
        s, d = names.index(rel.src), names.index(rel.dst)
        for i, (u, v) in enumerate(rel.edges):
            if not 0 <= u < counts[s]:
                raise GraphValidationError(
                    f"relation '{rel.name}' edge {i}: source index {u} out of range "
                    f"for type '{rel.src}' with {counts[s]} nodes"
                )
            if not 0 <= v < counts[d]:
                raise GraphValidationError(
                    f"relation '{rel.name}' edge {i}: destination index {v} out of range "
                    f"for type '{rel.dst}' with {counts[d]} nodes"
                )
        relations.append(RelationDef(
            name=rel.name,
            src_type=s,
            dst_type=d,
            edges=_edges_to_csr(rel.edges, int(offsets[s]), int(offsets[d]), n),
        ))

    target_type = next((i for i, nt in enumerate(doc.node_types) if nt.target), None)
    labels = None
    if target_type is not None and doc.node_types[target_type].labels is not None:
        labels = np.asarray(doc.node_types[target_type].labels, dtype=np.int64)

    splits = None
    if doc.splits is not None:
        splits = Splits(
            train=np.asarray(doc.splits.train, dtype=np.int64),
            valid=np.asarray(doc.splits.valid, dtype=np.int64),
            test=np.asarray(doc.splits.test, dtype=np.int64),
        )

    g = HeteroGraph(
        node_types=tuple(names),
        node_counts=tuple(counts),
        relations=tuple(relations),
        features=tuple(features),
        target_type=target_type,
        labels=labels,
        splits=splits,
        generator=doc.generator,
    )
    g.validate()
    return g


def graph_to_document(g: HeteroGraph) -> Dict[str, Any]:
    """Inverse of graph_from_document; edges use per-type local indices."""
    offsets = g.offsets
    node_types = []
    for t, name in enumerate(g.node_types):
        entry: Dict[str, Any] = {
            "name": name,
            "count": g.node_counts[t],
            "features": g.features[t].tolist(),
        }
        if g.target_type == t:
            entry["target"] = True
            if g.labels is not None:
                entry["labels"] = g.labels.tolist()
        node_types.append(entry)

    relations = []
    for rel in g.relations:
        coo = rel.edges.tocoo()
        order = np.lexsort((coo.row, coo.col))
        pairs = [
            [int(coo.col[k] - offsets[rel.src_type]), int(coo.row[k] - offsets[rel.dst_type])]
            for k in order
        ]
        relations.append({
            "name": rel.name,
            "src": g.node_types[rel.src_type],
            "dst": g.node_types[rel.dst_type],
            "edges": pairs,
        })

    doc: Dict[str, Any] = {
        "format": GRAPH_FORMAT,
        "node_types": node_types,
        "relations": relations,
    }
    if g.splits is not None:
        doc["splits"] = {
            "train": g.splits.train.tolist(),
            "valid": g.splits.valid.tolist(),
            "test": g.splits.test.tolist(),
        }
    if g.generator is not None:
        doc["generator"] = g.generator
    return doc


def load_graph(path: Path) -> HeteroGraph:
    """
    Load and validate a graph file.

    Args:
        path: JSON document in the regnn-graph/1 format

    Returns:
        Validated HeteroGraph; types without features get one-hot identity features

    Raises:
        FileNotFoundError: path does not exist
        GraphParseError: malformed JSON or schema violation
        GraphValidationError: dangling edge endpoint or other invariant failure
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Graph file not found: {path}")

    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise GraphParseError(e.msg, line=e.lineno) from e

    try:
        doc = GraphFile.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise GraphParseError(first["msg"], field=loc or None,
                              line=_locate_line(text, first["loc"])) from e

    g = graph_from_document(doc)
    logger.info(
        "Loaded graph %s: %d node types, %d nodes, %d relations",
        path.name, g.num_types, g.num_nodes, g.num_relations,
    )
    return g


def _locate_line(text: str, loc: Tuple[Any, ...]) -> Optional[int]:
    """Best-effort line number of the first string key in a validation location."""
    for part in loc:
        if isinstance(part, str):
            needle = f'"{part}"'
            idx = text.find(needle)
            if idx >= 0:
                return text.count("\n", 0, idx) + 1
    return None


def save_graph(g: HeteroGraph, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(graph_to_document(g), sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote graph to %s", path)
    return path


# ============================================================================
# Structural operations
# ============================================================================

def _same_pattern(a: sp.csr_matrix, b: sp.csr_matrix) -> bool:
    if a.shape != b.shape or a.nnz != b.nnz:
        return False
    return (a != b).nnz == 0


def add_reverse_relations(g: HeteroGraph) -> HeteroGraph:
    """
    Append the transpose of every directed relation.

    Relations already flagged as reverse, symmetric same-type relations and
    relations whose transpose is already present are left alone, so the
    operation is idempotent.
    """
    relations = list(g.relations)
    names = {rel.name for rel in relations}
    added = 0
    for rel in list(g.relations):
        if rel.is_reverse:
            continue
        transposed = rel.edges.transpose().tocsr()
        transposed.sort_indices()
        if rel.src_type == rel.dst_type and _same_pattern(rel.edges, transposed):
            continue
        if any(
            other.src_type == rel.dst_type
            and other.dst_type == rel.src_type
            and _same_pattern(other.edges, transposed)
            for other in relations
            if other is not rel
        ):
            continue
        rev_name = f"{rel.name}_rev"
        while rev_name in names:
            rev_name += "_"
        names.add(rev_name)
        relations.append(RelationDef(
            name=rev_name,
            src_type=rel.dst_type,
            dst_type=rel.src_type,
            edges=transposed,
            is_reverse=True,
        ))
        added += 1
    logger.debug("Added %d reverse relations", added)
    return replace(g, relations=tuple(relations))


def relation_structures(g: HeteroGraph) -> Tuple[List[sp.csr_matrix], List[sp.csr_matrix]]:
    """
    Return the relation adjacencies A_i and the node-type diagonal masks I_j.

    The masks partition the identity: sum_j I_j = I.
    """
    adjacencies = [rel.edges for rel in g.relations]
    type_of = g.node_type_of
    masks = [
        sp.diags((type_of == t).astype(np.float64), format="csr")
        for t in range(g.num_types)
    ]
    return adjacencies, masks


def homogenized_adjacency(g: HeteroGraph, self_loops: bool = True) -> sp.csr_matrix:
    """Sum of all relation adjacencies (+ I), i.e. the graph with types erased."""
    n = g.num_nodes
    total = sp.csr_matrix((n, n), dtype=np.float64)
    for rel in g.relations:
        total = total + rel.edges
    if self_loops:
        total = total + sp.identity(n, format="csr", dtype=np.float64)
    total = total.tocsr()
    total.sort_indices()
    return total


# ============================================================================
# Synthetic generation
# ============================================================================

def _balanced_classes(count: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Class per node with class sizes within one of each other."""
    classes = np.arange(count) % num_classes
    return rng.permutation(classes)


def same_class_probability(strength: float, num_classes: int) -> float:
    """
    Map a homophily strength to P(endpoint shares the class).

    0.5 reproduces the uniform rate 1/C for any C; 1.0 always matches; 0.0 never does.
    """
    base = 1.0 / num_classes
    if strength >= 0.5:
        return base + (2.0 * strength - 1.0) * (1.0 - base)
    return 2.0 * strength * base


def _split_indices(count: int, rng: np.random.Generator) -> Splits:
    perm = rng.permutation(count)
    if count >= 1000:
        n_train, n_valid = 400, 400
    else:
        n_train = max(1, int(round(0.1 * count)))
        n_valid = max(1, int(round(0.1 * count)))
    if n_train + n_valid >= count:
        raise GenerationError(f"target type with {count} nodes is too small to split")
    return Splits(
        train=np.sort(perm[:n_train]),
        valid=np.sort(perm[n_train:n_train + n_valid]),
        test=np.sort(perm[n_train + n_valid:]),
    )


def generate_synthetic(spec: SyntheticSpec, seed: Optional[int] = None) -> HeteroGraph:
    """
    Generate a class-affiliated heterogeneous graph.

    Every node of every type is affiliated with one of `num_classes` classes;
    target-type affiliations are the labels. Each src node of a relation emits
    Poisson(avg_degree) edges (at least one) whose dst endpoint shares its class
    with probability `same_class_probability(homophily, C)`.

    Args:
        spec: Generator parameters
        seed: Overrides spec.seed when given

    Returns:
        Validated HeteroGraph with labels and splits on the target type
    """
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    c = spec.num_classes
    names = [nt.name for nt in spec.node_types]
    counts = [nt.count for nt in spec.node_types]
    target = names.index(spec.target)

    if counts[target] < c:
        raise GenerationError(
            f"target type has {counts[target]} nodes but {c} classes were requested"
        )

    classes = [_balanced_classes(count, c, rng) for count in counts]

    features = []
    for t, nt in enumerate(spec.node_types):
        if nt.feature_dim is None and t != target:
            features.append(one_hot_features(nt.count))
            continue
        dim = nt.feature_dim or spec.feature_dim
        separation = spec.feature_separation if nt.feature_separation is None \
            else nt.feature_separation
        means = rng.normal(size=(c, dim))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        x = separation * means[classes[t]] + spec.noise * rng.normal(size=(nt.count, dim))
        features.append(x)

    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    n = int(sum(counts))
    relations = []
    for rel in spec.relations:
        s, d = names.index(rel.src), names.index(rel.dst)
        p_same = same_class_probability(rel.homophily, c)
        dst_by_class = [np.flatnonzero(classes[d] == k) for k in range(c)]
        dst_other = [np.flatnonzero(classes[d] != k) for k in range(c)]
        pairs = []
        for u in range(counts[s]):
            k = classes[s][u]
            degree = max(1, int(rng.poisson(rel.avg_degree)))
            for _ in range(degree):
                same = rng.random() < p_same
                pool = dst_by_class[k] if same else dst_other[k]
                if pool.size == 0:
                    pool = np.arange(counts[d])
                v = int(pool[rng.integers(pool.size)])
                if s == d and u == v:
                    continue
                pairs.append((u, v))
        relations.append(RelationDef(
            name=rel.name,
            src_type=s,
            dst_type=d,
            edges=_edges_to_csr(pairs, int(offsets[s]), int(offsets[d]), n),
        ))

    g = HeteroGraph(
        node_types=tuple(names),
        node_counts=tuple(counts),
        relations=tuple(relations),
        features=tuple(features),
        target_type=target,
        labels=classes[target].astype(np.int64),
        splits=_split_indices(counts[target], rng),
        generator={"seed": seed, "spec": spec.model_dump(mode="json")},
    )
    g.validate()
    logger.info(
        "Generated synthetic graph (seed=%d): %d nodes, %d relations, %d edges",
        seed, n, len(relations), sum(r.num_edges for r in relations),
    )
    return g


def random_hetero_graph(
    rng: np.random.Generator,
    counts: Sequence[int] = (3, 4),
    num_relations: int = 2,
    density: float = 0.3,
    feature_dims: Optional[Sequence[int]] = None,
    num_classes: int = 2,
) -> HeteroGraph:
    """
    Small random graph for gradient checks: random typed relations, Gaussian
    features and labels on type 0, every target node in exactly one split.
    """
    names = tuple(f"T{t}" for t in range(len(counts)))
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    n = int(sum(counts))
    feature_dims = feature_dims or [3] * len(counts)
    relations = []
    for r in range(num_relations):
        s = int(rng.integers(len(counts)))
        d = 0 if r == 0 else int(rng.integers(len(counts)))
        mask = rng.random((counts[s], counts[d])) < density
        pairs = [(int(u), int(v)) for u, v in zip(*np.nonzero(mask))]
        relations.append(RelationDef(
            name=f"R{r}", src_type=s, dst_type=d,
            edges=_edges_to_csr(pairs, int(offsets[s]), int(offsets[d]), n),
        ))
    target_count = counts[0]
    perm = rng.permutation(target_count)
    third = max(1, target_count // 3)
    g = HeteroGraph(
        node_types=names,
        node_counts=tuple(int(c) for c in counts),
        relations=tuple(relations),
        features=tuple(rng.normal(size=(c, dim)) for c, dim in zip(counts, feature_dims)),
        target_type=0,
        labels=rng.integers(num_classes, size=target_count),
        splits=Splits(
            train=np.sort(perm[:third]),
            valid=np.sort(perm[third:2 * third]),
            test=np.sort(perm[2 * third:]),
        ),
    )
    g.validate()
    return g
