"""
Pydantic schemas for the on-disk graph format and the synthetic generator.
Defines the contract between graph files and the in-memory HeteroGraph.
"""

from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


GRAPH_FORMAT = "regnn-graph/1"


# ============================================================================
# Graph File Schemas
# ============================================================================

class NodeTypeSpec(BaseModel):
    """One node type block of a graph file."""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    count: int = Field(..., ge=1)
    features: Optional[List[List[float]]] = None
    labels: Optional[List[int]] = None
    target: bool = False

    @model_validator(mode="after")
    def check_shapes(self) -> "NodeTypeSpec":
        if self.features is not None:
            if len(self.features) != self.count:
                raise ValueError(
                    f"features has {len(self.features)} rows, expected {self.count}"
                )
            widths = {len(row) for row in self.features}
            if len(widths) != 1 or 0 in widths:
                raise ValueError("feature rows must share one non-zero width")
        if self.labels is not None:
            if len(self.labels) != self.count:
                raise ValueError(
                    f"labels has {len(self.labels)} entries, expected {self.count}"
                )
            if min(self.labels) < 0:
                raise ValueError("labels must be non-negative class ids")
            if not self.target:
                raise ValueError("labels are only allowed on the target node type")
        return self


class RelationSpec(BaseModel):
    """An edge type; pairs are [src_local, dst_local] and messages flow src -> dst."""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    src: str
    dst: str
    edges: List[Tuple[int, int]] = Field(default_factory=list)


class SplitSpec(BaseModel):
    """Train/valid/test local indices over target-type nodes."""
    model_config = ConfigDict(extra="forbid")

    train: List[int] = Field(default_factory=list)
    valid: List[int] = Field(default_factory=list)
    test: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_disjoint(self) -> "SplitSpec":
        sets = [set(self.train), set(self.valid), set(self.test)]
        if len(sets[0]) != len(self.train) or len(sets[1]) != len(self.valid) \
                or len(sets[2]) != len(self.test):
            raise ValueError("split index lists must not contain duplicates")
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("train/valid/test splits must be pairwise disjoint")
        return self


class GraphFile(BaseModel):
    """Top-level graph document."""
    model_config = ConfigDict(extra="forbid")

    format: Literal["regnn-graph/1"]
    node_types: List[NodeTypeSpec] = Field(..., min_length=1)
    relations: List[RelationSpec] = Field(default_factory=list)
    splits: Optional[SplitSpec] = None
    generator: Optional[Dict[str, Any]] = None

    @model_validator(mode="after")
    def check_references(self) -> "GraphFile":
        names = [nt.name for nt in self.node_types]
        if len(set(names)) != len(names):
            raise ValueError("node type names must be unique")
        if sum(1 for nt in self.node_types if nt.target) > 1:
            raise ValueError("at most one node type may be the target")
        rel_names = [r.name for r in self.relations]
        if len(set(rel_names)) != len(rel_names):
            raise ValueError("relation names must be unique")
        for rel in self.relations:
            for endpoint in (rel.src, rel.dst):
                if endpoint not in names:
                    raise ValueError(
                        f"relation '{rel.name}' references unknown node type '{endpoint}'"
                    )
        if self.splits is not None and not any(
            nt.target and nt.labels is not None for nt in self.node_types
        ):
            raise ValueError("splits require a labelled target node type")
        return self


# ============================================================================
# Synthetic Generator Schemas
# ============================================================================

class SyntheticNodeType(BaseModel):
    """Node type of a synthetic graph; feature_dim None means one-hot identity features."""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    count: int = Field(..., ge=1)
    feature_dim: Optional[int] = Field(default=None, ge=1)
    feature_separation: Optional[float] = Field(default=None, ge=0.0)


class SyntheticRelation(BaseModel):
    """Relation of a synthetic graph; every src node emits avg_degree edges."""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    src: str
    dst: str
    homophily: float = Field(..., ge=0.0, le=1.0)
    avg_degree: float = Field(default=2.0, gt=0.0)


class SyntheticSpec(BaseModel):
    """Parameters of the class-affiliated heterogeneous block generator."""
    model_config = ConfigDict(extra="forbid")

    node_types: List[SyntheticNodeType] = Field(..., min_length=1)
    target: str
    num_classes: int = Field(..., ge=2)
    relations: List[SyntheticRelation] = Field(default_factory=list)
    feature_dim: int = Field(default=16, ge=1)
    feature_separation: float = Field(default=1.0, ge=0.0)
    noise: float = Field(default=1.0, ge=0.0)
    seed: int = Field(default=0, ge=0)

    @field_validator("relations")
    @classmethod
    def unique_relation_names(cls, v: List[SyntheticRelation]) -> List[SyntheticRelation]:
        names = [r.name for r in v]
        if len(set(names)) != len(names):
            raise ValueError("relation names must be unique")
        return v

    @model_validator(mode="after")
    def check_references(self) -> "SyntheticSpec":
        names = [nt.name for nt in self.node_types]
        if len(set(names)) != len(names):
            raise ValueError("node type names must be unique")
        if self.target not in names:
            raise ValueError(f"target type '{self.target}' is not declared")
        for rel in self.relations:
            if rel.src not in names or rel.dst not in names:
                raise ValueError(f"relation '{rel.name}' references an unknown node type")
        return self


def skewed_homophily_spec(
    target_count: int = 300,
    num_classes: int = 3,
    informative_homophily: float = 0.95,
    seed: int = 0,
) -> SyntheticSpec:
    """
    Preset with one informative relation and several noisy ones.

    Only the A nodes carry class features. Every P node links to at least one A
    node through the informative P-A relation and to many class-independent A
    nodes through P-A-random. After add_reverse_relations both reverses feed
    the same projected A features into P, so only a per-relation weight can
    separate them. P features and the P-P relation are pure noise.
    """
    return SyntheticSpec(
        node_types=[
            SyntheticNodeType(name="P", count=target_count, feature_separation=0.0),
            SyntheticNodeType(name="A", count=max(target_count, num_classes), feature_dim=16,
                              feature_separation=3.0),
        ],
        target="P",
        num_classes=num_classes,
        relations=[
            SyntheticRelation(name="P-A", src="P", dst="A",
                              homophily=informative_homophily, avg_degree=3.0),
            SyntheticRelation(name="P-A-random", src="P", dst="A", homophily=0.5, avg_degree=30.0),
            SyntheticRelation(name="P-P", src="P", dst="P", homophily=0.5, avg_degree=3.0),
        ],
        feature_dim=16,
        noise=1.0,
        seed=seed,
    )
