"""
Pydantic schemas for run configuration and checkpoints.
A --config file holds {"model": ModelConfig, "train": TrainConfig}.
"""

from enum import Enum
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


CHECKPOINT_FORMAT = "regnn-checkpoint/1"


class Backbone(str, Enum):
    """Homogeneous backbone the relation embeddings are plugged into."""
    REGCN = "regcn"
    RESGC = "resgc"
    REGIN = "regin"
    GTN = "gtn"


class NormMode(str, Enum):
    ROW = "row"
    SYM = "sym"


class SelfLoopMode(str, Enum):
    EMBEDDED = "embedded"
    IDENTITY = "identity"
    NONE = "none"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    MOMENTUM = "momentum"
    NESTEROV = "nesterov"
    ADAGRAD = "adagrad"
    ADAM = "adam"


# ============================================================================
# Run Configuration
# ============================================================================

class ModelConfig(BaseModel):
    """Architecture of one model. Defaults follow the four-layer, 64-unit setup."""
    model_config = ConfigDict(extra="forbid", populate_by_name=True, use_enum_values=True)

    backbone: Backbone = Backbone.REGCN
    layers: int = Field(default=4, ge=1)
    hidden: int = Field(default=64, ge=1)
    dropout: float = Field(default=0.6, ge=0.0, lt=1.0)
    lam: float = Field(default=100.0, gt=0.0, alias="lambda")
    norm: NormMode = NormMode.ROW
    selfloop: SelfLoopMode = SelfLoopMode.EMBEDDED
    freeze_relations: bool = False
    freeze_selfloops: bool = False
    gtn_channels: int = Field(default=1, ge=1)
    gtn_length: int = Field(default=2, ge=1)
    gtn_identity_candidate: bool = True
    gin_eps: float = 0.0
    output_head: bool = False

    @model_validator(mode="after")
    def check_combination(self) -> "ModelConfig":
        if self.backbone == Backbone.RESGC.value and self.norm != NormMode.ROW.value:
            raise ValueError("resgc only supports row normalization")
        return self


class TrainConfig(BaseModel):
    """
    Optimization settings.

    `lam` and `dropout` override the model's values when set.
    """
    model_config = ConfigDict(extra="forbid", populate_by_name=True, use_enum_values=True)

    epochs: int = Field(default=200, ge=1)
    patience: int = Field(default=50, ge=0)
    lr: float = Field(default=0.001, ge=0.0)
    weight_decay: float = Field(default=0.001, ge=0.0)
    dropout: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    optimizer: OptimizerKind = OptimizerKind.ADAM
    lam: Optional[float] = Field(default=None, gt=0.0, alias="lambda")
    seed: int = Field(default=0, ge=0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, ge=0.0)
    exempt_embedding_decay: bool = False

    @model_validator(mode="after")
    def check_patience(self) -> "TrainConfig":
        if self.patience > self.epochs:
            raise ValueError(
                f"patience ({self.patience}) must not exceed epochs ({self.epochs})"
            )
        return self


class RunConfig(BaseModel):
    """Top-level --config document."""
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)


def resolve_model_config(model: ModelConfig, train: TrainConfig) -> ModelConfig:
    """Apply the training overrides for lambda and dropout."""
    updates = {}
    if train.lam is not None:
        updates["lam"] = train.lam
    if train.dropout is not None:
        updates["dropout"] = train.dropout
    return model.model_copy(update=updates) if updates else model


# ============================================================================
# Checkpoint
# ============================================================================

class EmbeddingBlob(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lam: float
    relation_names: List[str]
    type_names: List[str]
    e: List[List[float]]
    s: List[List[float]]


class CheckpointFile(BaseModel):
    """Model config, every weight matrix and the relation embeddings."""
    model_config = ConfigDict(extra="forbid")

    format: Literal["regnn-checkpoint/1"] = CHECKPOINT_FORMAT
    model: ModelConfig
    train: TrainConfig
    seed: int
    graph_sha256: Optional[str] = None
    num_classes: int = Field(..., ge=1)
    params: Dict[str, List[List[float]]]
    embeddings: EmbeddingBlob
