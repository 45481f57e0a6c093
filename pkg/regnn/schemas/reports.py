"""
Pydantic schemas for run and verification reports.
Every JSON artifact written by the CLI is one of these models.
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


# ============================================================================
# Training Reports
# ============================================================================

class LayerWeights(BaseModel):
    """
    Learned weights of one layer, keyed by relation or type name.

    `relations` and `selfloops` hold the effective edge weights tau(alpha) and
    tau(beta); `alpha` and `beta` hold the raw embeddings lambda * e, lambda * s.
    """
    layer: int
    relations: Dict[str, float]
    selfloops: Dict[str, float]
    alpha: Dict[str, float] = Field(default_factory=dict)
    beta: Dict[str, float] = Field(default_factory=dict)


class ParamCountReport(BaseModel):
    total: int
    projection: int
    backbone: int
    embedding_per_layer: int
    embedding_total: int


class TrainReport(BaseModel):
    """Outcome of one training run. Deterministic for a fixed seed."""
    seed: int
    config: Dict[str, Any]
    epochs_run: int
    best_epoch: int
    best_valid_micro_f1: float = Field(..., ge=0.0, le=1.0)
    train_loss: List[float]
    valid_micro_f1: List[float]
    test_macro_f1: float = Field(..., ge=0.0, le=1.0)
    test_micro_f1: float = Field(..., ge=0.0, le=1.0)
    weights: List[LayerWeights] = Field(default_factory=list)
    # channel -> layer -> step -> candidate
    gtn_soft_weights: List[List[List[List[float]]]] = Field(default_factory=list)
    param_counts: ParamCountReport


class MultiRunReport(BaseModel):
    """Mean and standard deviation of test scores over several seeds."""
    seeds: List[int]
    test_macro_f1_mean: float
    test_macro_f1_std: float
    test_micro_f1_mean: float
    test_micro_f1_std: float
    runs: List[TrainReport]


class EvalReport(BaseModel):
    """Scores of a checkpoint on a graph's test split."""
    checkpoint: str
    seed: int
    test_macro_f1: float
    test_micro_f1: float
    nmi: float
    ari: float
    clustering_restarts: int


class SweepPoint(BaseModel):
    lam: float
    test_micro_f1: float
    alpha_std_per_layer: List[float]
    max_abs_alpha_deviation: float


class SweepReport(BaseModel):
    seed: int
    config: Dict[str, Any]
    points: List[SweepPoint]


# ============================================================================
# Verification Reports
# ============================================================================

class ScalingReport(BaseModel):
    """Two-trajectory comparison of an optimizer fed g and lambda * g."""
    kind: str
    lam: float
    eps: float
    steps: int
    traces: int = 1
    observed_e_ratio: List[float]
    observed_alpha_ratio: List[float]
    expected_e_ratio: float
    expected_alpha_ratio: float
    max_deviation: float
    max_buffer_deviation: float = 0.0
    tolerance: float
    asserted: bool
    passed: bool


class EquivalenceReport(BaseModel):
    """Numeric witness for one expressivity construction."""
    construction: str
    max_deviation: float
    tolerance: float
    bound_checks: Dict[str, bool] = Field(default_factory=dict)
    details: Dict[str, Any] = Field(default_factory=dict)
    skipped: bool = False
    passed: bool


class CheckRecord(BaseModel):
    name: str
    status: str
    execution_time_seconds: float
    error_message: Optional[str] = None
    report: Optional[Dict[str, Any]] = None


class VerifySummary(BaseModel):
    seed: int
    passed: bool
    total: int
    failed: int
    checks: List[CheckRecord]
