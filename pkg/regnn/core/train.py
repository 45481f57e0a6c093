"""
Full-batch training with early stopping, embedding extraction,
multi-seed aggregation and the lambda sweep.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from regnn.config import settings
from regnn.core.autodiff import softmax_cross_entropy
from regnn.core.hgraph import HeteroGraph
from regnn.core.layers import (
    ForwardPass,
    gtn_soft_weights,
    init_params,
    model_forward,
    param_count,
)
from regnn.core.metrics import evaluate_f1
from regnn.core.optim import Optimizer
from regnn.core.relemb import (
    AdjacencyPattern,
    RelationEmbeddings,
    embeddings_for_graph,
    graph_pattern,
    tau,
)
from regnn.schemas.reports import (
    LayerWeights,
    MultiRunReport,
    ParamCountReport,
    SweepPoint,
    SweepReport,
    TrainReport,
)
from regnn.schemas.run_schemas import Backbone, ModelConfig, TrainConfig, resolve_model_config


logger = logging.getLogger(__name__)


class TrainingError(ValueError):
    """The graph cannot be trained on (no labels, no splits, empty train set)."""


@dataclass
class TrainedModel:
    """Parameters and embeddings of a trained model plus the configs that built it."""
    config: ModelConfig
    train_config: TrainConfig
    params: Dict[str, np.ndarray] = field(repr=False)
    embeddings: Optional[RelationEmbeddings] = field(repr=False)
    num_classes: int = 0

    def forward(
        self,
        g: HeteroGraph,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float64,
        pattern: Optional[AdjacencyPattern] = None,
    ) -> ForwardPass:
        return model_forward(
            self.config, g, self.embeddings, self.params,
            training=training, rng=rng, dtype=dtype, pattern=pattern,
        )

    def snapshot(self) -> Tuple[Dict[str, np.ndarray], Optional[Tuple[list, list]]]:
        params = {k: v.copy() for k, v in self.params.items()}
        emb = None
        if self.embeddings is not None:
            emb = ([e.copy() for e in self.embeddings.e], [s.copy() for s in self.embeddings.s])
        return params, emb

    def restore(self, snap) -> None:
        params, emb = snap
        self.params = {k: v.copy() for k, v in params.items()}
        if emb is not None:
            self.embeddings.e = [e.copy() for e in emb[0]]
            self.embeddings.s = [s.copy() for s in emb[1]]

    def layer_weights(self) -> List[LayerWeights]:
        """Raw alpha, beta and the edge weights tau(alpha), tau(beta) per layer, keyed by name."""
        if self.embeddings is None:
            return []
        emb = self.embeddings
        out = []
        for l in range(emb.num_layers):
            alpha = np.atleast_1d(emb.alpha(l))
            beta = np.atleast_1d(emb.beta(l))
            out.append(LayerWeights(
                layer=l,
                relations={n: float(w) for n, w in zip(emb.relation_names, tau(alpha))},
                selfloops={n: float(w) for n, w in zip(emb.type_names, tau(beta))},
                alpha={n: float(a) for n, a in zip(emb.relation_names, alpha)},
                beta={n: float(b) for n, b in zip(emb.type_names, beta)},
            ))
        return out


@dataclass
class TrainResult:
    model: TrainedModel
    report: TrainReport
    wall_clock_seconds: float


def _require_supervision(g: HeteroGraph) -> None:
    if g.target_type is None or g.labels is None:
        raise TrainingError("graph has no labelled target node type")
    if g.splits is None or g.splits.train.size == 0:
        raise TrainingError("graph has no labelled training nodes")
    if g.splits.valid.size == 0 or g.splits.test.size == 0:
        raise TrainingError("validation and test splits must be non-empty")


def build_model(
    model_config: ModelConfig,
    g: HeteroGraph,
    tc: TrainConfig,
    num_classes: int,
    init_rng: np.random.Generator,
) -> TrainedModel:
    config = resolve_model_config(model_config, tc)
    params = init_params(config, g, num_classes, init_rng)
    emb = None
    if config.backbone != Backbone.GTN:
        emb = embeddings_for_graph(g, config.lam, config.layers)
    return TrainedModel(
        config=config, train_config=tc, params=params, embeddings=emb, num_classes=num_classes,
    )


def _collect_state(model: TrainedModel) -> Dict[str, np.ndarray]:
    """Flat name -> array view over params and embeddings for the optimizer."""
    state = dict(model.params)
    if model.embeddings is not None:
        for l in range(model.embeddings.num_layers):
            state[f"emb.e.{l}"] = model.embeddings.e[l]
            state[f"emb.s.{l}"] = model.embeddings.s[l]
    return state


def _write_back(model: TrainedModel, state: Dict[str, np.ndarray]) -> None:
    for name in model.params:
        model.params[name] = state[name]
    if model.embeddings is not None:
        for l in range(model.embeddings.num_layers):
            model.embeddings.e[l] = state[f"emb.e.{l}"]
            model.embeddings.s[l] = state[f"emb.s.{l}"]


def _gradients(fp: ForwardPass, state: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    grads = {}
    for name, var in list(fp.params.items()) + list(fp.embedding_vars.items()):
        grads[name] = var.grad.reshape(state[name].shape).astype(np.float64)
    return grads


def config_payload(config: ModelConfig, tc: TrainConfig) -> Dict:
    return {
        "model": config.model_dump(mode="json", by_alias=True),
        "train": tc.model_dump(mode="json", by_alias=True),
    }


class Trainer:
    """
    Full-batch trainer for one seed.

    Early stopping keeps the parameters of the best validation micro-F1 (an
    epoch counts as an improvement only when it is strictly better) and stops
    once more than `patience` consecutive epochs fail to improve.
    """

    def __init__(self, model_config: ModelConfig, g: HeteroGraph, tc: TrainConfig):
        _require_supervision(g)
        self.g = g
        self.tc = tc
        self.num_classes = g.num_classes
        init_seq, drop_seq = np.random.SeedSequence(tc.seed).spawn(2)
        self.init_rng = np.random.default_rng(init_seq)
        self.dropout_rng = np.random.default_rng(drop_seq)
        self.model = build_model(model_config, g, tc, self.num_classes, self.init_rng)
        self.pattern = None
        if self.model.config.backbone != Backbone.GTN:
            self.pattern = graph_pattern(g, self.model.config.selfloop)
        self.dtype = np.dtype(settings.TRAIN_DTYPE)
        self.optimizer = Optimizer(
            tc.optimizer, lr=tc.lr, weight_decay=tc.weight_decay, momentum=tc.momentum,
            beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps,
        )

    def _evaluate(self, mask: np.ndarray) -> Tuple[float, float]:
        fp = self.model.forward(self.g, training=False, dtype=self.dtype, pattern=self.pattern)
        return evaluate_f1(fp.logits.value, self.g.labels, mask, self.num_classes)

    def train_epoch(self) -> float:
        fp = self.model.forward(
            self.g, training=True, rng=self.dropout_rng, dtype=self.dtype, pattern=self.pattern,
        )
        loss = softmax_cross_entropy(fp.logits, self.g.labels, self.g.splits.train)
        fp.tape.backward(loss)
        state = _collect_state(self.model)
        no_decay = list(fp.embedding_vars) if self.tc.exempt_embedding_decay else []
        self.optimizer.step(state, _gradients(fp, state), no_decay=no_decay)
        _write_back(self.model, state)
        return float(loss.value[0, 0])

    def run(self) -> TrainResult:
        tc = self.tc
        splits = self.g.splits
        started = time.perf_counter()
        losses: List[float] = []
        valid_curve: List[float] = []
        best = -1.0
        best_epoch = 0
        best_snapshot = self.model.snapshot()
        stale = 0

        for epoch in range(tc.epochs):
            loss = self.train_epoch()
            _, valid_micro = self._evaluate(splits.valid)
            losses.append(loss)
            valid_curve.append(valid_micro)
            logger.debug("Epoch %d loss %.6f valid micro-F1 %.4f", epoch, loss, valid_micro)
            if valid_micro > best:
                best, best_epoch, stale = valid_micro, epoch, 0
                best_snapshot = self.model.snapshot()
            else:
                stale += 1
                if stale > tc.patience:
                    logger.info("Early stopping at epoch %d (best epoch %d)", epoch, best_epoch)
                    break

        self.model.restore(best_snapshot)
        test_macro, test_micro = self._evaluate(splits.test)
        elapsed = time.perf_counter() - started

        counts = param_count(self.model.config, self.g, self.num_classes)
        soft = []
        if self.model.config.backbone == Backbone.GTN:
            soft = [
                [gtn_soft_weights(self.model.params, c, l).tolist() for l in range(self.model.config.layers)]
                for c in range(self.model.config.gtn_channels)
            ]
        report = TrainReport(
            seed=tc.seed,
            config=config_payload(self.model.config, tc),
            epochs_run=len(losses),
            best_epoch=best_epoch,
            best_valid_micro_f1=best,
            train_loss=losses,
            valid_micro_f1=valid_curve,
            test_macro_f1=test_macro,
            test_micro_f1=test_micro,
            weights=self.model.layer_weights(),
            gtn_soft_weights=soft,
            param_counts=ParamCountReport(**counts.__dict__),
        )
        logger.info(
            "Trained %s (seed=%d): %d epochs, best valid micro-F1 %.4f, test micro-F1 %.4f",
            self.model.config.backbone, tc.seed, len(losses), best, test_micro,
        )
        return TrainResult(model=self.model, report=report, wall_clock_seconds=elapsed)


def train(model_config: ModelConfig, g: HeteroGraph, tc: TrainConfig) -> TrainResult:
    """Train one model; see Trainer."""
    return Trainer(model_config, g, tc).run()


def train_runs(
    model_config: ModelConfig,
    g: HeteroGraph,
    tc: TrainConfig,
    runs: int,
) -> Tuple[MultiRunReport, List[TrainResult]]:
    """Train seeds tc.seed .. tc.seed + runs - 1 and report mean and std of test F1."""
    if runs < 1:
        raise TrainingError(f"runs must be >= 1, got {runs}")
    results = [
        train(model_config, g, tc.model_copy(update={"seed": tc.seed + i}))
        for i in range(runs)
    ]
    macro = np.array([r.report.test_macro_f1 for r in results])
    micro = np.array([r.report.test_micro_f1 for r in results])
    report = MultiRunReport(
        seeds=[r.report.seed for r in results],
        test_macro_f1_mean=float(macro.mean()),
        test_macro_f1_std=float(macro.std()),
        test_micro_f1_mean=float(micro.mean()),
        test_micro_f1_std=float(micro.std()),
        runs=[r.report for r in results],
    )
    return report, results


def extract_embeddings(model: TrainedModel, g: HeteroGraph) -> np.ndarray:
    """
    Eval-mode representations of target-type nodes.

    For L > 1 these are the activations entering the last backbone layer; for
    L = 1 the aggregated projected features.
    """
    return model.forward(g, training=False).representation.value.copy()


def predict_logits(model: TrainedModel, g: HeteroGraph) -> np.ndarray:
    return model.forward(g, training=False).logits.value.copy()


# ============================================================================
# Lambda sweep
# ============================================================================

def alpha_statistics(emb: RelationEmbeddings) -> Tuple[List[float], float]:
    """Per-layer std of the relation alphas and the max |alpha - 1| over layers."""
    stds = [float(np.std(emb.alpha(l))) if emb.num_relations else 0.0
            for l in range(emb.num_layers)]
    deviation = max(
        (float(np.max(np.abs(emb.alpha(l) - 1.0))) for l in range(emb.num_layers)
         if emb.num_relations),
        default=0.0,
    )
    return stds, deviation


def sweep_lambda(
    model_config: ModelConfig,
    g: HeteroGraph,
    tc: TrainConfig,
    lams: Sequence[float],
) -> SweepReport:
    """Train the same model for each lambda and summarize the learned alphas."""
    if model_config.backbone == Backbone.GTN:
        raise TrainingError("the lambda sweep needs a relation-embedding backbone")
    points = []
    for lam in lams:
        result = train(model_config.model_copy(update={"lam": lam}), g, tc.model_copy(update={"lam": None}))
        stds, deviation = alpha_statistics(result.model.embeddings)
        points.append(SweepPoint(
            lam=lam,
            test_micro_f1=result.report.test_micro_f1,
            alpha_std_per_layer=stds,
            max_abs_alpha_deviation=deviation,
        ))
        logger.info("lambda=%g: layer alpha std %s", lam, ["%.4g" % s for s in stds])
    return SweepReport(seed=tc.seed, config=config_payload(model_config, tc), points=points)
