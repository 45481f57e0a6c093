import numpy as np
import pytest

from regnn.core.hgraph import add_reverse_relations, generate_synthetic
from regnn.core.metrics import clustering_metrics, evaluate_f1, kmeans_cluster
from regnn.core.relemb import embeddings_for_graph
from regnn.core.train import (
    TrainingError,
    alpha_statistics,
    extract_embeddings,
    predict_logits,
    sweep_lambda,
    train,
    train_runs,
)
from regnn.schemas.graph_schemas import (
    SyntheticNodeType,
    SyntheticRelation,
    SyntheticSpec,
    skewed_homophily_spec,
)
from regnn.schemas.run_schemas import ModelConfig, TrainConfig


SMALL = ModelConfig(layers=2, hidden=8, dropout=0.0)


@pytest.fixture
def small_graph(skewed_spec):
    return add_reverse_relations(generate_synthetic(skewed_spec))


def test_zero_learning_rate_stops_after_patience(small_graph):
    for patience in (0, 3):
        tc = TrainConfig(epochs=20, patience=patience, lr=0.0, optimizer="sgd")
        report = train(SMALL, small_graph, tc).report
        assert report.epochs_run == patience + 2
        assert report.best_epoch == 0


def test_best_parameters_are_restored(small_graph):
    tc = TrainConfig(epochs=30, patience=5, lr=0.01)
    result = train(SMALL, small_graph, tc)
    report = result.report
    assert report.best_valid_micro_f1 == max(report.valid_micro_f1)
    assert report.epochs_run == len(report.train_loss) == len(report.valid_micro_f1)
    _, micro = evaluate_f1(
        predict_logits(result.model, small_graph), small_graph.labels, small_graph.splits.valid,
    )
    assert micro == report.best_valid_micro_f1


def test_training_is_deterministic(small_graph):
    tc = TrainConfig(epochs=5, patience=5, lr=0.01, dropout=0.5, seed=4)
    a = train(SMALL, small_graph, tc).report
    b = train(SMALL, small_graph, tc).report
    assert a.train_loss == b.train_loss
    assert a.test_micro_f1 == b.test_micro_f1


def test_train_overrides_lambda_and_dropout(small_graph):
    tc = TrainConfig(epochs=2, patience=1, lam=10.0, dropout=0.1)
    result = train(SMALL, small_graph, tc)
    assert result.model.config.lam == 10.0
    assert result.model.config.dropout == 0.1
    assert result.model.embeddings.lam == 10.0


def test_report_contents(small_graph):
    result = train(SMALL, small_graph, TrainConfig(epochs=3, patience=3))
    report = result.report
    assert len(report.weights) == 2
    assert set(report.weights[0].relations) == {r.name for r in small_graph.relations}
    assert report.param_counts.embedding_per_layer == small_graph.num_relations + small_graph.num_types
    assert report.config["model"]["lambda"] == 100.0
    assert result.wall_clock_seconds >= 0.0


def test_gtn_reports_soft_weights(small_graph):
    config = ModelConfig(backbone="gtn", layers=1, hidden=8, dropout=0.0)
    report = train(config, small_graph, TrainConfig(epochs=2, patience=1)).report
    assert report.weights == []
    soft = np.array(report.gtn_soft_weights[0][0])
    assert len(report.gtn_soft_weights[0]) == 1
    assert soft.shape == (2, small_graph.num_relations + 1)
    np.testing.assert_allclose(soft.sum(axis=1), 1.0)


def test_unsplit_graph_cannot_be_trained(dblp_graph):
    with pytest.raises(TrainingError):
        train(SMALL, dblp_graph, TrainConfig(epochs=1, patience=0))


def test_multiple_runs(small_graph):
    report, results = train_runs(SMALL, small_graph, TrainConfig(epochs=2, patience=1, seed=3), runs=2)
    assert report.seeds == [3, 4]
    assert len(results) == 2
    micro = [r.report.test_micro_f1 for r in results]
    assert report.test_micro_f1_mean == pytest.approx(np.mean(micro))
    assert report.test_micro_f1_std == pytest.approx(np.std(micro))


def test_embedding_shape(small_graph):
    result = train(SMALL, small_graph, TrainConfig(epochs=1, patience=0))
    emb = extract_embeddings(result.model, small_graph)
    assert emb.shape == (small_graph.node_counts[small_graph.target_type], 8)


def test_lambda_sweep_points(small_graph):
    report = sweep_lambda(SMALL, small_graph, TrainConfig(epochs=3, patience=3, lr=0.01), [1.0, 100.0])
    assert [p.lam for p in report.points] == [1.0, 100.0]
    assert all(len(p.alpha_std_per_layer) == 2 for p in report.points)


def test_lambda_sweep_rejects_gtn(small_graph):
    with pytest.raises(TrainingError):
        sweep_lambda(ModelConfig(backbone="gtn"), small_graph, TrainConfig(epochs=1, patience=0), [1.0])


# ============================================================================
# Longer runs
# ============================================================================

@pytest.mark.slow
def test_larger_lambda_moves_alphas_further(small_graph):
    tc = TrainConfig(epochs=50, patience=50, lr=0.01)
    tiny_std, large_std = [], []
    for seed in range(5):
        report = sweep_lambda(SMALL, small_graph, tc.model_copy(update={"seed": seed}), [0.001, 100.0])
        tiny, large = report.points
        assert tiny.max_abs_alpha_deviation <= 1e-2
        tiny_std.append(tiny.alpha_std_per_layer[0])
        large_std.append(large.alpha_std_per_layer[0])
    assert np.median(large_std) > np.median(tiny_std)


@pytest.mark.slow
def test_relation_weights_beat_uniform_weights():
    config = ModelConfig(layers=2, hidden=16, dropout=0.0, **{"lambda": 10.0})
    frozen_config = config.model_copy(update={"freeze_relations": True})
    learned, frozen = [], []
    for seed in range(5):
        g = add_reverse_relations(generate_synthetic(skewed_homophily_spec(target_count=1000), seed=seed))
        tc = TrainConfig(epochs=200, patience=50, lr=0.01, seed=seed)
        learned.append(train(config, g, tc).report.test_micro_f1)
        frozen.append(train(frozen_config, g, tc).report.test_micro_f1)
    assert np.median(learned) - np.median(frozen) >= 0.05


@pytest.mark.slow
def test_trained_embeddings_cluster_by_class():
    spec = SyntheticSpec(
        node_types=[SyntheticNodeType(name="P", count=200)],
        target="P",
        num_classes=2,
        relations=[SyntheticRelation(name="P-P", src="P", dst="P", homophily=1.0, avg_degree=4.0)],
        feature_separation=3.0,
        noise=0.5,
    )
    g = add_reverse_relations(generate_synthetic(spec))
    tc = TrainConfig(epochs=300, patience=300, lr=0.01, weight_decay=0.0)
    result = train(ModelConfig(layers=2, hidden=16, dropout=0.0), g, tc)
    assert min(result.report.train_loss) < 0.05
    test = g.splits.test
    emb = extract_embeddings(result.model, g)[test]
    nmi, ari = clustering_metrics(kmeans_cluster(emb, 2, seed=0), g.labels[test])
    assert nmi == pytest.approx(1.0)
    assert ari == pytest.approx(1.0)


def test_alpha_statistics_at_initialization(small_graph):
    stds, deviation = alpha_statistics(embeddings_for_graph(small_graph, 100.0, 2))
    assert stds == [0.0, 0.0]
    assert deviation == pytest.approx(0.0, abs=1e-12)
