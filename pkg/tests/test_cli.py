import json

import pytest

from regnn.core.hgraph import add_reverse_relations, generate_synthetic
from regnn.core.relemb import tau
from regnn.core.train import train
from regnn.main import EXIT_OK, EXIT_USAGE, build_parser, resolve_run_config, run_command, weight_rows
from regnn.schemas.graph_schemas import skewed_homophily_spec
from regnn.schemas.run_schemas import ModelConfig, TrainConfig
from regnn.utils.io import read_csv_rows, read_json


FAST_RUN = {
    "model": {"layers": 2, "hidden": 8, "dropout": 0.0},
    "train": {"epochs": 3, "patience": 3, "lr": 0.01},
}


@pytest.fixture
def workspace(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(skewed_homophily_spec(target_count=60).model_dump_json())
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(FAST_RUN))
    graph_dir = tmp_path / "data"
    assert run_command(["gen", "--config", str(spec_path), "--seed", "1", "--out", str(graph_dir)]) == EXIT_OK
    return tmp_path, graph_dir / "graph.json", config_path


def _train(graph, config, out, *extra):
    return run_command([
        "train", "--graph", str(graph), "--config", str(config), "--out", str(out), *extra,
    ])


def test_gen_writes_graph(workspace):
    _, graph, _ = workspace
    doc = read_json(graph)
    assert doc["format"] == "regnn-graph/1"
    assert doc["generator"]["seed"] == 1


def test_train_eval_inspect(workspace):
    tmp_path, graph, config = workspace
    run_dir = tmp_path / "run"
    assert _train(graph, config, run_dir, "--seed", "2") == EXIT_OK
    for name in ("checkpoint.json", "train_report.json", "timing.json", "curve.csv"):
        assert (run_dir / name).exists()
    report = read_json(run_dir / "train_report.json")
    assert report["seed"] == 2
    assert len(read_csv_rows(run_dir / "curve.csv")) == report["epochs_run"]

    checkpoint = run_dir / "checkpoint.json"
    assert run_command([
        "eval", "--graph", str(graph), "--checkpoint", str(checkpoint), "--out", str(run_dir),
    ]) == EXIT_OK
    evaluation = read_json(run_dir / "eval_report.json")
    assert 0.0 <= evaluation["test_micro_f1"] <= 1.0
    assert evaluation["clustering_restarts"] == 10

    assert run_command(["inspect-weights", "--checkpoint", str(checkpoint), "--out", str(run_dir)]) == EXIT_OK
    rows = read_csv_rows(run_dir / "weights.csv")
    assert {r["kind"] for r in rows} == {"relation", "selfloop"}
    assert {int(r["layer"]) for r in rows} == {0, 1}
    assert float(rows[0]["weight"]) == pytest.approx(tau(float(rows[0]["alpha"])))
    assert (run_dir / "weights.csv").read_text().startswith("# seed=2")


def test_multiple_runs_write_per_seed_directories(workspace):
    tmp_path, graph, config = workspace
    out = tmp_path / "multi"
    assert _train(graph, config, out, "--runs", "2", "--seed", "4") == EXIT_OK
    assert (out / "seed_4" / "checkpoint.json").exists()
    assert (out / "seed_5" / "checkpoint.json").exists()
    assert read_json(out / "multi_run_report.json")["seeds"] == [4, 5]


def test_sweep(workspace):
    tmp_path, graph, config = workspace
    out = tmp_path / "sweep"
    assert run_command([
        "sweep", "--graph", str(graph), "--config", str(config), "--lams", "1", "10", "--out", str(out),
    ]) == EXIT_OK
    assert [p["lam"] for p in read_json(out / "sweep_report.json")["points"]] == [1.0, 10.0]


def test_inspect_weights_rejects_gtn(workspace):
    tmp_path, graph, config = workspace
    out = tmp_path / "gtn"
    assert _train(graph, config, out, "--backbone", "gtn") == EXIT_OK
    assert run_command(["inspect-weights", "--checkpoint", str(out / "checkpoint.json"), "--out", str(out)]) == EXIT_USAGE



def test_same_seed_writes_identical_reports(workspace):
    tmp_path, graph, config = workspace
    for name in ("a", "b"):
        assert _train(graph, config, tmp_path / name, "--seed", "3") == EXIT_OK
    for name in ("train_report.json", "checkpoint.json", "curve.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_weight_rows_report_raw_alpha_and_edge_weight():
    g = add_reverse_relations(generate_synthetic(skewed_homophily_spec(target_count=60)))
    model = train(ModelConfig(layers=2, hidden=4, dropout=0.0), g, TrainConfig(epochs=1, patience=0)).model
    lam = model.embeddings.lam
    model.embeddings.e[0][0] = -2.0 / lam
    name = model.embeddings.relation_names[0]

    rows = {(r[0], r[1], r[2]): r for r in weight_rows(model)}
    _, _, _, alpha, weight = rows[(0, "relation", name)]
    assert alpha == pytest.approx(-2.0)
    assert weight == pytest.approx(-0.02)

    kept = {(r[0], r[1], r[2]) for r in weight_rows(model, min_weight=0.0)}
    assert (0, "relation", name) not in kept
    assert len(kept) == len(rows) - 1


@pytest.mark.slow
def test_inspect_weights_ranks_planted_relation_first(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(skewed_homophily_spec(target_count=600).model_dump_json())
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({
        "model": {"layers": 2, "hidden": 16, "dropout": 0.0, "lambda": 10.0},
        "train": {"epochs": 150, "patience": 50, "lr": 0.01},
    }))
    assert run_command(["gen", "--config", str(spec_path), "--out", str(tmp_path / "data")]) == EXIT_OK
    run_dir = tmp_path / "run"
    assert _train(tmp_path / "data" / "graph.json", config_path, run_dir) == EXIT_OK
    assert run_command([
        "inspect-weights", "--checkpoint", str(run_dir / "checkpoint.json"), "--out", str(run_dir),
    ]) == EXIT_OK

    into_targets = {"P-A_rev", "P-A-random_rev", "P-P", "P-P_rev"}
    rows = [r for r in read_csv_rows(run_dir / "weights.csv")
            if r["kind"] == "relation" and r["name"] in into_targets]
    best = {}
    for r in rows:
        layer = int(r["layer"])
        if layer not in best or float(r["alpha"]) > float(best[layer]["alpha"]):
            best[layer] = r
    assert any(r["name"] == "P-A_rev" for r in best.values())



# ============================================================================
# Usage errors
# ============================================================================

def test_help_exits_cleanly():
    assert run_command(["--help"]) == EXIT_OK


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["train"],
    ["train", "--graph", "g.json", "--backbone", "mlp"],
])
def test_bad_arguments(argv):
    assert run_command(argv) == EXIT_USAGE


def test_missing_graph_file(tmp_path):
    assert run_command(["train", "--graph", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_USAGE


def test_resgc_with_symmetric_norm_is_rejected(workspace):
    tmp_path, graph, config = workspace
    code = _train(graph, config, tmp_path / "x", "--backbone", "resgc", "--norm", "sym")
    assert code == EXIT_USAGE


def test_invalid_config_file(workspace):
    tmp_path, graph, _ = workspace
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"layers": 0}}))
    assert _train(graph, bad, tmp_path / "x") == EXIT_USAGE


def test_zero_runs_rejected(workspace):
    tmp_path, graph, config = workspace
    assert _train(graph, config, tmp_path / "x", "--runs", "0") == EXIT_USAGE


def test_flags_override_config_file(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"model": {"lambda": 5.0, "layers": 3}, "train": {"lambda": 7.0}}))
    args = build_parser().parse_args([
        "train", "--graph", "g.json", "--config", str(config), "--lambda", "20", "--freeze-selfloops",
    ])
    run = resolve_run_config(args)
    assert run.model.lam == 20.0
    assert run.train.lam is None
    assert run.model.layers == 3
    assert run.model.freeze_selfloops
