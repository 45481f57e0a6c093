import json

import numpy as np
import pytest

from regnn.core.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from regnn.core.hgraph import add_reverse_relations
from regnn.core.train import predict_logits, train
from regnn.schemas.run_schemas import ModelConfig, TrainConfig


@pytest.fixture
def trained(six_node_graph):
    g = add_reverse_relations(six_node_graph)
    result = train(ModelConfig(layers=2, hidden=4, dropout=0.0), g, TrainConfig(epochs=3, patience=3, lr=0.05))
    return g, result.model


def test_round_trip_reproduces_logits(tmp_path, trained):
    g, model = trained
    path = save_checkpoint(model, tmp_path / "ckpt" / "checkpoint.json", graph_sha256="abc")
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(predict_logits(loaded, g), predict_logits(model, g))
    assert loaded.config == model.config
    assert loaded.num_classes == 2
    for a, b in zip(loaded.embeddings.e, model.embeddings.e):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_keeps_lambda_key(tmp_path, trained):
    _, model = trained
    doc = json.loads(save_checkpoint(model, tmp_path / "c.json").read_text())
    assert doc["format"] == "regnn-checkpoint/1"
    assert doc["model"]["lambda"] == 100.0
    assert set(doc["params"]) == set(model.params)


def test_gtn_checkpoint_has_no_embeddings(tmp_path, six_node_graph):
    g = add_reverse_relations(six_node_graph)
    model = train(ModelConfig(backbone="gtn", layers=1, hidden=4), g, TrainConfig(epochs=1, patience=0)).model
    loaded = load_checkpoint(save_checkpoint(model, tmp_path / "g.json"))
    assert loaded.embeddings is None
    np.testing.assert_array_equal(predict_logits(loaded, g), predict_logits(model, g))


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.json")


def test_malformed_checkpoint(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "regnn-checkpoint/1", "params": {}}')
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
