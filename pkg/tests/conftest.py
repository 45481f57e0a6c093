"""Shared fixtures: small hand-built graphs, dataset-shaped schemas and generator specs."""

import numpy as np
import pytest

from regnn.core.hgraph import HeteroGraph, graph_from_document
from regnn.schemas.graph_schemas import GRAPH_FORMAT, GraphFile, skewed_homophily_spec


def make_graph(doc: dict) -> HeteroGraph:
    return graph_from_document(GraphFile.model_validate({"format": GRAPH_FORMAT, **doc}))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def three_node_graph() -> HeteroGraph:
    """Global ids: A0 = 0, B0 = 1, B1 = 2; relation r carries B0 -> A0 and B1 -> A0."""
    return make_graph({
        "node_types": [{"name": "A", "count": 1}, {"name": "B", "count": 2}],
        "relations": [{"name": "r", "src": "B", "dst": "A", "edges": [[0, 0], [1, 0]]}],
    })


@pytest.fixture
def six_node_doc() -> dict:
    """Four labelled papers and two authors with a writes and a cites relation."""
    feat = np.random.default_rng(7)
    return {
        "node_types": [
            {
                "name": "P", "count": 4, "target": True,
                "features": feat.normal(size=(4, 3)).round(6).tolist(),
                "labels": [0, 1, 0, 1],
            },
            {"name": "A", "count": 2, "features": feat.normal(size=(2, 2)).round(6).tolist()},
        ],
        "relations": [
            {"name": "writes", "src": "A", "dst": "P", "edges": [[0, 0], [0, 2], [1, 1], [1, 3]]},
            {"name": "cites", "src": "P", "dst": "P", "edges": [[0, 1], [1, 2], [2, 3], [3, 0], [0, 2]]},
        ],
        "splits": {"train": [0, 1], "valid": [2], "test": [3]},
    }


@pytest.fixture
def six_node_graph(six_node_doc) -> HeteroGraph:
    return make_graph(six_node_doc)


@pytest.fixture
def dblp_graph() -> HeteroGraph:
    """DBLP-shaped: A, P, T, V with directed A-P, P-T, P-V."""
    return make_graph({
        "node_types": [
            {"name": "A", "count": 3, "target": True, "labels": [0, 1, 0]},
            {"name": "P", "count": 4},
            {"name": "T", "count": 2},
            {"name": "V", "count": 2},
        ],
        "relations": [
            {"name": "A-P", "src": "A", "dst": "P", "edges": [[0, 0], [1, 1], [2, 2], [0, 3]]},
            {"name": "P-T", "src": "P", "dst": "T", "edges": [[0, 0], [1, 1], [2, 0], [3, 1]]},
            {"name": "P-V", "src": "P", "dst": "V", "edges": [[0, 0], [1, 1], [2, 1], [3, 0]]},
        ],
    })


@pytest.fixture
def acm_graph() -> HeteroGraph:
    """ACM-shaped: P, A, S with P-P (cites), P-A and P-S."""
    return make_graph({
        "node_types": [
            {"name": "P", "count": 4, "target": True, "labels": [0, 1, 2, 0]},
            {"name": "A", "count": 3},
            {"name": "S", "count": 2},
        ],
        "relations": [
            {"name": "P-P", "src": "P", "dst": "P", "edges": [[0, 1], [1, 2], [3, 0]]},
            {"name": "P-A", "src": "P", "dst": "A", "edges": [[0, 0], [1, 1], [2, 2], [3, 0]]},
            {"name": "P-S", "src": "P", "dst": "S", "edges": [[0, 0], [1, 1], [2, 0], [3, 1]]},
        ],
    })


@pytest.fixture
def skewed_spec():
    return skewed_homophily_spec(target_count=150, num_classes=3, seed=0)
