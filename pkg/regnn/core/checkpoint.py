"""
JSON checkpoints holding the model config, every weight matrix and the
relation embeddings. Floats are written with repr precision, so a save/load
round trip is exact at float64.
"""

import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from regnn.core.relemb import RelationEmbeddings
from regnn.core.train import TrainedModel
from regnn.schemas.run_schemas import CheckpointFile, EmbeddingBlob


logger = logging.getLogger(__name__)


class CheckpointError(ValueError):
    """Checkpoint file is malformed or does not match the model."""


def _as_2d_list(arr: np.ndarray):
    return np.atleast_2d(np.asarray(arr, dtype=np.float64)).tolist()


def model_to_checkpoint(model: TrainedModel, graph_sha256: Optional[str] = None) -> CheckpointFile:
    emb = model.embeddings
    blob = EmbeddingBlob(
        lam=emb.lam if emb else model.config.lam,
        relation_names=list(emb.relation_names) if emb else [],
        type_names=list(emb.type_names) if emb else [],
        e=[e.tolist() for e in emb.e] if emb else [],
        s=[s.tolist() for s in emb.s] if emb else [],
    )
    return CheckpointFile(
        model=model.config,
        train=model.train_config,
        seed=model.train_config.seed,
        graph_sha256=graph_sha256,
        num_classes=model.num_classes,
        params={name: _as_2d_list(value) for name, value in sorted(model.params.items())},
        embeddings=blob,
    )


def save_checkpoint(model: TrainedModel, path: Path, graph_sha256: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = model_to_checkpoint(model, graph_sha256)
    path.write_text(doc.model_dump_json(by_alias=True, indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote checkpoint %s (%d arrays)", path, len(model.params))
    return path


def checkpoint_to_model(doc: CheckpointFile) -> TrainedModel:
    params = {name: np.asarray(rows, dtype=np.float64) for name, rows in doc.params.items()}
    emb = None
    if doc.embeddings.e:
        emb = RelationEmbeddings(
            lam=doc.embeddings.lam,
            e=[np.asarray(e, dtype=np.float64) for e in doc.embeddings.e],
            s=[np.asarray(s, dtype=np.float64) for s in doc.embeddings.s],
            relation_names=tuple(doc.embeddings.relation_names),
            type_names=tuple(doc.embeddings.type_names),
        )
    return TrainedModel(
        config=doc.model,
        train_config=doc.train,
        params=params,
        embeddings=emb,
        num_classes=doc.num_classes,
    )


def load_checkpoint(path: Path) -> TrainedModel:
    """
    Raises:
        FileNotFoundError: path does not exist
        CheckpointError: invalid JSON or schema
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        doc = CheckpointFile.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise CheckpointError(f"invalid checkpoint {path}: {e}") from e
    return checkpoint_to_model(doc)
