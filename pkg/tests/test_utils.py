import logging

import pytest
from pydantic import ValidationError

from regnn.config import Settings
from regnn.utils.io import (
    calculate_file_hash,
    read_csv_rows,
    reproducibility_header,
    write_csv,
    write_json,
)
from regnn.utils.logging_config import setup_logging


def test_settings_read_prefixed_environment(monkeypatch):
    monkeypatch.setenv("REGNN_DEFAULT_SEED", "17")
    monkeypatch.setenv("REGNN_LOG_LEVEL", "debug")
    settings = Settings()
    assert settings.DEFAULT_SEED == 17
    assert settings.LOG_LEVEL == "DEBUG"


def test_settings_reject_unknown_dtype(monkeypatch):
    monkeypatch.setenv("REGNN_TRAIN_DTYPE", "float16")
    with pytest.raises(ValidationError):
        Settings()


def test_json_is_byte_stable(tmp_path):
    a = write_json(tmp_path / "a.json", {"b": 1, "a": [1.5, 2]})
    b = write_json(tmp_path / "b.json", {"a": [1.5, 2], "b": 1})
    assert a.read_bytes() == b.read_bytes()
    assert calculate_file_hash(a) == calculate_file_hash(b)


def test_csv_header_lines_are_skipped_on_read(tmp_path):
    path = write_csv(
        tmp_path / "w.csv", ["layer", "alpha"], [(0, 1.25), (1, 0.5)],
        header_lines=reproducibility_header(3, {"lambda": 100.0}),
    )
    text = path.read_text()
    assert text.splitlines()[:2] == ["# seed=3", '# config={"lambda":100.0}']
    assert read_csv_rows(path) == [{"layer": "0", "alpha": "1.25"}, {"layer": "1", "alpha": "0.5"}]


def test_setup_logging_installs_one_handler():
    setup_logging("WARNING", "text")
    setup_logging("INFO", "json")
    root = logging.getLogger()
    assert len(root.handlers) == 1
    assert root.level == logging.INFO
