"""
Artifact I/O helpers.
Hashing of input files and deterministic JSON/CSV writers for run outputs.
"""

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence


def calculate_file_hash(file_path: Path, algorithm: str = "sha256") -> str:
    """
    Calculate hash of a file.

    Args:
        file_path: Path to file
        algorithm: Hash algorithm (sha256, sha1, md5)

    Returns:
        Hex digest of hash
    """
    hasher = hashlib.new(algorithm)

    with open(file_path, "rb") as f:
        while chunk := f.read(8192):
            hasher.update(chunk)

    return hasher.hexdigest()


def dumps_json(payload: Any) -> str:
    """Serialize with sorted keys so reruns produce byte-identical files."""
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(payload), encoding="utf-8")
    return path


def read_json(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def reproducibility_header(seed: int, config: Dict[str, Any]) -> List[str]:
    """Comment lines prepended to CSV artifacts."""
    return [
        f"# seed={seed}",
        "# config=" + json.dumps(config, sort_keys=True, separators=(",", ":")),
    ]


def write_csv(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    header_lines: Optional[List[str]] = None,
) -> Path:
    """
    Write a CSV file, optionally preceded by '#' comment lines.

    Args:
        path: Destination file
        columns: Column names
        rows: Row values
        header_lines: Comment lines written before the column header
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in header_lines or []:
            f.write(line + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    return path


def read_csv_rows(path: Path) -> List[Dict[str, str]]:
    """Read a CSV written by write_csv, skipping comment lines."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))
