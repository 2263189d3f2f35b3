"""Run directories: atomic artifact writes and a checksummed manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

from .checkpoint import atomic_write_bytes
from .errors import ValidationError

METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "eval_acc", "seconds")


class RunDir:
    """All files of one run live under ``root``; each write is listed in ``manifest.json``."""

    def __init__(self, root, config_hash: str = ""):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.artifacts: dict[str, dict] = {}

    def path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if p != self.root and self.root not in p.parents:
            raise ValidationError(f"artifact path {name!r} escapes the run directory {self.root}")
        return p

    def write_bytes(self, name: str, data: bytes) -> Path:
        p = self.path(name)
        atomic_write_bytes(p, data)
        self.record(name)
        return p

    def record(self, name: str):
        """Register (or refresh) the checksum of a file already written under the root."""
        data = self.path(name).read_bytes()
        self.artifacts[name] = {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode())

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, sort_keys=True, indent=2) + "\n")

    def write_csv(self, name: str, rows: list[dict], columns) -> Path:
        return self.write_text(name, rows_to_csv(rows, columns))

    def finalize(self) -> Path:
        manifest = {"config_hash": self.config_hash,
                    "artifacts": [{"path": k, **v} for k, v in sorted(self.artifacts.items())]}
        p = self.path("manifest.json")
        atomic_write_bytes(p, (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode())
        return p


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
