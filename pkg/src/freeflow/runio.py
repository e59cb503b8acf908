"""Run directories: manifests, deterministic CSV tables, checkpoint naming.

Every experiment writes into one directory holding exactly one manifest
(resolved config, seed, code version, start time, checkpoint names, config
hash). Metrics CSVs contain no timestamps so identical (seed, config) runs
produce byte-identical files.
"""

from __future__ import annotations

import datetime
import json
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, dump_config
from .errors import ConfigurationError


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        if isinstance(row, dict):
            row = [row[c] for c in columns]
        if len(row) != len(columns):
            raise ConfigurationError("csv row length does not match columns")
        lines.append(",".join(format_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    text = Path(path).read_text(encoding="utf-8").strip().split("\n")
    header = text[0].split(",")
    return header, [line.split(",") for line in text[1:]]


class RunDir:
    """Single-writer run directory with one manifest."""

    def __init__(self, path, cfg: RunConfig, seed: int, command: str):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        existing = self.path / "manifest.json"
        if existing.exists():
            raise ConfigurationError(f"{self.path} already contains a manifest")
        self.cfg = cfg
        self.seed = seed
        self.command = command
        self.checkpoints: list[str] = []
        self._write_manifest()
        (self.path / "config.toml").write_text(dump_config(cfg), encoding="utf-8")

    def _write_manifest(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.cfg.to_dict(),
            "config_hash": config_hash(self.cfg),
            "seed": self.seed,
            "version": __version__,
            "started": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "checkpoints": self.checkpoints,
        }
        (self.path / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def register_checkpoint(self, name: str) -> Path:
        self.checkpoints.append(name)
        self._write_manifest()
        return self.path / name

    def csv(self, name: str, columns, rows) -> Path:
        out = self.path / name
        write_csv(out, columns, rows)
        return out
