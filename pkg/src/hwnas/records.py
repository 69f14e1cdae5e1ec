"""Objective vectors, evaluation records, and the append-only JSONL run log."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .search_space import CellGenome

OBJECTIVE_NAMES = ("error", "energy", "time")

SOURCE_BO = "bo"
SOURCE_RANDOM = "random"
SOURCE_REEVAL = "reeval"


class LogError(ValueError):
    """Corrupt or inconsistent run-log content."""


def normalize_subset(subset) -> tuple[str, ...]:
    """Canonicalize an objective subset to (error, energy, time) order."""
    if subset is None:
        return OBJECTIVE_NAMES
    chosen = set(subset)
    unknown = chosen - set(OBJECTIVE_NAMES)
    if unknown:
        raise ValueError(f"unknown objectives {sorted(unknown)}; valid: {OBJECTIVE_NAMES}")
    if not chosen:
        raise ValueError("objective subset must be non-empty")
    return tuple(name for name in OBJECTIVE_NAMES if name in chosen)


@dataclass(frozen=True)
class ObjectiveVector:
    """(error fraction, energy in joules, inference time in seconds); all minimized."""

    error: float
    energy_j: float
    time_s: float

    def __post_init__(self) -> None:
        for name, v in (("error", self.error), ("energy_j", self.energy_j), ("time_s", self.time_s)):
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if not 0.0 <= self.error <= 1.0:
            raise ValueError(f"error must be a fraction in [0, 1], got {self.error}")
        if self.energy_j < 0 or self.time_s < 0:
            raise ValueError("energy and time must be non-negative")

    def values(self, subset=None) -> tuple[float, ...]:
        sel = normalize_subset(subset)
        by_name = {"error": self.error, "energy": self.energy_j, "time": self.time_s}
        return tuple(by_name[name] for name in sel)

    def to_json_dict(self) -> dict:
        return {"error": self.error, "energy_j": self.energy_j, "time_s": self.time_s}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ObjectiveVector":
        return cls(float(d["error"]), float(d["energy_j"]), float(d["time_s"]))


def transform_values(values: np.ndarray, subset) -> np.ndarray:
    """Map raw objective columns to model space: error unchanged, energy/time logged.

    Energy and time span decades across devices, so their surrogates are fit
    on log values.  Zero is guarded with a tiny floor.
    """
    sel = normalize_subset(subset)
    out = np.asarray(values, dtype=float).copy()
    for j, name in enumerate(sel):
        if name in ("energy", "time"):
            out[..., j] = np.log(np.maximum(out[..., j], 1e-12))
    return out


def objective_matrix(records, subset=None) -> np.ndarray:
    sel = normalize_subset(subset)
    return np.array([r.objectives.values(sel) for r in records], dtype=float).reshape(
        len(records), len(sel)
    )


@dataclass(frozen=True)
class EvaluationRecord:
    """One measured architecture: genome, objectives, provenance."""

    genome: CellGenome
    objectives: ObjectiveVector
    device: str
    iteration: int
    source: str
    timestamp: str
    meta: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        # Key order is part of the log format.
        return {
            "iteration": self.iteration,
            "source": self.source,
            "device": self.device,
            "genome": self.genome.to_json_dict(),
            "objectives": self.objectives.to_json_dict(),
            "timestamp": self.timestamp,
            "meta": self.meta,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EvaluationRecord":
        return cls(
            genome=CellGenome.from_json_dict(d["genome"]),
            objectives=ObjectiveVector.from_json_dict(d["objectives"]),
            device=str(d["device"]),
            iteration=int(d["iteration"]),
            source=str(d["source"]),
            timestamp=str(d["timestamp"]),
            meta=dict(d.get("meta") or {}),
        )


def logical_timestamp(iteration: int) -> str:
    """Deterministic per-iteration timestamp.

    Run logs must be byte-identical across interrupt/resume and across
    repeated runs with the same seed, so records carry logical time (epoch +
    iteration seconds) rather than wall-clock time.
    """
    return datetime.fromtimestamp(iteration, tz=timezone.utc).isoformat()


def dump_log_line(d: dict) -> str:
    return json.dumps(d, separators=(",", ":"))


def append_log_line(path: str | Path, d: dict) -> None:
    """Append one JSON line and flush to disk immediately (crash-safe log)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(dump_log_line(d) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def read_log(path: str | Path) -> list[dict]:
    """Parse a JSONL run log into raw dicts (records and failure events alike)."""
    entries: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise LogError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return entries


def split_log_entries(entries: list[dict]) -> tuple[list[EvaluationRecord], list[dict]]:
    """Separate successful evaluation records from failure events.

    Failure events are lines with ``objectives`` null; they mark genomes whose
    evaluation failed after retries and must stay excluded from proposals.
    """
    records: list[EvaluationRecord] = []
    failures: list[dict] = []
    for entry in entries:
        if entry.get("objectives") is None:
            failures.append(entry)
        else:
            records.append(EvaluationRecord.from_json_dict(entry))
    for expected, rec in enumerate(records):
        if rec.iteration != expected:
            raise LogError(
                f"log iterations not consecutive: expected {expected}, found {rec.iteration}"
            )
    return records, failures


def load_records(path: str | Path) -> list[EvaluationRecord]:
    records, _ = split_log_entries(read_log(path))
    return records
