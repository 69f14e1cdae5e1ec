"""Multi-objective search loop: acquisition, proposal, runners, cross-device re-evaluation.

Each iteration proposes one genome (random during warm-up, otherwise the
argmax of Monte-Carlo expected hypervolume improvement over a candidate
pool), measures it with the configured evaluator, appends the record to the
run log, and refits one GP per objective.  Randomness is re-derived from
(seed, iteration), so interrupted runs resume to byte-identical logs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import norm, qmc

from . import gp
from .network import MacroConfig
from .pareto import hypervolume_improvements, pareto_filter
from .records import (
    SOURCE_BO,
    SOURCE_RANDOM,
    SOURCE_REEVAL,
    EvaluationRecord,
    ObjectiveVector,
    append_log_line,
    logical_timestamp,
    normalize_subset,
    objective_matrix,
    read_log,
    split_log_entries,
    transform_values,
)
from .search_space import (
    CellGenome,
    encode,
    enumerate_genomes,
    mutate,
    random_genome,
    search_space_size,
)

Evaluator = Callable[[CellGenome], ObjectiveVector]

POOL_RANDOM = 500
POOL_MUTATIONS_PER_PARETO = 10
EVALUATOR_RETRIES = 3


class SearchError(RuntimeError):
    pass


class SpaceExhaustedError(SearchError):
    """Every genome in the space has been evaluated (or failed)."""


class ConfigMismatchError(SearchError):
    """An existing run log was produced with a different configuration."""


class LogLockedError(SearchError):
    """Another run holds the lock on this log path."""


@dataclass(frozen=True)
class RunConfig:
    """Configuration of one search run; JSON field names match the attributes."""

    seed: int = 0
    budget: int = 400
    n_init: int = 10
    objective_subset: tuple[str, ...] = ("error", "energy", "time")
    macro: MacroConfig = field(default_factory=MacroConfig)
    evaluator: dict = field(default_factory=lambda: {"type": "synthetic", "profile": "movidius-ncs"})
    log_path: str | None = None
    num_blocks: int = 5
    mc_samples: int = 64

    def __post_init__(self) -> None:
        if not self.budget >= self.n_init >= 1:
            raise ValueError(f"need budget >= n_init >= 1, got {self.budget} / {self.n_init}")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        object.__setattr__(self, "objective_subset", normalize_subset(self.objective_subset))

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "budget": self.budget,
            "n_init": self.n_init,
            "objective_subset": list(self.objective_subset),
            "macro": self.macro.to_json_dict(),
            "evaluator": self.evaluator,
            "log_path": self.log_path,
            "num_blocks": self.num_blocks,
            "mc_samples": self.mc_samples,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunConfig":
        kwargs = dict(d)
        if "macro" in kwargs and not isinstance(kwargs["macro"], MacroConfig):
            kwargs["macro"] = MacroConfig.from_json_dict(kwargs["macro"])
        if "objective_subset" in kwargs and kwargs["objective_subset"] is not None:
            kwargs["objective_subset"] = tuple(kwargs["objective_subset"])
        unknown = set(kwargs) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass
class SearchState:
    """Mutable loop state shared with the proposal step."""

    history: list[EvaluationRecord]
    budget: int
    objective_subset: tuple[str, ...]
    num_blocks: int
    n_init: int
    excluded: set[tuple[int, ...]] = field(default_factory=set)
    mc_samples: int = 64


def reference_point(history_values_t: np.ndarray) -> np.ndarray:
    """Reference for hypervolume: componentwise worst observation plus a 10% margin.

    For positive worsts this is worst * 1.1; the magnitude-relative margin
    keeps the reference strictly worse even when log-transformed objectives
    are negative or zero.
    """
    worst = np.max(history_values_t, axis=0)
    return worst + 0.1 * np.maximum(np.abs(worst), 1e-6)


def _fit_models(
    history: list[EvaluationRecord],
    subset: tuple[str, ...],
    seed_key: list[int],
) -> dict[str, gp.GPModel]:
    X = gp.featurize_batch([r.genome for r in history])
    raw = objective_matrix(history, subset)
    transformed = transform_values(raw, subset)
    models = {}
    for j, name in enumerate(subset):
        models[name] = gp.fit(X, transformed[:, j], seed=seed_key + [j])
    return models


def acquisition_score(
    models: dict[str, gp.GPModel],
    current_pareto: list[EvaluationRecord],
    candidate: CellGenome,
    rng: np.random.Generator,
    mc_samples: int = 64,
    ref: np.ndarray | None = None,
) -> float:
    """Monte-Carlo expected hypervolume improvement of one candidate.

    Objectives are sampled from each GP posterior at the candidate (in
    model space: error raw, energy/time logged) and the average gain of
    adding the sample to the current front is returned.
    """
    subset = normalize_subset(models.keys())
    front_t = _front_values_t(current_pareto, subset)
    if ref is None:
        if front_t.shape[0] == 0:
            raise ValueError("an explicit reference point is required with an empty front")
        ref = reference_point(front_t)
    feats = gp.featurize(candidate)[None, :]
    scores = _acquisition_batch(models, subset, front_t, np.asarray(ref, dtype=float), feats, rng, mc_samples)
    return float(scores[0])


def _front_values_t(records: list[EvaluationRecord], subset) -> np.ndarray:
    if not records:
        return np.empty((0, len(subset)))
    return transform_values(objective_matrix(records, subset), subset)


def _acquisition_batch(
    models: dict[str, gp.GPModel],
    subset: tuple[str, ...],
    front_t: np.ndarray,
    ref: np.ndarray,
    feats: np.ndarray,
    rng: np.random.Generator,
    mc_samples: int,
) -> np.ndarray:
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    n = feats.shape[0]
    d = len(subset)
    means = np.empty((n, d))
    stds = np.empty((n, d))
    for j, name in enumerate(subset):
        mean, var = models[name].predict_features(feats)
        means[:, j] = mean
        stds[:, j] = np.sqrt(var)
    # One set of normal draws shared across candidates (common random numbers),
    # from a scrambled Sobol sequence, so the argmax over the pool is not
    # dominated by integration noise.
    sobol = qmc.Sobol(d, scramble=True, seed=rng)
    u = sobol.random(mc_samples)
    z = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    samples = means[:, None, :] + stds[:, None, :] * z[None, :, :]
    # Duplicate objective rows add nothing to the union of boxes; dedupe for speed.
    front_unique = np.unique(front_t, axis=0) if front_t.shape[0] else front_t
    hvi = hypervolume_improvements(front_unique, ref, samples.reshape(n * mc_samples, d))
    return hvi.reshape(n, mc_samples).mean(axis=1)


def _random_unevaluated(
    rng: np.random.Generator,
    excluded: set[tuple[int, ...]],
    num_blocks: int,
    attempts: int = 200,
) -> CellGenome:
    for _ in range(attempts):
        g = random_genome(rng, num_blocks)
        if encode(g) not in excluded:
            return g
    # Small spaces: pick uniformly among the remaining genomes.
    size = search_space_size(num_blocks)
    if size <= 1_000_000:
        remaining = [g for g in enumerate_genomes(num_blocks) if encode(g) not in excluded]
        if not remaining:
            raise SpaceExhaustedError(f"all {size} genomes already evaluated")
        return remaining[int(rng.integers(len(remaining)))]
    raise SearchError("could not sample an unevaluated genome")


def propose_next(
    state: SearchState,
    models: dict[str, gp.GPModel] | None,
    rng: np.random.Generator,
) -> CellGenome:
    """Next genome to evaluate.

    Warm-up (fewer than ``n_init`` records, or no models) proposes a random
    unevaluated genome.  Otherwise the candidate pool is 500 random genomes
    plus 10 single-field mutations of each current Pareto genome, minus
    everything already evaluated; the acquisition argmax wins, ties broken by
    lowest encoding.
    """
    if models is None or len(state.history) < state.n_init:
        return _random_unevaluated(rng, state.excluded, state.num_blocks)

    subset = state.objective_subset
    front = pareto_filter(state.history, subset)
    pool: dict[tuple[int, ...], CellGenome] = {}
    for _ in range(POOL_RANDOM):
        g = random_genome(rng, state.num_blocks)
        pool.setdefault(encode(g), g)
    for rec in front:
        for _ in range(POOL_MUTATIONS_PER_PARETO):
            g = mutate(rec.genome, rng, num_fields=1)
            pool.setdefault(encode(g), g)
    candidates = [g for enc, g in sorted(pool.items()) if enc not in state.excluded]
    if not candidates:
        return _random_unevaluated(rng, state.excluded, state.num_blocks)

    history_t = _front_values_t(state.history, subset)
    ref = reference_point(history_t)
    front_t = _front_values_t(front, subset)
    feats = gp.featurize_batch(candidates)
    scores = _acquisition_batch(models, subset, front_t, ref, feats, rng, state.mc_samples)
    return candidates[int(np.argmax(scores))]


def _device_name(evaluator_spec: dict) -> str:
    return str(evaluator_spec.get("profile") or evaluator_spec.get("device") or "unknown")


def _config_fingerprint(config: RunConfig, source: str) -> dict:
    return {
        "seed": config.seed,
        "n_init": config.n_init,
        "objective_subset": list(config.objective_subset),
        "num_blocks": config.num_blocks,
        "evaluator": config.evaluator,
        "mode": source,
    }


def _check_resume(config: RunConfig, records: list[EvaluationRecord], source: str) -> None:
    if not records:
        return
    meta = records[0].meta
    expected = _config_fingerprint(config, source)
    for key, want in expected.items():
        have = meta.get(key)
        if have != want:
            raise ConfigMismatchError(
                f"existing log disagrees with config on {key!r}: log has {have!r}, "
                f"config has {want!r}"
            )


class _LogLock:
    """Exclusive lock file guarding one run-log path; no-op when logging is off."""

    def __init__(self, log_path: str | None):
        self.path = Path(str(log_path) + ".lock") if log_path else None

    def __enter__(self):
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                raise LogLockedError(
                    f"{self.path} exists; another run appears to hold this log "
                    "(remove the lock file if that run is dead)"
                ) from None
            os.close(fd)
        return self

    def __exit__(self, *exc):
        if self.path is not None and self.path.exists():
            self.path.unlink()
        return False


def _evaluate_with_retries(
    evaluator: Evaluator, genome: CellGenome
) -> tuple[ObjectiveVector | None, str | None]:
    last_error = None
    for _ in range(1 + EVALUATOR_RETRIES):
        try:
            return evaluator(genome), None
        except Exception as exc:  # noqa: BLE001 - any evaluator failure is retried
            last_error = f"{type(exc).__name__}: {exc}"
    return None, last_error


def _run(
    config: RunConfig,
    evaluator: Evaluator,
    budget: int | None,
    source: str,
    verbose: bool = False,
) -> list[EvaluationRecord]:
    budget = config.budget if budget is None else budget
    if budget < 1:
        raise ValueError("budget must be >= 1")
    subset = config.objective_subset
    device = _device_name(config.evaluator)

    history: list[EvaluationRecord] = []
    excluded: set[tuple[int, ...]] = set()
    if config.log_path and Path(config.log_path).exists():
        records, failures = split_log_entries(read_log(config.log_path))
        _check_resume(config, records, source)
        history = records
        excluded = {encode(r.genome) for r in records}
        for f in failures:
            excluded.add(encode(CellGenome.from_json_dict(f["genome"])))

    state = SearchState(
        history=history,
        budget=budget,
        objective_subset=subset,
        num_blocks=config.num_blocks,
        n_init=config.n_init,
        excluded=excluded,
        mc_samples=config.mc_samples,
    )

    with _LogLock(config.log_path if len(history) < budget else None):
        while len(state.history) < budget:
            iteration = len(state.history)
            rng = np.random.default_rng([config.seed, iteration])

            models = None
            if source == SOURCE_BO and iteration >= config.n_init:
                models = _fit_models(state.history, subset, [config.seed, iteration])
            if source == SOURCE_RANDOM:
                genome = _random_unevaluated(rng, state.excluded, config.num_blocks)
            else:
                genome = propose_next(state, models, rng)

            objectives, error = _evaluate_with_retries(evaluator, genome)
            if objectives is None:
                # Budget is not consumed; the genome is excluded so the
                # deterministic proposal cannot loop on it forever.
                state.excluded.add(encode(genome))
                if config.log_path:
                    append_log_line(
                        config.log_path,
                        {
                            "iteration": iteration,
                            "source": source,
                            "device": device,
                            "genome": genome.to_json_dict(),
                            "objectives": None,
                            "timestamp": logical_timestamp(iteration),
                            "meta": {"failed": True, "error": error, "attempts": 1 + EVALUATOR_RETRIES},
                        },
                    )
                if verbose:
                    print(f"[{source}] iteration {iteration}: evaluation failed: {error}")
                continue

            meta = _config_fingerprint(config, source) if iteration == 0 else {}
            record = EvaluationRecord(
                genome=genome,
                objectives=objectives,
                device=device,
                iteration=iteration,
                source=source,
                timestamp=logical_timestamp(iteration),
                meta=meta,
            )
            if config.log_path:
                append_log_line(config.log_path, record.to_json_dict())
            state.history.append(record)
            state.excluded.add(encode(genome))
            if verbose:
                print(
                    f"[{source}] iteration {iteration}: error={objectives.error:.4f} "
                    f"energy={objectives.energy_j:.4g}J time={objectives.time_s:.4g}s"
                )
    return state.history


def run_search(
    config: RunConfig,
    evaluator: Evaluator,
    budget: int | None = None,
    verbose: bool = False,
) -> list[EvaluationRecord]:
    """Model-guided search to the budget; resumes from an existing log if present."""
    return _run(config, evaluator, budget, SOURCE_BO, verbose)


def run_random(
    config: RunConfig,
    evaluator: Evaluator,
    budget: int | None = None,
    verbose: bool = False,
) -> list[EvaluationRecord]:
    """Uniform-random baseline: every proposal is a fresh random genome (no duplicates)."""
    return _run(config, evaluator, budget, SOURCE_RANDOM, verbose)


def reevaluate_cross_device(
    source_records: list[EvaluationRecord],
    source_subset,
    target_evaluator: Evaluator,
    target_records: list[EvaluationRecord] | None = None,
    target_device: str = "target",
) -> dict:
    """Re-measure the source Pareto front on another device and report dominance.

    The source front (over ``source_subset``) is re-evaluated with the target
    evaluator; re-evaluations are merged with any existing target records and
    each source model is flagged if some merged record dominates it there.
    Per-genome evaluator failures are marked, not fatal.
    """
    if not source_records:
        raise ValueError("source log is empty")
    subset = normalize_subset(source_subset)
    front = pareto_filter(source_records, subset)

    reevaluated: list[EvaluationRecord] = []
    rows: list[dict] = []
    for i, rec in enumerate(front):
        row = {
            "genome": rec.genome.to_json_dict(),
            "source_device": rec.device,
            "source_iteration": rec.iteration,
            "source_objectives": rec.objectives.to_json_dict(),
            "target_objectives": None,
            "dominated_on_target": None,
        }
        try:
            objectives = target_evaluator(rec.genome)
        except Exception as exc:  # noqa: BLE001 - per-genome failures are reported
            row["error"] = f"{type(exc).__name__}: {exc}"
        else:
            reevaluated.append(
                EvaluationRecord(
                    genome=rec.genome,
                    objectives=objectives,
                    device=target_device,
                    iteration=i,
                    source=SOURCE_REEVAL,
                    timestamp=logical_timestamp(i),
                    meta={"source_iteration": rec.iteration, "source_device": rec.device},
                )
            )
            row["target_objectives"] = objectives.to_json_dict()
        rows.append(row)

    merged = reevaluated + list(target_records or [])
    merged_front = pareto_filter(merged, subset)
    merged_front_ids = {id(r) for r in merged_front}
    reeval_iter = iter(reevaluated)
    for row in rows:
        if row["target_objectives"] is None:
            continue
        rec = next(reeval_iter)
        row["dominated_on_target"] = id(rec) not in merged_front_ids

    return {
        "objective_subset": list(subset),
        "target_device": target_device,
        "models": rows,
        "merged_front": [
            {
                "genome": r.genome.to_json_dict(),
                "device": r.device,
                "source": r.source,
                "objectives": r.objectives.to_json_dict(),
            }
            for r in merged_front
        ],
    }
