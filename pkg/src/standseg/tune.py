"""Seeded random hyperparameter search, scored by municipality cross-validation.

One trial = one hyperparameter draw trained once per fold; the objective is
the arithmetic mean of the per-fold validation macro MCC values. The sampler
sits behind a small strategy interface so smarter samplers can slot in; the
bundled one draws independently at random. Trial RNG streams are split from
the study seed, so running trials in parallel cannot change what they sample.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import StandSegError, TrainingError
from .rng import spawn

LR_BOUNDS = (1e-6, 1e-3)
BATCH_CHOICES = (4, 8, 16)
FILTER_BOUNDS = (8, 64)
KERNEL_CHOICES = (3, 5, 7)
DROPOUT_BOUNDS = (0.0, 0.5)
ALPHA_BOUNDS = (0.3, 0.7)
GAMMA_BOUNDS = (1.0, 2.0)


@dataclass(frozen=True)
class SearchSpace:
    """Bounds of the search; learning_rate is sampled log-uniformly."""

    learning_rate: tuple[float, float] = LR_BOUNDS
    batch_size: tuple[int, ...] = BATCH_CHOICES
    base_filters: tuple[int, int] = FILTER_BOUNDS
    kernel_size: tuple[int, ...] = KERNEL_CHOICES
    dropout: tuple[float, float] = DROPOUT_BOUNDS
    alpha: tuple[float, float] = ALPHA_BOUNDS
    gamma: tuple[float, float] = GAMMA_BOUNDS

    def __post_init__(self):
        for name in ("learning_rate", "base_filters", "dropout", "alpha", "gamma"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} bounds must be ordered, got ({lo}, {hi})")
        if self.learning_rate[0] <= 0.0:
            raise ValueError("learning_rate bounds must be positive for log sampling")
        if not self.batch_size or not self.kernel_size:
            raise ValueError("choice sets must be non-empty")


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float
    batch_size: int
    base_filters: int
    kernel_size: int
    dropout: float
    alpha: float
    gamma: float

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "base_filters": self.base_filters,
            "kernel_size": self.kernel_size,
            "dropout": self.dropout,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
        }

    @staticmethod
    def from_json(doc: dict) -> "HyperParams":
        return HyperParams(
            learning_rate=float(doc["learning_rate"]),
            batch_size=int(doc["batch_size"]),
            base_filters=int(doc["base_filters"]),
            kernel_size=int(doc["kernel_size"]),
            dropout=float(doc["dropout"]),
            alpha=float(doc["alpha"]),
            gamma=float(doc["gamma"]),
        )


class Sampler(Protocol):
    """Strategy interface; history lets informed samplers adapt, the random
    sampler ignores it."""

    def sample(self, space: SearchSpace, history: Sequence["Trial"], rng: np.random.Generator) -> HyperParams: ...


class RandomSampler:
    """Independent draws: log-uniform learning rate, uniform everything else,
    uniform choice over the discrete sets. Integer bounds are inclusive."""

    def sample(
        self, space: SearchSpace, history: Sequence["Trial"], rng: np.random.Generator
    ) -> HyperParams:
        lo, hi = space.learning_rate
        lr = float(10.0 ** rng.uniform(math.log10(lo), math.log10(hi)))
        return HyperParams(
            learning_rate=min(max(lr, lo), hi),
            batch_size=int(rng.choice(np.asarray(space.batch_size))),
            base_filters=int(rng.integers(space.base_filters[0], space.base_filters[1] + 1)),
            kernel_size=int(rng.choice(np.asarray(space.kernel_size))),
            dropout=float(rng.uniform(*space.dropout)),
            alpha=float(rng.uniform(*space.alpha)),
            gamma=float(rng.uniform(*space.gamma)),
        )


@dataclass(eq=False)
class Trial:
    id: int
    params: HyperParams
    fold_scores: list[float] = field(default_factory=list)
    objective: float | None = None
    status: str = "pending"  # pending | complete | failed
    error: str | None = None
    wall_time_s: float = 0.0

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "params": self.params.to_json(),
            "fold_scores": list(self.fold_scores),
            "objective": self.objective,
            "status": self.status,
            "error": self.error,
            "wall_time_s": self.wall_time_s,
        }

    @staticmethod
    def from_json(doc: dict) -> "Trial":
        return Trial(
            id=int(doc["id"]),
            params=HyperParams.from_json(doc["params"]),
            fold_scores=[float(v) for v in doc["fold_scores"]],
            objective=None if doc["objective"] is None else float(doc["objective"]),
            status=doc["status"],
            error=doc.get("error"),
            wall_time_s=float(doc.get("wall_time_s", 0.0)),
        )


# A fold trainer maps (hyperparameters, fold index, seeded rng) to the fold's
# validation macro MCC. The CLI wires the real U-Net training in here; tests
# may stub it.
FoldTrainFn = Callable[[HyperParams, int, np.random.Generator], float]


def run_trial(
    trial_id: int,
    params: HyperParams,
    n_folds: int,
    train_fn: FoldTrainFn,
    rng: np.random.Generator,
) -> Trial:
    """Train every fold; the objective exists only if all folds complete."""
    trial = Trial(id=trial_id, params=params)
    start = time.perf_counter()
    try:
        for fold in range(n_folds):
            score = float(train_fn(params, fold, rng))
            if not math.isfinite(score):
                raise TrainingError(f"fold {fold} returned non-finite mMCC {score}")
            trial.fold_scores.append(score)
    except (TrainingError, FloatingPointError, np.linalg.LinAlgError) as exc:
        trial.status = "failed"
        trial.error = str(exc)
        trial.wall_time_s = time.perf_counter() - start
        return trial
    trial.objective = math.fsum(trial.fold_scores) / n_folds
    trial.status = "complete"
    trial.wall_time_s = time.perf_counter() - start
    return trial


@dataclass(eq=False)
class StudyResult:
    trials: list[Trial]
    best: Trial


def study(
    space: SearchSpace,
    n_trials: int,
    n_folds: int,
    train_fn: FoldTrainFn,
    seed: int,
    sampler: Sampler | None = None,
    log_path=None,
) -> StudyResult:
    """Run the search; best = highest objective, ties to the lowest trial id."""
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if n_folds < 1:
        raise ValueError(f"n_folds must be >= 1, got {n_folds}")
    sampler = sampler if sampler is not None else RandomSampler()
    trials: list[Trial] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for trial_id in range(n_trials):
            sample_rng = spawn(seed, "tune-sample", trial_id)
            params = sampler.sample(space, trials, sample_rng)
            trial_rng = spawn(seed, "tune-train", trial_id)
            trial = run_trial(trial_id, params, n_folds, train_fn, trial_rng)
            trials.append(trial)
            if log_fh is not None:
                log_fh.write(json.dumps(trial.to_json()) + "\n")
                log_fh.flush()
    finally:
        if log_fh is not None:
            log_fh.close()
    complete = [t for t in trials if t.status == "complete"]
    if not complete:
        raise StandSegError(f"all {n_trials} trials failed; first error: {trials[0].error}")
    best = max(complete, key=lambda t: (t.objective, -t.id))
    return StudyResult(trials=trials, best=best)


def read_study_log(path) -> list[Trial]:
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trials.append(Trial.from_json(json.loads(line)))
    return trials
