"""
Random hyperparameter search and the fixed twelve-row experiment grid.

Both run trials through the same executor: each trial runs in a worker thread,
every finished trial is appended to a JSON-lines results file from the event
loop, and trials whose seed already has a record there are not re-run.
"""

import asyncio
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pydantic
import structlog

from pdvox.data.batching import SampleSet
from pdvox.models.config import (
    ModelConfig,
    NormMode,
    SearchSpace,
    TrainConfig,
    Variant,
)
from pdvox.models.trial import TrialMetrics, TrialResult, TrialSpec
from pdvox.net.architecture import build_model
from pdvox.net.training import train
from pdvox.utils.seeding import derive_seed

Evaluator = Callable[[TrialSpec], TrialMetrics]


def _log_uniform(rng: np.random.Generator, low: float, high: float) -> float:
    u = rng.random()
    if low == high:
        return low
    return math.exp(math.log(low) + u * (math.log(high) - math.log(low)))


def _uniform(rng: np.random.Generator, low: float, high: float) -> float:
    u = rng.random()
    if low == high:
        return low
    return low + u * (high - low)


def _choice(rng: np.random.Generator, options: Sequence):
    return options[int(rng.integers(len(options)))]


def sample_config(
    space: SearchSpace, rng: np.random.Generator
) -> tuple[ModelConfig, TrainConfig]:
    """One independent draw per hyperparameter, always in the same order."""
    lr0 = _log_uniform(rng, space.lr0.low, space.lr0.high)
    alpha = _choice(rng, space.alpha)
    rc_is_zero = rng.random() < space.rc_zero_probability
    rc = _log_uniform(rng, space.rc.low, space.rc.high)
    kp1 = _uniform(rng, space.kp1.low, space.kp1.high)
    kp2 = _uniform(rng, space.kp2.low, space.kp2.high)
    variant = _choice(rng, space.variant)
    norm = _choice(rng, space.norm)
    use_demographics = _choice(rng, space.use_demographics)

    model = ModelConfig(
        variant=variant,
        norm=norm,
        use_demographics=use_demographics,
        alpha=alpha,
        rc=0.0 if rc_is_zero else rc,
        kp1=kp1,
        kp2=kp2,
    )
    return model, space.base_train.model_copy(update={"lr0": lr0})


def space_contains(space: SearchSpace, model: ModelConfig, tc: TrainConfig) -> bool:
    rc_ok = (model.rc == 0 and space.rc_zero_probability > 0) or (
        space.rc.low <= model.rc <= space.rc.high
    )
    return (
        space.lr0.low <= tc.lr0 <= space.lr0.high
        and model.alpha in space.alpha
        and rc_ok
        and space.kp1.low <= model.kp1 <= space.kp1.high
        and space.kp2.low <= model.kp2 <= space.kp2.high
        and model.variant in space.variant
        and model.norm in space.norm
        and model.use_demographics in space.use_demographics
    )


def search_specs(space: SearchSpace, budget: int, seed: int) -> list[TrialSpec]:
    specs = []
    for i in range(budget):
        trial_seed = derive_seed(seed, i)
        model, tc = sample_config(space, np.random.default_rng(trial_seed))
        specs.append(
            TrialSpec(
                index=i,
                seed=trial_seed,
                model=model,
                train=tc.model_copy(update={"seed": trial_seed}),
            )
        )
    return specs


###
# Experiment grid
###

# name, variant, demographics, norm, lr, alpha, rc, kp1, kp2
EXPERIMENT_GRID_ROWS = [
    ("OM", Variant.ORIGINAL, False, NormMode.NONE, 5e-5, 0.0, 0.0, 1.0, 1.0),
    ("SM", Variant.SIMPLIFIED, False, NormMode.NONE, 5e-5, 0.0, 0.0, 1.0, 1.0),
    ("OM-GA", Variant.ORIGINAL, True, NormMode.NONE, 2e-4, 0.0, 0.0, 1.0, 1.0),
    ("SM-GA", Variant.SIMPLIFIED, True, NormMode.NONE, 5e-5, 0.0, 0.0, 1.0, 1.0),
    ("OM-GA-B", Variant.ORIGINAL, True, NormMode.BATCH, 5e-5, 0.01, 0.0, 1.0, 1.0),
    ("SM-GA-B", Variant.SIMPLIFIED, True, NormMode.BATCH, 1e-5, 0.01, 0.0, 1.0, 1.0),
    ("OM-GA-G", Variant.ORIGINAL, True, NormMode.GROUP, 1e-5, 0.01, 0.0, 1.0, 1.0),
    ("SM-GA-G", Variant.SIMPLIFIED, True, NormMode.GROUP, 1e-5, 0.01, 0.0, 1.0, 1.0),
    ("OM-GA-GR", Variant.ORIGINAL, True, NormMode.GROUP, 1e-5, 0.01, 0.05, 1.0, 1.0),
    ("SM-GA-GR", Variant.SIMPLIFIED, True, NormMode.GROUP, 1e-5, 0.01, 0.001, 1.0, 1.0),
    ("OM-GA-GRD", Variant.ORIGINAL, True, NormMode.GROUP, 1e-5, 0.01, 0.05, 0.2, 0.35),
    ("SM-GA-GRD", Variant.SIMPLIFIED, True, NormMode.GROUP, 1e-5, 0.01, 0.001, 0.45, 0.5),
]


def experiment_grid_preset(
    seed: int = 0, base_train: TrainConfig | None = None
) -> list[TrialSpec]:
    base_train = base_train or TrainConfig()
    specs = []
    for i, (name, variant, demographics, norm, lr, alpha, rc, kp1, kp2) in enumerate(
        EXPERIMENT_GRID_ROWS
    ):
        trial_seed = derive_seed(seed, i)
        specs.append(
            TrialSpec(
                index=i,
                seed=trial_seed,
                name=name,
                model=ModelConfig(
                    variant=variant,
                    norm=norm,
                    use_demographics=demographics,
                    alpha=alpha,
                    rc=rc,
                    kp1=kp1,
                    kp2=kp2,
                ),
                train=base_train.model_copy(update={"lr0": lr, "seed": trial_seed}),
            )
        )
    return specs


###
# Execution
###


def load_results(
    log: structlog.stdlib.BoundLogger, results_path: Path
) -> dict[int, TrialResult]:
    """Recorded results keyed by trial seed; an unparseable line is skipped."""
    if not results_path.exists():
        return {}
    results = {}
    for line_number, line in enumerate(results_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            result = TrialResult.model_validate_json(line)
        except pydantic.ValidationError:
            log.warning(
                "Skipping unreadable trial record",
                path=str(results_path),
                line=line_number,
            )
            continue
        results[result.spec.seed] = result
    return results


def run_trial(
    log: structlog.stdlib.BoundLogger, evaluator: Evaluator, spec: TrialSpec
) -> TrialResult:
    started = time.perf_counter()
    try:
        metrics = evaluator(spec)
    except Exception as e:
        log.exception("Trial failed", trial=spec.index, seed=spec.seed)
        return TrialResult(
            spec=spec,
            status="failed",
            error=f"{type(e).__name__}: {e}",
            wall_time=time.perf_counter() - started,
        )
    return TrialResult(
        spec=spec,
        metrics=metrics,
        wall_time=time.perf_counter() - started,
    )


async def execute_trials(
    log: structlog.stdlib.BoundLogger,
    specs: Sequence[TrialSpec],
    evaluator: Evaluator,
    results_path: str | Path | None = None,
    workers: int = 1,
) -> list[TrialResult]:
    """Results in `specs` order."""
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    path = Path(results_path) if results_path is not None else None
    done = load_results(log, path) if path is not None else {}
    results: dict[int, TrialResult] = {
        spec.index: done[spec.seed] for spec in specs if spec.seed in done
    }
    pending = [spec for spec in specs if spec.seed not in done]
    if results:
        log.info("Resuming search", completed=len(results), pending=len(pending))

    semaphore = asyncio.Semaphore(workers)

    async def run_one(spec: TrialSpec) -> None:
        async with semaphore:
            trial_log = log.bind(trial=spec.index, name=spec.name)
            trial_log.info("Starting trial", seed=spec.seed)
            result = await asyncio.to_thread(run_trial, trial_log, evaluator, spec)
        results[spec.index] = result
        if path is not None:
            with open(path, "a") as f:
                f.write(result.model_dump_json() + "\n")
        trial_log.info(
            "Trial finished",
            status=result.status,
            best_dev_f2=result.metrics.best_dev_f2 if result.metrics else None,
            wall_time=result.wall_time,
        )

    await asyncio.gather(*(run_one(spec) for spec in pending))
    return [results[spec.index] for spec in specs]


def rank_results(results: Sequence[TrialResult]) -> list[TrialResult]:
    """Best dev F2 first, then fewer epochs, then trial order; failures last."""
    ok = [r for r in results if r.status == "ok" and r.metrics is not None]
    failed = [r for r in results if not (r.status == "ok" and r.metrics is not None)]
    ok.sort(key=lambda r: (-r.metrics.best_dev_f2, r.metrics.epochs_run, r.spec.index))  # pyright: ignore[reportOptionalMemberAccess]
    failed.sort(key=lambda r: r.spec.index)
    return ok + failed


async def random_search(
    log: structlog.stdlib.BoundLogger,
    space: SearchSpace,
    budget: int,
    evaluator: Evaluator,
    seed: int = 0,
    results_path: str | Path | None = None,
    workers: int = 1,
) -> list[TrialResult]:
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    specs = search_specs(space, budget, seed)
    log.info("Starting random search", budget=budget, seed=seed, workers=workers)
    results = await execute_trials(log, specs, evaluator, results_path, workers)
    return rank_results(results)


async def run_experiment_grid(
    log: structlog.stdlib.BoundLogger,
    evaluator: Evaluator,
    seed: int = 0,
    base_train: TrainConfig | None = None,
    results_path: str | Path | None = None,
    workers: int = 1,
    limit: int | None = None,
) -> list[TrialResult]:
    """The twelve preset rows in table order; `limit` keeps only the first rows."""
    specs = experiment_grid_preset(seed, base_train)
    if limit is not None:
        specs = specs[:limit]
    log.info("Running experiment grid", rows=len(specs), seed=seed)
    return await execute_trials(log, specs, evaluator, results_path, workers)


def format_experiment_table(results: Sequence[TrialResult]) -> str:
    header = (
        f"{'model':<10} {'variant':<10} {'norm':<5} {'demo':<4} "
        f"{'lr':>8} {'alpha':>5} {'rc':>6} {'kp1':>4} {'kp2':>4} "
        f"{'train F2':>8} {'dev F2':>6} {'epochs':>6}"
    )
    lines = [header]
    for r in results:
        s = r.spec
        name = s.name or f"trial-{s.index}"
        if r.metrics is not None:
            scores = (
                f"{r.metrics.final_train_f2:8.3f} {r.metrics.best_dev_f2:6.3f} "
                f"{r.metrics.epochs_run:6d}"
            )
        else:
            scores = f"{'failed':>8} {'-':>6} {'-':>6}"
        lines.append(
            f"{name:<10} {s.model.variant.value:<10} {s.model.norm.value:<5} "
            f"{'yes' if s.model.use_demographics else 'no':<4} "
            f"{s.train.lr0:8.1e} {s.model.alpha:5.2f} {s.model.rc:6.3g} "
            f"{s.model.kp1:4.2f} {s.model.kp2:4.2f} {scores}"
        )
    return "\n".join(lines)


@dataclass
class TrainingEvaluator:
    """Trains a fresh model per trial on fixed train/dev samples."""

    log: structlog.stdlib.BoundLogger
    train_set: SampleSet
    dev_set: SampleSet | None

    def __call__(self, spec: TrialSpec) -> TrialMetrics:
        model = build_model(spec.model, self.train_set.extents, seed=spec.seed)
        history = train(
            self.log.bind(trial=spec.index),
            model,
            self.train_set,
            self.dev_set,
            spec.train,
        )
        best = history.best_dev_f2
        if best is None:
            best = max((r.train_f2 for r in history.records), default=0.0)
        return TrialMetrics(
            final_train_f2=history.final_train_f2 or 0.0,
            best_dev_f2=best,
            epochs_run=history.epochs_run,
        )
