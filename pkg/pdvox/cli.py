"""
pdvox command line.

    pdvox synth   write a synthetic dataset (volumes + manifest)
    pdvox split   write the train/dev/test split record
    pdvox train   train a model and checkpoint the best dev-F2 parameters
    pdvox eval    evaluate a checkpoint on one split
    pdvox heatmap occlusion heatmap of one subject (MVOL + PGM slices)
    pdvox search  random search, or `--preset table3` for the experiment grid
    pdvox stats   demographic overview and age-only baseline of a manifest

Every option can also be set in a flat `key = value` file passed with
`--config`; command-line flags override the file, which overrides defaults.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import asyncio
import sys
import typing
from pathlib import Path
from typing import Any, Callable, Literal, Sequence

import numpy as np
import pydantic
import structlog
from pydantic import Field, model_validator

from pdvox.data.batching import AgeStats, SampleSet, fit_age_stats, load_samples
from pdvox.data.manifest import describe_demographics, format_demographics, load_manifest
from pdvox.data.split import augment_split, load_split, save_split, stratified_split
from pdvox.data.synth import SynthSpec, synth_generate
from pdvox.data.volume import save_volume
from pdvox.errors import DataError, NumericalError, UsageError
from pdvox.interpret import export_center_slices, occlusion_heatmap
from pdvox.log_config import configure_logging, get_logger
from pdvox.metrics import age_logistic_baseline, export_roc
from pdvox.models.common import StrictModel
from pdvox.models.config import (
    LogUniform,
    ModelConfig,
    NormMode,
    SearchSpace,
    TrainConfig,
    Uniform,
    Variant,
)
from pdvox.models.subject import DatasetSplit, Label, SplitName
from pdvox.net.architecture import Model, build_model
from pdvox.net.checkpoint import load_checkpoint
from pdvox.net.training import evaluate, predict_samples, train
from pdvox.search import (
    TrainingEvaluator,
    format_experiment_table,
    random_search,
    run_experiment_grid,
)
from pdvox.utils.config_file import load_config_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

DEFAULT_SEARCH_BUDGET = 10

_MODEL = ModelConfig()
_TRAIN = TrainConfig()
_SPACE = SearchSpace()
_SYNTH = SynthSpec()


class RunConfig(StrictModel):
    # paths and seeds
    data_dir: Path = Path("data")
    manifest: Path | None = Field(default=None, description="Default: <data-dir>/manifest.csv")
    split_file: Path | None = Field(default=None, description="Default: <data-dir>/split.json")
    checkpoint: Path = Path("runs/checkpoint")
    output_dir: Path = Path("runs")
    seed: int = 0
    split_seed: int | None = Field(default=None, description="Default: --seed")
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_json: bool = False

    # synth
    n_per_class: int = _SYNTH.n_per_class
    extents: tuple[int, int, int] = _SYNTH.extents
    signal_strength: float = _SYNTH.signal_strength
    age_effect: float = _SYNTH.age_effect
    noise: float = _SYNTH.noise
    strong: bool = Field(default=False, description="Strong-signal preset")

    # split
    fractions: tuple[float, float, float] = (0.85, 0.10, 0.05)
    augment_eval: bool = Field(default=False, description="Also augment dev and test")

    # model
    variant: Variant = _MODEL.variant
    norm: NormMode = _MODEL.norm
    use_demographics: bool = _MODEL.use_demographics
    alpha: float = _MODEL.alpha
    rc: float = _MODEL.rc
    kp1: float = _MODEL.kp1
    kp2: float = _MODEL.kp2
    num_classes: int = _MODEL.num_classes

    # train
    lr0: float = _TRAIN.lr0
    decay_k: float = _TRAIN.decay_k
    decay_steps: int = _TRAIN.decay_steps
    batch_size: int = _TRAIN.batch_size
    max_epochs: int = _TRAIN.max_epochs
    beta1: float = _TRAIN.beta1
    beta2: float = _TRAIN.beta2
    eps_adam: float = _TRAIN.eps_adam
    early_stop: bool = _TRAIN.early_stop
    stop_patience: int = _TRAIN.stop_patience

    # eval
    eval_split: SplitName = SplitName.TEST
    normalized_by: Literal["predicted", "truth"] = "predicted"

    # heatmap
    subject: str | None = Field(
        default=None, description="Default: first correctly classified PD subject"
    )
    heatmap_split: SplitName = SplitName.TEST
    box: int = Field(default=2, ge=1)
    stride: int = Field(default=1, ge=1)
    slices: bool = Field(default=True, description="Also write center-slice PGMs")

    # search
    preset: Literal["none", "table3"] = "none"
    budget: int | None = Field(
        default=None, ge=1, description=f"Default: {DEFAULT_SEARCH_BUDGET}, all rows for a preset"
    )
    workers: int = Field(default=1, ge=1)
    search_lr0: tuple[float, float] = (_SPACE.lr0.low, _SPACE.lr0.high)
    search_alpha: tuple[float, ...] = tuple(_SPACE.alpha)
    search_rc: tuple[float, float] = (_SPACE.rc.low, _SPACE.rc.high)
    search_rc_zero_probability: float = _SPACE.rc_zero_probability
    search_kp1: tuple[float, float] = (_SPACE.kp1.low, _SPACE.kp1.high)
    search_kp2: tuple[float, float] = (_SPACE.kp2.low, _SPACE.kp2.high)
    search_variants: tuple[Variant, ...] = tuple(_SPACE.variant)
    search_norms: tuple[NormMode, ...] = tuple(_SPACE.norm)
    search_demographics: tuple[bool, ...] = tuple(_SPACE.use_demographics)

    @model_validator(mode="before")
    @classmethod
    def split_comma_lists(cls, data: Any):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        for name, value in data.items():
            field = cls.model_fields.get(name)
            if field is None or not isinstance(value, str):
                continue
            if typing.get_origin(field.annotation) is tuple:
                data[name] = tuple(v.strip() for v in value.split(",") if v.strip())
        return data

    @property
    def manifest_path(self) -> Path:
        return self.manifest or self.data_dir / "manifest.csv"

    @property
    def split_path(self) -> Path:
        return self.split_file or self.data_dir / "split.json"

    def _pick(self, model: type[StrictModel]) -> dict[str, Any]:
        return {name: getattr(self, name) for name in model.model_fields if name in type(self).model_fields}

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(**self._pick(ModelConfig))

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(**self._pick(TrainConfig))

    def to_synth_spec(self) -> SynthSpec:
        common = {
            "n_per_class": self.n_per_class,
            "extents": self.extents,
            "age_effect": self.age_effect,
            "seed": self.seed,
        }
        if self.strong:
            return SynthSpec.strong(**common)
        return SynthSpec(signal_strength=self.signal_strength, noise=self.noise, **common)

    def to_search_space(self) -> SearchSpace:
        return SearchSpace(
            lr0=LogUniform(low=self.search_lr0[0], high=self.search_lr0[1]),
            alpha=list(self.search_alpha),
            rc=LogUniform(low=self.search_rc[0], high=self.search_rc[1]),
            rc_zero_probability=self.search_rc_zero_probability,
            kp1=Uniform(low=self.search_kp1[0], high=self.search_kp1[1]),
            kp2=Uniform(low=self.search_kp2[0], high=self.search_kp2[1]),
            variant=list(self.search_variants),
            norm=list(self.search_norms),
            use_demographics=list(self.search_demographics),
            base_train=self.to_train_config(),
        )


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        default=argparse.SUPPRESS,
        help="Flat key = value config file",
    )
    for name, field in RunConfig.model_fields.items():
        flag = "--" + name.replace("_", "-")
        help_text = field.description or f"default: {field.default}"
        if field.annotation is bool:
            parser.add_argument(
                flag,
                dest=name,
                action=argparse.BooleanOptionalAction,
                default=argparse.SUPPRESS,
                help=help_text,
            )
        else:
            parser.add_argument(
                flag, dest=name, default=argparse.SUPPRESS, help=help_text
            )


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="pdvox", description=__doc__.split("\n\n")[0].strip())
    common = ArgumentParser(add_help=False)
    _add_config_flags(common)
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)
    for name, (_, help_text) in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=help_text)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    values = dict(vars(args))
    values.pop("command", None)
    config_path = values.pop("config", None)
    layered: dict[str, Any] = {}
    if config_path is not None:
        layered.update(load_config_file(config_path))
    layered.update(values)
    return RunConfig.model_validate(layered)


###
# Shared steps
###


def prepare_split(log: structlog.stdlib.BoundLogger, cfg: RunConfig) -> DatasetSplit:
    if cfg.split_path.exists():
        split = load_split(cfg.split_path)
        log.info("Loaded split", path=str(cfg.split_path))
        return split
    return write_split(log, cfg)


def write_split(log: structlog.stdlib.BoundLogger, cfg: RunConfig) -> DatasetSplit:
    subjects = load_manifest(cfg.manifest_path)
    seed = cfg.seed if cfg.split_seed is None else cfg.split_seed
    split = stratified_split(subjects, cfg.fractions, seed)
    cfg.split_path.parent.mkdir(parents=True, exist_ok=True)
    save_split(split, cfg.split_path)
    log.info(
        "Split written",
        path=str(cfg.split_path),
        train=len(split.train),
        dev=len(split.dev),
        test=len(split.test),
    )
    return split


def split_samples(
    cfg: RunConfig, split: DatasetSplit, name: SplitName, age_stats: AgeStats
) -> SampleSet:
    augmented = augment_split(split, cfg.augment_eval)
    return load_samples(augmented.subjects(name), age_stats, cfg.manifest_path.parent)


def train_age_stats(split: DatasetSplit) -> AgeStats:
    return fit_age_stats(split.train)


###
# Commands
###


def cmd_synth(log: structlog.stdlib.BoundLogger, cfg: RunConfig) -> int:
    manifest_path = synth_generate(log, cfg.to_synth_spec(), cfg.data_dir)
    print(manifest_path)
    print(format_demographics(describe_demographics(load_manifest(manifest_path))))
    return EXIT_OK


def cmd_split(log: structlog.stdlib.BoundLogger, cfg: RunConfig) -> int:
    split = write_split(log, cfg)
    for name in SplitName:
        subjects = split.subjects(name)
        n_pd = sum(s.label is Label.PD for s in subjects)
        print(f"{name.value:<5} {len(subjects):>5}  PD {n_pd:>5}  HC {len(subjects) - n_pd:>5}")
    return EXIT_OK


def cmd_train(log: structlog.stdlib.BoundLogger, cfg: RunConfig) -> int:
    split = prepare_split(log, cfg)
    age_stats = train_age_stats(split)
    train_set = split_samples(cfg, split, SplitName.TRAIN, age_stats)
    dev_set = split_samples(cfg, split, SplitName.DEV, age_stats)
    model = build_model(cfg.to_model_config(), train_set.extents, seed=cfg.seed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    history = train(
        log,
        model,
        train_set,
        dev_set,
        cfg.to_train_config(),
        checkpoint_path=cfg.checkpoint,
        age_stats=age_stats,
        history_path=cfg.output_dir / "history.jsonl",
    )
    print(f"epochs       {history.epochs_run}")
    if history.final_train_f2 is not None:
        print(f"train_f2     {history.final_train_f2:.4f}")
    if history.best_dev_f2 is not None:
        print(f"best_dev_f2  {history.best_dev_f2:.4f} (epoch {history.best_epoch})")
    print(f"checkpoint   {cfg.checkpoint}")
    return EXIT_OK


def cmd_eval(log: structlog.stdlib.BoundLogger, cfg: RunConfig) -> int:
    model, age_stats = load_checkpoint(cfg.checkpoint)
    split = prepare_split(log, cfg)
    samples = split_samples(cfg, split, cfg.eval_split, age_stats or train_age_stats(split))
    report = evaluate(model, samples, cfg.normalized_by)
    print(report.to_text())

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    report_path = cfg.output_dir / f"report_{cfg.eval_split.value}.json"
    report_path.write_text(report.model_dump_json(indent=2))
    if report.roc_points is not None:
        export_roc(report, cfg.output_dir / f"roc_{cfg.eval_split.value}.txt")
    log.info("Report written", path=str(report_path), f2=report.f2, auc=report.auc)
    return EXIT_OK


def _heatmap_subject(
    cfg: RunConfig, split: DatasetSplit, model: Model, age_stats: AgeStats
) -> tuple[str, np.ndarray, np.ndarray]:
    if cfg.subject is not None:
        for name in SplitName:
            matches = [s for s in split.subjects(name) if s.id == cfg.subject and not s.flipped]
            if matches:
                samples = load_samples(matches, age_stats, cfg.manifest_path.parent)
                return cfg.subject, samples.volumes[0, ..., 0], samples.demographics[0]
        raise DataError(f"subject {cfg.subject!r} is not in the split record")

    subjects = [s for s in split.subjects(cfg.heatmap_split) if s.label is Label.PD]
    if not subjects:
        raise DataError(f"no PD subject in the {cfg.heatmap_split.value} split")
    samples = load_samples(subjects, age_stats, cfg.manifest_path.parent)
    predicted = predict_samples(model, samples).argmax(axis=1)
    correct = np.flatnonzero(predicted == Label.PD.index)
    if correct.size == 0:
        raise DataError(
            f"no correctly classified PD subject in the {cfg.heatmap_split.value} split; "
            "pass --subject"
        )
    i = int(correct[0])
    return samples.ids[i], samples.volumes[i, ..., 0], samples.demographics[i]


def cmd_heatmap(log: structlog.stdlib.BoundLogger, cfg: RunConfig) -> int:
    model, age_stats = load_checkpoint(cfg.checkpoint)
    if cfg.box > min(model.input_extents):
        raise UsageError(
            f"--box {cfg.box} exceeds the checkpoint's input extents {model.input_extents}"
        )
    split = prepare_split(log, cfg)
    age_stats = age_stats or train_age_stats(split)
    subject_id, volume, demographics = _heatmap_subject(cfg, split, model, age_stats)

    heatmap = occlusion_heatmap(
        log.bind(subject=subject_id),
        model,
        volume,
        demographics if model.config.use_demographics else None,
        box=cfg.box,
        stride=cfg.stride,
    )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    stem = f"heatmap_{subject_id}"
    heatmap_path = cfg.output_dir / f"{stem}.mvol"
    save_volume(heatmap, heatmap_path)
    print(heatmap_path)
    if cfg.slices:
        for path in export_center_slices(heatmap, cfg.output_dir, stem):
            print(path)
    return EXIT_OK


def cmd_search(log: structlog.stdlib.BoundLogger, cfg: RunConfig) -> int:
    split = prepare_split(log, cfg)
    age_stats = train_age_stats(split)
    evaluator = TrainingEvaluator(
        log,
        split_samples(cfg, split, SplitName.TRAIN, age_stats),
        split_samples(cfg, split, SplitName.DEV, age_stats),
    )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    if cfg.preset == "table3":
        results = asyncio.run(
            run_experiment_grid(
                log,
                evaluator,
                seed=cfg.seed,
                base_train=cfg.to_train_config(),
                results_path=cfg.output_dir / "grid.jsonl",
                workers=cfg.workers,
                limit=cfg.budget,
            )
        )
    else:
        results = asyncio.run(
            random_search(
                log,
                cfg.to_search_space(),
                cfg.budget or DEFAULT_SEARCH_BUDGET,
                evaluator,
                seed=cfg.seed,
                results_path=cfg.output_dir / "search.jsonl",
                workers=cfg.workers,
            )
        )
    print(format_experiment_table(results))
    return EXIT_OK


def cmd_stats(log: structlog.stdlib.BoundLogger, cfg: RunConfig) -> int:
    subjects = load_manifest(cfg.manifest_path)
    print(format_demographics(describe_demographics(subjects)))
    try:
        baseline = age_logistic_baseline(subjects, seed=cfg.seed)
    except ValueError as e:
        log.warning("Skipping age baseline", reason=str(e))
        return EXIT_OK
    print(
        f"age-only logistic baseline: accuracy {baseline.accuracy:.3f} "
        f"(majority class {baseline.majority_rate:.3f}, n_test {baseline.n_test})"
    )
    return EXIT_OK


Command = Callable[[structlog.stdlib.BoundLogger, RunConfig], int]

COMMANDS: dict[str, tuple[Command, str]] = {
    "synth": (cmd_synth, "write a synthetic dataset"),
    "split": (cmd_split, "write the train/dev/test split record"),
    "train": (cmd_train, "train and checkpoint a model"),
    "eval": (cmd_eval, "evaluate a checkpoint on one split"),
    "heatmap": (cmd_heatmap, "occlusion heatmap of one subject"),
    "search": (cmd_search, "random search or the experiment grid"),
    "stats": (cmd_stats, "demographic overview of a manifest"),
}


def run(
    argv: Sequence[str] | None = None,
    log: structlog.stdlib.BoundLogger | None = None,
) -> int:
    """Run one command; logging is configured from the run config unless `log` is given."""
    if log is None:
        configure_logging()
    fallback_log = log or get_logger()
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        if log is None:
            configure_logging(pretty=not cfg.log_json, level=cfg.log_level)
            log = get_logger()
        command, _ = COMMANDS[args.command]
        return command(log.bind(command=args.command), cfg)
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_OK
    except UsageError as e:
        (log or fallback_log).error("Usage error", error=str(e))
        return EXIT_USAGE
    except pydantic.ValidationError as e:
        (log or fallback_log).error("Invalid configuration", error=str(e))
        return EXIT_USAGE
    except NumericalError as e:
        (log or fallback_log).error("Numerical failure", error=str(e))
        return EXIT_NUMERICAL
    except (DataError, OSError) as e:
        (log or fallback_log).error("Data error", error=str(e))
        return EXIT_DATA


def main() -> None:
    sys.exit(run(sys.argv[1:]))
