import math
import time
from pathlib import Path
from typing import Literal

import numpy as np
import structlog

from pdvox.data.batching import AgeStats, SampleSet, iter_batches
from pdvox.errors import DataError, NumericalError
from pdvox.metrics import build_report, confusion, precision_recall_f2
from pdvox.models.config import TrainConfig
from pdvox.models.history import EpochRecord, TrainHistory
from pdvox.models.report import ClassificationReport
from pdvox.net.architecture import Model, forward_var, predict_proba
from pdvox.net.checkpoint import save_checkpoint
from pdvox.optim import AdamState, adam_step, l2_penalty, lr_schedule
from pdvox.tensor.tape import Tape, backward
from pdvox.utils.seeding import derive_seed

# derive_seed counters, one stream per purpose
_SHUFFLE_STREAM = 0
_DROPOUT_STREAM = 1


def model_demographics(model: Model, samples: SampleSet) -> np.ndarray | None:
    return samples.demographics if model.config.use_demographics else None


def predict_samples(model: Model, samples: SampleSet, batch_size: int = 8) -> np.ndarray:
    return predict_proba(
        model, samples.volumes, model_demographics(model, samples), batch_size
    )


def f2_score(model: Model, samples: SampleSet, batch_size: int = 8) -> float:
    probs = predict_samples(model, samples, batch_size)
    counts, _ = confusion(probs.argmax(axis=1), samples.labels)
    return precision_recall_f2(counts)[2]


def evaluate(
    model: Model,
    samples: SampleSet,
    normalized_by: Literal["predicted", "truth"] = "predicted",
    batch_size: int = 8,
) -> ClassificationReport:
    """Prediction is the argmax class; the ROC score is the PD probability."""
    if len(samples) == 0:
        raise DataError("cannot evaluate an empty dataset")
    probs = predict_samples(model, samples, batch_size)
    return build_report(
        probs.argmax(axis=1), samples.labels, probs[:, 1], normalized_by
    )


def train(
    log: structlog.stdlib.BoundLogger,
    model: Model,
    train_set: SampleSet,
    dev_set: SampleSet | None,
    tc: TrainConfig,
    checkpoint_path: str | Path | None = None,
    age_stats: AgeStats | None = None,
    history_path: str | Path | None = None,
) -> TrainHistory:
    """
    Mini-batch Adam on cross-entropy plus the conv L2 penalty.

    After every epoch train and dev F2 are measured in inference mode. The
    parameters with the best dev F2 (train F2 without a dev set; earliest epoch
    on ties) are written to `checkpoint_path`; `model` itself keeps the final
    parameters.
    """
    if len(train_set) == 0:
        raise DataError("training set is empty")
    if dev_set is not None and len(dev_set) == 0:
        dev_set = None

    history = TrainHistory()
    state = AdamState.create(model.params)
    dropout_rng = np.random.default_rng(derive_seed(tc.seed, _DROPOUT_STREAM))
    demographics_used = model.config.use_demographics
    best_score: float | None = None
    best_model: Model | None = None
    perfect_streak = 0
    history_file = open(history_path, "w") if history_path is not None else None

    try:
        for epoch in range(1, tc.max_epochs + 1):
            started = time.perf_counter()
            loss_sum = 0.0
            lr = lr_schedule(tc.lr0, tc.decay_k, state.step, tc.decay_steps)
            batches = iter_batches(
                train_set,
                tc.batch_size,
                shuffle_seed=derive_seed(tc.seed, _SHUFFLE_STREAM, epoch),
            )
            for batch_index, batch in enumerate(batches, start=1):
                lr = lr_schedule(tc.lr0, tc.decay_k, state.step, tc.decay_steps)
                tape = Tape()
                logits = forward_var(
                    model,
                    tape,
                    batch.volumes,
                    batch.demographics if demographics_used else None,
                    training=True,
                    rng=dropout_rng,
                )
                loss, _ = tape.softmax_cross_entropy(logits, batch.labels)
                penalty, penalty_grads = l2_penalty(model, model.config.rc)
                total = float(loss.value) + penalty
                if not math.isfinite(total):
                    raise NumericalError(
                        f"non-finite loss {total} at epoch {epoch}, batch {batch_index}"
                    )
                grads = backward(tape, loss)
                for name, g in penalty_grads.items():
                    grads[name] = grads[name] + g
                adam_step(model.params, grads, state, lr, tc)
                loss_sum += total * len(batch.labels)

            train_f2 = f2_score(model, train_set, tc.batch_size)
            dev_f2 = None if dev_set is None else f2_score(model, dev_set, tc.batch_size)
            record = EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / len(train_set),
                train_f2=train_f2,
                dev_f2=dev_f2,
                lr=lr,
                wall_time=time.perf_counter() - started,
            )
            history.records.append(record)
            if history_file is not None:
                history_file.write(record.model_dump_json() + "\n")
                history_file.flush()
            log.info(
                "Epoch completed",
                epoch=epoch,
                train_loss=record.train_loss,
                train_f2=train_f2,
                dev_f2=dev_f2,
                lr=lr,
            )

            score = train_f2 if dev_f2 is None else dev_f2
            if best_score is None or score > best_score:
                best_score = score
                best_model = model.copy()
                history.best_epoch = epoch
                history.best_dev_f2 = dev_f2

            perfect_streak = perfect_streak + 1 if train_f2 == 1.0 else 0
            if tc.early_stop and perfect_streak >= tc.stop_patience:
                log.info(
                    "Stopping early",
                    epoch=epoch,
                    reason=f"train F2 = 1 for {perfect_streak} epochs",
                )
                break
    finally:
        if history_file is not None:
            history_file.close()

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, best_model or model, age_stats)
        log.info(
            "Checkpoint saved",
            path=str(checkpoint_path),
            best_epoch=history.best_epoch,
        )
    return history
