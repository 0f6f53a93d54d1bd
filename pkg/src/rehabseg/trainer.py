"""Training loop, frame-wise evaluation, and k-fold cross-validation.

Training is mini-batch Adam over the masked cross-entropy; shuffling,
initialization, and fold sub-seeds all come from the caller's seed, so a
run is reproducible bit for bit on the same platform.  Each fold of
``cross_validate`` trains a fresh model and reports the accuracy of its
best-validation-epoch snapshot (the final-epoch numbers are kept
alongside, since either convention is defensible).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np

from . import _compute
from . import autograd as ag
from . import nn
from .dataset import IGNORE_INDEX, FoldPlan, Sequence, fold_split
from .errors import ConfigError, NumericError
from .models import Model, ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 0.001
    batch_size: int = 16
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainResult:
    model: Model                       # parameters as of the final epoch
    history: list[EpochStats]
    best_epoch: int
    best_val_acc: float
    best_state: dict[str, np.ndarray]  # parameters at the best epoch
    final_val_acc: float

    def restore_best(self) -> Model:
        self.model.load_state_arrays(self.best_state)
        return self.model


def framewise_accuracy(predictions: np.ndarray, labels: np.ndarray,
                       ignore_index: int = IGNORE_INDEX) -> float:
    """Correct / total over frames whose label is not ignored.

    ``predictions`` may be logits [..., n_classes] (argmax applied, ties to
    the lowest class index) or already-argmaxed integer labels.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.ndim == labels.ndim + 1:
        predictions = predictions.argmax(axis=-1)  # np.argmax picks the first max
    if predictions.shape != labels.shape:
        raise ConfigError(f"predictions {predictions.shape} vs labels {labels.shape}")
    kept = labels != ignore_index
    total = int(kept.sum())
    if total == 0:
        raise NumericError("no frames outside the ignore label")
    return float((predictions[kept] == labels[kept]).sum() / total)


def _stack(seqs: Seq[Sequence]) -> tuple[np.ndarray, np.ndarray]:
    values = np.stack([s.values for s in seqs])
    labels = np.stack([s.labels for s in seqs])
    return values, labels


def evaluate(model: Model, seqs: Seq[Sequence], batch_size: int = 16) -> float:
    """Frame-wise accuracy of the model over a sequence set."""
    if not seqs:
        raise ConfigError("cannot evaluate on an empty set")
    correct = 0
    total = 0
    with ag.no_grad():
        for lo in range(0, len(seqs), batch_size):
            chunk = seqs[lo:lo + batch_size]
            values, labels = _stack(chunk)
            logits = model.forward(values).data
            preds = logits.argmax(axis=-1)
            kept = labels != IGNORE_INDEX
            correct += int((preds[kept] == labels[kept]).sum())
            total += int(kept.sum())
    if total == 0:
        raise NumericError("evaluation set has no labeled frames")
    return correct / total


def train(model: Model, train_seqs: Seq[Sequence], val_seqs: Seq[Sequence],
          config: TrainConfig) -> TrainResult:
    """Mini-batch Adam over masked cross-entropy; returns final + best states."""
    if not train_seqs:
        raise ConfigError("empty training set")
    _compute.enable_heap_reuse()
    _compute.pin_blas_single_thread()

    params = model.params()
    values, labels = _stack(train_seqs)
    n = len(train_seqs)
    rng = np.random.default_rng(config.seed)
    history: list[EpochStats] = []
    best_epoch = -1
    best_val = -1.0
    best_state: dict[str, np.ndarray] = {}

    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = 0.0
        frames_sum = 0
        correct = 0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            batch_v = values[idx]
            batch_l = labels[idx]
            logits = model.forward(batch_v)
            loss = nn.masked_cross_entropy(logits, batch_l, IGNORE_INDEX)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}")
            kept = batch_l != IGNORE_INDEX
            n_kept = int(kept.sum())
            loss_sum += loss_value * n_kept
            frames_sum += n_kept
            correct += int((logits.data.argmax(-1)[kept] == batch_l[kept]).sum())
            loss.backward()
            nn.adam_step(params, lr=config.lr)
        train_loss = loss_sum / frames_sum
        train_acc = correct / frames_sum
        val_acc = evaluate(model, val_seqs, config.batch_size) if val_seqs else float("nan")
        history.append(EpochStats(epoch, train_loss, train_acc, val_acc))
        if val_seqs and val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_state = {name: arr.copy() for name, arr in model.state_arrays()}
        if epoch % 25 == 0 or epoch == config.epochs - 1:
            logger.info(
                "epoch %d loss %.4f train_acc %.4f val_acc %.4f",
                epoch, train_loss, train_acc, val_acc,
            )
    if not val_seqs:
        best_state = {name: arr.copy() for name, arr in model.state_arrays()}
        best_epoch = config.epochs - 1
        best_val = float("nan")
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_val_acc=best_val,
        best_state=best_state,
        final_val_acc=history[-1].val_acc,
    )


def write_history_csv(history: Seq[EpochStats], path) -> None:
    import csv
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
        for row in history:
            writer.writerow(
                [row.epoch, repr(row.train_loss), repr(row.train_acc), repr(row.val_acc)]
            )


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass
class FoldReport:
    model: str
    view: str
    fold_accuracies: list[float]          # best-epoch validation accuracy per fold
    mean: float
    std: float                            # population std, the +/- column
    final_fold_accuracies: list[float] = field(default_factory=list)

    @classmethod
    def from_accuracies(cls, model: str, view: str, accs: Seq[float],
                        final_accs: Seq[float] = ()) -> "FoldReport":
        arr = np.asarray(accs, dtype=np.float64)
        return cls(
            model=model,
            view=view,
            fold_accuracies=[float(a) for a in arr],
            mean=float(arr.mean()),
            std=float(arr.std()),
            final_fold_accuracies=[float(a) for a in final_accs],
        )

    def to_json(self) -> str:
        import json

        payload = {
            "model": self.model,
            "view": self.view,
            "fold_accuracies": self.fold_accuracies,
            "mean": self.mean,
            "std": self.std,
            "final_fold_accuracies": self.final_fold_accuracies,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def summary(self) -> str:
        return f"{self.model} ({self.view}): {100 * self.mean:.2f} +/- {100 * self.std:.2f}"


def _fold_seed(base_seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([base_seed, fold]).generate_state(1)[0])


def _run_fold(args) -> tuple[int, float, float]:
    model_config, records, plan, train_config, fold = args
    split = fold_split(records, plan, fold)
    seed = _fold_seed(train_config.seed, fold)
    model = Model(model_config, seed=seed)
    fold_cfg = TrainConfig(
        epochs=train_config.epochs,
        lr=train_config.lr,
        batch_size=train_config.batch_size,
        seed=seed,
        shuffle=train_config.shuffle,
    )
    result = train(model, split.train, split.test, fold_cfg)
    return fold, result.best_val_acc, result.final_val_acc


def cross_validate(model_config: ModelConfig, records: Seq[Sequence], plan: FoldPlan,
                   train_config: TrainConfig, jobs: int = 1) -> FoldReport:
    """Train one fresh model per fold and aggregate mean +/- std accuracy."""
    tasks = [(model_config, list(records), plan, train_config, f) for f in range(plan.k)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_fold, tasks))
    else:
        outcomes = [_run_fold(t) for t in tasks]
    outcomes.sort(key=lambda o: o[0])
    best = [acc for _, acc, _ in outcomes]
    final = [acc for _, _, acc in outcomes]
    view = records[0].view.value if records else ""
    return FoldReport.from_accuracies(model_config.name, view, best, final)
