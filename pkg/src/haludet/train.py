"""AdamW training loop with stratified validation split and early stopping on
validation AUROC. Deterministic end to end: the split, the initialization and
every epoch's shuffle derive their seeds from the master seed."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics, model, nn
from .features import Dataset

# stream tags for seed derivation
_STREAM_SPLIT = 1
_STREAM_INIT = 2
_STREAM_EPOCH_BASE = 1000


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 20
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    patience: int = 5

    def __post_init__(self):
        if not (0 < self.val_fraction < 1):
            raise ValueError("val_fraction must lie strictly between 0 and 1")
        for name in ("lr", "batch_size", "max_epochs", "beta1", "beta2", "eps", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "seed", "lr", "batch_size", "max_epochs", "weight_decay",
            "beta1", "beta2", "eps", "val_fraction", "patience")}


@dataclass
class EpochStats:
    epoch: int  # 1-based
    train_loss: float
    val_auroc: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; first occurrence of the max val_auroc
    stopped_early: bool = False

    @property
    def best_val_auroc(self) -> float:
        return self.epochs[self.best_epoch - 1].val_auroc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"best_epoch\t{self.best_epoch}\n")
            f.write(f"stopped_early\t{str(self.stopped_early).lower()}\n")
            f.write("epoch\ttrain_loss\tval_auroc\n")
            for e in self.epochs:
                f.write(f"{e.epoch}\t{e.train_loss!r}\t{e.val_auroc!r}\n")


def split_train_val(ds: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Label-stratified split, shuffled deterministically by seed.

    Each class contributes round(val_fraction * class size) records to the
    validation side, clamped so both sides keep at least one record per class.
    Record order within each side follows the original dataset order.
    """
    labels = ds.labels()
    rng = nn.Rng(seed)
    val_idx: list[int] = []
    for cls in (0, 1):
        cls_idx = [i for i, y in enumerate(labels) if y == cls]
        if len(cls_idx) < 2:
            raise ValueError(f"need at least 2 records of label {cls}, found {len(cls_idx)}")
        n_val = min(len(cls_idx) - 1, max(1, round(val_fraction * len(cls_idx))))
        order = rng.permutation(len(cls_idx))
        val_idx += [cls_idx[j] for j in order[:n_val]]
    val_set = set(val_idx)
    train_idx = [i for i in range(len(ds)) if i not in val_set]
    return ds.subset(train_idx), ds.subset(sorted(val_idx))


def adamw_step(params: nn.ParamStore, cfg: TrainConfig, t: int) -> None:
    """One decoupled-weight-decay Adam update from the accumulated gradients;
    grads are zeroed afterwards. t is the 1-based step index."""
    if t < 1:
        raise ValueError("step index must be >= 1")
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for _, p in params.items():
        g = p.grad
        p.m[...] = b1 * p.m + (1.0 - b1) * g
        p.v[...] = b2 * p.v + (1.0 - b2) * g * g
        m_hat = p.m / bc1
        v_hat = p.v / bc2
        p.value[...] -= cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps)
                                  + cfg.weight_decay * p.value)
    params.zero_grads()


def train(ds: Dataset, mcfg: model.ModelConfig, tcfg: TrainConfig
          ) -> tuple[nn.ParamStore, TrainReport]:
    """Train the detector; returns the best-validation-AUROC snapshot.

    Per epoch: deterministic reshuffle of the training side (seed derived from
    the master seed and the epoch index), mean-BCE minibatches (the last,
    possibly short, batch is kept), one AdamW step per batch, then validation
    AUROC. Stops once `patience` consecutive epochs fail to improve; ties keep
    the earlier epoch.
    """
    train_ds, val_ds = split_train_val(ds, tcfg.val_fraction, nn.derive_seed(tcfg.seed, _STREAM_SPLIT))
    params = model.init_params(mcfg, nn.Rng(nn.derive_seed(tcfg.seed, _STREAM_INIT)))

    val_labels = val_ds.labels()
    report = TrainReport()
    best_auroc = -1.0
    best_params = params.copy()
    bad_epochs = 0
    step = 0

    for epoch in range(1, tcfg.max_epochs + 1):
        order = nn.Rng(nn.derive_seed(tcfg.seed, _STREAM_EPOCH_BASE + epoch)).permutation(len(train_ds))
        loss_sum = 0.0
        for bi, start in enumerate(range(0, len(order), tcfg.batch_size)):
            idx = order[start:start + tcfg.batch_size]
            batch = model.build_batch([train_ds.records[i] for i in idx], mcfg)
            loss = model.forward_backward(batch, params, mcfg)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {bi}")
            loss_sum += loss * len(idx)
            step += 1
            adamw_step(params, tcfg, step)
        train_loss = loss_sum / len(order)

        val_p = model.score_dataset(val_ds, params, mcfg)
        val_auroc = metrics.auroc(val_p, val_labels)
        report.epochs.append(EpochStats(epoch, train_loss, val_auroc))

        if val_auroc > best_auroc:
            best_auroc = val_auroc
            report.best_epoch = epoch
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tcfg.patience:
                report.stopped_early = True
                break

    return best_params, report
