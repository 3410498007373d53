"""Deterministic training loop, evaluation metrics, and checkpoints.

Loss is mean squared error on raw cycle labels (labels are never scaled).
Optimization is Adam with optional L2 weight decay added to the gradient.
The loop shuffles with a seeded generator, tracks validation MAPE each
epoch, keeps the best-validation parameter snapshot, and stops early after
``patience`` non-improving epochs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as tio
from .errors import CheckpointError, TrainingError
from .model import FpnnConfig, FpnnParams, fpnn_backward, fpnn_forward
from .ops import BnState
from .preprocess import SampleSet

CHECKPOINT_KIND = "fpnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    patience: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("epochs, learning_rate and eps must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batchnorm needs real batches)")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.patience < 0:
            raise ValueError("weight_decay and patience must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size,
            "learning_rate": self.learning_rate, "beta1": self.beta1,
            "beta2": self.beta2, "eps": self.eps,
            "weight_decay": self.weight_decay, "patience": self.patience,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        return cls(**known)


# ---------------------------------------------------------------------------
# loss and metrics
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient 2*(pred - target)/N."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"pred {pred.shape} and target {target.shape} differ")
    resid = pred - target
    return float((resid**2).mean()), 2.0 * resid / resid.size


def compute_metrics(y: np.ndarray, yhat: np.ndarray) -> tuple[float, float, float]:
    """(MAPE %, MAE, RMSE): percentage error, absolute error, and root mean
    square error over paired actual/predicted values."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1 or y.size == 0:
        raise ValueError("y and yhat must be equal-length nonempty vectors")
    if np.any(y == 0):
        raise ValueError("MAPE undefined: actual value of 0 present")
    err = y - yhat
    mape = 100.0 * float(np.mean(np.abs(err / y)))
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    return mape, mae, rmse


@dataclass
class EvalReport:
    """Evaluation metrics plus the per-sample and per-battery breakdown."""

    mape: float  # percent
    mae: float  # cycles
    rmse: float  # cycles
    residuals: np.ndarray  # yhat - y per sample
    per_battery: dict[str, dict[str, float]]

    def __post_init__(self):
        assert self.rmse >= self.mae >= 0.0 and self.mape >= 0.0

    def to_dict(self) -> dict:
        return {
            "mape_percent": self.mape,
            "mae_cycles": self.mae,
            "rmse_cycles": self.rmse,
            "residuals": self.residuals.tolist(),
            "per_battery": self.per_battery,
        }


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def initial(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(x) for k, x in tensors.items()},
            v={k: np.zeros_like(x) for k, x in tensors.items()},
        )


def adam_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new tensors and state.

    Weight decay (when nonzero) is classic L2: decay * param is added to the
    gradient before the moment updates.
    """
    if set(tensors) != set(grads) or set(tensors) != set(state.m):
        raise ValueError("params, grads and optimizer state must share keys")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_tensors, new_m, new_v = {}, {}, {}
    for k, x in tensors.items():
        g = grads[k]
        if g.shape != x.shape:
            raise ValueError(f"grad shape mismatch for {k}: {g.shape} vs {x.shape}")
        if config.weight_decay:
            g = g + config.weight_decay * x
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_tensors[k] = x - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[k] = m
        new_v[k] = v
    return new_tensors, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# train / evaluate
# ---------------------------------------------------------------------------

def _forward_in_chunks(params: FpnnParams, samples: SampleSet, chunk: int = 64) -> np.ndarray:
    preds = []
    for lo in range(0, len(samples), chunk):
        batch = (samples.raw[lo : lo + chunk], samples.diff[lo : lo + chunk])
        preds.append(fpnn_forward(batch, params, mode="eval"))
    return np.concatenate(preds)


def evaluate(params: FpnnParams, samples: SampleSet) -> EvalReport:
    """Eval-mode predictions with MAPE/MAE/RMSE and per-battery MAE."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    yhat = _forward_in_chunks(params, samples)
    y = samples.labels
    mape, mae, rmse = compute_metrics(y, yhat)
    per_battery: dict[str, dict[str, float]] = {}
    for bid in sorted(set(samples.battery_ids)):
        idx = [i for i, b in enumerate(samples.battery_ids) if b == bid]
        abs_err = np.abs(yhat[idx] - y[idx])
        per_battery[bid] = {
            "mae": float(abs_err.mean()),
            "n_samples": len(idx),
            "life": float(y[idx[0]]),
        }
    return EvalReport(mape, mae, rmse, residuals=yhat - y, per_battery=per_battery)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mape: float


def train(
    params: FpnnParams,
    train_samples: SampleSet,
    val_samples: SampleSet,
    config: TrainConfig,
) -> tuple[FpnnParams, list[EpochRecord]]:
    """Run the training loop; returns (best-validation params, history).

    Each epoch shuffles with the config seed, runs minibatch forward/
    backward/Adam, then scores validation MAPE in eval mode. The best-
    validation snapshot is returned; training stops once validation has
    not improved for more than ``patience`` consecutive epochs.
    """
    if len(train_samples) == 0 or len(val_samples) == 0:
        raise TrainingError("train and validation splits must be nonempty")
    rng = np.random.default_rng(config.seed)
    work = params.copy()
    opt = AdamState.initial(work.tensors)
    history: list[EpochRecord] = []
    best_mape = math.inf
    best_params = work.copy()
    stale = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_samples))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = (train_samples.raw[idx], train_samples.diff[idx])
            target = train_samples.labels[idx]
            preds, bn_states, cache = fpnn_forward(batch, work, mode="train", want_cache=True)
            loss, pred_grad = mse_loss(preds, target)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches} "
                    f"(samples {lo}..{lo + len(idx) - 1})"
                )
            grads = fpnn_backward(work, cache, pred_grad)
            work.bn_states = bn_states
            work.tensors, opt = adam_step(work.tensors, grads, opt, config)
            epoch_loss += loss * len(idx)
            n_batches += 1
        epoch_loss /= len(order)

        val_report = evaluate(work, val_samples)
        history.append(EpochRecord(epoch, epoch_loss, val_report.mape))
        if val_report.mape < best_mape:
            best_mape = val_report.mape
            best_params = work.copy()
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    return best_params, history


def save_history(path: str | Path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_mape"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_mape)])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: FpnnParams, path: str | Path) -> None:
    """Config echo plus every tensor and batchnorm state, checksummed."""
    tensors = dict(params.tensors)
    for name, state in params.bn_states.items():
        tensors[f"{name}.running_mean"] = state.mean
        tensors[f"{name}.running_var"] = state.var
    meta = {
        "kind": CHECKPOINT_KIND,
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "bn_names": sorted(params.bn_states),
    }
    tio.write_tensors(path, tensors, meta)


def load_checkpoint(path: str | Path) -> FpnnParams:
    meta, tensors = tio.read_tensors(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not a model checkpoint")
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('checkpoint_version')} "
            f"incompatible with {CHECKPOINT_VERSION}"
        )
    config = FpnnConfig.from_dict(meta["config"])
    bn_states = {}
    for name in meta["bn_names"]:
        bn_states[name] = BnState(
            tensors.pop(f"{name}.running_mean"), tensors.pop(f"{name}.running_var")
        )
    return FpnnParams(config, tensors, bn_states)
