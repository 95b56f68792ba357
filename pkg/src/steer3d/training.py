"""Loss, optimizer, training loop with early stopping, and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Param, Tape, Tensor
from .nn import SteeringModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 300
    patience: int = 20
    horizon: int = 4
    weight_alpha: float = 0.0
    seed: int = 0
    points_per_frame: int = 256

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1 or self.horizon < 1:
            raise ValueError("max_epochs and horizon must be >= 1")
        if self.patience < 0 or self.weight_alpha < 0:
            raise ValueError("patience and weight_alpha must be non-negative")


def turn_weights(truth, weight_alpha: float) -> np.ndarray:
    return 1.0 + weight_alpha * np.abs(np.asarray(truth, dtype=np.float64))


def weighted_mse(pred, truth, weight_alpha: float = 0.0):
    """Weighted mean of squared residuals, weights ``1 + alpha |truth|``.

    Accepts a :class:`Tensor` prediction (returns a differentiable scalar
    Tensor) or plain arrays (returns a float).
    """
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    n_pred = pred.value.size if isinstance(pred, Tensor) else np.size(pred)
    if n_pred != truth.size:
        raise ValueError(f"{n_pred} predictions vs {truth.size} targets")
    if truth.size == 0:
        raise ValueError("empty inputs")
    w = turn_weights(truth, weight_alpha)
    w = w / w.sum()
    if isinstance(pred, Tensor):
        resid = pred.reshape(-1) - truth
        return (resid.square() * w).sum()
    resid = np.asarray(pred, dtype=np.float64).reshape(-1) - truth
    return float(np.sum(w * resid * resid))


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(opt: OptimizerState, params: Sequence[Param], lr: float) -> None:
    """Bias-corrected adaptive-moment update; zeroes gradients afterwards."""
    for p in params:
        if p.grad is None:
            raise TrainingError(f"parameter {p.name} has no gradient")
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for p in params:
        g = p.grad
        m = opt.m.setdefault(p.name, np.zeros_like(p.value))
        v = opt.v.setdefault(p.name, np.zeros_like(p.value))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        p.zero_grad()


# --- datasets of windows --------------------------------------------------------


@dataclass(eq=False)
class DriveSequence:
    """One driving sequence: model-ready frames and per-frame steering labels."""

    name: str
    frames: list
    truth: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=np.float64)
        if len(self.frames) != len(self.truth):
            raise ValueError("frame/label count mismatch")
        if self.valid is None:
            self.valid = np.ones(len(self.truth), dtype=bool)


def windows(sequences: Sequence[DriveSequence], horizon: int) -> list[tuple[int, int]]:
    """``(sequence, frame)`` targets; each uses up to ``horizon`` frames ending at ``frame``."""
    out = []
    for s, seq in enumerate(sequences):
        out += [(s, t) for t in range(len(seq.frames)) if seq.valid[t]]
    return out


def window_frames(seq: DriveSequence, t: int, horizon: int) -> list:
    return seq.frames[max(0, t - horizon + 1) : t + 1]


@dataclass
class EvalReport:
    mse: float
    residuals: np.ndarray
    predictions: np.ndarray
    truth: np.ndarray
    targets: list
    split: str = ""

    def to_csv(self) -> str:
        rows = ["sequence,frame,truth,prediction,residual"]
        for (name, t), y, p, r in zip(self.targets, self.truth, self.predictions, self.residuals):
            rows.append(f"{name},{t},{float(y)!r},{float(p)!r},{float(r)!r}")
        return "\n".join(rows) + "\n"


def evaluate(model: SteeringModel, dataset: Sequence[DriveSequence], horizon: int = 4, split: str = "") -> EvalReport:
    """Plain MSE over every labelled frame."""
    targets = windows(dataset, horizon)
    if not targets:
        raise ValueError("empty dataset")
    preds = np.array([model.predict(window_frames(dataset[s], t, horizon)) for s, t in targets])
    truth = np.array([dataset[s].truth[t] for s, t in targets])
    resid = preds - truth
    return EvalReport(
        mse=float(np.mean(resid * resid)),
        residuals=resid,
        predictions=preds,
        truth=truth,
        targets=[(dataset[s].name, t) for s, t in targets],
        split=split,
    )


def mean_predictor_mse(train: Sequence[DriveSequence], held_out: Sequence[DriveSequence]) -> float:
    """MSE on ``held_out`` of a constant equal to the mean training label."""
    mu = np.mean(np.concatenate([s.truth[s.valid] for s in train]))
    y = np.concatenate([s.truth[s.valid] for s in held_out])
    return float(np.mean((y - mu) ** 2))


@dataclass
class History:
    epochs: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    stopped_early: bool = False
    best_params: dict = field(default_factory=dict, repr=False)

    def to_csv(self) -> str:
        rows = ["epoch,train_mse,val_mse"]
        rows += [f"{e},{float(a)!r},{float(b)!r}" for e, a, b in zip(self.epochs, self.train_mse, self.val_mse)]
        return "\n".join(rows) + "\n"


def train(
    model: SteeringModel,
    train_set: Sequence[DriveSequence],
    val_set: Sequence[DriveSequence],
    cfg: TrainConfig,
    opt: OptimizerState | None = None,
    start_epoch: int = 0,
    restore_best: bool = True,
) -> tuple[SteeringModel, History, OptimizerState]:
    """Per-window Adam training; returns the best-validation parameters.

    Stops after ``max_epochs`` or once validation MSE has failed to improve for
    more than ``patience`` consecutive epochs.  With ``restore_best=False`` the
    model keeps its last-epoch parameters (for resuming) and the best ones are
    left in ``History.best_params``.
    """
    targets = windows(train_set, cfg.horizon)
    if not targets or not windows(val_set, cfg.horizon):
        raise ValueError("training and validation splits must be non-empty")
    opt = opt or OptimizerState()
    params = model.params
    hist = History()
    hist.best_params = model.snapshot()
    bad = 0
    for epoch in range(start_epoch, start_epoch + cfg.max_epochs):
        total = 0.0
        # per-epoch stream so a resumed run replays the same order
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(targets))
        for k in order:
            s, t = targets[k]
            seq = train_set[s]
            with Tape() as tape:
                pred = model.forward(window_frames(seq, t, cfg.horizon))
                loss = weighted_mse(pred, [seq.truth[t]], cfg.weight_alpha)
            if not np.isfinite(loss.value).all():
                raise TrainingError(f"non-finite loss at epoch {epoch}, sequence {seq.name} frame {t}")
            tape.backward(loss, check_finite=params)
            adam_step(opt, params, cfg.learning_rate)
            total += float(loss.value)
        val = evaluate(model, val_set, cfg.horizon, "val").mse
        hist.epochs.append(epoch)
        hist.train_mse.append(total / len(targets))
        hist.val_mse.append(val)
        log.info("epoch %d train %.6f val %.6f", epoch, hist.train_mse[-1], val)
        if val < hist.best_val:
            hist.best_val, hist.best_epoch = val, epoch
            hist.best_params = model.snapshot()
            bad = 0
        else:
            bad += 1
            if bad > cfg.patience:
                hist.stopped_early = True
                break
    if restore_best:
        model.restore(hist.best_params)
    return model, hist, opt
