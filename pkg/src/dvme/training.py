"""Minibatch Adam training with plateau LR scheduling, early stopping, and
inverse-frequency oversampling. Fully reproducible: one counter-based Philox
stream drives batch order, another drives dropout masks."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError, ShapeMismatchError
from .evalbench import auc_binary, auc_macro_ovr, cohen_kappa

MONITOR_METRICS = ("auc", "kappa")


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1e-3
    batch_size: int = 64
    min_epochs: int = 30
    max_epochs: int = 50
    early_stop_patience: int = 10
    scheduler_patience: int = 5
    scheduler_factor: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    oversample: bool = False
    monitor_metric: str = "auc"
    kappa_weighting: str = "quadratic"

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ParameterError("initial_lr must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be positive")
        if not 0 < self.scheduler_factor < 1:
            raise ParameterError("scheduler_factor must lie in (0, 1)")
        if self.early_stop_patience < 1 or self.scheduler_patience < 1:
            raise ParameterError("patiences must be at least 1")
        if self.min_epochs > self.max_epochs:
            raise ParameterError("min_epochs must not exceed max_epochs")
        if self.monitor_metric not in MONITOR_METRICS:
            raise ParameterError(f"monitor_metric must be one of {MONITOR_METRICS}")
        if self.kappa_weighting not in ("none", "quadratic"):
            raise ParameterError("kappa_weighting must be 'none' or 'quadratic'")


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def initialize(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"grad {name} shape {g.shape} != param {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name} at step {step}")
        m = beta1 * state.m[name] + (1 - beta1) * g
        v = beta2 * state.v[name] + (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, step=step)


class PlateauScheduler:
    """Multiplies lr by `factor` at the `patience`-th consecutive epoch whose
    score fails to strictly improve on the best so far; the counter resets on
    improvement and on each reduction."""

    def __init__(self, initial_lr, patience=5, factor=0.1):
        self.lr = initial_lr
        self.patience = patience
        self.factor = factor
        self.best = -math.inf
        self.bad_epochs = 0

    def step(self, score):
        if score > self.best:
            self.best = score
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


class EarlyStopper:
    """Stop after `patience` epochs without strict improvement, but never
    before min_epochs; always stop at max_epochs."""

    def __init__(self, patience=10, min_epochs=30, max_epochs=50):
        self.patience = patience
        self.min_epochs = min_epochs
        self.max_epochs = max_epochs
        self.best = -math.inf
        self.bad_epochs = 0
        self.epoch = 0

    def step(self, score):
        self.epoch += 1
        if score > self.best:
            self.best = score
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.epoch >= self.max_epochs:
            return True
        return self.bad_epochs >= self.patience and self.epoch >= self.min_epochs


def make_batches(n, batch_size, labels=None, oversample=False, rng=None):
    """One epoch of index batches: a seeded shuffle, or (oversampling) n draws
    with replacement weighted inversely to class frequency."""
    if n < 1:
        raise ParameterError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ParameterError("batch_size must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    if oversample:
        if labels is None:
            raise ParameterError("oversampling needs labels")
        labels = np.asarray(labels)
        counts = np.bincount(labels)
        weights = 1.0 / counts[labels]
        order = rng.choice(n, size=n, replace=True, p=weights / weights.sum())
    else:
        order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_score: float
    lr: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    def to_table(self):
        """Line-delimited (epoch, loss, val score, lr) export; fixed order."""
        lines = ["epoch loss val_score lr"]
        for r in self.records:
            lines.append(f"{r.epoch} {r.train_loss!r} {r.val_score!r} {r.lr!r}")
        return "\n".join(lines) + "\n"


@dataclass
class FitResult:
    params: dict
    history: TrainHistory


def take(inputs, idx):
    """Index either a feature matrix or a per-source mapping of them."""
    if isinstance(inputs, dict):
        return {name: x[idx] for name, x in inputs.items()}
    return inputs[idx]


def _num_samples(inputs):
    if isinstance(inputs, dict):
        return next(iter(inputs.values())).shape[0]
    return inputs.shape[0]


def predict_proba_chunked(model, params, inputs, batch_size=64):
    n = _num_samples(inputs)
    chunks = [
        model.predict_proba(params, take(inputs, slice(i, i + batch_size)))
        for i in range(0, n, batch_size)
    ]
    return np.concatenate(chunks, axis=0)


def monitor_score(labels, probabilities, metric, kappa_weighting="quadratic"):
    if metric == "auc":
        if probabilities.shape[1] == 2:
            return auc_binary(probabilities[:, 1], labels)
        return auc_macro_ovr(probabilities, labels)
    if metric == "kappa":
        return cohen_kappa(
            labels,
            probabilities.argmax(axis=1),
            weighting=kappa_weighting,
            num_classes=probabilities.shape[1],
        )
    raise ParameterError(f"unknown monitor metric {metric!r}")


def fit(model, train_inputs, train_labels, val_inputs, val_labels, config):
    """Train with minibatch Adam; returns the params of the epoch with the
    best validation monitor metric plus the full history."""
    train_labels = np.asarray(train_labels)
    val_labels = np.asarray(val_labels)
    n = _num_samples(train_inputs)
    if n != len(train_labels):
        raise ShapeMismatchError("train inputs and labels disagree on length")

    batch_stream, dropout_stream = np.random.SeedSequence(config.seed).spawn(2)
    batch_rng = np.random.Generator(np.random.Philox(batch_stream))
    dropout_rng = np.random.Generator(np.random.Philox(dropout_stream))

    params = model.init_params(config.seed)
    state = AdamState.initialize(params)
    scheduler = PlateauScheduler(
        config.initial_lr, config.scheduler_patience, config.scheduler_factor
    )
    stopper = EarlyStopper(config.early_stop_patience, config.min_epochs, config.max_epochs)

    history = TrainHistory()
    best_score = -math.inf
    best_params = {k: p.copy() for k, p in params.items()}

    for epoch in range(1, config.max_epochs + 1):
        lr = scheduler.lr
        loss_sum = 0.0
        batches = make_batches(
            n, config.batch_size, train_labels, config.oversample, batch_rng
        )
        for idx in batches:
            loss, grads = model.loss_and_grads(
                params, take(train_inputs, idx), train_labels[idx], rng=dropout_rng
            )
            if not math.isfinite(loss):
                history.stop_reason = "aborted"
                error = NumericError(f"non-finite training loss at epoch {epoch}")
                error.history = history
                raise error
            params, state = adam_step(
                params, grads, state, lr,
                config.adam_beta1, config.adam_beta2, config.adam_eps,
            )
            loss_sum += loss * len(idx)

        probs = predict_proba_chunked(model, params, val_inputs, config.batch_size)
        score = monitor_score(
            val_labels, probs, config.monitor_metric, config.kappa_weighting
        )
        history.records.append(
            EpochRecord(epoch=epoch, train_loss=loss_sum / n, val_score=score, lr=lr)
        )
        if score > best_score:
            best_score = score
            best_params = {k: p.copy() for k, p in params.items()}
            history.best_epoch = epoch

        scheduler.step(score)
        if stopper.step(score):
            history.stop_reason = (
                "max_epochs" if epoch == config.max_epochs else "early_stop"
            )
            break

    return FitResult(params=best_params, history=history)
