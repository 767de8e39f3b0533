"""Fine-tuning loop with SGD, learning-rate schedules and layer freezing."""

import csv
import io
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .bench import Analytical, model_cost
from .layers import FactorKind
from .model import backward, forward, predict, softmax_cross_entropy


class FreezePolicy(str, Enum):
    NONE = "none"
    REGULAR = "regular"
    SEQUENTIAL = "sequential"


class Schedule(str, Enum):
    COSINE = "cosine"
    FIXED = "fixed"


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: Schedule = Schedule.FIXED
    freeze_policy: FreezePolicy = FreezePolicy.NONE
    seed: int = 0
    batch_size: int = 32
    # "analytical" step times are deterministic FLOP-model estimates; "wallclock" measures.
    timing: str = "analytical"
    tile_width: int = 8

    def __post_init__(self):
        self.schedule = Schedule(self.schedule)
        self.freeze_policy = FreezePolicy(self.freeze_policy)
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"epochs must be an integer >= 1, got {self.epochs!r}")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.timing not in ("analytical", "wallclock"):
            raise ConfigError("timing must be 'analytical' or 'wallclock'")


def learning_rate(config, epoch):
    """Per-epoch learning rate; cosine decays from ``lr`` to 0 at the last epoch."""
    if config.schedule is Schedule.FIXED or config.epochs == 1:
        return config.lr
    return 0.5 * config.lr * (1.0 + math.cos(math.pi * epoch / (config.epochs - 1)))


class SGD:
    """SGD with momentum and L2 weight decay.

    ``v <- momentum * v + grad + weight_decay * w``; ``w <- w - lr * v``.
    Parameters without a gradient (frozen) are skipped entirely, so their
    weights and velocity buffers stay bit-identical.
    """

    def __init__(self, momentum=0.9, weight_decay=1e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, model, grads, lr):
        for key, w, spec in model.parameters():
            if not spec.trainable or key not in grads:
                continue
            g = grads[key]
            if self.weight_decay:
                g = g + self.weight_decay * w
            v = self.velocity.get(key)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[key] = v
            w -= lr * v
        return model


def sgd_step(model, grads, lr, optimizer=None):
    return (optimizer or SGD(0.0, 0.0)).step(model, grads, lr)


@dataclass
class EpochState:
    epoch: int
    frozen_sets: dict = field(default_factory=dict)


def frozen_indices(kind, policy, epoch):
    """Sublayer indices frozen for one factorized layer at ``epoch``."""
    policy = FreezePolicy(policy)
    if policy is FreezePolicy.NONE:
        return frozenset()
    tucker = FactorKind(kind) is FactorKind.TUCKER_TRIPLE
    even = frozenset({0, 2}) if tucker else frozenset({0})
    if policy is FreezePolicy.REGULAR or epoch % 2 == 0:
        return even
    return frozenset({1})


def apply_freeze(model, policy, epoch):
    """Set sublayer trainable flags for ``epoch``; dense layers are left alone."""
    state = EpochState(epoch)
    for name, f in model.factorized().items():
        frozen = frozen_indices(f.kind, policy, epoch)
        for i, sub in enumerate(f.sublayers):
            sub.trainable = i not in frozen
        state.frozen_sets[name] = set(frozen)
    return state


def accuracy(model, X, y, batch_size=256):
    correct = 0
    for i in range(0, len(X), batch_size):
        correct += int((predict(model, X[i : i + batch_size]).argmax(axis=1) == y[i : i + batch_size]).sum())
    return correct / len(X)


def _analytical_step(model, batch_shape, tile_width):
    return model_cost(model, batch_shape, Analytical(tile_width=tile_width, mode="train"))


def train(model, dataset, config, callback=None):
    """Fine-tune ``model`` in place; returns a list of per-epoch history rows.

    Each row has ``epoch``, ``loss`` (sample-weighted mean over the epoch),
    ``accuracy`` (training set, after the epoch), ``step_time`` (median
    seconds per step) and ``lr``. ``callback(epoch, state, model)`` runs
    after each epoch.
    """
    X, y = dataset
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) != len(y) or len(X) == 0:
        raise ValueError("dataset inputs and labels must be non-empty and equally long")
    model.output_shape((1,) + X.shape[1:])
    rng = np.random.default_rng(config.seed)
    opt = SGD(config.momentum, config.weight_decay)
    history = []
    for epoch in range(config.epochs):
        state = apply_freeze(model, config.freeze_policy, epoch)
        lr = learning_rate(config, epoch)
        order = rng.permutation(len(X))
        total = 0.0
        step_times = []
        for i in range(0, len(X), config.batch_size):
            idx = order[i : i + config.batch_size]
            xb, yb = X[idx], y[idx]
            t0 = time.perf_counter_ns()
            logits, cache = forward(model, xb)
            loss, g = softmax_cross_entropy(logits, yb)
            grads, _ = backward(model, g, cache)
            opt.step(model, grads, lr)
            t1 = time.perf_counter_ns()
            step_times.append((t1 - t0) / 1e9)
            total += loss * len(idx)
        if config.timing == "analytical":
            step_time = _analytical_step(model, (config.batch_size,) + X.shape[1:], config.tile_width)
        else:
            step_time = float(np.median(step_times))
        row = {
            "epoch": epoch,
            "loss": total / len(X),
            "accuracy": accuracy(model, X, y),
            "step_time": step_time,
            "lr": lr,
        }
        history.append(row)
        if callback is not None:
            callback(epoch, state, model)
    return history


HISTORY_COLUMNS = ("epoch", "loss", "accuracy", "step_time")


def history_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow([row["epoch"], repr(float(row["loss"])), repr(float(row["accuracy"])), repr(float(row["step_time"]))])
    return buf.getvalue()
