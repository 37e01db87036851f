"""Adam optimizer and the mini-batch training loop."""

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DivergedLoss, NonFiniteGradient
from .model import loss_and_grad, loss_mse, param_checksum

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss: str = "are"
    schedule: str = "constant"
    lr_min: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr >= 0.0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.loss not in ("are", "dre"):
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown learning-rate schedule {self.schedule!r}")

    def lr_at(self, epoch):
        """Step size for ``epoch``; cosine decays from ``lr`` to ``lr_min``."""
        if self.schedule == "constant" or self.epochs == 1:
            return self.lr
        frac = epoch / (self.epochs - 1)
        return self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state, config, lr=None):
    """One in-place Adam update with bias correction; returns ``(params, state)``."""
    lr = config.lr if lr is None else lr
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient has non-finite entries")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


@dataclass
class TrainResult:
    model: object
    train_losses: list = field(default_factory=list)
    test_losses: list = field(default_factory=list)
    seconds: float = 0.0
    diagnostics: list = field(default_factory=list)

    @property
    def final_train_loss(self):
        return self.train_losses[-1] if self.train_losses else math.nan

    @property
    def final_test_loss(self):
        return self.test_losses[-1] if self.test_losses else math.nan


def arrays_from_records(records):
    x = np.array([r.encoding for r in records], dtype=float)
    y = np.array([r.target for r in records], dtype=float)
    return x, y


def evaluate_loss(model, x, y, times=None, chunk=1024):
    if len(x) == 0:
        return math.nan
    total = 0.0
    for s in range(0, len(x), chunk):
        part = slice(s, s + chunk)
        total += loss_mse(model, x[part], y[part], times) * len(x[part])
    return total / len(x)


def train(model, dataset, config, fit_normalization=True, callback=None):
    """Mini-batch Adam on the training split; returns a :class:`TrainResult`.

    Batches are reshuffled each epoch from a generator seeded by
    ``config.seed``.  For progressive models only the embed and lift weights
    move; the core is checked bit-for-bit afterwards.
    """
    x_train, y_train = arrays_from_records(dataset.train)
    x_test, y_test = arrays_from_records(dataset.test)
    times = dataset.times() if model.time_dependent else None
    if x_train.shape[1] != model.input_width:
        raise ValueError(f"dataset encoding width {x_train.shape[1]} != model input "
                         f"width {model.input_width}")
    if fit_normalization:
        model.fit_normalization(x_train, y_train)
    core = getattr(model, "core", None)
    core_sum = param_checksum(core.params()) if core is not None else None

    params = model.trainable_params()
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model=model)
    n = len(x_train)
    increases = 0
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        lr = config.lr_at(epoch)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = loss_and_grad(model, x_train[idx], y_train[idx], times)
            if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise DivergedLoss(f"training loss {loss:.3e} at epoch {epoch}")
            adam_step(params, grads, state, config, lr)
            model.clear_inference_cache()
            total += loss * len(idx)
        train_loss = total / n
        result.train_losses.append(train_loss)
        result.test_losses.append(evaluate_loss(model, x_test, y_test, times))
        if epoch and train_loss > result.train_losses[-2]:
            increases += 1
            if increases == 3 and config.lr <= 1e-4:
                msg = f"training loss rose three epochs running (epoch {epoch})"
                result.diagnostics.append(msg)
                log.warning(msg)
        else:
            increases = 0
        if callback is not None:
            callback(epoch, result)
    result.seconds = time.perf_counter() - start
    if core is not None and param_checksum(core.params()) != core_sum:
        raise RuntimeError("frozen core parameters changed during training")
    return result


def config_dict(config):
    return asdict(config)
