"""Maximum-likelihood training of the flow.

The per-sample loss is the negative log-likelihood up to the Gaussian
normalization constant:

    loss(x) = 0.5 * ||z||^2 - logdet(x),   z = f(x)

A batch contributes the mean over its samples, so the learning rate keeps
its meaning across batch sizes. Optimization is Adam with a step-decay
schedule: the learning rate is multiplied by ``lr_decay`` when entering each
epoch listed in ``decay_epochs`` (1-indexed, i.e. before that epoch's first
batch).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .flow import MVTFlowModel
from .rng import named_rng
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 8e-4
    lr_decay: float = 0.1
    decay_epochs: tuple[int, ...] = (11, 61)
    epochs: int = 70
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ValueError("decay_epochs must be strictly increasing")
        if any(e < 1 or e > self.epochs for e in self.decay_epochs):
            raise ValueError("decay_epochs must lie in [1, epochs]")


class Adam:
    """Standard Adam with bias correction; deterministic given the gradient
    sequence. Moments are kept per parameter in parameter order."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step_count = 0

    def step(self, lr: float) -> None:
        grads = []
        for p in self.params:
            if p.grad is None:
                raise ValueError("Adam.step: a parameter has no gradient; "
                                 "run backward first")
            if p.grad.shape != p.data.shape:
                raise ValueError("Adam.step: gradient/parameter shape mismatch")
            grads.append(p.grad)
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def nll_loss(z: Tensor, logdet: Tensor) -> Tensor:
    """0.5*||z||^2 - logdet for one sample (the anomaly score)."""
    return tt.sub(tt.scale(tt.sum_squares(z), 0.5), logdet)


def batch_nll_loss(z: Tensor, logdet: Tensor, n_samples: int) -> Tensor:
    """Mean per-sample loss of a batch whose z and logdet were computed
    jointly (sum_squares and logdet both sum over the whole batch)."""
    return tt.scale(tt.sub(tt.scale(tt.sum_squares(z), 0.5), logdet),
                    1.0 / n_samples)


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Learning rate in effect during a 1-indexed epoch."""
    lr = config.lr
    for decay_epoch in config.decay_epochs:
        if epoch >= decay_epoch:
            lr *= config.lr_decay
    return lr


@dataclass
class TrainResult:
    model: MVTFlowModel
    epoch_losses: list[float] = field(default_factory=list)
    epoch_lrs: list[float] = field(default_factory=list)

    def history_rows(self) -> list[tuple[int, float, float]]:
        return [(e + 1, loss, lr) for e, (loss, lr)
                in enumerate(zip(self.epoch_losses, self.epoch_lrs))]


def train(model: MVTFlowModel, samples: np.ndarray, config: TrainConfig,
          on_epoch=None) -> TrainResult:
    """Train on normal data only.

    samples: preprocessed array (N, T, S) matching model.input_shape.
    Shuffling uses the "shuffle" stream of config.seed; the last partial
    batch is kept. Aborts with a diagnostic if the loss turns non-finite.
    """
    if samples.ndim != 3 or samples.shape[0] == 0:
        raise ValueError(f"training data must be a non-empty (N, T, S) array, "
                         f"got shape {samples.shape}")
    if tuple(samples.shape[1:]) != model.input_shape:
        raise ValueError(f"training data shape {samples.shape[1:]} does not "
                         f"match model (T, S)={model.input_shape}")
    data = np.ascontiguousarray(samples, dtype=model.dtype)
    n = data.shape[0]
    optimizer = Adam(model.parameters(), config.adam_beta1, config.adam_beta2,
                     config.adam_eps)
    shuffle_rng = named_rng(config.seed, "shuffle")
    result = TrainResult(model)

    for epoch in range(1, config.epochs + 1):
        lr = lr_at_epoch(config, epoch)
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            batch = data[order[start:start + config.batch_size]]
            xt = Tensor(batch)
            with tt.Graph():
                z, logdet = model.forward(xt)
                loss = batch_nll_loss(z, logdet, batch.shape[0])
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    max_grad = _max_abs_grad(model)
                    raise FloatingPointError(
                        f"non-finite loss {loss_value} at epoch {epoch}, "
                        f"batch {batch_index} (max |grad| so far: {max_grad})")
                optimizer.zero_grad()
                tt.backward(loss)
            optimizer.step(lr)
            epoch_loss += loss_value * batch.shape[0]
        mean_loss = epoch_loss / n
        result.epoch_losses.append(mean_loss)
        result.epoch_lrs.append(lr)
        log.info("epoch %d/%d: loss %.6f lr %.2e", epoch, config.epochs,
                 mean_loss, lr)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, lr)
    return result


def _max_abs_grad(model: MVTFlowModel) -> float:
    worst = 0.0
    for p in model.parameters():
        if p.grad is not None and p.grad.size:
            worst = max(worst, float(np.max(np.abs(p.grad))))
    return worst


def write_loss_history(path, result: TrainResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,mean_loss,lr\n")
        for epoch, loss, lr in result.history_rows():
            fh.write(f"{epoch},{loss!r},{lr!r}\n")
