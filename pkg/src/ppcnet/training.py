"""Training: focal loss, SGD with momentum and weight decay, cosine
annealing, and the epoch loop with jitter augmentation.

The loop is strictly sequential and consumes a single generator stream,
so a seed pins every stochastic choice: epoch shuffles, jitter noise,
input shuffles, and dropout masks.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, NumericError
from .network import Model, forward_batch
from .pointcloud import jitter
from .rng import make_rng


def focal_loss(logits, labels, gamma: float):
    """Mean focal loss over a batch of logits, with its exact gradient.

    gamma = 0 reduces to cross-entropy; larger gamma down-weights easy
    examples, which is the point when class counts are lopsided.
    """
    return ad.focal_value_grad(np.asarray(logits), np.asarray(labels), gamma)


@dataclass
class TrainParams:
    learning_rate: float = 0.001
    epochs: int = 300
    batch_size: int = 10
    weight_decay: float = 0.01
    momentum: float = 0.9
    dropout: float = 0.6
    focal_gamma: float = 2.0
    jitter_fraction: float = 0.03
    seed: int = 0
    optimizer: str = "sgd"
    scheduler: str = "cosine"
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = off

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.weight_decay < 0 or self.momentum < 0 or self.focal_gamma < 0:
            raise ConfigError("weight decay, momentum, and gamma must be >= 0")
        if self.jitter_fraction < 0:
            raise ConfigError("jitter fraction must be >= 0")
        if self.optimizer != "sgd":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.scheduler not in ("cosine", "constant"):
            raise ConfigError(f"unsupported scheduler {self.scheduler!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "TrainParams":
        unknown = set(d) - set(TrainParams.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        params = TrainParams(**d)
        params.validate()
        return params


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    lr: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def append(self, stats: EpochStats):
        self.epochs.append(stats)

    def to_csv(self) -> str:
        lines = ["epoch,loss,train_acc,lr"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.loss!r},{e.train_acc!r},{e.lr!r}")
        return "\n".join(lines) + "\n"


def lr_at(epoch: int, params: TrainParams) -> float:
    """Cosine-annealed learning rate for one epoch."""
    if not 0 <= epoch < max(params.epochs, 1):
        raise ConfigError(f"epoch {epoch} outside [0, {params.epochs})")
    if params.scheduler == "constant":
        return params.learning_rate
    return max(0.0, 0.5 * params.learning_rate * (1.0 + np.cos(np.pi * epoch / params.epochs)))


def sgd_step(params, velocity: dict, lr: float, momentum: float,
             weight_decay: float, grad_scale: float = 1.0):
    """One SGD update over (name, tensor) parameter pairs.

    v <- momentum*v + (grad_scale*g + weight_decay*theta); theta <- theta - lr*v.
    Velocity buffers live in the supplied dict, keyed by parameter name.
    """
    for name, p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")
        step = grad_scale * g + weight_decay * p.data
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v + step
        velocity[name] = v
        p.data = p.data - (lr * v).astype(p.data.dtype, copy=False)


def train(model: Model, data, params: TrainParams,
          rng: np.random.Generator | None = None,
          velocity: dict | None = None,
          start_epoch: int = 0,
          epoch_callback=None) -> tuple[Model, TrainHistory]:
    """Run the full recipe: per epoch, shuffle the training set, jitter
    each cloud, forward in train mode, focal loss, backward, one SGD step
    per batch at the cosine-annealed rate.

    rng/velocity/start_epoch allow deterministic resumption from a
    checkpoint; by default a fresh stream is derived from params.seed.
    """
    params.validate()
    if data.train_size == 0:
        raise DataError("empty training set")
    labels = data.labels
    if labels.max() >= model.spec.num_classes:
        raise DataError("label outside the model's class range")
    if rng is None:
        rng = make_rng(params.seed)
    if velocity is None:
        velocity = {}
    history = TrainHistory()

    train_idx = np.asarray(data.train_indices)
    for epoch in range(start_epoch, params.epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, params)
        order = train_idx[rng.permutation(len(train_idx))]
        loss_sum = 0.0
        correct = 0
        for lo in range(0, len(order), params.batch_size):
            batch = order[lo:lo + params.batch_size]
            clouds = []
            for idx in batch:
                cloud = data.load(int(idx))
                if params.jitter_fraction > 0:
                    cloud = jitter(cloud, params.jitter_fraction, rng)
                clouds.append(cloud)
            model.zero_grad()
            logits = forward_batch(model, clouds, mode="train", rng=rng,
                                   dropout=params.dropout)
            batch_labels = labels[batch]
            loss = ad.focal(logits, batch_labels, params.focal_gamma)
            loss.backward()
            loss_sum += float(loss.data) * len(batch)
            correct += int((np.argmax(logits.data, axis=1) == batch_labels).sum())
            sgd_step(model.params(), velocity, lr, params.momentum, params.weight_decay)
        model.zero_grad()
        stats = EpochStats(epoch=epoch, loss=loss_sum / len(order),
                           train_acc=correct / len(order), lr=lr,
                           seconds=time.perf_counter() - t0)
        history.append(stats)
        if epoch_callback is not None:
            epoch_callback(epoch, model, velocity, rng, history)
    return model, history
