"""Training loops: baseline, iterative initialization, and Convolutional Similarity regularization.

Iterative initialization minimizes the summed bank loss of every conv layer
for ``I`` optimizer steps before task training starts. Regularization instead
adds ``beta`` times that loss to the task loss at every training step.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import Dataset, batches
from ..loss import LossValue, conv_sim_bank
from ..optim import DivergenceError, OptimizerConfig, make_optimizer
from .layers import Conv2d
from .model import Model, cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    I: int = 0
    beta: float = 0.0
    task_optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("sgd", 0.01))
    convsim_optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("adam", 0.001))
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.I < 0:
            raise ValueError("I must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.I > 0 and self.beta > 0:
            raise ValueError("choose iterative initialization (I > 0) or regularization (beta > 0), not both")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @property
    def method(self) -> str:
        if self.I > 0:
            return "iterative_init"
        if self.beta > 0:
            return "regularization"
        return "baseline"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task_optimizer"] = self.task_optimizer.to_dict()
        d["convsim_optimizer"] = self.convsim_optimizer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("task_optimizer", "convsim_optimizer"):
            if key in d and not isinstance(d[key], OptimizerConfig):
                d[key] = OptimizerConfig(**d[key])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    task_loss: float
    train_acc: float
    test_acc: float
    conv_sim: float


@dataclass
class TrainingLog:
    method: str
    initial_conv_sim: float
    post_init_conv_sim: float
    init_curve: list[float] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)

    HEADER = ("epoch", "task_loss", "train_acc", "test_acc", "conv_sim")

    def rows(self):
        return [[e.epoch, e.task_loss, e.train_acc, e.test_acc, e.conv_sim] for e in self.epochs]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingLog":
        d = dict(d)
        d["epochs"] = [EpochRecord(**e) for e in d.get("epochs", [])]
        return cls(**d)


def model_conv_sim(model: Model, with_grad: bool = False) -> LossValue:
    """Sum of bank losses over conv layers; ``gradient`` maps layer index to a weight gradient."""
    total = 0.0
    grads = {}
    for i in model.conv_layer_indices:
        w = model.layers[i].params["weight"]
        if w.shape[0] < 2:
            continue
        lv = conv_sim_bank(w, with_grad=with_grad)
        total += lv.value
        if with_grad:
            grads[i] = lv.gradient
    return LossValue(total, grads if with_grad else None)


def iterative_init(model: Model, cfg: TrainConfig) -> list[float]:
    """Run ``cfg.I`` optimizer steps on the summed conv-layer loss, touching conv kernels only.

    Returns the loss measured before each step.
    """
    opt = make_optimizer(cfg.convsim_optimizer)
    curve = []
    for step in range(cfg.I):
        lv = model_conv_sim(model, with_grad=True)
        curve.append(lv.value)
        for i, g in lv.gradient.items():
            layer = model.layers[i]
            try:
                layer.params["weight"] = opt.step(layer.params["weight"], g, key=f"{i}.weight")
            except DivergenceError as exc:
                raise DivergenceError(step + 1, f"conv-sim initialization diverged in layer {i}") from exc
    return curve


def compute_gradients(model: Model, images, labels, beta: float = 0.0):
    """Forward/backward pass; returns ``(task_loss, logits)`` and leaves gradients on the layers.

    With ``beta > 0`` the conv weight gradients also include ``beta`` times the
    bank-loss gradient.
    """
    model.zero_grad()
    logits = model.forward(images, train=True)
    loss, dlogits = cross_entropy(logits, labels)
    model.backward(dlogits)
    if beta > 0:
        reg = model_conv_sim(model, with_grad=True)
        for i, g in reg.gradient.items():
            model.layers[i].grads["weight"] += beta * g
    return loss, logits


def evaluate(model: Model, data: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy in percent, using running batch-norm statistics."""
    if data.count == 0:
        return float("nan")
    correct = 0
    for x, y in batches(data, batch_size, shuffle=False):
        correct += int(np.sum(model.forward(x, train=False).argmax(axis=1) == y))
    return 100.0 * correct / data.count


def train(
    model: Model,
    data: Dataset,
    cfg: TrainConfig,
    test_data: Dataset | None = None,
    optimizer=None,
    on_epoch=None,
    history: TrainingLog | None = None,
) -> TrainingLog:
    """Train ``model`` in place and return its per-epoch log.

    To resume, pass the restored ``optimizer`` and the ``history`` log from the
    checkpoint; training continues after its last epoch and initialization is
    skipped. ``on_epoch(log, optimizer)`` runs after each epoch, e.g. to write
    a checkpoint.
    """
    if data.count == 0:
        raise ValueError("training data is empty")
    if history is not None:
        log_ = TrainingLog(history.method, history.initial_conv_sim, history.post_init_conv_sim,
                           list(history.init_curve), list(history.epochs))
    else:
        initial = model_conv_sim(model).value
        curve = iterative_init(model, cfg) if cfg.I > 0 else []
        log_ = TrainingLog(cfg.method, initial, model_conv_sim(model).value, curve)
    start_epoch = len(log_.epochs)
    opt = optimizer if optimizer is not None else make_optimizer(cfg.task_optimizer)

    for epoch in range(start_epoch, cfg.epochs):
        loss_sum = 0.0
        correct = 0
        for step, (x, y) in enumerate(batches(data, cfg.batch_size, seed=cfg.seed, shuffle=True, epoch=epoch)):
            loss, logits = compute_gradients(model, x, y, cfg.beta)
            if not np.isfinite(loss):
                raise DivergenceError(step + 1, f"non-finite task loss in epoch {epoch}")
            loss_sum += loss * len(y)
            correct += int(np.sum(logits.argmax(axis=1) == y))
            for key, layer, name, p in model.named_parameters():
                try:
                    layer.params[name] = opt.step(p, layer.grads[name], key=key)
                except DivergenceError as exc:
                    raise DivergenceError(step + 1, f"non-finite gradient for {key} in epoch {epoch}") from exc
        record = EpochRecord(
            epoch=epoch + 1,
            task_loss=loss_sum / data.count,
            train_acc=100.0 * correct / data.count,
            test_acc=evaluate(model, test_data) if test_data is not None and test_data.count else float("nan"),
            conv_sim=model_conv_sim(model).value,
        )
        log_.epochs.append(record)
        log.info("epoch %d loss %.4f train %.2f%% test %.2f%% conv_sim %.4g", record.epoch,
                 record.task_loss, record.train_acc, record.test_acc, record.conv_sim)
        if on_epoch is not None:
            on_epoch(log_, opt)
    return log_


def conv_layers(model: Model) -> list[Conv2d]:
    return [model.layers[i] for i in model.conv_layer_indices]
