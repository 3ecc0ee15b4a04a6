"""SGD and Adam, plus a fixed-iteration minimization driver.

Both optimizers are purely elementwise, so a parameter array with a leading
batch axis is optimized as independent problems, one per row.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, message: str = "non-finite gradient"):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("Adam eps must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class SGD:
    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.t = 0
        self.velocity: dict = {}

    def step(self, params: np.ndarray, grads: np.ndarray, key="p") -> np.ndarray:
        """Return updated parameters; ``key`` identifies the parameter's state slot."""
        _check(params, grads, self.t)
        self.t += 1
        lr, mu = self.cfg.lr, self.cfg.momentum
        if mu == 0.0:
            return params - lr * grads
        v = self.velocity.get(key)
        v = grads.copy() if v is None else mu * v + grads
        self.velocity[key] = v
        return params - lr * v

    def state_dict(self) -> dict:
        return {"t": np.int64(self.t), **{f"velocity/{k}": v for k, v in self.velocity.items()}}

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        self.velocity = {k.split("/", 1)[1]: np.array(v) for k, v in state.items() if k.startswith("velocity/")}


class Adam:
    """Adam with bias-corrected moments; each parameter slot keeps its own step count."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.t: dict = {}
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: np.ndarray, grads: np.ndarray, key="p") -> np.ndarray:
        t = self.t.get(key, 0)
        _check(params, grads, t)
        t += 1
        c = self.cfg
        m = self.m.get(key, np.zeros_like(params))
        v = self.v.get(key, np.zeros_like(params))
        m = c.adam_beta1 * m + (1 - c.adam_beta1) * grads
        v = c.adam_beta2 * v + (1 - c.adam_beta2) * grads * grads
        self.t[key], self.m[key], self.v[key] = t, m, v
        m_hat = m / (1 - c.adam_beta1**t)
        v_hat = v / (1 - c.adam_beta2**t)
        return params - c.lr * m_hat / (np.sqrt(v_hat) + c.adam_eps)

    def state_dict(self) -> dict:
        out = {f"t/{k}": np.int64(t) for k, t in self.t.items()}
        out.update({f"m/{k}": a for k, a in self.m.items()})
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    def load_state_dict(self, state: dict):
        self.t = {k[2:]: int(a) for k, a in state.items() if k.startswith("t/")}
        self.m = {k[2:]: np.array(a) for k, a in state.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(a) for k, a in state.items() if k.startswith("v/")}


def _check(params, grads, t):
    if np.shape(params) != np.shape(grads):
        raise ValueError(f"parameter shape {np.shape(params)} != gradient shape {np.shape(grads)}")
    if not np.all(np.isfinite(grads)):
        raise DivergenceError(t + 1)


def make_optimizer(cfg: OptimizerConfig):
    return Adam(cfg) if cfg.kind == "adam" else SGD(cfg)


def step(params, grads, state: SGD | Adam) -> np.ndarray:
    return state.step(np.asarray(params, dtype=np.float64), np.asarray(grads, dtype=np.float64))


def minimize(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    init,
    cfg: OptimizerConfig,
    iters: int,
    trace_hook: Callable[[int, float, np.ndarray], None] | None = None,
):
    """Run exactly ``iters`` optimizer steps on ``objective``.

    ``objective(params)`` returns ``(loss, grad)``. The returned trajectory
    holds the loss evaluated before each step. ``trace_hook(t, loss, params)``
    is called with the same pre-step values.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    params = np.array(init, dtype=np.float64)
    opt = make_optimizer(cfg)
    losses = np.empty(iters)
    for t in range(iters):
        loss, grad = objective(params)
        losses[t] = loss
        if trace_hook is not None:
            trace_hook(t, loss, params)
        params = opt.step(params, np.asarray(grad, dtype=np.float64))
    return params, losses
