"""SGD with two parameter groups and a step-decay schedule.

The convolutional autoencoder (encoder plus decoder) and the classifier
train at different base rates; both decay by the same factor every
``step_size`` epochs. The current rate is always recomputed from the epoch
counter as ``base * decay ** (epoch // step_size)``, never by cumulative
multiplication, so logged schedules are exactly reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import JdfdParams

GROUP_CAE = "cae"
GROUP_CLS = "cls"


@dataclass(frozen=True)
class SgdConfig:
    lr_cae: float = 0.005
    lr_cls: float = 0.0004
    step_size: int = 5
    decay: float = 0.8
    momentum: float = 0.0


@dataclass
class SgdState:
    config: SgdConfig
    epoch: int = 0
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self, group: str) -> float:
        base = self.config.lr_cae if group == GROUP_CAE else self.config.lr_cls
        return base * self.config.decay ** (self.epoch // self.config.step_size)


def group_of(name: str) -> str:
    """Map a parameter name to its learning-rate group."""
    return GROUP_CLS if name.startswith("classifier.") else GROUP_CAE


def sgd_step(params: JdfdParams, state: SgdState) -> None:
    """One in-place descent step: p <- p - lr(group) * g (plus momentum).

    Every learnable parameter must carry a gradient buffer; a missing one is
    an error naming the parameter.
    """
    momentum = state.config.momentum
    for name, tensor in params.named_parameters():
        if tensor.grad is None:
            raise ValueError(f"missing gradient for parameter {name!r}")
        lr = state.current_lr(group_of(name))
        if momentum > 0:
            vel = state.velocities.get(name)
            if vel is None:
                vel = np.zeros_like(tensor.data)
                state.velocities[name] = vel
            vel *= momentum
            vel += tensor.grad
            tensor.data -= lr * vel
        else:
            tensor.data -= lr * tensor.grad


def scheduler_step(state: SgdState) -> SgdState:
    """Advance the epoch counter at the end of an epoch."""
    state.epoch += 1
    return state
