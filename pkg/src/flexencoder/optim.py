"""Parameter update rules with coupled L2 weight decay.

Weight decay is added to the gradient before the update rule runs and only
touches weight matrices (2-D arrays); bias vectors are never decayed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
RMSPROP_RHO = 0.9
EPS = 1e-8


class OptimizerKind(str, enum.Enum):
    SGD = "SGD"
    ADAM = "ADAM"
    ADAGRAD = "ADAGRAD"
    RMSPROP = "RMSPROP"

    @classmethod
    def parse(cls, value: "str | OptimizerKind") -> "OptimizerKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown optimizer {value!r} (expected one of {names})") from None


@dataclass
class OptimState:
    kind: OptimizerKind
    t: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    state: OptimState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
) -> dict[str, np.ndarray]:
    """Update ``params`` in place from ``grads`` and return them.

    Only names present in ``grads`` are updated. Accumulators are created
    lazily on the first step that sees a parameter.
    """
    kind = state.kind
    state.t += 1
    t = state.t
    for name, g in grads.items():
        w = params[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {w.shape}")
        wd = weight_decay if w.ndim == 2 else 0.0
        if kind is OptimizerKind.SGD:
            kernels.sgd_step(w, g, lr, wd)
        elif kind is OptimizerKind.ADAM:
            if name not in state.first:
                state.first[name] = np.zeros_like(w)
                state.second[name] = np.zeros_like(w)
            kernels.adam_step(
                w, g, state.first[name], state.second[name], lr, wd,
                ADAM_BETA1, ADAM_BETA2, EPS, 1 - ADAM_BETA1**t, 1 - ADAM_BETA2**t,
            )
        elif kind is OptimizerKind.ADAGRAD:
            if name not in state.second:
                state.second[name] = np.zeros_like(w)
            kernels.adagrad_step(w, g, state.second[name], lr, wd, EPS)
        elif kind is OptimizerKind.RMSPROP:
            if name not in state.second:
                state.second[name] = np.zeros_like(w)
            kernels.rmsprop_step(w, g, state.second[name], lr, wd, RMSPROP_RHO, EPS)
        else:
            raise ValueError(f"unknown optimizer {kind!r}")
    return params


class Optimizer:
    """Binds an update rule to its learning rate, decay and running state."""

    def __init__(self, kind: OptimizerKind | str, lr: float, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {weight_decay}")
        self.kind = OptimizerKind.parse(kind)
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = OptimState(self.kind)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        optimizer_step(self.state, params, grads, self.lr, self.weight_decay)
