"""Gradient descent optimisers over named parameter arrays."""
import enum
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from backbone_refine.model.network import ToyRefinerParams

logger = logging.getLogger(__name__)


class OptimizerKind(enum.Enum):
    sgd = "sgd"
    adam = "adam"


@dataclass
class SGD:
    """Plain gradient descent p ← p − lr·g."""

    lr: float = 1e-3

    def step(self, params: ToyRefinerParams, grads: Dict[str, np.ndarray]) -> ToyRefinerParams:
        return ToyRefinerParams({k: v - self.lr * grads[k] for k, v in params.arrays.items()})


@dataclass
class Adam:
    """Adaptive moment estimation with bias correction."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    #: Steps taken so far
    t: int = 0

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: ToyRefinerParams, grads: Dict[str, np.ndarray]) -> ToyRefinerParams:
        self.t += 1
        out = {}
        for name, value in params.arrays.items():
            g = grads[name]
            m = self.beta1 * self.m.get(name, np.zeros_like(g)) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(g)) + (1 - self.beta2) * g**2
            self.m[name] = m
            self.v[name] = v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            out[name] = value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return ToyRefinerParams(out)


def make_optimizer(kind: str, lr: float):
    """Optimiser by name, ``adam`` or ``sgd``."""
    kind = OptimizerKind(kind)
    assert lr >= 0, f"Learning rate must be non-negative, got {lr}"
    if kind == OptimizerKind.adam:
        return Adam(lr=lr)
    return SGD(lr=lr)
