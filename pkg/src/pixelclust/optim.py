"""SGD with momentum for the per-image training loop."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .tensor import Parameter


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    iterations: int = 150

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.iterations < 1:
            raise ConfigurationError(f"iteration count must be >= 1, got {self.iterations}")


def sgd_step(params: Iterable[Parameter], config: OptimizerConfig) -> None:
    """Apply one momentum update to every parameter and clear gradients.

    Update rule: m <- momentum * m + g; p <- p - lr * m.  A parameter with
    no accumulated gradient is treated as having g = 0.
    """
    for p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter '{p.name}'")
        p.momentum *= config.momentum
        p.momentum += g
        p.data -= config.learning_rate * p.momentum
        p.grad = None
