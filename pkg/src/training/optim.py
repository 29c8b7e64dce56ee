"""
Stochastic gradient descent over the flat parameter dict
"""
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from ..core.exceptions import ConfigError, TensorShapeError
from ..core.tensor import Tensor
from ..models.layers import Params

Grads = Mapping[str, np.ndarray]


def sgd_step(params: Mapping[str, Tensor], grads: Grads, lr: float) -> Params:
    """p <- p - lr * g for every named parameter; returns new leaf tensors"""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    updated: Params = {}
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = param
            continue
        if grad.shape != param.shape:
            raise TensorShapeError(f"gradient for {name} has shape {grad.shape}, parameter has {param.shape}")
        updated[name] = Tensor(param.data - lr * grad.astype(param.data.dtype), requires_grad=True)
    return updated


class SGD:
    """Plain SGD with optional heavy-ball momentum (v <- m v + g, p <- p - lr v)"""

    def __init__(self, lr: float, momentum: float = 0.0, velocity: Optional[Dict[str, np.ndarray]] = None):
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        self.lr = lr
        self.momentum = momentum
        self.velocity: Dict[str, np.ndarray] = dict(velocity or {})

    def step(self, params: Mapping[str, Tensor], grads: Grads) -> Params:
        if self.momentum == 0.0:
            return sgd_step(params, grads, self.lr)
        directions: Dict[str, np.ndarray] = {}
        for name, grad in grads.items():
            previous = self.velocity.get(name)
            velocity = grad if previous is None else self.momentum * previous + grad
            self.velocity[name] = np.asarray(velocity, dtype=np.float32)
            directions[name] = self.velocity[name]
        return sgd_step(params, directions, self.lr)

    def state(self) -> Tuple[Dict[str, np.ndarray], Dict[str, float]]:
        """Velocity buffers and hyperparameters for checkpoints"""
        return dict(self.velocity), {"lr": self.lr, "momentum": self.momentum}
