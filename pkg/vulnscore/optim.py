"""Parameter update rules.

Parameters with requires_grad switched off are frozen: optimizers leave
their values and their moment estimates untouched.
"""

from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .numerics import Tensor


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return param - lr * grad


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update; returns (param, m, v). t starts at 1."""
    beta1, beta2 = betas
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Optimizer:
    """Base class: holds named parameters and clears their gradients."""

    name = "base"

    def __init__(self, params: Dict[str, Tensor], lr: float):
        self.params = params
        self.lr = lr

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def trainable(self) -> Iterable[Tuple[str, Tensor]]:
        return ((k, p) for k, p in self.params.items() if p.requires_grad)

    def step(self) -> None:
        raise NotImplementedError

    def hyperparams(self) -> Dict[str, object]:
        return {"optimizer": self.name, "learning_rate": self.lr}


class SGD(Optimizer):
    name = "sgd"

    def step(self) -> None:
        for _, param in self.trainable():
            param.data[...] = sgd_step(param.data, param.grad, self.lr)


class Adam(Optimizer):
    name = "adam"

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        super().__init__(params, lr)
        self.betas = betas
        self.eps = eps
        self.state: Dict[str, Dict[str, object]] = {}

    def step(self) -> None:
        for key, param in self.trainable():
            state = self.state.get(key)
            if state is None:
                state = {"t": 0, "m": np.zeros_like(param.data), "v": np.zeros_like(param.data)}
                self.state[key] = state
            state["t"] += 1
            param.data[...], state["m"], state["v"] = adam_step(
                param.data, param.grad, state["m"], state["v"], state["t"],
                self.lr, self.betas, self.eps,
            )

    def hyperparams(self) -> Dict[str, object]:
        params = super().hyperparams()
        params.update({"betas": list(self.betas), "eps": self.eps})
        return params


def make_optimizer(name: str, params: Dict[str, Tensor], lr: float) -> Optimizer:
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"Unknown optimizer '{name}'. Must be one of: adam, sgd")
