from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_rate: float = 1.0
    step: int = 0
    epoch: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay_rate <= 1:
            raise ValueError("decay_rate must lie in (0, 1]")

    @property
    def effective_lr(self) -> float:
        return self.learning_rate * self.decay_rate ** self.epoch


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """Bias-corrected Adam update, in place on ``params``; returns ``(params, state)``."""
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeError(f"adam_step: state tracks {len(state.first_moment)} params, got {len(params)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    lr = state.effective_lr
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} vs param/state shape {p.shape}/{m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


class Adam:
    """Adam over a fixed list of tensors, reading their ``.grad``.

    Parameters without a gradient this step contribute a zero gradient, so
    their moments still decay (same as torch with zeroed grads).
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-3, decay_rate: float = 1.0,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(learning_rate=lr, beta1=beta1, beta2=beta2,
                               epsilon=epsilon, decay_rate=decay_rate)

    def set_epoch(self, epoch: int) -> None:
        self.state.epoch = epoch

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)
