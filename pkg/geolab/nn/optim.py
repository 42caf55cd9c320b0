"""
GeoLab - Optimizer
AdamW with bias-corrected moments, decoupled weight decay and linear learning-rate decay
"""
import logging
import math

import numpy as np

from geolab.nn.params import ParameterStore

logger = logging.getLogger(__name__)


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0) -> ParameterStore:
    """One update of every trainable parameter that has a gradient"""
    store.step_count += 1
    t = store.step_count
    for name, param in store.trainable():
        grad = param.grad
        if grad is None:
            continue
        state = store.state.get(name)
        if state is None:
            state = {'m': np.zeros_like(param.data), 'v': np.zeros_like(param.data), 'step': 0}
            store.state[name] = state
        state['step'] += 1
        state['m'] = beta1 * state['m'] + (1 - beta1) * grad
        state['v'] = beta2 * state['v'] + (1 - beta2) * grad ** 2
        m_hat = state['m'] / (1 - beta1 ** state['step'])
        v_hat = state['v'] / (1 - beta2 ** state['step'])
        if weight_decay:
            param.data -= lr * weight_decay * param.data
        param.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    logger.debug(f"adam step {t} lr={lr:.3g}")
    return store


def clip_grad_norm(store: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm; returns the norm before"""
    grads = [p.grad for _, p in store.trainable() if p.grad is not None]
    total = math.sqrt(float(sum(np.sum(g.astype(np.float64) ** 2) for g in grads)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, p in store.trainable():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class LinearDecaySchedule:
    """lr(step) = base_lr * (1 - step / total_steps), floored at 0"""

    def __init__(self, base_lr: float, total_steps: int):
        self.base_lr = base_lr
        self.total_steps = max(int(total_steps), 1)

    def __call__(self, step: int) -> float:
        return self.base_lr * max(0.0, 1.0 - step / self.total_steps)


class AdamW:
    def __init__(self, store: ParameterStore, lr: float, total_steps: int, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.01,
                 clip_norm: float = 0.0):
        self.store = store
        self.schedule = LinearDecaySchedule(lr, total_steps)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.steps_taken = 0

    @property
    def current_lr(self) -> float:
        return self.schedule(self.steps_taken)

    def step(self) -> float:
        lr = self.current_lr
        if self.clip_norm:
            clip_grad_norm(self.store, self.clip_norm)
        adam_step(self.store, lr, self.beta1, self.beta2, self.eps, self.weight_decay)
        self.steps_taken += 1
        return lr

    def zero_grad(self) -> None:
        self.store.zero_grad()
