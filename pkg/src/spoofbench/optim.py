"""Adaptive-moment gradient descent and finite-difference gradients.

Only three variables are ever optimized here, so central differences
(six evaluations per step) double as the reference gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Adam:
    """Standard first/second-moment adaptive update (decay 0.9/0.999)."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def central_difference(f, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (f(hi) - f(lo)) / (2.0 * step)
    return grad


@dataclass
class MinimizeResult:
    x: np.ndarray
    loss: float
    trajectory: list = field(default_factory=list)  # (iteration, *x, loss)
    aborted: bool = False


def adam_minimize(
    f,
    x0: np.ndarray,
    n_steps: int,
    lr: float = 1e-4,
    fd_step: float = 1e-3,
    grad_fn=None,
    project=None,
) -> MinimizeResult:
    """Run n_steps of Adam on f from x0, tracking the best-seen point.

    The gradient defaults to central differences of f.  ``project`` maps
    an iterate back into the feasible set after each update.  A non-finite
    loss aborts the run, which still reports the best point seen so far.
    """
    if grad_fn is None:
        grad_fn = lambda x: central_difference(f, x, fd_step)
    x = np.asarray(x0, dtype=np.float64).copy()
    if project is not None:
        x = project(x)
    opt = Adam(lr=lr)
    best_x = x.copy()
    best_loss = float(f(x))
    trajectory = [(0, *x.tolist(), best_loss)]
    if not np.isfinite(best_loss):
        return MinimizeResult(best_x, best_loss, trajectory, aborted=True)
    for it in range(1, n_steps + 1):
        grad = grad_fn(x)
        if not np.isfinite(grad).all():
            return MinimizeResult(best_x, best_loss, trajectory, aborted=True)
        x = opt.step(x, grad)
        if project is not None:
            x = project(x)
        loss = float(f(x))
        trajectory.append((it, *x.tolist(), loss))
        if not np.isfinite(loss):
            return MinimizeResult(best_x, best_loss, trajectory, aborted=True)
        if loss < best_loss:
            best_loss = loss
            best_x = x.copy()
    return MinimizeResult(best_x, best_loss, trajectory, aborted=False)
