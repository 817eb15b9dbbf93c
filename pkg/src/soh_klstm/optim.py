"""Adam, plateau learning-rate reduction and early stopping."""

import math

import numpy as np

from .linalg import ShapeError


class DivergenceError(FloatingPointError):
    def __init__(self, message, tensor=None):
        super().__init__(message)
        self.tensor = tensor


class Adam:
    """Bias-corrected Adam over a dict of named numpy arrays, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        for name, g in grads.items():
            if name not in params:
                raise ShapeError(f"gradient for unknown tensor {name!r}")
            if np.shape(g) != params[name].shape:
                raise ShapeError(f"{name}: gradient shape {np.shape(g)} != parameter shape {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for {name}", name)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def clip_global_norm(grads: dict, max_norm: float):
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


CONTINUE = "continue"
REDUCE_LR = "reduce_lr"
STOP = "stop"


class TrainController:
    """Tracks validation loss for LR reduction and early stopping.

    Improvement means beating the best loss seen so far by at least
    ``min_delta``. The LR counter restarts after every reduction; the
    early-stopping counter only restarts on improvement. A stop wins over a
    reduction on the same epoch.
    """

    def __init__(self, lr=1e-3, patience=10, lr_patience=5, lr_factor=0.5, min_lr=1e-5,
                 min_delta=1e-12, early_stop=True):
        if not 0.0 < lr_factor < 1.0:
            raise ValueError("lr_factor must lie in (0, 1)")
        self.lr = max(lr, min_lr)
        self.patience = patience
        self.lr_patience = lr_patience
        self.lr_factor = lr_factor
        self.min_lr = min_lr
        self.min_delta = min_delta
        self.early_stop = early_stop
        self.best_val = math.inf
        self.epochs_since_improve = 0
        self.lr_wait = 0
        self.improved = False
        self.diverged = False
        self.stopped = False

    def update(self, val_loss: float) -> str:
        if self.stopped:
            raise RuntimeError("controller already emitted stop")
        if not math.isfinite(val_loss):
            self.diverged = True
            self.stopped = True
            self.improved = False
            return STOP
        self.improved = val_loss <= self.best_val - self.min_delta
        if self.improved:
            self.best_val = val_loss
            self.epochs_since_improve = 0
            self.lr_wait = 0
            return CONTINUE
        self.epochs_since_improve += 1
        self.lr_wait += 1
        if self.early_stop and self.epochs_since_improve >= self.patience:
            self.stopped = True
            return STOP
        if self.lr_wait >= self.lr_patience:
            self.lr_wait = 0
            new_lr = max(self.lr * self.lr_factor, self.min_lr)
            if new_lr < self.lr:
                self.lr = new_lr
                return REDUCE_LR
        return CONTINUE
