"""Batch normalization over rows of a (B, F) matrix."""
from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor


class BatchNormState:
    def __init__(self, features: int, gamma_init: float = 0.001, momentum: float = 0.9, eps: float = 1e-5,
                 dtype=np.float64, name: str = "bn"):
        self.name = name
        self.gamma = Parameter(np.full(features, gamma_init, dtype=dtype), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(features, dtype=dtype), name=f"{name}.beta")
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.frozen: tuple[np.ndarray, np.ndarray] | None = None
        self._freezing = False

    @property
    def features(self) -> int:
        return self.gamma.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


def batchnorm(state: BatchNormState, batch: Tensor, mode: str = "train") -> Tensor:
    """Normalize each feature, then scale by gamma and shift by beta.

    Train mode uses the batch's own mean and (biased) variance and folds them
    into the running statistics: ``running = momentum * running + (1 - momentum) * batch``.
    Eval mode uses the running statistics and leaves them alone.
    """
    x = batch.data
    if x.ndim != 2 or x.shape[1] != state.features:
        raise DimensionError(f"batchnorm: batch {x.shape} does not match {state.features} features")
    gamma, beta = state.gamma, state.beta
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise ValueError("batchnorm: train mode needs at least 2 rows")
        if state.frozen is not None:
            return _affine(state, batch, *state.frozen)
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        if state._freezing:
            state.frozen = (mu, var)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x - mu) * inv
        m = state.momentum
        state.running_mean = (m * state.running_mean + (1 - m) * mu).astype(state.running_mean.dtype)
        state.running_var = (m * state.running_var + (1 - m) * var).astype(state.running_var.dtype)

        def bw(g):
            dxhat = g * gamma.data
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    elif mode == "eval":
        return _affine(state, batch, state.running_mean, state.running_var)
    else:
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    return ad.make_op(xhat * gamma.data + beta.data, (batch, gamma, beta), bw)


def _affine(state: BatchNormState, batch: Tensor, mean: np.ndarray, var: np.ndarray) -> Tensor:
    """Normalize with constant statistics."""
    gamma = state.gamma
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (batch.data - mean) * inv

    def bw(g):
        return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    return ad.make_op(xhat * gamma.data + state.beta.data, (batch, gamma, state.beta), bw)


@contextmanager
def frozen_batch_statistics(states: Iterable[BatchNormState]) -> Iterator[None]:
    """Pin training-mode statistics to those of the first batch seen inside the block.

    Makes a training-mode forward a fixed differentiable function of its
    inputs, as finite-difference checks require. Running statistics are
    restored on exit.
    """
    states = list(states)
    saved = [(s.running_mean.copy(), s.running_var.copy()) for s in states]
    for s in states:
        s._freezing = True
    try:
        yield
    finally:
        for s, (mean, var) in zip(states, saved):
            s._freezing, s.frozen = False, None
            s.running_mean, s.running_var = mean, var
