"""Soft-gated bank of two-layer feed-forward operator networks."""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor
from .batchnorm import BatchNormState, batchnorm
from .encoders import glorot


class OperatorBank:
    """``k`` task networks plus a softmax gate, all reading ``[t_p ; H_e^p]``.

    With ``batchnorm=True`` each task network normalizes after both of its
    affine maps, before the sigmoid.
    """

    def __init__(self, pair_dim: int, k: int, rng: np.random.Generator, hidden: int = 300, out_dim: int = 300,
                 dtype=np.float64, batchnorm: bool = True, bn_gamma_init: float = 0.001,
                 bn_momentum: float = 0.9, bn_eps: float = 1e-5, prefix: str = "ops"):
        if k < 1:
            raise ValueError("OperatorBank needs k >= 1")
        self.pair_dim, self.k, self.hidden, self.out_dim = pair_dim, k, hidden, out_dim
        self.W1 = [Parameter(glorot(rng, (pair_dim, hidden), dtype), name=f"{prefix}.{i}.W1") for i in range(k)]
        self.b1 = [Parameter(np.zeros(hidden, dtype=dtype), name=f"{prefix}.{i}.b1") for i in range(k)]
        self.W2 = [Parameter(glorot(rng, (hidden, out_dim), dtype), name=f"{prefix}.{i}.W2") for i in range(k)]
        self.b2 = [Parameter(np.zeros(out_dim, dtype=dtype), name=f"{prefix}.{i}.b2") for i in range(k)]
        self.Wg = Parameter(glorot(rng, (pair_dim, k), dtype), name=f"{prefix}.gate.W")
        self.bg = Parameter(np.zeros(k, dtype=dtype), name=f"{prefix}.gate.b")
        self.bn1: Optional[BatchNormState] = None
        self.bn2: Optional[BatchNormState] = None
        if batchnorm:
            self.bn1 = BatchNormState(k * hidden, bn_gamma_init, bn_momentum, bn_eps, dtype, name=f"{prefix}.bn1")
            self.bn2 = BatchNormState(k * out_dim, bn_gamma_init, bn_momentum, bn_eps, dtype, name=f"{prefix}.bn2")

    def parameters(self) -> list[Parameter]:
        out = [*self.W1, *self.b1, *self.W2, *self.b2, self.Wg, self.bg]
        for bn in (self.bn1, self.bn2):
            if bn is not None:
                out += bn.parameters()
        return out

    def norm_states(self) -> list[BatchNormState]:
        return [bn for bn in (self.bn1, self.bn2) if bn is not None]

    def _check(self, x: Tensor) -> None:
        if x.data.ndim != 2 or x.shape[1] != self.pair_dim:
            raise DimensionError(f"operator bank expects (N, {self.pair_dim}) pairs, got {x.shape}")

    def gates(self, x: Tensor) -> Tensor:
        self._check(x)
        return ad.softmax(ad.add_bias(ad.matmul(x, self.Wg), self.bg), axis=-1)

    def tasks(self, x: Tensor, mode: str = "train") -> Tensor:
        """All task outputs for rows ``x`` (N, 2d), as (N, k, out)."""
        self._check(x)
        N, k, hid, out = x.shape[0], self.k, self.hidden, self.out_dim
        a1 = ad.add_bias(ad.matmul(x, ad.concat(self.W1, axis=1)), ad.concat(self.b1))
        if self.bn1 is not None:
            a1 = batchnorm(self.bn1, a1, mode)
        z1 = ad.transpose(ad.reshape(ad.sigmoid(a1), (N, k, hid)), (1, 0, 2))
        a2 = ad.matmul(z1, ad.stack(self.W2, axis=0))
        a2 = ad.add_bias(ad.reshape(ad.transpose(a2, (1, 0, 2)), (N, k * out)), ad.concat(self.b2))
        if self.bn2 is not None:
            a2 = batchnorm(self.bn2, a2, mode)
        return ad.reshape(ad.sigmoid(a2), (N, k, out))

    def __call__(self, x: Tensor, mode: str = "train") -> tuple[Tensor, Tensor, Tensor]:
        """Returns ``(O, gates, tasks)`` with O (N, out) the gate-weighted task mix."""
        g = self.gates(x)
        t = self.tasks(x, mode)
        N = x.shape[0]
        mixed = ad.matmul(ad.reshape(g, (N, 1, self.k)), t)
        return ad.reshape(mixed, (N, self.out_dim)), g, t


def _as_row(pair: Tensor) -> Tensor:
    return ad.reshape(pair, (1, -1)) if pair.data.ndim == 1 else pair


def task(bank: OperatorBank, i: int, pair: Tensor, mode: str = "eval") -> Tensor:
    if not 0 <= i < bank.k:
        raise ValueError(f"operator index {i} outside [0, {bank.k})")
    return ad.reshape(bank.tasks(_as_row(pair), mode)[:, i, :], (bank.out_dim,))


def gate(bank: OperatorBank, pair: Tensor) -> Tensor:
    return ad.reshape(bank.gates(_as_row(pair)), (bank.k,))


def compose_pair(bank: OperatorBank, pair: tuple[Tensor, Tensor], mode: str = "eval") -> Tensor:
    x = ad.concat([_as_row(pair[0]), _as_row(pair[1])], axis=1)
    out, _, _ = bank(x, mode)
    return ad.reshape(out, (bank.out_dim,))
