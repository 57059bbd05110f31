"""Chain-LSTM aggregation of operator outputs, 3-way classifier and cross-entropy."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor
from .config import LABELS
from .encoders import LstmCellParams, glorot, run_lstm

PROB_FLOOR = 1e-12


class AggregatorParams:
    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64,
                 forget_bias: float = 1.0, n_classes: int = len(LABELS)):
        self.lstm = LstmCellParams(input_dim, hidden, rng, dtype, forget_bias, prefix="agg")
        self.W = Parameter(glorot(rng, (hidden, n_classes), dtype), name="classifier.W")
        self.b = Parameter(np.zeros(n_classes, dtype=dtype), name="classifier.b")

    @property
    def hidden(self) -> int:
        return self.lstm.hidden

    def parameters(self) -> list[Parameter]:
        return self.lstm.parameters() + [self.W, self.b]


@dataclass
class LabelDistribution:
    """Class probabilities in the fixed order entailment, neutral, contradiction."""

    probs: Tensor

    @property
    def label(self) -> str:
        return LABELS[int(np.argmax(self.probs.data))]


def aggregate_batch(params: AggregatorParams, outputs: Tensor, mask: np.ndarray) -> Tensor:
    """Final hidden state (B, hidden) after a masked run over (B, T, out) operator outputs."""
    _, final = run_lstm(params.lstm, outputs, mask)
    return final


def aggregate(params: AggregatorParams, outputs: Sequence[Tensor]) -> Tensor:
    if not outputs:
        raise ValueError("aggregate: empty output list")
    seq = ad.reshape(ad.stack(list(outputs), axis=0), (1, len(outputs), -1))
    final = aggregate_batch(params, seq, np.ones((1, len(outputs)), dtype=bool))
    return ad.reshape(final, (params.hidden,))


def logits(params: AggregatorParams, A: Tensor) -> Tensor:
    if A.shape[-1] != params.hidden:
        raise DimensionError(f"classify: expected hidden dim {params.hidden}, got {A.shape}")
    return ad.add_bias(ad.matmul(A, params.W), params.b)


def classify_batch(params: AggregatorParams, A: Tensor) -> Tensor:
    return ad.softmax(logits(params, A), axis=-1)


def classify(params: AggregatorParams, A: Tensor) -> LabelDistribution:
    row = ad.reshape(A, (1, -1)) if A.data.ndim == 1 else A
    probs = classify_batch(params, row)
    return LabelDistribution(ad.reshape(probs, (probs.shape[-1],)) if A.data.ndim == 1 else probs)


def batch_loss(probs: Tensor, gold: np.ndarray) -> Tensor:
    """Mean of ``-log(max(p[gold], 1e-12))`` over rows of ``probs`` (B, 3)."""
    gold = np.asarray(gold, dtype=np.int64)
    picked = probs[np.arange(len(gold)), gold]
    return ad.mean(ad.neg(ad.log(ad.clamp_min(picked, PROB_FLOOR))))


def loss(pred: LabelDistribution, gold: int) -> Tensor:
    probs = pred.probs if pred.probs.data.ndim == 2 else ad.reshape(pred.probs, (1, -1))
    return batch_loss(probs, np.array([gold]))
