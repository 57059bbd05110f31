"""Hypothesis-over-premise attention alignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .encoders import Encoded, EncodedSentence


@dataclass
class AttentionAlignment:
    """``weights`` is (B, Th, Tp); ``summaries`` is (B, Th, D), one t_p per hypothesis encoding."""

    weights: Tensor
    summaries: Tensor
    hypothesis_mask: np.ndarray

    def rows(self, b: int = 0) -> np.ndarray:
        n = int(self.hypothesis_mask[b].sum())
        return self.weights.data[b, :n]


def attend_batch(premise: Encoded, hypothesis: Encoded, mode: str = "softmax") -> AttentionAlignment:
    P, Hy = premise.states, hypothesis.states
    if P.shape[0] != Hy.shape[0] or P.shape[2] != Hy.shape[2]:
        raise DimensionError(f"attend: premise {P.shape} and hypothesis {Hy.shape} disagree")
    scores = ad.matmul(Hy, ad.transpose(P, (0, 2, 1)))
    keep = premise.mask[:, None, :]
    if mode == "softmax":
        weights = ad.softmax(scores, axis=-1, mask=keep)
    elif mode == "literal":
        # padded hypothesis rows hold junk scores; replace them with ones so
        # only real rows can trip the degenerate-normalization guard
        real = hypothesis.mask[:, :, None]
        ones = np.broadcast_to(~real, scores.shape).astype(scores.dtype)
        weights = ad.normalize(ad.scale(scores, real) + Tensor(ones), axis=-1, mask=keep)
    else:
        raise ValueError(f"unknown attention mode {mode!r}")
    return AttentionAlignment(weights, ad.matmul(weights, P), hypothesis.mask)


def attend(premise: EncodedSentence, hypothesis: EncodedSentence, mode: str = "softmax") -> AttentionAlignment:
    if not len(premise) or not len(hypothesis):
        raise ValueError("attend: empty encoding list")
    return attend_batch(premise.batched(), hypothesis.batched(), mode)


def align_pairs(alignment: AttentionAlignment, hypothesis: EncodedSentence) -> list[tuple[Tensor, Tensor]]:
    """``(t_p, H_e^p)`` for each hypothesis encoding, in hypothesis order."""
    return [(alignment.summaries[0, p], enc) for p, enc in enumerate(hypothesis.encodings)]
