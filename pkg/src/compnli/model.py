"""The full inference network: transform, encode, attend, compose, aggregate, classify."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .aggregation import AggregatorParams, aggregate_batch, batch_loss, classify_batch
from .attention import AttentionAlignment, attend_batch
from .autodiff import Parameter, Tensor
from .batchnorm import BatchNormState
from .composition import OperatorBank
from .config import ModelConfig
from .data import Batch
from .embeddings import EmbeddingTable, EmbeddingTransform
from .encoders import BiLstmEncoder, BtreeEncoder, Encoded


@dataclass
class ForwardResult:
    probs: Tensor
    alignment: AttentionAlignment
    premise: Encoded
    hypothesis: Encoded
    gates: Tensor  # (N, k) over real hypothesis encodings, row-major by (batch, position)
    pair_rows: np.ndarray

    def predictions(self) -> np.ndarray:
        return np.argmax(self.probs.data, axis=1)


class NLIModel:
    def __init__(self, config: ModelConfig, table: EmbeddingTable):
        if table.dim != config.embed_dim:
            raise ValueError(f"embedding table dim {table.dim} != config embed_dim {config.embed_dim}")
        self.config = config
        self.table = table
        rng = np.random.default_rng(config.init_seed)
        dt = config.np_dtype
        self.transform_p = EmbeddingTransform(config.embed_dim, rng, dt, prefix="transform")
        self.transform_h = self.transform_p
        if not config.share_transform:
            self.transform_h = EmbeddingTransform(config.embed_dim, rng, dt, prefix="transform_h")
        self.encoder_p = self._make_encoder(rng, "enc")
        self.encoder_h = self.encoder_p if config.share_encoder else self._make_encoder(rng, "enc_h")
        d = self.encoder_p.output_dim
        self.bank = OperatorBank(
            2 * d, config.operators, rng, hidden=config.op_hidden, out_dim=config.op_out, dtype=dt,
            batchnorm=config.bn_placement == "task", bn_gamma_init=config.bn_gamma_init,
            bn_momentum=config.bn_momentum, bn_eps=config.bn_eps,
        )
        self.agg = AggregatorParams(config.op_out, config.agg_hidden, rng, dt, config.forget_bias)

    def _make_encoder(self, rng, prefix):
        c = self.config
        if c.encoder == "bilstm":
            return BiLstmEncoder(c.embed_dim, c.bilstm_hidden, rng, c.np_dtype, c.forget_bias, prefix=prefix)
        return BtreeEncoder(c.embed_dim, c.btree_hidden, rng, c.np_dtype, c.forget_bias,
                            c.btree_internal_input, prefix=prefix)

    # -- parameter bookkeeping ------------------------------------------------

    def named_parameters(self) -> dict[str, Parameter]:
        groups = [self.transform_p.parameters()]
        if self.transform_h is not self.transform_p:
            groups.append(self.transform_h.parameters())
        groups.append(self.encoder_p.parameters())
        if self.encoder_h is not self.encoder_p:
            groups.append(self.encoder_h.parameters())
        groups += [self.bank.parameters(), self.agg.parameters()]
        named: dict[str, Parameter] = {}
        for group in groups:
            for p in group:
                if p.name in named:
                    raise RuntimeError(f"duplicate parameter name {p.name}")
                named[p.name] = p
        return named

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def norm_states(self) -> list[BatchNormState]:
        return self.bank.norm_states()

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # -- forward ---------------------------------------------------------------

    def _words(self, tokens: list[list[str]], mask: np.ndarray, transform: EmbeddingTransform) -> Tensor:
        ids = np.stack([self.table.ids(row) for row in tokens])
        ids = np.where(mask, ids, 0)
        vectors = self.table.rows(ids).astype(self.config.np_dtype)
        return transform(Tensor(vectors))

    def forward(self, premise: list[list[str]], premise_mask: np.ndarray, hypothesis: list[list[str]],
                hypothesis_mask: np.ndarray, mode: str = "eval") -> ForwardResult:
        """Class probabilities for padded token grids.

        Columns past the longest real sentence on each side are dropped before
        any computation; masks handle the remaining per-row padding.
        """
        tp = int(premise_mask.sum(axis=1).max())
        th = int(hypothesis_mask.sum(axis=1).max())
        pm, hm = premise_mask[:, :tp], hypothesis_mask[:, :th]
        P = self.encoder_p(self._words([r[:tp] for r in premise], pm, self.transform_p), pm)
        H = self.encoder_h(self._words([r[:th] for r in hypothesis], hm, self.transform_h), hm)
        alignment = attend_batch(P, H, self.config.attention)
        B, E, D = H.states.shape
        pairs = ad.reshape(ad.concat([alignment.summaries, H.states], axis=-1), (B * E, 2 * D))
        rows = np.flatnonzero(H.mask.reshape(-1))
        outputs, gates, _ = self.bank(pairs[rows], mode)
        O = ad.reshape(ad.scatter_rows(outputs, rows, B * E), (B, E, self.config.op_out))
        A = aggregate_batch(self.agg, O, H.mask)
        return ForwardResult(classify_batch(self.agg, A), alignment, P, H, gates, rows)

    def run_batch(self, batch: Batch, mode: str = "eval") -> ForwardResult:
        return self.forward(batch.premise, batch.premise_mask, batch.hypothesis, batch.hypothesis_mask, mode)

    def loss(self, batch: Batch, mode: str = "train") -> tuple[Tensor, ForwardResult]:
        if (batch.gold < 0).any():
            raise ValueError("loss needs gold labels for every pair")
        result = self.run_batch(batch, mode)
        return batch_loss(result.probs, batch.gold), result


def parameter_breakdown(model: NLIModel) -> dict[str, int]:
    """Parameter totals grouped by component."""
    groups: dict[str, int] = {}
    for name, p in model.named_parameters().items():
        head = name.split(".", 1)[0]
        groups[head] = groups.get(head, 0) + p.size
    groups["total"] = sum(groups.values())
    return groups


def count_parameters(config: ModelConfig, table: Optional[EmbeddingTable] = None) -> dict[str, int]:
    """Build a model for ``config`` and count its trainable parameters.

    The frozen embedding matrix is excluded; it is never trained.
    """
    table = table or EmbeddingTable(config.embed_dim)
    return parameter_breakdown(NLIModel(config.replace(dtype="float32"), table))
