"""Sentence encoders: bi-directional chain LSTM and complete-binary-tree LSTM.

Both encoders work on padded batches ``x`` of shape (B, T, in) with a boolean
mask (B, T) marking real tokens. Real tokens are a prefix of each row.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor

GATES = ("i", "f", "o", "c")


def glorot(rng: np.random.Generator, shape: tuple[int, int], dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, shape).astype(dtype)


@dataclass
class Encoded:
    """Batched phrase encodings with a validity mask.

    ``states`` is (B, E, D); ``mask[b, e]`` is true for the ``lengths[b]``
    encodings that sentence ``b`` actually has.
    """

    states: Tensor
    mask: np.ndarray
    kind: str
    source_lengths: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def sentence(self, b: int) -> "EncodedSentence":
        n = int(self.lengths[b])
        return EncodedSentence([self.states[b, e] for e in range(n)], self.kind, int(self.source_lengths[b]))


@dataclass
class EncodedSentence:
    encodings: list[Tensor]
    kind: str
    source_length: int

    def __len__(self) -> int:
        return len(self.encodings)

    def batched(self) -> Encoded:
        states = ad.reshape(ad.stack(self.encodings, axis=0), (1, len(self.encodings), -1))
        return Encoded(states, np.ones((1, len(self.encodings)), dtype=bool), self.kind, np.array([self.source_length]))


class LstmCellParams:
    """Per-gate input maps W, recurrences U and biases b for a chain LSTM."""

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64,
                 forget_bias: float = 1.0, prefix: str = "lstm"):
        self.input_dim = input_dim
        self.hidden = hidden
        self.W = {g: Parameter(glorot(rng, (input_dim, hidden), dtype), name=f"{prefix}.W_{g}") for g in GATES}
        self.U = {g: Parameter(glorot(rng, (hidden, hidden), dtype), name=f"{prefix}.U_{g}") for g in GATES}
        self.b = {
            g: Parameter(np.full(hidden, forget_bias if g == "f" else 0.0, dtype=dtype), name=f"{prefix}.b_{g}")
            for g in GATES
        }

    def parameters(self) -> list[Parameter]:
        return [*self.W.values(), *self.U.values(), *self.b.values()]

    def fused(self) -> tuple[Tensor, Tensor, Tensor]:
        return (
            ad.concat([self.W[g] for g in GATES], axis=1),
            ad.concat([self.U[g] for g in GATES], axis=1),
            ad.concat([self.b[g] for g in GATES], axis=0),
        )


def _cell(pre: Tensor, c_prev: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    i = ad.sigmoid(pre[:, :hidden])
    f = ad.sigmoid(pre[:, hidden:2 * hidden])
    o = ad.sigmoid(pre[:, 2 * hidden:3 * hidden])
    cand = ad.tanh(pre[:, 3 * hidden:])
    c = f * c_prev + i * cand
    return o * ad.tanh(c), c


def lstm_step(params: LstmCellParams, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step on a vector (D,) or a batch of rows (B, D)."""
    if x.shape[-1] != params.input_dim or h_prev.shape[-1] != params.hidden or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"lstm_step: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"incompatible with input {params.input_dim}, hidden {params.hidden}"
        )
    if x.data.ndim == 1:
        h, c = lstm_step(params, ad.reshape(x, (1, -1)), ad.reshape(h_prev, (1, -1)), ad.reshape(c_prev, (1, -1)))
        return ad.reshape(h, (params.hidden,)), ad.reshape(c, (params.hidden,))
    W, U, b = params.fused()
    pre = ad.add_bias(ad.matmul(x, W) + ad.matmul(h_prev, U), b)
    return _cell(pre, c_prev, params.hidden)


def _blend(mask_col: np.ndarray, new: Tensor, old: Tensor) -> Tensor:
    if mask_col.all():
        return new
    m = mask_col.astype(new.dtype)[:, None]
    return ad.scale(new, m) + ad.scale(old, 1.0 - m)


def run_lstm(params: LstmCellParams, x: Tensor, mask: np.ndarray, reverse: bool = False) -> tuple[Tensor, Tensor]:
    """Masked LSTM over (B, T, D) inputs from a zero state.

    Padded steps carry the previous state through unchanged. Returns the
    per-position hidden states (B, T, H) and the final hidden state (B, H).
    """
    B, T, D = x.shape
    if D != params.input_dim:
        raise DimensionError(f"run_lstm: input dim {D} != {params.input_dim}")
    H = params.hidden
    W, U, b = params.fused()
    xw = ad.reshape(ad.add_bias(ad.matmul(ad.reshape(x, (B * T, D)), W), b), (B, T, 4 * H))
    zeros = np.zeros((B, H), dtype=x.dtype)
    h, c = Tensor(zeros), Tensor(zeros)
    outputs: list[Optional[Tensor]] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        pre = xw[:, t, :] + ad.matmul(h, U)
        h_new, c_new = _cell(pre, c, H)
        h = _blend(mask[:, t], h_new, h)
        c = _blend(mask[:, t], c_new, c)
        outputs[t] = h
    return ad.stack(outputs, axis=1), h


class BiLstmEncoder:
    kind = "bilstm_enhanced"

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64,
                 forget_bias: float = 1.0, prefix: str = "bilstm"):
        self.fwd = LstmCellParams(input_dim, hidden, rng, dtype, forget_bias, prefix=f"{prefix}.fwd")
        self.bwd = LstmCellParams(input_dim, hidden, rng, dtype, forget_bias, prefix=f"{prefix}.bwd")
        self.output_dim = input_dim + 2 * hidden

    def parameters(self) -> list[Parameter]:
        return self.fwd.parameters() + self.bwd.parameters()

    def __call__(self, x: Tensor, mask: np.ndarray) -> Encoded:
        states = bilstm_states(self.fwd, self.bwd, x, mask)
        return Encoded(ad.concat([x, states], axis=-1), mask.copy(), self.kind, mask.sum(axis=1))


def bilstm_states(fwd: LstmCellParams, bwd: LstmCellParams, x: Tensor, mask: np.ndarray) -> Tensor:
    hf, _ = run_lstm(fwd, x, mask)
    hb, _ = run_lstm(bwd, x, mask, reverse=True)
    return ad.concat([hf, hb], axis=-1)


def bilstm_encode(fwd: LstmCellParams, bwd: LstmCellParams, words: Sequence[Tensor]) -> list[Tensor]:
    """Position-wise ``[h_forward ; h_backward]`` for one unpadded sentence."""
    if not words:
        raise ValueError("bilstm_encode: empty sequence")
    x = ad.reshape(ad.stack(list(words), axis=0), (1, len(words), -1))
    states = bilstm_states(fwd, bwd, x, np.ones((1, len(words)), dtype=bool))
    return [states[0, t] for t in range(len(words))]


def enhance(words: Sequence[Tensor], states: Sequence[Tensor]) -> EncodedSentence:
    """Pair each word vector with its contextual state: ``[s_i ; v_i]``."""
    if len(words) != len(states):
        raise DimensionError(f"enhance: {len(words)} words but {len(states)} states")
    return EncodedSentence([ad.concat([s, v]) for s, v in zip(words, states)], BiLstmEncoder.kind, len(words))


# ---------------------------------------------------------------------------
# binary-tree LSTM

TREE_GATES = ("i", "o", "c")
CHILDREN = ("L", "R")


class BtreeLstmParams:
    """Leaf input maps per gate, per-child recurrences, and four forget recurrences.

    ``U[g][child]`` maps a child's hidden state into gate ``g`` (i, o, c).
    ``Uf[(k, l)]`` maps child ``l``'s hidden state into the forget gate of child ``k``.
    ``W["f"]`` exists only when internal nodes receive a non-zero input; with
    zero internal inputs the forget gate never sees a word and W_f would be dead.
    """

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64,
                 forget_bias: float = 1.0, internal_input: str = "zero", prefix: str = "btree"):
        self.input_dim = input_dim
        self.hidden = hidden
        self.internal_input = internal_input
        gates = TREE_GATES + (("f",) if internal_input != "zero" else ())
        self.W = {g: Parameter(glorot(rng, (input_dim, hidden), dtype), name=f"{prefix}.W_{g}") for g in gates}
        self.U = {
            g: {k: Parameter(glorot(rng, (hidden, hidden), dtype), name=f"{prefix}.U_{g}_{k}") for k in CHILDREN}
            for g in TREE_GATES
        }
        self.Uf = {
            (k, l): Parameter(glorot(rng, (hidden, hidden), dtype), name=f"{prefix}.Uf_{k}{l}")
            for k in CHILDREN for l in CHILDREN
        }
        self.b = {g: Parameter(np.zeros(hidden, dtype=dtype), name=f"{prefix}.b_{g}") for g in TREE_GATES}
        self.bf = {k: Parameter(np.full(hidden, forget_bias, dtype=dtype), name=f"{prefix}.bf_{k}") for k in CHILDREN}

    def parameters(self) -> list[Parameter]:
        out = list(self.W.values())
        for g in TREE_GATES:
            out += [self.U[g][k] for k in CHILDREN]
        out += list(self.Uf.values()) + list(self.b.values()) + list(self.bf.values())
        return out

    def fused_recurrence(self) -> Tensor:
        """(2H, 5H) matrix: rows [left; right], columns [i, o, c, f_left, f_right]."""
        rows = []
        for l in CHILDREN:
            cols = [self.U[g][l] for g in TREE_GATES] + [self.Uf[(k, l)] for k in CHILDREN]
            rows.append(ad.concat(cols, axis=1))
        return ad.concat(rows, axis=0)

    def fused_bias(self) -> Tensor:
        return ad.concat([self.b[g] for g in TREE_GATES] + [self.bf[k] for k in CHILDREN], axis=0)


def _tree_node(params: BtreeLstmParams, hl: Tensor, cl: Tensor, hr: Tensor, cr: Tensor,
               x: Optional[Tensor], U: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    H = params.hidden
    pre = ad.add_bias(ad.matmul(ad.concat([hl, hr], axis=1), U), bias)
    if x is not None:
        wx = ad.matmul(x, ad.concat([params.W[g] for g in TREE_GATES] + [params.W["f"]] * 2, axis=1))
        pre = pre + wx
    i = ad.sigmoid(pre[:, :H])
    o = ad.sigmoid(pre[:, H:2 * H])
    cand = ad.tanh(pre[:, 2 * H:3 * H])
    fl = ad.sigmoid(pre[:, 3 * H:4 * H])
    fr = ad.sigmoid(pre[:, 4 * H:])
    c = fl * cl + fr * cr + i * cand
    return o * ad.tanh(c), c


def pairing_schedule(n: int) -> list[list[tuple[int, int] | tuple[int]]]:
    """Per level, the groups formed from the previous level's node positions.

    A 2-tuple is a new internal node; a 1-tuple is an odd trailing node
    promoted unchanged.
    """
    if n < 1:
        raise ValueError("pairing_schedule: n must be >= 1")
    levels = []
    m = n
    while m > 1:
        groups: list = [(j, j + 1) for j in range(0, m - 1, 2)]
        if m % 2:
            groups.append((m - 1,))
        levels.append(groups)
        m = len(groups)
    return levels


class BtreeEncoder:
    kind = "btree"

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64,
                 forget_bias: float = 1.0, internal_input: str = "zero", prefix: str = "btree"):
        self.params = BtreeLstmParams(input_dim, hidden, rng, dtype, forget_bias, internal_input, prefix)
        self.output_dim = hidden

    def parameters(self) -> list[Parameter]:
        return self.params.parameters()

    def __call__(self, x: Tensor, mask: np.ndarray) -> Encoded:
        return btree_states(self.params, x, mask)


def btree_states(params: BtreeLstmParams, x: Tensor, mask: np.ndarray) -> Encoded:
    B, T, D = x.shape
    if D != params.input_dim:
        raise DimensionError(f"btree: input dim {D} != {params.input_dim}")
    n = mask.sum(axis=1).astype(np.int64)
    if (n < 1).any():
        raise ValueError("btree: empty sequence")
    H = params.hidden
    # leaves: children are zero states, so only the input and bias terms remain
    leaf_W = ad.concat([params.W[g] for g in TREE_GATES], axis=1)
    leaf_b = ad.concat([params.b[g] for g in TREE_GATES], axis=0)
    pre = ad.add_bias(ad.matmul(ad.reshape(x, (B * T, D)), leaf_W), leaf_b)
    i = ad.sigmoid(pre[:, :H])
    o = ad.sigmoid(pre[:, H:2 * H])
    c = i * ad.tanh(pre[:, 2 * H:])
    h = o * ad.tanh(c)
    h = ad.reshape(h, (B, T, H))
    c = ad.reshape(c, (B, T, H))
    xs = x if params.internal_input != "zero" else None

    U = params.fused_recurrence()
    bias = params.fused_bias()
    level_states = [h]
    offsets = [0]
    new_nodes: list[np.ndarray] = []  # per level, (B, m') bool: a freshly combined node
    count = n.copy()
    width = T
    while count.max() > 1:
        if width % 2:
            pad = Tensor(np.zeros((B, 1, H), dtype=x.dtype))
            h, c = ad.concat([h, pad], axis=1), ad.concat([c, pad], axis=1)
            if xs is not None:
                xs = ad.concat([xs, Tensor(np.zeros((B, 1, D), dtype=x.dtype))], axis=1)
            width += 1
        half = width // 2
        hl, hr = h[:, 0::2, :], h[:, 1::2, :]
        cl, cr = c[:, 0::2, :], c[:, 1::2, :]
        flat = (B * half, H)
        xin = None
        if xs is not None:
            xl, xr = xs[:, 0::2, :], xs[:, 1::2, :]
            xin = ad.scale(ad.reshape(xl + xr, (B * half, D)), np.asarray(0.5))
        h_new, c_new = _tree_node(
            params, ad.reshape(hl, flat), ad.reshape(cl, flat), ad.reshape(hr, flat), ad.reshape(cr, flat),
            xin, U, bias,
        )
        is_pair = 2 * np.arange(half)[None, :] + 1 < count[:, None]
        m = is_pair.reshape(-1)
        h = ad.reshape(_blend(m, h_new, ad.reshape(hl, flat)), (B, half, H))
        c = ad.reshape(_blend(m, c_new, ad.reshape(cl, flat)), (B, half, H))
        if xs is not None:
            xs = ad.reshape(_blend(m, xin, ad.reshape(xl, (B * half, D))), (B, half, D))
        offsets.append(offsets[-1] + level_states[-1].shape[1])
        level_states.append(h)
        new_nodes.append(is_pair)
        count = (count + 1) // 2
        width = half

    # emission order: leaves left to right, then each level's new nodes bottom-up
    E = int((2 * n - 1).max())
    gather = np.zeros((B, E), dtype=np.int64)
    out_mask = np.zeros((B, E), dtype=bool)
    for b in range(B):
        ids = list(range(n[b]))
        for lvl, fresh in enumerate(new_nodes, start=1):
            ids += [offsets[lvl] + j for j in np.flatnonzero(fresh[b])]
        gather[b, : len(ids)] = ids
        out_mask[b, : len(ids)] = True
    allstates = ad.concat(level_states, axis=1)
    rows = np.repeat(np.arange(B)[:, None], E, axis=1)
    states = allstates[rows, gather, :]
    return Encoded(states, out_mask, BtreeEncoder.kind, n)


def btree_encode(params: BtreeLstmParams, words: Sequence[Tensor]) -> EncodedSentence:
    if not words:
        raise ValueError("btree_encode: empty sequence")
    x = ad.reshape(ad.stack(list(words), axis=0), (1, len(words), -1))
    return btree_states(params, x, np.ones((1, len(words)), dtype=bool)).sentence(0)
