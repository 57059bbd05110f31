"""Frozen word vectors, out-of-vocabulary sampling and the learnable transform."""
from __future__ import annotations

import hashlib
import logging
import threading
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor

logger = logging.getLogger(__name__)

PAD = "<pad>"


class EmbeddingParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


class EmbeddingTable:
    """Token index plus frozen vectors. Index 0 is the all-zero PAD row.

    Rows loaded from a file are never modified. Unseen tokens get a vector drawn
    from N(0, sigma) with a generator seeded by ``(oov_seed, token)``, so the
    assignment does not depend on lookup order. Sampled rows are cached and
    appended after the file rows.
    """

    def __init__(self, dim: int = 300, oov_seed: int = 1234, oov_sigma: float = 0.06):
        self.dim = dim
        self.oov_seed = oov_seed
        self.oov_sigma = oov_sigma
        self.tokens: list[str] = [PAD]
        self.index: dict[str, int] = {PAD: 0}
        self.n_frozen = 1
        self._buf = np.zeros((16, dim))
        self._lock = threading.Lock()
        self.malformed = 0

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        idx = self.index.get(token.lower())
        return idx is not None and 0 < idx < self.n_frozen

    @property
    def matrix(self) -> np.ndarray:
        """Read-only view of every row (frozen file rows, then cached OOV rows)."""
        view = self._buf[: len(self.tokens)]
        view.flags.writeable = False
        return view

    @property
    def oov_tokens(self) -> list[str]:
        return self.tokens[self.n_frozen:]

    def _append(self, token: str, row: np.ndarray) -> int:
        n = len(self.tokens)
        if n == self._buf.shape[0]:
            grown = np.zeros((2 * n, self.dim))
            grown[:n] = self._buf[:n]
            self._buf = grown
        self._buf[n] = row
        self.tokens.append(token)
        self.index[token] = n
        return n

    def add_frozen(self, token: str, row: np.ndarray) -> None:
        if len(self.tokens) != self.n_frozen:
            raise RuntimeError("frozen rows must be added before any OOV row")
        if token in self.index:
            return
        self._append(token, row)
        self.n_frozen += 1

    def sample_oov(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng([self.oov_seed, int.from_bytes(digest, "little")])
        return rng.normal(0.0, self.oov_sigma, self.dim)

    def token_id(self, token: str) -> int:
        token = token.lower()
        idx = self.index.get(token)
        if idx is not None:
            return idx
        row = self.sample_oov(token)
        with self._lock:
            idx = self.index.get(token)
            if idx is None:
                idx = self._append(token, row)
        return idx

    def ids(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([0 if t == PAD else self.token_id(t) for t in tokens], dtype=np.int64)

    def lookup(self, token: str) -> np.ndarray:
        idx = self.token_id(token)  # may grow the buffer
        return self._buf[idx].copy()

    def rows(self, ids: np.ndarray) -> np.ndarray:
        return self._buf[ids]

    def restore_oov(self, token: str, row: np.ndarray) -> None:
        with self._lock:
            if token not in self.index:
                self._append(token, np.asarray(row, dtype=np.float64))


def lookup(table: EmbeddingTable, token: str) -> np.ndarray:
    return table.lookup(token)


def load_embeddings(
    path: str | Path,
    dim: int = 300,
    vocab: Optional[set[str]] = None,
    oov_seed: int = 1234,
    oov_sigma: float = 0.06,
) -> EmbeddingTable:
    """Read a whitespace-separated text embedding file.

    A leading ``count dim`` header (word2vec text format) is skipped. When
    ``vocab`` is given, only those (lowercased) tokens are kept. Lines whose
    token contains spaces are skipped with a warning; any other line without
    exactly ``dim`` values raises :class:`EmbeddingParseError`.
    """
    path = Path(path)
    table = EmbeddingTable(dim, oov_seed=oov_seed, oov_sigma=oov_sigma)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.rstrip("\n").rstrip("\r").split(" ")
            if fields and fields[-1] == "":
                fields.pop()
            if not fields or fields == [""]:
                continue
            if lineno == 1 and len(fields) == 2 and all(f.isdigit() for f in fields):
                continue
            if len(fields) != dim + 1:
                if len(fields) > dim + 1 and _all_floats(fields[-dim:]):
                    logger.warning("%s:%d: token with spaces skipped", path, lineno)
                    table.malformed += 1
                    continue
                raise EmbeddingParseError(path, lineno, f"expected {dim} values, found {len(fields) - 1}")
            token = fields[0].lower()
            if vocab is not None and token not in vocab:
                continue
            try:
                row = np.array(fields[1:], dtype=np.float64)
            except ValueError:
                raise EmbeddingParseError(path, lineno, "non-numeric value") from None
            table.add_frozen(token, row)
    if table.n_frozen == 1:
        logger.warning("%s: no embeddings loaded; every token will be out of vocabulary", path)
    if table.malformed:
        logger.warning("%s: %d malformed lines skipped", path, table.malformed)
    return table


def _all_floats(values) -> bool:
    try:
        for v in values:
            float(v)
    except ValueError:
        return False
    return True


class EmbeddingTransform:
    """Learnable ``sigmoid(W^T w + b)`` applied to frozen word vectors."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float64, prefix: str = "transform"):
        limit = np.sqrt(6.0 / (2 * dim))
        self.W = Parameter(rng.uniform(-limit, limit, (dim, dim)).astype(dtype), name=f"{prefix}.W")
        self.b = Parameter(np.zeros(dim, dtype=dtype), name=f"{prefix}.b")

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]

    def __call__(self, w: Tensor) -> Tensor:
        if w.shape[-1] != self.W.shape[0]:
            raise DimensionError(f"transform: input dim {w.shape[-1]} != {self.W.shape[0]}")
        if w.data.ndim == 1:
            return ad.reshape(self(ad.reshape(w, (1, -1))), w.shape)
        lead = w.shape[:-1]
        flat = ad.reshape(w, (-1, w.shape[-1]))
        out = ad.sigmoid(ad.add_bias(ad.matmul(flat, self.W), self.b))
        return ad.reshape(out, lead + (self.W.shape[1],))


def transform(layer: EmbeddingTransform, w) -> Tensor:
    return layer(ad.as_tensor(w, dtype=layer.W.dtype))
