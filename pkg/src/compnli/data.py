"""SNLI ingestion, tokenization and padded mini-batches."""
from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import LABELS
from .embeddings import PAD

logger = logging.getLogger(__name__)

LABEL_TO_INDEX = {label: i for i, label in enumerate(LABELS)}
NO_CONSENSUS = "-"
_PUNCT = set(string.punctuation)


class DataError(ValueError):
    pass


def label_index(label: str) -> int:
    return LABEL_TO_INDEX[label]


def label_name(index: int) -> str:
    return LABELS[index]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and peel ASCII punctuation off both ends of each chunk."""
    tokens: list[str] = []
    for chunk in text.lower().split():
        start, end = 0, len(chunk)
        while start < end and chunk[start] in _PUNCT:
            start += 1
        while end > start and chunk[end - 1] in _PUNCT:
            end -= 1
        tokens.extend(chunk[:start])
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(chunk[end:])
    return tokens


@dataclass
class SentencePair:
    premise: list[str]
    hypothesis: list[str]
    gold: Optional[int] = None
    premise_text: str = ""
    hypothesis_text: str = ""

    @classmethod
    def from_text(cls, premise: str, hypothesis: str, gold: Optional[int] = None) -> "SentencePair":
        p, h = tokenize(premise), tokenize(hypothesis)
        if not p or not h:
            raise DataError("premise and hypothesis must contain at least one token")
        return cls(p, h, gold, premise, hypothesis)


@dataclass
class SnliData:
    pairs: list[SentencePair] = field(default_factory=list)
    records: int = 0
    skipped: int = 0
    parse_failures: int = 0

    def class_histogram(self) -> tuple[int, ...]:
        counts = [0] * len(LABELS)
        for p in self.pairs:
            counts[p.gold] += 1
        return tuple(counts)


def load_snli(path: str | Path, strict: bool = True, limit: Optional[int] = None) -> SnliData:
    """Read newline-delimited JSON records with gold_label, sentence1 and sentence2.

    Records labelled ``-`` (no annotator consensus) are skipped and counted.
    With ``strict`` a bad record raises :class:`DataError` naming its line;
    otherwise it is counted in ``parse_failures``.
    """
    out = SnliData()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            out.records += 1
            try:
                rec = json.loads(line)
                missing = [k for k in ("gold_label", "sentence1", "sentence2") if not isinstance(rec.get(k), str)]
                if missing:
                    raise DataError(f"missing field(s) {', '.join(missing)}")
                if rec["gold_label"] == NO_CONSENSUS:
                    out.skipped += 1
                    continue
                if rec["gold_label"] not in LABEL_TO_INDEX:
                    raise DataError(f"unknown gold_label {rec['gold_label']!r}")
                pair = SentencePair.from_text(rec["sentence1"], rec["sentence2"], LABEL_TO_INDEX[rec["gold_label"]])
            except (DataError, json.JSONDecodeError, AttributeError) as exc:
                if strict:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
                out.parse_failures += 1
                continue
            out.pairs.append(pair)
            if limit is not None and len(out.pairs) >= limit:
                break
    if out.skipped:
        logger.info("%s: skipped %d records without gold consensus", path, out.skipped)
    return out


def read_pair_lines(lines: Sequence[str]) -> list[SentencePair]:
    """Parse ``premise<TAB>hypothesis`` lines (the ``infer`` input format)."""
    pairs = []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"line {lineno}: expected premise<TAB>hypothesis")
        pairs.append(SentencePair.from_text(parts[0], parts[1]))
    return pairs


@dataclass
class Batch:
    """Token grids padded with PAD to ``seq_len``; masks are true at real tokens."""

    pairs: list[SentencePair]
    premise: list[list[str]]
    hypothesis: list[list[str]]
    premise_mask: np.ndarray
    hypothesis_mask: np.ndarray
    gold: np.ndarray
    truncated: int = 0

    def __len__(self) -> int:
        return len(self.pairs)


def _pad(tokens: list[str], seq_len: int) -> tuple[list[str], bool]:
    kept = tokens[:seq_len]
    return kept + [PAD] * (seq_len - len(kept)), len(tokens) > seq_len


def build_batch(pairs: Sequence[SentencePair], seq_len: int = 64) -> Batch:
    prem, hyp, truncated = [], [], 0
    pm = np.zeros((len(pairs), seq_len), dtype=bool)
    hm = np.zeros((len(pairs), seq_len), dtype=bool)
    for r, pair in enumerate(pairs):
        p, tp = _pad(pair.premise, seq_len)
        h, th = _pad(pair.hypothesis, seq_len)
        truncated += tp + th
        prem.append(p)
        hyp.append(h)
        pm[r, : min(len(pair.premise), seq_len)] = True
        hm[r, : min(len(pair.hypothesis), seq_len)] = True
    gold = np.array([-1 if p.gold is None else p.gold for p in pairs], dtype=np.int64)
    return Batch(list(pairs), prem, hyp, pm, hm, gold, truncated)


def make_batches(pairs: Sequence[SentencePair], batch_size: int = 40, seq_len: int = 64,
                 shuffle_seed: Optional[int] = None) -> list[Batch]:
    """Split into batches of ``batch_size`` (last one may be short).

    With a ``shuffle_seed`` the order is a seeded permutation; without one the
    input order is kept.
    """
    order = np.arange(len(pairs))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(pairs))
    batches = []
    for start in range(0, len(pairs), batch_size):
        batches.append(build_batch([pairs[i] for i in order[start:start + batch_size]], seq_len))
    truncated = sum(b.truncated for b in batches)
    if truncated:
        logger.info("truncated %d sentences to %d tokens", truncated, seq_len)
    return batches
