"""Templated toy corpora and random embedding files for smoke tests and demos."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import LABELS
from .data import SentencePair

SUBJECTS = ("man", "woman", "dog", "cat", "boy", "girl", "bird", "horse")
ACTIONS = ("runs", "sleeps", "eats", "sits", "jumps", "swims", "sings", "reads")


def templated_pairs(n: int = 64, seed: int = 0) -> list[SentencePair]:
    """Pairs "the S A ." / "a S' A' ." labelled by a fixed rule.

    Same subject and action is entailment, same subject with another action is
    contradiction, a different subject is neutral. Labels cycle so the classes
    stay balanced.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        label = i % 3
        s, a = rng.choice(SUBJECTS), rng.choice(ACTIONS)
        if label == 0:
            s2, a2 = s, a
        elif label == 2:
            s2, a2 = s, rng.choice([x for x in ACTIONS if x != a])
        else:
            s2, a2 = rng.choice([x for x in SUBJECTS if x != s]), rng.choice(ACTIONS)
        pairs.append(SentencePair.from_text(f"the {s} {a} .", f"a {s2} {a2} .", label))
    return pairs


def vocabulary(pairs: Iterable[SentencePair]) -> list[str]:
    seen: dict[str, None] = {}
    for p in pairs:
        for tok in p.premise + p.hypothesis:
            seen.setdefault(tok, None)
    return list(seen)


def write_embeddings(path: str | Path, tokens: Iterable[str], dim: int = 300, scale: float = 0.06,
                     seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    with Path(path).open("w", encoding="utf-8") as fh:
        for tok in tokens:
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in rng.normal(0.0, scale, dim)) + "\n")


def write_snli(path: str | Path, pairs: Iterable[SentencePair]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"gold_label": LABELS[p.gold], "sentence1": p.premise_text, "sentence2": p.hypothesis_text}
            fh.write(json.dumps(rec) + "\n")
