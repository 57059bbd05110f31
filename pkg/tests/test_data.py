import json

import numpy as np
import pytest

from compnli.config import LABELS
from compnli.data import (
    DataError,
    SentencePair,
    build_batch,
    label_index,
    label_name,
    load_snli,
    make_batches,
    read_pair_lines,
    tokenize,
)
from compnli.embeddings import PAD


def write(path, records):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records), encoding="utf-8")
    return path


def rec(label, s1="A man sleeps.", s2="A person rests."):
    return {"gold_label": label, "sentence1": s1, "sentence2": s2}


def test_labels_parse(tmp_path):
    data = load_snli(write(tmp_path / "d.jsonl", [rec(lab) for lab in LABELS]))
    assert [p.gold for p in data.pairs] == [label_index(lab) for lab in LABELS]
    assert data.class_histogram() == (1, 1, 1)


def test_no_consensus_skipped(tmp_path):
    data = load_snli(write(tmp_path / "d.jsonl", [rec("-"), rec("neutral")]))
    assert len(data.pairs) == 1 and data.skipped == 1


def test_missing_field_names_line(tmp_path):
    path = write(tmp_path / "d.jsonl", [rec("neutral"), {"gold_label": "neutral", "sentence1": "x"}])
    with pytest.raises(DataError, match=r":2:.*sentence2"):
        load_snli(path)
    assert load_snli(path, strict=False).parse_failures == 1


def test_label_bijection():
    for i, name in enumerate(LABELS):
        assert label_index(label_name(i)) == i and label_name(label_index(name)) == name


def test_tokenize():
    assert tokenize("A man, sleeping.") == ["a", "man", ",", "sleeping", "."]
    assert tokenize("don't") == ["don't"]


def test_batches_of_forty():
    pairs = [SentencePair(["a"], ["b"], 0) for _ in range(100)]
    assert [len(b) for b in make_batches(pairs, 40)] == [40, 40, 20]


def test_truncation_and_masks():
    pair = SentencePair(["w"] * 70, ["x", "y"], 1)
    batch = build_batch([pair], 64)
    assert batch.truncated == 1
    assert len(batch.premise[0]) == 64 and batch.premise_mask[0].all()
    assert batch.hypothesis[0][:3] == ["x", "y", PAD]
    assert batch.hypothesis_mask[0].sum() == 2


def test_shuffle_is_seeded_permutation():
    pairs = [SentencePair([str(i)], ["h"], i % 3) for i in range(95)]

    def order(seed):
        return [p.premise[0] for b in make_batches(pairs, 40, shuffle_seed=seed) for p in b.pairs]

    assert order(3) == order(3)
    assert order(3) != order(4)
    assert sorted(order(3), key=int) == [str(i) for i in range(95)]


def test_read_pair_lines():
    pairs = read_pair_lines(["A dog runs.\tAn animal moves.\n", "\n"])
    assert len(pairs) == 1 and pairs[0].gold is None
    with pytest.raises(DataError):
        read_pair_lines(["no tab here"])


def test_empty_sentence_rejected():
    with pytest.raises(DataError):
        SentencePair.from_text("...", "")
