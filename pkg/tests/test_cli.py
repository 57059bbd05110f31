import io

import pytest

from compnli.cli import main
from compnli.config import LABELS
from compnli.synthetic import templated_pairs, vocabulary, write_embeddings, write_snli


def run(*argv, stdin=""):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdin=io.StringIO(stdin), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    pairs = templated_pairs(12, seed=3)
    write_snli(root / "train.jsonl", pairs)
    write_snli(root / "dev.jsonl", pairs)
    write_embeddings(root / "vec.txt", vocabulary(pairs), dim=8)
    (root / "tiny.cfg").write_text(
        "# small model for tests\nembed_dim=8\nbtree_hidden=8\noperators=3\nop_hidden=8\nop_out=8\n"
        "agg_hidden=8\nbn_gamma_init=1.0\nbn_momentum=0.0\nlr=0.02\nmax_epochs=60\npatience=60\nbatch_size=12\n"
        "dtype=float64\n"
    )
    code, out, err = run("train", "--train", str(root / "train.jsonl"), "--dev", str(root / "dev.jsonl"),
                         "--embeddings", str(root / "vec.txt"), "--encoder", "btree",
                         "--config", str(root / "tiny.cfg"), "--checkpoint-out", str(root / "m.cnli"))
    assert code == 0, err
    return root, pairs, out


def test_train_prints_epoch_table(workspace):
    _, _, out = workspace
    lines = out.strip().splitlines()
    assert lines[0].startswith("epoch\ttrain_loss")
    assert len(lines[1].split("\t")) == 8


def test_eval(workspace):
    root, _, _ = workspace
    code, out, _ = run("eval", "--checkpoint", str(root / "m.cnli"), "--data", str(root / "dev.jsonl"))
    assert code == 0
    fields = out.strip().split("\t")
    assert fields[0::2] == ["loss", "accuracy", "N", "E", "C"]
    assert float(fields[3]) == 1.0


def test_infer_reproduces_labels(workspace):
    root, pairs, _ = workspace
    stdin = "".join(f"{p.premise_text}\t{p.hypothesis_text}\n" for p in pairs)
    code, out, _ = run("infer", "--checkpoint", str(root / "m.cnli"), stdin=stdin)
    assert code == 0
    rows = [line.split("\t") for line in out.strip().splitlines()]
    assert [r[0] for r in rows] == [LABELS[p.gold] for p in pairs]
    for r in rows:
        assert len(r) == 4 and abs(sum(float(x) for x in r[1:]) - 1) < 1e-5


def test_align_format(workspace):
    root, _, _ = workspace
    code, out, _ = run("align", "--checkpoint", str(root / "m.cnli"), "--premise", "the dog runs .",
                       "--hypothesis", "a dog runs")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "premise: the dog runs .\thypothesis: a dog runs"
    gates_at = lines.index("gates")
    # btree over 3 hypothesis tokens gives 5 encodings; premise has 4 tokens, 7 encodings
    weights = [list(map(float, line.split())) for line in lines[1:gates_at]]
    assert len(weights) == 5 and all(len(w) == 7 for w in weights)
    assert all(abs(sum(w) - 1) < 1e-5 for w in weights)
    gates = [list(map(float, line.split())) for line in lines[gates_at + 1:]]
    assert len(gates) == 5 and all(len(g) == 3 for g in gates)


def test_missing_required_flag_is_usage_error(workspace):
    root, _, _ = workspace
    code, _, err = run("train", "--train", str(root / "train.jsonl"), "--dev", str(root / "dev.jsonl"),
                       "--encoder", "btree")
    assert code == 1 and "--embeddings" in err


def test_bad_config_key(workspace, tmp_path):
    root, _, _ = workspace
    (tmp_path / "bad.cfg").write_text("hiden=3\n")
    code, _, err = run("train", "--train", str(root / "train.jsonl"), "--dev", str(root / "dev.jsonl"),
                       "--embeddings", str(root / "vec.txt"), "--encoder", "btree",
                       "--config", str(tmp_path / "bad.cfg"))
    assert code == 1 and "hiden" in err


def test_corrupted_checkpoint_exit_two(workspace, tmp_path):
    root, _, _ = workspace
    blob = bytearray((root / "m.cnli").read_bytes())
    blob[100] ^= 0xFF
    (tmp_path / "bad.cnli").write_bytes(bytes(blob))
    code, _, err = run("eval", "--checkpoint", str(tmp_path / "bad.cnli"), "--data", str(root / "dev.jsonl"))
    assert code == 2 and "checksum" in err


def test_missing_data_file_exit_two(workspace, tmp_path):
    root, _, _ = workspace
    code, _, _ = run("eval", "--checkpoint", str(root / "m.cnli"), "--data", str(tmp_path / "none.jsonl"))
    assert code == 2
