"""Command line: ``compnli {train,eval,infer,align}``.

Exit codes: 0 success, 1 usage error, 2 data or checkpoint error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from .autodiff import DimensionError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import LABELS, ConfigError, ModelConfig
from .data import DataError, SentencePair, build_batch, load_snli, read_pair_lines
from .embeddings import EmbeddingParseError, load_embeddings
from .model import NLIModel, parameter_breakdown
from .training import Adam, evaluate, fit, predict

log = logging.getLogger("compnli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="compnli", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--train", required=True)
    t.add_argument("--dev", required=True)
    t.add_argument("--embeddings", required=True)
    t.add_argument("--encoder", required=True, choices=["bilstm", "btree"])
    t.add_argument("--config", help="key=value file overriding defaults")
    t.add_argument("--checkpoint-out", default="model.cnli")
    t.add_argument("--limit", type=int, help="use only the first N training pairs")

    e = sub.add_parser("eval", help="print metrics for a labelled file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)

    i = sub.add_parser("infer", help="label premise<TAB>hypothesis lines from stdin")
    i.add_argument("--checkpoint", required=True)

    a = sub.add_parser("align", help="print attention weights and gate vectors for one pair")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--premise", required=True)
    a.add_argument("--hypothesis", required=True)
    return parser


def _train(args, out) -> int:
    config = ModelConfig.from_file(args.config) if args.config else ModelConfig()
    config = config.replace(encoder=args.encoder)
    train = load_snli(args.train, limit=args.limit).pairs
    dev = load_snli(args.dev).pairs
    if not train:
        raise DataError(f"{args.train}: no usable training pairs")
    vocab = {tok for p in train + dev for tok in p.premise + p.hypothesis}
    table = load_embeddings(args.embeddings, config.embed_dim, vocab=vocab,
                            oov_seed=config.oov_seed, oov_sigma=config.oov_sigma)
    model = NLIModel(config, table)
    counts = parameter_breakdown(model)
    log.info("parameters: %d trainable", counts["total"])
    optimizer = Adam.for_model(model)
    print("epoch\ttrain_loss\ttrain_acc\tdev_loss\tdev_acc\tdev_N\tdev_E\tdev_C", file=out)
    fit(model, train, dev, optimizer, log=lambda line: print(line, file=out, flush=True))
    save_checkpoint(model, args.checkpoint_out, optimizer)
    return 0


def _eval(args, out) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    data = load_snli(args.data)
    m = evaluate(model, data.pairs)
    print(f"loss\t{m.loss:.6f}\taccuracy\t{m.accuracy:.4f}\tN\t{m.per_class['neutral']:.4f}"
          f"\tE\t{m.per_class['entailment']:.4f}\tC\t{m.per_class['contradiction']:.4f}", file=out)
    return 0


def format_prediction(probs: np.ndarray) -> str:
    return "\t".join([LABELS[int(np.argmax(probs))]] + [f"{p:.6f}" for p in probs])


def _infer(args, out, stdin) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    pairs = read_pair_lines(stdin.readlines())
    for row in predict(model, pairs):
        print(format_prediction(row), file=out)
    return 0


def _align(args, out) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    pair = SentencePair.from_text(args.premise, args.hypothesis)
    batch = build_batch([pair], model.config.seq_len)
    result = model.run_batch(batch, "eval")
    weights = result.alignment.rows(0)
    n_prem = int(result.premise.mask[0].sum())
    print(f"premise: {' '.join(pair.premise)}\thypothesis: {' '.join(pair.hypothesis)}", file=out)
    for row in weights:
        print(" ".join(f"{w:.6f}" for w in row[:n_prem]), file=out)
    print("gates", file=out)
    for row in result.gates.data:
        print(" ".join(f"{g:.6f}" for g in row), file=out)
    return 0


def main(argv: Optional[Sequence[str]] = None, stdin=None, stdout=None, stderr=None) -> int:
    stdin, stdout, stderr = stdin or sys.stdin, stdout or sys.stdout, stderr or sys.stderr
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=stderr)
        _parser().print_usage(stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            return _train(args, stdout)
        if args.command == "eval":
            return _eval(args, stdout)
        if args.command == "infer":
            return _infer(args, stdout, stdin)
        return _align(args, stdout)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return 1
    except (DataError, EmbeddingParseError, CheckpointError, DimensionError, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return 2


cli_main = main

if __name__ == "__main__":
    sys.exit(main())
