"""Adam optimization, epoch loop, evaluation metrics and early stopping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .autodiff import Parameter, backward
from .batchnorm import BatchNormState, batchnorm  # noqa: F401 - re-exported
from .config import LABELS, ModelConfig
from .data import SentencePair, make_batches
from .model import NLIModel

logger = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


class Adam:
    """Bias-corrected Adam over a fixed, named parameter set."""

    def __init__(self, params: Mapping[str, Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.t = 0

    @classmethod
    def for_model(cls, model: NLIModel) -> "Adam":
        c = model.config
        return cls(model.named_parameters(), c.lr, c.beta1, c.beta2, c.adam_eps)

    def step(self, grads: Optional[Mapping[str, np.ndarray]] = None) -> None:
        if grads is None:
            grads = {name: p.grad for name, p in self.params.items()}
        for name, g in grads.items():
            if g is None:
                raise TrainingAborted(f"parameter {name} has no gradient")
            if not np.all(np.isfinite(g)):
                raise TrainingAborted(f"non-finite gradient for parameter {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def adam_step(state: Adam, params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray]) -> None:
    if set(params) != set(state.params):
        raise ValueError("parameter set differs from the optimizer's")
    state.step(grads)


@dataclass
class Metrics:
    loss: float
    accuracy: float
    per_class: dict[str, float]
    class_counts: dict[str, int]
    n: int
    skipped_batches: int = 0

    def table_row(self) -> str:
        """Class accuracies in the N, E, C order used for reporting."""
        return "\t".join(f"{self.per_class[name]:.4f}" for name in ("neutral", "entailment", "contradiction"))


def _metrics(losses: list[tuple[float, int]], gold: np.ndarray, pred: np.ndarray, skipped: int = 0) -> Metrics:
    n = len(gold)
    total = sum(loss * size for loss, size in losses)
    per_class, counts = {}, {}
    for i, name in enumerate(LABELS):
        sel = gold == i
        counts[name] = int(sel.sum())
        per_class[name] = float((pred[sel] == i).mean()) if sel.any() else 0.0
    acc = float((pred == gold).mean()) if n else 0.0
    return Metrics(total / n if n else float("nan"), acc, per_class, counts, n, skipped)


def train_epoch(model: NLIModel, dataset: Sequence[SentencePair], config: ModelConfig, optimizer: Adam,
                epoch: int = 0) -> Metrics:
    """One pass over shuffled mini-batches; metrics come from the training-mode predictions."""
    if not dataset:
        raise ValueError("train_epoch: empty dataset")
    batches = make_batches(dataset, config.batch_size, config.seq_len, shuffle_seed=config.shuffle_seed + epoch)
    params = model.parameters()
    losses, gold, pred, skipped = [], [], [], 0
    for batch in batches:
        if len(batch) < 2:
            skipped += 1
            continue
        loss, result = model.loss(batch, mode="train")
        backward(loss, params)
        optimizer.step()
        losses.append((float(loss.data), len(batch)))
        gold.append(batch.gold)
        pred.append(result.predictions())
    if not gold:
        raise ValueError("train_epoch: every batch was too small to train on")
    return _metrics(losses, np.concatenate(gold), np.concatenate(pred), skipped)


def predict(model: NLIModel, pairs: Sequence[SentencePair], batch_size: int = 40) -> np.ndarray:
    """Class probabilities (N, 3) in eval mode, in input order."""
    out = [model.run_batch(b, "eval").probs.data for b in make_batches(pairs, batch_size, model.config.seq_len)]
    return np.concatenate(out) if out else np.zeros((0, len(LABELS)))


def evaluate(model: NLIModel, dataset: Sequence[SentencePair], batch_size: Optional[int] = None) -> Metrics:
    """Eval-mode loss and accuracies; never touches parameters or running statistics."""
    batch_size = batch_size or model.config.batch_size
    probs = predict(model, dataset, batch_size)
    gold = np.array([p.gold for p in dataset], dtype=np.int64)
    picked = np.maximum(probs[np.arange(len(gold)), gold], 1e-12)
    return _metrics([(float(-np.log(picked).mean()), len(gold))], gold, probs.argmax(axis=1))


def metrics_line(epoch: int, train: Metrics, dev: Optional[Metrics]) -> str:
    fields = [str(epoch), f"{train.loss:.6f}", f"{train.accuracy:.4f}"]
    if dev is not None:
        fields += [f"{dev.loss:.6f}", f"{dev.accuracy:.4f}", dev.table_row()]
    return "\t".join(fields)


@dataclass
class History:
    train: list[Metrics] = field(default_factory=list)
    dev: list[Metrics] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def snapshot(model: NLIModel) -> dict[str, np.ndarray]:
    state = {name: p.data.copy() for name, p in model.named_parameters().items()}
    for bn in model.norm_states():
        state[f"{bn.name}.running_mean"] = bn.running_mean.copy()
        state[f"{bn.name}.running_var"] = bn.running_var.copy()
    return state


def restore(model: NLIModel, state: Mapping[str, np.ndarray]) -> None:
    for name, p in model.named_parameters().items():
        p.data[...] = state[name]
    for bn in model.norm_states():
        bn.running_mean = state[f"{bn.name}.running_mean"].copy()
        bn.running_var = state[f"{bn.name}.running_var"].copy()


def fit(model: NLIModel, train: Sequence[SentencePair], dev: Optional[Sequence[SentencePair]] = None,
        optimizer: Optional[Adam] = None, max_epochs: Optional[int] = None, patience: Optional[int] = None,
        target_train_accuracy: Optional[float] = None, log: Callable[[str], None] = logger.info) -> History:
    """Train with dev-set early stopping; the best dev epoch's weights are restored at the end.

    ``target_train_accuracy`` stops as soon as an epoch's training accuracy reaches it.
    """
    c = model.config
    optimizer = optimizer or Adam.for_model(model)
    max_epochs = c.max_epochs if max_epochs is None else max_epochs
    patience = c.patience if patience is None else patience
    history = History()
    best, best_acc, stale = None, -1.0, 0
    for epoch in range(max_epochs):
        tm = train_epoch(model, train, c, optimizer, epoch)
        history.train.append(tm)
        dm = evaluate(model, dev) if dev else None
        if dm is not None:
            history.dev.append(dm)
        log(metrics_line(epoch + 1, tm, dm))
        if dm is not None:
            if dm.accuracy > best_acc:
                best_acc, best, stale, history.best_epoch = dm.accuracy, snapshot(model), 0, epoch
            else:
                stale += 1
                if stale >= patience:
                    history.stopped_early = True
                    break
        if target_train_accuracy is not None and tm.accuracy >= target_train_accuracy:
            break
    if best is not None:
        restore(model, best)
    return history
