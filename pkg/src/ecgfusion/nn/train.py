"""Mini-batch training with Adam and validation-loss early stopping."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .layers import Module
from .optim import Adam

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 50
    embedding_dim: int = 256
    dropout: float = 0.5
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.batch_size > 0 and self.max_epochs > 0
                and self.embedding_dim > 0 and self.patience > 0):
            raise ValueError("TrainConfig values must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def rows(self):
        for i in range(self.epochs):
            yield (i + 1, self.train_loss[i], self.train_acc[i],
                   self.val_loss[i] if self.val_loss else float("nan"),
                   self.val_acc[i] if self.val_acc else float("nan"))

    def write_csv(self, path: str | os.PathLike, header_lines: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for row in self.rows():
                w.writerow([row[0]] + [f"{v:.10g}" for v in row[1:]])


Inputs = tuple  # one array per network input, first axis = samples


def _take(inputs: Inputs, idx) -> tuple:
    return tuple(None if a is None else a[idx] for a in inputs)


def evaluate(model: Module, inputs: Inputs, y: np.ndarray, batch_size: int = 64) -> tuple[float, float, np.ndarray]:
    """Eval-mode mean loss, accuracy (fraction) and logits."""
    model.eval()
    n = len(y)
    logits = []
    for start in range(0, n, batch_size):
        idx = slice(start, start + batch_size)
        logits.append(model(*_take(inputs, idx)).data)
    logits = np.concatenate(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_p[np.arange(n), y].mean())
    acc = float(np.mean(logits.argmax(axis=1) == y))
    return loss, acc, logits


def fit(
    model: Module,
    train_inputs: Inputs,
    y_train: np.ndarray,
    config: TrainConfig,
    val_inputs: Inputs | None = None,
    y_val: np.ndarray | None = None,
    on_epoch: Callable[[int, History], None] | None = None,
) -> History:
    """Train ``model`` in place; the best-validation weights are restored at the end.

    Training curves are the running mini-batch loss/accuracy (dropout on);
    validation curves are evaluated in eval mode after each epoch. Without
    a validation split, training runs for ``max_epochs``.
    """
    y_train = np.asarray(y_train, dtype=np.int64)
    n = len(y_train)
    if n == 0:
        raise ValueError("empty training split")
    if len(np.unique(y_train)) < 2:
        raise ValueError("training data must contain at least 2 classes")
    has_val = y_val is not None and len(y_val) > 0
    if y_val is not None and len(y_val) == 0:
        raise ValueError("empty validation split")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), lr=config.learning_rate)
    hist = History()
    best_loss, best_state, stale = np.inf, None, 0
    for epoch in range(config.max_epochs):
        model.train()
        order = rng.permutation(n)
        tot_loss, tot_correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start: start + config.batch_size]
            yb = y_train[idx]
            logits = model(*_take(train_inputs, idx))
            loss = F.softmax_cross_entropy(logits, yb)
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot_loss += float(loss.data) * len(idx)
            tot_correct += int(np.sum(logits.data.argmax(axis=1) == yb))
        hist.train_loss.append(tot_loss / n)
        hist.train_acc.append(tot_correct / n)
        if has_val:
            vl, va, _ = evaluate(model, val_inputs, np.asarray(y_val, dtype=np.int64))
            hist.val_loss.append(vl)
            hist.val_acc.append(va)
            if vl < best_loss:
                best_loss, best_state, stale = vl, model.state_dict(), 0
                hist.best_epoch = epoch + 1
            else:
                stale += 1
        if on_epoch is not None:
            on_epoch(epoch + 1, hist)
        logger.debug("epoch %d loss %.4f acc %.3f", epoch + 1, hist.train_loss[-1], hist.train_acc[-1])
        if has_val and stale >= config.patience:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        hist.best_epoch = hist.epochs
    model.eval()
    return hist
