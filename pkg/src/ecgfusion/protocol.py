"""Subject-stratified folds, identification metrics, cross-validation and session protocols."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import clone

from .repro import stage_seed

logger = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")
SESSION_KINDS = ("same", "mixed", "cross")


class ProtocolError(ValueError):
    pass


class FoldError(RuntimeError):
    """Training or evaluation failed inside one fold."""

    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"fold {fold}: {type(cause).__name__}: {cause}")
        self.fold = fold


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------

@dataclass
class FoldAssignment:
    """Per-instance fold index (``-1`` marks instances of dropped subjects)."""

    k: int
    fold: np.ndarray
    seed: int
    dropped_subjects: list = field(default_factory=list)

    def splits(self):
        for i in range(self.k):
            yield np.flatnonzero((self.fold >= 0) & (self.fold != i)), np.flatnonzero(self.fold == i)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.fold[self.fold >= 0], minlength=self.k)


def make_folds(subjects, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Spread each subject's instances round-robin over ``k`` folds after a seeded shuffle.

    The starting fold rotates from subject to subject so that leftover
    instances do not pile up in the first folds. Subjects with fewer than
    ``k`` instances cannot appear in every training split and are dropped.
    """
    if k < 2:
        raise ProtocolError(f"k must be >= 2, got {k}")
    subjects = np.asarray(subjects)
    rng = np.random.default_rng(seed)
    fold = np.full(len(subjects), -1, dtype=np.int64)
    dropped = []
    offset = 0
    for s in np.unique(subjects):
        idx = np.flatnonzero(subjects == s)
        if len(idx) < k:
            dropped.append(s.item() if hasattr(s, "item") else s)
            continue
        idx = rng.permutation(idx)
        fold[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
    if dropped:
        warnings.warn(f"dropped {len(dropped)} subject(s) with fewer than {k} instances: {dropped}",
                      stacklevel=2)
    if np.all(fold < 0):
        raise ProtocolError("no subject has enough instances for the requested folds")
    return FoldAssignment(k, fold, seed, dropped)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Identification metrics in percent (AUC as a fraction)."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    roc: list = field(default_factory=list)  # per class (fpr, tpr) or None
    auc: np.ndarray | None = None
    macro_auc: float = float("nan")
    absent_classes: list = field(default_factory=list)
    labels: list | None = None

    def as_dict(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "auc": self.macro_auc}


def roc_curve(positive: np.ndarray, score: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-vs-rest ROC by sweeping the threshold over distinct score values (descending)."""
    positive = np.asarray(positive, dtype=bool)
    order = np.argsort(-score, kind="mergesort")
    s, p = score[order], positive[order]
    last_of_tie = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(p)[last_of_tie]
    fp = np.cumsum(~p)[last_of_tie]
    n_pos, n_neg = positive.sum(), (~positive).sum()
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return fpr, tpr


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def compute_metrics(y_true, y_pred, scores=None, n_classes: int | None = None,
                    labels: Sequence | None = None) -> MetricsReport:
    """Accuracy and macro precision/recall/F1 from one-vs-rest counts, plus ROC/AUC.

    Labels are integer class indices ``0..C-1``. ``C`` comes from
    ``n_classes``, the score width, or the largest label seen. Per-class
    precision with no predictions counts as 0. A class absent from
    ``y_true`` gets recall 0, is listed in ``absent_classes``, and its
    AUC (undefined) is left out of the macro AUC.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be 1D and of equal length")
    if y_true.size == 0:
        raise ValueError("cannot score an empty evaluation set")
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] != y_true.size:
            raise ValueError(f"scores must be (n, C) with n={y_true.size}, got {scores.shape}")
        if np.any(scores < -1e-9) or np.any(np.abs(scores.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("score rows must lie on the probability simplex")
    C = n_classes or (scores.shape[1] if scores is not None else int(max(y_true.max(), y_pred.max())) + 1)
    if y_true.min() < 0 or y_pred.min() < 0 or max(y_true.max(), y_pred.max()) >= C:
        raise ValueError(f"labels must lie in [0, {C})")
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0)
    actual = confusion.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    absent = [int(c) for c in np.flatnonzero(actual == 0)]
    if absent:
        logger.warning("classes absent from y_true (recall set to 0): %s", absent)
    report = MetricsReport(
        accuracy=100.0 * tp.sum() / y_true.size,
        precision=100.0 * precision.mean(),
        recall=100.0 * recall.mean(),
        f1=100.0 * f1.mean(),
        confusion=confusion,
        per_class_precision=100.0 * precision,
        per_class_recall=100.0 * recall,
        per_class_f1=100.0 * f1,
        absent_classes=absent,
        labels=list(labels) if labels is not None else None,
    )
    if scores is not None:
        auc = np.full(C, np.nan)
        roc = []
        for c in range(C):
            pos = y_true == c
            if pos.all() or not pos.any():
                roc.append(None)
                continue
            fpr, tpr = roc_curve(pos, scores[:, c])
            roc.append((fpr, tpr))
            auc[c] = trapezoid_auc(fpr, tpr)
        report.roc = roc
        report.auc = auc
        report.macro_auc = float(np.nanmean(auc)) if np.any(~np.isnan(auc)) else float("nan")
    return report


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass
class CVResult:
    folds: list[MetricsReport]
    assignment: FoldAssignment
    labels: list
    histories: list = field(default_factory=list)
    alphas: list = field(default_factory=list)

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) if name != "auc" else r.macro_auc for r in self.folds])

    def mean(self, name: str) -> float:
        return float(np.mean(self.values(name)))

    def std(self, name: str) -> float:
        return float(np.std(self.values(name)))

    def summary(self) -> dict[str, tuple[float, float]]:
        return {m: (self.mean(m), self.std(m)) for m in METRIC_NAMES + ("auc",)}


def _fit_kwargs(scalograms, idx):
    return {} if scalograms is None else {"scalograms": scalograms[idx]}


def _aligned_proba(est, X, scalograms, idx, n_classes: int) -> np.ndarray:
    """Class probabilities laid out over the global label indices."""
    proba = est.predict_proba(X[idx], **_fit_kwargs(scalograms, idx))
    out = np.zeros((len(idx), n_classes))
    out[:, np.asarray(est.classes_, dtype=np.int64)] = proba
    return out


def run_cv(estimator, X, y, k: int = 5, seed: int = 0, scalograms=None,
           folds: FoldAssignment | None = None) -> CVResult:
    """k-fold identification: fit a fresh clone per fold and score the held-out fold.

    Subject labels are encoded to ``0..C-1`` (sorted). Each clone gets a
    fold-specific ``random_state`` when it has one. Scalograms, when given,
    are sliced alongside ``X`` and passed through.
    """
    X = np.asarray(X)
    labels, y_enc = np.unique(np.asarray(y), return_inverse=True)
    folds = folds or make_folds(y_enc, k, seed)
    reports, histories, alphas = [], [], []
    for i, (train, test) in enumerate(folds.splits()):
        est = clone(estimator)
        if "random_state" in est.get_params():
            est.set_params(random_state=stage_seed(seed, f"fold-{i}"))
        try:
            est.fit(X[train], y_enc[train], **_fit_kwargs(scalograms, train))
            proba = _aligned_proba(est, X, scalograms, test, len(labels))
        except Exception as exc:
            raise FoldError(i, exc) from exc
        reports.append(compute_metrics(y_enc[test], proba.argmax(axis=1), proba, len(labels), labels))
        histories.append(getattr(est, "history_", None))
        if getattr(est, "fusion", None) == "attention":
            alphas.append(est.predict_alpha(X[test], **_fit_kwargs(scalograms, test)))
        logger.info("fold %d accuracy %.2f%%", i, reports[-1].accuracy)
    return CVResult(reports, folds, list(labels), histories, alphas)


# ---------------------------------------------------------------------------
# Session protocols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SessionProtocol:
    kind: str
    train_sessions: tuple
    test_sessions: tuple = ()
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in SESSION_KINDS:
            raise ProtocolError(f"unknown session protocol {self.kind!r}; choose from {SESSION_KINDS}")
        if not self.train_sessions:
            raise ProtocolError("at least one training session is required")
        if self.kind == "same" and len(self.train_sessions) != 1:
            raise ProtocolError("same-session protocol takes exactly one session")
        if self.kind == "cross":
            if not self.test_sessions:
                raise ProtocolError("cross-session protocol needs test sessions")
            if set(self.train_sessions) & set(self.test_sessions):
                raise ProtocolError("cross-session train and test sessions must be disjoint")
        if not 0.0 < self.test_fraction < 1.0:
            raise ProtocolError("test_fraction must lie in (0, 1)")


@dataclass
class SessionResult:
    protocol: SessionProtocol
    report: MetricsReport
    n_train: int
    n_test: int
    excluded_subjects: list


def holdout_split(subjects: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-subject seeded split; every subject with >= 2 instances lands in both parts."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for s in np.unique(subjects):
        idx = rng.permutation(np.flatnonzero(subjects == s))
        n_test = int(round(fraction * len(idx)))
        if len(idx) >= 2:
            n_test = min(max(n_test, 1), len(idx) - 1)
        else:
            n_test = 0
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def run_session_protocol(estimator, X, y, sessions, protocol: SessionProtocol, seed: int = 0,
                         scalograms=None) -> SessionResult:
    """Train/test under a same-, mixed- or cross-session protocol."""
    X, y, sessions = np.asarray(X), np.asarray(y), np.asarray(sessions)
    for s in protocol.train_sessions + protocol.test_sessions:
        if not np.any(sessions == s):
            raise ProtocolError(f"session {s!r} has no instances")
    pool = np.flatnonzero(np.isin(sessions, protocol.train_sessions))
    excluded: list = []
    if protocol.kind in ("same", "mixed"):
        tr, te = holdout_split(y[pool], protocol.test_fraction, stage_seed(seed, "session-split"))
        train, test = pool[tr], pool[te]
    else:
        train = pool
        test = np.flatnonzero(np.isin(sessions, protocol.test_sessions))
        known = set(np.unique(y[train]).tolist())
        keep = np.array([v in known for v in y[test].tolist()], dtype=bool)
        excluded = sorted(set(y[test][~keep].tolist()))
        if not keep.any():
            raise ProtocolError("no test subject appears in the training sessions")
        if excluded:
            logger.warning("excluded %d subject(s) absent from training sessions: %s", len(excluded), excluded)
        test = test[keep]
    labels, y_enc = np.unique(y[train], return_inverse=True)
    y_test = np.searchsorted(labels, y[test])
    est = clone(estimator)
    if "random_state" in est.get_params():
        est.set_params(random_state=stage_seed(seed, f"session-{protocol.kind}"))
    est.fit(X[train], y_enc, **_fit_kwargs(scalograms, train))
    proba = _aligned_proba(est, X, scalograms, test, len(labels))
    report = compute_metrics(y_test, proba.argmax(axis=1), proba, len(labels), list(labels))
    return SessionResult(protocol, report, len(train), len(test), excluded)
