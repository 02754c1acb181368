import logging
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import BaseEstimator, ClassifierMixin

from ecgfusion.ingest import SyntheticEcgSpec, synth_ecg, synthetic_cohort, warp_spec
from ecgfusion.protocol import (FoldError, ProtocolError, SessionProtocol, compute_metrics, holdout_split,
                                make_folds, roc_curve, run_cv, run_session_protocol, trapezoid_auc)
from ecgfusion.segment import segment_records, segments_to_arrays


# ---------------------------------------------------------------------------
# estimator stubs
# ---------------------------------------------------------------------------

class OracleStub(ClassifierMixin, BaseEstimator):
    """Reads the encoded label from column 0."""

    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, X, y):
        self.classes_ = np.unique(y)
        return self

    def predict_proba(self, X):
        return np.eye(len(self.classes_))[np.searchsorted(self.classes_, X[:, 0].astype(int))]


class RandomStub(ClassifierMixin, BaseEstimator):
    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, X, y):
        self.classes_ = np.unique(y)
        return self

    def predict_proba(self, X):
        rng = np.random.default_rng(self.random_state)
        return np.eye(len(self.classes_))[rng.integers(0, len(self.classes_), len(X))]


class FailingStub(OracleStub):
    def fit(self, X, y):
        raise FloatingPointError("diverged")


class Centroid(ClassifierMixin, BaseEstimator):
    """Nearest class mean with softmax(-squared distance) scores."""

    seen: list = []

    def fit(self, X, y):
        Centroid.seen.append(X)
        self.classes_ = np.unique(y)
        self.centroids_ = np.array([X[y == c].mean(axis=0) for c in self.classes_])
        return self

    def predict_proba(self, X):
        d = ((X[:, None, :] - self.centroids_[None]) ** 2).sum(-1)
        z = -d - (-d).max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

def test_two_by_ten_gives_two_per_subject_per_fold():
    subjects = np.repeat(["a", "b"], 10)
    fa = make_folds(subjects, 5, seed=1)
    for i in range(5):
        members = subjects[fa.fold == i]
        assert len(members) == 4 and list(np.unique(members, return_counts=True)[1]) == [2, 2]


@given(st.lists(st.integers(5, 17), min_size=2, max_size=8), st.integers(2, 5), st.integers(0, 999))
def test_folds_partition_and_stratify(counts, k, seed):
    subjects = np.repeat(np.arange(len(counts)), counts)
    fa = make_folds(subjects, k, seed)
    test_union = np.concatenate([te for _, te in fa.splits()])
    assert sorted(test_union.tolist()) == list(range(len(subjects)))
    for train, test in fa.splits():
        assert not set(train) & set(test)
        assert set(subjects[train]) == set(subjects)
    for s, n in enumerate(counts):
        per_fold = np.bincount(fa.fold[subjects == s], minlength=k)
        assert per_fold.max() - per_fold.min() <= 1
    assert np.ptp(fa.fold_sizes()) <= 1
    again = make_folds(subjects, k, seed)
    assert np.array_equal(again.fold, fa.fold)


def test_small_subject_dropped():
    subjects = np.array(["a"] * 6 + ["b"] * 6 + ["c"] * 3)
    with pytest.warns(UserWarning, match="dropped 1"):
        fa = make_folds(subjects, 5)
    assert fa.dropped_subjects == ["c"]
    assert np.all(fa.fold[subjects == "c"] == -1)
    assert all(not set(np.flatnonzero(subjects == "c")) & set(tr) for tr, _ in fa.splits())
    with pytest.raises(ProtocolError):
        make_folds(subjects, 1)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_metric_example():
    r = compute_metrics([0, 0, 1, 1], [0, 1, 1, 1])
    assert r.accuracy == 75.0
    assert r.precision == pytest.approx(100 * (1 + Fraction(2, 3)) / 2, abs=1e-12)
    assert r.recall == 75.0
    assert r.confusion.tolist() == [[1, 1], [0, 2]]


def test_identity_predictions():
    y = np.array([0, 1, 2, 2, 1, 0, 3])
    r = compute_metrics(y, y, np.eye(4)[y])
    assert (r.accuracy, r.precision, r.recall, r.f1, r.macro_auc) == (100.0, 100.0, 100.0, 100.0, 1.0)


def brute_force(y_true, y_pred, C):
    """Counts per class by explicit loops, ratios in exact arithmetic."""
    prec, rec, f1 = [], [], []
    correct = 0
    for t, p in zip(y_true, y_pred):
        correct += t == p
    for c in range(C):
        tp = fp = fn = 0
        for t, p in zip(y_true, y_pred):
            if p == c and t == c:
                tp += 1
            elif p == c:
                fp += 1
            elif t == c:
                fn += 1
        pc = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        rc = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        prec.append(pc)
        rec.append(rc)
        f1.append(2 * pc * rc / (pc + rc) if pc + rc else Fraction(0))
    mean = lambda v: 100 * sum(v) / C
    return 100 * Fraction(correct, len(y_true)), mean(prec), mean(rec), mean(f1)


def test_metrics_match_brute_force_on_1000_draws():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        C = int(rng.integers(2, 11))
        n = int(rng.integers(1, 60))
        y_true, y_pred = rng.integers(0, C, n), rng.integers(0, C, n)
        if rng.random() < 0.5:
            y_pred = np.where(rng.random(n) < 0.6, y_true, y_pred)
        r = compute_metrics(y_true, y_pred, n_classes=C)
        expect = brute_force(y_true.tolist(), y_pred.tolist(), C)
        for got, want in zip((r.accuracy, r.precision, r.recall, r.f1), expect):
            assert abs(got - float(want)) <= 1e-12
        conf = np.zeros((C, C), int)
        for t, p in zip(y_true, y_pred):
            conf[t, p] += 1
        assert np.array_equal(r.confusion, conf)
        assert np.array_equal(r.confusion.sum(axis=1), np.bincount(y_true, minlength=C))


def pairwise_auc(pos, score):
    """Probability that a positive outscores a negative, ties counted half."""
    p, q = score[pos], score[~pos]
    wins = (p[:, None] > q[None, :]).sum() + 0.5 * (p[:, None] == q[None, :]).sum()
    return wins / (len(p) * len(q))


@given(st.integers(0, 2**32 - 1), st.integers(4, 60), st.booleans())
def test_auc_matches_pair_counting(seed, n, coarse):
    rng = np.random.default_rng(seed)
    pos = rng.random(n) < 0.4
    pos[0], pos[1] = True, False
    score = rng.random(n)
    if coarse:
        score = np.round(score, 1)  # many ties
    fpr, tpr = roc_curve(pos, score)
    assert fpr[0] == tpr[0] == 0 and fpr[-1] == tpr[-1] == 1
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
    assert trapezoid_auc(fpr, tpr) == pytest.approx(pairwise_auc(pos, score), abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_auc_invariant_under_monotone_transforms(seed):
    rng = np.random.default_rng(seed)
    pos = rng.random(40) < 0.5
    pos[:2] = True, False
    s = rng.random(40)
    base = trapezoid_auc(*roc_curve(pos, s))
    for f in (lambda v: 3 * v - 7, np.exp, lambda v: v ** 3, lambda v: np.log(v + 1e-3), np.arctan):
        assert trapezoid_auc(*roc_curve(pos, f(s))) == base


def test_constant_scores_give_half_and_absent_class(caplog):
    y = np.array([0, 1, 2, 0, 1, 2])
    r = compute_metrics(y, y, np.full((6, 3), 1 / 3))
    np.testing.assert_array_equal(r.auc, [0.5, 0.5, 0.5])
    with caplog.at_level(logging.WARNING):
        r = compute_metrics([0, 0, 1], [0, 2, 1], np.eye(3)[[0, 2, 1]])
    assert r.absent_classes == [2] and r.per_class_recall[2] == 0 and np.isnan(r.auc[2])
    assert r.macro_auc == pytest.approx(np.mean(r.auc[:2]))
    assert "absent" in caplog.text


@pytest.mark.parametrize("args", [([0, 1], [0]), ([], []), ([0, 1], [0, 1], [[0.5, 0.6], [1, 0]]),
                                  ([0, 3], [0, 1], None, 2)])
def test_metric_errors(args):
    with pytest.raises(ValueError):
        compute_metrics(*args)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

def labelled(n_per=25, C=4, seed=0):
    rng = np.random.default_rng(seed)
    y_idx = np.repeat(np.arange(C), n_per)
    X = np.column_stack([y_idx, rng.normal(size=(len(y_idx), 3))])
    return X, np.array([f"subject-{i}" for i in y_idx])


def test_cv_perfect_stub():
    X, y = labelled()
    res = run_cv(OracleStub(), X, y, k=5, seed=3)
    assert len(res.folds) == 5
    for r in res.folds:
        assert (r.accuracy, r.precision, r.recall, r.f1, r.macro_auc) == (100.0, 100.0, 100.0, 100.0, 1.0)
    assert res.summary()["accuracy"] == (100.0, 0.0)
    assert res.labels == sorted(set(y))


def test_cv_random_stub_near_chance():
    X, y = labelled(n_per=100)
    res = run_cv(RandomStub(), X, y, k=5, seed=0)
    n = len(y)
    correct = sum(r.confusion.trace() for r in res.folds)
    half_width = 2.5758 * np.sqrt(0.25 * 0.75 / n)
    assert abs(correct / n - 0.25) <= half_width
    acc = res.values("accuracy")
    assert res.mean("accuracy") == pytest.approx(acc.sum() / 5, abs=1e-12)
    assert res.std("accuracy") == pytest.approx(np.sqrt(np.mean((acc - acc.mean()) ** 2)), abs=1e-12)


def test_cv_fold_error_carries_index():
    X, y = labelled()
    with pytest.raises(FoldError, match="fold 0") as err:
        run_cv(FailingStub(), X, y, k=5)
    assert err.value.fold == 0


# ---------------------------------------------------------------------------
# session protocols
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def two_sessions():
    records = synthetic_cohort(4, duration_s=20, sessions=("S1", "S2"), seed=5)
    segs, _ = segment_records(records, "qrs", 108, max_instances=15)
    return segments_to_arrays(segs)


def test_same_session_uses_one_session(two_sessions):
    X, y, sessions = two_sessions
    tagged = np.column_stack([X, (sessions == "S2").astype(float)])
    Centroid.seen.clear()
    res = run_session_protocol(Centroid(), tagged, y, sessions, SessionProtocol("same", ("S1",)))
    assert np.all(Centroid.seen[-1][:, -1] == 0)
    assert res.n_train + res.n_test == np.sum(sessions == "S1")
    assert res.n_test == pytest.approx(0.2 * np.sum(sessions == "S1"), abs=4)
    mixed = run_session_protocol(Centroid(), tagged, y, sessions, SessionProtocol("mixed", ("S1", "S2")))
    assert set(Centroid.seen[-1][:, -1]) == {0.0, 1.0}
    assert mixed.n_train + mixed.n_test == len(y)


def test_cross_with_identical_sessions_equals_same(two_sessions):
    X, y, sessions = two_sessions
    s1 = sessions == "S1"
    Xd = np.concatenate([X[s1], X[s1]])
    yd = np.concatenate([y[s1], y[s1]])
    sd = np.array(["S1"] * s1.sum() + ["S2"] * s1.sum())
    cross = run_session_protocol(Centroid(), Xd, yd, sd, SessionProtocol("cross", ("S1",), ("S2",)))
    same = run_session_protocol(Centroid(), Xd, yd, sd, SessionProtocol("same", ("S1",)))
    assert cross.report.accuracy == same.report.accuracy == 100.0
    assert cross.n_train == cross.n_test == s1.sum()


def close_cohort(seed, warp):
    """Eight subjects that differ only by a 3% step in R amplitude."""
    records = []
    for i in range(8):
        spec = SyntheticEcgSpec(heart_rate_bpm=70, noise_std_mv=0.03, seed=1000 * seed + i)
        spec = spec.with_wave("R", amplitude=1.0 + 0.03 * i)
        for j, session in enumerate(("S1", "S2")):
            s = SyntheticEcgSpec(spec.heart_rate_bpm, spec.waves, spec.noise_std_mv, spec.seed + 7919 * j)
            if j and warp:
                s = warp_spec(s, 1.0 + warp)
            records.append(synth_ecg(s, 30, 360, f"s{i}", session)[0])
    # fixed-duration windows: beat-normalized PT windows would undo a uniform warp
    segs, _ = segment_records(records, "qrs", 108)
    return segments_to_arrays(segs)


@pytest.mark.parametrize("seed", range(5))
def test_cross_session_warp_degrades(seed):
    protocol = SessionProtocol("cross", ("S1",), ("S2",))
    accs = []
    for warp in (0.0, 0.05):
        X, y, sessions = close_cohort(seed, warp)
        accs.append(run_session_protocol(Centroid(), X, y, sessions, protocol, seed=seed).report.accuracy)
    assert accs[1] < accs[0]


def test_cross_excludes_unseen_subjects(two_sessions, caplog):
    X, y, sessions = two_sessions
    keep = ~((y == "subj03") & (sessions == "S1"))
    with caplog.at_level(logging.WARNING):
        res = run_session_protocol(Centroid(), X[keep], y[keep], sessions[keep],
                                   SessionProtocol("cross", ("S1",), ("S2",)))
    assert res.excluded_subjects == ["subj03"]
    assert res.n_test == np.sum((sessions == "S2") & (y != "subj03"))
    assert "subj03" in caplog.text


def test_session_errors(two_sessions):
    X, y, sessions = two_sessions
    with pytest.raises(ProtocolError, match="no instances"):
        run_session_protocol(Centroid(), X, y, sessions, SessionProtocol("same", ("S9",)))
    only_a = sessions == "S1"
    relabel = np.where(only_a, y, np.char.add(y.astype(str), "-new"))
    with pytest.raises(ProtocolError, match="no test subject"):
        run_session_protocol(Centroid(), X, relabel, sessions, SessionProtocol("cross", ("S1",), ("S2",)))
    for bad in [("nearby", ("S1",)), ("cross", ("S1",)), ("cross", ("S1",), ("S1",)), ("same", ("S1", "S2")),
                ("same", ())]:
        with pytest.raises(ProtocolError):
            SessionProtocol(*bad)


@settings(max_examples=30)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=6), st.floats(0.1, 0.5), st.integers(0, 99))
def test_holdout_split_per_subject(counts, fraction, seed):
    subjects = np.repeat(np.arange(len(counts)), counts)
    train, test = holdout_split(subjects, fraction, seed)
    assert sorted(np.r_[train, test].tolist()) == list(range(len(subjects)))
    for s, n in enumerate(counts):
        if n >= 2:
            assert s in subjects[train] and s in subjects[test]
