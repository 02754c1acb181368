"""Scikit-learn style classifier wrapping the two branches and a fusion strategy."""

from __future__ import annotations

import logging
import os
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import ShuffleSplit, StratifiedShuffleSplit
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .fusion import DEFAULT_LAMBDA_GRID, FUSION_MODES, FusionNetwork, LambdaSweep, fuse_scores, sweep_lambda
from .nn import functional as F
from .nn.branches import Branch1DConfig, Branch2DConfig
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.train import History, TrainConfig, evaluate, fit as fit_network
from .repro import stage_seed
from .scalogram import CwtPlan, scalogram_batch

logger = logging.getLogger(__name__)


class EcgIdentifier(ClassifierMixin, BaseEstimator):
    """Closed-set subject identifier over fixed-length heartbeat segments.

    ``fusion`` selects the model: ``temporal`` (1D branch only), ``spectral``
    (2D branch on CWT scalograms only), ``feature`` (concatenated embeddings),
    ``score`` (two independently trained heads blended with weight ``lam``
    on the temporal head) or ``attention`` (learned per-instance gate).

    Scalograms are computed from ``X`` with the CWT settings unless passed
    explicitly as ``scalograms=`` to ``fit``/``predict*``.
    """

    def __init__(self, fusion="attention", fs=360.0, f_min=0.5, f_max=100.0, n_scales=64, img_size=64,
                 log_power=False, kernel_sizes=(9, 19, 39), channels_1d=8, bottleneck_1d=8, depth_1d=2,
                 embedding_1d=512, n_blocks_2d=4, channels_2d=8, embedding_2d=512, latent_dim=256,
                 attention_dim=128, lam=0.9, learning_rate=1e-3, batch_size=16, max_epochs=50,
                 patience=10, dropout=0.5, validation_fraction=0.1, random_state=0, n_jobs=1):
        self.fusion = fusion
        self.fs = fs
        self.f_min = f_min
        self.f_max = f_max
        self.n_scales = n_scales
        self.img_size = img_size
        self.log_power = log_power
        self.kernel_sizes = kernel_sizes
        self.channels_1d = channels_1d
        self.bottleneck_1d = bottleneck_1d
        self.depth_1d = depth_1d
        self.embedding_1d = embedding_1d
        self.n_blocks_2d = n_blocks_2d
        self.channels_2d = channels_2d
        self.embedding_2d = embedding_2d
        self.latent_dim = latent_dim
        self.attention_dim = attention_dim
        self.lam = lam
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.dropout = dropout
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.n_jobs = n_jobs

    # -- configuration --------------------------------------------------
    def _validate_params(self) -> None:
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion: unknown mode {self.fusion!r}; choose from {FUSION_MODES}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam: must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction: must lie in [0, 1), got {self.validation_fraction}")

    def _needs(self) -> tuple[bool, bool]:
        return self.fusion != "spectral", self.fusion != "temporal"

    def cwt_plan(self) -> CwtPlan:
        return CwtPlan(fs=float(self.fs), f_min=float(self.f_min), f_max=float(self.f_max),
                       n_scales=int(self.n_scales))

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, embedding_dim=self.latent_dim,
                           dropout=self.dropout, patience=self.patience, seed=seed)

    def _branch_configs(self, length: int) -> tuple[Branch1DConfig, Branch2DConfig]:
        c1 = Branch1DConfig(input_length=length, kernel_sizes=tuple(self.kernel_sizes),
                            channels=self.channels_1d, bottleneck=self.bottleneck_1d,
                            depth=self.depth_1d, embedding_dim=self.embedding_1d)
        c2 = Branch2DConfig(image_size=(self.img_size, self.img_size), n_blocks=self.n_blocks_2d,
                            channels=self.channels_2d, embedding_dim=self.embedding_2d)
        return c1, c2

    def _build(self, mode: str, n_classes: int, length: int, seed: int) -> FusionNetwork:
        c1, c2 = self._branch_configs(length)
        return FusionNetwork(mode, n_classes, c1, c2, latent_dim=self.latent_dim,
                             attention_dim=self.attention_dim, dropout=self.dropout, seed=seed)

    # -- data -------------------------------------------------------------
    def compute_scalograms(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        return scalogram_batch(X, self.cwt_plan(), (self.img_size, self.img_size),
                               self.log_power, self.n_jobs)

    def _inputs(self, X, scalograms):
        need1, need2 = self._needs()
        X = check_array(X, dtype=np.float64)
        if need2:
            if scalograms is None:
                scalograms = self.compute_scalograms(X)
            scalograms = np.asarray(scalograms, dtype=np.float64)
            if scalograms.shape != (X.shape[0], self.img_size, self.img_size):
                raise ValueError(f"scalograms must have shape {(X.shape[0], self.img_size, self.img_size)}, "
                                 f"got {scalograms.shape}")
        else:
            scalograms = None
        return (X if need1 else None, scalograms)

    def _split(self, y: np.ndarray, seed: int):
        n = len(y)
        n_val = int(round(self.validation_fraction * n))
        if n_val == 0:
            return np.arange(n), None
        try:
            splitter = StratifiedShuffleSplit(n_splits=1, test_size=n_val, random_state=seed)
            train, val = next(splitter.split(np.zeros(n), y))
        except ValueError:
            splitter = ShuffleSplit(n_splits=1, test_size=n_val, random_state=seed)
            train, val = next(splitter.split(np.zeros(n)))
        return np.sort(train), np.sort(val)

    # -- fitting ----------------------------------------------------------
    def fit(self, X, y, scalograms=None):
        self._validate_params()
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("training data must contain at least 2 subjects")
        self.n_features_in_ = X.shape[1]
        inputs = self._inputs(X, scalograms)
        seed = int(self.random_state or 0)
        train_idx, val_idx = self._split(y_enc, stage_seed(seed, "validation-split"))
        take = lambda idx: tuple(None if a is None else a[idx] for a in inputs)
        val_inputs = take(val_idx) if val_idx is not None else None
        y_val = y_enc[val_idx] if val_idx is not None else None
        modes = ("temporal", "spectral") if self.fusion == "score" else (self.fusion,)
        self.networks_, self.history_ = {}, {}
        for mode in modes:
            net = self._build(mode, len(self.classes_), X.shape[1], stage_seed(seed, f"init-{mode}"))
            hist = fit_network(net, take(train_idx), y_enc[train_idx],
                               self.train_config(stage_seed(seed, f"train-{mode}")), val_inputs, y_val)
            logger.info("%s: %d epochs, best epoch %d", mode, hist.epochs, hist.best_epoch)
            self.networks_[mode] = net
            self.history_[mode] = hist
        return self

    # -- inference --------------------------------------------------------
    def _proba(self, mode: str, inputs) -> np.ndarray:
        n = len(inputs[0]) if inputs[0] is not None else len(inputs[1])
        _, _, logits = evaluate(self.networks_[mode], inputs, np.zeros(n, dtype=np.int64))
        return F.softmax(logits)

    def unimodal_proba(self, X, scalograms=None) -> tuple[np.ndarray, np.ndarray]:
        """Class probabilities of the temporal and spectral heads (score fusion only)."""
        check_is_fitted(self, "networks_")
        if self.fusion != "score":
            raise ValueError("unimodal_proba requires fusion='score'")
        inputs = self._inputs(X, scalograms)
        return self._proba("temporal", inputs), self._proba("spectral", inputs)

    def predict_proba(self, X, scalograms=None) -> np.ndarray:
        check_is_fitted(self, "networks_")
        if self.fusion == "score":
            s1, s2 = self.unimodal_proba(X, scalograms)
            return fuse_scores(s1, s2, float(self.lam))
        return self._proba(self.fusion, self._inputs(X, scalograms))

    def predict(self, X, scalograms=None) -> np.ndarray:
        check_is_fitted(self, "networks_")
        return self.classes_[self.predict_proba(X, scalograms).argmax(axis=1)]

    def score(self, X, y, sample_weight=None, scalograms=None) -> float:
        pred = self.predict(X, scalograms)
        return float(np.average(pred == np.asarray(y), weights=sample_weight))

    def predict_alpha(self, X, scalograms=None) -> np.ndarray:
        """Per-instance attention weight on the temporal branch."""
        check_is_fitted(self, "networks_")
        if self.fusion != "attention":
            raise ValueError("predict_alpha requires fusion='attention'")
        net = self.networks_["attention"]
        x1, x2 = self._inputs(X, scalograms)
        net.eval()
        alphas = []
        for start in range(0, len(x1), 64):
            net.features(x1[start:start + 64], x2[start:start + 64])
            alphas.append(net.last_alpha)
        return np.concatenate(alphas) if alphas else np.zeros(0)

    def encode_labels(self, y) -> np.ndarray:
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.all(self.classes_[idx] == y):
            raise ValueError("labels contain subjects not seen during fit")
        return idx

    def sweep_lambda(self, X, y, grid: Sequence[float] = DEFAULT_LAMBDA_GRID, scalograms=None) -> LambdaSweep:
        """Score-fusion accuracy for each weight in ``grid`` on ``(X, y)``."""
        if len(y) == 0:
            raise ValueError("empty evaluation set")
        s1, s2 = self.unimodal_proba(X, scalograms)
        return sweep_lambda(s1, s2, self.encode_labels(y), grid)

    # -- persistence --------------------------------------------------------
    def save(self, path: str | os.PathLike) -> None:
        check_is_fitted(self, "networks_")
        arrays = {}
        for mode, net in self.networks_.items():
            for name, value in net.state_dict().items():
                arrays[f"{mode}/{name}"] = value
        config = {"params": _plain(self.get_params()), "classes": self.classes_.tolist(),
                  "n_features_in": int(self.n_features_in_)}
        save_checkpoint(path, arrays, config)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EcgIdentifier":
        arrays, config = load_checkpoint(path)
        params = config["params"]
        params["kernel_sizes"] = tuple(params["kernel_sizes"])
        est = cls(**params)
        est.classes_ = np.asarray(config["classes"])
        est.n_features_in_ = config["n_features_in"]
        modes = ("temporal", "spectral") if est.fusion == "score" else (est.fusion,)
        est.networks_, est.history_ = {}, {}
        for mode in modes:
            net = est._build(mode, len(est.classes_), est.n_features_in_, 0)
            prefix = f"{mode}/"
            net.load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
            net.eval()
            est.networks_[mode] = net
            est.history_[mode] = History()
        return est


def _plain(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out
