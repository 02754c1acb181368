"""Feature-level, score-level and attention-guided fusion of the two branches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .nn import functional as F
from .nn.branches import Branch1D, Branch1DConfig, Branch2D, Branch2DConfig
from .nn.layers import Dense, Dropout, Module
from .nn.tensor import Parameter, Tensor

FUSION_MODES = ("temporal", "spectral", "feature", "score", "attention")
DEFAULT_LAMBDA_GRID = tuple(np.round(np.arange(1, 10) / 10, 10))


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "attention"
    lam: float | None = None
    latent_dim: int = 256
    attention_dim: int = 128

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}; choose from {FUSION_MODES}")
        if (self.lam is not None) != (self.mode == "score"):
            raise ValueError("lam must be given for score fusion and only for score fusion")
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if self.latent_dim <= 0 or self.attention_dim <= 0:
            raise ValueError("latent_dim and attention_dim must be positive")


# ---------------------------------------------------------------------------
# Reference (numpy) fusion operators
# ---------------------------------------------------------------------------

def fuse_features(f1, f2) -> np.ndarray:
    """Concatenate temporal and spectral features along the last axis."""
    f1, f2 = np.asarray(f1, dtype=np.float64), np.asarray(f2, dtype=np.float64)
    if f1.shape[-1] == 0 or f2.shape[-1] == 0:
        raise ValueError("cannot fuse an empty feature vector")
    if not (np.all(np.isfinite(f1)) and np.all(np.isfinite(f2))):
        raise ValueError("features must be finite")
    return np.concatenate([f1, f2], axis=-1)


def _check_simplex(s: np.ndarray, name: str, tol: float = 1e-6) -> None:
    if np.any(s < -tol) or np.any(np.abs(s.sum(axis=-1) - 1.0) > tol):
        raise ValueError(f"{name} is not a probability vector (non-negative, summing to 1)")


def fuse_scores(s1, s2, lam: float) -> np.ndarray:
    """``lam * s1 + (1 - lam) * s2`` for class-probability vectors (or rows)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    s1, s2 = np.asarray(s1, dtype=np.float64), np.asarray(s2, dtype=np.float64)
    if s1.shape != s2.shape:
        raise ValueError(f"score shapes differ: {s1.shape} vs {s2.shape}")
    _check_simplex(s1, "s1")
    _check_simplex(s2, "s2")
    return lam * s1 + (1.0 - lam) * s2


@dataclass
class AttentionHeadParams:
    """Projection and gating parameters; weights are stored ``(out, in)``."""

    W1: np.ndarray      # (d, d1)
    b1: np.ndarray      # (d,)
    W2: np.ndarray      # (d, d2)
    b2: np.ndarray      # (d,)
    W_attn: np.ndarray  # (d_attn, 2d)
    b_attn: np.ndarray  # (d_attn,)
    w_attn: np.ndarray  # (d_attn,)
    c: float

    @classmethod
    def random(cls, d1: int, d2: int, d: int = 256, d_attn: int = 128,
               rng: np.random.Generator | None = None, scale: float = 1.0) -> "AttentionHeadParams":
        rng = rng or np.random.default_rng()
        r = lambda *shape: rng.normal(0.0, scale, shape) / np.sqrt(shape[-1] if len(shape) > 1 else 1)
        return cls(r(d, d1), r(d), r(d, d2), r(d), r(d_attn, 2 * d), r(d_attn), r(d_attn),
                   float(rng.normal(0.0, scale)))

    @classmethod
    def zeros(cls, d1: int, d2: int, d: int = 256, d_attn: int = 128) -> "AttentionHeadParams":
        z = np.zeros
        return cls(z((d, d1)), z(d), z((d, d2)), z(d), z((d_attn, 2 * d)), z(d_attn), z(d_attn), 0.0)

    def check(self) -> None:
        d, d1 = self.W1.shape
        d_attn = self.W_attn.shape[0]
        expected = {
            "b1": (d,), "b2": (d,), "W_attn": (d_attn, 2 * d), "b_attn": (d_attn,), "w_attn": (d_attn,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.W2.shape[0] != d:
            raise ValueError(f"W2 must have {d} rows, got {self.W2.shape[0]}")


def attention_weight(f1_hat, f2_hat, params: AttentionHeadParams) -> tuple[np.ndarray, np.ndarray]:
    """Gate ``alpha = sigmoid(w_attn . tanh(W_attn [f1_hat; f2_hat] + b_attn) + c)``.

    Works on single vectors or on ``(N, d)`` batches; returns ``(alpha, h)``.
    """
    z = np.concatenate([np.asarray(f1_hat, float), np.asarray(f2_hat, float)], axis=-1)
    if z.shape[-1] != params.W_attn.shape[1]:
        raise ValueError(f"projected features have width {z.shape[-1]}, W_attn expects {params.W_attn.shape[1]}")
    h = np.tanh(z @ params.W_attn.T + params.b_attn)
    alpha = expit(h @ params.w_attn + params.c)
    return alpha, h


def project(f1, f2, params: AttentionHeadParams) -> tuple[np.ndarray, np.ndarray]:
    f1, f2 = np.asarray(f1, float), np.asarray(f2, float)
    if f1.shape[-1] != params.W1.shape[1] or f2.shape[-1] != params.W2.shape[1]:
        raise ValueError(f"feature widths ({f1.shape[-1]}, {f2.shape[-1]}) do not match "
                         f"W1/W2 inputs ({params.W1.shape[1]}, {params.W2.shape[1]})")
    return f1 @ params.W1.T + params.b1, f2 @ params.W2.T + params.b2


def attention_fuse(f1, f2, params: AttentionHeadParams) -> tuple[np.ndarray, np.ndarray]:
    """Project both features to the shared latent space and blend them by ``alpha``."""
    params.check()
    f1_hat, f2_hat = project(f1, f2, params)
    alpha, _ = attention_weight(f1_hat, f2_hat, params)
    a = np.expand_dims(alpha, -1)
    return a * f1_hat + (1.0 - a) * f2_hat, alpha


# ---------------------------------------------------------------------------
# Trainable modules
# ---------------------------------------------------------------------------

class AttentionFusion(Module):
    """Differentiable attention head with the same parameters as :class:`AttentionHeadParams`."""

    def __init__(self, d1: int, d2: int, latent_dim: int = 256, attention_dim: int = 128,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        u = lambda fan_in, shape: rng.uniform(-1, 1, shape) / np.sqrt(fan_in)
        d, da = latent_dim, attention_dim
        self.W1 = Parameter(u(d1, (d, d1)), "W1")
        self.b1 = Parameter(u(d1, (d,)), "b1")
        self.W2 = Parameter(u(d2, (d, d2)), "W2")
        self.b2 = Parameter(u(d2, (d,)), "b2")
        self.W_attn = Parameter(u(2 * d, (da, 2 * d)), "W_attn")
        self.b_attn = Parameter(u(2 * d, (da,)), "b_attn")
        self.w_attn = Parameter(u(da, (da,)), "w_attn")
        self.c = Parameter(np.zeros(()), "c")

    def as_params(self) -> AttentionHeadParams:
        return AttentionHeadParams(self.W1.data.copy(), self.b1.data.copy(), self.W2.data.copy(),
                                   self.b2.data.copy(), self.W_attn.data.copy(), self.b_attn.data.copy(),
                                   self.w_attn.data.copy(), float(self.c.data))

    def load_params(self, p: AttentionHeadParams) -> None:
        p.check()
        for name in ("W1", "b1", "W2", "b2", "W_attn", "b_attn", "w_attn"):
            getattr(self, name).assign(getattr(p, name))
        self.c.assign(np.asarray(p.c))

    def forward(self, f1, f2) -> tuple[Tensor, Tensor]:
        f1_hat = F.linear(f1, self.W1, self.b1)
        f2_hat = F.linear(f2, self.W2, self.b2)
        h = F.tanh(F.linear(F.concat([f1_hat, f2_hat], axis=-1), self.W_attn, self.b_attn))
        alpha = F.sigmoid(F.matmul(h, self.w_attn) + self.c)
        a = F.reshape(alpha, alpha.shape + (1,))
        fused = a * f1_hat + (1.0 - a) * f2_hat
        return fused, alpha


class FusionNetwork(Module):
    """Branches, optional fusion head, dropout and a dense softmax classifier.

    ``mode`` is ``temporal`` or ``spectral`` (a single branch), ``feature``
    (concatenation) or ``attention``.
    """

    def __init__(self, mode: str, n_classes: int, cfg1d: Branch1DConfig, cfg2d: Branch2DConfig,
                 latent_dim: int = 256, attention_dim: int = 128, dropout: float = 0.5, seed: int = 0):
        if mode not in ("temporal", "spectral", "feature", "attention"):
            raise ValueError(f"FusionNetwork mode must be temporal/spectral/feature/attention, got {mode!r}")
        rng = np.random.default_rng(seed)
        self.mode = mode
        self.branch1d = Branch1D(cfg1d, rng) if mode != "spectral" else None
        self.branch2d = Branch2D(cfg2d, rng) if mode != "temporal" else None
        self.head = None
        if mode == "attention":
            self.head = AttentionFusion(cfg1d.embedding_dim, cfg2d.embedding_dim, latent_dim,
                                        attention_dim, rng)
            width = latent_dim
        elif mode == "feature":
            width = cfg1d.embedding_dim + cfg2d.embedding_dim
        elif mode == "temporal":
            width = cfg1d.embedding_dim
        else:
            width = cfg2d.embedding_dim
        self.dropout = Dropout(dropout, seed=int(rng.integers(2**31)))
        self.classifier = Dense(width, n_classes, rng)
        self.last_alpha: np.ndarray | None = None

    def features(self, x1=None, x2=None) -> Tensor:
        if self.mode == "temporal":
            return self.branch1d(x1)
        if self.mode == "spectral":
            return self.branch2d(x2)
        f1, f2 = self.branch1d(x1), self.branch2d(x2)
        if self.mode == "feature":
            return F.concat([f1, f2], axis=-1)
        fused, alpha = self.head(f1, f2)
        self.last_alpha = alpha.data.copy()
        return fused

    def forward(self, x1=None, x2=None) -> Tensor:
        return self.classifier(self.dropout(self.features(x1, x2)))


# ---------------------------------------------------------------------------
# Score-fusion sweep
# ---------------------------------------------------------------------------

@dataclass
class LambdaSweep:
    grid: list[float]
    accuracy: list[float]

    @property
    def best_lambda(self) -> float:
        best = max(self.accuracy)
        # ties go to the larger lambda
        return max(lam for lam, acc in zip(self.grid, self.accuracy) if acc == best)

    @property
    def best_accuracy(self) -> float:
        return max(self.accuracy)

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.grid, self.accuracy))


def sweep_lambda(scores_1d, scores_2d, y_true, grid: Sequence[float] = DEFAULT_LAMBDA_GRID) -> LambdaSweep:
    """Accuracy (percent) of score fusion for each ``lam`` in ``grid``.

    ``scores_1d``/``scores_2d`` are class-probability rows from the two
    independently trained heads; ``y_true`` holds column indices.
    """
    s1, s2 = np.asarray(scores_1d, float), np.asarray(scores_2d, float)
    y = np.asarray(y_true)
    if y.size == 0:
        raise ValueError("empty evaluation set")
    acc = []
    for lam in grid:
        pred = fuse_scores(s1, s2, float(lam)).argmax(axis=1)
        acc.append(100.0 * float(np.mean(pred == y)))
    return LambdaSweep([float(g) for g in grid], acc)


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive stop) or a comma list."""
    if ":" in text:
        start, stop, step = (float(t) for t in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(t) for t in text.split(",") if t.strip()]
