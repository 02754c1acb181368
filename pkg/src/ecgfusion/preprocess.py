"""Savitzky-Golay smoothing."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array


@dataclass(frozen=True)
class SavGolConfig:
    """Window of ``2 * half_window + 1`` samples, polynomial degree ``poly_order``."""

    half_window: int = 5
    poly_order: int = 3

    def __post_init__(self):
        if int(self.half_window) != self.half_window or self.half_window < 1:
            raise ValueError(f"half_window must be a positive integer, got {self.half_window}")
        if int(self.poly_order) != self.poly_order or self.poly_order < 0:
            raise ValueError(f"poly_order must be a non-negative integer, got {self.poly_order}")
        if self.poly_order > 2 * self.half_window:
            raise ValueError(
                f"poly_order={self.poly_order} needs at least {self.poly_order + 1} points, "
                f"window has {self.window_length}"
            )

    @property
    def window_length(self) -> int:
        return 2 * self.half_window + 1

    @classmethod
    def from_window(cls, window_length: int, poly_order: int) -> "SavGolConfig":
        if window_length % 2 != 1:
            raise ValueError(f"window length must be odd, got {window_length}")
        return cls((window_length - 1) // 2, poly_order)


@lru_cache(maxsize=64)
def _coefficients(m: int, p: int) -> tuple[float, ...]:
    i = np.arange(-m, m + 1, dtype=np.float64)
    A = np.vander(i, p + 1, increasing=True)
    # the fitted value at the window center is a_0, i.e. row 0 of (A^T A)^{-1} A^T
    coef = np.linalg.solve(A.T @ A, A.T)[0]
    return tuple(coef)


def savgol_coefficients(config: SavGolConfig) -> np.ndarray:
    """Smoothing weights for center evaluation of the least-squares polynomial fit."""
    return np.array(_coefficients(config.half_window, config.poly_order))


def savgol_filter(signal, config: SavGolConfig = SavGolConfig()) -> np.ndarray:
    """Smooth ``signal`` with mirrored (reflect) boundaries; output length equals input."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("savgol_filter expects a 1-D signal")
    m = config.half_window
    if x.size < config.window_length:
        raise ValueError(f"signal of {x.size} samples is shorter than the window ({config.window_length})")
    w = savgol_coefficients(config)
    padded = np.pad(x, m, mode="reflect")
    # weights are symmetric, so correlation and convolution coincide
    return np.convolve(padded, w[::-1], mode="valid")


class SavitzkyGolaySmoother(TransformerMixin, BaseEstimator):
    """Row-wise Savitzky-Golay smoothing of a ``(n_signals, n_samples)`` array.

    Parameters
    ----------
    half_window : int, default=5
        Window of ``2 * half_window + 1`` samples.
    poly_order : int, default=3
        Degree of the fitted polynomial.
    """

    def __init__(self, half_window: int = 5, poly_order: int = 3):
        self.half_window = half_window
        self.poly_order = poly_order

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2 * self.half_window + 1)
        self.config_ = SavGolConfig(self.half_window, self.poly_order)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, ensure_min_features=2 * self.half_window + 1)
        config = SavGolConfig(self.half_window, self.poly_order)
        return np.vstack([savgol_filter(row, config) for row in X])
