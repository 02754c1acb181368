"""Morlet continuous wavelet transform and scalogram images."""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

MORLET_OMEGA0 = 5.0
SUPPORT_CUTOFF = 1e-8
# |psi(t)| < 1e-8 beyond this many scale units
SUPPORT_HALF_WIDTH = math.sqrt(-2.0 * math.log(SUPPORT_CUTOFF))
MAX_SUPPORT_RATIO = 8


class CwtSupportWarning(UserWarning):
    """A wavelet's support is more than 8x the signal length; row used zero padding."""


@dataclass(frozen=True)
class CwtPlan:
    fs: float
    f_min: float = 0.5
    f_max: float = 100.0
    n_scales: int = 64
    center_frequency: float = 0.8125

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if not 0 < self.f_min < self.f_max:
            raise ValueError(f"need 0 < f_min < f_max, got [{self.f_min}, {self.f_max}]")
        if self.f_max > self.fs / 2:
            raise ValueError(f"f_max={self.f_max} Hz exceeds the Nyquist frequency {self.fs / 2} Hz")
        if self.n_scales < 2:
            raise ValueError(f"n_scales must be >= 2, got {self.n_scales}")

    @property
    def frequencies(self) -> np.ndarray:
        return log_frequencies(self)

    @property
    def scales(self) -> np.ndarray:
        return self.center_frequency * self.fs / self.frequencies


def scale_for_frequency(f: float, plan: CwtPlan) -> float:
    """Scale whose wavelet is centered on physical frequency ``f`` (Hz)."""
    if not 0 < f <= plan.fs / 2:
        raise ValueError(f"frequency {f} Hz outside (0, {plan.fs / 2}]")
    return plan.center_frequency * plan.fs / f


def log_frequencies(plan: CwtPlan) -> np.ndarray:
    i = np.arange(plan.n_scales)
    f = plan.f_min * (plan.f_max / plan.f_min) ** (i / (plan.n_scales - 1))
    f[-1] = plan.f_max
    return f


def morlet(t: np.ndarray) -> np.ndarray:
    """Real Morlet mother wavelet ``exp(-t^2/2) cos(5t)``."""
    return np.exp(-0.5 * t * t) * np.cos(MORLET_OMEGA0 * t)


def wavelet_kernel(scale: float, half_width: int | None = None) -> np.ndarray:
    """``psi(n / a) / sqrt(a)`` sampled on ``n = -K..K``."""
    if half_width is None:
        half_width = int(math.ceil(SUPPORT_HALF_WIDTH * scale))
    n = np.arange(-half_width, half_width + 1, dtype=np.float64)
    return morlet(n / scale) / math.sqrt(scale)


def cwt(values, plan: CwtPlan) -> np.ndarray:
    """CWT coefficients, shape ``(n_scales, len(values))``, rows low -> high frequency.

    Signals are extended symmetrically at the edges. Scales whose wavelet
    support exceeds 8x the signal length fall back to zero padding and
    raise :class:`CwtSupportWarning`.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size < 8:
        raise ValueError("cwt needs a 1-D signal of at least 8 samples")
    L = x.size
    out = np.empty((plan.n_scales, L))
    flagged = []
    for i, a in enumerate(plan.scales):
        K = int(math.ceil(SUPPORT_HALF_WIDTH * a))
        if 2 * K + 1 > MAX_SUPPORT_RATIO * L:
            flagged.append(i)
            # beyond +/-(L-1) the kernel only meets zeros
            k = wavelet_kernel(a, min(K, L - 1))
            padded = np.pad(x, k.size // 2)
        else:
            k = wavelet_kernel(a, K)
            padded = np.pad(x, K, mode="symmetric")
        # psi is even, so correlation equals convolution
        out[i] = np.convolve(padded, k, mode="valid")
    if flagged:
        warnings.warn(
            f"{len(flagged)} of {plan.n_scales} scales have wavelet support beyond "
            f"{MAX_SUPPORT_RATIO}x the {L}-sample signal; those rows are zero-padded",
            CwtSupportWarning, stacklevel=2,
        )
    return out


def resize_bilinear(img: np.ndarray, out_dims: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling."""
    H, W = out_dims
    h, w = img.shape
    rows = np.linspace(0, h - 1, H)
    cols = np.linspace(0, w - 1, W)
    tmp = np.empty((h, W))
    xs = np.arange(w)
    for r in range(h):
        tmp[r] = np.interp(cols, xs, img[r])
    out = np.empty((H, W))
    ys = np.arange(h)
    for c in range(W):
        out[:, c] = np.interp(rows, ys, tmp[:, c])
    return out


@dataclass
class Scalogram:
    image: np.ndarray  # (H, W), values in [0, 1], row 0 = lowest frequency
    subject_id: str | None = None
    session_id: str | None = None
    start: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dims(self) -> tuple[int, int]:
        return self.image.shape


def render_scalogram(W: np.ndarray, out_dims: tuple[int, int] = (224, 224),
                     log_power: bool = False) -> Scalogram:
    """|W|^2, optional log, bilinear resize, then per-image min-max to [0, 1].

    A constant power map renders as all zeros.
    """
    W = np.asarray(W)
    if W.size == 0:
        raise ValueError("empty coefficient matrix")
    power = np.abs(W) ** 2
    if log_power:
        power = np.log(power + max(power.max() * 1e-12, 1e-300))
    img = resize_bilinear(power, out_dims) if power.shape != tuple(out_dims) else power.copy()
    lo, hi = img.min(), img.max()
    if hi - lo <= 0:
        return Scalogram(np.zeros(out_dims))
    img = (img - lo) / (hi - lo)
    return Scalogram(np.clip(img, 0.0, 1.0))


def save_png(scalogram: Scalogram | np.ndarray, path: str | os.PathLike, text: dict | None = None) -> None:
    """Write an 8-bit grayscale PNG with high frequencies at the top.

    ``text`` entries are stored as PNG text chunks.
    """
    from PIL import Image, PngImagePlugin

    img = scalogram.image if isinstance(scalogram, Scalogram) else np.asarray(scalogram)
    pixels = np.round(np.flipud(img) * 255).astype(np.uint8)
    info = PngImagePlugin.PngInfo()
    for key, value in (text or {}).items():
        info.add_text(str(key), str(value))
    Image.fromarray(pixels).save(path, pnginfo=info)


def _one(values, plan, dims, log_power):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CwtSupportWarning)
        return render_scalogram(cwt(values, plan), dims, log_power).image


def scalogram_batch(X: np.ndarray, plan: CwtPlan, out_dims=(224, 224), log_power=False,
                    n_jobs: int = 1) -> np.ndarray:
    """Scalograms for every row of ``X``: shape ``(n, H, W)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] and any(2 * math.ceil(SUPPORT_HALF_WIDTH * a) + 1 > MAX_SUPPORT_RATIO * X.shape[1]
                          for a in plan.scales):
        warnings.warn("some scales exceed the wavelet support limit for this segment length; "
                      "those rows are zero-padded", CwtSupportWarning, stacklevel=2)
    if n_jobs == 1:
        imgs = [_one(row, plan, out_dims, log_power) for row in X]
    else:
        imgs = Parallel(n_jobs=n_jobs)(delayed(_one)(row, plan, out_dims, log_power) for row in X)
    return np.stack(imgs) if imgs else np.zeros((0, *out_dims))


class ScalogramTransformer(TransformerMixin, BaseEstimator):
    """Map segments ``(n, L)`` to normalized scalogram images ``(n, H, W)``.

    Parameters
    ----------
    fs : float
        Sampling rate the segments are interpreted at.
    f_min, f_max : float
        Frequency band in Hz.
    n_scales : int
        Number of log-spaced frequencies.
    img_size : int or (int, int)
        Rendered image size.
    log_power : bool
        Log-scale |W|^2 before normalizing.
    n_jobs : int
        Worker processes for the per-segment transform.
    """

    def __init__(self, fs=360.0, f_min=0.5, f_max=100.0, n_scales=64, img_size=224,
                 log_power=False, n_jobs=1):
        self.fs = fs
        self.f_min = f_min
        self.f_max = f_max
        self.n_scales = n_scales
        self.img_size = img_size
        self.log_power = log_power
        self.n_jobs = n_jobs

    @property
    def plan(self) -> CwtPlan:
        return CwtPlan(self.fs, self.f_min, self.f_max, self.n_scales)

    @property
    def out_dims(self) -> tuple[int, int]:
        s = self.img_size
        return (s, s) if np.isscalar(s) else tuple(s)

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=8)
        self.plan_ = self.plan
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, ensure_min_features=8)
        return scalogram_batch(X, self.plan, self.out_dims, self.log_power, self.n_jobs)
