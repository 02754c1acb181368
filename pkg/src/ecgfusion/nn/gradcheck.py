"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    n_checked: int


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - n|| / max(||a|| + ||n||, floor)`` over the whole tensor."""
    diff = np.linalg.norm(analytic - numeric)
    return float(diff / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5,
                     indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` (mutated in place and restored).

    If ``indices`` is given only those entries are perturbed; the rest stay 0.
    """
    grad = np.zeros_like(x)
    it = indices if indices is not None else list(np.ndindex(x.shape))
    for idx in it:
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
                    max_entries: int | None = 64, seed: int = 0) -> list[GradCheckResult]:
    """Compare backprop against central differences for each parameter.

    ``loss_fn`` must rebuild the graph on each call and be deterministic
    (put dropout layers in eval mode). Large tensors are spot-checked on a
    random subset of ``max_entries`` entries.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}
    results = []
    for p in params:
        all_idx = list(np.ndindex(p.shape))
        if max_entries is not None and len(all_idx) > max_entries:
            pick = rng.choice(len(all_idx), size=max_entries, replace=False)
            chosen = [all_idx[i] for i in sorted(pick)]
        else:
            chosen = all_idx
        num = numeric_gradient(lambda: float(loss_fn().data), p.data, eps, chosen)
        mask = np.zeros(p.shape, dtype=bool)
        for idx in chosen:
            mask[idx] = True
        a = analytic[id(p)][mask]
        err = relative_error(a, num[mask])
        results.append(GradCheckResult(getattr(p, "name", "") or "?", err, len(chosen)))
    return results


def check_input_gradient(fn: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5,
                         seed: int = 0) -> float:
    """Relative error of d(sum(w * fn(x)))/dx against central differences."""
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    probe = None

    def scalar(arr: np.ndarray, track: bool):
        nonlocal probe
        t = Tensor(arr, requires_grad=track)
        out = fn(t)
        if probe is None:
            probe = rng.normal(size=out.shape)
        return t, out, float(np.sum(out.data * probe))

    t, out, _ = scalar(x, True)
    out.backward(probe)
    num = numeric_gradient(lambda: scalar(x, False)[2], x, eps)
    return relative_error(t.grad, num)
