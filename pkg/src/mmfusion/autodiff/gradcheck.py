"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from mmfusion.autodiff.tensor import Tensor, no_grad, record_branches

# Denominator floor: a gradient that is exactly zero (e.g. a key bias under
# softmax shift invariance) would otherwise compare round-off against round-off.
SCALE_FLOOR = 1e-6


def _projected_loss(fn, inputs, proj):
    with no_grad(), record_branches() as branches:
        out = fn(*inputs)
    return float((out.data * proj).sum()), branches


def numerical_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor], proj: np.ndarray,
                       eps: float = 1e-5, max_entries: int | None = None,
                       rng: np.random.Generator | None = None, skip_kinks: bool = False):
    """Finite-difference gradient of ``sum(fn(*inputs) * proj)``.

    Returns a list of (flat_indices, values, kink_mask) per input. When
    ``max_entries`` is given only that many randomly chosen entries per input
    are probed. With ``skip_kinks`` an entry is flagged in ``kink_mask`` when a
    perturbed pass takes a different branch of some piecewise op (a relu sign
    or a max-pool winner changes), i.e. the step straddles a point where the
    function is not differentiable.
    """
    _, base = _projected_loss(fn, inputs, proj) if skip_kinks else (None, None)
    result = []
    for t in inputs:
        flat = t.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False))
        else:
            idx = np.arange(flat.size)
        vals = np.empty(idx.size)
        kinks = np.zeros(idx.size, dtype=bool)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up, up_b = _projected_loss(fn, inputs, proj)
            flat[i] = orig - eps
            down, down_b = _projected_loss(fn, inputs, proj)
            flat[i] = orig
            vals[k] = (up - down) / (2 * eps)
            if skip_kinks:
                kinks[k] = up_b != base or down_b != base
        result.append((idx, vals, kinks))
    return result


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SCALE_FLOOR) -> float:
    """max |a - n| scaled by the larger of the two infinity norms (at least ``floor``)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


@dataclass
class GradcheckResult:
    error: float
    probed: int
    skipped: int


def gradcheck_detail(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                     seed: int = 0, max_entries: int | None = None,
                     skip_kinks: bool = False) -> GradcheckResult:
    """Worst relative error between backward() and finite differences over ``inputs``.

    The scalar being differentiated is ``sum(fn(*inputs) * R)`` for a fixed
    random ``R``, which avoids the cancellations a plain sum can hide.
    """
    rng = np.random.default_rng(seed)
    with no_grad():
        probe = fn(*inputs)
    proj = rng.standard_normal(probe.shape)
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    (out * Tensor(proj, dtype=out.dtype)).sum().backward()
    analytic = [t.grad.reshape(-1) if t.grad is not None else np.zeros(t.size) for t in inputs]
    numeric = numerical_gradient(fn, inputs, proj, eps, max_entries, rng, skip_kinks)
    worst, probed, skipped = 0.0, 0, 0
    for a, (idx, n, kinks) in zip(analytic, numeric):
        keep = ~kinks
        probed += idx.size
        skipped += int(kinks.sum())
        # the scale uses every probed entry, the error only the smooth ones
        scale = max(np.abs(a[idx]).max(initial=0.0), np.abs(n).max(initial=0.0), SCALE_FLOOR)
        worst = max(worst, float(np.abs(a[idx][keep] - n[keep]).max(initial=0.0) / scale))
    return GradcheckResult(worst, probed, skipped)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
              seed: int = 0, max_entries: int | None = None, skip_kinks: bool = False) -> float:
    return gradcheck_detail(fn, inputs, eps, seed, max_entries, skip_kinks).error
