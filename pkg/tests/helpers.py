"""Shared test utilities."""

import numpy as np

from mmfusion.autodiff import Tensor

SEEDS = range(10)
GRAD_TOL = 1e-4


def away_from_kinks(x, kinks=(0.0,), margin=1e-3):
    """Nudge entries that sit within ``margin`` of a kink of a piecewise op."""
    x = np.array(x, dtype=float)
    for k in kinks:
        close = np.abs(x - k) < margin
        x[close] = k + np.where(x[close] >= k, 1, -1) * 10 * margin
    return x


def leaf(rng, *shape, positive=False, kinks=None):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    if kinks is not None:
        x = away_from_kinks(x, kinks)
    return Tensor(x, requires_grad=True)
