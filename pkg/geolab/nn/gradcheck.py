"""
GeoLab - Gradient Verification
Central finite differences against the analytic backward pass
"""
import logging
from typing import Callable, Optional, Sequence

import numpy as np

from geolab.nn.tensor import Tensor, no_grad
from geolab.utils.errors import NumericError

logger = logging.getLogger(__name__)

MIN_DENOMINATOR = 1e-5


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), MIN_DENOMINATOR)


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int = 200, rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error over every coordinate of `inputs`, or a random subsample of max_coords

    fn takes no arguments and returns a scalar Tensor computed from `inputs`.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps {eps} outside [1e-6, 1e-4]")
    for t in inputs:
        if t.dtype != np.float64:
            raise NumericError(f"grad_check needs float64 inputs, got {t.dtype} for {t.name or 'input'}")
        t.grad = None

    loss = fn()
    if loss.size != 1:
        raise ValueError(f"grad_check needs a scalar output, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss in grad_check")
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    coords = [(k, i) for k, t in enumerate(inputs) for i in range(t.size)]
    if len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    with no_grad():
        for k, i in coords:
            data = inputs[k].data
            index = np.unravel_index(i, data.shape)
            original = data[index]
            data[index] = original + eps
            plus = fn().item()
            data[index] = original - eps
            minus = fn().item()
            data[index] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericError(f"non-finite loss perturbing coordinate {i} of input {k}")
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, relative_error(float(analytic[k].reshape(-1)[i]), numeric))

    logger.debug(f"grad_check over {len(coords)} coordinates: max relative error {worst:.2e}")
    return worst
