"""
Compare reverse mode gradients against central finite differences.
Only meaningful in 64 bit precision.
"""

import logging

import numpy as np

from .errors import ConfigError, NumericError


logger = logging.getLogger(__name__)


def _value(f, store):
    value = float(np.asarray(f(store).data))
    if not np.isfinite(value):
        raise NumericError("Function value is not finite during gradient check")
    return value


def finite_diff_check(f, store, h=1e-5, floor=1e-3, names=None):
    """
    `f` maps the store to a scalar Tensor. Every coordinate of every
    parameter (or only those in `names`) is nudged by +-h and the central
    difference compared to the analytic gradient. Returns the worst relative
    error |a - n| / max(|a|, |n|, floor).
    """
    if not h > 0:
        raise ConfigError(f"Finite difference step must be positive, got {h}")
    store.zero_grad()
    out = f(store)
    if not np.isfinite(out.data).all():
        raise NumericError("Function value is not finite during gradient check")
    out.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in store.items()}

    worst = 0.0
    for name, tensor in store.items():
        if names is not None and name not in names:
            continue
        flat = tensor.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = _value(f, store)
            flat[i] = original - h
            minus = _value(f, store)
            flat[i] = original
            numeric = (plus - minus) / (2 * h)
            error = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), floor)
            if error > worst:
                logger.debug("%s[%d]: analytic %g, numeric %g", name, i, grad[i], numeric)
                worst = error
    store.zero_grad()
    return worst
