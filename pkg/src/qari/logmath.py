"""Log-domain arithmetic that tolerates -inf (log 0) everywhere."""

import numpy as np

LOG_ZERO = -np.inf


def logsumexp(x, axis=None):
    """Stable log(sum(exp(x))) along `axis`.

    Slices that are entirely -inf give -inf instead of nan.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        if axis is None:
            return LOG_ZERO
        shape = list(x.shape)
        del shape[axis]
        return np.full(shape, LOG_ZERO)
    x_max = np.max(x, axis=axis, keepdims=True)
    safe_max = np.where(np.isfinite(x_max), x_max, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe_max), axis=axis, keepdims=True)) + safe_max
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_add(a, b):
    """log(exp(a) + exp(b)) for two scalars."""
    if a == LOG_ZERO:
        return b
    if b == LOG_ZERO:
        return a
    if a < b:
        a, b = b, a
    return a + np.log1p(np.exp(b - a))


def safe_log(p):
    """Natural log that maps 0 to -inf without a warning."""
    with np.errstate(divide="ignore"):
        return np.log(p)
