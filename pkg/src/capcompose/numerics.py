"""Small numeric helpers shared by the classifiers and encoders.

Everything runs in 64-bit floats. The sigmoid and softmax are written in
their overflow-safe forms.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def log_softmax(x):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def relu(x):
    return np.maximum(x, 0.0)


def check_finite(value, what: str):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value in {what}")
    return value
