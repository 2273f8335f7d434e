"""Pure-numpy implementations of the attention hot kernels.

This is the fallback backend; `akt.kernels._native` holds the compiled
equivalents. Both share these contracts:

* ``raw`` holds pre-decay attention scores, shape (B, H, Tq, Tk).
* ``mask`` is (B, Tq, Tk), nonzero where a key may be attended, shared
  across heads. Masks are causal: nothing right of the diagonal is set,
  which the distance computation relies on.
* Rows with no unmasked entry produce all-zero weights.
"""

import numpy as np


def _masked_softmax(scores, m):
    top = np.amax(scores, axis=-1, keepdims=True, initial=-np.inf, where=m)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(m, np.exp(scores - top), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    return np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)


def context_distance(raw, mask):
    """Distance between steps: |t - tau| times the attention mass after tau.

    The weights gamma are a masked softmax of the raw scores per query row;
    the returned matrix is zero on masked entries and is treated as a
    constant by the caller (no gradient flows through it).
    """
    m = mask.astype(bool)[:, None, :, :]
    gamma = _masked_softmax(raw, m)
    cum = np.cumsum(gamma, axis=-1)
    total = cum[..., -1:]
    tq, tk = raw.shape[2], raw.shape[3]
    absdist = np.abs(np.arange(tq, dtype=raw.dtype)[:, None]
                     - np.arange(tk, dtype=raw.dtype)[None, :])
    d = absdist * (total - cum)
    return np.where(m, d, 0.0).astype(raw.dtype, copy=False)


def monotonic_weights_forward(raw, dist, theta, mask, additive):
    """Attention weights with per-head exponential decay over ``dist``.

    Multiplicative form scales the raw score by exp(-theta * dist); the
    additive variant subtracts theta * dist instead.
    """
    m = mask.astype(bool)[:, None, :, :]
    th = theta.reshape(1, -1, 1, 1)
    if additive:
        s = raw - th * dist
    else:
        s = np.exp(-th * dist) * raw
    return _masked_softmax(s, m)


def monotonic_weights_backward(raw, dist, theta, alpha, grad_alpha, additive):
    """Adjoints of the decayed-softmax weights w.r.t. raw scores and theta."""
    inner = (grad_alpha * alpha).sum(axis=-1, keepdims=True)
    gs = alpha * (grad_alpha - inner)
    th = theta.reshape(1, -1, 1, 1)
    if additive:
        grad_raw = gs
        grad_theta = -(gs * dist).sum(axis=(0, 2, 3))
    else:
        w = np.exp(-th * dist)
        grad_raw = gs * w
        grad_theta = -(gs * w * raw * dist).sum(axis=(0, 2, 3))
    return grad_raw, grad_theta.astype(theta.dtype, copy=False)
