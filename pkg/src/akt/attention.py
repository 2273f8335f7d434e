"""Monotonic scaled-dot-product attention and the encoder block built on it.

The scoring rule multiplies each raw score q_t.k_tau/sqrt(Dk) by
exp(-theta * d(t, tau)) before the softmax, where theta > 0 is a learnable
per-head decay rate and d is a context-aware distance derived from the
same raw scores.  d is recomputed on every forward pass and treated as a
constant during backpropagation; the ``kernels`` package provides both the
distance and the fused decayed-softmax forward/backward.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, NumericsError, ShapeError
from .tensor import (Tensor, _accumulate, _node, dropout, layer_norm, matmul,
                     softmax, softplus, xavier_init)

# softplus(RHO_INIT) == 1.0, so every head starts with unit decay rate.
RHO_INIT = float(np.log(np.expm1(1.0)))


def causal_mask(length, strict=False):
    """(T, T) boolean mask; row t may attend tau <= t (tau < t if strict)."""
    return np.tril(np.ones((length, length), dtype=bool), -1 if strict else 0)


def combined_mask(valid, strict=False):
    """Causal mask intersected with key validity.

    valid is (B, T) boolean, True at real (non-padding) positions. Rows
    belonging to padded queries keep their causal window; their outputs are
    never consumed, and leaving them populated keeps the softmax finite.
    """
    valid = np.asarray(valid, dtype=bool)
    tri = causal_mask(valid.shape[1], strict=strict)
    return tri[None, :, :] & valid[:, None, :]


def raw_scores(queries, keys):
    """Scaled dot products q_t . k_tau / sqrt(Dk) for (T, Dk) arrays."""
    queries = np.asarray(queries)
    keys = np.asarray(keys)
    if queries.ndim != 2 or keys.ndim != 2:
        raise ShapeError("raw_scores expects 2-D (T, Dk) arrays")
    if queries.shape[1] != keys.shape[1]:
        raise ShapeError(
            f"key width {keys.shape[1]} does not match query width "
            f"{queries.shape[1]}"
        )
    return queries @ keys.T / np.sqrt(queries.shape[1])


def context_distance(scores, mask):
    """Context-aware distance d(t, tau); accepts (T, T) or (B, H, T, T)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2:
        out = kernels.context_distance(scores[None, None], np.asarray(mask)[None])
        return out[0, 0]
    return kernels.context_distance(scores, mask)


def monotonic_weights(raw, dist, theta, mask, additive=False):
    """Decayed masked softmax as a single differentiable unit.

    raw is a (B, H, Tq, Tk) score tensor, dist a constant ndarray of the
    same shape (frozen by definition), theta a (H,) tensor of positive decay
    rates and mask a (B, Tq, Tk) attendability array.  Gradients reach raw
    and theta only.
    """
    alpha_data = kernels.monotonic_weights_forward(
        raw.data, dist, theta.data, mask, additive)

    def backward(g):
        grad_raw, grad_theta = kernels.monotonic_weights_backward(
            raw.data, dist, theta.data, alpha_data, g, additive)
        _accumulate(raw, grad_raw)
        _accumulate(theta, grad_theta)

    return _node(alpha_data, (raw, theta), backward)


def monotonic_attention(queries, keys, values, theta, mask, additive=False):
    """One plain-array evaluation of the decayed attention rule.

    Works on (T, Dk)/(T, Dv) arrays with a scalar theta, or on
    (B, H, T, Dk) stacks with a (H,) theta. Returns (output, AttentionTrace).
    No gradients are recorded; the trainable path lives in
    MultiHeadAttention.
    """
    queries = np.asarray(queries, dtype=np.float64)
    single = queries.ndim == 2
    if single:
        queries = queries[None, None]
        keys = np.asarray(keys, dtype=np.float64)[None, None]
        values = np.asarray(values, dtype=np.float64)[None, None]
        mask = np.asarray(mask)[None]
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    else:
        keys = np.asarray(keys, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
    raw = queries @ keys.swapaxes(-1, -2) / np.sqrt(queries.shape[-1])
    if not np.isfinite(raw).all():
        raise NumericsError("monotonic_attention: non-finite raw scores")
    dist = kernels.context_distance(raw, mask)
    alpha = kernels.monotonic_weights_forward(raw, dist, theta, mask, additive)
    out = alpha @ values
    trace = AttentionTrace(weights=alpha, theta=np.asarray(theta, dtype=np.float64))
    if single:
        return out[0, 0], trace
    return out, trace


@dataclass
class AttentionTrace:
    """Post-softmax attention weights plus the decay rates that shaped them.

    weights has shape (B, H, Tq, Tk); theta is (H,) or None when the decay
    term is disabled (positional-encoding variants).
    """

    weights: np.ndarray
    theta: np.ndarray | None = None

    def rows(self, batch_index, head):
        return self.weights[batch_index, head]


class DistanceCache:
    """Record, then replay, the context distances of repeated forward passes.

    The distance is a constant of each forward pass.  Finite-difference
    checks re-evaluate the model many times and must see the same constants
    every time, so the first pass records each distance array in call order
    and later passes hand them back.  Training never uses a cache: distances
    there are recomputed from the current parameters every pass.
    """

    def __init__(self):
        self._store = []
        self._recording = True
        self._cursor = 0

    def begin(self):
        """Start a forward pass: first ever pass records, the rest replay."""
        if self._store:
            self._recording = False
        self._cursor = 0

    def fetch(self, compute):
        if self._recording:
            arr = compute()
            self._store.append(arr)
            return arr
        arr = self._store[self._cursor]
        self._cursor += 1
        return arr


class MultiHeadAttention:
    """H-head attention with optional monotonic decay.

    Queries and keys share one projection by default, so the raw score
    matrix is a Gram matrix of projected inputs. Each head owns a decay
    parameter rho_h; the effective rate theta_h = softplus(rho_h) stays
    positive. With decay=False (positional variants) the layer is standard
    masked multi-head attention and allocates no rho.
    """

    def __init__(self, dim, heads, rng, shared_qk=True, decay=True,
                 additive=False, attn_dropout=True):
        if dim % heads != 0:
            raise ConfigError(f"head count {heads} must divide dim {dim}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.shared_qk = shared_qk
        self.decay = decay
        self.additive = additive
        self.attn_dropout = attn_dropout
        self.w_query = xavier_init((dim, dim), rng)
        self.w_key = self.w_query if shared_qk else xavier_init((dim, dim), rng)
        self.w_value = xavier_init((dim, dim), rng)
        self.w_out = xavier_init((dim, dim), rng)
        if decay:
            self.rho = Tensor(np.full(heads, RHO_INIT), requires_grad=True)
        else:
            self.rho = None

    def parameters(self):
        params = {"w_query": self.w_query}
        if not self.shared_qk:
            params["w_key"] = self.w_key
        params["w_value"] = self.w_value
        params["w_out"] = self.w_out
        if self.rho is not None:
            params["rho"] = self.rho
        return params

    def _split_heads(self, projected, batch, length):
        per_head = projected.reshape(batch, length, self.heads, self.head_dim)
        return per_head.transpose(0, 2, 1, 3)

    def forward(self, queries, keys, values, mask, training=False, rng=None,
                dropout_rate=0.0, dist_cache=None, collect_trace=False):
        """Attend (B, Tk, D) keys/values from (B, Tq, D) queries.

        mask is (B, Tq, Tk) with nonzero marking attendable pairs and must
        be causal whenever decay is on. Returns (output, trace or None).
        """
        batch, t_q = queries.shape[0], queries.shape[1]
        t_k = keys.shape[1]
        q = self._split_heads(matmul(queries, self.w_query), batch, t_q)
        k = self._split_heads(matmul(keys, self.w_key), batch, t_k)
        v = self._split_heads(matmul(values, self.w_value), batch, t_k)

        raw = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.head_dim))
        if not np.isfinite(raw.data).all():
            bad = int((~np.isfinite(raw.data)).sum())
            raise NumericsError(
                f"attention scores contain {bad} non-finite entries "
                f"(shape {raw.data.shape})"
            )

        theta = None
        if self.decay:
            theta = softplus(self.rho)
            if dist_cache is not None:
                dist = dist_cache.fetch(
                    lambda: kernels.context_distance(raw.data, mask))
            else:
                dist = kernels.context_distance(raw.data, mask)
            alpha = monotonic_weights(raw, dist, theta, mask,
                                      additive=self.additive)
        else:
            alpha = softmax(raw, axis=-1, mask=np.asarray(mask, bool)[:, None])

        trace = None
        if collect_trace:
            trace = AttentionTrace(
                weights=alpha.data.copy(),
                theta=None if theta is None else theta.data.copy(),
            )

        if self.attn_dropout:
            alpha = dropout(alpha, dropout_rate, training, rng)
        mixed = matmul(alpha, v)
        merged = mixed.transpose(0, 2, 1, 3).reshape(batch, t_q, self.dim)
        return matmul(merged, self.w_out), trace


class EncoderBlock:
    """Attention sublayer and feedforward sublayer with post-norm residuals.

    output = LN(x + drop(attn(x)));  output = LN(that + drop(ffn(that))).
    With zero attention and FFN weights and dropout off this reduces to a
    layer-normalized passthrough of the queries.
    """

    def __init__(self, dim, heads, rng, ffn_hidden=None, shared_qk=True,
                 decay=True, additive=False, attn_dropout=True):
        hidden = dim if ffn_hidden is None else ffn_hidden
        self.attention = MultiHeadAttention(
            dim, heads, rng, shared_qk=shared_qk, decay=decay,
            additive=additive, attn_dropout=attn_dropout)
        self.ffn_w1 = xavier_init((dim, hidden), rng)
        self.ffn_b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.ffn_w2 = xavier_init((hidden, dim), rng)
        self.ffn_b2 = Tensor(np.zeros(dim), requires_grad=True)
        self.norm1_gain = Tensor(np.ones(dim), requires_grad=True)
        self.norm1_bias = Tensor(np.zeros(dim), requires_grad=True)
        self.norm2_gain = Tensor(np.ones(dim), requires_grad=True)
        self.norm2_bias = Tensor(np.zeros(dim), requires_grad=True)

    def parameters(self):
        params = {f"attention.{k}": v
                  for k, v in self.attention.parameters().items()}
        params.update({
            "ffn_w1": self.ffn_w1, "ffn_b1": self.ffn_b1,
            "ffn_w2": self.ffn_w2, "ffn_b2": self.ffn_b2,
            "norm1_gain": self.norm1_gain, "norm1_bias": self.norm1_bias,
            "norm2_gain": self.norm2_gain, "norm2_bias": self.norm2_bias,
        })
        return params

    def forward(self, queries, keys, values, mask, training=False, rng=None,
                dropout_rate=0.0, dist_cache=None, collect_trace=False):
        attended, trace = self.attention.forward(
            queries, keys, values, mask, training=training, rng=rng,
            dropout_rate=dropout_rate, dist_cache=dist_cache,
            collect_trace=collect_trace)
        normed = layer_norm(
            queries + dropout(attended, dropout_rate, training, rng),
            self.norm1_gain, self.norm1_bias)
        ff = matmul(softplus(matmul(normed, self.ffn_w1) + self.ffn_b1),
                    self.ffn_w2) + self.ffn_b2
        out = layer_norm(normed + dropout(ff, dropout_rate, training, rng),
                         self.norm2_gain, self.norm2_bias)
        return out, trace
