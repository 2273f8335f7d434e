"""Monotonic attention: scores, distances, decay, heads and encoder blocks."""

import numpy as np
import pytest

from akt.attention import (RHO_INIT, AttentionTrace, DistanceCache,
                           EncoderBlock, MultiHeadAttention, causal_mask,
                           combined_mask, context_distance,
                           monotonic_attention, monotonic_weights, raw_scores)
from akt.errors import ConfigError, NumericsError, ShapeError
from akt.tensor import Tensor, grad_check, layer_norm, softplus, tsum


def straight_line_alpha(raw, mask, theta, additive=False):
    """Loop evaluation of the decayed masked softmax, one row at a time."""
    t_q, t_k = raw.shape
    dist = np.zeros((t_q, t_k))
    alpha = np.zeros((t_q, t_k))
    for t in range(t_q):
        allowed = [tau for tau in range(t_k) if mask[t, tau]]
        if not allowed:
            continue
        e = np.exp(raw[t, allowed] - max(raw[t, allowed]))
        gamma = e / e.sum()
        for j, tau in enumerate(allowed):
            dist[t, tau] = abs(t - tau) * gamma[j + 1:].sum()
        if additive:
            s = raw[t, allowed] - theta * dist[t, allowed]
        else:
            s = np.exp(-theta * dist[t, allowed]) * raw[t, allowed]
        e = np.exp(s - s.max())
        alpha[t, allowed] = e / e.sum()
    return dist, alpha


# ---- raw scores ----------------------------------------------------------------


def test_orthogonal_queries_and_keys_score_zero():
    queries = np.eye(4)[:2]
    keys = np.eye(4)[2:]
    np.testing.assert_array_equal(raw_scores(queries, keys), np.zeros((2, 2)))


def test_identical_unit_vectors_score_inverse_root_width():
    unit = np.full((3, 4), 0.5)  # rows have norm 1
    scores = raw_scores(unit, unit)
    np.testing.assert_allclose(scores, np.full((3, 3), 0.5), atol=1e-15)


def test_raw_scores_match_pairwise_dot_products():
    rng = np.random.default_rng(0)
    queries = rng.standard_normal((5, 7))
    keys = rng.standard_normal((6, 7))
    scores = raw_scores(queries, keys)
    for t in range(5):
        for tau in range(6):
            expected = queries[t] @ keys[tau] / np.sqrt(7)
            assert abs(scores[t, tau] - expected) < 1e-12


def test_raw_scores_shape_guards():
    with pytest.raises(ShapeError):
        raw_scores(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ShapeError):
        raw_scores(np.zeros((1, 2, 3)), np.zeros((2, 3)))


# ---- masks ---------------------------------------------------------------------


def test_causal_mask_includes_diagonal_by_default():
    mask = causal_mask(3)
    np.testing.assert_array_equal(
        mask, [[1, 0, 0], [1, 1, 0], [1, 1, 1]])


def test_strict_mask_leaves_first_row_empty():
    mask = causal_mask(3, strict=True)
    np.testing.assert_array_equal(
        mask, [[0, 0, 0], [1, 0, 0], [1, 1, 0]])


def test_combined_mask_blocks_padded_keys():
    valid = np.array([[True, True, False]])
    mask = combined_mask(valid)
    np.testing.assert_array_equal(
        mask[0], [[1, 0, 0], [1, 1, 0], [1, 1, 0]])


# ---- context distance ----------------------------------------------------------


def test_equal_scores_follow_quadratic_over_t():
    # Identical keys make gamma uniform, so d(t, tau) = (t - tau)^2 / t
    # counting positions from one.
    raw = np.zeros((40, 40))
    mask = causal_mask(40)
    d = context_distance(raw, mask)
    for t in range(40):
        for tau in range(t + 1):
            expected = (t - tau) ** 2 / (t + 1)
            assert abs(d[t, tau] - expected) < 1e-9


def test_distance_to_self_is_zero():
    rng = np.random.default_rng(1)
    raw = rng.standard_normal((6, 6))
    d = context_distance(raw, causal_mask(6))
    np.testing.assert_array_equal(np.diag(d), np.zeros(6))


def test_distance_is_zero_on_masked_entries():
    rng = np.random.default_rng(2)
    raw = rng.standard_normal((5, 5))
    d = context_distance(raw, causal_mask(5))
    assert (d[~causal_mask(5)] == 0).all()


def test_distance_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for t_len in range(1, 7):
        raw = rng.standard_normal((t_len, t_len)) * 2.0
        mask = causal_mask(t_len)
        expected, _ = straight_line_alpha(raw, mask, theta=0.0)
        got = context_distance(raw, mask)
        np.testing.assert_allclose(got, expected, atol=1e-10)


def test_empty_rows_have_zero_distance():
    raw = np.zeros((3, 3))
    d = context_distance(raw, causal_mask(3, strict=True))
    assert (d[0] == 0).all()


# ---- decayed softmax ------------------------------------------------------------


def test_vanishing_decay_recovers_plain_softmax():
    rng = np.random.default_rng(4)
    raw = rng.standard_normal((6, 6))
    mask = causal_mask(6)
    _, trace = monotonic_attention(raw @ np.eye(6), np.sqrt(6) * np.eye(6),
                                   np.eye(6), 1e-14, mask)
    alpha = trace.weights[0, 0]
    for t in range(6):
        e = np.exp(raw[t, :t + 1] - raw[t, :t + 1].max())
        np.testing.assert_allclose(alpha[t, :t + 1], e / e.sum(), atol=1e-10)


@pytest.mark.parametrize("theta", [0.1, 1.0, 10.0])
def test_equal_scores_decay_strictly_toward_past(theta):
    # Equal positive scores at every allowed pair: the decay term alone
    # orders the weights, newest to oldest. Six steps keep the oldest
    # score gaps above float64 resolution even at theta = 10.
    unit = np.full((6, 4), 0.5)
    _, trace = monotonic_attention(unit, unit, unit, theta, causal_mask(6))
    alpha = trace.weights[0, 0]
    for t in range(1, 6):
        row = alpha[t, :t + 1]
        assert (np.diff(row) > 0).all(), f"row {t} not increasing: {row}"


@pytest.mark.parametrize("additive", [False, True])
def test_weights_match_loop_oracle(additive):
    rng = np.random.default_rng(5)
    for t_len in (1, 2, 3, 5):
        raw = rng.standard_normal((t_len, t_len))
        mask = causal_mask(t_len)
        queries = raw * np.sqrt(t_len)  # keys = identity gives raw back
        _, trace = monotonic_attention(queries, np.eye(t_len), np.eye(t_len),
                                       0.7, mask, additive=additive)
        _, expected = straight_line_alpha(raw, mask, 0.7, additive=additive)
        np.testing.assert_allclose(trace.weights[0, 0], expected, atol=1e-10)


def test_monotonic_attention_output_mixes_values():
    values = np.diag([1.0, 2.0, 3.0])
    queries = np.zeros((3, 3))
    out, trace = monotonic_attention(queries, queries, values, 1.0,
                                     causal_mask(3))
    expected = trace.weights[0, 0] @ values
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_monotonic_attention_rejects_non_finite_scores():
    bad = np.full((2, 2), np.inf)
    with pytest.raises(NumericsError):
        monotonic_attention(bad, bad, bad, 1.0, causal_mask(2))


def test_weight_rows_sum_to_one_or_zero():
    rng = np.random.default_rng(6)
    raw = rng.standard_normal((5, 5))
    mask = causal_mask(5, strict=True)
    _, trace = monotonic_attention(raw, np.eye(5) * np.sqrt(5), np.eye(5),
                                   2.0, mask)
    sums = trace.weights[0, 0].sum(axis=1)
    np.testing.assert_allclose(sums, [0, 1, 1, 1, 1], atol=1e-12)


def test_monotonic_weights_gradients_pass_finite_differences():
    rng = np.random.default_rng(7)
    raw = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
    rho = Tensor(np.array([0.3, -0.2]), requires_grad=True)
    mask = causal_mask(4)[None]
    dist = context_distance(raw.data, mask)
    proj = rng.standard_normal((1, 2, 4, 4))

    def loss():
        alpha = monotonic_weights(raw, dist, softplus(rho), mask)
        return tsum(alpha * Tensor(proj))

    assert grad_check(loss, [raw, rho], epsilon=1e-6) < 1e-7


# ---- multi-head attention --------------------------------------------------------


def mha(dim=4, heads=2, seed=0, **kwargs):
    return MultiHeadAttention(dim, heads, np.random.default_rng(seed),
                              **kwargs)


def test_head_count_must_divide_width():
    with pytest.raises(ConfigError):
        mha(dim=6, heads=4)


def test_decay_rate_starts_at_one():
    layer = mha()
    np.testing.assert_allclose(softplus(layer.rho).data, [1.0, 1.0],
                               atol=1e-12)
    assert np.log(np.expm1(1.0)) == pytest.approx(RHO_INIT)


def test_positional_layers_have_no_decay_parameter():
    layer = mha(decay=False)
    assert layer.rho is None
    assert "rho" not in layer.parameters()


def test_shared_projection_exposes_one_matrix():
    shared = mha(shared_qk=True)
    assert "w_key" not in shared.parameters()
    assert shared.w_key is shared.w_query
    split = mha(shared_qk=False)
    assert "w_key" in split.parameters()
    assert split.w_key is not split.w_query


def test_single_head_matches_hand_computation():
    layer = mha(dim=2, heads=1, decay=False)
    eye = np.eye(2)
    for w in (layer.w_query, layer.w_value, layer.w_out):
        w.data[:] = eye
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 4, 2))
    mask = combined_mask(np.ones((1, 4), dtype=bool))
    out, _ = layer.forward(Tensor(x), Tensor(x), Tensor(x), mask)
    raw = x[0] @ x[0].T / np.sqrt(2)
    expected = np.zeros((4, 2))
    for t in range(4):
        e = np.exp(raw[t, :t + 1] - raw[t, :t + 1].max())
        expected[t] = (e / e.sum()) @ x[0, :t + 1]
    np.testing.assert_allclose(out.data[0], expected, atol=1e-12)


def test_single_head_decay_matches_loop_oracle():
    layer = mha(dim=2, heads=1, decay=True)
    eye = np.eye(2)
    for w in (layer.w_query, layer.w_value, layer.w_out):
        w.data[:] = eye
    rng = np.random.default_rng(9)
    x = rng.standard_normal((1, 5, 2))
    mask = combined_mask(np.ones((1, 5), dtype=bool))
    out, trace = layer.forward(Tensor(x), Tensor(x), Tensor(x), mask,
                               collect_trace=True)
    raw = x[0] @ x[0].T / np.sqrt(2)
    _, alpha = straight_line_alpha(raw, mask[0], theta=1.0)
    np.testing.assert_allclose(trace.weights[0, 0], alpha, atol=1e-10)
    np.testing.assert_allclose(out.data[0], alpha @ x[0], atol=1e-10)


def test_duplicated_heads_produce_identical_halves():
    layer = mha(dim=4, heads=2)
    layer.w_query.data[:, 2:] = layer.w_query.data[:, :2]
    layer.w_value.data[:, 2:] = layer.w_value.data[:, :2]
    layer.w_out.data[:] = np.eye(4)
    rng = np.random.default_rng(10)
    x = Tensor(rng.standard_normal((2, 5, 4)))
    mask = combined_mask(np.ones((2, 5), dtype=bool))
    out, trace = layer.forward(x, x, x, mask, collect_trace=True)
    np.testing.assert_allclose(out.data[..., :2], out.data[..., 2:],
                               atol=1e-12)
    np.testing.assert_allclose(trace.weights[:, 0], trace.weights[:, 1],
                               atol=1e-12)


def test_output_shape_is_query_shape():
    layer = mha(dim=16, heads=8)
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((1, 5, 16)))
    mask = combined_mask(np.ones((1, 5), dtype=bool))
    out, trace = layer.forward(x, x, x, mask, collect_trace=True)
    assert out.shape == (1, 5, 16)
    assert trace.weights.shape == (1, 8, 5, 5)
    assert trace.theta.shape == (8,)


def test_future_keys_never_reach_present_outputs():
    layer = mha(dim=4, heads=2)
    rng = np.random.default_rng(12)
    x = rng.standard_normal((1, 6, 4))
    mask = combined_mask(np.ones((1, 6), dtype=bool))
    base, _ = layer.forward(Tensor(x), Tensor(x), Tensor(x), mask)
    bumped = x.copy()
    bumped[0, 4:] += 3.0
    moved, _ = layer.forward(Tensor(bumped), Tensor(bumped), Tensor(bumped),
                             mask)
    assert (base.data[0, :4] == moved.data[0, :4]).all()
    assert not (base.data[0, 4:] == moved.data[0, 4:]).all()


def test_non_finite_scores_are_reported():
    layer = mha(dim=4, heads=2)
    x = Tensor(np.full((1, 3, 4), 1e300))
    mask = combined_mask(np.ones((1, 3), dtype=bool))
    with np.errstate(over="ignore"):
        with pytest.raises(NumericsError, match="non-finite"):
            layer.forward(x, x, x, mask)


def test_trace_rows_expose_one_head():
    trace = AttentionTrace(weights=np.arange(24.0).reshape(1, 2, 3, 4),
                           theta=np.array([1.0, 2.0]))
    np.testing.assert_array_equal(trace.rows(0, 1),
                                  np.arange(12.0, 24.0).reshape(3, 4))


# ---- distance cache ---------------------------------------------------------------


def test_cache_replays_first_pass_distances():
    cache = DistanceCache()
    cache.begin()
    first = cache.fetch(lambda: np.ones((2, 2)))
    cache.begin()
    replay = cache.fetch(lambda: pytest.fail("recomputed a frozen distance"))
    assert replay is first


def test_cache_replays_in_call_order():
    cache = DistanceCache()
    cache.begin()
    a = cache.fetch(lambda: np.zeros(1))
    b = cache.fetch(lambda: np.ones(1))
    cache.begin()
    assert cache.fetch(None) is a
    assert cache.fetch(None) is b
    cache.begin()
    assert cache.fetch(None) is a


def test_cached_forward_is_reproducible():
    layer = mha(dim=4, heads=2)
    rng = np.random.default_rng(13)
    x = Tensor(rng.standard_normal((1, 5, 4)))
    mask = combined_mask(np.ones((1, 5), dtype=bool))
    cache = DistanceCache()
    cache.begin()
    first, _ = layer.forward(x, x, x, mask, dist_cache=cache)
    cache.begin()
    second, _ = layer.forward(x, x, x, mask, dist_cache=cache)
    np.testing.assert_array_equal(first.data, second.data)


# ---- encoder block ------------------------------------------------------------------


def test_zeroed_block_is_layer_norm_of_input():
    block = EncoderBlock(dim=4, heads=2, rng=np.random.default_rng(14))
    for name in ("w_query", "w_value", "w_out"):
        getattr(block.attention, name).data[:] = 0.0
    block.ffn_w1.data[:] = 0.0
    block.ffn_w2.data[:] = 0.0
    rng = np.random.default_rng(15)
    x = Tensor(rng.standard_normal((1, 5, 4)))
    mask = combined_mask(np.ones((1, 5), dtype=bool))
    out, _ = block.forward(x, x, x, mask)
    expected = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, expected.data, atol=1e-4)


def test_block_respects_causality_bitwise():
    block = EncoderBlock(dim=4, heads=2, rng=np.random.default_rng(16))
    rng = np.random.default_rng(17)
    x = rng.standard_normal((1, 6, 4))
    mask = combined_mask(np.ones((1, 6), dtype=bool))
    base, _ = block.forward(Tensor(x), Tensor(x), Tensor(x), mask)
    bumped = x.copy()
    bumped[0, 5] = -bumped[0, 5] + 2.0
    moved, _ = block.forward(Tensor(bumped), Tensor(bumped), Tensor(bumped),
                             mask)
    assert (base.data[0, :5] == moved.data[0, :5]).all()


def test_block_gradients_pass_finite_differences():
    block = EncoderBlock(dim=4, heads=2, rng=np.random.default_rng(18))
    rng = np.random.default_rng(19)
    x = Tensor(rng.standard_normal((1, 4, 4)), requires_grad=True)
    mask = combined_mask(np.ones((1, 4), dtype=bool))
    proj = rng.standard_normal((1, 4, 4))
    cache = DistanceCache()
    params = [x] + list(block.parameters().values())

    def loss():
        cache.begin()
        out, _ = block.forward(x, x, x, mask, dist_cache=cache)
        return tsum(out * Tensor(proj))

    assert grad_check(loss, params, epsilon=1e-4) < 1e-4


def test_block_parameters_are_prefixed():
    block = EncoderBlock(dim=4, heads=2, rng=np.random.default_rng(20))
    names = set(block.parameters())
    assert "attention.w_query" in names
    assert "attention.rho" in names
    assert {"ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
            "norm1_gain", "norm1_bias", "norm2_gain", "norm2_bias"} <= names
