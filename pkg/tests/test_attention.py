import math

import numpy as np
import pytest

from dentobox.attention import (
    GateParams,
    SqueezeParams,
    attention_gate_forward,
    channel_gate,
    cse_forward,
    maxout_switch,
    pscse_forward,
    resample_gating,
    run_demo,
    scse_forward,
    spatial_gate,
    sse_forward,
)
from dentobox.errors import InvariantError, ShapeMismatchError


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_zero_weights_halve_the_input():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(4, 3, 5))
    params = SqueezeParams.zeros(4, reduction=2)
    np.testing.assert_array_equal(cse_forward(u, params), 0.5 * u)
    np.testing.assert_array_equal(sse_forward(u, params), 0.5 * u)


def test_zero_input_stays_zero():
    params = SqueezeParams.random(4, 2, rng=np.random.default_rng(1))
    u = np.zeros((4, 2, 2))
    assert not cse_forward(u, params).any()
    assert not sse_forward(u, params).any()


def test_cse_hand_computed():
    u = np.array([[[2.0]], [[-1.0]]])
    params = SqueezeParams(
        reduce_w=np.array([[1.0, 1.0]]),
        reduce_b=np.zeros(1),
        expand_w=np.array([[1.0], [-1.0]]),
        expand_b=np.zeros(2),
        spatial_w=np.zeros(2),
        spatial_b=0.0,
        reduction=2,
    )
    out = cse_forward(u, params)
    assert out[0, 0, 0] == pytest.approx(2 * sigmoid(1.0))
    assert out[1, 0, 0] == pytest.approx(-1 * sigmoid(-1.0))


def test_sse_hand_computed():
    u = np.array([[[1.0, -1.0]], [[0.0, 2.0]]])
    params = SqueezeParams.zeros(2, reduction=2)
    params = SqueezeParams(
        reduce_w=params.reduce_w,
        reduce_b=params.reduce_b,
        expand_w=params.expand_w,
        expand_b=params.expand_b,
        spatial_w=np.array([1.0, 0.5]),
        spatial_b=0.0,
        reduction=2,
    )
    out = sse_forward(u, params)
    np.testing.assert_allclose(out[0, 0], [sigmoid(1.0), -0.5])
    np.testing.assert_allclose(out[1, 0], [0.0, 1.0])


def test_pscse_combination_rule():
    rng = np.random.default_rng(2)
    u = rng.normal(size=(8, 4, 4))
    zero = SqueezeParams.zeros(8, 2)
    # cse == sse == u/2
    np.testing.assert_array_equal(pscse_forward(u, zero, maxout_enabled=True), 1.5 * u)
    np.testing.assert_array_equal(pscse_forward(u, zero, maxout_enabled=False), u)

    params = SqueezeParams.random(8, 2, rng=rng)
    c = cse_forward(u, params)
    s = sse_forward(u, params)
    np.testing.assert_allclose(pscse_forward(u, params, maxout_enabled=True), c + s + np.maximum(c, s))
    np.testing.assert_allclose(scse_forward(u, params), c + s)


def test_maxout_switch_depends_on_channel_count():
    assert maxout_switch(8)
    assert not maxout_switch(4)
    assert maxout_switch(4, min_channels=2)
    u = np.ones((4, 2, 2))
    zero = SqueezeParams.zeros(4, 2)
    np.testing.assert_array_equal(pscse_forward(u, zero), u)


@pytest.mark.parametrize("bias", [-800.0, 800.0])
def test_gates_stay_open_interval_under_saturation(bias):
    u = np.array([[[1.0]], [[-2.0]]])
    params = SqueezeParams(
        reduce_w=np.ones((1, 2)),
        reduce_b=np.zeros(1),
        expand_w=np.ones((2, 1)),
        expand_b=np.full(2, bias),
        spatial_w=np.zeros(2),
        spatial_b=bias,
        reduction=2,
    )
    s = channel_gate(u, params)
    q = spatial_gate(u, params)
    assert np.all((s > 0) & (s < 1))
    assert np.all((q > 0) & (q < 1))
    for out in (cse_forward(u, params), sse_forward(u, params)):
        assert np.array_equal(np.sign(out), np.sign(u))
        assert np.all(np.abs(out) < np.abs(u))

    gate = GateParams(np.ones((1, 2)), np.zeros(1), np.ones((1, 2)), np.zeros(1), np.ones(1), bias)
    alpha, gated = attention_gate_forward(u, np.ones((2, 1, 1)), gate)
    assert 0 < alpha[0, 0] < 1
    assert np.array_equal(np.sign(gated), np.sign(u))


def test_attention_gate_zero_psi():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 4, 4))
    g = rng.normal(size=(5, 4, 4))
    params = GateParams.random(3, 5, 2, rng=rng)
    params = GateParams(params.w_x, params.b_x, params.w_g, params.b_g, np.zeros(2), 0.0)
    alpha, gated = attention_gate_forward(x, g, params)
    np.testing.assert_array_equal(alpha, np.full((4, 4), 0.5))
    np.testing.assert_array_equal(gated, x / 2)


def test_attention_gate_zero_input():
    params = GateParams.random(2, 2, 3, rng=np.random.default_rng(4))
    alpha, gated = attention_gate_forward(np.zeros((2, 3, 3)), np.ones((2, 3, 3)), params)
    assert alpha.shape == (3, 3)
    assert np.all((alpha > 0) & (alpha < 1))
    assert not gated.any()


def test_attention_gate_hand_computed():
    x = np.array([[[1.0, -2.0], [0.0, 3.0]]])
    g = np.array([[[0.0, 1.0], [-1.0, -1.0]]])
    params = GateParams(
        w_x=np.ones((1, 1)),
        b_x=np.zeros(1),
        w_g=np.ones((1, 1)),
        b_g=np.zeros(1),
        psi_w=np.ones(1),
        psi_b=0.0,
    )
    alpha, gated = attention_gate_forward(x, g, params)
    expected_alpha = np.array([[sigmoid(1.0), 0.5], [0.5, sigmoid(2.0)]])
    np.testing.assert_allclose(alpha, expected_alpha)
    np.testing.assert_allclose(gated[0], expected_alpha * x[0])


def test_gate_invariants_on_random_draws():
    rng = np.random.default_rng(99)
    for _ in range(100):
        channels = int(rng.choice([2, 4, 6, 8]))
        h, w = (int(v) for v in rng.integers(1, 7, size=2))
        u = rng.normal(size=(channels, h, w))
        params = SqueezeParams.random(channels, 2, rng=rng)

        s = channel_gate(u, params)
        q = spatial_gate(u, params)
        assert np.all((s > 0) & (s < 1))
        assert np.all((q > 0) & (q < 1))
        for out in (cse_forward(u, params), sse_forward(u, params)):
            assert out.shape == u.shape
            assert np.all(np.abs(out) <= np.abs(u))
            assert np.array_equal(np.sign(out), np.sign(u))
        assert pscse_forward(u, params).shape == u.shape

        g = rng.normal(size=(3, h, w))
        gate = GateParams.random(channels, 3, 4, rng=rng, scale=0.5)
        alpha, gated = attention_gate_forward(u, g, gate)
        assert alpha.shape == (h, w)
        assert np.all((alpha > 0) & (alpha < 1))
        assert gated.shape == u.shape
        assert np.all(np.abs(gated) <= np.abs(u))
        assert np.array_equal(np.sign(gated), np.sign(u))


def test_shape_errors():
    params = SqueezeParams.zeros(4, 2)
    with pytest.raises(ShapeMismatchError):
        cse_forward(np.ones((3, 2, 2)), params)
    with pytest.raises(ShapeMismatchError):
        sse_forward(np.ones((2, 2)), params)
    with pytest.raises(InvariantError):
        SqueezeParams.zeros(6, 4)
    gate = GateParams.zeros(2, 2, 3)
    with pytest.raises(ShapeMismatchError):
        attention_gate_forward(np.ones((2, 4, 4)), np.ones((2, 2, 2)), gate)
    with pytest.raises(InvariantError):
        cse_forward(np.full((4, 1, 1), np.nan), params)


def test_resample_gating_nearest_neighbour():
    g = np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3)
    up = resample_gating(g, (6, 6))
    assert up.shape == (2, 6, 6)
    np.testing.assert_array_equal(up[:, ::2, ::2], g)
    np.testing.assert_array_equal(resample_gating(g, (3, 3)), g)


def test_demo_is_deterministic():
    first = run_demo(seed=0)
    assert first == run_demo(seed=0)
    assert first["maxout_enabled"] is True
    assert 0.0 < first["alpha"]["min"] <= first["alpha"]["max"] < 1.0
