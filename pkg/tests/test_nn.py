import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tempens.nn as nn
from tempens.errors import CacheMismatch, NonFiniteActivation
from tempens.gradcheck import finite_diff_check, relative_error, tensor_relative_error
from tempens.losses import RampSchedule, combined_loss
from tempens.nn import (NetworkConfig, backward, count_parameters, dropout, effective_weight, forward,
                        init_network, maxpool, maxpool_backward, softmax, weight_norm_grads)
from tempens.optim import AdamState, adam_step

CFG = NetworkConfig()
SMALL = NetworkConfig(conv1_maps=3, conv2_maps=4, input_shape=(1, 8, 8))


def _params(cfg=CFG, seed=0, dtype=np.float64):
    return init_network(cfg, np.random.default_rng(seed), dtype)


def _loss_fn(batch, seed=1, num_classes=10):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=batch)
    mask = np.arange(batch) % 2 == 0
    targets = rng.dirichlet(np.ones(num_classes), size=batch)
    schedule = RampSchedule(30.0, 80, 0.5)

    def loss(z):
        parts, grad = combined_loss(z, labels, mask, targets, 40, schedule)
        return parts.total, grad
    return loss


class TestConfigAndInit:
    def test_flatten_length(self):
        assert CFG.flatten_size == 32 * 7 * 7 == 1568

    def test_parameter_count_by_hand(self):
        by_hand = (16 * 1 * 3 * 3 + 16) + (32 * 16 * 3 * 3 + 32) + (10 * 1568 + 10)
        assert by_hand == 20490
        assert count_parameters(CFG) == by_hand
        assert count_parameters(CFG, include_scales=True) == by_hand + 16 + 32 + 10
        assert sum(p.size for p in _params().values()) == by_hand + 58

    def test_effective_weight_equals_direction_at_init(self):
        params = _params()
        for layer in nn.LAYERS:
            np.testing.assert_allclose(effective_weight(params, layer), params[f"{layer}.v"], rtol=1e-12)
            assert np.all(params[f"{layer}.b"] == 0)

    def test_same_seed_same_params(self):
        a, b = _params(seed=3), _params(seed=3)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_he_scale(self):
        v = _params(seed=1)["conv2.v"]
        assert abs(v.std() - np.sqrt(2 / 144)) < 0.01

    @pytest.mark.parametrize("kwargs", [{"dropout_rate": 1.0}, {"dropout_rate": -0.1}, {"conv1_maps": 0},
                                        {"input_shape": (1, 30, 30)}, {"kernel": 4}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            NetworkConfig(**kwargs)


class TestForward:
    def test_probabilities(self):
        x = np.random.default_rng(0).normal(size=(5, 1, 28, 28))
        probs, cache = forward(_params(), x, CFG, "eval")
        assert cache is None
        assert probs.shape == (5, 10)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs > 0)

    def test_eval_is_deterministic(self):
        x = np.random.default_rng(0).normal(size=(3, 1, 28, 28))
        a, _ = forward(_params(), x, CFG, "eval")
        b, _ = forward(_params(), x, CFG, "eval")
        np.testing.assert_array_equal(a, b)

    def test_zero_dropout_train_matches_eval(self):
        cfg = NetworkConfig(dropout_rate=0.0)
        params = _params(cfg)
        x = np.random.default_rng(0).normal(size=(3, 1, 28, 28))
        train, cache = forward(params, x, cfg, "train", np.random.default_rng(1))
        np.testing.assert_array_equal(train, forward(params, x, cfg, "eval")[0])
        assert cache is not None

    def test_non_finite_input_names_layer(self):
        x = np.zeros((1, 1, 28, 28))
        x[0, 0, 3, 3] = np.nan
        with pytest.raises(NonFiniteActivation, match="input"):
            forward(_params(), x, CFG, "eval")

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_overflow_names_layer(self):
        params = _params()
        params["dense.g"] = np.full(10, 1e308)
        with pytest.raises(NonFiniteActivation, match="dense"):
            forward(params, np.ones((1, 1, 28, 28)), CFG, "eval")

    def test_float32_stays_float32(self):
        probs, _ = forward(_params(dtype=np.float32), np.zeros((2, 1, 28, 28)), CFG, "eval")
        assert probs.dtype == np.float32


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50))
def test_softmax_rows_sum_to_one_for_extreme_logits(seed, scale):
    logits = np.random.default_rng(seed).uniform(-1, 1, size=(6, 10)) * scale
    logits[0] = [50, -50] * 5
    p = softmax(logits)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_maxpool_backward_routes_to_argmax():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 6, 6))
    out, arg = maxpool(x, 2)
    dout = rng.normal(size=out.shape)
    dx = maxpool_backward(dout, arg, 2)
    windows = dx.reshape(2, 3, 3, 2, 3, 2).sum(axis=(3, 5))
    np.testing.assert_allclose(windows, dout)
    assert np.count_nonzero(dx) == dout.size
    # every nonzero gradient sits on a window maximum
    picked = np.where(dx != 0, x, -np.inf).reshape(2, 3, 3, 2, 3, 2).max(axis=(3, 5))
    np.testing.assert_array_equal(picked, out)


def test_maxpool_ties_go_to_one_position():
    x = np.ones((1, 1, 2, 2))
    out, arg = maxpool(x, 2)
    dx = maxpool_backward(np.array([[[[3.0]]]]), arg, 2)
    assert dx.sum() == 3.0 and np.count_nonzero(dx) == 1


def test_dropout_expectation_matches_eval():
    rng = np.random.default_rng(0)
    a = rng.random((1, 50))
    probe = rng.normal(size=50)
    draws = np.array([(dropout(a, 0.5, rng, True)[0] @ probe)[0] for _ in range(10_000)])
    se = draws.std() / np.sqrt(len(draws))
    assert abs(draws.mean() - (a @ probe)[0]) < 3 * se
    out, keep = dropout(a, 0.5, rng, False)
    assert out is a and keep is None


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        params = _params()
        x = np.random.default_rng(0).normal(size=(2, 1, 28, 28))
        probs, cache = forward(params, x, CFG, "train", np.random.default_rng(0))
        grads = backward(params, cache, np.zeros_like(probs), CFG)
        assert set(grads) == set(params)
        assert all(not np.any(g) for g in grads.values())

    def test_cache_mismatch(self):
        params = _params()
        x = np.zeros((2, 1, 28, 28))
        with pytest.raises(CacheMismatch):
            backward(params, None, np.zeros((2, 10)), CFG)
        probs, cache = forward(params, x, CFG, "train", np.random.default_rng(0))
        with pytest.raises(CacheMismatch):
            backward(params, cache, np.zeros((3, 10)), CFG)
        with pytest.raises(CacheMismatch):
            backward(_params(SMALL), cache, np.zeros((2, 10)), SMALL)

    def test_logit_entry_point_matches_prob_entry_point(self):
        params = _params()
        x = np.random.default_rng(2).normal(size=(3, 1, 28, 28))
        probs, cache = forward(params, x, CFG, "train", np.random.default_rng(0))
        dprobs = np.random.default_rng(3).normal(size=probs.shape)
        a = backward(params, cache, dprobs, CFG)
        dlogits = probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))
        b = backward(params, cache, dlogits, CFG, wrt="logits")
        for k in a:
            np.testing.assert_allclose(a[k], b[k], rtol=1e-12, atol=1e-15)

    def test_weight_norm_decomposition(self):
        rng = np.random.default_rng(4)
        v, g, dw = rng.normal(size=(5, 7)), rng.uniform(0.5, 2, size=5), rng.normal(size=(5, 7))
        dv, dg = weight_norm_grads(v, g, dw)
        unit = v / np.linalg.norm(v, axis=1, keepdims=True)
        # dL/dg is dL/dw projected on the direction; dL/dv is orthogonal to v
        np.testing.assert_allclose(dg, (dw * unit).sum(axis=1), rtol=1e-12)
        np.testing.assert_allclose((dv * v).sum(axis=1), 0, atol=1e-12)
        expected_dv = (g / np.linalg.norm(v, axis=1))[:, None] * (dw - dg[:, None] * unit)
        np.testing.assert_allclose(dv, expected_dv, rtol=1e-12)

    def test_weight_norm_fd(self):
        rng = np.random.default_rng(5)
        v, g, probe = rng.normal(size=(3, 4)), rng.uniform(0.5, 2, size=3), rng.normal(size=(3, 4))

        def f(v, g):
            return float((g[:, None] * v / np.linalg.norm(v, axis=1, keepdims=True) * probe).sum())
        dv, dg = weight_norm_grads(v, g, probe)
        h = 1e-6
        num_dg = [(f(v, g + h * e) - f(v, g - h * e)) / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(dg, num_dg, rtol=1e-7)
        num_dv = np.zeros_like(v)
        for i in np.ndindex(v.shape):
            e = np.zeros_like(v)
            e[i] = h
            num_dv[i] = (f(v + e, g) - f(v - e, g)) / (2 * h)
        np.testing.assert_allclose(dv, num_dv, rtol=1e-6, atol=1e-9)


class TestGradCheck:
    def test_small_network_every_entry(self):
        rng = np.random.default_rng(0)
        batch = rng.normal(size=(4, *SMALL.input_shape))
        report = finite_diff_check(_params(SMALL), batch, _loss_fn(4), SMALL)
        assert report.passed, report.lines()
        assert all(c.entries_checked == _params(SMALL)[c.name].size for c in report.layers)

    def test_full_network_sampled(self):
        rng = np.random.default_rng(1)
        batch = rng.normal(size=(4, 1, 28, 28))
        report = finite_diff_check(_params(), batch, _loss_fn(4), CFG, max_entries=40)
        assert report.passed, report.lines()
        assert [c.name for c in report.layers] == list(_params())

    def test_flipped_kernel_mutation_is_caught(self, monkeypatch):
        def bad_conv_backward(x, w, dout, pad, need_input_grad=True):
            dx, dw, db = original(x, w, dout, pad, need_input_grad)
            if need_input_grad:  # forget to flip the kernel
                dx = nn.conv2d(dout, np.ascontiguousarray(w.transpose(1, 0, 2, 3)), None, pad)
            return dx, dw, db
        original = nn.conv2d_backward
        monkeypatch.setattr(nn, "conv2d_backward", bad_conv_backward)
        batch = np.random.default_rng(0).normal(size=(4, *SMALL.input_shape))
        report = finite_diff_check(_params(SMALL), batch, _loss_fn(4), SMALL)
        assert not report.passed
        assert "conv1.v" in report.failed()
        assert not any(name.startswith(("conv2", "dense")) for name in report.failed())

    def test_relative_error_conventions(self):
        assert relative_error(np.array([1e-13]), np.array([5e-13]))[0] == 0.0
        assert relative_error(np.array([1.0]), np.array([0.5]))[0] == 0.5
        assert tensor_relative_error(np.zeros(3), np.full(3, 1e-14)) == 0.0

    def test_constant_loss_passes(self):
        batch = np.zeros((2, *SMALL.input_shape))
        report = finite_diff_check(_params(SMALL), batch, lambda z: (1.0, np.zeros_like(z)), SMALL)
        assert report.passed
        assert all(c.max_rel_error == 0.0 for c in report.layers)


class TestAdam:
    def _state(self, params, **kw):
        return AdamState.for_params(params, **kw)

    def test_zero_gradient_leaves_params(self):
        params = _params(SMALL)
        new, state = adam_step(params, {k: np.zeros_like(p) for k, p in params.items()}, self._state(params))
        assert all(np.array_equal(new[k], params[k]) for k in params)
        assert state.step == 1

    def test_first_step_is_signed_learning_rate(self):
        params = {"w": np.array([1.0, -2.0, 0.5])}
        grads = {"w": np.array([0.3, -4.0, 1e-3])}
        new, _ = adam_step(params, grads, self._state(params, learning_rate=0.002))
        np.testing.assert_allclose(new["w"] - params["w"], -0.002 * np.sign(grads["w"]), rtol=1e-4)

    def test_matches_reference_recurrence(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=4)
        params, state = {"w": p.copy()}, self._state({"w": p})
        m = u = np.zeros(4)
        for k in range(1, 6):
            g = rng.normal(size=4)
            params, state = adam_step(params, {"w": g}, state)
            m, u = 0.9 * m + 0.1 * g, 0.99 * u + 0.01 * g * g
            p = p - 0.002 * (m / (1 - 0.9**k)) / (np.sqrt(u / (1 - 0.99**k)) + 1e-8)
            np.testing.assert_allclose(params["w"], p, rtol=1e-12)
        assert np.all(state.u["w"] >= 0)

    def test_deterministic_and_pure(self):
        params = _params(SMALL)
        grads = {k: np.random.default_rng(1).normal(size=p.shape) for k, p in params.items()}
        before = {k: p.copy() for k, p in params.items()}
        a, _ = adam_step(params, grads, self._state(params))
        b, _ = adam_step(params, grads, self._state(params))
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert all(np.array_equal(params[k], before[k]) for k in params)

    def test_weight_norm_rows_equal_gain_after_steps(self):
        params = _params(SMALL)
        state = self._state(params)
        rng = np.random.default_rng(2)
        for _ in range(3):
            grads = {k: rng.normal(size=p.shape) for k, p in params.items()}
            params, state = adam_step(params, grads, state)
        for layer in nn.LAYERS:
            w = effective_weight(params, layer)
            norms = np.linalg.norm(w.reshape(len(w), -1), axis=1)
            np.testing.assert_allclose(norms, np.abs(params[f"{layer}.g"]), rtol=1e-6)
