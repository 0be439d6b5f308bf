"""Unit checks for the numerical primitives: forward shapes, hand-derived
backward passes against finite differences, Adam behavior."""

import numpy as np
import pytest

from rnntlab import nn
from rnntlab.nn import LstmCellState, LstmLayerParams

from oracles import assert_grads_close, fd_grad_arrays


def random_layer(rng, input_dim=3, hidden_dim=4, proj_dim=2) -> LstmLayerParams:
    return LstmLayerParams.init(rng, input_dim, hidden_dim, proj_dim)


def random_state(rng, layer: LstmLayerParams) -> LstmCellState:
    return LstmCellState(
        rng.normal(size=layer.hidden_dim), rng.normal(size=layer.proj_dim)
    )


class TestActivations:
    def test_sigmoid_matches_definition_and_is_stable(self):
        x = np.array([-800.0, -5.0, 0.0, 5.0, 800.0])
        out = nn.sigmoid(x)
        assert np.all((out >= 0) & (out <= 1))
        assert out[2] == 0.5
        np.testing.assert_allclose(out[1], 1 / (1 + np.exp(5.0)), rtol=1e-12)
        assert out[0] == pytest.approx(0.0, abs=1e-300)
        assert out[4] == pytest.approx(1.0)

    def test_log_softmax_normalizes(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=7) * rng.uniform(0.1, 50)
            lp = nn.log_softmax(x)
            assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-12)

    def test_log_softmax_shift_invariant(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=5)
        np.testing.assert_allclose(
            nn.log_softmax(x), nn.log_softmax(x + 123.0), atol=1e-12
        )

    def test_log_softmax_empty_raises(self):
        with pytest.raises(ValueError):
            nn.log_softmax(np.array([]))


class TestAffineAndFfn:
    def test_affine_backward_matches_fd(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            w = rng.normal(size=(3, 4))
            b = rng.normal(size=3)
            x = rng.normal(size=(5, 4))
            coef = rng.normal(size=(5, 3))

            def loss():
                return float(np.sum(coef * nn.affine(x, w, b)))

            grad_x, grad_w, grad_b = nn.affine_backward(x, w, coef)
            fd_x, fd_w, fd_b = fd_grad_arrays(loss, [x, w, b])
            assert_grads_close(grad_x, fd_x, name="affine.x")
            assert_grads_close(grad_w, fd_w, name="affine.w")
            assert_grads_close(grad_b, fd_b, name="affine.b")

    def test_tanh_ffn_backward_matches_fd(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            w1 = rng.normal(size=(4, 3)) * 0.7
            b1 = rng.normal(size=4) * 0.3
            w2 = rng.normal(size=(2, 4)) * 0.7
            b2 = rng.normal(size=2) * 0.3
            x = rng.normal(size=3)
            coef = rng.normal(size=2)

            def loss():
                logits, _ = nn.tanh_ffn(x, w1, b1, w2, b2)
                return float(coef @ logits)

            _, hidden = nn.tanh_ffn(x, w1, b1, w2, b2)
            gx, gw1, gb1, gw2, gb2 = nn.tanh_ffn_backward(x, w1, w2, hidden, coef)
            fd = fd_grad_arrays(loss, [x, w1, b1, w2, b2])
            for got, want, name in zip(
                (gx, gw1, gb1, gw2, gb2), fd, ("x", "w1", "b1", "w2", "b2")
            ):
                assert_grads_close(got, want, name=f"ffn.{name}")

    def test_zero_weights_give_bias_logits(self):
        x = np.ones(3)
        b2 = np.array([1.5, -2.0])
        logits, _ = nn.tanh_ffn(
            x, np.zeros((4, 3)), np.array([0.3, 0, 0, -0.1]), np.zeros((2, 4)), b2
        )
        np.testing.assert_array_equal(logits, b2)


class TestLstmForward:
    def test_init_layout(self):
        rng = np.random.default_rng(4)
        layer = LstmLayerParams.init(rng, 3, 4, 2)
        assert layer.w_x.shape == (16, 3)
        assert layer.w_m.shape == (16, 2)
        assert layer.b.shape == (16,)
        assert layer.w_proj.shape == (4, 2)
        # Forget-gate bias +1, other biases zero.
        np.testing.assert_array_equal(layer.b[4:8], np.ones(4))
        np.testing.assert_array_equal(layer.b[:4], np.zeros(4))
        np.testing.assert_array_equal(layer.b[8:], np.zeros(8))
        assert np.abs(layer.w_x).max() <= 1 / np.sqrt(3)
        assert np.abs(layer.w_proj).max() <= 1 / np.sqrt(4)

    def test_step_shapes_and_state(self):
        rng = np.random.default_rng(5)
        layer = random_layer(rng)
        out, state = nn.lstm_step(layer, rng.normal(size=3), layer.zero_state())
        assert out.shape == (2,)
        assert state.cell.shape == (4,)
        assert state.memory.shape == (2,)
        np.testing.assert_array_equal(out, state.memory)

    def test_step_shape_errors_name_the_offender(self):
        rng = np.random.default_rng(6)
        layer = random_layer(rng)
        with pytest.raises(ValueError, match="input"):
            nn.lstm_step(layer, np.zeros(7), layer.zero_state())
        with pytest.raises(ValueError, match="state.cell"):
            nn.lstm_step(layer, np.zeros(3), LstmCellState(np.zeros(9), np.zeros(2)))
        with pytest.raises(ValueError, match="state.memory"):
            nn.lstm_step(layer, np.zeros(3), LstmCellState(np.zeros(4), np.zeros(9)))

    def test_sequence_matches_repeated_steps(self):
        rng = np.random.default_rng(7)
        layer = random_layer(rng)
        xs = rng.normal(size=(6, 3))
        state = random_state(rng, layer)
        outs, final, _ = nn.lstm_sequence(layer, xs, state.copy())
        s = state.copy()
        for t in range(6):
            out, s = nn.lstm_step(layer, xs[t], s)
            np.testing.assert_allclose(outs[t], out, atol=1e-14)
        np.testing.assert_allclose(final.cell, s.cell, atol=1e-14)
        np.testing.assert_allclose(final.memory, s.memory, atol=1e-14)

    def test_empty_sequence_passes_state_through(self):
        rng = np.random.default_rng(8)
        layer = random_layer(rng)
        state = random_state(rng, layer)
        outs, final, caches = nn.lstm_sequence(layer, np.zeros((0, 3)), state)
        assert outs.shape == (0, 2)
        assert caches == []
        np.testing.assert_array_equal(final.cell, state.cell)
        assert final.cell is not state.cell

    def test_contraction_under_repeated_identical_input(self):
        # Small recurrent weights make the map a contraction: successive state
        # differences shrink monotonically.
        rng = np.random.default_rng(9)
        layer = random_layer(rng, input_dim=2, hidden_dim=3, proj_dim=2)
        layer.w_m *= 0.1
        layer.w_x *= 0.1
        x = np.array([0.3, -0.2])
        state = LstmCellState(rng.normal(size=3), rng.normal(size=2))
        diffs = []
        prev = np.concatenate([state.cell, state.memory])
        for _ in range(30):
            _, state = nn.lstm_step(layer, x, state)
            cur = np.concatenate([state.cell, state.memory])
            diffs.append(np.linalg.norm(cur - prev))
            prev = cur
        tail = diffs[2:]
        assert all(b < a for a, b in zip(tail, tail[1:]))
        assert tail[-1] < 1e-3


class TestLstmBackward:
    def test_step_backward_matches_fd_over_draws(self):
        rng = np.random.default_rng(10)
        for draw in range(50):
            dims = rng.integers(1, 5, size=3)
            layer = random_layer(rng, int(dims[0]), int(dims[1]), int(dims[2]))
            x = rng.normal(size=layer.input_dim)
            state = random_state(rng, layer)
            w_out = rng.normal(size=layer.proj_dim)
            w_cell = rng.normal(size=layer.hidden_dim)

            def loss():
                out, new_state = nn.lstm_step(layer, x, state)
                return float(w_out @ out + w_cell @ new_state.cell)

            _, _, cache = nn.lstm_step_cached(layer, x, state)
            grads = LstmLayerParams.zeros_like(layer)
            grad_x, grad_m_prev, grad_c_prev = nn.lstm_step_backward(
                layer, cache, w_out, w_cell, grads
            )
            arrays = [layer.w_x, layer.w_m, layer.b, layer.w_proj, x,
                      state.cell, state.memory]
            fd = fd_grad_arrays(loss, arrays)
            got = [grads.w_x, grads.w_m, grads.b, grads.w_proj, grad_x,
                   grad_c_prev, grad_m_prev]
            names = ["w_x", "w_m", "b", "w_proj", "x", "c_prev", "m_prev"]
            for a, n, name in zip(got, fd, names):
                assert_grads_close(a, n, name=f"draw{draw}.{name}")

    def test_sequence_backward_matches_fd(self):
        rng = np.random.default_rng(11)
        for draw in range(8):
            layer = random_layer(rng, 3, 4, 2)
            t_len = int(rng.integers(1, 6))
            xs = rng.normal(size=(t_len, 3))
            state = random_state(rng, layer)
            coef = rng.normal(size=(t_len, 2))
            fin_c = rng.normal(size=4)
            fin_m = rng.normal(size=2)

            def loss():
                outs, final, _ = nn.lstm_sequence(layer, xs, state)
                return float(
                    np.sum(coef * outs) + fin_c @ final.cell + fin_m @ final.memory
                )

            _, _, caches = nn.lstm_sequence(layer, xs, state)
            grads = LstmLayerParams.zeros_like(layer)
            grad_xs, grad_init = nn.lstm_sequence_backward(
                layer, caches, coef, LstmCellState(fin_c, fin_m), grads
            )
            arrays = [layer.w_x, layer.w_m, layer.b, layer.w_proj, xs,
                      state.cell, state.memory]
            fd = fd_grad_arrays(loss, arrays)
            got = [grads.w_x, grads.w_m, grads.b, grads.w_proj, grad_xs,
                   grad_init.cell, grad_init.memory]
            names = ["w_x", "w_m", "b", "w_proj", "xs", "init.cell", "init.memory"]
            for a, n, name in zip(got, fd, names):
                assert_grads_close(a, n, name=f"draw{draw}.{name}")


class TestAdam:
    def test_first_step_moves_by_lr_times_sign(self):
        params = {"p": np.array([1.0, -2.0, 3.0])}
        grads = {"p": np.array([0.5, -0.25, 1e-3])}
        state = nn.adam_init(params, lr=0.01)
        before = params["p"].copy()
        nn.adam_step(params, grads, state)
        delta = params["p"] - before
        np.testing.assert_allclose(delta, -0.01 * np.sign(grads["p"]), rtol=1e-4)

    def test_constant_gradient_moment_estimates(self):
        g = np.array([0.3, -0.7])
        params = {"p": np.zeros(2)}
        grads = {"p": g}
        state = nn.adam_init(params, lr=0.0)
        for _ in range(100):
            nn.adam_step(params, grads, state)
        m_hat = state.m["p"] / (1 - state.beta1**state.step)
        v_hat = state.v["p"] / (1 - state.beta2**state.step)
        np.testing.assert_allclose(m_hat, g, rtol=0.01)
        np.testing.assert_allclose(v_hat, g * g, rtol=0.01)

    def test_updates_are_deterministic_and_in_place(self):
        rng = np.random.default_rng(12)
        runs = []
        for _ in range(2):
            params = {"a": np.ones(3), "b": np.full((2, 2), 0.5)}
            state = nn.adam_init(params, lr=0.05)
            r = np.random.default_rng(99)
            ref_a = params["a"]
            for _ in range(10):
                grads = {"a": r.normal(size=3), "b": r.normal(size=(2, 2))}
                nn.adam_step(params, grads, state)
            assert params["a"] is ref_a
            runs.append((params["a"].copy(), params["b"].copy()))
        np.testing.assert_array_equal(runs[0][0], runs[1][0])
        np.testing.assert_array_equal(runs[0][1], runs[1][1])

    def test_key_mismatch_raises(self):
        params = {"a": np.ones(1)}
        state = nn.adam_init(params)
        with pytest.raises(ValueError, match="keys"):
            nn.adam_step(params, {"b": np.ones(1)}, state)


class TestClipping:
    def test_clip_scales_to_max_norm(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([0.0, 4.0])}
        _, norm = nn.clip_by_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        assert nn.global_norm(grads) == pytest.approx(1.0)
        np.testing.assert_allclose(grads["a"], [0.6, 0.0])

    def test_no_clip_below_threshold(self):
        grads = {"a": np.array([0.3, 0.4])}
        _, norm = nn.clip_by_global_norm(grads, 5.0)
        assert norm == pytest.approx(0.5)
        np.testing.assert_array_equal(grads["a"], [0.3, 0.4])
