"""Model-level checks: encoder streaming semantics, prediction-network state
boundaries, joint consistency, and end-to-end gradients through the loss."""

import numpy as np
import pytest

from rnntlab.loss import rnnt_forward, rnnt_grad_logits
from rnntlab.model import (
    ModelConfig,
    TransducerModel,
    analytic_param_count,
    time_reduce,
)

from oracles import assert_grads_close, fd_grad_arrays

TINY = ModelConfig(
    feature_dim=2,
    encoder_layers=2,
    encoder_hidden=3,
    encoder_proj=2,
    time_reduction_factor=2,
    time_reduction_after=1,
    prediction_layers=1,
    prediction_hidden=3,
    prediction_proj=2,
    joint_dim=2,
    vocab_size=2,
    embedding_dim=2,
)


class TestConfig:
    def test_defaults_are_valid(self):
        cfg = ModelConfig()
        assert cfg.blank_id == 16
        assert cfg.sos_id == 17
        assert cfg.num_symbols == 17

    def test_add_mode_requires_matching_projections(self):
        with pytest.raises(ValueError, match="add"):
            ModelConfig(joint_mode="add", encoder_proj=8, prediction_proj=4)
        ModelConfig(joint_mode="add", encoder_proj=8, prediction_proj=8)

    def test_reduction_placement_validated(self):
        with pytest.raises(ValueError, match="time_reduction_after"):
            ModelConfig(encoder_layers=2, time_reduction_after=2)
        ModelConfig(encoder_layers=1, time_reduction_factor=1, time_reduction_after=1)

    def test_param_count_matches_hand_formula(self):
        model = TransducerModel.init(ModelConfig(), seed=0)
        # Encoder layer 0 (input 8), layer 1 (input 32 after 2x reduction of
        # 16-wide projections), prediction layer (input 8), 17x8 embedding,
        # joint 16x32 + 16 and 17x16 + 17.
        expect = (
            (4 * 32 * 8 + 4 * 32 * 16 + 4 * 32 + 32 * 16)
            + (4 * 32 * 32 + 4 * 32 * 16 + 4 * 32 + 32 * 16)
            + (4 * 32 * 8 + 4 * 32 * 16 + 4 * 32 + 32 * 16)
            + 17 * 8
            + (16 * 32 + 16)
            + (17 * 16 + 17)
        )
        assert model.param_count() == expect
        assert analytic_param_count(ModelConfig()) == expect

    def test_init_is_seed_deterministic(self):
        a = TransducerModel.init(TINY, seed=7)
        b = TransducerModel.init(TINY, seed=7)
        for key in a.params:
            np.testing.assert_array_equal(a.params[key], b.params[key])


class TestEncoder:
    def test_time_reduce_shapes(self):
        frames = np.arange(14.0).reshape(7, 2)
        reduced = time_reduce(frames, 2)
        assert reduced.shape == (3, 4)
        np.testing.assert_array_equal(reduced[0], [0, 1, 2, 3])
        np.testing.assert_array_equal(time_reduce(frames, 1), frames)

    def test_encode_frame_count_halves(self):
        model = TransducerModel.init(TINY, seed=0)
        rng = np.random.default_rng(0)
        out = model.encode(rng.normal(size=(7, 2)))
        assert out.frames.shape == (3, 2)
        out = model.encode(rng.normal(size=(8, 2)))
        assert out.frames.shape == (4, 2)

    def test_encode_empty_input_passes_state_through(self):
        model = TransducerModel.init(TINY, seed=1)
        state = model.zero_state()
        out = model.encode(np.zeros((0, 2)), state.encoder)
        assert out.frames.shape == (0, 2)
        for got, want in zip(out.final_states, state.encoder):
            np.testing.assert_array_equal(got.cell, want.cell)

    def test_chunked_encode_matches_single_call(self):
        # Split points that are multiples of the reduction factor keep the
        # pairing aligned, so outputs and carried states agree exactly.
        model = TransducerModel.init(TINY, seed=2)
        rng = np.random.default_rng(3)
        feats = rng.normal(size=(12, 2))
        whole = model.encode(feats)
        for split in (2, 4, 6, 8, 10):
            first = model.encode(feats[:split])
            second = model.encode(feats[split:], first.final_states)
            stitched = np.vstack([first.frames, second.frames])
            np.testing.assert_allclose(stitched, whole.frames, atol=1e-12)
            for got, want in zip(second.final_states, whole.final_states):
                np.testing.assert_allclose(got.cell, want.cell, atol=1e-12)
                np.testing.assert_allclose(got.memory, want.memory, atol=1e-12)

    def test_trailing_partial_chunk_still_advances_first_layer(self):
        model = TransducerModel.init(TINY, seed=4)
        rng = np.random.default_rng(5)
        feats = rng.normal(size=(7, 2))
        whole = model.encode(feats)
        first = model.encode(feats[:6])
        second = model.encode(feats[6:], first.final_states)
        assert second.frames.shape == (0, 2)
        np.testing.assert_allclose(
            second.final_states[0].cell, whole.final_states[0].cell, atol=1e-12
        )


class TestPrediction:
    def test_row_count_and_empty_transcript(self):
        model = TransducerModel.init(TINY, seed=6)
        rows, finals = model.predict([0, 1, 0])
        assert rows.shape == (4, 2)
        rows0, finals0 = model.predict([])
        assert rows0.shape == (1, 2)
        # With no consumed transcript the resumable state is the initial one.
        np.testing.assert_array_equal(finals0[0].cell, np.zeros(3))

    def test_blank_and_out_of_range_tokens_rejected(self):
        model = TransducerModel.init(TINY, seed=7)
        with pytest.raises(ValueError, match="label range"):
            model.predict([TINY.blank_id])
        with pytest.raises(ValueError, match="label range"):
            model.predict([-1])

    def test_causality_suffix_change_leaves_prefix_rows(self):
        model = TransducerModel.init(TINY, seed=8)
        rows_a, _ = model.predict([0, 1, 1, 0])
        rows_b, _ = model.predict([0, 1, 0, 1])
        np.testing.assert_allclose(rows_a[:3], rows_b[:3], atol=1e-15)
        assert not np.allclose(rows_a[3], rows_b[3])

    def test_state_dependence_beyond_last_token(self):
        model = TransducerModel.init(TINY, seed=9)
        rows_a, _ = model.predict([0, 0, 1])
        rows_b, _ = model.predict([1, 1, 1])
        assert not np.allclose(rows_a[-1], rows_b[-1])

    def test_resume_equals_concatenated_teacher_forcing(self):
        model = TransducerModel.init(TINY, seed=10)
        y1, y2 = [0, 1, 1], [1, 0]
        full_rows, _ = model.predict(y1 + y2)
        head_rows, head_states = model.predict(y1)
        tail_rows, _ = model.predict(y2, head_states, init_token=y1[-1])
        np.testing.assert_allclose(tail_rows, full_rows[len(y1):], atol=1e-12)
        np.testing.assert_allclose(tail_rows[0], head_rows[-1], atol=1e-12)


class TestJoint:
    def test_lattice_matches_per_cell_joint(self):
        model = TransducerModel.init(TINY, seed=11)
        rng = np.random.default_rng(12)
        result = model.forward_lattice(rng.normal(size=(6, 2)), [0, 1])
        cache = result.cache
        for t in range(result.lattice.num_frames):
            for u in range(result.lattice.num_labels + 1):
                np.testing.assert_allclose(
                    result.lattice.logits[t, u],
                    model.joint(cache.enc_frames[t], cache.pred_rows[u]),
                    atol=1e-12,
                )

    def test_zero_prediction_params_make_rows_constant_in_u(self):
        model = TransducerModel.init(TINY, seed=13)
        for key in model.params:
            if key.startswith("prediction.") or key.startswith("embedding."):
                model.params[key][...] = 0.0
        rng = np.random.default_rng(14)
        result = model.forward_lattice(rng.normal(size=(4, 2)), [0, 1])
        logits = result.lattice.logits
        for u in range(1, logits.shape[1]):
            np.testing.assert_allclose(logits[:, u], logits[:, 0], atol=1e-14)

    def test_add_mode_runs(self):
        cfg = ModelConfig(
            feature_dim=2,
            encoder_layers=2,
            encoder_hidden=3,
            encoder_proj=2,
            prediction_layers=1,
            prediction_hidden=3,
            prediction_proj=2,
            joint_dim=2,
            vocab_size=2,
            embedding_dim=2,
            joint_mode="add",
        )
        model = TransducerModel.init(cfg, seed=15)
        rng = np.random.default_rng(16)
        result = model.forward_lattice(rng.normal(size=(4, 2)), [0])
        assert result.lattice.logits.shape == (2, 2, 3)
        combined = model.joint(result.cache.enc_frames[0], result.cache.pred_rows[0])
        np.testing.assert_allclose(result.lattice.logits[0, 0], combined, atol=1e-12)


class TestFullStackGradients:
    def _loss_fn(self, model, feats, tokens, init_state=None):
        result = model.forward_lattice(feats, tokens, init_state)
        loss, _ = rnnt_forward(result.lattice, tokens)
        return loss, result

    def test_parameter_gradients_match_fd(self):
        rng = np.random.default_rng(17)
        for draw in range(4):
            model = TransducerModel.init(TINY, seed=100 + draw)
            feats = rng.normal(size=(5, 2))
            tokens = [int(t) for t in rng.integers(0, 2, size=2)]

            def loss():
                return self._loss_fn(model, feats, tokens)[0]

            _, result = self._loss_fn(model, feats, tokens)
            _, dp = rnnt_forward(result.lattice, tokens)
            grad_logits = rnnt_grad_logits(result.lattice, tokens, dp)
            grads, _ = model.backward_lattice(result, grad_logits)
            names = sorted(model.params)
            fd = fd_grad_arrays(loss, [model.params[n] for n in names])
            for name, numeric in zip(names, fd):
                assert_grads_close(grads[name], numeric, name=f"draw{draw}.{name}")

    def test_initial_state_gradient_matches_directional_fd(self):
        rng = np.random.default_rng(18)
        model = TransducerModel.init(TINY, seed=200)
        feats = rng.normal(size=(6, 2))
        tokens = [1, 0]
        state = model.zero_state()
        for s in state.encoder + state.prediction:
            s.cell[...] = rng.normal(size=s.cell.shape) * 0.5
            s.memory[...] = rng.normal(size=s.memory.shape) * 0.5
        _, result = self._loss_fn(model, feats, tokens, state)
        _, dp = rnnt_forward(result.lattice, tokens)
        grad_logits = rnnt_grad_logits(result.lattice, tokens, dp)
        _, grad_init = model.backward_lattice(result, grad_logits)

        direction = model.zero_state()
        analytic = 0.0
        for ds, gs, ss in zip(
            direction.encoder + direction.prediction,
            grad_init.encoder + grad_init.prediction,
            state.encoder + state.prediction,
        ):
            ds.cell[...] = rng.normal(size=ds.cell.shape)
            ds.memory[...] = rng.normal(size=ds.memory.shape)
            analytic += float(gs.cell @ ds.cell + gs.memory @ ds.memory)

        eps = 1e-6
        losses = []
        for sign in (+1.0, -1.0):
            shifted = state.copy()
            for ss, ds in zip(
                shifted.encoder + shifted.prediction,
                direction.encoder + direction.prediction,
            ):
                ss.cell += sign * eps * ds.cell
                ss.memory += sign * eps * ds.memory
            losses.append(self._loss_fn(model, feats, tokens, shifted)[0])
        numeric = (losses[0] - losses[1]) / (2 * eps)
        assert analytic == pytest.approx(numeric, rel=1e-5, abs=1e-8)
        assert abs(analytic) > 1e-8  # the state genuinely influences the loss

    def test_forward_lattice_final_state_bookkeeping(self):
        model = TransducerModel.init(TINY, seed=300)
        rng = np.random.default_rng(19)
        feats = rng.normal(size=(6, 2))
        result = model.forward_lattice(feats, [0, 1, 1])
        assert result.final_state.last_token == 1
        empty = model.forward_lattice(feats, [])
        assert empty.final_state.last_token == TINY.sos_id

    def test_carryover_equals_concatenation(self):
        # State+token carryover reproduces the concatenated utterance exactly:
        # the lattice of (x2, y2) started from (x1, y1)'s final state matches
        # the corresponding block of the concatenated lattice.
        model = TransducerModel.init(TINY, seed=301)
        rng = np.random.default_rng(20)
        x1 = rng.normal(size=(6, 2))
        x2 = rng.normal(size=(4, 2))
        y1, y2 = [0, 1], [1, 0, 1]
        joined = model.forward_lattice(np.vstack([x1, x2]), y1 + y2)
        first = model.forward_lattice(x1, y1)
        second = model.forward_lattice(x2, y2, first.final_state)
        t1 = first.lattice.num_frames
        block = joined.lattice.logits[t1:, len(y1):, :]
        np.testing.assert_allclose(second.lattice.logits, block, atol=1e-12)
