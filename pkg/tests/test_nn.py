"""Building blocks against hand-derived values and finite differences."""

import numpy as np
import pytest

from worldlab import nn
from worldlab import tensor as T
from worldlab.tensor import Tensor


def t(arr):
    return Tensor(np.asarray(arr, dtype=np.float32))


class TestMultiHeadAttention:
    def test_identical_keys_average_to_shared_value(self):
        q = t([[1.0, 0.5, -0.5, 2.0]])
        k = t([[0.3, 0.3, 0.3, 0.3]] * 2)
        v = t([[5.0, -1.0, 2.0, 0.0]] * 2)
        out = nn.multi_head_attention(q, k, v, n_heads=1)
        np.testing.assert_allclose(out.data, v.data[:1], atol=1e-6)

    def test_hand_evaluated_softmax_weights(self):
        # scores engineered to (0, ln 3): weights (1/4, 3/4)
        d = 4
        q = t([[1.0, 0.0, 0.0, 0.0]])
        k1 = [0.0, 0.0, 0.0, 0.0]
        k2 = [float(np.log(3.0)) * np.sqrt(d), 0.0, 0.0, 0.0]
        v = t([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        out = nn.multi_head_attention(q, t([k1, k2]), v, n_heads=1)
        np.testing.assert_allclose(out.data, [[0.25, 0.75, 0.0, 0.0]], atol=1e-6)

    def test_mask_zeroes_key_and_renormalizes(self):
        rng = np.random.default_rng(3)
        q = t(rng.normal(size=(2, 4)))
        k = t(rng.normal(size=(3, 4)))
        v = t(rng.normal(size=(3, 4)))
        mask = np.zeros((2, 3), dtype=bool)
        mask[:, 1] = True
        masked = nn.multi_head_attention(q, k, v, n_heads=2, mask=mask)
        dropped = nn.multi_head_attention(
            q, t(k.data[[0, 2]]), t(v.data[[0, 2]]), n_heads=2)
        np.testing.assert_allclose(masked.data, dropped.data, atol=1e-6)

    def test_shape_errors(self):
        q = t(np.zeros((2, 6)))
        with pytest.raises(nn.ConfigError):
            nn.multi_head_attention(q, q, q, n_heads=4)  # 6 % 4
        with pytest.raises(nn.ConfigError):
            nn.multi_head_attention(q, t(np.zeros((2, 4))), t(np.zeros((2, 4))), 2)
        with pytest.raises(nn.ConfigError):
            nn.multi_head_attention(q, q, q, 2, mask=np.zeros((3, 3), dtype=bool))

    def test_output_shape_matches_queries(self):
        rng = np.random.default_rng(0)
        q, kv = t(rng.normal(size=(5, 8))), t(rng.normal(size=(7, 8)))
        assert nn.multi_head_attention(q, kv, kv, 4).shape == (5, 8)


class TestDecoderBlock:
    def test_empty_context_is_skipped_and_finite(self, rng):
        block = nn.DecoderBlock(rng, 8, 2, 16)
        x = t(rng.normal(size=(3, 8)))
        out = block(x, t(np.zeros((0, 8))))
        assert np.isfinite(out.data).all()
        same = block(x, None)
        np.testing.assert_array_equal(out.data, same.data)

    def test_deterministic_forward(self, rng):
        block = nn.DecoderBlock(rng, 8, 2, 16)
        x = t(rng.normal(size=(4, 8)))
        c = t(rng.normal(size=(2, 8)))
        assert np.array_equal(block(x, c).data, block(x, c).data)

    def test_finite_difference_gradients(self, rng):
        block = nn.DecoderBlock(rng, 8, 2, 16)
        x = t(rng.normal(size=(4, 8)))
        c = t(rng.normal(size=(3, 8)))
        err = nn.grad_check(lambda: T.tsum(block(x, c)), block.parameters())
        assert err <= 1e-3

    def test_self_attention_can_be_disabled(self, rng):
        block = nn.DecoderBlock(rng, 8, 2, 16, self_attention=False)
        assert not hasattr(block, "self_attn")
        x = t(rng.normal(size=(3, 8)))
        c = t(rng.normal(size=(2, 8)))
        assert block(x, c).shape == (3, 8)


class TestLSTMCell:
    def test_zero_weights_closed_form(self, rng):
        cell = nn.LSTMCell(rng, 4, 3)
        for p in cell.parameters().values():
            p.data[:] = 0.0
        c0 = np.array([[2.0, -1.0, 0.5]], dtype=np.float32)
        h, c = cell(t(np.ones((1, 4))), t(np.zeros((1, 3))), t(c0))
        np.testing.assert_allclose(c.data, 0.5 * c0, atol=1e-7)
        np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c0), atol=1e-7)

    def test_zero_cell_and_zero_write_path(self, rng):
        cell = nn.LSTMCell(rng, 4, 3)
        for p in cell.parameters().values():
            p.data[:] = 0.0
        h, c = cell(t(np.zeros((1, 4))), t(np.zeros((1, 3))), t(np.zeros((1, 3))))
        np.testing.assert_array_equal(c.data, np.zeros((1, 3)))
        np.testing.assert_array_equal(h.data, np.zeros((1, 3)))

    def test_finite_difference_gradients(self, rng):
        cell = nn.LSTMCell(rng, 6, 5)
        x = t(rng.normal(size=(4, 6)))
        h0 = t(rng.normal(size=(4, 5)))
        c0 = t(rng.normal(size=(4, 5)))
        err = nn.grad_check(lambda: T.tsum(cell(x, h0, c0)[0]),
                            cell.parameters())
        assert err <= 1e-3

    def test_dim_mismatch(self, rng):
        cell = nn.LSTMCell(rng, 4, 3)
        with pytest.raises(nn.ConfigError):
            cell(t(np.zeros((1, 5))), t(np.zeros((1, 3))), t(np.zeros((1, 3))))


class TestAdamW:
    def _param(self, value=1.0):
        return {"w": Tensor(np.array([value], dtype=np.float32), requires_grad=True)}

    def test_first_step_closed_form(self):
        params = self._param(0.0)
        params["w"].grad = np.array([1.0], dtype=np.float32)
        opt = nn.AdamW(params, lr=1e-4)
        opt.step()
        # bias-corrected m_hat = v_hat = 1 -> delta = -lr / (1 + eps)
        assert params["w"].data[0] == pytest.approx(-1e-4, rel=1e-4)
        assert opt.step_count == 1

    def test_zero_gradient_zero_decay_is_identity(self):
        params = self._param(0.731)
        params["w"].grad = np.zeros(1, dtype=np.float32)
        before = params["w"].data.copy()
        nn.AdamW(params, lr=1e-2).step()
        np.testing.assert_array_equal(params["w"].data, before)

    def test_decoupled_decay_only(self):
        params = self._param(1.0)
        params["w"].grad = np.zeros(1, dtype=np.float32)
        nn.AdamW(params, lr=1e-4, weight_decay=0.01).step()
        assert params["w"].data[0] == pytest.approx(1.0 - 1e-6, abs=1e-7)

    def test_non_finite_gradient_names_parameter(self):
        params = {"layer.weight": Tensor(np.ones(2, dtype=np.float32), requires_grad=True)}
        params["layer.weight"].grad = np.array([np.nan, 0.0], dtype=np.float32)
        with pytest.raises(nn.NonFiniteGradient, match="layer.weight"):
            nn.AdamW(params).step()

    def test_step_counter_strictly_increases(self):
        params = self._param()
        opt = nn.AdamW(params)
        for expected in (1, 2, 3):
            params["w"].grad = np.ones(1, dtype=np.float32)
            opt.step()
            assert opt.step_count == expected

    def test_moment_shapes_match_parameters(self, rng):
        lin = nn.Linear(rng, 3, 2)
        opt = nn.AdamW(lin.parameters())
        for name, p in lin.parameters().items():
            assert opt.m[name].shape == p.data.shape
            assert opt.v[name].shape == p.data.shape


class TestLosses:
    def test_bce_perfect_prediction_near_zero(self):
        p = t([1.0, 0.0, 1.0])
        loss = nn.bce_loss(p, np.array([1.0, 0.0, 1.0]))
        assert float(loss.data) <= 1e-6

    def test_bce_coin_flip_is_ln2(self):
        loss = nn.bce_loss(t([0.5] * 8), np.zeros(8))
        assert float(loss.data) == pytest.approx(np.log(2.0), abs=1e-6)

    def test_cross_entropy_uniform_is_ln10(self):
        loss = nn.cross_entropy_loss(t(np.zeros((4, 10))), np.zeros(4, dtype=int))
        assert float(loss.data) == pytest.approx(np.log(10.0), abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(nn.ConfigError):
            nn.bce_loss(t([0.5, 0.5]), np.array([1.0]))
        with pytest.raises(nn.ConfigError):
            nn.cross_entropy_loss(t(np.zeros((2, 4))), np.zeros(3, dtype=int))

    def test_bce_loss_nonnegative_on_random_inputs(self, rng):
        p = t(rng.random(16))
        targets = rng.integers(0, 2, 16).astype(np.float32)
        assert float(nn.bce_loss(p, targets).data) >= 0.0


class TestGradCheck:
    def test_square_function_exact(self):
        w = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
        err = nn.grad_check(lambda: T.tsum(T.mul(w, w)), {"w": w})
        assert err < 1e-7

    def test_linear_bce_within_f32_tolerance(self, rng):
        lin = nn.Linear(rng, 5, 3)
        x = t(rng.normal(size=(4, 5)))
        targets = rng.integers(0, 2, size=(4, 3)).astype(np.float32)
        err = nn.grad_check(
            lambda: nn.bce_loss(T.sigmoid(lin(x)), targets), lin.parameters())
        assert err <= 1e-3

    def test_barrier_gradient_matches_frozen_occurrence(self):
        # analytic grad of sum(stop(w) * w) is the stopped value; the
        # numeric reference freezes the stopped occurrence explicitly
        w = Tensor(np.array([3.0], dtype=np.float32), requires_grad=True)
        loss = T.tsum(T.mul(T.stop_gradient(w), w))
        loss.backward()
        analytic = w.grad.copy()
        np.testing.assert_allclose(analytic, [3.0])
        frozen = Tensor(w.data.copy())
        w.zero_grad()
        err = nn.grad_check(lambda: T.tsum(T.mul(frozen, w)), {"w": w})
        assert err < 1e-6

    def test_parameters_restored_after_check(self, rng):
        lin = nn.Linear(rng, 3, 2)
        before = {k: p.data.copy() for k, p in lin.parameters().items()}
        x = t(rng.normal(size=(2, 3)))
        nn.grad_check(lambda: T.tsum(lin(x)), lin.parameters())
        for k, p in lin.parameters().items():
            np.testing.assert_array_equal(p.data, before[k])
            assert p.data.dtype == np.float32
