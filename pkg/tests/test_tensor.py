"""Tensor, tape, and per-op gradient checks against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fskgc.errors import ContractError, NumericError, ShapeError
from fskgc.numkit import (
    AdamState, Tape, Tensor, adam_step, add, backward, concat, cosine, dot,
    gather, grad, layer_norm, log, matmul, mul, relu, reshape, segment_sum,
    set_checked, sigmoid, softmax, sqnorm, stack, sub, tanh, tmean,
    transpose, tsum,
)

from conftest import check_gradients


class TestForward:
    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(0.0)).item() == pytest.approx(0.5, abs=1e-15)

    def test_softmax_uniform_under_equal_logits(self):
        p = softmax(Tensor([2.7, 2.7, 2.7]))
        np.testing.assert_allclose(p.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_sqnorm_3_4(self):
        assert sqnorm(Tensor([3.0, 4.0])).item() == pytest.approx(25.0)

    def test_matmul_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_gather_out_of_range_raises(self):
        with pytest.raises(ShapeError):
            gather(Tensor(np.ones((3, 2))), [0, 3])

    def test_checked_mode_rejects_nonfinite(self):
        set_checked(True)
        try:
            with pytest.raises(NumericError):
                log(Tensor([-1.0]))
            with pytest.raises(NumericError):
                Tensor([np.nan])
        finally:
            set_checked(False)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_softmax_rows_sum_to_one(self, logits):
        p = softmax(Tensor(logits))
        assert abs(p.data.sum() - 1.0) < 1e-12
        assert np.all(p.data >= 0)

    @given(st.floats(-700, 700))
    @settings(max_examples=50, deadline=None)
    def test_sigmoid_in_open_interval(self, x):
        y = sigmoid(Tensor(x)).item()
        assert 0.0 < y < 1.0 or (x < -700 or x > 700)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape():
            backward(tsum(x))
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_dot_self_gradient_is_2x(self):
        x = Tensor([2.0, -1.0], requires_grad=True)
        with Tape():
            backward(dot(x, x))
        np.testing.assert_allclose(x.grad, [4.0, -2.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            y = mul(x, 2.0)
            with pytest.raises(ContractError):
                backward(y)

    def test_disconnected_loss_rejected(self):
        x = Tensor(1.0, requires_grad=True)
        with pytest.raises(ContractError):
            backward(x)

    def test_repeated_backward_accumulates(self):
        x = Tensor([1.0, 1.0], requires_grad=True)
        with Tape():
            loss = tsum(mul(x, 3.0))
            backward(loss)
            backward(loss)
        np.testing.assert_allclose(x.grad, [6.0, 6.0])

    def test_grad_does_not_touch_buffers(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            loss = tsum(mul(x, x))
            (g,) = grad(loss, [x])
        np.testing.assert_allclose(g, [2.0, 4.0])
        assert x.grad is None

    def test_determinism_bit_identical(self):
        def run():
            r = np.random.default_rng(7)
            a = Tensor(r.normal(size=(4, 4)), requires_grad=True)
            b = Tensor(r.normal(size=(4, 4)), requires_grad=True)
            with Tape():
                loss = tsum(tanh(matmul(a, b)))
                backward(loss)
            return loss.data.copy(), a.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1.tobytes() == l2.tobytes()
        assert g1.tobytes() == g2.tobytes()


class TestGradientOracle:
    """Central finite differences as the independent gradient oracle."""

    def test_add_sub_mul(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        check_gradients(lambda: tsum(mul(add(a, b), sub(a, b))), [a, b])

    def test_broadcast_bias_add(self, rng):
        x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3,)), requires_grad=True)
        check_gradients(lambda: tsum(tanh(add(x, b))), [x, b])

    def test_matmul_2d(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        check_gradients(lambda: tsum(matmul(a, b)), [a, b])

    def test_matmul_batched_times_weight(self, rng):
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        check_gradients(lambda: tsum(sigmoid(matmul(a, w))), [a, w])

    def test_matmul_batched_pair(self, rng):
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
        check_gradients(lambda: tsum(matmul(a, b)), [a, b])

    def test_dot_and_scalar_mul(self, rng):
        a = Tensor(rng.normal(size=6), requires_grad=True)
        b = Tensor(rng.normal(size=6), requires_grad=True)
        check_gradients(lambda: mul(dot(a, b), 0.5), [a, b])

    def test_reductions(self, rng):
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=4))
        check_gradients(
            lambda: add(dot(tsum(x, axis=1), w), tsum(mul(tmean(x, axis=0), 2.0))),
            [x],
        )

    def test_sqnorm(self, rng):
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        check_gradients(lambda: tsum(sqnorm(x)), [x])

    def test_sigmoid_tanh_relu_log_exp(self, rng):
        x = Tensor(rng.normal(size=(7,)) + 0.1, requires_grad=True)
        check_gradients(lambda: tsum(sigmoid(x)), [x])
        check_gradients(lambda: tsum(tanh(x)), [x])
        check_gradients(lambda: tsum(log(exp_like(x))), [x])
        y = Tensor(rng.normal(size=(7,)) + 3.0, requires_grad=True)
        check_gradients(lambda: tsum(log(y)), [y])

    def test_relu_away_from_kink(self, rng):
        x = Tensor(rng.normal(size=(9,)), requires_grad=True)
        x.data[np.abs(x.data) < 0.05] += 0.2
        check_gradients(lambda: tsum(relu(x)), [x])

    def test_softmax(self, rng):
        x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 5)), requires_grad=False)
        check_gradients(lambda: tsum(mul(softmax(x), w)), [x])

    def test_layer_norm(self, rng):
        x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        g = Tensor(rng.normal(size=6) + 1.0, requires_grad=True)
        b = Tensor(rng.normal(size=6), requires_grad=True)
        check_gradients(lambda: tsum(sigmoid(layer_norm(x, g, b))), [x, g, b])

    def test_cosine(self, rng):
        a = Tensor(rng.normal(size=(4,)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        check_gradients(lambda: tsum(cosine(a, b)), [a, b])

    def test_gather_scatter_adds(self, rng):
        table = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        check_gradients(lambda: tsum(sqnorm(gather(table, [0, 2, 2, 4]))), [table])

    def test_segment_sum(self, rng):
        v = Tensor(rng.normal(size=(6, 2)), requires_grad=True)
        check_gradients(
            lambda: tsum(tanh(segment_sum(v, [0, 1, 0, 2, 1, 0], 3))), [v]
        )

    def test_concat_stack_reshape_transpose(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)

        def loss():
            c = concat([a, b], axis=-1)
            s = stack([c, c], axis=0)
            t = transpose(s, (1, 0, 2))
            return tsum(tanh(reshape(t, (2, 10))))

        check_gradients(loss, [a, b])

    def test_three_layer_mlp_matches_finite_differences(self, rng):
        """Random 3-layer MLP: every parameter gradient vs central diffs."""
        sizes = [4, 6, 5, 1]
        params = []
        for i in range(3):
            params.append(Tensor(rng.normal(size=(sizes[i], sizes[i + 1])) * 0.5,
                                 requires_grad=True))
            params.append(Tensor(rng.normal(size=(sizes[i + 1],)) * 0.1,
                                 requires_grad=True))
        x = Tensor(rng.normal(size=(3, 4)))

        def loss():
            h = x
            for i in range(3):
                h = add(matmul(h, params[2 * i]), params[2 * i + 1])
                if i < 2:
                    h = tanh(h)
            return tsum(sigmoid(h))

        worst = check_gradients(loss, params)
        assert worst < 1e-4


def exp_like(x):
    from fskgc.numkit import exp

    return exp(x)


class TestAdam:
    def test_zero_grad_leaves_params_unchanged(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        state = AdamState()
        adam_step([p], state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_identity(self):
        p = Tensor(0.0, requires_grad=True)
        p.grad = np.asarray(1.0)
        state = AdamState(lr=0.001)
        adam_step([p], state)
        assert p.data == pytest.approx(-0.001, rel=1e-6)

    def test_missing_grad_rejected(self):
        p = Tensor([1.0], requires_grad=True)
        with pytest.raises(ContractError):
            adam_step([p], AdamState())

    def test_quadratic_descent_monotone_after_warmup(self):
        """Scripted-run oracle: |w| decreases monotonically after step 3."""
        w = Tensor(1.0, requires_grad=True)
        state = AdamState(lr=0.001)
        history = []
        for _ in range(100):
            with Tape():
                backward(mul(w, w))
            adam_step([w], state)
            history.append(abs(float(w.data)))
        for a, b in zip(history[3:], history[4:]):
            assert b <= a + 1e-12

    def test_step_counter_increases(self):
        p = Tensor([0.0], requires_grad=True)
        state = AdamState()
        for expected in (1, 2, 3):
            p.grad = np.ones(1)
            adam_step([p], state)
            assert state.step_count == expected
