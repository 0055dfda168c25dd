import numpy as np
import pytest

from metricmask import autodiff as ad
from metricmask.autodiff import AutodiffError, Tensor, backward, grad_check, no_grad
from metricmask import nn
from metricmask.nn import AdamConfig, AdamState, adam_step


def rand_tensor(rng, shape, positive=False):
    data = rng.standard_normal(shape)
    return Tensor(np.abs(data) + 0.1 if positive else data, requires_grad=True)


class TestClosedForms:
    def test_sigmoid_at_zero(self):
        x = Tensor(np.zeros(()), requires_grad=True)
        y = ad.sigmoid(x)
        backward(y)
        assert y.item() == 0.5
        assert float(x.grad) == 0.25

    def test_sigmoid_extreme_inputs_stable(self):
        y = ad.sigmoid(Tensor(np.array([-800.0, 800.0])))
        assert np.all(np.isfinite(y.data))
        assert y.data[0] == pytest.approx(0.0, abs=1e-300)
        assert y.data[1] == 1.0

    def test_sum_gradient_is_ones(self):
        w = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        backward(ad.reduce_sum(w))
        assert np.array_equal(w.grad, np.ones(3))

    def test_mse_gradient_zero_at_minimum(self):
        t = np.array([0.3, -0.7, 1.1])
        w = Tensor(t.copy(), requires_grad=True)
        backward(ad.reduce_mean(ad.square(ad.sub(w, t))))
        assert np.allclose(w.grad, 0.0)

    def test_conv2d_delta_kernel_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 9, 11))
        k = np.zeros((1, 1, 5, 5))
        k[0, 0, 2, 2] = 1.0
        out = ad.conv2d(Tensor(x), Tensor(k))
        assert np.array_equal(out.data[0], x[0, 2:-2, 2:-2])

    def test_global_avg_pool_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((15, 6, 7))
        out = ad.global_avg_pool2d(Tensor(x))
        assert out.shape == (15,)
        for c in range(15):
            acc = 0.0
            for i in range(6):
                for j in range(7):
                    acc += x[c, i, j]
            assert out.data[c] == pytest.approx(acc / 42, rel=1e-12)

    def test_conv2d_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 6, 7))
        k = rng.standard_normal((3, 2, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(k)).data
        for o in range(3):
            for i in range(4):
                for j in range(5):
                    acc = 0.0
                    for c in range(2):
                        for di in range(3):
                            for dj in range(3):
                                acc += k[o, c, di, dj] * x[c, i + di, j + dj]
                    assert out[o, i, j] == pytest.approx(acc, rel=1e-9, abs=1e-9)


OPS = {
    "add": (lambda a, b: ad.add(a, b), [(3, 4), (4,)], False),
    "sub": (lambda a, b: ad.sub(a, b), [(3, 4), (3, 4)], False),
    "mul": (lambda a, b: ad.mul(a, b), [(3, 4), (3, 4)], False),
    "neg": (lambda a: ad.neg(a), [(3, 4)], False),
    "matmul": (lambda a, b: ad.matmul(a, b), [(3, 4), (4, 5)], False),
    "sigmoid": (lambda a: ad.sigmoid(a), [(4, 4)], False),
    "tanh": (lambda a: ad.tanh(a), [(4, 4)], False),
    "leaky_relu": (lambda a: ad.leaky_relu(a, 0.3), [(4, 4)], False),
    "square": (lambda a: ad.square(a), [(4, 4)], False),
    "pow_scalar": (lambda a: ad.pow_scalar(a, 0.3), [(4, 4)], True),
    "log1p": (lambda a: ad.log1p(a), [(4, 4)], True),
    "clamp_min": (lambda a: ad.clamp_min(a, 0.05), [(4, 4)], True),
    "reduce_sum": (lambda a: ad.reduce_sum(a), [(5,)], False),
    "reduce_mean": (lambda a: ad.reduce_mean(a), [(5,)], False),
    "reshape": (lambda a: ad.reshape(a, (4, 3)), [(3, 4)], False),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), [(3, 2), (3, 4)], False),
    "slice": (lambda a: ad.slice_(a, (slice(1, 3), slice(0, 3))), [(4, 5)], False),
    "conv2d": (lambda x, k: ad.conv2d(x, k), [(2, 8, 9), (3, 2, 5, 5)], False),
    "global_avg_pool2d": (lambda x: ad.global_avg_pool2d(x), [(3, 6, 7)], False),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", [0, 1])
def test_every_op_passes_grad_check(name, seed):
    fn, shapes, positive = OPS[name]
    rng = np.random.default_rng([seed, hash(name) % 2**32])
    tensors = [rand_tensor(rng, s, positive) for s in shapes]
    err = grad_check(lambda: ad.reduce_mean(ad.square(fn(*tensors))), tensors)
    assert err < 1e-4, f"{name}: {err}"


class TestBackwardSemantics:
    def test_non_scalar_loss_rejected(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(AutodiffError, match="scalar"):
            backward(ad.square(w))

    def test_accumulation_without_zeroing(self):
        w = Tensor(np.ones(3), requires_grad=True)
        backward(ad.reduce_sum(w))
        backward(ad.reduce_sum(w))
        assert np.array_equal(w.grad, 2 * np.ones(3))

    def test_shared_subexpression_sums_paths(self):
        # y = x*x + x  =>  dy/dx = 2x + 1, via two paths through x
        x = Tensor(np.array(3.0), requires_grad=True)
        y = ad.add(ad.mul(x, x), x)
        backward(y)
        assert float(x.grad) == pytest.approx(7.0)

    def test_each_node_visited_once(self):
        # diamond graph: shared node feeding two consumers
        x = Tensor(np.array(2.0), requires_grad=True)
        shared = ad.mul(x, x)  # x^2
        y = ad.add(ad.mul(shared, 3.0), ad.mul(shared, 4.0))  # 7 x^2
        backward(y)
        assert float(x.grad) == pytest.approx(28.0)

    def test_nan_loss_rejected(self):
        w = Tensor(np.array(np.inf), requires_grad=True)
        with pytest.raises(AutodiffError, match="non-finite loss"):
            backward(ad.mul(w, 0.0) if False else Tensor(np.array(np.nan), requires_grad=True))

    def test_nan_gradient_reports_op(self):
        w = Tensor(np.array(1e200), requires_grad=True)
        sq = ad.square(ad.square(w))  # overflows to inf in data
        with pytest.raises(AutodiffError):
            backward(ad.mul(sq, 0.0))

    def test_no_grad_disables_recording(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = ad.reduce_sum(ad.square(w))
        assert not y.requires_grad
        assert y._parents == ()

    def test_shape_mismatch_messages_include_shapes(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((4, 5)))
        with pytest.raises(AutodiffError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.matmul(a, b)
        with pytest.raises(AutodiffError, match=r"\(2, 3\)"):
            ad.add(a, Tensor(np.ones((2, 4))))

    def test_determinism_bitwise(self):
        def run():
            rng = np.random.default_rng(99)
            w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
            x = Tensor(rng.standard_normal((4, 4)))
            loss = ad.reduce_mean(ad.square(ad.tanh(ad.matmul(x, w))))
            backward(loss)
            return loss.item(), w.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        assert np.array_equal(g1, g2)


class TestQuadraticGradCheck:
    def test_quadratic_form_near_exact(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((4, 4))
        A = A + A.T
        w = Tensor(rng.standard_normal((4, 1)), requires_grad=True)
        err = grad_check(
            lambda: ad.reduce_sum(ad.mul(ad.matmul(ad.matmul(ad.reshape(w, (1, 4)), A), w), 0.5)),
            [w],
        )
        assert err < 1e-8


class TestBilstm:
    def test_single_step_directions_match_with_shared_params(self):
        rng = np.random.default_rng(4)
        params = {k: Tensor(v, requires_grad=True)
                  for k, v in nn.init_lstm_direction(rng, 5, 3).items()}
        seq = Tensor(rng.standard_normal((1, 5)))
        out = nn.bilstm_forward(seq, params, params)
        assert np.allclose(out.data[0, :3], out.data[0, 3:])

    def test_zero_input_zero_bias_gives_zero_output(self):
        rng = np.random.default_rng(5)
        params = {k: Tensor(v, requires_grad=True)
                  for k, v in nn.init_lstm_direction(rng, 5, 3).items()}
        out = nn.bilstm_forward(Tensor(np.zeros((4, 5))), params, params)
        assert np.allclose(out.data, 0.0)

    def test_bptt_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        fwd = {k: Tensor(v, requires_grad=True)
               for k, v in nn.init_lstm_direction(rng, 5, 3).items()}
        bwd = {k: Tensor(v, requires_grad=True)
               for k, v in nn.init_lstm_direction(rng, 5, 3).items()}
        seq = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        tensors = [seq, *fwd.values(), *bwd.values()]
        err = grad_check(
            lambda: ad.reduce_mean(ad.square(nn.bilstm_forward(seq, fwd, bwd))), tensors
        )
        assert err < 1e-4

    def test_divergence_detected(self):
        # a poisoned activation (NaN from an upstream overflow) must surface
        rng = np.random.default_rng(7)
        params = {k: Tensor(v, requires_grad=True)
                  for k, v in nn.init_lstm_direction(rng, 2, 3).items()}
        poisoned = np.full((2, 2), np.nan)
        with pytest.raises(AutodiffError, match="recurrence diverged"):
            nn.lstm_direction(Tensor(poisoned), params)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        w.grad = np.array([0.5, -3.0])
        st = AdamState(AdamConfig(lr=0.01))
        before = w.data.copy()
        adam_step({"w": w}, st)
        # bias-corrected first step is -lr * sign(g) up to eps
        assert np.allclose(before - w.data, [0.01, -0.01], atol=1e-6)

    def test_zero_grad_leaves_params_unchanged(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        st = AdamState()
        adam_step({"w": w}, st)  # grad is None -> zero
        assert np.array_equal(w.data, [1.0, 2.0])

    def test_converges_on_scalar_quadratic(self):
        # oracle: run the textbook recurrence independently
        def oracle(steps, lr=0.1):
            m = v = 0.0
            w = 0.0
            for t in range(1, steps + 1):
                g = 2 * (w - 3.0)
                m = 0.9 * m + 0.1 * g
                v = 0.999 * v + 0.001 * g * g
                w -= lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            return w

        w = Tensor(np.zeros(()), requires_grad=True)
        st = AdamState(AdamConfig(lr=0.1))
        for _ in range(200):
            w.zero_grad()
            backward(ad.square(ad.sub(w, 3.0)))
            adam_step({"w": w}, st)
        assert abs(w.item() - 3.0) < 0.05
        assert w.item() == pytest.approx(oracle(200), abs=1e-9)

    def test_shape_mismatch_detected(self):
        w = Tensor(np.ones(3), requires_grad=True)
        w.grad = np.ones(4)
        with pytest.raises(AutodiffError, match="shape"):
            adam_step({"w": w}, AdamState())
