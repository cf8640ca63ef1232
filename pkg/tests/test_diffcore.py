"""Tests for the reverse-mode tape and its kernels.

The finite-difference oracle is validated on closed forms first; every
differentiable kernel is then checked against hand values and against that
oracle. The full 100-instance sweep lives in the acceptance suite; these are
the per-kernel unit checks.
"""

import numpy as np
import pytest
from conftest import fd_input_grad, rel_err

from optionvi import backend, diffcore
from optionvi.diffcore import (
    ParamStore,
    Tensor,
    adam_step,
    affine,
    backward,
    bernoulli_log_prob,
    concat_cols,
    finite_diff_grad,
    gaussian_log_prob,
    gaussian_log_prob_from_noise,
    lstm_seq,
    max_rel_error,
    mean_rows,
    reparameterize,
    row_shift_down,
    sigmoid,
    slice_cols,
    softplus,
    sum_all,
    tanh,
    termination_probs,
    tile_rows,
)
from optionvi.errors import DimensionError, DomainError, InputError, NumericError

LN2 = 0.6931471805599453
HALF_LN_2PI = 0.9189385332046727


class TestFiniteDiffOracle:
    def test_quadratic(self):
        store = ParamStore("s")
        w = store.add("w", np.array([3.0]))

        def f():
            return float(np.sum(w.data**2))

        g = finite_diff_grad(f, store)
        np.testing.assert_allclose(g["w"], [6.0], rtol=0, atol=1e-9)

    def test_constant(self):
        store = ParamStore("s")
        store.add("w", np.array([1.0, -2.0]))
        g = finite_diff_grad(lambda: 5.0, store)
        np.testing.assert_array_equal(g["w"], [0.0, 0.0])

    def test_restores_bitwise(self):
        store = ParamStore("s")
        w = store.add("w", np.array([0.1, 0.2, 0.3]))
        before = w.data.copy()
        finite_diff_grad(lambda: float(np.sum(np.sin(w.data))), store)
        np.testing.assert_array_equal(w.data, before)


class TestTape:
    def test_constant_objective_leaves_params_zero(self):
        store = ParamStore("s")
        store.add("w", np.ones(3))
        store.zero_grad()
        out = Tensor(2.5)
        backward(out)
        np.testing.assert_array_equal(store["w"].grad, np.zeros(3))

    def test_off_path_param_gets_exact_zero(self):
        store = ParamStore("s")
        w = store.add("w", np.array([[1.0, 2.0]]))
        unused = store.add("unused", np.ones(4))
        b = store.add("b", np.zeros(2))
        store.zero_grad()
        y = sum_all(affine(Tensor(np.array([1.5])), w, b))
        backward(y)
        np.testing.assert_array_equal(unused.grad, np.zeros(4))
        assert np.any(w.grad != 0.0)

    def test_gradients_accumulate_across_backwards(self):
        store = ParamStore("s")
        w = store.add("w", np.array([2.0]))
        store.zero_grad()
        backward(sum_all(w * 3.0))
        backward(sum_all(w * 3.0))
        np.testing.assert_allclose(w.grad, [6.0])

    def test_backward_rejects_nonscalar(self):
        with pytest.raises(InputError):
            backward(Tensor(np.ones(3)))

    def test_nonfinite_kernel_output_names_kernel(self):
        # the error fires in the kernel where the inf is born
        with np.errstate(over="ignore"), pytest.raises(NumericError, match="add"):
            sum_all(Tensor(np.array([1e308, 1e308])) + Tensor(np.array([1e308, 1e308])))

    def test_diamond_graph_fanout(self):
        # y = w*w reaches w along two paths; grad must be 2w
        store = ParamStore("s")
        w = store.add("w", np.array([3.0]))
        store.zero_grad()
        backward(sum_all(w * w))
        np.testing.assert_allclose(w.grad, [6.0])


class TestElementwise:
    def test_activation_values(self):
        x = Tensor(np.array([0.0]))
        np.testing.assert_allclose(softplus(x).data, [LN2], rtol=1e-15)
        np.testing.assert_allclose(sigmoid(x).data, [0.5], rtol=0)
        np.testing.assert_allclose(tanh(x).data, [0.0], atol=0)

    def test_softplus_strictly_positive_for_finite_inputs(self):
        x = Tensor(np.array([-800.0, -40.0, 0.0, 40.0, 800.0]))
        out = softplus(x).data
        assert np.all(out > 0.0)
        np.testing.assert_allclose(out[3], 40.0, rtol=1e-12)
        np.testing.assert_allclose(out[4], 800.0, rtol=1e-15)

    def test_sigmoid_saturation_stable(self):
        x = Tensor(np.array([-800.0, 800.0]))
        out = sigmoid(x).data
        assert out[0] == 0.0 and out[1] == 1.0

    def test_elementwise_grads_match_fd(self):
        rng = np.random.default_rng(7)
        for op in (tanh, sigmoid, softplus):
            store = ParamStore("s")
            w = store.add("w", rng.standard_normal(5))
            store.zero_grad()
            backward(sum_all(op(w)))
            fd = finite_diff_grad(lambda: float(np.sum(
                {tanh: np.tanh,
                 sigmoid: lambda d: 1 / (1 + np.exp(-d)),
                 softplus: lambda d: np.logaddexp(0.0, d)}[op](w.data))), store)
            assert rel_err(w.grad, fd["w"]) < 1e-8

    def test_add_mul_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones(2)) + Tensor(np.ones(3))
        with pytest.raises(DimensionError):
            Tensor(np.ones(2)) * Tensor(np.ones(3))


class TestAffine:
    def test_identity(self):
        w = Tensor(np.eye(3))
        b = Tensor(np.zeros(3))
        x = np.array([[1.0, -2.0, 4.0]])
        np.testing.assert_array_equal(affine(x, w, b).data, x)

    def test_bias_grad_is_column_sums(self):
        store = ParamStore("s")
        w = store.add("w", np.zeros((2, 3)))
        b = store.add("b", np.zeros(3))
        store.zero_grad()
        backward(sum_all(affine(np.ones((5, 2)), w, b)))
        np.testing.assert_array_equal(b.grad, np.full(3, 5.0))

    def test_grads_match_fd(self):
        rng = np.random.default_rng(11)
        store = ParamStore("s")
        w = store.add_uniform("w", (4, 3), 4, rng)
        b = store.add_uniform("b", (3,), 4, rng)
        x = rng.standard_normal((6, 4))
        store.zero_grad()
        backward(sum_all(tanh(affine(x, w, b))))
        fd = finite_diff_grad(
            lambda: float(np.sum(np.tanh(x @ w.data + b.data))), store
        )
        assert max_rel_error({"w": w.grad, "b": b.grad}, fd) < 1e-8

    def test_input_grad_matches_fd(self):
        rng = np.random.default_rng(12)
        store = ParamStore("s")
        w = store.add_uniform("w", (3, 2), 3, rng)
        b = store.add_uniform("b", (2,), 3, rng)
        x = Tensor(rng.standard_normal((4, 3)))
        store.zero_grad()
        backward(sum_all(sigmoid(affine(x, w, b))))
        fd = fd_input_grad(
            lambda: float(np.sum(1 / (1 + np.exp(-(x.data @ w.data + b.data))))), x.data
        )
        assert rel_err(x.grad, fd) < 1e-8

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            affine(np.ones((2, 3)), Tensor(np.ones((4, 2))), Tensor(np.zeros(2)))


class TestStructuralOps:
    def test_concat_slice_roundtrip(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.standard_normal((4, 2)))
        b = Tensor(rng.standard_normal((4, 3)))
        cat = concat_cols(a, b)
        np.testing.assert_array_equal(slice_cols(cat, 0, 2).data, a.data)
        np.testing.assert_array_equal(slice_cols(cat, 2, 5).data, b.data)

    def test_concat_grads_split(self):
        a = Tensor(np.zeros((2, 2)))
        b = Tensor(np.zeros((2, 1)))
        out = concat_cols(a, b)
        backward(sum_all(out * Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))))
        np.testing.assert_array_equal(a.grad, [[1.0, 2.0], [4.0, 5.0]])
        np.testing.assert_array_equal(b.grad, [[3.0], [6.0]])

    def test_row_shift_down(self):
        x = Tensor(np.array([[1.0], [2.0], [3.0]]))
        out = row_shift_down(x)
        np.testing.assert_array_equal(out.data, [[0.0], [1.0], [2.0]])
        backward(sum_all(out * Tensor(np.array([[10.0], [20.0], [30.0]]))))
        np.testing.assert_array_equal(x.grad, [[20.0], [30.0], [0.0]])

    def test_mean_tile_adjoint_pair(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((5, 3)))
        backward(sum_all(mean_rows(x)))
        np.testing.assert_allclose(x.grad, np.full((5, 3), 0.2), rtol=1e-15)
        y = Tensor(rng.standard_normal(3))
        backward(sum_all(tile_rows(y, 4)))
        np.testing.assert_allclose(y.grad, np.full(3, 4.0), rtol=0)


class TestGaussianLogProb:
    def test_standard_normal_at_mean(self):
        out = gaussian_log_prob(np.zeros(1), Tensor(np.zeros(1)), Tensor(np.ones(1)))
        np.testing.assert_allclose(out.item(), -HALF_LN_2PI, rtol=1e-15)

    def test_var_four_at_mean(self):
        out = gaussian_log_prob(np.ones(1), Tensor(np.ones(1)), Tensor(np.full(1, 4.0)))
        np.testing.assert_allclose(out.item(), -1.6120857137646178, rtol=1e-15)

    def test_two_sigma_point(self):
        out = gaussian_log_prob(np.full(1, 2.0), Tensor(np.zeros(1)), Tensor(np.ones(1)))
        np.testing.assert_allclose(out.item(), -HALF_LN_2PI - 2.0, rtol=1e-15)

    def test_nonpositive_var_domain_error(self):
        with pytest.raises(DomainError):
            gaussian_log_prob(np.zeros(1), Tensor(np.zeros(1)), Tensor(np.zeros(1)))
        with pytest.raises(DomainError):
            gaussian_log_prob(np.zeros(1), Tensor(np.zeros(1)), Tensor(np.full(1, -1.0)))

    def test_clamp_region_gates_var_grad(self):
        var = Tensor(np.full(1, 1e-9))
        out = gaussian_log_prob(np.zeros(1), Tensor(np.zeros(1)), var)
        backward(out)
        np.testing.assert_array_equal(var.grad, [0.0])
        # value uses the floored variance
        np.testing.assert_allclose(out.item(), -0.5 * np.log(2 * np.pi * 1e-6), rtol=1e-15)

    def test_mask_selects_rows(self):
        x = np.zeros((3, 2))
        mu = Tensor(np.zeros((3, 2)))
        var = Tensor(np.ones((3, 2)))
        full = gaussian_log_prob(x, mu, var)
        masked = gaussian_log_prob(x, mu, var, mask=np.array([1.0, 0.0, 1.0]))
        np.testing.assert_allclose(full.item(), -6 * HALF_LN_2PI, rtol=1e-15)
        np.testing.assert_allclose(masked.item(), -4 * HALF_LN_2PI, rtol=1e-15)

    def test_grads_match_fd(self):
        rng = np.random.default_rng(21)
        store = ParamStore("s")
        mu = store.add("mu", rng.standard_normal((4, 2)))
        logv = store.add("logv", rng.standard_normal((4, 2)) * 0.3)
        x = rng.standard_normal((4, 2))
        mask = np.array([1.0, 1.0, 0.0, 1.0])
        store.zero_grad()
        var = softplus(logv)
        backward(gaussian_log_prob(x, mu, var, mask=mask))

        def f():
            v = np.logaddexp(0.0, logv.data)
            terms = -0.5 * np.log(2 * np.pi * v) - (x - mu.data) ** 2 / (2 * v)
            return float(np.sum(terms * mask[:, None]))

        fd = finite_diff_grad(f, store)
        assert max_rel_error({"mu": mu.grad, "logv": logv.grad}, fd) < 1e-8

    def test_x_grad_is_negative_mu_grad(self):
        rng = np.random.default_rng(22)
        x = Tensor(rng.standard_normal((3, 2)))
        mu = Tensor(rng.standard_normal((3, 2)))
        var = Tensor(np.full((3, 2), 0.5))
        backward(gaussian_log_prob(x, mu, var))
        np.testing.assert_allclose(x.grad, -mu.grad, rtol=1e-15)


class TestGaussianLogProbFromNoise:
    def test_reduces_to_entropy_like_form(self):
        # one entry, var=1, eps=0: -0.5*ln(2*pi)
        out = gaussian_log_prob_from_noise(Tensor(np.ones(1)), np.zeros(1))
        np.testing.assert_allclose(out.item(), -HALF_LN_2PI, rtol=1e-15)

    def test_matches_full_gaussian_on_reparam_sample(self):
        rng = np.random.default_rng(31)
        mu = rng.standard_normal((3, 2))
        var = rng.uniform(0.5, 2.0, (3, 2))
        eps = rng.standard_normal((3, 2))
        z = mu + np.sqrt(var) * eps
        full = gaussian_log_prob(z, Tensor(mu), Tensor(var)).item()
        reduced = gaussian_log_prob_from_noise(Tensor(var), eps).item()
        np.testing.assert_allclose(reduced, full, rtol=1e-12)

    def test_sigma_grad_is_inverse_sigma_exactly(self):
        # d(-log q)/d sigma = 1/sigma when scoring the sample drawn from q;
        # in var form: d(log q)/d var = -1/(2 var) with no eps term.
        var = Tensor(np.array([0.25]))
        out = gaussian_log_prob_from_noise(var, np.array([1.7]))
        backward(out)
        np.testing.assert_allclose(var.grad, [-0.5 / 0.25], rtol=0)

    def test_grads_match_fd(self):
        rng = np.random.default_rng(32)
        store = ParamStore("s")
        logv = store.add("logv", rng.standard_normal(5) * 0.2)
        eps = rng.standard_normal(5)
        store.zero_grad()
        backward(gaussian_log_prob_from_noise(softplus(logv), eps))
        fd = finite_diff_grad(
            lambda: float(
                np.sum(
                    -0.5 * np.log(2 * np.pi * np.logaddexp(0.0, logv.data))
                    - eps**2 / 2
                )
            ),
            store,
        )
        assert max_rel_error({"logv": logv.grad}, fd) < 1e-8


class TestBernoulliLogProb:
    def test_half(self):
        out = bernoulli_log_prob(np.ones(1), Tensor(np.full(1, 0.5)))
        np.testing.assert_allclose(out.item(), -LN2, rtol=1e-15)

    def test_zero_case(self):
        out = bernoulli_log_prob(np.zeros(1), Tensor(np.full(1, 0.25)))
        np.testing.assert_allclose(out.item(), np.log(0.75), rtol=1e-15)

    def test_clamp_near_one(self):
        # p = 1 - 1e-12 clamps to 1 - 1e-6, so log p lands at about -1e-6
        out = bernoulli_log_prob(np.ones(1), Tensor(np.full(1, 1.0 - 1e-12)))
        np.testing.assert_allclose(out.item(), -1e-6, rtol=1e-5)

    def test_b_not_binary_rejected(self):
        with pytest.raises(DomainError):
            bernoulli_log_prob(np.array([0.5]), Tensor(np.full(1, 0.5)))

    def test_grads_match_fd(self):
        rng = np.random.default_rng(41)
        store = ParamStore("s")
        logits = store.add("logits", rng.standard_normal(6))
        b = (rng.random(6) < 0.5).astype(np.float64)
        store.zero_grad()
        backward(bernoulli_log_prob(b, sigmoid(logits)))
        fd = finite_diff_grad(
            lambda: float(
                np.sum(
                    b * np.log(1 / (1 + np.exp(-logits.data)))
                    + (1 - b) * np.log(1 - 1 / (1 + np.exp(-logits.data)))
                )
            ),
            store,
        )
        assert max_rel_error({"logits": logits.grad}, fd) < 1e-8


class TestReparameterize:
    def test_zero_noise_copies_mu_bitwise(self):
        mu = Tensor(np.array([0.1, -0.0, 7.25e-13]))
        z = reparameterize(mu, Tensor(np.full(3, 2.0)), np.zeros(3))
        assert np.array_equal(z.data, mu.data) and np.all(
            np.signbit(z.data) == np.signbit(mu.data)
        )

    def test_values(self):
        z = reparameterize(
            Tensor(np.array([1.0, -1.0])),
            Tensor(np.array([4.0, 9.0])),
            np.array([0.5, -1.0]),
        )
        np.testing.assert_array_equal(z.data, [2.0, -4.0])

    def test_nonpositive_var_rejected(self):
        with pytest.raises(DomainError):
            reparameterize(Tensor(np.zeros(2)), Tensor(np.zeros(2)), np.zeros(2))

    def test_grads_match_fd(self):
        rng = np.random.default_rng(51)
        store = ParamStore("s")
        mu = store.add("mu", rng.standard_normal(4))
        logv = store.add("logv", rng.standard_normal(4) * 0.3)
        eps = rng.standard_normal(4)
        store.zero_grad()
        z = reparameterize(mu, softplus(logv), eps)
        backward(sum_all(tanh(z)))
        fd = finite_diff_grad(
            lambda: float(
                np.sum(
                    np.tanh(
                        mu.data + np.sqrt(np.logaddexp(0.0, logv.data)) * eps
                    )
                )
            ),
            store,
        )
        assert max_rel_error({"mu": mu.grad, "logv": logv.grad}, fd) < 1e-8


class TestTerminationProbs:
    def test_rows_sum_to_one_exactly_and_open_interval(self):
        rng = np.random.default_rng(61)
        logits = Tensor(rng.standard_normal((50, 2)) * 30)
        p = termination_probs(logits).data
        np.testing.assert_array_equal(p.sum(axis=1), np.ones(50))
        assert np.all((p > 0.0) & (p < 1.0))

    def test_symmetric_logits_give_half(self):
        p = termination_probs(Tensor(np.array([[3.0, 3.0]]))).data
        np.testing.assert_array_equal(p, [[0.5, 0.5]])

    def test_grads_match_fd(self):
        rng = np.random.default_rng(62)
        store = ParamStore("s")
        logits = store.add("logits", rng.standard_normal((4, 2)))
        coef = rng.standard_normal((4, 2))
        store.zero_grad()
        backward(sum_all(termination_probs(logits) * Tensor(coef)))

        def f():
            d = logits.data[:, 1] - logits.data[:, 0]
            p1 = 1 / (1 + np.exp(-d))
            return float(np.sum(np.stack([1 - p1, p1], axis=1) * coef))

        fd = finite_diff_grad(f, store)
        assert max_rel_error({"logits": logits.grad}, fd) < 1e-8


class TestLstmSeq:
    @staticmethod
    def _reference_lstm(x, w_ih, w_hh, b):
        # independent per-step scalar implementation
        T, _ = x.shape
        H = w_hh.shape[0]
        h_prev = np.zeros(H)
        c_prev = np.zeros(H)
        out = np.zeros((T, H))
        for t in range(T):
            pre = x[t] @ w_ih + h_prev @ w_hh + b
            i = 1 / (1 + np.exp(-pre[0:H]))
            f = 1 / (1 + np.exp(-pre[H : 2 * H]))
            g = np.tanh(pre[2 * H : 3 * H])
            o = 1 / (1 + np.exp(-pre[3 * H : 4 * H]))
            c_prev = f * c_prev + i * g
            h_prev = o * np.tanh(c_prev)
            out[t] = h_prev
        return out

    def _random_cell(self, rng, d, h):
        store = ParamStore("lstm")
        store.add_uniform("w_ih", (d, 4 * h), d, rng)
        store.add_uniform("w_hh", (h, 4 * h), h, rng)
        store.add_uniform("b", (4 * h,), h, rng)
        return store

    def test_forward_matches_reference(self):
        rng = np.random.default_rng(71)
        store = self._random_cell(rng, 3, 4)
        x = rng.standard_normal((6, 3))
        h = lstm_seq(x, store["w_ih"], store["w_hh"], store["b"])
        ref = self._reference_lstm(x, store["w_ih"].data, store["w_hh"].data, store["b"].data)
        np.testing.assert_allclose(h.data, ref, rtol=1e-12, atol=1e-14)

    def test_causality_bitwise(self):
        rng = np.random.default_rng(72)
        store = self._random_cell(rng, 3, 4)
        x = rng.standard_normal((6, 3))
        h1 = lstm_seq(x, store["w_ih"], store["w_hh"], store["b"]).data
        x2 = x.copy()
        x2[4] += 10.0
        h2 = lstm_seq(x2, store["w_ih"], store["w_hh"], store["b"]).data
        np.testing.assert_array_equal(h1[:4], h2[:4])
        assert np.any(h1[4:] != h2[4:])

    def test_param_grads_match_fd(self):
        rng = np.random.default_rng(73)
        store = self._random_cell(rng, 2, 3)
        x = rng.standard_normal((5, 2))
        coef = rng.standard_normal((5, 3))
        store.zero_grad()
        backward(sum_all(lstm_seq(x, store["w_ih"], store["w_hh"], store["b"]) * Tensor(coef)))
        fd = finite_diff_grad(
            lambda: float(
                np.sum(
                    self._reference_lstm(
                        x, store["w_ih"].data, store["w_hh"].data, store["b"].data
                    )
                    * coef
                )
            ),
            store,
        )
        assert max_rel_error(store.grads(), fd) < 1e-7

    def test_input_grads_match_fd(self):
        rng = np.random.default_rng(74)
        store = self._random_cell(rng, 2, 3)
        x = Tensor(rng.standard_normal((4, 2)))
        coef = rng.standard_normal((4, 3))
        backward(sum_all(lstm_seq(x, store["w_ih"], store["w_hh"], store["b"]) * Tensor(coef)))
        fd = fd_input_grad(
            lambda: float(
                np.sum(
                    self._reference_lstm(
                        x.data, store["w_ih"].data, store["w_hh"].data, store["b"].data
                    )
                    * coef
                )
            ),
            x.data,
        )
        assert rel_err(x.grad, fd) < 1e-7

    def test_backends_agree(self):
        from optionvi import _kernels_numpy

        try:
            from optionvi import _kernels_numba
        except ImportError:
            pytest.skip("numba unavailable")
        rng = np.random.default_rng(75)
        d, h, t = 3, 5, 8
        w_ih = rng.standard_normal((d, 4 * h)) * 0.4
        w_hh = rng.standard_normal((h, 4 * h)) * 0.4
        b = rng.standard_normal(4 * h) * 0.1
        x = rng.standard_normal((t, d))
        h_np, g_np, c_np = _kernels_numpy.lstm_seq_forward(x, w_ih, w_hh, b)
        h_nb, g_nb, c_nb = _kernels_numba.lstm_seq_forward(x, w_ih, w_hh, b)
        np.testing.assert_allclose(h_np, h_nb, rtol=1e-13, atol=1e-15)
        dh = rng.standard_normal((t, h))
        out_np = _kernels_numpy.lstm_seq_backward(dh, x, h_np, c_np, g_np, w_ih, w_hh)
        out_nb = _kernels_numba.lstm_seq_backward(dh, x, h_nb, c_nb, g_nb, w_ih, w_hh)
        for a, bb in zip(out_np, out_nb):
            np.testing.assert_allclose(a, bb, rtol=1e-10, atol=1e-13)

    def test_empty_sequence_rejected(self):
        rng = np.random.default_rng(76)
        store = self._random_cell(rng, 2, 3)
        with pytest.raises(InputError):
            lstm_seq(np.zeros((0, 2)), store["w_ih"], store["w_hh"], store["b"])


class TestAdam:
    def test_zero_grad_is_bitwise_fixpoint(self):
        rng = np.random.default_rng(81)
        store = ParamStore("s")
        w = store.add("w", rng.standard_normal((3, 2)))
        before = w.data.copy()
        store.zero_grad()
        for _ in range(5):
            adam_step(store, lr=1e-2)
        np.testing.assert_array_equal(w.data, before)

    def test_first_step_is_signed_lr(self):
        store = ParamStore("s")
        w = store.add("w", np.zeros(3))
        store.zero_grad()
        w.grad[:] = np.array([2.0, -0.5, 1e3])
        adam_step(store, lr=1e-3)
        np.testing.assert_allclose(
            w.data, [-1e-3, 1e-3, -1e-3], rtol=1e-3
        )

    def test_two_stores_identical_streams_bitwise(self):
        def run():
            rng = np.random.default_rng(82)
            store = ParamStore("s")
            w = store.add("w", rng.standard_normal(8))
            for _ in range(40):
                store.zero_grad()
                w.grad[:] = rng.standard_normal(8)
                adam_step(store, lr=3e-3)
            return w.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_descends_quadratic(self):
        store = ParamStore("s")
        w = store.add("w", np.full(4, 5.0))
        for _ in range(2000):
            store.zero_grad()
            w.grad[:] = 2.0 * w.data
            adam_step(store, lr=1e-2)
        assert float(np.abs(w.data).max()) < 0.5


class TestClipGradNorm:
    def test_noop_below_threshold(self):
        store = ParamStore("s")
        w = store.add("w", np.zeros(3))
        store.zero_grad()
        w.grad[:] = [0.1, 0.2, 0.2]
        norm = store.clip_grad_norm(10.0)
        np.testing.assert_allclose(norm, 0.3, rtol=1e-15)
        np.testing.assert_array_equal(w.grad, [0.1, 0.2, 0.2])

    def test_scales_to_threshold(self):
        store = ParamStore("s")
        w = store.add("w", np.zeros(2))
        store.zero_grad()
        w.grad[:] = [30.0, 40.0]
        norm = store.clip_grad_norm(10.0)
        np.testing.assert_allclose(norm, 50.0, rtol=1e-15)
        np.testing.assert_allclose(np.linalg.norm(w.grad), 10.0, rtol=1e-12)
        np.testing.assert_allclose(w.grad, [6.0, 8.0], rtol=1e-12)


def test_backend_exposes_selected_name():
    assert backend.backend_name() in ("numba", "numpy")


def test_var_floor_and_prob_floor_pinned():
    assert diffcore.VAR_FLOOR == 1e-6
    assert diffcore.PROB_FLOOR == 1e-6
    assert diffcore.ADAM_BETA1 == 0.9
    assert diffcore.ADAM_BETA2 == 0.999
    assert diffcore.ADAM_EPS_HAT == 1e-8
