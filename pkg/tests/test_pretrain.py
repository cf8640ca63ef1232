"""Tests for segment-VAE pretraining of the low-level policy."""

from types import SimpleNamespace

import numpy as np
import pytest

from optionvi import diffcore as dc
from optionvi import netstack as ns
from optionvi import pretrain as pt
from optionvi.diffcore import Tensor, backward, finite_diff_grad, max_rel_error
from optionvi.errors import DomainError, InputError

DIMS = ns.Dims(d_s=2, d_a=2, d_z=2, d_c=0)


def tiny_setup(seed=0, hidden=4, layers=1):
    triple = ns.PolicyTriple(DIMS, layers=layers, hidden=hidden, seed=seed)
    encoder = pt.SegmentEncoder(DIMS, layers=layers, hidden=hidden, seed=seed)
    return triple, encoder


def toy_traj(rng, t):
    return SimpleNamespace(
        states=rng.standard_normal((t, 2)), actions=rng.standard_normal((t, 2))
    )


class TestKlToStandardNormal:
    def test_standard_normal_is_zero(self):
        kl = dc.kl_to_standard_normal(Tensor(np.zeros(3)), Tensor(np.ones(3)))
        assert kl.item() == 0.0

    def test_mean_shift_is_half_mu_squared(self):
        mu = np.array([1.0, -2.0])
        kl = dc.kl_to_standard_normal(Tensor(mu), Tensor(np.ones(2)))
        np.testing.assert_allclose(kl.item(), 0.5 * np.sum(mu**2), rtol=1e-15)

    def test_variance_four_pinned_value(self):
        # 0.5 * (4 - 1 - ln 4) = 1.5 - ln 2
        kl = dc.kl_to_standard_normal(Tensor(np.zeros(1)), Tensor(np.full(1, 4.0)))
        np.testing.assert_allclose(kl.item(), 0.8068528194400547, rtol=1e-15)

    def test_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            mu = Tensor(rng.standard_normal(4))
            var = Tensor(rng.uniform(0.05, 5.0, 4))
            assert dc.kl_to_standard_normal(mu, var).item() >= 0.0

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(DomainError):
            dc.kl_to_standard_normal(Tensor(np.zeros(2)), Tensor(np.array([1.0, 0.0])))

    def test_mu_gradient_is_mu_exactly(self):
        mu = Tensor(np.array([0.3, -1.7, 2.0]))
        var = Tensor(np.ones(3))
        backward(dc.kl_to_standard_normal(mu, var))
        np.testing.assert_array_equal(mu.grad, mu.data)

    def test_grads_match_fd(self):
        rng = np.random.default_rng(1)
        store = dc.ParamStore("s")
        mu = store.add("mu", rng.standard_normal(4))
        raw = store.add("raw", rng.standard_normal(4))

        def build():
            return dc.kl_to_standard_normal(mu, dc.softplus(raw))

        store.zero_grad()
        backward(build())
        fd = finite_diff_grad(lambda: build().item(), store)
        assert max_rel_error(store.grads(), fd) < 1e-8


class TestSegmentEncoder:
    def test_output_shapes(self):
        _, encoder = tiny_setup()
        rng = np.random.default_rng(2)
        mu, var = encoder.forward(rng.standard_normal((7, 2)), rng.standard_normal((7, 2)))
        assert mu.data.shape == (2,) and var.data.shape == (2,)
        assert np.all(var.data > 0.0)

    def test_seed_determinism(self):
        a = pt.SegmentEncoder(DIMS, layers=1, hidden=4, seed=5)
        b = pt.SegmentEncoder(DIMS, layers=1, hidden=4, seed=5)
        for (name, pa), (_, pb) in zip(a.store.items(), b.store.items()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_names_mirror_posterior_store(self):
        triple, encoder = tiny_setup()
        enc_names = {name for name, _ in encoder.store.items()}
        q_names = {name for name, _ in triple.q_store.items()}
        assert enc_names < q_names
        assert {n for n in q_names - enc_names} == {
            n for n in q_names if n.startswith("term.")
        }


class TestSampleSegment:
    def test_bounds_and_lengths(self):
        rng = np.random.default_rng(3)
        traj = toy_traj(rng, 20)
        for _ in range(100):
            states, actions = pt.sample_segment(traj, (5, 10), rng)
            assert 5 <= states.shape[0] <= 10
            assert states.shape[0] == actions.shape[0]

    def test_short_trajectory_clips_to_full_window(self):
        rng = np.random.default_rng(4)
        traj = toy_traj(rng, 3)
        states, actions = pt.sample_segment(traj, (5, 10), rng)
        np.testing.assert_array_equal(states, traj.states)
        np.testing.assert_array_equal(actions, traj.actions)

    def test_windows_are_contiguous_slices(self):
        rng = np.random.default_rng(5)
        traj = toy_traj(rng, 15)
        states, actions = pt.sample_segment(traj, (4, 6), rng)
        l = states.shape[0]
        starts = [
            s for s in range(15 - l + 1) if np.array_equal(traj.states[s : s + l], states)
        ]
        assert len(starts) == 1
        s = starts[0]
        np.testing.assert_array_equal(actions, traj.actions[s : s + l])

    def test_rejects_bad_range(self):
        rng = np.random.default_rng(6)
        with pytest.raises(InputError):
            pt.sample_segment(toy_traj(rng, 5), (4, 2), rng)
        with pytest.raises(InputError):
            pt.sample_segment(toy_traj(rng, 5), (1, 3), rng)


class TestVaeLoss:
    def test_loss_identity(self):
        triple, encoder = tiny_setup(seed=1)
        rng = np.random.default_rng(7)
        traj = toy_traj(rng, 6)
        eps = rng.standard_normal(2)
        loss, recon, kl = pt.vae_loss(triple, encoder, traj.states, traj.actions, 0.02, eps)
        assert loss.item() == -recon.item() + 0.02 * kl.item()
        assert kl.item() >= 0.0

    def test_grads_match_fd(self):
        triple, encoder = tiny_setup(seed=2, hidden=3)
        rng = np.random.default_rng(8)
        traj = toy_traj(rng, 4)
        eps = rng.standard_normal(2)

        def f():
            loss, _, _ = pt.vae_loss(triple, encoder, traj.states, traj.actions, 0.05, eps)
            return loss

        encoder.store.zero_grad()
        triple.pi_store.zero_grad()
        backward(f())
        for store in (encoder.store, triple.pi_store):
            fd = finite_diff_grad(lambda: f().item(), store)
            assert max_rel_error(store.grads(), fd) < 1e-6, store.name


class TestRunPretraining:
    def _run(self, seed):
        triple, encoder = tiny_setup(seed=3)
        rng = np.random.default_rng(9)
        trajs = [toy_traj(rng, 12) for _ in range(3)]
        history = pt.run_pretraining(
            triple,
            encoder,
            trajs,
            epochs=6,
            lr=1e-2,
            beta=0.01,
            length_range=(4, 8),
            rng=np.random.default_rng(seed),
            steps_per_epoch=8,
        )
        return triple, encoder, history

    def test_loss_improves(self):
        _, _, history = self._run(10)
        assert len(history) == 6
        assert history[-1]["loss"] < history[0]["loss"]

    def test_deterministic(self):
        t1, e1, h1 = self._run(11)
        t2, e2, h2 = self._run(11)
        assert h1 == h2
        for (name, p1), (_, p2) in zip(e1.store.items(), e2.store.items()):
            np.testing.assert_array_equal(p1.data, p2.data)
        for (name, p1), (_, p2) in zip(t1.pi_store.items(), t2.pi_store.items()):
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_other_networks_untouched(self):
        fresh = ns.PolicyTriple(DIMS, layers=1, hidden=4, seed=3)
        triple, _, _ = self._run(12)
        for (name, p), (_, f) in zip(triple.eta_store.items(), fresh.eta_store.items()):
            np.testing.assert_array_equal(p.data, f.data)
        for (name, p), (_, f) in zip(triple.q_store.items(), fresh.q_store.items()):
            np.testing.assert_array_equal(p.data, f.data)

    def test_rejects_empty_corpus(self):
        triple, encoder = tiny_setup()
        with pytest.raises(InputError):
            pt.run_pretraining(
                triple, encoder, [], 1, 1e-3, 0.01, (4, 8), np.random.default_rng(0)
            )


class TestWarmStart:
    def test_copies_trunk_and_code_head_without_aliasing(self):
        triple, encoder = tiny_setup(seed=4)
        fresh = ns.PolicyTriple(DIMS, layers=1, hidden=4, seed=4)
        rng = np.random.default_rng(13)
        # move the encoder off its init so the copy is observable
        traj = toy_traj(rng, 6)
        pt.pretrain_step(
            triple, encoder, traj.states, traj.actions, 0.01, 1e-2, rng.standard_normal(2)
        )
        pt.warm_start_posterior(encoder, triple)
        enc = dict(encoder.store.items())
        for name, param in triple.q_store.items():
            if name.startswith("term."):
                np.testing.assert_array_equal(
                    param.data, dict(fresh.q_store.items())[name].data
                )
            else:
                np.testing.assert_array_equal(param.data, enc[name].data)
                assert param.data is not enc[name].data
        # mutating the encoder afterwards must not leak into the posterior
        first = next(iter(enc))
        before = dict(triple.q_store.items())[first].data.copy()
        enc[first].data += 1.0
        np.testing.assert_array_equal(dict(triple.q_store.items())[first].data, before)
