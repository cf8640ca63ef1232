"""Tests for policy rollouts and demonstration reconstruction."""

import json

import numpy as np
import pytest

from optionvi import netstack as ns
from optionvi import rollout as ro
from optionvi.corpus import Trajectory
from optionvi.diffcore import adam_step, backward
from optionvi.errors import InputError
from optionvi.tvi import greedy_zeta, log_pi

DIMS = ns.Dims(d_s=2, d_a=2, d_z=2, d_c=0)


def tiny_triple(seed=0):
    return ns.PolicyTriple(DIMS, layers=1, hidden=4, seed=seed)


def force_no_switch(triple):
    # bias the termination head so p(switch) is ~0 after the forced first step
    triple.eta_store.set_param("term.w", np.zeros((4, 2)))
    triple.eta_store.set_param("term.b", np.array([20.0, -20.0]))


class TestGenerate:
    def test_integration_dynamics_exact(self):
        traj, _ = ro.generate(
            tiny_triple(), ro.IntegratorDynamics(), np.zeros(2), 8, "greedy"
        )
        np.testing.assert_array_equal(traj.states[1:], traj.states[:-1] + traj.actions[:-1])

    def test_normalized_integrator_reproduces_normalized_states(self):
        # the transported integrator must make true normalized actions
        # reproduce true normalized states; the raw rule does not
        from optionvi import corpus as cp

        spec = cp.CorpusSpec(demo_count=4, seed=3)
        data = cp.generate_corpus(spec)
        stats = cp.compute_norm_stats(data)
        norm = cp.normalize(data, stats)
        dyn = ro.normalized_integrator(stats)
        for tj in norm.trajectories:
            stepped = np.array(
                [dyn.step(tj.states[t], tj.actions[t]) for t in range(len(tj.states) - 1)]
            )
            np.testing.assert_allclose(stepped, tj.states[1:], rtol=0, atol=1e-12)
            raw_rule = tj.states[:-1] + tj.actions[:-1]
            assert np.abs(raw_rule - tj.states[1:]).max() > 1e-3

    def test_greedy_deterministic(self):
        triple = tiny_triple(1)
        a = ro.generate(triple, ro.IntegratorDynamics(), np.ones(2), 6, "greedy")
        b = ro.generate(triple, ro.IntegratorDynamics(), np.ones(2), 6, "greedy")
        np.testing.assert_array_equal(a[0].states, b[0].states)
        np.testing.assert_array_equal(a[0].actions, b[0].actions)
        np.testing.assert_array_equal(a[1].z, b[1].z)

    def test_stochastic_seeded_determinism(self):
        triple = tiny_triple(2)
        a = ro.generate(
            triple, ro.IntegratorDynamics(), np.zeros(2), 6, "stochastic",
            rng=np.random.default_rng(7),
        )
        b = ro.generate(
            triple, ro.IntegratorDynamics(), np.zeros(2), 6, "stochastic",
            rng=np.random.default_rng(7),
        )
        np.testing.assert_array_equal(a[0].states, b[0].states)
        np.testing.assert_array_equal(a[1].b, b[1].b)

    def test_truncation_equivalence_bitwise(self):
        triple = tiny_triple(3)
        long_t, long_z = ro.generate(
            triple, ro.IntegratorDynamics(), np.zeros(2), 10, "stochastic",
            rng=np.random.default_rng(8),
        )
        short_t, short_z = ro.generate(
            triple, ro.IntegratorDynamics(), np.zeros(2), 4, "stochastic",
            rng=np.random.default_rng(8),
        )
        np.testing.assert_array_equal(short_t.states, long_t.states[:4])
        np.testing.assert_array_equal(short_t.actions, long_t.actions[:4])
        np.testing.assert_array_equal(short_z.z, long_z.z[:4])
        np.testing.assert_array_equal(short_z.b, long_z.b[:4])

    def test_forced_single_option(self):
        triple = tiny_triple(4)
        force_no_switch(triple)
        _, zeta = ro.generate(
            triple, ro.IntegratorDynamics(), np.zeros(2), 9, "stochastic",
            rng=np.random.default_rng(9),
        )
        np.testing.assert_array_equal(zeta.b, [1] + [0] * 8)
        for t in range(1, 9):
            np.testing.assert_array_equal(zeta.z[t], zeta.z[0])

    def test_latent_invariants_always_hold(self):
        rng = np.random.default_rng(10)
        for seed in range(5):
            triple = tiny_triple(seed)
            _, zeta = ro.generate(
                triple, ro.IntegratorDynamics(), rng.standard_normal(2), 7,
                "stochastic", rng=rng,
            )
            zeta.validate()
            assert zeta.b[0] == 1

    def test_input_validation(self):
        triple = tiny_triple()
        dyn = ro.IntegratorDynamics()
        with pytest.raises(InputError, match="mode"):
            ro.generate(triple, dyn, np.zeros(2), 5, "fast")
        with pytest.raises(InputError, match="steps"):
            ro.generate(triple, dyn, np.zeros(2), 0, "greedy")
        with pytest.raises(InputError, match="rng"):
            ro.generate(triple, dyn, np.zeros(2), 5, "stochastic")
        with pytest.raises(InputError, match="s1"):
            ro.generate(triple, dyn, np.zeros(3), 5, "greedy")


class TestReconstruct:
    def make_demo(self, rng, t=8):
        actions = 0.2 * rng.standard_normal((t, 2))
        states = np.zeros((t, 2))
        states[1:] = np.cumsum(actions[:-1], axis=0)
        return Trajectory(states=states, actions=actions)

    def test_modes_coincide_at_first_step(self):
        rng = np.random.default_rng(11)
        triple = tiny_triple(5)
        demo = self.make_demo(rng)
        tf, _ = ro.reconstruct(demo, triple, ro.IntegratorDynamics(), "teacher_forced")
        ol, _ = ro.reconstruct(demo, triple, ro.IntegratorDynamics(), "open_loop")
        np.testing.assert_array_equal(tf.states[0], ol.states[0])
        np.testing.assert_array_equal(tf.actions[0], ol.actions[0])

    def test_teacher_forced_is_one_step_ahead(self):
        rng = np.random.default_rng(12)
        triple = tiny_triple(6)
        demo = self.make_demo(rng)
        tf, _ = ro.reconstruct(demo, triple, ro.IntegratorDynamics(), "teacher_forced")
        np.testing.assert_array_equal(tf.states[1:], demo.states[:-1] + tf.actions[:-1])
        np.testing.assert_array_equal(tf.states[0], demo.states[0])

    def test_open_loop_integrates_own_states(self):
        rng = np.random.default_rng(13)
        triple = tiny_triple(7)
        demo = self.make_demo(rng)
        ol, _ = ro.reconstruct(demo, triple, ro.IntegratorDynamics(), "open_loop")
        np.testing.assert_array_equal(ol.states[1:], ol.states[:-1] + ol.actions[:-1])

    def test_zeta_is_posterior_greedy_output(self):
        rng = np.random.default_rng(14)
        triple = tiny_triple(8)
        demo = self.make_demo(rng)
        _, zeta = ro.reconstruct(demo, triple, ro.IntegratorDynamics(), "teacher_forced")
        expect = greedy_zeta(ns.q_forward(triple, demo))
        np.testing.assert_array_equal(zeta.z, expect.z)
        np.testing.assert_array_equal(zeta.b, expect.b)

    def test_memorizing_policy_reconstructs_demo(self):
        # overfit the low-level policy on one demo with the posterior's codes
        # frozen; teacher-forced reconstruction error must get small
        rng = np.random.default_rng(15)
        triple = tiny_triple(9)
        demo = self.make_demo(rng, t=6)
        zs = greedy_zeta(ns.q_forward(triple, demo)).z
        for _ in range(800):
            out = ns.pi_forward(triple, demo.states, ns.shift_actions(demo.actions), zs)
            triple.pi_store.zero_grad()
            backward(-log_pi(out, demo.actions))
            triple.pi_store.clip_grad_norm(10.0)
            adam_step(triple.pi_store, 1e-2)
        tf, _ = ro.reconstruct(demo, triple, ro.IntegratorDynamics(), "teacher_forced")
        mse = float(np.mean((tf.states - demo.states) ** 2))
        assert mse < 1e-3

    def test_mode_validated(self):
        rng = np.random.default_rng(16)
        with pytest.raises(InputError, match="mode"):
            ro.reconstruct(
                self.make_demo(rng), tiny_triple(), ro.IntegratorDynamics(), "both"
            )


class TestSaveRollouts:
    def test_jsonl_shape_and_zeta_field(self, tmp_path):
        triple = tiny_triple(10)
        pairs = [
            ro.generate(triple, ro.IntegratorDynamics(), np.zeros(2), 5, "greedy")
            for _ in range(3)
        ]
        path = tmp_path / "rollouts.jsonl"
        ro.save_rollouts(path, pairs)
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        row = json.loads(lines[0])
        assert set(row) == {"states", "actions", "zeta"}
        assert np.asarray(row["zeta"]["z"]).shape == (5, 2)
        assert row["zeta"]["b"][0] == 1
