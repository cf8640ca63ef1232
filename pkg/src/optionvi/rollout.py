"""Trajectory generation and demonstration reconstruction with learned nets.

Generation follows the hierarchical process exactly: the termination flag is
forced on at the first step, a fresh option code is drawn from the high-level
policy at switches and copied bitwise otherwise, the low-level policy emits
the action, and the dynamics rule produces the next state. Reconstruction
instead takes the option sequence greedily from the posterior on a given
demonstration and replays the low-level policy, either one step ahead of the
ground-truth history (teacher forced) or fully closed-loop from the first
state (open loop). Every path here steps the value-only network route, so a
teacher-forced and an open-loop reconstruction coincide bitwise at the first
step, and generation truncated at t equals generation run for t steps.
"""

import json

import numpy as np

from . import netstack as ns
from .corpus import Trajectory
from .errors import InputError
from .tvi import LatentSequence, greedy_zeta

MODES_GENERATE = ("stochastic", "greedy")
MODES_RECONSTRUCT = ("teacher_forced", "open_loop")


class IntegratorDynamics:
    """Pure integration: the action is the state increment.

    Valid only in raw corpus units; normalized trajectories scale states and
    actions independently, so use normalized_integrator for those.
    """

    def step(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return s + a


class AffineIntegrator:
    """Integration under a per-dimension affine change of units.

    step(s, a) = s + a * scale + offset. With scale = action_scale /
    state_scale and offset = action_mean / state_scale this is the image of
    pure integration in normalized units: feeding the true normalized actions
    reproduces the true normalized states exactly.
    """

    def __init__(self, scale: np.ndarray, offset: np.ndarray):
        self.scale = np.asarray(scale, dtype=np.float64)
        self.offset = np.asarray(offset, dtype=np.float64)

    def step(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return s + a * self.scale + self.offset


def normalized_integrator(stats) -> AffineIntegrator:
    """The integrator as seen by trajectories normalized with stats."""
    return AffineIntegrator(
        stats.action_scale / stats.state_scale,
        stats.action_mean / stats.state_scale,
    )


def _task_vec(task_id, d_c):
    if d_c == 0:
        return None
    if task_id is None or not 0 <= task_id < d_c:
        raise InputError(f"task_id {task_id!r} outside [0, {d_c})")
    vec = np.zeros(d_c)
    vec[task_id] = 1.0
    return vec


def _eta_step(triple, state, s, a_prev, z_prev, b_prev, task_vec):
    parts = [s, a_prev, z_prev, np.array([1.0 - b_prev, b_prev])]
    if task_vec is not None:
        parts.append(task_vec)
    h, state = triple.eta_stack.step(np.concatenate(parts), state)
    mu, var = triple.eta_zhead.values(h)
    p = triple.eta_bhead.values(h)
    return mu, var, p, state


def _pi_step(triple, state, s, a_prev, z):
    h, state = triple.pi_stack.step(np.concatenate([s, a_prev, z]), state)
    mu, var = triple.pi_head.values(h)
    return mu, var, state


def generate(triple, dynamics, s1, steps, mode, rng=None, task_id=None):
    """Roll out the learned policies for a number of steps.

    Stochastic mode consumes, per step: one uniform for the termination flag
    (none at the forced first step), the code noise at switches, then the
    action noise. Greedy mode consumes nothing and resolves a termination
    probability of exactly 0.5 toward switching.
    """
    if mode not in MODES_GENERATE:
        raise InputError(f"generate mode {mode!r} not in {MODES_GENERATE}")
    if steps < 1:
        raise InputError(f"steps must be >= 1, got {steps}")
    if mode == "stochastic" and rng is None:
        raise InputError("stochastic generation requires an rng")
    dims = triple.dims
    s1 = np.asarray(s1, dtype=np.float64)
    if s1.shape != (dims.d_s,):
        raise InputError(f"s1 shape {s1.shape} vs ({dims.d_s},)")
    task = _task_vec(task_id, dims.d_c)

    states = np.zeros((steps, dims.d_s))
    actions = np.zeros((steps, dims.d_a))
    z = np.zeros((steps, dims.d_z))
    b = np.zeros(steps, dtype=np.int64)
    eps = np.zeros((steps, dims.d_z))

    eta_state = triple.eta_stack.begin_state()
    pi_state = triple.pi_stack.begin_state()
    s = s1
    a_prev = np.zeros(dims.d_a)
    z_prev = np.zeros(dims.d_z)
    b_prev = 1.0
    for t in range(steps):
        states[t] = s
        mu_z, var_z, p, eta_state = _eta_step(triple, eta_state, s, a_prev, z_prev, b_prev, task)
        if t == 0:
            b[t] = 1
        elif mode == "greedy":
            b[t] = 1 if p >= 0.5 else 0
        else:
            b[t] = 1 if rng.random() < p else 0
        if b[t] == 1:
            if mode == "stochastic":
                eps[t] = rng.standard_normal(dims.d_z)
            z[t] = mu_z + np.sqrt(var_z) * eps[t] if np.any(eps[t]) else mu_z
        else:
            z[t] = z[t - 1]
        mu_a, var_a, pi_state = _pi_step(triple, pi_state, s, a_prev, z[t])
        if mode == "stochastic":
            actions[t] = mu_a + np.sqrt(var_a) * rng.standard_normal(dims.d_a)
        else:
            actions[t] = mu_a
        a_prev = actions[t]
        z_prev = z[t]
        b_prev = float(b[t])
        if t + 1 < steps:
            s = dynamics.step(s, actions[t])

    traj = Trajectory(states=states, actions=actions, task_id=task_id)
    zeta = LatentSequence(z=z, b=b, eps=eps)
    zeta.validate()
    return traj, zeta


def reconstruct(traj, triple, dynamics, mode):
    """Replay a demonstration through the low-level policy.

    The option sequence is the posterior's greedy output on the original
    trajectory in both modes. Teacher forced conditions each step on the
    ground-truth history and predicts one state ahead; open loop feeds the
    policy its own actions and integrated states from the first state on.
    Returns (predicted Trajectory, LatentSequence).
    """
    if mode not in MODES_RECONSTRUCT:
        raise InputError(f"reconstruct mode {mode!r} not in {MODES_RECONSTRUCT}")
    zeta = greedy_zeta(ns.q_forward(triple, traj))
    t_total = traj.states.shape[0]
    pred_states = np.zeros_like(traj.states)
    pred_actions = np.zeros_like(traj.actions)
    pred_states[0] = traj.states[0]

    pi_state = triple.pi_stack.begin_state()
    for t in range(t_total):
        if mode == "teacher_forced":
            s = traj.states[t]
            a_prev = traj.actions[t - 1] if t > 0 else np.zeros(traj.actions.shape[1])
        else:
            s = pred_states[t]
            a_prev = pred_actions[t - 1] if t > 0 else np.zeros(traj.actions.shape[1])
        mu_a, _, pi_state = _pi_step(triple, pi_state, s, a_prev, zeta.z[t])
        pred_actions[t] = mu_a
        if t + 1 < t_total:
            base = traj.states[t] if mode == "teacher_forced" else pred_states[t]
            pred_states[t + 1] = dynamics.step(base, pred_actions[t])

    pred = Trajectory(states=pred_states, actions=pred_actions, task_id=traj.task_id)
    return pred, zeta


def save_rollouts(path, rollouts):
    """Write (Trajectory, LatentSequence) pairs as one JSON object per line."""
    with open(path, "w") as fh:
        for traj, zeta in rollouts:
            fh.write(
                json.dumps(
                    {
                        "states": traj.states.tolist(),
                        "actions": traj.actions.tolist(),
                        "zeta": {"z": zeta.z.tolist(), "b": zeta.b.tolist()},
                    }
                )
                + "\n"
            )
