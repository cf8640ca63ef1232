"""Variational pretraining of the low-level policy on random segments.

A bidirectional segment encoder compresses a window of (state, action) rows
into a single latent code; the low-level policy then reconstructs the window's
actions conditioned on that code held constant across the window. Training
maximizes reconstruction likelihood minus a KL penalty toward the standard
normal prior, updating only the encoder and the low-level policy. The
high-level policy and the posterior trunk are never touched here, though the
encoder's weights can seed the posterior afterwards since the two share a
trunk shape.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import netstack as ns
from .diffcore import ParamStore, Tensor, adam_step, backward
from .errors import InputError


class SegmentEncoder:
    """Bidirectional trunk with a per-step Gaussian code head, pooled over time.

    Parameter names deliberately mirror the posterior network's trunk and
    code head so a trained encoder can warm-start the posterior name-for-name.
    The head runs per step and the resulting means and variances are averaged
    into the single segment code, so every per-step head output is itself
    trained toward the segment code; after a warm start the posterior then
    emits a local estimate of the enclosing segment's code at every step
    rather than an untrained feature projection.
    """

    def __init__(self, dims: ns.Dims, layers: int = 2, hidden: int = 64, seed: int = 0):
        self.dims = dims
        rng = np.random.default_rng([seed, 4])
        self.store = ParamStore("encoder")
        self.trunk = ns.RecurrentStack(
            self.store, "trunk", dims.d_s + dims.d_a, hidden, layers, True, rng
        )
        self.head = ns.GaussianHead(self.store, "code", 2 * hidden, dims.d_z, rng)

    def forward(self, states, actions):
        """Encode a (T, d_s)/(T, d_a) window into a (d_z,) diagonal Gaussian."""
        x = dc.concat_cols(
            Tensor(np.asarray(states, dtype=np.float64)),
            Tensor(np.asarray(actions, dtype=np.float64)),
        )
        mu_steps, var_steps = self.head.forward(self.trunk.forward(x))
        return dc.mean_rows(mu_steps), dc.mean_rows(var_steps)

    def param_count(self) -> int:
        return self.store.param_count()


@dataclass
class VaeStepResult:
    loss: float
    recon_log_prob: float
    kl: float


def sample_segment(traj, length_range, rng):
    """Draw a contiguous window from a trajectory.

    Consumes exactly two draws: length uniform in length_range (clipped to the
    trajectory length), then start position. Returns (states, actions) views.
    """
    lo, hi = length_range
    if lo < 2 or hi < lo:
        raise InputError(f"segment length range {length_range} must satisfy 2 <= lo <= hi")
    t = traj.states.shape[0]
    length = min(int(rng.integers(lo, hi + 1)), t)
    start = int(rng.integers(0, t - length + 1))
    return traj.states[start : start + length], traj.actions[start : start + length]


def vae_loss(triple: ns.PolicyTriple, encoder: SegmentEncoder, states, actions, beta, eps):
    """Negative ELBO of one window: -log pi(actions | code) + beta * KL(code).

    eps is the (d_z,) reparameterization draw; the code is sampled once and
    tiled across the window for the policy.
    """
    mu, var = encoder.forward(states, actions)
    z = dc.reparameterize(mu, var, np.asarray(eps, dtype=np.float64))
    zs = dc.tile_rows(z, states.shape[0])
    pi_out = ns.pi_forward(triple, states, ns.shift_actions(actions), zs)
    recon = dc.gaussian_log_prob(np.asarray(actions, dtype=np.float64), pi_out.mu, pi_out.var)
    kl = dc.kl_to_standard_normal(mu, var)
    loss = -recon + beta * kl
    return loss, recon, kl


def pretrain_step(triple, encoder, states, actions, beta, lr, eps, grad_clip=10.0):
    """One optimizer step on the encoder and low-level policy stores."""
    loss, recon, kl = vae_loss(triple, encoder, states, actions, beta, eps)
    encoder.store.zero_grad()
    triple.pi_store.zero_grad()
    backward(loss)
    for store in (encoder.store, triple.pi_store):
        store.clip_grad_norm(grad_clip)
        adam_step(store, lr)
    return VaeStepResult(loss.item(), recon.item(), kl.item())


def run_pretraining(
    triple: ns.PolicyTriple,
    encoder: SegmentEncoder,
    trajectories,
    epochs: int,
    lr: float,
    beta: float,
    length_range,
    rng,
    steps_per_epoch: int = 0,
    log_fn=None,
):
    """Train encoder + low-level policy; returns per-epoch metric dicts.

    Per step the rng is consumed in a fixed order: trajectory index, segment
    length, segment start, then the d_z reparameterization draws. The
    high-level policy and posterior stores are never read or written.
    """
    if not trajectories:
        raise InputError("pretraining requires at least one trajectory")
    steps = steps_per_epoch if steps_per_epoch > 0 else len(trajectories)
    history = []
    for epoch in range(epochs):
        totals = np.zeros(3)
        for _ in range(steps):
            idx = int(rng.integers(0, len(trajectories)))
            states, actions = sample_segment(trajectories[idx], length_range, rng)
            eps = rng.standard_normal(triple.dims.d_z)
            res = pretrain_step(triple, encoder, states, actions, beta, lr, eps)
            totals += (res.loss, res.recon_log_prob, res.kl)
        row = {
            "epoch": epoch,
            "loss": totals[0] / steps,
            "recon_log_prob": totals[1] / steps,
            "kl": totals[2] / steps,
        }
        history.append(row)
        if log_fn is not None:
            log_fn(row)
    return history


def warm_start_posterior(encoder: SegmentEncoder, triple: ns.PolicyTriple):
    """Copy the encoder trunk and code head into the posterior, name-for-name.

    The posterior's termination head keeps its fresh initialization; only the
    shared-shape parameters move.
    """
    for name, param in encoder.store.items():
        # set_param does not copy contiguous input; never alias the stores
        triple.q_store.set_param(name, param.data.copy())
