"""Temporal variational inference over option sequences.

The latent structure per trajectory is zeta = (z_t, b_t): a binary
termination flag b_t and a continuous option code z_t per step. b_1 is always
1; while b_t = 0 the code continues bitwise (z_t = z_{t-1}), and at a switch
step a fresh code is drawn from the posterior via reparameterization.

The training objective for one trajectory is

    J = sum_t log pi(a_t | ...) + w_eta * sum_t log eta(zeta_t | ...)
        + w_ent * ( -log q(zeta | trajectory) )

State dynamics and the initial-state density enter the evidence bound only as
additive terms that contain no parameters of pi, eta, or q, so their gradient
vanishes; objective() exposes a `dynamics_bonus` constant to make that drop
directly testable.

Gradient paths: z is reparameterized, so code gradients flow from pi and eta
back into the posterior's mean and variance (no stop-gradient anywhere). The
z-part of log q is computed in its reduced form -0.5*log(2*pi*var) - eps^2/2,
which equals scoring the sampled z under its own Gaussian with the total
derivative taken through z. The binary b has no pathwise derivative and is
handled by a score-function (REINFORCE) term over the switch decisions at
steps t >= 2; step 1 is forced, so it contributes no score term.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import netstack as ns
from .diffcore import Tensor, backward
from .errors import DomainError, InputError

SCORE_EPS_EXPLORE = 0.0  # estimator contract: samples come from q itself


@dataclass
class LossWeights:
    w_eta: float = 1.0
    w_ent: float = 0.01


@dataclass
class LatentSequence:
    """One sampled option sequence.

    eps holds the reparameterization noise actually used at each switch step
    ((z - mu) / sigma, including any exploration multiplier) and zeros at
    continuation steps, so the sequence can be re-scored exactly.
    """

    z: np.ndarray  # (T, d_z)
    b: np.ndarray  # (T,) int64 in {0, 1}
    eps: np.ndarray  # (T, d_z)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.int64)
        self.eps = np.asarray(self.eps, dtype=np.float64)

    @property
    def length(self) -> int:
        return self.b.shape[0]

    def switch_mask(self) -> np.ndarray:
        return self.b.astype(np.float64)

    def validate(self):
        t = self.length
        if self.z.shape[0] != t or self.eps.shape != self.z.shape:
            raise InputError(
                f"latent shapes disagree: z {self.z.shape}, b {self.b.shape}, eps {self.eps.shape}"
            )
        if t == 0:
            raise InputError("empty latent sequence")
        if not np.all((self.b == 0) | (self.b == 1)):
            raise DomainError("b must be binary")
        if self.b[0] != 1:
            raise InputError("b_1 must be 1")
        for step in range(1, t):
            if self.b[step] == 0:
                if not np.array_equal(self.z[step], self.z[step - 1]):
                    raise InputError(f"z continuation broken at step {step + 1}")
                if np.any(self.eps[step] != 0.0):
                    raise InputError(f"eps nonzero at continuation step {step + 1}")
        return self


def build_z_path(mu_vals, var_vals, b, eps) -> np.ndarray:
    """Value-level z sequence: fresh reparameterized code at switch steps,
    bitwise copy of the previous code elsewhere. Shared by sampling and the
    tape op so both produce identical bits."""
    mu_vals = np.asarray(mu_vals, dtype=np.float64)
    var_vals = np.asarray(var_vals, dtype=np.float64)
    if np.any(var_vals <= 0.0):
        raise DomainError("build_z_path: variance must be positive")
    if b[0] != 1:
        raise InputError("b_1 must be 1")
    sigma = np.sqrt(var_vals)
    z = np.empty_like(mu_vals)
    for t in range(z.shape[0]):
        if b[t] == 1:
            z[t] = np.where(eps[t] == 0.0, mu_vals[t], mu_vals[t] + sigma[t] * eps[t])
        else:
            z[t] = z[t - 1]
    return z


def zeta_path(q_mu: Tensor, q_var: Tensor, b, eps) -> Tensor:
    """Differentiable z sequence given fixed switch pattern and noise.

    Forward matches build_z_path bitwise. Backward routes each run's code
    gradient to the posterior mean/variance at the run's switch step.
    """
    bv = np.asarray(b)
    ev = np.asarray(eps, dtype=np.float64)
    val = build_z_path(q_mu.data, q_var.data, bv, ev)
    sigma = np.sqrt(q_var.data)
    t_len = val.shape[0]

    def bk(out):
        def run():
            dmu = np.zeros_like(q_mu.data)
            dvar = np.zeros_like(q_var.data)
            run_start = 0
            total = np.zeros(val.shape[1])
            for t in range(t_len):
                if bv[t] == 1:
                    if t > 0:
                        dmu[run_start] += total
                        dvar[run_start] += total * ev[run_start] / (2.0 * sigma[run_start])
                    run_start = t
                    total = out.grad[t].copy()
                else:
                    total += out.grad[t]
            dmu[run_start] += total
            dvar[run_start] += total * ev[run_start] / (2.0 * sigma[run_start])
            q_mu._acc(dmu)
            q_var._acc(dvar)

        return run

    return dc._make(val, (q_mu, q_var), bk, "zeta_path")


def _values(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def sample_zeta(q_out, epsilon: float, rng, eps_override=None) -> LatentSequence:
    """Sample an option sequence from posterior outputs.

    Termination decisions: b_1 = 1; for t >= 2, with probability epsilon the
    decision is replaced by a fair coin, otherwise b_t ~ Bernoulli(p_t). Code
    noise at switch steps is (1 + epsilon) * standard normal, widening
    exploration early in training. Draw order is fixed: all termination
    decisions in step order, then one noise vector per switch step in step
    order. eps_override, if given, supplies the noise rows directly
    ((T, d_z), used at switch steps) and consumes no RNG.
    """
    mu = _values(q_out.mu)
    var = _values(q_out.var)
    p = _values(q_out.p)
    t_len = mu.shape[0]
    b = np.zeros(t_len, dtype=np.int64)
    b[0] = 1
    for t in range(1, t_len):
        if epsilon > 0.0 and rng.random() < epsilon:
            b[t] = int(rng.integers(0, 2))
        else:
            b[t] = 1 if rng.random() < p[t] else 0
    eps = np.zeros_like(mu)
    for t in range(t_len):
        if b[t] == 1:
            if eps_override is not None:
                eps[t] = eps_override[t]
            else:
                eps[t] = (1.0 + epsilon) * rng.standard_normal(mu.shape[1])
    z = build_z_path(mu, var, b, eps)
    return LatentSequence(z=z, b=b, eps=eps)


def greedy_zeta(q_out) -> LatentSequence:
    """Most-likely option sequence: b_t thresholds p_t at 0.5 (ties
    terminate), codes take the posterior mean at switch steps."""
    mu = _values(q_out.mu)
    var = _values(q_out.var)
    p = _values(q_out.p)
    b = (p >= 0.5).astype(np.int64)
    b[0] = 1
    eps = np.zeros_like(mu)
    z = build_z_path(mu, var, b, eps)
    return LatentSequence(z=z, b=b, eps=eps)


def clamped_zeta(q_out, b, epsilon: float, rng) -> LatentSequence:
    """Option sequence with the switch pattern fixed to b, codes still drawn
    from the posterior with (1 + epsilon)-scaled noise. Consumes one noise
    vector per switch step in step order and nothing else."""
    mu = _values(q_out.mu)
    var = _values(q_out.var)
    b = np.asarray(b, dtype=np.int64)
    if b.shape[0] != mu.shape[0]:
        raise InputError(f"pattern length {b.shape[0]} != {mu.shape[0]} steps")
    eps = np.zeros_like(mu)
    for t in range(mu.shape[0]):
        if b[t] == 1:
            eps[t] = (1.0 + epsilon) * rng.standard_normal(mu.shape[1])
    z = build_z_path(mu, var, b, eps)
    return LatentSequence(z=z, b=b.copy(), eps=eps)


# ---------------------------------------------------------------------------
# log-density terms


def log_q(q_out, zeta: LatentSequence) -> Tensor:
    """log q(zeta | trajectory): Bernoulli mass of every b_t plus the
    Gaussian density of the fresh code at each switch step (reduced form via
    the stored noise)."""
    if not np.array_equal(
        build_z_path(_values(q_out.mu), _values(q_out.var), zeta.b, zeta.eps), zeta.z
    ):
        raise InputError("latent sequence is inconsistent with these posterior outputs")
    bern = dc.bernoulli_log_prob(zeta.switch_mask(), q_out.p)
    gauss = dc.gaussian_log_prob_from_noise(q_out.var, zeta.eps, mask=zeta.switch_mask())
    return bern + gauss


def log_eta(eta_out, zeta: LatentSequence, z_path=None) -> Tensor:
    """log eta(zeta | history): Bernoulli mass of every b_t plus the Gaussian
    density of the code under the high-level policy at switch steps only.

    Pass the live z_path tensor so code gradients flow back into the
    posterior; zeta.z values are used as constants otherwise.
    """
    bern = dc.bernoulli_log_prob(zeta.switch_mask(), eta_out.p)
    z = z_path if z_path is not None else Tensor(zeta.z)
    gauss = dc.gaussian_log_prob(z, eta_out.mu, eta_out.var, mask=zeta.switch_mask())
    return bern + gauss


def log_pi(pi_out, actions) -> Tensor:
    """log pi(a_{1:T} | ...): Gaussian density of every observed action."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape[0] == 0:
        raise InputError("log_pi: empty action sequence")
    return dc.gaussian_log_prob(actions, pi_out.mu, pi_out.var)


# ---------------------------------------------------------------------------
# objective and gradient estimators


@dataclass
class ObjectiveBreakdown:
    sum_log_pi: float
    sum_log_eta: float
    neg_log_q: float
    j_weighted: float


@dataclass
class ObjectiveResult:
    breakdown: ObjectiveBreakdown
    j: Tensor  # scalar, includes any dynamics_bonus
    bern_log_q_score: Tensor  # scalar: log q's Bernoulli mass over steps >= 2
    q_out: object
    z_path: Tensor


def objective(
    traj,
    zeta: LatentSequence,
    triple: ns.PolicyTriple,
    weights: LossWeights,
    q_out=None,
    dynamics_bonus: float = 0.0,
) -> ObjectiveResult:
    """Build the per-trajectory objective J on the tape.

    Reuses q_out when the caller already ran the posterior forward this
    iteration (the tape is shared; do not backward through the same q_out
    twice without zeroing). dynamics_bonus adds a constant per step,
    standing in for the parameter-free dynamics terms of the bound; it
    shifts J's value without touching any gradient. The breakdown identity
    j_weighted = sum_log_pi + w_eta*sum_log_eta + w_ent*neg_log_q always
    excludes the bonus.
    """
    states = np.asarray(traj.states, dtype=np.float64)
    actions = np.asarray(traj.actions, dtype=np.float64)
    t_len = states.shape[0]
    if t_len == 0:
        raise InputError("objective: empty trajectory")
    zeta.validate()
    if zeta.length != t_len:
        raise InputError(f"latent length {zeta.length} != trajectory length {t_len}")
    if q_out is None:
        q_out = ns.q_forward(triple, traj)

    z_path = zeta_path(q_out.mu, q_out.var, zeta.b, zeta.eps)
    if not np.array_equal(z_path.data, zeta.z):
        raise InputError("latent sequence is inconsistent with these posterior outputs")

    actions_prev = ns.shift_actions(actions)
    pi_out = ns.pi_forward(triple, states, actions_prev, z_path)
    eta_out = ns.eta_forward(
        triple,
        states,
        actions_prev,
        dc.row_shift_down(z_path),
        ns.shift_b(zeta.b),
        ns.task_rows(getattr(traj, "task_id", None), triple.dims.d_c, t_len),
    )

    lp = log_pi(pi_out, actions)
    le = log_eta(eta_out, zeta, z_path=z_path)
    neg_lq = -log_q(q_out, zeta)
    j = lp + weights.w_eta * le + weights.w_ent * neg_lq
    if dynamics_bonus != 0.0:
        j = j + float(dynamics_bonus) * t_len

    score_mask = np.ones(t_len)
    score_mask[0] = 0.0
    bern_score = dc.bernoulli_log_prob(zeta.switch_mask(), q_out.p, mask=score_mask)

    breakdown = ObjectiveBreakdown(
        sum_log_pi=lp.item(),
        sum_log_eta=le.item(),
        neg_log_q=neg_lq.item(),
        j_weighted=lp.item() + weights.w_eta * le.item() + weights.w_ent * neg_lq.item(),
    )
    return ObjectiveResult(
        breakdown=breakdown, j=j, bern_log_q_score=bern_score, q_out=q_out, z_path=z_path
    )


def pathwise_gradients(traj, zeta, triple, weights, dynamics_bonus: float = 0.0):
    """Gradients of J w.r.t. all three stores for a fixed latent sample.
    Returns ({net: {param: grad}}, breakdown)."""
    triple.zero_grad()
    res = objective(traj, zeta, triple, weights, dynamics_bonus=dynamics_bonus)
    backward(res.j)
    return {name: s.grads() for name, s in triple.stores().items()}, res.breakdown


def _zero_grad_accum(triple):
    return {
        name: {pname: np.zeros_like(t.data) for pname, t in s.items()}
        for name, s in triple.stores().items()
    }


def _surrogate(res: ObjectiveResult, baseline: float) -> Tensor:
    adv = res.j.item() - baseline
    return res.j + adv * res.bern_log_q_score


def reinforce_b_gradients(
    traj,
    triple: ns.PolicyTriple,
    weights: LossWeights,
    n_samples: int,
    baseline: float,
    rng,
    eps_table=None,
):
    """Monte-Carlo estimate of grad E_b[J]: pathwise through z plus the
    score-function term for b, averaged over n_samples posterior samples.

    Each sample backpropagates J + (J - baseline) * log q(b_{2:T}); the
    advantage is a detached scalar. eps_table fixes the code noise per step
    so the only randomness is the switch pattern (used when comparing against
    the enumeration oracle). Returns ({net: {param: grad}}, mean_j).
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    accum = _zero_grad_accum(triple)
    j_total = 0.0
    for _ in range(n_samples):
        triple.zero_grad()
        q_out = ns.q_forward(triple, traj)
        zeta = sample_zeta(q_out, SCORE_EPS_EXPLORE, rng, eps_override=eps_table)
        res = objective(traj, zeta, triple, weights, q_out=q_out)
        backward(_surrogate(res, baseline))
        j_total += res.j.item()
        for name, s in triple.stores().items():
            for pname, g in s.grads().items():
                accum[name][pname] += g
    for name in accum:
        for pname in accum[name]:
            accum[name][pname] /= n_samples
    return accum, j_total / n_samples


def enumerate_b_oracle(
    traj, triple: ns.PolicyTriple, weights: LossWeights, baseline: float, eps_table
):
    """Exact expectation of the reinforce_b_gradients estimand by summing
    over all 2^(T-1) switch patterns, weighted by their posterior mass.
    Refuses trajectories longer than 6 steps. Returns
    ({net: {param: grad}}, expected_j)."""
    t_len = np.asarray(traj.states).shape[0]
    if t_len > 6:
        raise InputError(f"enumeration over 2^(T-1) patterns refuses T = {t_len} > 6")
    eps_table = np.asarray(eps_table, dtype=np.float64)
    accum = _zero_grad_accum(triple)
    expected_j = 0.0
    for pattern in range(2 ** (t_len - 1)):
        b = np.ones(t_len, dtype=np.int64)
        for t in range(1, t_len):
            b[t] = (pattern >> (t - 1)) & 1
        triple.zero_grad()
        q_out = ns.q_forward(triple, traj)
        p = q_out.p.data
        weight = 1.0
        for t in range(1, t_len):
            weight *= p[t] if b[t] == 1 else 1.0 - p[t]
        eps = np.zeros((t_len, eps_table.shape[1]))
        eps[b == 1] = eps_table[b == 1]
        zeta = LatentSequence(
            z=build_z_path(q_out.mu.data, q_out.var.data, b, eps), b=b, eps=eps
        )
        res = objective(traj, zeta, triple, weights, q_out=q_out)
        backward(_surrogate(res, baseline))
        expected_j += weight * res.j.item()
        for name, s in triple.stores().items():
            for pname, g in s.grads().items():
                accum[name][pname] += weight * g
    return accum, expected_j
