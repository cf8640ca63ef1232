"""Recurrent network definitions for the three jointly trained models.

All three share one body plan: an LSTM stack followed by small dense heads.

  * low-level policy (pi):   causal stack over (s_t, a_{t-1}, z_t),
                             Gaussian head over actions
  * high-level policy (eta): causal stack over (s_t, a_{t-1}, z_{t-1},
                             onehot(b_{t-1}), task), Gaussian head over the
                             next option code plus a termination head
  * posterior (q):           bidirectional stack over (s_t, a_t), Gaussian
                             head over option codes plus a termination head

Weights initialize uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] (bias fan_in
is the hidden width). Gaussian heads emit softplus variances, so variance is
strictly positive; termination heads emit two probabilities in (0, 1) that
sum to one exactly.

Tape forwards run whole sequences through the fused LSTM kernel. The step
API (begin_state/step and the *_values helpers) is a value-only path for
incremental rollout; it uses identical formulas, so a rollout and a re-run
over the same prefix agree bitwise along that path.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor
from .errors import DimensionError, InputError

_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class Dims:
    """Channel widths: state, action, option code, task conditioning."""

    d_s: int
    d_a: int
    d_z: int
    d_c: int = 0


class CellParams(NamedTuple):
    w_ih: Tensor
    w_hh: Tensor
    b: Tensor


def _softplus_values(x):
    return np.maximum(np.logaddexp(0.0, x), _TINY)


def _sigmoid_values(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def cell_step(cell: CellParams, x, state):
    """Differentiable single LSTM step on (1, D) rows.

    state is a pair of (1, H) tensors (h, c). Composed from primitive tape
    ops; the fused sequence kernel is the hot path, this exists for stepping
    with gradients and as an independent cross-check of that kernel.
    """
    h_prev, c_prev = state
    hid = cell.w_hh.data.shape[0]
    pre = dc.add(dc.affine(x, cell.w_ih, cell.b), dc.affine(h_prev, cell.w_hh))
    i = dc.sigmoid(dc.slice_cols(pre, 0, hid))
    f = dc.sigmoid(dc.slice_cols(pre, hid, 2 * hid))
    g = dc.tanh(dc.slice_cols(pre, 2 * hid, 3 * hid))
    o = dc.sigmoid(dc.slice_cols(pre, 3 * hid, 4 * hid))
    c = dc.add(dc.mul(f, c_prev), dc.mul(i, g))
    h = dc.mul(o, dc.tanh(c))
    return h, c


def cell_step_values(w_ih, w_hh, b, x_vec, h_vec, c_vec):
    """Value-only LSTM step on flat vectors; the rollout hot path."""
    hid = w_hh.shape[0]
    pre = x_vec @ w_ih + h_vec @ w_hh + b
    i = _sigmoid_values(pre[0:hid])
    f = _sigmoid_values(pre[hid : 2 * hid])
    g = np.tanh(pre[2 * hid : 3 * hid])
    o = _sigmoid_values(pre[3 * hid : 4 * hid])
    c = f * c_vec + i * g
    h = o * np.tanh(c)
    return h, c


class RecurrentStack:
    """LSTM stack owned by a ParamStore; causal or bidirectional."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        input_dim: int,
        hidden: int,
        layers: int,
        bidirectional: bool,
        rng,
    ):
        if layers < 1 or hidden < 1 or input_dim < 1:
            raise InputError(
                f"stack {prefix!r}: layers, hidden and input_dim must be >= 1"
            )
        self.store = store
        self.prefix = prefix
        self.input_dim = input_dim
        self.hidden = hidden
        self.layers = layers
        self.bidirectional = bidirectional
        self.out_dim = hidden * (2 if bidirectional else 1)
        self.cells = []
        for layer in range(layers):
            d_in = input_dim if layer == 0 else self.out_dim
            row = {}
            for direction in ("f", "b") if bidirectional else ("f",):
                tag = f"{prefix}.l{layer}{direction}"
                row[direction] = CellParams(
                    store.add_uniform(f"{tag}.w_ih", (d_in, 4 * hidden), d_in, rng),
                    store.add_uniform(f"{tag}.w_hh", (hidden, 4 * hidden), hidden, rng),
                    store.add_uniform(f"{tag}.b", (4 * hidden,), hidden, rng),
                )
            self.cells.append(row)

    def forward(self, x) -> Tensor:
        """Full-sequence forward; x is (T, input_dim), returns (T, out_dim)."""
        cur = x
        for row in self.cells:
            fwd = dc.lstm_seq(cur, *row["f"])
            if self.bidirectional:
                rev = dc.lstm_seq(dc.reverse_rows(cur), *row["b"])
                cur = dc.concat_cols(fwd, dc.reverse_rows(rev))
            else:
                cur = fwd
        return cur

    def begin_state(self):
        if self.bidirectional:
            raise InputError("stepping requires a causal stack")
        return [
            (np.zeros(self.hidden), np.zeros(self.hidden)) for _ in range(self.layers)
        ]

    def step(self, x_vec, state):
        """One value-only step; returns (out_vec, new_state)."""
        if self.bidirectional:
            raise InputError("stepping requires a causal stack")
        cur = np.asarray(x_vec, dtype=np.float64)
        new_state = []
        for row, (h, c) in zip(self.cells, state):
            cell = row["f"]
            h, c = cell_step_values(
                cell.w_ih.data, cell.w_hh.data, cell.b.data, cur, h, c
            )
            new_state.append((h, c))
            cur = h
        return cur, new_state


class GaussianHead:
    """Dense head emitting a diagonal Gaussian: linear mean, softplus variance."""

    def __init__(self, store: ParamStore, prefix: str, in_dim: int, out_dim: int, rng):
        self.w_mu = store.add_uniform(f"{prefix}.w_mu", (in_dim, out_dim), in_dim, rng)
        self.b_mu = store.add_uniform(f"{prefix}.b_mu", (out_dim,), in_dim, rng)
        self.w_var = store.add_uniform(f"{prefix}.w_var", (in_dim, out_dim), in_dim, rng)
        self.b_var = store.add_uniform(f"{prefix}.b_var", (out_dim,), in_dim, rng)

    def forward(self, h: Tensor):
        mu = dc.affine(h, self.w_mu, self.b_mu)
        var = dc.softplus(dc.affine(h, self.w_var, self.b_var))
        return mu, var

    def values(self, h):
        mu = h @ self.w_mu.data + self.b_mu.data
        var = _softplus_values(h @ self.w_var.data + self.b_var.data)
        return mu, var


# Initial offset on the termination logit. With symmetric logits the switch
# probability starts at 0.5, so greedy decoding terminates options at every
# step and training entrenches that regime; starting in the continuation
# regime lets switches be added only where they pay off.
TERM_CONTINUE_BIAS = -2.0


class TerminationHead:
    """Dense head emitting two probabilities per row via 2-logit normalization."""

    def __init__(self, store: ParamStore, prefix: str, in_dim: int, rng):
        self.w = store.add_uniform(f"{prefix}.w", (in_dim, 2), in_dim, rng)
        self.b = store.add_uniform(f"{prefix}.b", (2,), in_dim, rng)
        self.b.data[1] += TERM_CONTINUE_BIAS

    def forward(self, h: Tensor) -> Tensor:
        """(T, 2) probabilities; column 1 is the termination probability."""
        return dc.termination_probs(dc.affine(h, self.w, self.b))

    def values(self, h_vec) -> float:
        logits = h_vec @ self.w.data + self.b.data
        raw = float(_sigmoid_values(np.array([logits[1] - logits[0]]))[0])
        return float(np.clip(raw, dc.PROB_FLOOR, 1.0 - dc.PROB_FLOOR))


@dataclass
class QOutput:
    mu: Tensor  # (T, d_z)
    var: Tensor  # (T, d_z)
    probs: Tensor  # (T, 2)
    p: Tensor  # (T,) termination probability


@dataclass
class PiOutput:
    mu: Tensor  # (T, d_a)
    var: Tensor  # (T, d_a)


@dataclass
class EtaOutput:
    mu: Tensor  # (T, d_z)
    var: Tensor  # (T, d_z)
    probs: Tensor  # (T, 2)
    p: Tensor  # (T,)


class PolicyTriple:
    """The three networks plus their parameter stores.

    Parameter count is a pure function of (layers, hidden, dims); seeds only
    move the initial values.
    """

    def __init__(self, dims: Dims, layers: int = 2, hidden: int = 64, seed: int = 0):
        self.dims = dims
        self.layers = layers
        self.hidden = hidden
        self.seed = seed

        rng_pi = np.random.default_rng([seed, 1])
        self.pi_store = ParamStore("pi")
        self.pi_stack = RecurrentStack(
            self.pi_store, "trunk", dims.d_s + dims.d_a + dims.d_z, hidden, layers, False, rng_pi
        )
        self.pi_head = GaussianHead(self.pi_store, "action", hidden, dims.d_a, rng_pi)

        rng_eta = np.random.default_rng([seed, 2])
        self.eta_store = ParamStore("eta")
        eta_in = dims.d_s + dims.d_a + dims.d_z + 2 + dims.d_c
        self.eta_stack = RecurrentStack(
            self.eta_store, "trunk", eta_in, hidden, layers, False, rng_eta
        )
        self.eta_zhead = GaussianHead(self.eta_store, "code", hidden, dims.d_z, rng_eta)
        self.eta_bhead = TerminationHead(self.eta_store, "term", hidden, rng_eta)

        rng_q = np.random.default_rng([seed, 3])
        self.q_store = ParamStore("q")
        self.q_stack = RecurrentStack(
            self.q_store, "trunk", dims.d_s + dims.d_a, hidden, layers, True, rng_q
        )
        self.q_zhead = GaussianHead(self.q_store, "code", 2 * hidden, dims.d_z, rng_q)
        self.q_bhead = TerminationHead(self.q_store, "term", 2 * hidden, rng_q)

    def stores(self) -> dict:
        return {"pi": self.pi_store, "eta": self.eta_store, "q": self.q_store}

    def param_count(self) -> dict:
        counts = {name: s.param_count() for name, s in self.stores().items()}
        counts["total"] = sum(counts.values())
        return counts

    def zero_grad(self):
        for s in self.stores().values():
            s.zero_grad()


# ---------------------------------------------------------------------------
# sequence assembly helpers (value level, all constants)


def shift_actions(actions: np.ndarray) -> np.ndarray:
    """Previous-action rows: out[t] = actions[t-1], out[0] = 0."""
    a = np.asarray(actions, dtype=np.float64)
    out = np.zeros_like(a)
    out[1:] = a[:-1]
    return out


def shift_b(b: np.ndarray) -> np.ndarray:
    """Previous-termination values with the step-0 convention b_0 = 1."""
    bv = np.asarray(b, dtype=np.float64)
    out = np.empty_like(bv)
    out[0] = 1.0
    out[1:] = bv[:-1]
    return out


def b_onehot(b_vals: np.ndarray) -> np.ndarray:
    """(T, 2) one-hot rows [1-b, b] for a binary vector."""
    bv = np.asarray(b_vals, dtype=np.float64)
    return np.stack([1.0 - bv, bv], axis=1)


def task_rows(task_id: Optional[int], d_c: int, t: int) -> Optional[np.ndarray]:
    """One-hot task conditioning rows, or None when d_c == 0."""
    if d_c == 0:
        return None
    rows = np.zeros((t, d_c))
    if task_id is not None:
        if not (0 <= task_id < d_c):
            raise InputError(f"task_id {task_id} outside conditioning width {d_c}")
        rows[:, task_id] = 1.0
    return rows


def _check_rows(name, arr, t, width):
    a = np.asarray(arr)
    if a.ndim != 2 or a.shape != (t, width):
        raise DimensionError(f"{name}: expected ({t}, {width}), got {a.shape}")


# ---------------------------------------------------------------------------
# full-sequence forwards


def q_forward(triple: PolicyTriple, traj) -> QOutput:
    """Posterior forward over a whole trajectory: per-step option-code
    Gaussian and termination probability, conditioned on the full sequence."""
    states = np.asarray(traj.states, dtype=np.float64)
    actions = np.asarray(traj.actions, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise InputError("q_forward: empty trajectory")
    t = states.shape[0]
    _check_rows("states", states, t, triple.dims.d_s)
    _check_rows("actions", actions, t, triple.dims.d_a)
    trunk = triple.q_stack.forward(np.hstack([states, actions]))
    mu, var = triple.q_zhead.forward(trunk)
    probs = triple.q_bhead.forward(trunk)
    return QOutput(mu=mu, var=var, probs=probs, p=dc.col(probs, 1))


def pi_forward(triple: PolicyTriple, states, actions_prev, zs) -> PiOutput:
    """Low-level policy forward: action Gaussian per step given the running
    option code. zs may be a tensor (gradients flow into it) or an array."""
    states = np.asarray(states, dtype=np.float64)
    t = states.shape[0]
    _check_rows("states", states, t, triple.dims.d_s)
    _check_rows("actions_prev", np.asarray(actions_prev), t, triple.dims.d_a)
    z_shape = zs.data.shape if isinstance(zs, Tensor) else np.asarray(zs).shape
    if z_shape != (t, triple.dims.d_z):
        raise DimensionError(f"zs: expected ({t}, {triple.dims.d_z}), got {z_shape}")
    x = dc.concat_cols(
        Tensor(states), Tensor(np.asarray(actions_prev, dtype=np.float64)), zs
    )
    trunk = triple.pi_stack.forward(x)
    mu, var = triple.pi_head.forward(trunk)
    return PiOutput(mu=mu, var=var)


def eta_forward(
    triple: PolicyTriple, states, actions_prev, z_prev, b_prev, task_cond=None
) -> EtaOutput:
    """High-level policy forward given the shifted option sequence.

    z_prev row t holds z_{t-1} (row 0 is the zero code); b_prev row t holds
    b_{t-1} with b_0 = 1, passed as raw binary values and embedded one-hot
    here. task_cond is (T, d_c) rows or None when dims.d_c == 0.
    """
    states = np.asarray(states, dtype=np.float64)
    t = states.shape[0]
    _check_rows("states", states, t, triple.dims.d_s)
    _check_rows("actions_prev", np.asarray(actions_prev), t, triple.dims.d_a)
    zp_shape = z_prev.data.shape if isinstance(z_prev, Tensor) else np.asarray(z_prev).shape
    if zp_shape != (t, triple.dims.d_z):
        raise DimensionError(f"z_prev: expected ({t}, {triple.dims.d_z}), got {zp_shape}")
    parts = [
        Tensor(states),
        Tensor(np.asarray(actions_prev, dtype=np.float64)),
        z_prev,
        Tensor(b_onehot(b_prev)),
    ]
    if triple.dims.d_c > 0:
        if task_cond is None:
            task_cond = np.zeros((t, triple.dims.d_c))
        _check_rows("task_cond", task_cond, t, triple.dims.d_c)
        parts.append(Tensor(np.asarray(task_cond, dtype=np.float64)))
    elif task_cond is not None:
        raise DimensionError("task_cond given but dims.d_c == 0")
    trunk = triple.eta_stack.forward(dc.concat_cols(*parts))
    mu, var = triple.eta_zhead.forward(trunk)
    probs = triple.eta_bhead.forward(trunk)
    return EtaOutput(mu=mu, var=var, probs=probs, p=dc.col(probs, 1))
