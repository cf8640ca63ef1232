"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray plus a gradient slot and a backward closure; kernels
build a DAG of Tensors, and backward() walks it in reverse topological order.
Everything is double precision. Every kernel checks its output for finiteness
and raises NumericError naming itself, so a NaN is caught where it is born
rather than three modules later.

Gradient conventions:
  * Gradients accumulate; callers zero ParamStores between backward passes.
  * A parameter that never entered the graph keeps its exact-zero gradient.
  * Clamped regions (probability and variance floors) gate their gradient to
    zero, matching the clamped forward value.

The LSTM sequence kernel and the Adam update defer to the selected backend
(numba or numpy, see backend.py); everything else is plain numpy here.
"""

import numpy as np

from . import backend
from .errors import DimensionError, DomainError, InputError, NumericError

VAR_FLOOR = 1e-6
PROB_FLOOR = 1e-6
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS_HAT = 1e-8


class Tensor:
    """Node in the autodiff graph: float64 data, lazy grad, backward closure."""

    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, _parents=(), _backward=None, name="constant"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise InputError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def _acc(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        backward(self)

    def sum(self):
        return sum_all(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.data.shape})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, name) -> Tensor:
    out = Tensor(data, _parents=tuple(parents), _backward=None, name=name)
    if not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite output from kernel '{name}'")
    out._backward = backward_fn(out) if callable(backward_fn) else None
    return out


def backward(root: Tensor):
    """Reverse-mode sweep from a finite scalar root.

    Seeds root.grad with 1 and accumulates into every tensor on the path.
    Gradients add up across calls; zero parameter grads first.
    """
    if root.data.size != 1:
        raise InputError(f"backward needs a scalar objective, got shape {root.data.shape}")
    if not np.all(np.isfinite(root.data)):
        raise NumericError(f"non-finite objective from kernel '{root.name}'")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, post = stack.pop()
        if post:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root._acc(np.ones_like(root.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# elementwise and structural kernels


def add(a, b):
    a = _wrap(a)
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise DimensionError(f"add: shapes {a.data.shape} vs {b.data.shape}")

        def bk(out):
            def run():
                a._acc(out.grad)
                b._acc(out.grad)

            return run

        return _make(a.data + b.data, (a, b), bk, "add")
    c = float(b)

    def bk(out):
        def run():
            a._acc(out.grad)

        return run

    return _make(a.data + c, (a,), bk, "add")


def mul(a, b):
    a = _wrap(a)
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise DimensionError(f"mul: shapes {a.data.shape} vs {b.data.shape}")

        def bk(out):
            def run():
                a._acc(out.grad * b.data)
                b._acc(out.grad * a.data)

            return run

        return _make(a.data * b.data, (a, b), bk, "mul")
    c = float(b)

    def bk(out):
        def run():
            a._acc(out.grad * c)

        return run

    return _make(a.data * c, (a,), bk, "mul")


def sum_all(x: Tensor):
    x = _wrap(x)

    def bk(out):
        def run():
            x._acc(np.full(x.data.shape, float(out.grad)))

        return run

    return _make(np.sum(x.data), (x,), bk, "sum")


def mean_rows(x: Tensor):
    """Mean over axis 0 of a (T, D) tensor, yielding (D,)."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise DimensionError(f"mean_rows: expected 2-d input, got shape {x.data.shape}")
    t = x.data.shape[0]

    def bk(out):
        def run():
            x._acc(np.broadcast_to(out.grad / t, x.data.shape))

        return run

    return _make(x.data.mean(axis=0), (x,), bk, "mean_rows")


def tile_rows(x: Tensor, t: int):
    """Repeat a (D,) tensor into (t, D) rows."""
    x = _wrap(x)
    if x.data.ndim != 1:
        raise DimensionError(f"tile_rows: expected 1-d input, got shape {x.data.shape}")
    if t < 1:
        raise InputError(f"tile_rows: t must be >= 1, got {t}")

    def bk(out):
        def run():
            x._acc(out.grad.sum(axis=0))

        return run

    return _make(np.broadcast_to(x.data, (t, x.data.shape[0])).copy(), (x,), bk, "tile_rows")


def concat_cols(*parts):
    """Column-concatenate (T, d_i) tensors or constant arrays into (T, sum d_i)."""
    wrapped = [_wrap(p) for p in parts]
    rows = {p.data.shape[0] for p in wrapped}
    if any(p.data.ndim != 2 for p in wrapped) or len(rows) != 1:
        raise DimensionError(
            "concat_cols: all parts must be 2-d with equal rows, got "
            + str([p.data.shape for p in wrapped])
        )
    widths = [p.data.shape[1] for p in wrapped]
    offsets = np.concatenate(([0], np.cumsum(widths)))

    def bk(out):
        def run():
            for p, a, b in zip(wrapped, offsets[:-1], offsets[1:]):
                p._acc(out.grad[:, a:b])

        return run

    return _make(np.hstack([p.data for p in wrapped]), wrapped, bk, "concat_cols")


def slice_cols(x: Tensor, start: int, stop: int):
    x = _wrap(x)
    if x.data.ndim != 2 or not (0 <= start < stop <= x.data.shape[1]):
        raise DimensionError(
            f"slice_cols: bad slice [{start}:{stop}] for shape {x.data.shape}"
        )

    def bk(out):
        def run():
            g = np.zeros_like(x.data)
            g[:, start:stop] = out.grad
            x._acc(g)

        return run

    return _make(x.data[:, start:stop].copy(), (x,), bk, "slice_cols")


def reverse_rows(x: Tensor):
    """Reverse a (T, D) tensor along axis 0."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise DimensionError(f"reverse_rows: expected 2-d input, got {x.data.shape}")

    def bk(out):
        def run():
            x._acc(out.grad[::-1])

        return run

    return _make(x.data[::-1].copy(), (x,), bk, "reverse_rows")


def col(x: Tensor, j: int):
    """Extract column j of a (T, D) tensor as a (T,) tensor."""
    x = _wrap(x)
    if x.data.ndim != 2 or not (0 <= j < x.data.shape[1]):
        raise DimensionError(f"col: bad column {j} for shape {x.data.shape}")

    def bk(out):
        def run():
            g = np.zeros_like(x.data)
            g[:, j] = out.grad
            x._acc(g)

        return run

    return _make(x.data[:, j].copy(), (x,), bk, "col")


def row_shift_down(x: Tensor):
    """Shift rows down by one, zero-filling row 0: out[t] = x[t-1], out[0] = 0."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise DimensionError(f"row_shift_down: expected 2-d input, got {x.data.shape}")
    val = np.zeros_like(x.data)
    val[1:] = x.data[:-1]

    def bk(out):
        def run():
            g = np.zeros_like(x.data)
            g[:-1] = out.grad[1:]
            x._acc(g)

        return run

    return _make(val, (x,), bk, "row_shift_down")


# ---------------------------------------------------------------------------
# dense layer and activations


def affine(x, w: Tensor, bias=None):
    """y = x @ w (+ bias) for x of shape (T, din) or (din,)."""
    x = _wrap(x)
    if x.data.shape[-1] != w.data.shape[0]:
        raise DimensionError(
            f"affine: input shape {x.data.shape} vs weight shape {w.data.shape}"
        )
    if bias is not None and bias.data.shape != (w.data.shape[1],):
        raise DimensionError(
            f"affine: bias shape {bias.data.shape} vs weight shape {w.data.shape}"
        )
    val = x.data @ w.data
    if bias is not None:
        val = val + bias.data

    def bk(out):
        def run():
            g = out.grad
            if x.data.ndim == 2:
                x._acc(g @ w.data.T)
                w._acc(x.data.T @ g)
                if bias is not None:
                    bias._acc(g.sum(axis=0))
            else:
                x._acc(g @ w.data.T)
                w._acc(np.outer(x.data, g))
                if bias is not None:
                    bias._acc(g)

        return run

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(val, parents, bk, "affine")


def tanh(x):
    x = _wrap(x)

    def bk(out):
        def run():
            x._acc(out.grad * (1.0 - out.data * out.data))

        return run

    return _make(np.tanh(x.data), (x,), bk, "tanh")


def sigmoid(x):
    x = _wrap(x)
    d = x.data
    val = np.empty_like(d)
    pos = d >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    val[~pos] = ex / (1.0 + ex)

    def bk(out):
        def run():
            x._acc(out.grad * out.data * (1.0 - out.data))

        return run

    return _make(val, (x,), bk, "sigmoid")


def softplus(x):
    """log(1 + exp(x)), floored at the smallest positive normal so the output
    is strictly positive for every finite input."""
    x = _wrap(x)
    val = np.maximum(np.logaddexp(0.0, x.data), np.finfo(np.float64).tiny)

    def bk(out):
        def run():
            d = x.data
            sig = np.empty_like(d)
            pos = d >= 0
            sig[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
            ex = np.exp(d[~pos])
            sig[~pos] = ex / (1.0 + ex)
            x._acc(out.grad * sig)

        return run

    return _make(val, (x,), bk, "softplus")


def activation(x, kind: str):
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softplus":
        return softplus(x)
    raise InputError(f"activation: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# probability kernels


def _check_mask(mask, rows):
    if mask is None:
        return None
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (rows,):
        raise DimensionError(f"mask shape {m.shape}, expected ({rows},)")
    return m


def gaussian_log_prob(x, mu, var, mask=None):
    """Sum of independent-Gaussian log densities, as a scalar tensor.

    Variance is clamped to >= VAR_FLOOR before the log density; gradients gate
    to zero where the clamp is active. Nonpositive variance is a domain error,
    not a clamp. mask, if given, selects rows of (T, D) inputs with 0/1
    weights.
    """
    x = _wrap(x)
    mu = _wrap(mu)
    var = _wrap(var)
    if not (x.data.shape == mu.data.shape == var.data.shape):
        raise DimensionError(
            f"gaussian_log_prob: shapes {x.data.shape}, {mu.data.shape}, {var.data.shape}"
        )
    if np.any(var.data <= 0.0):
        raise DomainError("gaussian_log_prob: variance must be positive")
    m = _check_mask(mask, x.data.shape[0]) if mask is not None else None
    v = np.maximum(var.data, VAR_FLOOR)
    gate = var.data >= VAR_FLOOR
    diff = x.data - mu.data
    terms = -0.5 * np.log(2.0 * np.pi * v) - diff * diff / (2.0 * v)
    if m is not None:
        terms = terms * m[:, None] if terms.ndim == 2 else terms * m
    val = np.sum(terms)

    def bk(out):
        def run():
            g = float(out.grad)
            w = np.ones_like(v) * g
            if m is not None:
                w = w * (m[:, None] if v.ndim == 2 else m)
            dmu = diff / v * w
            mu._acc(dmu)
            x._acc(-dmu)
            var._acc((-0.5 / v + diff * diff / (2.0 * v * v)) * w * gate)

        return run

    return _make(val, (x, mu, var), bk, "gaussian_log_prob")


def gaussian_log_prob_from_noise(var, eps, mask=None):
    """log N(z; mu, var) for z = mu + sqrt(var) * eps, reduced to its exact
    closed form -0.5*log(2*pi*var) - eps^2/2 summed over entries.

    Mathematically equal to scoring z under its own Gaussian with the total
    derivative taken through z; the reduction removes mu from the expression
    entirely and leaves d/d(sigma) = 1/sigma exactly. eps is a constant.
    """
    var = _wrap(var)
    e = np.asarray(eps, dtype=np.float64)
    if var.data.shape != e.shape:
        raise DimensionError(
            f"gaussian_log_prob_from_noise: shapes {var.data.shape} vs {e.shape}"
        )
    if np.any(var.data <= 0.0):
        raise DomainError("gaussian_log_prob_from_noise: variance must be positive")
    m = _check_mask(mask, var.data.shape[0]) if mask is not None else None
    v = np.maximum(var.data, VAR_FLOOR)
    gate = var.data >= VAR_FLOOR
    terms = -0.5 * np.log(2.0 * np.pi * v) - e * e / 2.0
    if m is not None:
        terms = terms * m[:, None] if terms.ndim == 2 else terms * m
    val = np.sum(terms)

    def bk(out):
        def run():
            g = float(out.grad)
            w = np.ones_like(v) * g
            if m is not None:
                w = w * (m[:, None] if v.ndim == 2 else m)
            var._acc(-0.5 / v * w * gate)

        return run

    return _make(val, (var,), bk, "gaussian_log_prob_from_noise")


def kl_to_standard_normal(mu, var):
    """KL(N(mu, var) || N(0, I)) summed over entries:
    sum 0.5 * (var + mu^2 - 1 - log var).

    Variance is clamped to >= VAR_FLOOR inside the log with gated gradients,
    matching the density ops; nonpositive variance is a domain error.
    """
    mu = _wrap(mu)
    var = _wrap(var)
    if mu.data.shape != var.data.shape:
        raise DimensionError(
            f"kl_to_standard_normal: shapes {mu.data.shape} vs {var.data.shape}"
        )
    if np.any(var.data <= 0.0):
        raise DomainError("kl_to_standard_normal: variance must be positive")
    v = np.maximum(var.data, VAR_FLOOR)
    gate = var.data >= VAR_FLOOR
    val = np.sum(0.5 * (var.data + mu.data * mu.data - 1.0 - np.log(v)))

    def bk(out):
        def run():
            g = float(out.grad)
            mu._acc(mu.data * g)
            var._acc((0.5 - 0.5 / v * gate) * g)

        return run

    return _make(val, (mu, var), bk, "kl_to_standard_normal")


def bernoulli_log_prob(b, p, mask=None):
    """Sum of Bernoulli log masses log p(b) with p clamped into
    [PROB_FLOOR, 1 - PROB_FLOOR]. b must be exactly 0 or 1 elementwise.
    mask, if given, weights entries with 0/1 values of the same shape."""
    p = _wrap(p)
    bv = np.asarray(b, dtype=np.float64)
    if bv.shape != p.data.shape:
        raise DimensionError(f"bernoulli_log_prob: shapes {bv.shape} vs {p.data.shape}")
    if not np.all((bv == 0.0) | (bv == 1.0)):
        raise DomainError("bernoulli_log_prob: b must be 0 or 1")
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != bv.shape:
            raise DimensionError(f"bernoulli_log_prob: mask shape {m.shape} vs {bv.shape}")
    else:
        m = None
    ph = np.clip(p.data, PROB_FLOOR, 1.0 - PROB_FLOOR)
    gate = (p.data >= PROB_FLOOR) & (p.data <= 1.0 - PROB_FLOOR)
    terms = bv * np.log(ph) + (1.0 - bv) * np.log1p(-ph)
    val = np.sum(terms if m is None else terms * m)

    def bk(out):
        def run():
            g = float(out.grad)
            dp = (bv / ph - (1.0 - bv) / (1.0 - ph)) * gate * g
            p._acc(dp if m is None else dp * m)

        return run

    return _make(val, (p,), bk, "bernoulli_log_prob")


def reparameterize(mu, var, eps):
    """z = mu + sqrt(var) * eps with constant noise eps.

    Where eps is exactly zero, z copies mu bitwise. Nonpositive variance is a
    domain error.
    """
    mu = _wrap(mu)
    var = _wrap(var)
    e = np.asarray(eps, dtype=np.float64)
    if not (mu.data.shape == var.data.shape == e.shape):
        raise DimensionError(
            f"reparameterize: shapes {mu.data.shape}, {var.data.shape}, {e.shape}"
        )
    if np.any(var.data <= 0.0):
        raise DomainError("reparameterize: variance must be positive")
    sigma = np.sqrt(var.data)
    val = np.where(e == 0.0, mu.data, mu.data + sigma * e)

    def bk(out):
        def run():
            mu._acc(out.grad)
            var._acc(out.grad * e / (2.0 * sigma))

        return run

    return _make(val, (mu, var), bk, "reparameterize")


def termination_probs(logits: Tensor):
    """Two-logit normalization to probabilities: rows (l0, l1) -> (p0, p1).

    p1 = sigmoid(l1 - l0) clipped into [PROB_FLOOR, 1 - PROB_FLOOR] and
    p0 = 1 - p1, so each row lies strictly inside (0, 1) and sums to one
    exactly. Gradients gate to zero where the clip is active.
    """
    logits = _wrap(logits)
    if logits.data.ndim != 2 or logits.data.shape[1] != 2:
        raise DimensionError(f"termination_probs: expected (T, 2), got {logits.data.shape}")
    d = logits.data[:, 1] - logits.data[:, 0]
    raw = np.empty_like(d)
    pos = d >= 0
    raw[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    raw[~pos] = ex / (1.0 + ex)
    p1 = np.clip(raw, PROB_FLOOR, 1.0 - PROB_FLOOR)
    gate = (raw >= PROB_FLOOR) & (raw <= 1.0 - PROB_FLOOR)
    val = np.stack([1.0 - p1, p1], axis=1)

    def bk(out):
        def run():
            dp1 = out.grad[:, 1] - out.grad[:, 0]
            dd = dp1 * raw * (1.0 - raw) * gate
            g = np.empty_like(logits.data)
            g[:, 0] = -dd
            g[:, 1] = dd
            logits._acc(g)

        return run

    return _make(val, (logits,), bk, "termination_probs")


def lstm_seq(x, w_ih: Tensor, w_hh: Tensor, bias: Tensor):
    """One LSTM layer over a (T, D) sequence via the backend kernels.

    Weight layout: w_ih (D, 4H), w_hh (H, 4H), bias (4H,), gate order
    [input, forget, cell, output]. Initial hidden and cell state are zero.
    Returns the (T, H) hidden-state sequence.
    """
    x = _wrap(x)
    if x.data.ndim != 2:
        raise DimensionError(f"lstm_seq: expected (T, D) input, got {x.data.shape}")
    if x.data.shape[0] < 1:
        raise InputError("lstm_seq: empty sequence")
    d = x.data.shape[1]
    h_dim = w_hh.data.shape[0]
    if w_ih.data.shape != (d, 4 * h_dim) or w_hh.data.shape != (h_dim, 4 * h_dim):
        raise DimensionError(
            f"lstm_seq: input {x.data.shape}, w_ih {w_ih.data.shape}, w_hh {w_hh.data.shape}"
        )
    if bias.data.shape != (4 * h_dim,):
        raise DimensionError(f"lstm_seq: bias shape {bias.data.shape}, expected ({4*h_dim},)")
    xd = np.ascontiguousarray(x.data)
    h, gates, c = backend.lstm_seq_forward(xd, w_ih.data, w_hh.data, bias.data)

    def bk(out):
        def run():
            dx, dwih, dwhh, db = backend.lstm_seq_backward(
                np.ascontiguousarray(out.grad), xd, h, c, gates, w_ih.data, w_hh.data
            )
            x._acc(dx)
            w_ih._acc(dwih)
            w_hh._acc(dwhh)
            bias._acc(db)

        return run

    return _make(h, (x, w_ih, w_hh, bias), bk, "lstm_seq")


# ---------------------------------------------------------------------------
# parameters and optimization


class ParamStore:
    """Named parameter collection with per-parameter Adam moments.

    One store per network; gradient clipping and Adam steps operate on a
    store as a unit.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise InputError(f"duplicate parameter name {name!r} in store {self.name!r}")
        t = Tensor(np.ascontiguousarray(value, dtype=np.float64), name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def add_uniform(self, name: str, shape, fan_in: int, rng) -> Tensor:
        bound = 1.0 / np.sqrt(float(fan_in))
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def param_count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def grads(self) -> dict:
        out = {}
        for name, t in self._params.items():
            out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return out

    def grad_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float(np.sum(t.grad * t.grad))
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm: float) -> float:
        """Scale all gradients so the store-wide L2 norm is at most max_norm.
        Returns the pre-clip norm."""
        norm = self.grad_norm()
        if norm > max_norm:
            scale = max_norm / norm
            for t in self._params.values():
                if t.grad is not None:
                    t.grad *= scale
        return norm

    def moments(self, name: str):
        return self._m[name], self._v[name]

    def set_param(self, name: str, value: np.ndarray):
        t = self._params[name]
        if t.data.shape != np.asarray(value).shape:
            raise DimensionError(
                f"set_param {name!r}: shape {np.asarray(value).shape} vs {t.data.shape}"
            )
        t.data = np.ascontiguousarray(value, dtype=np.float64)

    def set_moments(self, name: str, m: np.ndarray, v: np.ndarray):
        self._m[name] = np.ascontiguousarray(m, dtype=np.float64)
        self._v[name] = np.ascontiguousarray(v, dtype=np.float64)


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps_hat: float = ADAM_EPS_HAT,
):
    """One bias-corrected Adam update over every parameter in the store."""
    store.step += 1
    for name, t in store.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        backend.adam_update(
            t.data.ravel(),
            np.ascontiguousarray(g).ravel(),
            store._m[name].ravel(),
            store._v[name].ravel(),
            store.step,
            lr,
            beta1,
            beta2,
            eps_hat,
        )


def finite_diff_grad(f, store: ParamStore, h: float = 1e-5) -> dict:
    """Central finite-difference gradient of scalar f() w.r.t. every
    coordinate of every parameter in the store. Restores parameters bitwise."""
    out = {}
    for name, t in store.items():
        flat = t.data.ravel()
        g = np.zeros_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_hi = float(f())
            flat[k] = orig - h
            f_lo = float(f())
            flat[k] = orig
            g[k] = (f_hi - f_lo) / (2.0 * h)
        out[name] = g.reshape(t.data.shape)
    return out


def max_rel_error(ga: dict, gb: dict) -> float:
    """Worst-case elementwise discrepancy between two gradient dicts,
    relative above unit scale and absolute below it."""
    worst = 0.0
    for name in ga:
        a = np.asarray(ga[name], dtype=np.float64)
        b = np.asarray(gb[name], dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
        err = np.abs(a - b) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
