"""Shared test helpers: finite-difference oracles for inputs and a few
small network builders used across modules."""

import numpy as np

from optionvi import diffcore


def fd_input_grad(f, arr, h=1e-5):
    """Central finite differences of scalar f() w.r.t. a raw ndarray that f
    reads in place. Restores arr bitwise."""
    flat = arr.ravel()
    g = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        hi = float(f())
        flat[k] = orig - h
        lo = float(f())
        flat[k] = orig
        g[k] = (hi - lo) / (2.0 * h)
    return g.reshape(arr.shape)


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def make_store_uniform(rng, specs, name="store"):
    """specs: iterable of (name, shape, fan_in)."""
    store = diffcore.ParamStore(name)
    for pname, shape, fan_in in specs:
        store.add_uniform(pname, shape, fan_in, rng)
    return store
