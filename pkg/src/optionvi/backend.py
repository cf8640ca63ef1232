"""Kernel backend selection.

The LSTM sequence kernels and the Adam update exist twice: a numba-jitted
variant and a pure-numpy reference. The environment variable OPTIONVI_BACKEND
picks one at import time:

    OPTIONVI_BACKEND=numba   jitted kernels, error if numba is unavailable
    OPTIONVI_BACKEND=numpy   pure-numpy kernels
    unset                    numba when importable, else numpy with a warning

Both variants implement identical algorithms; within one backend results are
bitwise reproducible. Across backends they agree to rounding error only, so
tests pin comparisons to the backend they run under.
"""

import os
import warnings

from .errors import ConfigError

_ENV_VAR = "OPTIONVI_BACKEND"
_requested = os.environ.get(_ENV_VAR, "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ConfigError(
        f"{_ENV_VAR} must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from . import _kernels_numpy as _impl

    _name = "numpy"
else:
    try:
        from . import _kernels_numba as _impl

        _name = "numba"
    except ImportError:
        if _requested == "numba":
            raise ConfigError(
                f"{_ENV_VAR}=numba but numba is not importable"
            ) from None
        warnings.warn(
            "numba unavailable, falling back to pure-numpy kernels",
            RuntimeWarning,
            stacklevel=2,
        )
        from . import _kernels_numpy as _impl

        _name = "numpy"

lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_backward = _impl.lstm_seq_backward
adam_update = _impl.adam_update


def backend_name() -> str:
    """Name of the kernel backend selected at import time."""
    return _name
