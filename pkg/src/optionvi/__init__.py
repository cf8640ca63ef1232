"""Option discovery from demonstration trajectories via temporal variational
inference.

Three recurrent networks are trained jointly from demonstrations alone: a
low-level policy generating actions from a latent option code, a high-level
policy generating option codes and termination decisions, and a variational
posterior over the option sequence given a full trajectory. Everything runs
in float64 numpy with numba-jitted hot kernels (see backend.py).
"""

__version__ = "0.1.0"

from .backend import backend_name
from .diffcore import ParamStore, Tensor, adam_step, backward, finite_diff_grad

__all__ = [
    "ParamStore",
    "Tensor",
    "adam_step",
    "backward",
    "backend_name",
    "finite_diff_grad",
    "__version__",
]
