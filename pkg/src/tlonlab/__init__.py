"""tlonlab: transfer learning for PDE operator surrogates.

Data generation (random fields + reference solvers), DeepONet training,
parameter transfer with layer freezing, a hybrid regression +
conditional-embedding-discrepancy loss, and a benchmark harness.
"""

from .backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
