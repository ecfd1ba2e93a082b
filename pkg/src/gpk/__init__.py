"""gpk: a desk-scale numerical laboratory for condensate dynamics.

Subpackages cover the zero-energy scattering problem, pseudo-spectral
GP/modified-GP evolution, the correlation-kernel calculus, a truncated
bosonic Fock-space simulator, and an orchestration/benchmark layer.
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401
