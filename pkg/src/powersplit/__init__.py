"""powersplit: Bayesian power disaggregation and demand-dispatch control.

Layers, bottom up:

- ``distributions``: conjugate updates, log densities, simplex utilities
- ``hmm`` / ``hsmm``: batch Gibbs samplers with exact blocked state draws
- ``hdp``: weak-limit hierarchical Dirichlet transition prior and the full
  nonparametric segment-model sweep
- ``smc``: online particle filtering with parameter learning, including the
  factorial filter that splits an aggregate meter signal across devices
- ``dispatch``: randomized local load control, mean-field dynamics, transfer
  function data, and the PI feedback loop
- ``pipeline``: file formats, synthetic data, training, and the CLI

Compiled message-passing kernels are used when available; set
``POWERSPLIT_PURE=1`` to force the pure NumPy fallback (see
``powersplit._kernels.BACKEND``).
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
