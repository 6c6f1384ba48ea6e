"""Robust regression under sub-population shift and label noise.

The library pairs classical worst-case reweighting schemes (KL and
chi-square balls, loss-filtered variants) with a geometry-calibrated one:
the sample weighting evolves by an upwind gradient flow on a kNN graph over
the covariates, with graph-total-variation and entropy calibration terms
that keep worst-case mass off isolated noisy samples.  A benchmark CLI
(``gcdro``) reproduces the simulation study at desk scale.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "__version__"]
