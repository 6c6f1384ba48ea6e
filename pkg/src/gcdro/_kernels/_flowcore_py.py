"""NumPy implementation of the flow edge kernels.

Mirrors the compiled extension function-for-function; selected at import
time when the extension is unavailable (or GCDRO_PURE_PYTHON is set).
Per-node accumulations use bincount over the CSR edge order, matching the
compiled kernel's in-order accumulation.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

_LOG_FLOOR = 1e-300  # guards log() against denormal underflow only


def neighbor_quad_sums(indptr, col, row, w, ell, q):
    """s_i = sum over edges (i,j) of w_ij * q_j * (ell_j - ell_i)^2."""
    n = len(indptr) - 1
    d = ell[col] - ell[row]
    return np.bincount(row, weights=w * q[col] * d * d, minlength=n)


def edge_velocities(indptr, col, row, w, ell, q, alpha, beta):
    """Per-edge ascent velocity; antisymmetric under edge reversal."""
    logq = np.log(np.maximum(q, _LOG_FLOOR))
    v = (ell[row] - ell[col]) + beta * (logq[col] - logq[row])
    if alpha != 0.0:
        s = neighbor_quad_sums(indptr, col, row, w, ell, q)
        v = v + alpha * (s[col] - s[row])
    return v


def step_quantities(indptr, col, row, w, q, v):
    """Upwind flux bookkeeping for one explicit Euler step.

    Returns (dq, action_rate, ascent_rate, out_max, v_max):
      dq_i        = sum_j w_ij * flux_ij          (mass rate into node i)
      action_rate = 0.5 * sum_edges flux * v      (kinetic energy rate)
      ascent_rate = 0.5 * sum_edges w * flux * v  (first-order risk gain <grad, dq>)
      out_max     = max_i sum_j w_ij * max(-v_ij, 0)   (relative outflow bound)
      v_max       = max |v|
    """
    n = len(indptr) - 1
    flux = v * np.where(v > 0.0, q[col], q[row])
    dq = np.bincount(row, weights=w * flux, minlength=n)
    fv = flux * v
    action_rate = 0.5 * float(np.sum(fv))
    ascent_rate = 0.5 * float(np.dot(w, fv))
    out = np.bincount(row, weights=w * np.maximum(-v, 0.0), minlength=n)
    out_max = float(out.max()) if n else 0.0
    v_max = float(np.abs(v).max()) if len(v) else 0.0
    return dq, action_rate, ascent_rate, out_max, v_max


def tv_sum(indptr, col, row, w, ell, q):
    """sum over directed edges of w_ij * q_i * q_j * (ell_i - ell_j)^2."""
    d = ell[row] - ell[col]
    return float(np.dot(w * q[row] * q[col], d * d))
