"""Calibrated robust-risk objective and its free-energy counterpart.

The inner objective over a sample weighting q on the probability simplex is

    R(q) = sum_i q_i l_i
         - (alpha/2) * sum_(i,j) w_ij q_i q_j (l_i - l_j)^2      (graph TV)
         - beta * sum_i q_i log q_i                              (entropy)

with the edge sum running over the orientation-closed directed edge list
(each undirected edge counted twice).  The negation of R is a Helmholtz free
energy  E(q) = q'Kq + q'V - beta * H(q); constructors for the energy shapes
of several worst-case reweighting schemes live in :func:`spec_for_method`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import ConfigError
from .graph import Graph


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def check_weights(q: np.ndarray, n: int | None = None, *, interior: bool = False,
                  tol: float = 1e-10) -> np.ndarray:
    """Validate a sample weighting; returns it as a float64 array.

    ``interior`` additionally requires strictly positive entries (needed by
    the flow and the entropy); boundary zeros are legal for dual solutions
    and filtered weightings.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError("weights must be a 1-D vector")
    if n is not None and q.shape[0] != n:
        raise ValueError(f"weight vector has length {q.shape[0]}, expected {n}")
    if not np.isfinite(q).all():
        raise ValueError("weights contain non-finite entries")
    if interior:
        if np.any(q <= 0.0):
            raise ValueError("weights must be strictly positive")
    elif np.any(q < 0.0):
        raise ValueError("weights must be nonnegative")
    if abs(q.sum() - 1.0) > tol:
        raise ValueError(f"weights sum to {q.sum()!r}, not 1")
    return q


@dataclass(frozen=True)
class RiskConfig:
    """Calibration strengths: alpha >= 0 scales the TV term, beta >= 0 the entropy."""

    alpha: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")


def total_variation(ell: np.ndarray, q: np.ndarray, g: Graph) -> float:
    """Directed-edge sum of w_ij q_i q_j (l_i - l_j)^2 over the graph."""
    ell = np.asarray(ell, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if ell.shape[0] != g.n or q.shape[0] != g.n:
        raise ValueError("loss/weight length does not match graph size")
    return float(_kernels.tv_sum(g.indptr, g.col, g.row, g.w, ell, q))


def entropy(q: np.ndarray) -> float:
    """Shannon entropy H(q) = -sum q_i log q_i; requires interior q."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q <= 0.0):
        raise ValueError("entropy requires strictly positive weights")
    return float(-np.dot(q, np.log(q)))


def neg_entropy_term(q: np.ndarray) -> float:
    """sum q_i log q_i with the 0 log 0 = 0 convention (boundary-safe)."""
    q = np.asarray(q, dtype=np.float64)
    pos = q > 0.0
    return float(np.dot(q[pos], np.log(q[pos])))


def risk(ell: np.ndarray, q: np.ndarray, g: Graph | None, cfg: RiskConfig) -> float:
    """Calibrated risk R(q); ``g`` may be None when cfg.alpha == 0."""
    ell = np.asarray(ell, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if ell.shape != q.shape:
        raise ValueError("loss and weight vectors differ in length")
    value = float(np.dot(q, ell))
    if cfg.alpha != 0.0:
        if g is None:
            raise ValueError("a graph is required when alpha != 0")
        value -= 0.5 * cfg.alpha * total_variation(ell, q, g)
    if cfg.beta != 0.0:
        value -= cfg.beta * neg_entropy_term(q)
    return value


@dataclass(frozen=True)
class FreeEnergySpec:
    """Quadratic free-energy form E(q) = q'Kq + q'V - beta * H(q).

    K is a symmetric interaction matrix (sparse when supported on graph
    edges, dense for kernel Gram matrices, None when absent); V is the
    potential vector; the entropy term enters only when ``has_entropy``.
    """

    K: object
    V: np.ndarray
    beta: float
    has_entropy: bool

    def __post_init__(self):
        V = np.asarray(self.V, dtype=np.float64)
        object.__setattr__(self, "V", V)
        if self.K is not None:
            if self.K.shape != (V.shape[0], V.shape[0]):
                raise ValueError("interaction matrix shape does not match potential")
            if float(abs(self.K - self.K.T).max()) > 1e-12:
                raise ValueError("interaction matrix is not symmetric")


def free_energy(spec: FreeEnergySpec, q: np.ndarray) -> float:
    """Evaluate E(q) for a given spec."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != spec.V.shape:
        raise ValueError("weight vector length does not match spec")
    value = float(np.dot(q, spec.V))
    if spec.K is not None:
        value += float(q @ (spec.K @ q))
    if spec.has_entropy:
        value += spec.beta * neg_entropy_term(q)  # -beta*H = +beta*sum q log q
    return value


def interaction_matrix(ell: np.ndarray, g: Graph, alpha: float) -> sp.csr_matrix:
    """Sparse K with K_ij = (alpha/2) w_ij (l_i - l_j)^2 on directed edges."""
    ell = np.asarray(ell, dtype=np.float64)
    d = ell[g.row] - ell[g.col]
    vals = 0.5 * alpha * g.w * d * d
    return sp.csr_matrix((vals, (g.row, g.col)), shape=(g.n, g.n))


def rbf_gram(X: np.ndarray, bandwidth: float) -> np.ndarray:
    """Dense Gaussian RBF Gram matrix with the given bandwidth."""
    X = np.asarray(X, dtype=np.float64)
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    d2 = 0.5 * (d2 + d2.T)  # exact symmetry despite rounding
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive for the RBF Gram matrix")
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


METHOD_NAMES = ("kl-dro", "chi2-dro", "mmd-dro", "gdro", "gcdro")


def spec_for_method(method: str, ell: np.ndarray, g: Graph | None = None, *,
                    beta: float | None = None, lam: float | None = None,
                    alpha: float | None = None, X: np.ndarray | None = None) -> FreeEnergySpec:
    """Free-energy shape (K, V, entropy) of a named worst-case scheme.

    kl-dro:   no interaction, V = -l, entropy at temperature lam
    chi2-dro: K = lam * I, V = -l, no entropy
    mmd-dro:  K = RBF Gram matrix (graph bandwidth), V = -l - (2 lam / n) K' 1
    gdro:     no interaction, V = -l, entropy at temperature beta
    gcdro:    K = (alpha/2) w_ij (l_i - l_j)^2 on edges, V = -l, entropy at beta
    """
    method = method.lower()
    ell = np.asarray(ell, dtype=np.float64)
    n = ell.shape[0]
    if method == "kl-dro":
        if lam is None or lam <= 0:
            raise ConfigError("kl-dro needs lam > 0")
        return FreeEnergySpec(K=None, V=-ell, beta=lam, has_entropy=True)
    if method == "chi2-dro":
        if lam is None or lam < 0:
            raise ConfigError("chi2-dro needs lam >= 0")
        return FreeEnergySpec(K=sp.identity(n, format="csr") * lam, V=-ell,
                              beta=0.0, has_entropy=False)
    if method == "mmd-dro":
        if lam is None or X is None or g is None:
            raise ConfigError("mmd-dro needs lam, X and a graph (for its bandwidth)")
        K = rbf_gram(X, g.bandwidth)
        V = -ell - (2.0 * lam / n) * (K.T @ np.ones(n))
        return FreeEnergySpec(K=K, V=V, beta=0.0, has_entropy=False)
    if method == "gdro":
        if beta is None or beta <= 0:
            raise ConfigError("gdro needs beta > 0")
        return FreeEnergySpec(K=None, V=-ell, beta=beta, has_entropy=True)
    if method == "gcdro":
        if beta is None or beta <= 0 or alpha is None or alpha < 0 or g is None:
            raise ConfigError("gcdro needs alpha >= 0, beta > 0 and a graph")
        return FreeEnergySpec(K=interaction_matrix(ell, g, alpha), V=-ell,
                              beta=beta, has_entropy=True)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHOD_NAMES}")
