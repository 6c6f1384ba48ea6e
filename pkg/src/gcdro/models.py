"""Predictors with per-sample squared losses and analytic gradients.

Two families: a linear model and a two-layer MLP, both trained full-batch
with Adam.  Gradients are taken of the weighted risk

    sum_i q_i l_i  -  (alpha/2) * sum_(i,j) w_ij q_i q_j (l_i - l_j)^2

(the entropy calibration term does not depend on the parameters).  Both
terms reduce to one weighted backprop pass: the per-sample coefficient is

    c_i = q_i - 2 alpha q_i sum_{j in N(i)} w_ij q_j (l_i - l_j)

and the parameter gradient is sum_i c_i * 2 (f(x_i) - y_i) * df/dtheta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .datagen import Dataset
from .errors import NumericalError
from .graph import Graph
from .risk import check_weights

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class LinearParams:
    theta: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64))


@dataclass(frozen=True)
class MLPParams:
    """Two-layer perceptron: x -> act(x W1' + b1) w2 + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "w1", np.asarray(self.w1, dtype=np.float64))
        object.__setattr__(self, "b1", np.asarray(self.b1, dtype=np.float64))
        object.__setattr__(self, "w2", np.asarray(self.w2, dtype=np.float64).reshape(-1))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        h, d = self.w1.shape
        if h < 1:
            raise ValueError("hidden width must be >= 1")
        if self.b1.shape != (h,) or self.w2.shape != (h,):
            raise ValueError("MLP parameter shapes are inconsistent")


ModelParams = LinearParams | MLPParams


def init_linear(d: int) -> LinearParams:
    return LinearParams(theta=np.zeros(d), bias=0.0)


def init_mlp(d: int, hidden: int = 64, activation: str = "relu",
             rng: np.random.Generator | None = None) -> MLPParams:
    """Gaussian init with std 1/sqrt(fan_in), zero biases."""
    if rng is None:
        rng = np.random.default_rng(0)
    w1 = rng.normal(0.0, 1.0 / math.sqrt(d), size=(hidden, d))
    w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=hidden)
    return MLPParams(w1=w1, b1=np.zeros(hidden), w2=w2, b2=0.0, activation=activation)


def _act(z: np.ndarray, name: str) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(z: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def predict(m: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if isinstance(m, LinearParams):
        if X.shape[1] != m.theta.shape[0]:
            raise ValueError("feature dimension does not match model")
        return X @ m.theta + m.bias
    if X.shape[1] != m.w1.shape[1]:
        raise ValueError("feature dimension does not match model")
    return _act(X @ m.w1.T + m.b1, m.activation) @ m.w2 + m.b2


def per_sample_loss(m: ModelParams, ds: Dataset) -> np.ndarray:
    """Squared errors l_i = (f(x_i) - y_i)^2 (no 1/2 factor)."""
    r = predict(m, ds.X) - ds.y
    return r * r


def weighted_risk_grad(m: ModelParams, ds: Dataset, q: np.ndarray,
                       g: Graph | None = None, alpha: float = 0.0,
                       include_tv: bool = False) -> ModelParams:
    """Parameter gradient of the weighted risk, optionally with the TV term.

    Returns an object of the same shape as ``m`` holding the gradient.
    """
    q = check_weights(q, ds.n, tol=1e-8)
    if include_tv and alpha != 0.0:
        if g is None:
            raise ValueError("a graph is required for the TV gradient")
        pred = predict(m, ds.X)
        r = pred - ds.y
        ell = r * r
        d = ell[g.row] - ell[g.col]
        edge = g.w * q[g.row] * q[g.col] * d
        s = np.bincount(g.row, weights=edge, minlength=g.n)
        c = q - 2.0 * alpha * s
    else:
        r = predict(m, ds.X) - ds.y
        c = q
    e = 2.0 * c * r  # per-sample output gradient

    if isinstance(m, LinearParams):
        return LinearParams(theta=ds.X.T @ e, bias=float(e.sum()))

    z1 = ds.X @ m.w1.T + m.b1
    a1 = _act(z1, m.activation)
    d1 = np.outer(e, m.w2) * _act_grad(z1, m.activation)
    return MLPParams(
        w1=d1.T @ ds.X,
        b1=d1.sum(axis=0),
        w2=a1.T @ e,
        b2=float(e.sum()),
        activation=m.activation,
    )


def _map_params(f, *ms):
    """Apply f leaf-wise across parameter objects of the same family."""
    first = ms[0]
    if isinstance(first, LinearParams):
        return LinearParams(
            theta=f(*(m.theta for m in ms)), bias=float(f(*(np.float64(m.bias) for m in ms)))
        )
    return MLPParams(
        w1=f(*(m.w1 for m in ms)),
        b1=f(*(m.b1 for m in ms)),
        w2=f(*(m.w2 for m in ms)),
        b2=float(f(*(np.float64(m.b2) for m in ms))),
        activation=first.activation,
    )


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators plus the optimizer constants."""

    m: ModelParams
    v: ModelParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: ModelParams, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = _map_params(np.zeros_like, params)
    return AdamState(m=zeros, v=zeros, step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: ModelParams, grad: ModelParams, st: AdamState):
    """Standard Adam update with bias correction; returns (params, state)."""
    t = st.step + 1
    m_new = _map_params(lambda m, g: st.beta1 * m + (1 - st.beta1) * g, st.m, grad)
    v_new = _map_params(lambda v, g: st.beta2 * v + (1 - st.beta2) * g * g, st.v, grad)
    bc1 = 1 - st.beta1**t
    bc2 = 1 - st.beta2**t
    p_new = _map_params(
        lambda p, m, v: p - st.lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps),
        params,
        m_new,
        v_new,
    )
    return p_new, replace(st, m=m_new, v=v_new, step=t)


def grad_norm(grad: ModelParams) -> float:
    if isinstance(grad, LinearParams):
        return float(np.sqrt(np.sum(grad.theta**2) + grad.bias**2))
    return float(
        np.sqrt(
            np.sum(grad.w1**2) + np.sum(grad.b1**2) + np.sum(grad.w2**2) + grad.b2**2
        )
    )


@dataclass(frozen=True)
class WLSInstance:
    """One-dimensional weighted-least-squares instance with known noise levels."""

    x: np.ndarray
    sigma2: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        s2 = np.asarray(self.sigma2, dtype=np.float64)
        w = np.asarray(self.w, dtype=np.float64)
        if not (x.shape == s2.shape == w.shape):
            raise ValueError("WLS instance arrays differ in length")
        if np.any(s2 <= 0):
            raise ValueError("noise variances must be positive")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "sigma2", s2)
        object.__setattr__(self, "w", w)


def wls_fit_1d(x, y, w) -> float:
    """Minimizer of sum w_i (y_i - theta x_i)^2: theta = sum w x y / sum w x^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    denom = float(np.dot(w, x * x))
    if denom <= 0:
        raise NumericalError("degenerate WLS denominator: sum w x^2 must be positive")
    return float(np.dot(w, x * y)) / denom


def wls_variance(inst: WLSInstance) -> float:
    """Conditional estimator variance  sum w^2 x^2 s^2 / (sum w x^2)^2."""
    denom = float(np.dot(inst.w, inst.x * inst.x))
    if denom == 0:
        raise NumericalError("degenerate WLS denominator")
    num = float(np.sum(inst.w**2 * inst.x**2 * inst.sigma2))
    return num / (denom * denom)


def save_params(m: ModelParams, path) -> None:
    """Checkpoint as compressed arrays with a kind tag (see README for the format)."""
    if isinstance(m, LinearParams):
        np.savez(path, kind="linear", theta=m.theta, bias=np.float64(m.bias))
    else:
        np.savez(
            path,
            kind="mlp",
            w1=m.w1,
            b1=m.b1,
            w2=m.w2,
            b2=np.float64(m.b2),
            activation=m.activation,
        )


def load_params(path) -> ModelParams:
    with np.load(path, allow_pickle=False) as z:
        kind = str(z["kind"])
        if kind == "linear":
            return LinearParams(theta=z["theta"], bias=float(z["bias"]))
        if kind == "mlp":
            return MLPParams(
                w1=z["w1"],
                b1=z["b1"],
                w2=z["w2"],
                b2=float(z["b2"]),
                activation=str(z["activation"]),
            )
    raise ValueError(f"unknown checkpoint kind {kind!r}")
