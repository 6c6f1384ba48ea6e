"""Trainers for the calibrated method and its baselines.

The outer loop alternates: compute per-sample losses, pick a worst-case
weighting q (method-specific), take one Adam step on the weighted risk.
Worst-case weightings come from closed-form dual solvers (KL and chi-square
balls), from the graph gradient flow (entropy-only or fully calibrated), or
are trivial (ERM uniform, DORO filter-then-solve).

A simplex-grid brute-force maximizer is included as an independent oracle
for the dual solvers and the flow; it is exponential in n and capped at
n <= 6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .errors import ConvergenceError, NumericalError
from .flow import FlowConfig, run_flow
from .graph import Graph
from .models import (
    ModelParams,
    adam_step,
    grad_norm,
    init_adam,
    per_sample_loss,
    weighted_risk_grad,
)
from .risk import (
    RiskConfig,
    neg_entropy_term,
    risk,
    total_variation,
    uniform_weights,
)

CONSTRAINT_TOL = 1e-8


# ---------------------------------------------------------------------------
# method specifications


@dataclass(frozen=True)
class ERMSpec:
    label = "ERM"


@dataclass(frozen=True)
class KLDROSpec:
    rho: float
    label = "KL-DRO"

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be > 0")


@dataclass(frozen=True)
class Chi2DROSpec:
    rho: float
    label = "Chi2-DRO"

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be > 0")


@dataclass(frozen=True)
class GDROSpec:
    beta: float = 1.0
    t_in: int = 500
    tau: float = 1.0
    label = "GDRO"

    def __post_init__(self):
        if self.beta <= 0 or self.t_in < 1 or self.tau <= 0:
            raise ValueError("GDRO needs beta > 0, t_in >= 1, tau > 0")


@dataclass(frozen=True)
class GCDROSpec:
    alpha: float = 1.0
    beta: float = 1.0
    t_in: int = 500
    tau: float = 1.0
    theta_grad: str = "full"  # "full" keeps the TV term in the theta step
    label = "GCDRO"

    def __post_init__(self):
        if self.alpha < 0 or self.beta <= 0 or self.t_in < 1 or self.tau <= 0:
            raise ValueError("GCDRO needs alpha >= 0, beta > 0, t_in >= 1, tau > 0")
        if self.theta_grad not in ("full", "weighted_only"):
            raise ValueError("theta_grad must be 'full' or 'weighted_only'")


@dataclass(frozen=True)
class DOROSpec:
    drop_frac: float
    inner: object = None  # KLDROSpec or Chi2DROSpec; default chi2 rho=0.5
    label = "DORO"

    def __post_init__(self):
        if not 0.0 <= self.drop_frac < 0.5:
            raise ValueError("drop_frac must lie in [0, 0.5)")
        inner = self.inner if self.inner is not None else Chi2DROSpec(rho=0.5)
        if not isinstance(inner, (KLDROSpec, Chi2DROSpec)):
            raise ValueError("DORO inner method must be KL or chi-square")
        object.__setattr__(self, "inner", inner)


MethodSpec = ERMSpec | KLDROSpec | Chi2DROSpec | GDROSpec | GCDROSpec | DOROSpec

_METHOD_KEYS = {
    "erm": (ERMSpec, ()),
    "kl_dro": (KLDROSpec, ("rho",)),
    "chi2_dro": (Chi2DROSpec, ("rho",)),
    "gdro": (GDROSpec, ("beta", "t_in", "tau")),
    "gcdro": (GCDROSpec, ("alpha", "beta", "t_in", "tau", "theta_grad")),
    "doro": (DOROSpec, ("drop_frac", "inner")),
}


def method_from_dict(d: dict) -> MethodSpec:
    """Build a MethodSpec from {"name": ..., **hyperparameters}."""
    d = dict(d)
    name = d.pop("name", None)
    if name not in _METHOD_KEYS:
        raise ValueError(f"unknown method name {name!r}")
    cls, allowed = _METHOD_KEYS[name]
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValueError(f"unknown keys for method {name!r}: {sorted(unknown)}")
    if name == "doro" and "inner" in d and d["inner"] is not None:
        d["inner"] = method_from_dict(d["inner"])
    return cls(**d)


# ---------------------------------------------------------------------------
# dual-form worst-case solvers


@dataclass(frozen=True)
class DualSolution:
    """Worst-case weighting with its dual parameters.

    ``constraint_residual`` is signed (divergence minus radius); it is within
    the solver tolerance when ``status`` is "ok" and records the slack for
    the degenerate statuses ("zero-radius", "degenerate-losses",
    "vertex-limit").
    """

    q: np.ndarray
    lam: float
    eta: float | None
    objective: float
    constraint_residual: float
    status: str = "ok"


def _kl_to_uniform(q: np.ndarray) -> float:
    n = q.shape[0]
    pos = q > 0
    return float(np.dot(q[pos], np.log(q[pos]))) + math.log(n)


def _chi2_to_uniform(q: np.ndarray) -> float:
    n = q.shape[0]
    return float(np.mean((n * q - 1.0) ** 2))


def _softmax_scaled(ell: np.ndarray, lam: float) -> np.ndarray:
    z = ell / lam
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def kl_worst_case(ell: np.ndarray, rho: float) -> DualSolution:
    """Maximize sum q_i l_i over KL(q || uniform) <= rho.

    The maximizer is exponential tilting q_i ~ exp(l_i / lam); lam is found
    by bisection so the KL constraint is active to within 1e-8.  If even the
    lam -> 0 limit (uniform over the argmax set) has KL below rho, that
    limit is returned flagged as "vertex-limit".
    """
    ell = np.asarray(ell, dtype=np.float64)
    if not np.isfinite(ell).all():
        raise NumericalError("losses must be finite")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    n = ell.shape[0]
    uni = uniform_weights(n)
    obj_uni = float(ell.mean())

    if rho == 0.0:
        return DualSolution(uni, math.inf, None, obj_uni, 0.0, "zero-radius")
    if float(np.ptp(ell)) == 0.0:
        return DualSolution(uni, math.inf, None, obj_uni, -rho, "degenerate-losses")

    top = ell == ell.max()
    m = int(top.sum())
    kl_vertex = math.log(n / m)
    if kl_vertex <= rho:
        q = top.astype(np.float64) / m
        return DualSolution(q, 0.0, None, float(ell.max()), kl_vertex - rho, "vertex-limit")

    def f(lam: float) -> float:
        return _kl_to_uniform(_softmax_scaled(ell, lam)) - rho

    lo, hi = 1e-6, 1e6
    while f(lo) < 0 and lo > 1e-290:  # need smaller lam to reach the radius
        lo /= 10.0
    while f(hi) > 0 and hi < 1e290:
        hi *= 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm > 0:
            lo = mid
        else:
            hi = mid
        if abs(fm) <= CONSTRAINT_TOL:
            break
    lam = 0.5 * (lo + hi)
    q = _softmax_scaled(ell, lam)
    resid = _kl_to_uniform(q) - rho
    if abs(resid) > 10 * CONSTRAINT_TOL:
        raise ConvergenceError("KL dual bisection failed", residual=resid)
    return DualSolution(q, lam, None, float(np.dot(q, ell)), resid, "ok")


def _chi2_eta_root(sorted_desc: np.ndarray, prefix: np.ndarray, lam: float) -> float:
    """Unique eta with sum (l_i + lam - eta)_+ = lam * n, by segment scan."""
    n = sorted_desc.shape[0]
    for k in range(1, n + 1):
        eta = (prefix[k] + k * lam - lam * n) / k
        upper = sorted_desc[k - 1] + lam
        lower = (sorted_desc[k] + lam) if k < n else -math.inf
        if lower <= eta <= upper:
            return float(eta)
    raise NumericalError("chi-square normalization root not bracketed")


def chi2_worst_case(ell: np.ndarray, rho: float) -> DualSolution:
    """Maximize sum q_i l_i over (1/n) sum (n q_i - 1)^2 <= rho.

    q_i = (l_i + lam - eta)_+ / (lam n); eta enforces normalization exactly
    (piecewise-linear segment solve) and lam is bisected until the
    chi-square constraint is active to within 1e-8.
    """
    ell = np.asarray(ell, dtype=np.float64)
    if not np.isfinite(ell).all():
        raise NumericalError("losses must be finite")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    n = ell.shape[0]
    uni = uniform_weights(n)
    obj_uni = float(ell.mean())

    if rho == 0.0:
        return DualSolution(uni, math.inf, None, obj_uni, 0.0, "zero-radius")
    if float(np.ptp(ell)) == 0.0:
        return DualSolution(uni, math.inf, None, obj_uni, -rho, "degenerate-losses")

    top = ell == ell.max()
    m = int(top.sum())
    q_vertex = top.astype(np.float64) / m
    chi2_vertex = _chi2_to_uniform(q_vertex)
    if chi2_vertex <= rho:
        return DualSolution(
            q_vertex, 0.0, None, float(ell.max()), chi2_vertex - rho, "vertex-limit"
        )

    order = np.argsort(-ell, kind="stable")
    sorted_desc = ell[order]
    prefix = np.concatenate([[0.0], np.cumsum(sorted_desc)])

    def solve(lam: float):
        eta = _chi2_eta_root(sorted_desc, prefix, lam)
        q = np.maximum(ell + lam - eta, 0.0) / (lam * n)
        q = q / q.sum()  # remove the segment-solve rounding
        return q, eta

    def f(lam: float) -> float:
        q, _ = solve(lam)
        return _chi2_to_uniform(q) - rho

    lo, hi = 1e-6, 1e6
    while f(lo) < 0 and lo > 1e-290:
        lo /= 10.0
    while f(hi) > 0 and hi < 1e290:
        hi *= 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm > 0:
            lo = mid
        else:
            hi = mid
        if abs(fm) <= CONSTRAINT_TOL:
            break
    lam = 0.5 * (lo + hi)
    q, eta = solve(lam)
    resid = _chi2_to_uniform(q) - rho
    if abs(resid) > 10 * CONSTRAINT_TOL:
        raise ConvergenceError("chi-square dual bisection failed", residual=resid)
    return DualSolution(q, lam, eta, float(np.dot(q, ell)), resid, "ok")


def doro_filter(ell: np.ndarray, drop_frac: float) -> np.ndarray:
    """Indices of the ceil((1 - drop_frac) n) smallest losses, ties by index."""
    if not 0.0 <= drop_frac < 0.5:
        raise ValueError("drop_frac must lie in [0, 0.5)")
    ell = np.asarray(ell, dtype=np.float64)
    n = ell.shape[0]
    keep = math.ceil((1.0 - drop_frac) * n)
    order = np.argsort(ell, kind="stable")
    return np.sort(order[:keep])


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    lr: float = 1e-3
    seed: int = 0
    warm_start_flow: bool = False
    record_every: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainedModel:
    params: ModelParams
    final_q: np.ndarray
    diagnostics: list = field(default_factory=list)


def _inner_weights(method: MethodSpec, ell: np.ndarray, g: Graph | None,
                   q_prev: np.ndarray | None):
    """Worst-case weighting for the current losses; returns (q, action)."""
    n = ell.shape[0]
    if isinstance(method, ERMSpec):
        return uniform_weights(n), 0.0
    if isinstance(method, KLDROSpec):
        return kl_worst_case(ell, method.rho).q, 0.0
    if isinstance(method, Chi2DROSpec):
        return chi2_worst_case(ell, method.rho).q, 0.0
    if isinstance(method, DOROSpec):
        kept = doro_filter(ell, method.drop_frac)
        if isinstance(method.inner, KLDROSpec):
            sub = kl_worst_case(ell[kept], method.inner.rho).q
        else:
            sub = chi2_worst_case(ell[kept], method.inner.rho).q
        q = np.zeros(n)
        q[kept] = sub
        return q, 0.0
    # graph flow methods
    alpha = method.alpha if isinstance(method, GCDROSpec) else 0.0
    q0 = q_prev if q_prev is not None else uniform_weights(n)
    cfg = FlowConfig(t_in=method.t_in, tau=method.tau, alpha=alpha, beta=method.beta)
    fs = run_flow(q0, ell, g, cfg)
    return fs.q, fs.action


def train(method: MethodSpec, model0: ModelParams, ds: Dataset,
          g: Graph | None = None, tc: TrainConfig = TrainConfig()) -> TrainedModel:
    """Alternating minimax loop; deterministic given (method, model0, tc)."""
    is_flow = isinstance(method, (GDROSpec, GCDROSpec))
    if is_flow and g is None:
        raise ValueError(f"{method.label} requires a graph")

    alpha = method.alpha if isinstance(method, GCDROSpec) else 0.0
    beta = method.beta if is_flow else 0.0
    include_tv = isinstance(method, GCDROSpec) and method.theta_grad == "full"

    params = model0
    adam = init_adam(model0, lr=tc.lr)
    q_warm = None
    diagnostics = []

    for epoch in range(tc.epochs):
        ell = per_sample_loss(params, ds)
        if not np.isfinite(ell).all():
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        q, action = _inner_weights(
            method, ell, g, q_warm if (is_flow and tc.warm_start_flow) else None
        )
        if is_flow and tc.warm_start_flow:
            q_warm = q
        grad = weighted_risk_grad(params, ds, q, g=g, alpha=alpha, include_tv=include_tv)

        if tc.record_every and (epoch % tc.record_every == 0 or epoch == tc.epochs - 1):
            wl = float(np.dot(q, ell))
            tv = total_variation(ell, q, g) if g is not None else 0.0
            ent = -neg_entropy_term(q)
            diagnostics.append(
                {
                    "epoch": epoch,
                    "risk": wl - 0.5 * alpha * tv + beta * ent,
                    "weighted_loss": wl,
                    "tv": tv,
                    "entropy": ent,
                    "action": action,
                    "grad_norm": grad_norm(grad),
                }
            )
        params, adam = adam_step(params, grad, adam)

    ell = per_sample_loss(params, ds)
    final_q, _ = _inner_weights(method, ell, g, None)
    return TrainedModel(params=params, final_q=final_q, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# brute-force oracle


def _compositions(total: int, parts: int) -> np.ndarray:
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    blocks = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        blocks.append(
            np.column_stack([np.full(len(rest), first, dtype=np.int64), rest])
        )
    return np.vstack(blocks)


def brute_force_worst_case(ell: np.ndarray, constraint: str = "none",
                           radius: float = 0.0, grid_resolution: float = 0.01,
                           *, objective: str = "linear", beta: float = 0.0,
                           alpha: float = 0.0, graph: Graph | None = None) -> np.ndarray:
    """Exhaustive simplex-grid maximizer (test oracle; n <= 6 only).

    constraint: "none", "kl" or "chi2" (divergence to uniform <= radius).
    objective: "linear" (weighted loss) or "risk" (the calibrated risk with
    the given alpha, beta and graph).
    """
    ell = np.asarray(ell, dtype=np.float64)
    n = ell.shape[0]
    if n > 6:
        raise ValueError("brute force oracle is limited to n <= 6")
    m = int(round(1.0 / grid_resolution))
    Q = _compositions(m, n).astype(np.float64) / m

    if constraint == "none":
        mask = np.ones(len(Q), dtype=bool)
    elif constraint == "kl":
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(Q > 0, Q * np.log(np.maximum(Q * n, 1e-300)), 0.0)
        mask = t.sum(axis=1) <= radius + 1e-12
    elif constraint == "chi2":
        mask = np.mean((n * Q - 1.0) ** 2, axis=1) <= radius + 1e-12
    else:
        raise ValueError(f"unknown constraint {constraint!r}")

    Qf = Q[mask]
    if len(Qf) == 0:
        raise ValueError("no feasible grid point; radius too small for the grid")

    vals = Qf @ ell
    if objective == "risk":
        if beta != 0.0:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(Qf > 0, Qf * np.log(np.maximum(Qf, 1e-300)), 0.0)
            vals = vals - beta * t.sum(axis=1)
        if alpha != 0.0:
            if graph is None:
                raise ValueError("objective 'risk' with alpha != 0 needs a graph")
            d = ell[graph.row] - ell[graph.col]
            tv = (Qf[:, graph.row] * Qf[:, graph.col] * (graph.w * d * d)).sum(axis=1)
            vals = vals - 0.5 * alpha * tv
    elif objective != "linear":
        raise ValueError(f"unknown objective {objective!r}")

    return Qf[int(np.argmax(vals))]
