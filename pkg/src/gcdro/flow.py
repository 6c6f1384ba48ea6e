"""Inner maximizer: explicit-Euler gradient flow of the calibrated risk.

The weighting q evolves on the probability simplex supported on the graph
nodes.  Each directed edge carries a velocity

    v_ij = (l_i - l_j) + beta (log q_j - log q_i) + alpha (s_j - s_i),
    s_i  = sum_{h in N(i)} w_ih q_h (l_h - l_i)^2,

mass moves along edges with the upwind flux  xi_ij = v_ij * (q_j if v_ij > 0
else q_i),  and a step updates  q_i += tau * sum_j w_ij xi_ij.  The flux is
exactly antisymmetric, so total mass is conserved structurally; upwinding
donates mass from the losing node, so a bounded relative outflow keeps every
q_i positive.  The accumulated kinetic energy  0.5 * sum xi_ij v_ij  along
accepted steps is the transport-action surrogate reported as ``action``.

Step size control (``adaptive``): tau is capped by
``safety / max_i sum_j w_ij max(-v_ij, 0)`` (per-step relative loss of any
node stays below ``safety``, hence positivity), then backtracked until the
step achieves a fixed fraction of its first-order risk gain.  The
backtracking line search is what makes the per-step risk sequence
nondecreasing: positivity alone does not rule out overshoot.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import ConfigError, ConvergenceError, NumericalError
from .graph import Graph
from .risk import RiskConfig, check_weights, risk

_ARMIJO_C = 0.1
_MAX_BACKTRACKS = 60
_MASS_DRIFT_TOL = 1e-10


@dataclass(frozen=True)
class FlowConfig:
    """Flow schedule: number of steps, step-size cap and calibration strengths.

    ``stop_vnorm`` optionally stops a run early once the max |velocity|
    falls below it (used to run the flow to stationarity).
    """

    t_in: int = 500
    tau: float = 1.0
    adaptive: bool = True
    safety: float = 0.5
    alpha: float = 0.0
    beta: float = 1.0
    stop_vnorm: float | None = None

    def __post_init__(self):
        if self.t_in < 1:
            raise ConfigError("t_in must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if not 0.0 < self.safety < 1.0:
            raise ConfigError("safety must lie in (0, 1)")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.beta <= 0:
            raise ConfigError("beta must be > 0 for the flow")

    def risk_config(self) -> RiskConfig:
        return RiskConfig(alpha=self.alpha, beta=self.beta)


@dataclass(frozen=True)
class FlowState:
    """Current weighting plus elapsed time, accumulated action and last risk.

    ``tau_next`` seeds the next step's line search: it doubles after an
    accepted step (up to the configured cap) and shrinks on backtracks, so
    the search does not re-pay the halving cost every step.
    """

    q: np.ndarray
    steps_done: int = 0
    time_elapsed: float = 0.0
    action: float = 0.0
    last_risk: float = math.nan
    last_vmax: float = math.nan
    tau_next: float = math.inf


def velocities(ell, q, g: Graph, alpha: float, beta: float) -> np.ndarray:
    """Per-directed-edge velocity; v_ij = -v_ji holds exactly."""
    ell = np.asarray(ell, dtype=np.float64)
    q = check_weights(q, g.n, interior=True)
    if ell.shape[0] != g.n:
        raise ValueError("loss vector length does not match graph size")
    return _kernels.edge_velocities(g.indptr, g.col, g.row, g.w, ell, q, alpha, beta)


def upwind_flux(q_i, q_j, v):
    """Donor-node flux: v * q_j when v > 0, else v * q_i (vectorizes)."""
    return v * np.where(np.asarray(v) > 0.0, q_j, q_i)


def init_state(q0, ell, g: Graph, cfg: FlowConfig) -> FlowState:
    q0 = check_weights(q0, g.n, interior=True)
    r0 = risk(ell, q0, g, cfg.risk_config())
    return FlowState(q=q0, last_risk=r0)


def step(state: FlowState, ell, g: Graph, cfg: FlowConfig) -> FlowState:
    """One explicit Euler step; conserves mass and preserves positivity."""
    ell = np.asarray(ell, dtype=np.float64)
    q = np.asarray(state.q, dtype=np.float64)
    v = _kernels.edge_velocities(g.indptr, g.col, g.row, g.w, ell, q, cfg.alpha, cfg.beta)
    dq, action_rate, ascent_rate, out_max, v_max = _kernels.step_quantities(
        g.indptr, g.col, g.row, g.w, q, v
    )
    if not (np.isfinite(action_rate) and np.isfinite(v_max) and np.isfinite(dq).all()):
        raise NumericalError(f"non-finite velocity at flow step {state.steps_done}")

    if v_max == 0.0:
        return replace(state, steps_done=state.steps_done + 1, last_vmax=0.0)

    tau = min(cfg.tau, state.tau_next)
    if cfg.adaptive and out_max > 0.0:
        tau = min(tau, cfg.safety / out_max)

    rc = cfg.risk_config()
    r0 = state.last_risk if np.isfinite(state.last_risk) else risk(ell, q, g, rc)
    slack = 1e-12 * max(1.0, abs(r0))

    if cfg.adaptive:
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            q_new = q + tau * dq
            r_new = risk(ell, q_new, g, rc)
            if r_new >= r0 + _ARMIJO_C * tau * ascent_rate - slack:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            # degenerate line search: stand still rather than lose risk
            return replace(
                state, steps_done=state.steps_done + 1, last_vmax=v_max, tau_next=tau
            )
        # grow the carried step only while gains are measurably above the
        # slack; once gains sink into evaluation noise the frozen tau keeps
        # the fast modes contractive instead of bouncing on slack-accepts
        tau_next = tau if (r_new - r0) < 10.0 * slack else 2.0 * tau
    else:
        q_new = q + tau * dq
        if np.any(q_new <= 0.0):
            raise NumericalError(
                f"fixed step tau={cfg.tau} lost positivity at flow step {state.steps_done}"
            )
        r_new = risk(ell, q_new, g, rc)
        tau_next = tau

    drift = abs(q_new.sum() - 1.0)
    if drift > _MASS_DRIFT_TOL:
        raise NumericalError(f"mass drift {drift:.3e} at flow step {state.steps_done}")

    return FlowState(
        q=q_new,
        steps_done=state.steps_done + 1,
        time_elapsed=state.time_elapsed + tau,
        action=state.action + tau * action_rate,
        last_risk=r_new,
        last_vmax=v_max,
        tau_next=tau_next,
    )


def run_flow(q0, ell, g: Graph, cfg: FlowConfig, trace: list | None = None) -> FlowState:
    """Run cfg.t_in steps from q0 (early stop on cfg.stop_vnorm if set).

    When ``trace`` is a list, one (step, tau_eff, risk, action, min_q, max_q)
    row is appended per step.
    """
    state = init_state(q0, ell, g, cfg)
    for _ in range(cfg.t_in):
        prev_time = state.time_elapsed
        state = step(state, ell, g, cfg)
        if trace is not None:
            trace.append(
                (
                    state.steps_done,
                    state.time_elapsed - prev_time,
                    state.last_risk,
                    state.action,
                    float(state.q.min()),
                    float(state.q.max()),
                )
            )
        if cfg.stop_vnorm is not None and state.last_vmax < cfg.stop_vnorm:
            break
    return state


def write_trace_csv(path, rows) -> None:
    """Persist a flow trace as CSV (step, tau_eff, risk, action, min_q, max_q)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "tau_eff", "risk", "action", "min_q", "max_q"])
        for r in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in r])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def stationary_fixed_point(ell, g: Graph, alpha: float, beta: float,
                           tol: float = 1e-10, max_iter: int = 10000,
                           damping: float = 0.5) -> np.ndarray:
    """Self-consistent final state of the flow.

    Solves  q_i = softmax_i((l_i - alpha * s_i(q)) / beta)  by damped fixed
    point iteration, halving the damping whenever the residual grows.  Stops
    once the self-consistency residual max|T(q) - q| drops below ``tol``.
    """
    if beta <= 0:
        raise ConfigError("beta must be > 0")
    ell = np.asarray(ell, dtype=np.float64)
    q = np.full(g.n, 1.0 / g.n)
    lam = damping
    prev_resid = math.inf
    for _ in range(max_iter):
        if alpha != 0.0:
            s = _kernels.neighbor_quad_sums(g.indptr, g.col, g.row, g.w, ell, q)
            target = _softmax((ell - alpha * s) / beta)
        else:
            target = _softmax(ell / beta)
        resid = float(np.max(np.abs(target - q)))
        if resid < tol:
            return q
        if resid > prev_resid and lam > 1e-3:
            lam *= 0.5
        prev_resid = resid
        q = (1.0 - lam) * q + lam * target
        q = q / q.sum()
    raise ConvergenceError(
        f"stationary state not reached in {max_iter} iterations", residual=prev_resid
    )
