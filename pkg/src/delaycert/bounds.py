"""Deviation bounds, residual measurement, and empirical certificates.

Three bound families are computed from the problem's moduli:

    perturbation:  |theta - theta~| * exp(int (h + k))   (two nearby problems)
    dependence:    |theta - theta~| * exp(int k)         (same rhs, h == 0)
    stability:     eps * (t - t0) * exp(int k)           (approximate solutions)

A certificate pairs one bound curve with the measured sup-history deviation
of an actual pair of trajectories and reports the minimum margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ContractError
from .expr import ExprSystem, estimate_lipschitz
from .gronwall import cumulative_integral_curve, linear_table
from .integrate import GridConfig, solve
from .norms import max_norm
from .problem import (
    DelayedProblem,
    HistoryFunctional,
    Trajectory,
    deviation_curve,
)


def _zero(_t):
    return 0.0


def perturbation_bound(theta_dist, gap_modulus: Callable, lipschitz: Callable,
                       t0, t, quad_intervals: int = 256) -> float:
    """theta_dist * exp(int_{t0}^{t} (h + k)): deviation ceiling for two
    problems whose right-hand sides differ within h(t) and whose initial
    functions differ by theta_dist in sup-norm."""
    theta_dist = float(theta_dist)
    if theta_dist < 0.0:
        raise ContractError("theta_dist must be nonnegative")
    t, t0 = float(t), float(t0)
    if t < t0:
        raise ContractError(f"t={t} precedes t0={t0}")

    def combined(s):
        return gap_modulus(s) + lipschitz(s)

    if t == t0:
        return theta_dist
    ts = np.linspace(t0, t, quad_intervals + 1)
    total = float(cumulative_integral_curve(combined, ts, nonnegative=True,
                                            label="modulus")[-1])
    return theta_dist * math.exp(total)


def dependence_bound(theta_dist, lipschitz: Callable, t0, t,
                     quad_intervals: int = 256) -> float:
    """Continuous-dependence ceiling: the perturbation bound with h == 0."""
    return perturbation_bound(theta_dist, _zero, lipschitz, t0, t, quad_intervals)


def stability_bound(eps, lipschitz: Callable, t0, t,
                    quad_intervals: int = 256) -> float:
    """eps * (t - t0) * exp(int_{t0}^{t} k): distance ceiling from a path with
    residual <= eps to the exact solution sharing its initial function."""
    eps = float(eps)
    if eps < 0.0:
        raise ContractError("eps must be nonnegative")
    t, t0 = float(t), float(t0)
    if t < t0:
        raise ContractError(f"t={t} precedes t0={t0}")
    if t == t0:
        return 0.0
    ts = np.linspace(t0, t, quad_intervals + 1)
    total = float(cumulative_integral_curve(lipschitz, ts, nonnegative=True,
                                            label="lipschitz modulus")[-1])
    return eps * (t - t0) * math.exp(total)


# ---------------------------------------------------------------------------
# residual of an approximate solution

@dataclass(frozen=True)
class ResidualReport:
    """Per-node defect ||x'(t) - F(t, x_t)|| and its sup over [t0, front]."""

    ts: np.ndarray
    residuals: np.ndarray
    eps_est: float
    derivative_source: str


def residual(traj: Trajectory, problem: DelayedProblem,
             history_match_tol: float = 1e-6) -> ResidualReport:
    """Measure the defect of a trajectory against the problem.

    Node derivatives are the stored ones when present (solver stage data,
    or dx columns of an ingested file) and finite differences otherwise;
    the report records which. The trajectory must cover [history_start,
    front] and reproduce the problem's initial function.
    """
    p = problem
    if traj.dim != p.dim:
        raise ContractError(f"trajectory dimension {traj.dim} != problem dim {p.dim}")
    slack = 1e-9 * max(1.0, abs(p.history_start), abs(p.horizon))
    if traj.start > p.history_start + slack:
        raise ContractError(
            f"trajectory starts at {traj.start}, after history start {p.history_start}"
        )
    check_ts = np.linspace(p.history_start, p.t0, 17)
    for t in check_ts:
        gap = max_norm(traj(float(t)) - p.history_vec(float(t)))
        if gap > history_match_tol * max(1.0, max_norm(p.history_vec(float(t)))):
            raise ContractError(
                f"trajectory does not reproduce the problem history at t={float(t)} "
                f"(gap {gap})"
            )
    functional = HistoryFunctional(p)
    sel = traj.mesh >= p.t0 - slack
    ts = traj.mesh[sel]
    ders = traj.derivs[sel]
    res = np.array(
        [max_norm(ders[i] - functional(float(t), traj)) for i, t in enumerate(ts)]
    )
    return ResidualReport(ts, res, float(res.max()), traj.derivative_source)


# ---------------------------------------------------------------------------
# certificates

@dataclass(frozen=True)
class Certificate:
    """Bound curve vs measured deviation curve, with margin and verdict.

    verdict is 'holds' when the minimum margin clears -slack (slack is
    1e-9 times the bound scale), 'violated' otherwise, and 'inconclusive'
    when the certified hypothesis itself failed (e.g. measured residual
    above the claimed eps). ``k_sampled`` marks bounds built from a sampled
    Lipschitz estimate; such a 'holds' is reported as 'holds (sampled-k)'
    and never silently upgraded.
    """

    kind: str
    ts: np.ndarray
    bound: np.ndarray
    measured: np.ndarray
    min_margin: float
    slack: float
    verdict: str
    k_sampled: bool
    inputs: dict

    @property
    def margin(self):
        return self.bound - self.measured

    def verdict_label(self) -> str:
        if self.verdict == "holds" and self.k_sampled:
            return "holds (sampled-k)"
        return self.verdict

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "verdict": self.verdict,
            "verdict_label": self.verdict_label(),
            "k_sampled": self.k_sampled,
            "min_margin": self.min_margin,
            "slack": self.slack,
            "inputs": self.inputs,
            "t": [float(v) for v in self.ts],
            "bound": [float(v) for v in self.bound],
            "measured": [float(v) for v in self.measured],
            "margin": [float(v) for v in self.margin],
        }


def _assemble(kind, ts, bound, measured, k_sampled, inputs):
    bound = np.asarray(bound, dtype=float)
    measured = np.asarray(measured, dtype=float)
    slack = 1e-9 * max(1.0, float(np.max(bound, initial=0.0)))
    margin = bound - measured
    min_margin = float(np.min(margin)) if margin.size else float("nan")
    verdict = "holds" if min_margin >= -slack else "violated"
    return Certificate(kind, np.asarray(ts, dtype=float), bound, measured,
                       min_margin, slack, verdict, k_sampled, inputs)


def resolve_lipschitz(problem: DelayedProblem, time_samples: int = 17,
                      pair_samples: int = 256):
    """The problem's Lipschitz modulus: supplied k(t) when present, else a
    sampled estimate over the declared domain box (flagged as sampled)."""
    if problem.lipschitz is not None:
        return problem.lipschitz, False, "supplied k(t)"
    if isinstance(problem.rhs, ExprSystem) and problem.domain_box is not None:
        ts = np.linspace(problem.t0, problem.horizon, time_samples)
        ks = [
            estimate_lipschitz(problem.rhs, problem.domain_box, float(t),
                               samples=pair_samples)
            for t in ts
        ]
        desc = (
            f"sampled estimate over the domain box ({time_samples} time samples, "
            f"{pair_samples} pair draws, safety x1.25)"
        )
        return linear_table(ts, ks), True, desc
    raise ContractError(
        "no Lipschitz modulus available: supply problem.lipschitz, or an "
        "expression rhs together with a domain_box for sampling"
    )


def _union_nodes(a: Trajectory, b: Trajectory, t0):
    t_end = min(a.front, b.front)
    ts = np.unique(np.concatenate([a.mesh, b.mesh, [t0, t_end]]))
    return ts[(ts >= t0) & (ts <= t_end)]


def certify_stability(problem: DelayedProblem, approx: Trajectory, eps,
                      cfg: GridConfig, refinement: int = 8) -> Certificate:
    """Certificate that `approx` (claimed residual <= eps) stays within the
    stability bound of the exact solution sharing its initial data.

    If the measured residual exceeds eps the hypothesis fails and the
    certificate is inconclusive, carrying the measured value.
    """
    eps = float(eps)
    if eps < 0.0:
        raise ContractError("eps must be nonnegative")
    rep = residual(approx, problem)
    inputs = {
        "eps": eps,
        "eps_est": rep.eps_est,
        "residual_derivative_source": rep.derivative_source,
        "horizon": problem.horizon,
        "step": cfg.h_step,
        "problem": problem.name,
    }
    if problem.domain_box is not None:
        inputs["domain_box"] = [list(p) for p in
                                zip(problem.domain_box.lows, problem.domain_box.highs)]
    if rep.eps_est > eps * (1.0 + 1e-12):
        inputs["note"] = (
            f"hypothesis failed: measured residual {rep.eps_est} exceeds eps {eps}"
        )
        return Certificate("stability", np.empty(0), np.empty(0), np.empty(0),
                           float("nan"), 0.0, "inconclusive", False, inputs)
    k_fn, k_sampled, k_desc = resolve_lipschitz(problem)
    inputs["k"] = k_desc
    exact = solve(replace(problem, history=lambda t: approx(t)), cfg)
    ts = _union_nodes(approx, exact, problem.t0)
    measured = deviation_curve(approx, exact, ts, refinement)
    growth = np.exp(cumulative_integral_curve(k_fn, ts, nonnegative=True,
                                              label="lipschitz modulus"))
    bound = eps * (ts - problem.t0) * growth
    return _assemble("stability", ts, bound, measured, k_sampled, inputs)


def certify_dependence(problem: DelayedProblem, theta_alt: Callable,
                       cfg: GridConfig, refinement: int = 8) -> Certificate:
    """Certificate that solutions from two initial functions stay within the
    continuous-dependence bound driven by their sup-norm distance."""
    p = problem
    if p.t0 > p.history_start:
        grid = np.linspace(p.history_start, p.t0, 257)
    else:
        grid = np.array([p.t0])
    theta_dist = max(
        max_norm(np.atleast_1d(np.asarray(theta_alt(float(t)), dtype=float))
                 - p.history_vec(float(t)))
        for t in grid
    )
    base = solve(p, cfg)
    alt = solve(replace(p, history=theta_alt), cfg)
    k_fn, k_sampled, k_desc = resolve_lipschitz(p)
    ts = _union_nodes(base, alt, p.t0)
    measured = deviation_curve(base, alt, ts, refinement)
    growth = np.exp(cumulative_integral_curve(k_fn, ts, nonnegative=True,
                                              label="lipschitz modulus"))
    bound = theta_dist * growth
    inputs = {
        "theta_dist": float(theta_dist),
        "k": k_desc,
        "horizon": p.horizon,
        "step": cfg.h_step,
        "problem": p.name,
    }
    return _assemble("dependence", ts, bound, measured, k_sampled, inputs)
