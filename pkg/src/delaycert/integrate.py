"""Method-of-steps integration and an independent Picard-iteration oracle.

`solve` advances classical 4-stage Runge-Kutta over a breaking-point-aware
mesh, evaluating the right-hand side through dense cubic-Hermite history.
`picard_solve` iterates the equivalent integral form
x -> theta(t0) + int_{t0}^{t} F(s, x_s) ds with trapezoidal quadrature; the
two routes agreeing on a problem is the computable face of uniqueness.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .norms import max_norm
from .problem import (
    DelayedProblem,
    HistoryFunctional,
    Trajectory,
    _hermite,
    _tol,
    sup_distance,
)


@dataclass(frozen=True)
class GridConfig:
    """Meshing and step-resolution knobs for `solve`."""

    h_step: float
    insert_breaking_points: bool = True
    max_overlap_iterations: int = 10
    overlap_tolerance: float = 1e-12
    max_step_halvings: int = 20

    def __post_init__(self):
        if self.h_step <= 0:
            raise ContractError("h_step must be positive")
        if self.overlap_tolerance <= 0:
            raise ContractError("overlap tolerance must be positive")
        if self.max_overlap_iterations < 1:
            raise ContractError("max_overlap_iterations must be >= 1")


@dataclass(frozen=True)
class PicardConfig:
    """Iteration count and quadrature mesh for `picard_solve`. The initial
    iterate is the constant extension of theta(t0)."""

    iterations: int = 20
    quad_intervals: int = 2000

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("iteration count must be >= 1")
        if self.quad_intervals < 2:
            raise ContractError("quadrature mesh needs at least 2 intervals")


def constant_lags(problem: DelayedProblem, samples: int = 256):
    """Per delay: the value of t - g_j(t) when constant on a sample grid, else None."""
    ts = np.linspace(problem.t0, problem.horizon, samples)
    out = []
    for g in problem.delays:
        lags = np.array([t - g(float(t)) for t in ts])
        scale = max(1.0, float(np.max(np.abs(lags))))
        if float(np.max(lags) - np.min(lags)) <= 1e-12 * scale:
            out.append(float(np.mean(lags)))
        else:
            out.append(None)
    return out


def propagated_breaking_points(problem: DelayedProblem, lags=None, cap: int = 1024):
    """t0 plus every sum of positive constant-lag multiples below the horizon.

    These are the times where the solution's smoothness degree can change;
    meshing them exactly preserves the integrator's order on smooth pieces.
    Non-constant delays contribute nothing (uniform meshing applies).
    """
    if lags is None:
        lags = constant_lags(problem)
    slack = _tol(problem.t0, problem.horizon)
    taus = sorted({lag for lag in lags if lag is not None and lag > slack})
    pts = [problem.t0]
    frontier = [problem.t0]
    while frontier and len(pts) < cap:
        base = frontier.pop()
        for tau in taus:
            nxt = base + tau
            if nxt >= problem.horizon - slack:
                continue
            if any(abs(nxt - q) <= slack for q in pts):
                continue
            pts.append(nxt)
            frontier.append(nxt)
    return sorted(pts)


def _history_nodes(problem: DelayedProblem, spacing: float):
    """Mesh/values/derivatives for the prescribed segment [history_start, t0]."""
    p = problem
    if p.t0 > p.history_start:
        n = max(1, math.ceil((p.t0 - p.history_start) / spacing - 1e-12))
        ts = np.linspace(p.history_start, p.t0, n + 1)
        vals = np.array([p.history_vec(t) for t in ts])
        ders = np.gradient(vals, ts, axis=0) if ts.size > 1 else np.zeros_like(vals)
    else:
        ts = np.array([p.t0])
        vals = np.array([p.history_vec(p.t0)])
        ders = np.zeros_like(vals)
    return ts, vals, ders


def solve(problem: DelayedProblem, cfg: GridConfig) -> Trajectory:
    """Integrate the problem by the method of steps.

    Every Runge-Kutta stage evaluates F through the dense history. When a
    delayed argument lands inside the current step (vanishing-lag overlap),
    the step is re-run to a fixed point of the step map at
    ``cfg.overlap_tolerance``; non-convergence halves the step, and a hard
    error follows ``cfg.max_step_halvings`` halvings. Identical inputs
    produce bit-identical trajectories.
    """
    p = problem
    if cfg.h_step > p.horizon - p.t0:
        raise ContractError(
            f"h_step {cfg.h_step} exceeds the solve window {p.horizon - p.t0}"
        )
    functional = HistoryFunctional(p)
    eps_t = _tol(p.history_start, p.horizon)

    hist_ts, hist_vals, hist_ders = _history_nodes(p, cfg.h_step)

    # mesh targets: breaking-point anchors subdivided at <= h_step
    lags = constant_lags(p)
    if cfg.insert_breaking_points:
        anchors = propagated_breaking_points(p, lags) + [p.horizon]
    else:
        anchors = [p.t0, p.horizon]
    anchors = sorted(anchors)
    targets = []
    for a, b in zip(anchors[:-1], anchors[1:]):
        k = max(1, math.ceil((b - a) / cfg.h_step - 1e-12))
        targets.extend(np.linspace(a, b, k + 1)[1:].tolist())

    sol_ts = [p.t0]
    sol_ys = [p.history_vec(p.t0)]

    def accepted(q):
        q = float(q)
        if q <= p.t0:
            return p.history_vec(q)
        i = bisect.bisect_right(sol_ts, q) - 1
        if i >= len(sol_ts) - 1:
            return sol_ys[-1].copy()
        return _hermite(
            sol_ts[i], sol_ts[i + 1],
            sol_ys[i], sol_ys[i + 1],
            sol_ds[i], sol_ds[i + 1], q,
        )

    sol_ds = [functional(p.t0, accepted)]

    def attempt(ta, ya, da, tb):
        """One RK4 step; returns (y_b, d_b, overlap_iterations) or None."""
        h = tb - ta
        mid = ta + 0.5 * h
        overlap = False
        for s in (mid, tb):
            for g in p.delays:
                if float(g(s)) > ta + eps_t:
                    overlap = True
                    break
            if overlap:
                break
        k1 = da  # F(ta, .) over already-accepted data
        if not overlap:
            kmid = functional(mid, accepted)
            k4 = functional(tb, accepted)
            yb = ya + (h / 6.0) * (k1 + 4.0 * kmid + k4)
            return yb, k4, 0
        yb = ya + h * da
        db = da.copy()
        for it in range(1, cfg.max_overlap_iterations + 1):
            def view(q, _yb=yb, _db=db):
                q = float(q)
                if q <= ta + eps_t:
                    return accepted(q)
                return _hermite(ta, tb, ya, _yb, da, _db, min(q, tb))

            kmid = functional(mid, view)
            k4 = functional(tb, view)
            y_new = ya + (h / 6.0) * (k1 + 4.0 * kmid + k4)
            delta = max(max_norm(y_new - yb), max_norm(k4 - db))
            yb, db = y_new, k4
            if delta <= cfg.overlap_tolerance * max(1.0, max_norm(yb)):
                return yb, db, it
        return None

    overlap_max = 0
    halvings_total = 0
    t_cur, y_cur, d_cur = p.t0, sol_ys[0], sol_ds[0]
    for target in targets:
        pending = [float(target)]
        halvings = 0
        while pending:
            t_next = pending[-1]
            res = attempt(t_cur, y_cur, d_cur, t_next)
            if res is None:
                halvings += 1
                halvings_total += 1
                if halvings > cfg.max_step_halvings:
                    raise ContractError(
                        f"overlap iteration failed to converge near t={t_next} "
                        f"after {cfg.max_step_halvings} step halvings"
                    )
                pending.append(0.5 * (t_cur + t_next))
                continue
            y_next, d_next, its = res
            overlap_max = max(overlap_max, its)
            pending.pop()
            sol_ts.append(t_next)
            sol_ys.append(y_next)
            sol_ds.append(d_next)
            t_cur, y_cur, d_cur = t_next, y_next, d_next

    mesh = np.concatenate([hist_ts[:-1], np.asarray(sol_ts)])
    values = np.vstack([hist_vals[:-1], np.asarray(sol_ys)]) if hist_ts.size > 1 \
        else np.asarray(sol_ys)
    derivs = np.vstack([hist_ders[:-1], np.asarray(sol_ds)]) if hist_ts.size > 1 \
        else np.asarray(sol_ds)

    metadata = {
        "solver": "rk4_steps",
        "step": cfg.h_step,
        "mesh_nodes": int(mesh.size),
        "breaking_points": [float(t) for t in anchors[:-1]],
        "constant_lags": lags,
        "overlap_iterations_max": overlap_max,
        "step_halvings": halvings_total,
    }
    if p.domain_box is not None:
        sol_arr = np.asarray(sol_ys)
        inside = np.array([p.domain_box.contains(v) for v in sol_arr])
        if not np.all(inside):
            first = int(np.argmin(inside))
            metadata["exited_domain_box"] = True
            metadata["exited_domain_box_at"] = float(sol_ts[first])
    return Trajectory(mesh, values, derivs, t0=p.t0, history_fn=p.history_vec,
                      metadata=metadata)


def picard_solve(problem: DelayedProblem, cfg: PicardConfig) -> Trajectory:
    """Fixed-point iteration of the integral form on a uniform quadrature mesh.

    Successive-iterate sup gaps are reported in the metadata; three
    consecutive growing gaps flag the result as diverging (iteration still
    runs to the configured count unless the gap overflows).
    """
    p = problem
    functional = HistoryFunctional(p)
    ts = np.linspace(p.t0, p.horizon, cfg.quad_intervals + 1)
    dts = np.diff(ts)
    theta0 = p.history_vec(p.t0)
    spacing = (p.horizon - p.t0) / cfg.quad_intervals
    hist_ts, hist_vals, hist_ders = _history_nodes(p, spacing)

    def as_trajectory(vals, ders):
        if hist_ts.size > 1:
            mesh = np.concatenate([hist_ts[:-1], ts])
            v = np.vstack([hist_vals[:-1], vals])
            d = np.vstack([hist_ders[:-1], ders])
        else:
            mesh, v, d = ts, vals, ders
        return Trajectory(mesh, v, d, t0=p.t0, history_fn=p.history_vec)

    vals = np.tile(theta0, (ts.size, 1))
    current = as_trajectory(vals, np.zeros_like(vals))
    sup_deltas = []
    diverging = False
    growing = 0
    used = 0
    for _ in range(cfg.iterations):
        integrand = np.array([functional(float(t), current) for t in ts])
        increments = 0.5 * dts[:, None] * (integrand[1:] + integrand[:-1])
        new_vals = theta0[None, :] + np.vstack(
            [np.zeros((1, p.dim)), np.cumsum(increments, axis=0)]
        )
        delta = float(np.max(np.abs(new_vals - vals)))
        if sup_deltas and delta > sup_deltas[-1]:
            growing += 1
            if growing >= 3:
                diverging = True
        else:
            growing = 0
        sup_deltas.append(delta)
        vals = new_vals
        current = as_trajectory(vals, integrand)
        used += 1
        if not math.isfinite(delta) or delta > 1e12:
            diverging = True
            break
    current.metadata.update(
        {
            "solver": "picard",
            "picard_iterations": used,
            "picard_sup_deltas": sup_deltas,
            "picard_diverging": diverging,
        }
    )
    return current


@dataclass(frozen=True)
class OrderEstimate:
    """Least-squares convergence order with a confidence flag."""

    order: float
    confident: bool
    steps: tuple
    errors: tuple
    note: str = ""


def convergence_order(problem: DelayedProblem, steps, reference: Trajectory,
                      base_cfg: GridConfig | None = None,
                      refinement: int = 8) -> OrderEstimate:
    """Observed order: slope of log(error) vs log(h), error being the
    sup-history distance to `reference` at the common final time."""
    steps = [float(h) for h in steps]
    if len(steps) < 3:
        raise ContractError("need at least 3 step sizes")
    cfg = base_cfg or GridConfig(h_step=min(steps))
    t_end = min(reference.front, problem.horizon)
    errors = []
    for h in steps:
        traj = solve(problem, replace(cfg, h_step=h))
        errors.append(sup_distance(traj, reference, t_end, refinement))
    errors_arr = np.asarray(errors)
    floor = 1e-13 * max(1.0, float(np.max(np.abs(reference.values))))
    if np.any(errors_arr <= floor):
        return OrderEstimate(
            float("nan"), False, tuple(steps), tuple(errors),
            note="errors at roundoff floor; order indeterminate",
        )
    slope = float(np.polyfit(np.log(steps), np.log(errors_arr), 1)[0])
    order_pairs = sorted(zip(steps, errors), reverse=True)
    decreasing = all(e1 > e2 for (_, e1), (_, e2) in zip(order_pairs, order_pairs[1:]))
    note = "" if decreasing else "errors not monotone in the step size"
    return OrderEstimate(slope, decreasing, tuple(steps), tuple(errors), note)
