"""Delay problem definition and dense trajectories.

A problem couples the system  x'(t) = f(t, x(g_1(t)), ..., x(g_m(t)))  on
[t0, horizon] with a prescribed history x = theta on [history_start, t0].
Trajectories are piecewise cubic Hermite paths with exact history playback,
so any solved or loaded path can serve as the history argument of the
right-hand-side functional.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ContractError, DomainError
from .norms import max_norm

_REL = 1e-9


def _tol(*vals):
    return _REL * max(1.0, *(abs(float(v)) for v in vals))


@dataclass(frozen=True)
class DelayedProblem:
    """First-order delay system with a prescribed initial function.

    ``rhs(t, z)`` receives z shaped (m, dim) — row j is the state at the
    j-th delayed time g_j(t) — and returns the dim-vector derivative.
    ``delays`` are callables with history_start <= g_j(t) <= t on
    [t0, horizon]; this is checked on a sample grid at construction, not
    proved. ``lipschitz`` and ``gap_modulus`` are optional nonnegative
    moduli k(t) and h(t) consumed by the bound engine.
    """

    dim: int
    delays: tuple
    rhs: Callable
    history: Callable
    history_start: float
    t0: float
    horizon: float
    lipschitz: Callable | None = None
    gap_modulus: Callable | None = None
    domain_box: object | None = None
    name: str = ""
    validation_samples: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "delays", tuple(self.delays))
        object.__setattr__(self, "history_start", float(self.history_start))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "horizon", float(self.horizon))
        if self.dim < 1:
            raise ContractError("state dimension must be >= 1")
        if not self.delays:
            raise ContractError("at least one delay is required")
        if not (self.history_start <= self.t0 < self.horizon):
            raise ContractError(
                "need history_start <= t0 < horizon, got "
                f"{self.history_start}, {self.t0}, {self.horizon}"
            )
        self._validate_delays()
        self._validate_history()

    @property
    def m(self):
        return len(self.delays)

    def history_vec(self, t) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.history(float(t)), dtype=float))

    def _validate_delays(self):
        ts = np.linspace(self.t0, self.horizon, max(2, self.validation_samples))
        slack = _tol(self.history_start, self.horizon)
        for j, g in enumerate(self.delays, start=1):
            for t in ts:
                t = float(t)
                gt = float(g(t))
                if gt > t + slack:
                    raise ContractError(f"delay g_{j}(t)={gt} exceeds t={t}")
                if gt < self.history_start - slack:
                    raise ContractError(
                        f"delay g_{j}(t)={gt} at t={t} falls before the history "
                        f"start {self.history_start}"
                    )

    def _validate_history(self):
        if self.t0 > self.history_start:
            ts = np.linspace(self.history_start, self.t0, 257)
        else:
            ts = [self.t0]
        for t in ts:
            v = np.atleast_1d(np.asarray(self.history(float(t)), dtype=float))
            if v.shape != (self.dim,):
                raise ContractError(
                    f"theta({float(t)}) has shape {v.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(v)):
                raise ContractError(f"theta({float(t)}) is not finite: {v}")


def perturbed(problem: DelayedProblem, drift: Callable) -> DelayedProblem:
    """Problem with right-hand side f(t, z) + drift(t), drift state-independent.

    This is the device used to manufacture approximate solutions with a
    known residual: integrating the drifted problem gives a path whose
    defect against the original system is exactly ||drift(t)||.
    """
    base = problem.rhs

    def rhs(t, z):
        return np.atleast_1d(np.asarray(base(t, z), dtype=float)) + np.atleast_1d(
            np.asarray(drift(t), dtype=float)
        )

    return replace(problem, rhs=rhs)


# ---------------------------------------------------------------------------
# trajectories

def _hermite(ta, tb, ya, yb, da, db, t):
    """Cubic Hermite value(s); scalar t with vector nodes, or array t with
    stacked (k, dim) node data."""
    h = tb - ta
    s = (t - ta) / h
    s2 = s * s
    s3 = s2 * s
    w0 = 2.0 * s3 - 3.0 * s2 + 1.0
    w1 = s3 - 2.0 * s2 + s
    w2 = -2.0 * s3 + 3.0 * s2
    w3 = s3 - s2
    if np.ndim(s) == 0:
        return w0 * ya + (w1 * h) * da + w2 * yb + (w3 * h) * db
    return (
        w0[:, None] * ya
        + (w1 * h)[:, None] * da
        + w2[:, None] * yb
        + (w3 * h)[:, None] * db
    )


def _hermite_deriv(ta, tb, ya, yb, da, db, t):
    h = tb - ta
    s = (t - ta) / h
    s2 = s * s
    w0 = (6.0 * s2 - 6.0 * s) / h
    w1 = 3.0 * s2 - 4.0 * s + 1.0
    w2 = (6.0 * s - 6.0 * s2) / h
    w3 = 3.0 * s2 - 2.0 * s
    if np.ndim(s) == 0:
        return w0 * ya + w1 * da + w2 * yb + w3 * db
    return (
        w0[:, None] * ya
        + w1[:, None] * da
        + w2[:, None] * yb
        + w3[:, None] * db
    )


class Trajectory:
    """Piecewise cubic Hermite path on [start, front].

    Node data are (mesh, values, derivs); each mesh interval carries the
    cubic matching its endpoint values and derivatives (see
    ``segment_coefficients``). For t <= t0 with an attached ``history_fn``
    evaluation delegates to it, so a prescribed initial function is
    reproduced exactly instead of re-interpolated. Node derivatives use the
    right-derivative convention at t0 (derivative jumps there are expected).
    Instances are immutable in use and safe to share across readers.
    """

    def __init__(self, mesh, values, derivs=None, t0=None, history_fn=None,
                 metadata=None):
        mesh = np.asarray(mesh, dtype=float)
        if mesh.ndim != 1 or mesh.size == 0:
            raise ContractError("mesh must be a nonempty 1-d sequence of times")
        if mesh.size > 1 and not np.all(np.diff(mesh) > 0.0):
            raise ContractError("mesh times must be strictly increasing")
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != mesh.size:
            raise ContractError("values and mesh lengths differ")
        if derivs is None:
            self.derivative_source = "finite_difference"
            if mesh.size > 1:
                ders = np.gradient(vals, mesh, axis=0)
            else:
                ders = np.zeros_like(vals)
        else:
            ders = np.asarray(derivs, dtype=float)
            if ders.ndim == 1:
                ders = ders[:, None]
            if ders.shape != vals.shape:
                raise ContractError("derivs shape must match values")
            self.derivative_source = "stored"
        self.mesh = mesh
        self.values = vals
        self.derivs = ders
        self.t0 = float(mesh[0] if t0 is None else t0)
        self.history_fn = history_fn
        self.metadata = dict(metadata or {})

    @property
    def start(self):
        return float(self.mesh[0])

    @property
    def front(self):
        return float(self.mesh[-1])

    @property
    def dim(self):
        return self.values.shape[1]

    def _check_range(self, tmin, tmax):
        slack = _tol(self.start, self.front)
        if tmin < self.start - slack or tmax > self.front + slack:
            bad = tmin if tmin < self.start - slack else tmax
            raise DomainError(
                f"time {bad} outside trajectory domain [{self.start}, {self.front}]"
            )

    def _history_value(self, t):
        return np.atleast_1d(np.asarray(self.history_fn(float(t)), dtype=float))

    def __call__(self, t) -> np.ndarray:
        t = float(t)
        self._check_range(t, t)
        if self.history_fn is not None and t <= self.t0:
            return self._history_value(t)
        if self.mesh.size == 1:
            return self.values[0].copy()
        t = min(max(t, self.start), self.front)
        i = int(np.searchsorted(self.mesh, t, side="right") - 1)
        i = min(max(i, 0), self.mesh.size - 2)
        return _hermite(
            self.mesh[i], self.mesh[i + 1],
            self.values[i], self.values[i + 1],
            self.derivs[i], self.derivs[i + 1], t,
        )

    def sample(self, ts) -> np.ndarray:
        """Vectorized evaluation at an array of times; shape (len(ts), dim)."""
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            return np.empty((0, self.dim))
        self._check_range(float(ts.min()), float(ts.max()))
        out = np.empty((ts.size, self.dim))
        hist = np.zeros(ts.size, dtype=bool)
        if self.history_fn is not None:
            hist = ts <= self.t0
            for idx in np.nonzero(hist)[0]:
                out[idx] = self._history_value(ts[idx])
        rest = ~hist
        if np.any(rest):
            if self.mesh.size == 1:
                out[rest] = self.values[0]
            else:
                tt = np.clip(ts[rest], self.start, self.front)
                i = np.clip(
                    np.searchsorted(self.mesh, tt, side="right") - 1,
                    0, self.mesh.size - 2,
                )
                out[rest] = _hermite(
                    self.mesh[i], self.mesh[i + 1],
                    self.values[i], self.values[i + 1],
                    self.derivs[i], self.derivs[i + 1], tt,
                )
        return out

    def sample_derivative(self, ts) -> np.ndarray:
        """Derivative of the interpolant at an array of times (t > t0 exact
        piecewise-cubic derivative; history region via finite differences)."""
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            return np.empty((0, self.dim))
        self._check_range(float(ts.min()), float(ts.max()))
        out = np.empty((ts.size, self.dim))
        hist = np.zeros(ts.size, dtype=bool)
        if self.history_fn is not None:
            hist = ts <= self.t0
            d = 1e-6 * max(1.0, abs(self.start), abs(self.front))
            for idx in np.nonzero(hist)[0]:
                a = max(float(ts[idx]) - d, self.start)
                b = min(float(ts[idx]) + d, self.t0)
                out[idx] = (self._history_value(b) - self._history_value(a)) / (b - a)
        rest = ~hist
        if np.any(rest):
            if self.mesh.size == 1:
                out[rest] = 0.0
            else:
                tt = np.clip(ts[rest], self.start, self.front)
                i = np.clip(
                    np.searchsorted(self.mesh, tt, side="right") - 1,
                    0, self.mesh.size - 2,
                )
                out[rest] = _hermite_deriv(
                    self.mesh[i], self.mesh[i + 1],
                    self.values[i], self.values[i + 1],
                    self.derivs[i], self.derivs[i + 1], tt,
                )
        return out

    def segment_coefficients(self, i: int):
        """Cubic coefficients (c0..c3, per component) of interval i in powers
        of (t - mesh[i])."""
        if not 0 <= i < self.mesh.size - 1:
            raise ContractError(f"no segment {i}: trajectory has {self.mesh.size - 1}")
        ta, tb = self.mesh[i], self.mesh[i + 1]
        h = tb - ta
        ya, yb = self.values[i], self.values[i + 1]
        da, db = self.derivs[i], self.derivs[i + 1]
        c0 = ya
        c1 = da
        c2 = (3.0 * (yb - ya) / h - 2.0 * da - db) / h
        c3 = (2.0 * (ya - yb) / h + da + db) / (h * h)
        return float(ta), float(tb), np.stack([c0, c1, c2, c3])


def constant_trajectory(value, start, end, t0=None, n_nodes=2) -> Trajectory:
    """Flat trajectory, mostly for tests and fixtures."""
    value = np.atleast_1d(np.asarray(value, dtype=float))
    mesh = np.linspace(start, end, max(2, n_nodes))
    vals = np.tile(value, (mesh.size, 1))
    return Trajectory(mesh, vals, np.zeros_like(vals), t0=t0)


# ---------------------------------------------------------------------------
# sup-history distance

def _check_compatible(a: Trajectory, b: Trajectory):
    if a.dim != b.dim:
        raise ContractError(f"trajectory dimensions differ: {a.dim} vs {b.dim}")
    if abs(a.start - b.start) > _tol(a.start, b.start):
        raise ContractError(
            f"trajectories start at different times: {a.start} vs {b.start}"
        )


def _refined_grid(a: Trajectory, b: Trajectory, t_end, refinement, extra=None):
    pts = [a.mesh, b.mesh, np.asarray([t_end])]
    if extra is not None:
        pts.append(np.asarray(extra, dtype=float))
    grid = np.unique(np.concatenate(pts))
    grid = grid[(grid >= a.start) & (grid <= t_end)]
    if grid.size == 0 or grid[0] > a.start:
        grid = np.concatenate([[a.start], grid])
    if refinement > 1 and grid.size > 1:
        offs = np.linspace(0.0, 1.0, refinement + 1)[:-1]
        seg = grid[:-1, None] + np.diff(grid)[:, None] * offs[None, :]
        grid = np.unique(np.concatenate([seg.ravel(), grid[-1:]]))
    return grid


def sup_distance(a: Trajectory, b: Trajectory, t, refinement: int = 8) -> float:
    """sup over start <= s <= t of the max-norm gap between two trajectories.

    The supremum is approximated on the union of both meshes plus
    `refinement` sub-samples per interval; it is nondecreasing in t and
    symmetric in (a, b).
    """
    _check_compatible(a, b)
    t = float(t)
    t_end = min(a.front, b.front)
    if t > t_end + _tol(t, t_end):
        raise DomainError(f"time {t} beyond the common front {t_end}")
    if t < a.start - _tol(t, a.start):
        raise DomainError(f"time {t} before the trajectories start {a.start}")
    grid = _refined_grid(a, b, min(t, t_end), refinement)
    return float(np.max(np.abs(a.sample(grid) - b.sample(grid))))


def deviation_curve(a: Trajectory, b: Trajectory, ts, refinement: int = 8) -> np.ndarray:
    """Running sup-history distance evaluated at each time in `ts` (sorted)."""
    _check_compatible(a, b)
    ts = np.asarray(ts, dtype=float)
    if ts.size == 0:
        return np.empty(0)
    if np.any(np.diff(ts) < 0):
        raise ContractError("deviation_curve times must be sorted ascending")
    grid = _refined_grid(a, b, float(ts[-1]), refinement, extra=ts)
    dev = np.max(np.abs(a.sample(grid) - b.sample(grid)), axis=1)
    running = np.maximum.accumulate(dev)
    idx = np.searchsorted(grid, ts, side="right") - 1
    return running[np.clip(idx, 0, grid.size - 1)]


# ---------------------------------------------------------------------------
# right-hand side through a history

class HistoryFunctional:
    """The right-hand side evaluated through a history:
    F(t, x) = f(t, x(g_1(t)), ..., x(g_m(t))).

    ``history`` may be a Trajectory or any callable t -> state vector that
    covers [history_start, t]. An optional ``drift`` adds a
    state-independent term b(t), giving the perturbed functional F + b.
    """

    def __init__(self, problem: DelayedProblem, drift: Callable | None = None):
        self.problem = problem
        self.drift = drift

    def __call__(self, t, history) -> np.ndarray:
        p = self.problem
        t = float(t)
        slack = _tol(p.history_start, p.horizon, t)
        z = np.empty((p.m, p.dim))
        for j, g in enumerate(p.delays):
            gt = float(g(t))
            if gt > t + slack or gt < p.history_start - slack:
                raise ContractError(
                    f"delay g_{j + 1}(t)={gt} outside [{p.history_start}, {t}]"
                )
            z[j] = history(min(gt, t))
        out = np.atleast_1d(np.asarray(p.rhs(t, z), dtype=float))
        if out.shape != (p.dim,):
            raise ContractError(f"rhs returned shape {out.shape}, expected ({p.dim},)")
        if self.drift is not None:
            out = out + np.atleast_1d(np.asarray(self.drift(t), dtype=float))
        return out
