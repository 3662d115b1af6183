"""Lowering of nth-order scalar delay equations to first-order systems.

x^(n)(t) = f(t, delayed values of x and its derivatives) becomes the chain
system y_1' = y_2, ..., y_{n-1}' = y_n, y_n' = f, with the initial function
stacked from theta and its supplied derivatives. The chain rows read the
current state through an appended identity delay block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError
from .problem import DelayedProblem, Trajectory


@dataclass(frozen=True)
class HigherOrderProblem:
    """Scalar nth-order delay equation with a derivative-stacked history.

    ``rhs(t, z)`` receives z shaped (m, order) — row j holds
    (x, x', ..., x^(order-1)) evaluated at g_j(t) — and returns the scalar
    x^(order). ``histories`` supplies (theta, theta', ..., theta^(order-1));
    derivatives must be given explicitly (they are consistency-checked by
    finite differences, never synthesized, since certified bounds would
    silently degrade on numerically differentiated input).
    """

    order: int
    delays: tuple
    rhs: Callable
    histories: tuple
    history_start: float
    t0: float
    horizon: float
    lipschitz: Callable | None = None
    domain_box: object | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "delays", tuple(self.delays))
        object.__setattr__(self, "histories", tuple(self.histories))
        if self.order < 1:
            raise ContractError("order must be >= 1")
        if len(self.histories) != self.order:
            raise ContractError(
                f"need theta and its first {self.order - 1} derivative(s): "
                f"expected {self.order} history entries, got {len(self.histories)}"
            )
        self._check_history_stack()

    def _check_history_stack(self, rel=1e-4):
        if self.t0 <= self.history_start or self.order < 2:
            return
        span = self.t0 - self.history_start
        d = min(1e-5 * max(1.0, span), span / 64.0)
        pts = np.linspace(self.history_start + d, self.t0 - d, 9)
        for j in range(self.order - 1):
            f, fp = self.histories[j], self.histories[j + 1]
            for x in pts:
                x = float(x)
                fd = (float(f(x + d)) - float(f(x - d))) / (2.0 * d)
                expected = float(fp(x))
                if abs(fd - expected) > rel * max(1.0, abs(expected)):
                    raise ContractError(
                        f"history derivative {j + 1} inconsistent near t={x}: "
                        f"finite difference of entry {j} gives {fd}, supplied {expected}"
                    )


def reduce_to_first_order(hp: HigherOrderProblem) -> DelayedProblem:
    """Build the equivalent first-order system.

    Order 1 lowers to the problem itself. Otherwise the system gains one
    identity delay block (index m+1) feeding the chain rows y_i' = y_{i+1};
    the last row forwards the original delay blocks to ``hp.rhs`` unchanged,
    so only the components it references are wired through.
    """
    n = hp.order
    theta0 = hp.histories[0]
    if n == 1:
        base = hp.rhs
        return DelayedProblem(
            dim=1,
            delays=hp.delays,
            rhs=lambda t, z: np.atleast_1d(float(base(t, z))),
            history=lambda t: np.atleast_1d(float(theta0(t))),
            history_start=hp.history_start,
            t0=hp.t0,
            horizon=hp.horizon,
            lipschitz=hp.lipschitz,
            domain_box=hp.domain_box,
            name=hp.name,
        )

    m = len(hp.delays)
    delays = tuple(hp.delays) + (lambda t: t,)
    base = hp.rhs
    stack = hp.histories

    def rhs(t, z):
        out = np.empty(n)
        out[:-1] = np.asarray(z[m][1:], dtype=float)
        out[-1] = float(base(t, z[:m]))
        return out

    def history(t):
        return np.array([float(fn(t)) for fn in stack])

    lip = None
    if hp.lipschitz is not None:
        base_k = hp.lipschitz
        # chain rows have modulus 1 in the block-max norm
        lip = lambda t: max(1.0, float(base_k(t)))

    return DelayedProblem(
        dim=n,
        delays=delays,
        rhs=rhs,
        history=history,
        history_start=hp.history_start,
        t0=hp.t0,
        horizon=hp.horizon,
        lipschitz=lip,
        domain_box=hp.domain_box,
        name=hp.name,
    )


def extract_first(traj: Trajectory, order: int) -> Trajectory:
    """Component-1 scalar trajectory of a reduced solve; its derivative data
    is the chain's second component evaluation."""
    if traj.dim != int(order):
        raise ContractError(
            f"trajectory dimension {traj.dim} does not match order {order}"
        )
    hist = None
    if traj.history_fn is not None:
        base_hist = traj.history_fn
        hist = lambda t: np.atleast_1d(np.asarray(base_hist(t), dtype=float))[:1]
    out = Trajectory(
        traj.mesh,
        traj.values[:, :1],
        traj.derivs[:, :1],
        t0=traj.t0,
        history_fn=hist,
        metadata={**traj.metadata, "extracted_component": 1},
    )
    out.derivative_source = traj.derivative_source
    return out
