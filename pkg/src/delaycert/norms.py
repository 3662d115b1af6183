"""Norms fixed across the package.

State vectors carry the max-norm; tuples of delayed-state blocks carry the
max over blocks, so a Lipschitz condition ||f(t,z) - f(t,z')|| <= k(t) ||z - z'||
lines up with sup-history estimates.
"""

import numpy as np


def max_norm(v) -> float:
    """Max-norm of a state vector (scalars allowed)."""
    return float(np.max(np.abs(np.asarray(v, dtype=float))))


def block_max_norm(blocks) -> float:
    """Max over delay blocks of the per-block max-norm."""
    return float(np.max(np.abs(np.asarray(blocks, dtype=float))))
