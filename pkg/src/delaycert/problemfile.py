"""Problem-file ingestion: JSON schema, expression binding, shipped catalog.

A problem file declares the system in DSL expressions:

    {"name": "decay_delay", "n": 1, "m": 1,
     "gamma": -1.0, "t0": 0.0, "T": 2.0,
     "delays": ["t - 1"], "rhs": ["-z1_1"], "theta": ["1"],
     "lipschitz": 1.0, "domain_box": [[-2, 2]],
     "perturbation_b": ["0.001 * sin(10 * t)"]}

An ``order`` field > 1 switches to the scalar higher-order form (n must be
1): ``rhs`` holds one expression over stacked z-symbols (block j, component
i = derivative i-1 at delay j), ``theta`` the initial function and
``theta_derivs`` its derivatives up to order-1. Loading reduces it to the
equivalent first-order system.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ContractError, ParseError, ProblemFileError
from .expr import DomainBox, ExprSystem, compile_fn, parse, validate_refs
from .problem import DelayedProblem
from .reduction import HigherOrderProblem, reduce_to_first_order


@dataclass(frozen=True)
class LoadedProblem:
    """A bound problem file: the solvable problem plus its file-level extras."""

    problem: DelayedProblem
    name: str
    raw: dict
    order: int
    higher: HigherOrderProblem | None
    drift: Callable | None
    drift_sources: tuple
    lipschitz_desc: str


def _fail(path, msg):
    raise ProblemFileError(f"{path}: {msg}")


def _need(data, key, kind, path=None):
    path = path or key
    if key not in data:
        _fail(path, "missing required field")
    val = data[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            _fail(path, f"expected a number, got {val!r}")
        return float(val)
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            _fail(path, f"expected an integer, got {val!r}")
        return val
    if kind is list:
        if not isinstance(val, list):
            _fail(path, f"expected a list, got {val!r}")
        return val
    raise TypeError(kind)


def _expr_list(data, key, expected_len):
    items = _need(data, key, list)
    if len(items) != expected_len:
        _fail(key, f"expected {expected_len} expression(s), found {len(items)}")
    for i, s in enumerate(items):
        if not isinstance(s, str):
            _fail(f"{key}[{i}]", f"expected an expression string, got {s!r}")
    return items


def _parsed(source, path, m, n):
    try:
        node = parse(source)
    except ParseError as e:
        _fail(path, f"parse error at {e}")
    try:
        validate_refs(node, m, n)
    except ContractError as e:
        _fail(path, str(e))
    return node


def _time_fn(source, path):
    node = _parsed(source, path, 0, 0)
    fn = compile_fn(node)
    return lambda t, _fn=fn: _fn(t, ())


def _time_vector(sources, path_prefix):
    fns = [_time_fn(s, f"{path_prefix}[{i}]") for i, s in enumerate(sources)]

    def vec(t):
        return np.array([fn(t) for fn in fns])

    return vec


def load_problem(source, default_name=None) -> LoadedProblem:
    """Load and bind a problem file (path, JSON text dict already parsed)."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        default_name = default_name or path.stem
        try:
            data = json.loads(path.read_text())
        except OSError as e:
            raise ProblemFileError(f"{path}: cannot read: {e}") from None
        except json.JSONDecodeError as e:
            raise ProblemFileError(f"{path}: invalid JSON: {e}") from None
    else:
        data = source
    if not isinstance(data, dict):
        _fail("<root>", "problem file must be a JSON object")

    name = data.get("name") or default_name or "problem"
    n = _need(data, "n", int)
    m = _need(data, "m", int)
    if n < 1:
        _fail("n", "state dimension must be >= 1")
    if m < 1:
        _fail("m", "delay count must be >= 1")
    gamma = _need(data, "gamma", float)
    t0 = _need(data, "t0", float)
    horizon = _need(data, "T", float)
    order = data.get("order", 1)
    if not isinstance(order, int) or isinstance(order, bool) or order < 1:
        _fail("order", f"expected an integer >= 1, got {order!r}")
    if order > 1 and n != 1:
        _fail("order", "higher-order files describe a scalar equation: declare n = 1")

    state_dim = order if order > 1 else n

    delay_sources = _expr_list(data, "delays", m)
    delay_fns = tuple(
        _time_fn(s, f"delays[{j}]") for j, s in enumerate(delay_sources)
    )

    rhs_sources = _expr_list(data, "rhs", n)
    for i, s in enumerate(rhs_sources):
        _parsed(s, f"rhs[{i}]", m, state_dim)
    rhs_sys = ExprSystem(rhs_sources, m, state_dim)

    theta_sources = _expr_list(data, "theta", n)

    lipschitz = None
    lipschitz_desc = "none"
    if "lipschitz" in data:
        val = data["lipschitz"]
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            const = float(val)
            lipschitz = lambda t: const
            lipschitz_desc = f"constant {const}"
        elif isinstance(val, str):
            lipschitz = _time_fn(val, "lipschitz")
            lipschitz_desc = f"expression {val!r}"
        else:
            _fail("lipschitz", f"expected a number or expression string, got {val!r}")
        for t in np.linspace(t0, horizon, 33):
            if lipschitz(float(t)) < 0.0:
                _fail("lipschitz", f"negative at t={float(t)}")

    domain_box = None
    if "domain_box" in data:
        pairs = _need(data, "domain_box", list)
        if len(pairs) != state_dim:
            _fail("domain_box", f"expected {state_dim} [lo, hi] pairs, found {len(pairs)}")
        try:
            domain_box = DomainBox.from_pairs(pairs)
        except (ContractError, TypeError, IndexError) as e:
            _fail("domain_box", str(e))

    drift = None
    drift_sources = ()
    if "perturbation_b" in data:
        drift_sources = tuple(_expr_list(data, "perturbation_b", n))
        scalar_drift = _time_vector(drift_sources, "perturbation_b")
        if order > 1:
            # the drift enters the top-derivative row of the reduced system
            def drift(t, _inner=scalar_drift, _n=state_dim):
                out = np.zeros(_n)
                out[-1] = _inner(t)[0]
                return out
        else:
            drift = scalar_drift

    try:
        if order > 1:
            deriv_sources = _expr_list(data, "theta_derivs", order - 1)
            histories = tuple(
                [_time_fn(theta_sources[0], "theta[0]")]
                + [_time_fn(s, f"theta_derivs[{j}]") for j, s in enumerate(deriv_sources)]
            )
            higher = HigherOrderProblem(
                order=order,
                delays=delay_fns,
                rhs=lambda t, z, _sys=rhs_sys: float(_sys(t, z)[0]),
                histories=histories,
                history_start=gamma,
                t0=t0,
                horizon=horizon,
                lipschitz=lipschitz,
                domain_box=domain_box,
                name=name,
            )
            problem = reduce_to_first_order(higher)
        else:
            higher = None
            theta = _time_vector(theta_sources, "theta")
            problem = DelayedProblem(
                dim=n,
                delays=delay_fns,
                rhs=rhs_sys,
                history=theta,
                history_start=gamma,
                t0=t0,
                horizon=horizon,
                lipschitz=lipschitz,
                domain_box=domain_box,
                name=name,
            )
    except ProblemFileError:
        raise
    except ContractError as e:
        raise ProblemFileError(f"problem: {e}") from None

    return LoadedProblem(
        problem=problem,
        name=name,
        raw=dict(data),
        order=order,
        higher=higher,
        drift=drift,
        drift_sources=drift_sources,
        lipschitz_desc=lipschitz_desc,
    )


def reduced_file_dict(loaded: LoadedProblem) -> dict:
    """First-order problem-file dict equivalent to a higher-order file.

    The chain rows read the current state through an appended identity
    delay block; the original rhs expression is reused verbatim (its block
    indices are unchanged by appending)."""
    if loaded.order == 1:
        return dict(loaded.raw)
    raw = loaded.raw
    order = loaded.order
    m = len(raw["delays"])
    delays = list(raw["delays"]) + ["t"]
    rhs = [f"z{m + 1}_{i + 2}" for i in range(order - 1)] + [raw["rhs"][0]]
    theta = list(raw["theta"]) + list(raw["theta_derivs"])
    out = {
        "name": f"{loaded.name}_reduced",
        "n": order,
        "m": m + 1,
        "gamma": raw["gamma"],
        "t0": raw["t0"],
        "T": raw["T"],
        "delays": delays,
        "rhs": rhs,
        "theta": theta,
    }
    if "lipschitz" in raw:
        val = raw["lipschitz"]
        if isinstance(val, str):
            out["lipschitz"] = f"max(1, {val})"
        else:
            out["lipschitz"] = max(1.0, float(val))
    if "domain_box" in raw:
        out["domain_box"] = raw["domain_box"]
    if "perturbation_b" in raw:
        out["perturbation_b"] = ["0"] * (order - 1) + list(raw["perturbation_b"])
    return out


# ---------------------------------------------------------------------------
# shipped catalog

def catalog_names():
    root = resources.files("delaycert").joinpath("catalog")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_catalog(name: str) -> LoadedProblem:
    root = resources.files("delaycert").joinpath("catalog")
    entry = root.joinpath(f"{name}.json")
    if not entry.is_file():
        raise ProblemFileError(
            f"no catalog problem {name!r}; available: {', '.join(catalog_names())}"
        )
    return load_problem(json.loads(entry.read_text()), default_name=name)


def resolve_problem(arg: str) -> LoadedProblem:
    """A path to a problem file, or a shipped catalog name."""
    path = Path(arg)
    if path.is_file():
        return load_problem(path)
    stem = path.stem
    root = resources.files("delaycert").joinpath("catalog")
    if root.joinpath(f"{stem}.json").is_file():
        return load_catalog(stem)
    raise ProblemFileError(f"{arg}: not a file and not a catalog name")
