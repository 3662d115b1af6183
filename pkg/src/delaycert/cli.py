"""Command-line harness: problem ingestion, subcommand dispatch, report files.

Subcommands: solve | certify | depend | sweep | gronwall | reduce | residual.
Curves go to CSV (17 significant digits, so a re-read is bit-exact),
certificates and residual reports to JSON. Exit codes are stable across
subcommands: 0 holds/success, 2 inconclusive, 3 violated, 1 usage or
runtime error. DELAYCERT_OUT_DIR sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .bounds import certify_dependence, certify_stability, residual
from .errors import ContractError, EvalError, ParseError, ProblemFileError
from .expr import time_function
from .gronwall import BoundInputs, extremal_solution, gronwall_bound, gronwall_bound_ac
from .integrate import GridConfig, PicardConfig, picard_solve, solve
from .problem import Trajectory, perturbed, sup_distance
from .problemfile import reduced_file_dict, resolve_problem

EXIT_HOLDS = 0
EXIT_USAGE_OR_RUNTIME = 1
EXIT_INCONCLUSIVE = 2
EXIT_VIOLATED = 3

_VERDICT_EXIT = {
    "holds": EXIT_HOLDS,
    "inconclusive": EXIT_INCONCLUSIVE,
    "violated": EXIT_VIOLATED,
}


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default, which collides with the
    # "inconclusive" exit; usage problems must be exit 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE_OR_RUNTIME)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("DELAYCERT_OUT_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_solution_csv(path: Path, traj: Trajectory):
    dim = traj.dim
    header = ["t"] + [f"x{i + 1}" for i in range(dim)] + [f"dx{i + 1}" for i in range(dim)]
    lines = [",".join(header)]
    for i, t in enumerate(traj.mesh):
        row = [t, *traj.values[i], *traj.derivs[i]]
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_solution_csv(path, t0, history_fn=None) -> Trajectory:
    """Re-ingest a solution CSV as a trajectory (stored derivatives)."""
    path = Path(path)
    try:
        lines = path.read_text().strip().splitlines()
    except OSError as e:
        raise ContractError(f"{path}: cannot read: {e}") from None
    if not lines:
        raise ContractError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[0] != "t" or (len(header) - 1) % 2 != 0:
        raise ContractError(f"{path}: expected header t,x1..xn,dx1..dxn")
    dim = (len(header) - 1) // 2
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if rows.shape[1] != 1 + 2 * dim:
        raise ContractError(f"{path}: ragged rows")
    return Trajectory(rows[:, 0], rows[:, 1:1 + dim], rows[:, 1 + dim:],
                      t0=t0, history_fn=history_fn)


def _write_json(path: Path, obj):
    _atomic_write(path, json.dumps(obj, indent=2) + "\n")


def _grid(args) -> GridConfig:
    return GridConfig(h_step=args.step)


def _load(args):
    return resolve_problem(args.problem)


def _manufactured_approx(loaded, cfg):
    if loaded.drift is None:
        raise ContractError(
            f"{loaded.name}: no approximate solution: give --approx CSV or add "
            "perturbation_b to the problem file"
        )
    return solve(perturbed(loaded.problem, loaded.drift), cfg)


def _approx_trajectory(loaded, args, cfg):
    if getattr(args, "approx", None):
        return read_solution_csv(args.approx, loaded.problem.t0)
    return _manufactured_approx(loaded, cfg)


def _print_certificate(name, cert, path):
    print(f"problem: {name}")
    print(f"kind: {cert.kind}")
    if cert.ts.size:
        print(f"mesh nodes: {cert.ts.size}")
        print(f"max bound: {_fmt(float(np.max(cert.bound)))}")
        print(f"max measured: {_fmt(float(np.max(cert.measured)))}")
        print(f"min margin: {_fmt(cert.min_margin)} (slack {_fmt(cert.slack)})")
    if "eps_est" in cert.inputs:
        print(f"measured eps_est: {_fmt(cert.inputs['eps_est'])}")
    if "note" in cert.inputs:
        print(f"note: {cert.inputs['note']}")
    print(f"wrote {path}")
    print(f"verdict: {cert.verdict_label()}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_solve(args) -> int:
    loaded = _load(args)
    cfg = _grid(args)
    started = time.perf_counter()
    traj = solve(loaded.problem, cfg)
    out = _out_dir(args) / f"{loaded.name}_solution.csv"
    write_solution_csv(out, traj)
    meta = traj.metadata
    print(f"problem: {loaded.name}")
    print(f"mesh nodes: {meta['mesh_nodes']}")
    print(f"breaking points: {len(meta['breaking_points'])}")
    print(f"max overlap iterations: {meta['overlap_iterations_max']}")
    if meta.get("exited_domain_box"):
        print(f"warning: trajectory left the domain box at "
              f"t={_fmt(meta['exited_domain_box_at'])}")
    if args.picard_check:
        pcfg = PicardConfig(iterations=args.picard_iterations,
                            quad_intervals=max(2, meta["mesh_nodes"] * 2))
        alt = picard_solve(loaded.problem, pcfg)
        gap = sup_distance(traj, alt, min(traj.front, alt.front))
        print(f"picard cross-check sup gap: {_fmt(gap)}")
        if alt.metadata.get("picard_diverging"):
            print("warning: picard iteration flagged as diverging")
    print(f"wrote {out}")
    print(f"elapsed: {time.perf_counter() - started:.3f}s")
    return EXIT_HOLDS


def cmd_certify(args) -> int:
    loaded = _load(args)
    cfg = _grid(args)
    approx = _approx_trajectory(loaded, args, cfg)
    rep = residual(approx, loaded.problem)
    eps = args.eps if args.eps is not None else rep.eps_est
    if args.eps is None:
        print(f"using measured residual as eps: {_fmt(eps)}")
    cert = certify_stability(loaded.problem, approx, eps, cfg)
    out = _out_dir(args) / f"{loaded.name}_certificate.json"
    _write_json(out, cert.to_json_dict())
    _print_certificate(loaded.name, cert, out)
    return _VERDICT_EXIT[cert.verdict]


def cmd_depend(args) -> int:
    loaded = _load(args)
    cfg = _grid(args)
    p = loaded.problem
    delta = args.delta
    theta_alt = lambda t: p.history_vec(t) + delta
    cert = certify_dependence(p, theta_alt, cfg)
    out = _out_dir(args) / f"{loaded.name}_certificate.json"
    _write_json(out, cert.to_json_dict())
    _print_certificate(loaded.name, cert, out)
    return _VERDICT_EXIT[cert.verdict]


def _parse_value_list(text, flag):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ContractError(f"{flag}: expected comma-separated numbers, got {text!r}")
    return values


def cmd_sweep(args) -> int:
    loaded = _load(args)
    cfg = _grid(args)
    if (args.delta is None) == (args.eps is None):
        print("usage error: sweep needs exactly one of --delta or --eps",
              file=sys.stderr)
        return EXIT_USAGE_OR_RUNTIME
    flag = "--delta" if args.delta is not None else "--eps"
    values = _parse_value_list(args.delta or args.eps, flag)
    if len(values) < 2:
        print(f"usage error: {flag} needs at least 2 values to sweep",
              file=sys.stderr)
        return EXIT_USAGE_OR_RUNTIME

    p = loaded.problem
    rows = []
    verdicts = []
    base_drift = loaded.drift
    drift_scale = None
    if args.eps is not None:
        if base_drift is None:
            print(f"usage error: {loaded.name} has no perturbation_b to scale",
                  file=sys.stderr)
            return EXIT_USAGE_OR_RUNTIME
        probe = np.linspace(p.t0, p.horizon, 257)
        drift_scale = max(float(np.max(np.abs(base_drift(float(t))))) for t in probe)
        if drift_scale == 0.0:
            drift_scale = 1.0
    out = _out_dir(args) / f"{loaded.name}_sweep.csv"
    try:
        for value in values:
            if args.delta is not None:
                theta_alt = (lambda v: lambda t: p.history_vec(t) + v)(value)
                cert = certify_dependence(p, theta_alt, cfg)
            else:
                scale = value / drift_scale
                drift = (lambda s: lambda t: s * np.atleast_1d(base_drift(t)))(scale)
                approx = solve(perturbed(p, drift), cfg)
                cert = certify_stability(p, approx, value, cfg)
            measured_sup = float(np.max(cert.measured)) if cert.measured.size else float("nan")
            bound_sup = float(np.max(cert.bound)) if cert.bound.size else float("nan")
            rows.append((value, measured_sup, bound_sup, cert.min_margin))
            verdicts.append(cert.verdict)
            print(f"value {_fmt(value)}: verdict {cert.verdict_label()}")
    except (ContractError, EvalError) as e:
        _write_sweep_csv(out, rows)
        print(f"sweep aborted after {len(rows)} of {len(values)} runs: {e}",
              file=sys.stderr)
        print(f"partial results flagged in {out}", file=sys.stderr)
        return EXIT_USAGE_OR_RUNTIME
    _write_sweep_csv(out, rows)
    print(f"wrote {out}")
    if "violated" in verdicts:
        return EXIT_VIOLATED
    if "inconclusive" in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_HOLDS


def _write_sweep_csv(path, rows):
    lines = ["value,measured_sup,bound_sup,margin"]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def cmd_gronwall(args) -> int:
    g = time_function(args.g)
    h = time_function(args.h)
    rate = time_function(args.gprime) if args.gprime else None
    if args.form == "ac" and rate is None:
        print("usage error: --form ac needs --gprime (the derivative of g)",
              file=sys.stderr)
        return EXIT_USAGE_OR_RUNTIME
    b = BoundInputs(inhomogeneity=g, kernel=h, t0=args.t0,
                    inhomogeneity_rate=rate)
    if args.T <= args.t0:
        print("usage error: need T > t0", file=sys.stderr)
        return EXIT_USAGE_OR_RUNTIME
    fine = np.linspace(args.t0, args.T, 4001)
    extremal = extremal_solution(b, fine)
    ts = np.linspace(args.t0, args.T, args.points)
    bound_at = gronwall_bound_ac if args.form == "ac" else gronwall_bound
    bounds = [bound_at(b, float(t)) for t in ts]
    v_at = np.interp(ts, fine, extremal)
    out = _out_dir(args) / "gronwall_curve.csv"
    lines = ["t,bound,extremal_v"]
    for t, bd, ev in zip(ts, bounds, v_at):
        lines.append(",".join(_fmt(v) for v in (t, bd, ev)))
    _atomic_write(out, "\n".join(lines) + "\n")
    gap = max(abs(bd - ev) for bd, ev in zip(bounds, v_at))
    print(f"form: {args.form}")
    print(f"bound at T: {_fmt(bounds[-1])}")
    print(f"extremal at T: {_fmt(v_at[-1])}")
    print(f"max |bound - extremal|: {_fmt(gap)}")
    print(f"wrote {out}")
    return EXIT_HOLDS


def cmd_reduce(args) -> int:
    loaded = _load(args)
    reduced = reduced_file_dict(loaded)
    out = _out_dir(args) / f"{loaded.name}_reduced.json"
    _write_json(out, reduced)
    print(f"problem: {loaded.name} (order {loaded.order})")
    print(f"reduced system dimension: {reduced['n']}, delay blocks: {reduced['m']}")
    print(f"wrote {out}")
    return EXIT_HOLDS


def cmd_residual(args) -> int:
    loaded = _load(args)
    cfg = _grid(args)
    approx = _approx_trajectory(loaded, args, cfg)
    rep = residual(approx, loaded.problem)
    out = _out_dir(args) / f"{loaded.name}_residual.json"
    _write_json(out, {
        "problem": loaded.name,
        "eps_est": rep.eps_est,
        "derivative_source": rep.derivative_source,
        "t": [float(v) for v in rep.ts],
        "residual": [float(v) for v in rep.residuals],
    })
    print(f"problem: {loaded.name}")
    print(f"derivative source: {rep.derivative_source}")
    print(f"eps_est: {_fmt(rep.eps_est)}")
    print(f"wrote {out}")
    return EXIT_HOLDS


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="delaycert",
        description=(
            "Solve first-order delay differential systems by the method of "
            "steps and certify deviation bounds against measured trajectories."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, step=True):
        p.add_argument("--out-dir", default=None,
                       help="output directory (default: $DELAYCERT_OUT_DIR or .)")
        if step:
            p.add_argument("--step", type=float, default=1e-3,
                           help="integrator base step size (default 1e-3)")

    p = sub.add_parser("solve", help="integrate a problem file, write the solution CSV")
    p.add_argument("problem", help="problem file path or catalog name")
    common(p)
    p.add_argument("--picard-check", action="store_true",
                   help="also run the Picard oracle and report the sup gap")
    p.add_argument("--picard-iterations", type=int, default=25)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("certify",
                       help="stability certificate for an approximate solution")
    p.add_argument("problem")
    common(p)
    p.add_argument("--eps", type=float, default=None,
                   help="claimed residual bound (default: the measured residual)")
    p.add_argument("--approx", default=None,
                   help="approximate-solution CSV (default: integrate perturbation_b)")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("depend",
                       help="continuous-dependence certificate for a shifted theta")
    p.add_argument("problem")
    common(p)
    p.add_argument("--delta", type=float, required=True,
                   help="componentwise shift applied to the initial function")
    p.set_defaults(func=cmd_depend)

    p = sub.add_parser("sweep", help="sweep deltas or eps values, write a CSV table")
    p.add_argument("problem")
    common(p)
    p.add_argument("--delta", default=None, help="comma-separated shifts")
    p.add_argument("--eps", default=None, help="comma-separated residual levels")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gronwall", help="bound curve vs extremal solution")
    p.add_argument("g", help="inhomogeneity expression in t")
    p.add_argument("h", help="nonnegative kernel expression in t")
    p.add_argument("--t0", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--form", choices=("plain", "ac"), default="plain")
    p.add_argument("--gprime", default=None, help="derivative of g (for --form ac)")
    p.add_argument("--points", type=int, default=201)
    common(p, step=False)
    p.set_defaults(func=cmd_gronwall)

    p = sub.add_parser("reduce",
                       help="lower a higher-order problem file to first order")
    p.add_argument("problem")
    common(p, step=False)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("residual", help="defect report for an approximate solution")
    p.add_argument("problem")
    common(p)
    p.add_argument("--approx", default=None,
                   help="approximate-solution CSV (default: integrate perturbation_b)")
    p.set_defaults(func=cmd_residual)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ProblemFileError, ParseError, EvalError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE_OR_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
