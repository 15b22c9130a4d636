"""Command-line surface: config-driven experiments and serialization.

Subcommands: solve (full pipeline), sweep-eps (scheduler only), diagnose
(re-analyze a saved minimizer), validate-operators (three-way operator
agreement plus kernel normalization), oracle-1d (exhaustive minimizer).
Configs are single JSON documents; any field can be overridden on the
command line with --set block.key=value (flag > config > default).

Exit codes: 0 success, 2 config error, 3 solver non-convergence, 4 artifact
schema error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts, diagnostics, fracops, penalty, scheduler
from .extension import (fractional_laplacian_via_flux, poisson_kernel,
                        poisson_kernel_constant, solve_periodic_trace)
from .mesh import (Array, ExtensionGrid, GridError, TraceField,
                   build_extension_grid)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ARTIFACT = 4


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the faulty field."""


DEFAULT_CONFIG = {
    "problem": {
        "n": 1, "L": 2.0, "Y": 1.5, "nx": 513, "ny": 49,
        "alpha": 0.6, "grading": 2.0, "omega": 0.5,
        "D": {"kind": "interval", "bounds": [-0.25, 0.25]},
        "phi": {"kind": "constant", "value": 1.0},
    },
    "schedule": {"eps0": 1.0, "ratio": 0.5, "max_steps": 8, "vol_tol": None},
    "solver": {"tol": 1e-10, "max_outer": 80, "theta_pos": None,
               "polish_radius": 2},
    "diagnostics": {
        "hadamard_volumes_rel": [1e-3, 2e-3, 4e-3, 8e-3, 1e-2],
        "thresholds": {},
    },
    "output": {"dir": "out", "write_fields": True, "write_csv": True},
    "seed": 0,
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _require(cond: bool, field: str, message: str):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def _num(cfg: dict, block: str, key: str, lo=None, hi=None,
         strict_lo=False, optional=False):
    val = cfg[block].get(key)
    if val is None and optional:
        return None
    field = f"{block}.{key}"
    _require(isinstance(val, (int, float)) and not isinstance(val, bool),
             field, f"must be a number, got {val!r}")
    if lo is not None:
        if strict_lo:
            _require(val > lo, field, f"must be > {lo}, got {val}")
        else:
            _require(val >= lo, field, f"must be >= {lo}, got {val}")
    if hi is not None:
        _require(val < hi, field, f"must be < {hi}, got {val}")
    return val


def validate_config(cfg: dict) -> dict:
    """Validate an experiment config; error messages name the field."""
    cfg = _merge(DEFAULT_CONFIG, cfg)
    for block in ("problem", "schedule", "solver", "diagnostics", "output"):
        _require(isinstance(cfg.get(block), dict), block, "block missing")
    p = cfg["problem"]
    _require(p.get("n") in (1, 2), "problem.n", f"must be 1 or 2, got {p.get('n')}")
    _num(cfg, "problem", "L", lo=0.0, strict_lo=True)
    _num(cfg, "problem", "Y", lo=0.0, strict_lo=True)
    _num(cfg, "problem", "alpha", lo=0.0, hi=1.0, strict_lo=True)
    _num(cfg, "problem", "grading", lo=1.0)
    _num(cfg, "problem", "omega", lo=0.0, strict_lo=True)
    for key in ("nx", "ny"):
        v = p.get(key)
        _require(isinstance(v, int) and v >= 8, f"problem.{key}",
                 f"must be an integer >= 8, got {v!r}")
    D = p.get("D", {})
    _require(isinstance(D, dict) and "kind" in D, "problem.D",
             "must be an object with a 'kind'")
    if p["n"] == 1:
        _require(D["kind"] in ("interval", "symmetric_pair"), "problem.D.kind",
                 f"1D supports interval | symmetric_pair, got {D['kind']!r}")
    else:
        _require(D["kind"] in ("disc", "box"), "problem.D.kind",
                 f"2D supports disc | box, got {D['kind']!r}")
    phi = p.get("phi", {})
    _require(isinstance(phi, dict)
             and phi.get("kind") in ("constant", "bump", "cosine"),
             "problem.phi.kind", "must be constant | bump | cosine")
    _num(cfg, "schedule", "eps0", lo=0.0, strict_lo=True)
    _num(cfg, "schedule", "ratio", lo=0.0, hi=1.0, strict_lo=True)
    ms = cfg["schedule"].get("max_steps")
    _require(isinstance(ms, int) and ms >= 1, "schedule.max_steps",
             f"must be a positive integer, got {ms!r}")
    _num(cfg, "schedule", "vol_tol", lo=0.0, strict_lo=True, optional=True)
    _num(cfg, "solver", "tol", lo=0.0, strict_lo=True)
    _num(cfg, "solver", "theta_pos", lo=0.0, strict_lo=True, optional=True)
    mo = cfg["solver"].get("max_outer")
    _require(isinstance(mo, int) and mo >= 1, "solver.max_outer",
             f"must be a positive integer, got {mo!r}")
    seed = cfg.get("seed")
    _require(isinstance(seed, int), "seed", f"must be an integer, got {seed!r}")
    return cfg


def build_grid(cfg: dict) -> ExtensionGrid:
    p = cfg["problem"]
    try:
        return build_extension_grid(p["n"], p["L"], p["Y"], p["nx"], p["ny"],
                                    p["alpha"], grading=p["grading"])
    except GridError as exc:
        raise ConfigError(f"problem: {exc}") from exc


def build_d_mask(cfg: dict, grid: ExtensionGrid) -> Array:
    D = cfg["problem"]["D"]
    xs = grid.x_nodes
    kind = D["kind"]
    if kind == "interval":
        a, b = D["bounds"]
        _require(a < b, "problem.D.bounds", "must be increasing")
        mask = (xs >= a - 1e-12) & (xs <= b + 1e-12)
    elif kind == "symmetric_pair":
        inner, outer = D["inner"], D["outer"]
        _require(0 <= inner < outer, "problem.D", "needs 0 <= inner < outer")
        mask = (np.abs(xs) >= inner - 1e-12) & (np.abs(xs) <= outer + 1e-12)
    elif kind == "disc":
        cx, cy = D.get("center", [0.0, 0.0])
        r = D["radius"]
        _require(r > 0, "problem.D.radius", "must be positive")
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        mask = (X1 - cx) ** 2 + (X2 - cy) ** 2 <= r ** 2 + 1e-12
    else:  # box
        hw = D["half_width"]
        _require(hw > 0, "problem.D.half_width", "must be positive")
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        mask = (np.abs(X1) <= hw + 1e-12) & (np.abs(X2) <= hw + 1e-12)
    if not mask.any():
        raise ConfigError("problem.D: region contains no trace node")
    return mask


def build_phi(cfg: dict, grid: ExtensionGrid, d_mask: Array) -> TraceField:
    spec = cfg["problem"]["phi"]
    xs = grid.x_nodes
    if grid.trace_dim == 1:
        coords = xs
        r = np.abs(xs - spec.get("center", 0.0))
    else:
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        coords = X1
        c = spec.get("center", [0.0, 0.0])
        r = np.hypot(X1 - c[0], X2 - c[1])
    kind = spec["kind"]
    if kind == "constant":
        vals = np.full(grid.trace_shape, float(spec["value"]))
    elif kind == "bump":
        w = float(spec["width"])
        _require(w > 0, "problem.phi.width", "must be positive")
        t = np.minimum(r / w, 1.0)
        with np.errstate(divide="ignore"):
            vals = float(spec.get("height", 1.0)) * np.where(
                t < 1.0, np.exp(1.0 - 1.0 / np.maximum(1.0 - t * t, 1e-300)), 0.0)
    else:  # cosine
        vals = float(spec.get("amplitude", 1.0)) * np.cos(
            float(spec["k"]) * coords)
    vals = np.where(d_mask, vals, 0.0)
    if np.any(vals < 0.0):
        raise ConfigError("problem.phi: datum must be nonnegative on D")
    return TraceField(grid, vals)


def build_problem(cfg: dict):
    grid = build_grid(cfg)
    d_mask = build_d_mask(cfg, grid)
    phi = build_phi(cfg, grid, d_mask)
    try:
        problem = scheduler.ConstrainedProblem(
            grid=grid, fixed_region_D=d_mask, phi=phi,
            omega=cfg["problem"]["omega"])
    except ValueError as exc:
        raise ConfigError(f"problem.omega: {exc}") from exc
    return problem


def build_schedule(cfg: dict) -> scheduler.EpsSchedule:
    s = cfg["schedule"]
    try:
        return scheduler.EpsSchedule(eps0=s["eps0"], ratio=s["ratio"],
                                     max_steps=s["max_steps"],
                                     vol_tol=s["vol_tol"])
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc


def build_minimize_options(cfg: dict) -> penalty.MinimizeOptions:
    s = cfg["solver"]
    return penalty.MinimizeOptions(max_outer=s["max_outer"],
                                   solver_tol=s["tol"],
                                   theta_pos=s["theta_pos"],
                                   polish_radius=s["polish_radius"])


def build_thresholds(cfg: dict) -> diagnostics.DiagnosticsThresholds:
    th = diagnostics.DiagnosticsThresholds()
    for key, val in cfg["diagnostics"].get("thresholds", {}).items():
        if not hasattr(th, key):
            raise ConfigError(f"diagnostics.thresholds.{key}: unknown threshold")
        setattr(th, key, float(val))
    return th


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _load_config(args) -> dict:
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config: file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON: {exc}") from exc
    else:
        raw = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, _, val = item.partition("=")
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = parsed
    return validate_config(raw)


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    problem = build_problem(cfg)
    sched = build_schedule(cfg)
    opts = build_minimize_options(cfg)
    out = _out_dir(cfg)
    status = EXIT_OK
    try:
        best, record = scheduler.solve_constrained(
            problem, sched, opts, continue_after_attainment=args.full_sweep)
    except scheduler.SweepFailure as exc:
        artifacts.write_sweep_csv(out / "sweep.csv", exc.record)
        artifacts.write_report_json(out / "report.json", {
            "status": "solver-failure", "error": str(exc), "seed": cfg["seed"]})
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    p_terminal = penalty.PenaltyParams(
        eps=record.attained_eps if record.attained else record.entries[-1].eps,
        omega=problem.omega)
    vols_rel = cfg["diagnostics"]["hadamard_volumes_rel"]
    hadamard_volumes = problem.omega * np.asarray(vols_rel, dtype=float)
    report = {"status": "ok" if record.attained else "volume-not-attained",
              "seed": cfg["seed"],
              "attained": record.attained,
              "attained_eps": record.attained_eps,
              "terminal_volume": penalty.positivity_volume(best),
              "omega": problem.omega,
              "lambda_sweep": scheduler.lambda_sweep(record),
              "volume_envelope": {
                  k: v for k, v in scheduler.fit_volume_envelope(record).items()
                  if k != "residuals"}}
    if problem.grid.trace_dim == 1:
        try:
            diag = diagnostics.run_diagnostics(
                best, p_terminal, thresholds=build_thresholds(cfg),
                hadamard_volumes=hadamard_volumes)
            report["diagnostics"] = diag.to_dict()
        except ValueError as exc:
            report["diagnostics"] = {"error": str(exc)}
    artifacts.write_sweep_csv(out / "sweep.csv", record)
    artifacts.write_report_json(out / "report.json", report)
    if cfg["output"]["write_fields"]:
        artifacts.save_configuration(out / "minimizer.field", best, meta={
            "eps": p_terminal.eps, "omega": problem.omega, "seed": cfg["seed"]})
    if cfg["output"]["write_csv"]:
        artifacts.write_trace_csv(out / "trace.csv", best.trace_values)
    if not record.attained:
        print("volume constraint not attained within the schedule",
              file=sys.stderr)
        status = EXIT_SOLVER
    return status


def cmd_sweep_eps(args) -> int:
    cfg = _load_config(args)
    problem = build_problem(cfg)
    sched = build_schedule(cfg)
    opts = build_minimize_options(cfg)
    out = _out_dir(cfg)
    try:
        _, record = scheduler.solve_constrained(problem, sched, opts,
                                                continue_after_attainment=True)
    except scheduler.SweepFailure as exc:
        artifacts.write_sweep_csv(out / "sweep.csv", exc.record)
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    artifacts.write_sweep_csv(out / "sweep.csv", record)
    artifacts.write_report_json(out / "record.json", {
        "attained": record.attained, "attained_eps": record.attained_eps,
        "lambda_sweep": scheduler.lambda_sweep(record),
        "volume_envelope": {
            k: v for k, v in scheduler.fit_volume_envelope(record).items()
            if k != "residuals"},
        "seed": cfg["seed"]})
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _load_config(args)
    try:
        best, header = artifacts.load_configuration(args.artifact)
    except (OSError, artifacts.ArtifactFormatError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    p = None
    if header.get("eps") is not None and header.get("omega") is not None:
        p = penalty.PenaltyParams(eps=header["eps"], omega=header["omega"])
    out = _out_dir(cfg)
    try:
        rep = diagnostics.run_diagnostics(best, p,
                                          thresholds=build_thresholds(cfg))
    except ValueError as exc:
        artifacts.write_report_json(out / "report.json",
                                    {"status": "diagnostics-error",
                                     "error": str(exc)})
        print(f"diagnostics error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    payload = rep.to_dict()
    payload["status"] = "ok"
    payload["seed"] = header.get("seed", cfg["seed"])
    artifacts.write_report_json(out / "report.json", payload)
    print(json.dumps({"all_pass": rep.all_pass()}))
    return EXIT_OK


def cmd_oracle_1d(args) -> int:
    cfg = _load_config(args)
    problem = build_problem(cfg)
    if problem.grid.trace_dim != 1:
        raise ConfigError("problem.n: oracle-1d needs a 1D problem")
    p = penalty.PenaltyParams(eps=args.eps, omega=problem.omega)
    opts = build_minimize_options(cfg)
    best = penalty.minimize_bruteforce_1d(p, problem.fixed_region_D,
                                          problem.phi, problem.grid,
                                          tol=opts.solver_tol,
                                          theta_pos=opts.theta_pos)
    out = _out_dir(cfg)
    result = {"eps": args.eps, "omega": problem.omega,
              "energy": penalty.energy_I_eps(best, p),
              "volume": penalty.positivity_volume(best),
              "candidates": best.info.get("candidates"),
              "seed": cfg["seed"]}
    artifacts.write_report_json(out / "oracle.json", result)
    if cfg["output"]["write_fields"]:
        artifacts.save_configuration(out / "oracle.field", best, meta={
            "eps": args.eps, "omega": problem.omega, "seed": cfg["seed"]})
    print(json.dumps(result))
    return EXIT_OK


def _triad_check(alpha: float, nx: int, ny: int, modes, L=np.pi, Y=12.0,
                 rng=None):
    """Pairwise agreement of quadrature, spectral, and flux realizations."""
    grid = build_extension_grid(1, L, Y, nx, ny, alpha, grading=2.0,
                                periodic=True)
    out = []
    for k in modes:
        u = TraceField(grid, np.cos(k * grid.x_nodes))
        spectral = fracops.frac_lap_spectral(u, alpha).values
        pv = fracops.frac_lap_quadrature_periodic(u, alpha).values
        sol = solve_periodic_trace(grid, u)
        flux = fractional_laplacian_via_flux(sol).values
        scale = np.linalg.norm(spectral)
        out.append({
            "k": k,
            "pv_vs_spectral": float(np.linalg.norm(pv - spectral) / scale),
            "flux_vs_spectral": float(np.linalg.norm(flux - spectral) / scale),
            "pv_vs_flux": float(np.linalg.norm(pv - flux) / scale),
        })
    return out


def cmd_validate_operators(args) -> int:
    nx, ny = args.nx, args.ny
    degraded = nx < 256
    tol = args.tol if not degraded else 10.0 * args.tol
    checks = []
    ok_all = True
    for alpha in (0.25, 0.5, 0.75):
        rows = _triad_check(alpha, nx, ny, modes=(1, 2, 4))
        worst = max(max(r[k] for k in
                        ("pv_vs_spectral", "flux_vs_spectral", "pv_vs_flux"))
                    for r in rows)
        ok = worst <= tol
        ok_all &= ok
        checks.append({"check": "operator-triad", "alpha": alpha,
                       "worst_rel_l2": worst, "tol": tol, "pass": ok,
                       "detail": rows})
        print(f"operator-triad alpha={alpha}: worst rel L2 {worst:.4f} "
              f"(tol {tol:.3f}) {'PASS' if ok else 'FAIL'}")
    for n in (1, 2):
        for alpha in (0.25, 0.5, 0.75):
            q = poisson_kernel_constant(n, alpha)
            xs = np.linspace(-30.0, 30.0, 20001)
            if n == 1:
                total = np.trapezoid(poisson_kernel(xs, 1.0, 1, alpha), xs)
                tail = 2.0 * q / (2.0 * alpha) * 30.0 ** (-2.0 * alpha)
            else:
                rs = np.linspace(0.0, 60.0, 20001)
                pts = np.stack([rs, np.zeros_like(rs)], axis=-1)
                total = np.trapezoid(2 * np.pi * rs
                                     * poisson_kernel(pts, 1.0, 2, alpha), rs)
                tail = 2.0 * np.pi * q / (2.0 * alpha) * 60.0 ** (-2.0 * alpha)
            err = abs(total + tail - 1.0)
            ok = err <= 1e-3
            ok_all &= ok
            checks.append({"check": "kernel-normalization", "n": n,
                           "alpha": alpha, "error": err, "pass": ok})
            print(f"kernel-normalization n={n} alpha={alpha}: "
                  f"|int P - 1| = {err:.2e} {'PASS' if ok else 'FAIL'}")
    if args.out:
        artifacts.write_report_json(Path(args.out), {
            "degraded_mode": degraded, "checks": checks,
            "all_pass": bool(ok_all)})
    if degraded:
        print("coarse grid: degraded-tolerance mode (reported, not failed)")
        return EXIT_OK
    return EXIT_OK if ok_all else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracdesign",
        description="Volume-constrained optimal design with fractional "
                    "diffusion: penalized solves, eps sweeps, diagnostics.")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap for worker threads (results are "
                             "thread-count independent)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("-c", "--config", default=None,
                        help="JSON experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. "
                             "--set problem.alpha=0.5")

    sp = sub.add_parser("solve", help="run the eps sweep + diagnostics")
    add_common(sp)
    sp.add_argument("--full-sweep", action="store_true",
                    help="record every eps even after attainment")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sweep-eps", help="eps sweep only, full schedule")
    add_common(sp)
    sp.set_defaults(func=cmd_sweep_eps)

    sp = sub.add_parser("diagnose", help="diagnostics on a saved minimizer")
    add_common(sp)
    sp.add_argument("artifact", help="minimizer.field container")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("validate-operators",
                        help="operator triad and kernel normalization")
    sp.add_argument("--nx", type=int, default=1024)
    sp.add_argument("--ny", type=int, default=81)
    sp.add_argument("--tol", type=float, default=0.05)
    sp.add_argument("--out", default=None, help="write a JSON report here")
    sp.set_defaults(func=cmd_validate_operators)

    sp = sub.add_parser("oracle-1d", help="exhaustive 1D minimizer")
    add_common(sp)
    sp.add_argument("--eps", type=float, required=True)
    sp.set_defaults(func=cmd_oracle_1d)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.threads and args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except artifacts.ArtifactFormatError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (penalty.MinimizeNonConvergence, scheduler.SweepFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
