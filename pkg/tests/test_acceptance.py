"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (visible with pytest -v -s or in failure
output).  The reference design problem is 1D with omega = 0.5, a constant
unit datum on D = [-0.25, 0.25], half-width L = 2 and nx = 513 trace nodes;
its exponent is alpha = 0.6, where the measured first-order energy/volume
trade matches the squared blow-up coefficient (see the decisions ledger for
the alpha dependence of that constant).
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from fracdesign import diagnostics as diag
from fracdesign import fracops as fo
from fracdesign import penalty as pen
from fracdesign import scheduler as sch
from fracdesign.extension import (fractional_laplacian_via_flux,
                                  poisson_kernel, poisson_kernel_constant,
                                  solve_periodic_trace)
from fracdesign.mesh import TraceField, build_extension_grid

ALPHAS = (0.25, 0.5, 0.75)
MODES = (1, 2, 4)


def report(num, name, ok, detail=""):
    print(f"ACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------------------
# 1. operator triad agreement
# ---------------------------------------------------------------------------

def triad_errors(alpha, nx, ny):
    grid = build_extension_grid(1, np.pi, 12.0, nx, ny, alpha, grading=2.0,
                                periodic=True)
    worst = 0.0
    for k in MODES:
        u = TraceField(grid, np.cos(k * grid.x_nodes))
        spectral = fo.frac_lap_spectral(u, alpha).values
        pv = fo.frac_lap_quadrature_periodic(u, alpha).values
        sol = solve_periodic_trace(grid, u)
        flux = fractional_laplacian_via_flux(sol).values
        scale = np.linalg.norm(spectral)
        worst = max(worst,
                    np.linalg.norm(pv - spectral) / scale,
                    np.linalg.norm(flux - spectral) / scale,
                    np.linalg.norm(pv - flux) / scale)
    return worst


@pytest.mark.parametrize("alpha", ALPHAS)
def test_criterion_1_operator_triad(alpha):
    coarse = triad_errors(alpha, 1024, 81)
    fine = triad_errors(alpha, 2048, 161)
    ok = coarse <= 0.05 and fine < coarse
    report(1, "operator triad", ok,
           f"alpha={alpha}: worst rel L2 {coarse:.5f} -> {fine:.5f} "
           f"under 2x refinement (tol 0.05, decreasing)")
    assert coarse <= 0.05
    assert fine < coarse


# ---------------------------------------------------------------------------
# 2. Poisson kernel normalization
# ---------------------------------------------------------------------------

def kernel_mass_error(n, alpha):
    q = poisson_kernel_constant(n, alpha)
    if n == 1:
        xs = np.linspace(-80.0, 80.0, 64001)
        total = np.trapezoid(poisson_kernel(xs, 1.0, 1, alpha), xs)
        tail = 2.0 * q / (2.0 * alpha) * 80.0 ** (-2.0 * alpha)
    else:
        rs = np.linspace(0.0, 160.0, 64001)
        pts = np.stack([rs, np.zeros_like(rs)], axis=-1)
        total = np.trapezoid(2 * np.pi * rs * poisson_kernel(pts, 1.0, 2, alpha),
                             rs)
        tail = 2.0 * np.pi * q / (2.0 * alpha) * 160.0 ** (-2.0 * alpha)
    return abs(total + tail - 1.0)


def test_criterion_2_poisson_kernel():
    worst = 0.0
    for n in (1, 2):
        for alpha in ALPHAS:
            worst = max(worst, kernel_mass_error(n, alpha))
    xs = np.linspace(-5.0, 5.0, 201)
    for y in (0.3, 1.0, 2.0):
        classical = (1.0 / np.pi) * y / (xs ** 2 + y * y)
        dev = np.max(np.abs(poisson_kernel(xs, y, 1, 0.5) - classical))
        worst_pt = dev
    ok = worst <= 1e-3 and worst_pt <= 1e-3
    report(2, "Poisson kernel", ok,
           f"max |int P - 1| = {worst:.2e} (tol 1e-3); "
           f"alpha=1/2 vs classical: {worst_pt:.2e} (tol 1e-3)")
    assert worst <= 1e-3
    assert worst_pt <= 1e-3


# ---------------------------------------------------------------------------
# 3. alpha-harmonic profile
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", ALPHAS)
def test_criterion_3_alpha_harmonic_profile(alpha):
    grid = build_extension_grid(1, 2.0, 1.0, 4097, 9, alpha, grading=1.0)
    x = grid.x_nodes
    harm = TraceField(grid, np.maximum(x, 0.0) ** alpha)
    ctrl = TraceField(grid, np.maximum(x, 0.0) ** (alpha / 2))
    far_h = fo.FarFieldModel("power_growth", exponent=alpha, c_plus=1.0)
    far_c = fo.FarFieldModel("power_growth", exponent=alpha / 2, c_plus=1.0)
    worst = 0.0
    for xp in (0.25, 0.5, 0.75):
        vh = fo.frac_lap_quadrature(harm, xp, alpha, far_h)
        vc = fo.frac_lap_quadrature(ctrl, xp, alpha, far_c)
        worst = max(worst, abs(vh) / abs(vc))
    ok = worst <= 0.02
    report(3, "alpha-harmonic profile", ok,
           f"alpha={alpha}: max |PV(profile)| / |PV(control)| = {worst:.5f} "
           "(tol 0.02)")
    assert worst <= 0.02


# ---------------------------------------------------------------------------
# 4. minimizer oracle equivalence (1D)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", ALPHAS)
def test_criterion_4_oracle_equivalence(alpha):
    grid = build_extension_grid(1, 1.0, 1.0, 81, 17, alpha, grading=2.0)
    xs = grid.x_nodes
    D = np.abs(xs) <= 0.25 + 1e-12
    phi = TraceField(grid, np.where(D, 1.0, 0.0))
    for eps in (0.6, 0.2, 0.05):
        p = pen.PenaltyParams(eps=eps, omega=0.6)
        oracle = pen.minimize_bruteforce_1d(p, D, phi, grid)
        it = pen.minimize_iterative(p, D, phi, grid)
        e_o = pen.energy_I_eps(oracle, p)
        e_i = pen.energy_I_eps(it, p)
        rel = abs(e_i - e_o) / max(abs(e_o), 1e-300)
        fb_o = np.nonzero(oracle.active_set & ~D)[0]
        fb_i = np.nonzero(it.active_set & ~D)[0]
        if fb_o.size and fb_i.size:
            fb_gap = max(abs(fb_o[0] - fb_i[0]), abs(fb_o[-1] - fb_i[-1]))
        else:
            fb_gap = 0 if fb_o.size == fb_i.size else 99
        ok = rel <= 1e-6 and fb_gap <= 1
        report(4, "oracle equivalence", ok,
               f"alpha={alpha} eps={eps}: rel energy gap {rel:.2e} "
               f"(tol 1e-6), FB offset {fb_gap} cells (tol 1)")
        assert rel <= 1e-6
        assert fb_gap <= 1


# ---------------------------------------------------------------------------
# 5-8. the reference problem: sweep, diagnostics, q/lambda, Hadamard
# ---------------------------------------------------------------------------

REF_ALPHA = 0.6


@pytest.fixture(scope="module")
def reference_sweep():
    grid = build_extension_grid(1, 2.0, 1.5, 513, 49, REF_ALPHA, grading=2.0)
    xs = grid.x_nodes
    D = np.abs(xs) <= 0.25 + 1e-12
    phi = TraceField(grid, np.where(D, 1.0, 0.0))
    problem = sch.ConstrainedProblem(grid=grid, fixed_region_D=D, phi=phi,
                                     omega=0.5)
    sched = sch.EpsSchedule(eps0=1.0, ratio=0.5, max_steps=4)
    cfg, record = sch.solve_constrained(problem, sched,
                                        continue_after_attainment=True)
    return problem, cfg, record


def test_criterion_5_volume_recovery(reference_sweep):
    problem, cfg, record = reference_sweep
    cell = problem.grid.x_spacing
    vol = pen.positivity_volume(cfg)
    fit = sch.fit_volume_envelope(record)
    ok = (record.attained and abs(vol - problem.omega) <= cell
          and fit["max_residual"] <= cell)
    report(5, "volume recovery", ok,
           f"terminal volume {vol:.6f} vs omega=0.5 (tol one cell "
           f"{cell:.5f}); envelope C={fit['C']:.3f}, max residual "
           f"{fit['max_residual']:.2e} (tol one cell)")
    assert record.attained
    assert abs(vol - problem.omega) <= cell
    assert fit["max_residual"] <= cell


def test_criterion_6_regularity_scaling(reference_sweep):
    problem, cfg, record = reference_sweep
    fb = diag.extract_free_boundary(cfg)
    assert len(fb) == 2
    worst_dev = 0.0
    min_dens = np.inf
    worst_octave = 0.0
    for i in range(len(fb)):
        x0 = fb.points[i]
        slope, _ = diag.fit_growth_exponent(cfg, x0,
                                            diag.default_growth_radii(cfg, x0))
        worst_dev = max(worst_dev, abs(slope - REF_ALPHA))
        radii = diag.default_ball_radii(cfg, x0)
        dz, dp = diag.density_check(cfg, x0, radii)
        min_dens = min(min_dens, dz, dp)
        seq = diag.morrey_growth_check(cfg, x0, radii)["sequence"]
        worst_octave = max(worst_octave, float(np.max(seq[1:] / seq[:-1])))
    ratio = diag.nondegeneracy_check(cfg)
    ok = (worst_dev <= 0.07 and ratio >= 0.1 and min_dens >= 0.2
          and worst_octave <= 2.0)
    report(6, "regularity scaling", ok,
           f"growth exponent dev {worst_dev:.4f} (tol 0.07); "
           f"non-degeneracy ratio {ratio:.3f} (floor 0.1); "
           f"min phase density {min_dens:.3f} (floor 0.2); "
           f"Morrey octave ratio {worst_octave:.3f} (cap 2)")
    assert worst_dev <= 0.07
    assert ratio >= 0.1
    assert min_dens >= 0.2
    assert worst_octave <= 2.0


def test_criterion_7_fb_condition_constancy(reference_sweep):
    problem, cfg, record = reference_sweep
    qinfo = diag.q_constancy_check(cfg)
    lam_rep = sch.lambda_sweep(record)
    eps_list = [round(e.eps, 10) for e in record.entries]
    ok = (qinfo["spread"] <= 0.1 and lam_rep["status"] == "ok"
          and lam_rep["spread_ratio"] <= 3.0
          and eps_list == [1.0, 0.5, 0.25, 0.125])
    report(7, "FB condition constancy", ok,
           f"q spread {qinfo['spread']:.2e} over {len(qinfo['q_values'])} "
           f"endpoints (tol 0.1); lambda spread ratio "
           f"{lam_rep['spread_ratio']:.3f} over eps={eps_list} (tol 3)")
    assert qinfo["spread"] <= 0.1
    assert eps_list == [1.0, 0.5, 0.25, 0.125]
    assert lam_rep["ok"] is True


def test_criterion_8_hadamard_formula(reference_sweep):
    problem, cfg, record = reference_sweep
    p = pen.PenaltyParams(eps=record.attained_eps, omega=problem.omega)
    volumes = problem.omega * np.array([1e-3, 2e-3, 4e-3, 8e-3, 1e-2])
    assert np.all(volumes <= 0.01 * problem.omega + 1e-15)
    rep = diag.hadamard_check(cfg, p, volumes)
    ok = rep.rel_deviation <= 0.15 and rep.pair_vs_linear <= 0.2
    report(8, "Hadamard formula", ok,
           f"slope {rep.slope:.4f} vs lambda^2 {rep.lambda_est ** 2:.4f}: "
           f"rel dev {rep.rel_deviation:.4f} (tol 0.15); pair residual / "
           f"linear term {rep.pair_vs_linear:.4f} (tol 0.2 = 1/5x)")
    assert rep.rel_deviation <= 0.15
    assert rep.pair_vs_linear <= 0.2


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    config = {
        "problem": {"n": 1, "L": 2.0, "Y": 1.5, "nx": 129, "ny": 17,
                    "alpha": REF_ALPHA, "grading": 2.0, "omega": 0.5,
                    "D": {"kind": "interval", "bounds": [-0.25, 0.25]},
                    "phi": {"kind": "constant", "value": 1.0}},
        "schedule": {"eps0": 1.0, "ratio": 0.5, "max_steps": 4},
        "seed": 123,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    outputs = []
    for tag, threads in (("r1", None), ("r2", None), ("t1", 1), ("t4", 4)):
        args = [sys.executable, "-m", "fracdesign.cli"]
        if threads is not None:
            args += ["--threads", str(threads)]
        args += ["solve", "-c", str(path), "--full-sweep",
                 "--set", f"output.dir={tmp_path / tag}"]
        res = subprocess.run(args, capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        outputs.append(((tmp_path / tag / "sweep.csv").read_bytes(),
                        (tmp_path / tag / "report.json").read_bytes()))
    same = all(o == outputs[0] for o in outputs[1:])
    report(9, "determinism", same,
           "sweep.csv and report.json byte-identical across 2 runs and "
           "thread counts {1, 4}")
    assert same
