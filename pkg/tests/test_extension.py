import numpy as np
import pytest

from fracdesign import extension as ext
from fracdesign import fracops as fo
from fracdesign.extension import (BoundaryValueSolver, DirichletSpec,
                                  SolverConvergenceError,
                                  assemble_weighted_operator,
                                  extend_by_kernel,
                                  fractional_laplacian_via_flux, get_operator,
                                  poisson_kernel, poisson_kernel_constant,
                                  solve_dirichlet, weighted_dirichlet_energy)
from fracdesign.mesh import ScalarField, TraceField, build_extension_grid


def grid_1d(nx=33, ny=17, alpha=0.5, L=1.0, Y=1.0, grading=2.0, periodic=False):
    return build_extension_grid(1, L, Y, nx, ny, alpha, grading=grading,
                                periodic=periodic)


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------

def test_operator_annihilates_constants():
    for alpha in (0.25, 0.5, 0.75):
        g = grid_1d(alpha=alpha)
        op = get_operator(g)
        out = op.apply(np.full(g.field_shape, 4.2))
        assert np.max(np.abs(out)) < 1e-12


def test_operator_symmetry_random_vectors():
    g = grid_1d(nx=9, ny=9, alpha=0.3)
    op = assemble_weighted_operator(g)
    rng = np.random.default_rng(0)
    u = rng.normal(size=g.node_count)
    w = rng.normal(size=g.node_count)
    A = op.matrix
    assert abs(u @ (A @ w) - w @ (A @ u)) < 1e-11


def test_beta_zero_matches_unweighted_laplacian_energy():
    # with beta = 0 on a uniform mesh, v = x has unit energy density
    g = build_extension_grid(1, 0.5, 1.0, 21, 21, 0.5, grading=1.0)
    v = ScalarField(g, np.broadcast_to(g.x_nodes[:, None], g.field_shape).copy())
    assert weighted_dirichlet_energy(v) == pytest.approx(1.0, rel=1e-12)


def test_operator_positive_conductances():
    for alpha in (0.25, 0.75):
        g = grid_1d(alpha=alpha)
        op = get_operator(g)
        assert np.all(op.cond > 0.0)
        assert np.all(np.isfinite(op.cond))


# ---------------------------------------------------------------------------
# Dirichlet solves
# ---------------------------------------------------------------------------

def test_constant_data_gives_constant_solution():
    g = grid_1d()
    op = get_operator(g)
    fixed = np.zeros(g.field_shape, bool)
    fixed[..., 0] = True
    fixed[..., -1] = True
    fixed[0, :] = fixed[-1, :] = True
    vals = np.full(g.field_shape, 2.5)
    out = BoundaryValueSolver(op, fixed.reshape(-1)).solve(vals)
    assert np.allclose(out, 2.5, atol=1e-9)


def test_harmonic_polynomial_exact():
    """v(x, y) = x solves the beta = 0 problem; the scheme reproduces it."""
    g = build_extension_grid(1, 1.0, 1.0, 17, 17, 0.5, grading=1.0)
    op = get_operator(g)
    exact = np.broadcast_to(g.x_nodes[:, None], g.field_shape).copy()
    fixed = np.zeros(g.field_shape, bool)
    fixed[..., 0] = fixed[..., -1] = True
    fixed[0, :] = fixed[-1, :] = True
    out = BoundaryValueSolver(op, fixed.reshape(-1)).solve(exact)
    assert np.max(np.abs(out.reshape(g.field_shape) - exact)) < 1e-9


def test_maximum_principle():
    g = grid_1d(nx=33, ny=17, alpha=0.3)
    op = get_operator(g)
    rng = np.random.default_rng(5)
    trace = rng.uniform(-1.0, 2.0, size=g.nx)
    spec = DirichletSpec(trace_values=TraceField(g, trace),
                         fixed_mask=np.ones(g.nx, bool),
                         lateral_bc="zero", top_bc="zero")
    v = solve_dirichlet(op, spec)
    lo = min(trace.min(), 0.0)
    hi = max(trace.max(), 0.0)
    assert v.values.min() >= lo - 1e-10
    assert v.values.max() <= hi + 1e-10


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_mode_decay_matches_ode_oracle(alpha):
    """Periodic cosine data decay in y like the weighted two-point ODE."""
    k = 2
    errs = []
    for nx, ny in ((128, 17), (256, 33)):
        g = build_extension_grid(1, np.pi, 3.0, nx, ny, alpha, grading=2.0,
                                 periodic=True)
        op = get_operator(g)
        spec = DirichletSpec(trace_values=TraceField(g, np.cos(k * g.x_nodes)),
                             fixed_mask=np.ones(g.nx, bool),
                             lateral_bc="periodic", top_bc="zero")
        v = solve_dirichlet(op, spec)
        _, prof = ext._mode_ode_profile(k, alpha, 3.0, 4001, 2.0)
        yref = ext.graded_nodes(3.0, 4001, 2.0)
        phi = np.interp(g.y_nodes, yref, prof)
        i = g.nx // 5
        exact = np.cos(k * g.x_nodes[i]) * phi
        errs.append(np.max(np.abs(v.values[i, :] - exact)))
    assert errs[0] < 0.02
    assert errs[1] < 0.6 * errs[0]


def test_solver_reports_unreachable_tolerance():
    g = grid_1d(nx=17, ny=9)
    op = get_operator(g)
    spec = DirichletSpec(trace_values=TraceField(g, np.cos(g.x_nodes)),
                         fixed_mask=np.ones(g.nx, bool))
    with pytest.raises(SolverConvergenceError) as err:
        solve_dirichlet(op, spec, tol=1e-30)
    assert err.value.residual > 0.0


def test_dirichlet_spec_validation():
    g = grid_1d()
    with pytest.raises(ValueError):
        DirichletSpec(trace_values=TraceField(g, np.zeros(g.nx)),
                      fixed_mask=np.zeros(g.nx, bool))
    with pytest.raises(ValueError):
        DirichletSpec(trace_values=TraceField(g, np.zeros(g.nx)),
                      fixed_mask=np.ones(g.nx, bool), lateral_bc="periodic")


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def test_energy_zero_iff_constant():
    g = grid_1d()
    c = ScalarField(g, np.full(g.field_shape, 1.3))
    assert weighted_dirichlet_energy(c) == 0.0
    rng = np.random.default_rng(1)
    v = ScalarField(g, rng.normal(size=g.field_shape))
    assert weighted_dirichlet_energy(v) > 0.0


def test_dirichlet_principle():
    """The solve minimizes energy among fields with the same boundary data."""
    g = grid_1d(nx=33, ny=17)
    op = get_operator(g)
    spec = DirichletSpec(trace_values=TraceField(g, np.cos(np.pi * g.x_nodes)),
                         fixed_mask=np.ones(g.nx, bool))
    v = solve_dirichlet(op, spec)
    e0 = weighted_dirichlet_energy(v, op=op)
    rng = np.random.default_rng(2)
    for _ in range(10):
        bump = np.zeros(g.field_shape)
        i = rng.integers(2, g.nx - 2)
        j = rng.integers(1, g.ny - 1)
        bump[i, j] = rng.normal() * 0.1
        assert weighted_dirichlet_energy(
            ScalarField(g, v.values + bump), op=op) > e0


def test_energy_region_restriction():
    g = grid_1d()
    rng = np.random.default_rng(4)
    v = ScalarField(g, rng.normal(size=g.field_shape))
    full = weighted_dirichlet_energy(v)
    region = np.zeros(g.field_shape, bool)
    region[: g.nx // 2] = True
    part = weighted_dirichlet_energy(v, region=region)
    assert 0.0 < part < full


# ---------------------------------------------------------------------------
# Poisson kernel
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_kernel_normalization(n, alpha):
    q = poisson_kernel_constant(n, alpha)
    assert q > 0.0
    # quadrature of the kernel over a large window plus the analytic tail
    if n == 1:
        xs = np.linspace(-50.0, 50.0, 40001)
        total = np.trapezoid(poisson_kernel(xs, 1.0, 1, alpha), xs)
        tail = 2.0 * q / (2.0 * alpha) * 50.0 ** (-2.0 * alpha)
    else:
        rs = np.linspace(0.0, 100.0, 40001)
        pts = np.stack([rs, np.zeros_like(rs)], axis=-1)
        total = np.trapezoid(2 * np.pi * rs * poisson_kernel(pts, 1.0, 2, alpha),
                             rs)
        tail = 2.0 * np.pi * q / (2.0 * alpha) * 100.0 ** (-2.0 * alpha)
    assert total + tail == pytest.approx(1.0, abs=1e-3)


def test_kernel_classical_case():
    xs = np.linspace(-3.0, 3.0, 61)
    vals = poisson_kernel(xs, 0.7, 1, 0.5)
    classical = (1.0 / np.pi) * 0.7 / (xs ** 2 + 0.49)
    assert np.max(np.abs(vals - classical)) < 1e-3


def test_kernel_scaling_identity():
    xs = np.linspace(-2.0, 2.0, 41)
    y = 0.37
    for alpha in (0.25, 0.6):
        lhs = poisson_kernel(xs, y, 1, alpha)
        rhs = poisson_kernel(xs / y, 1.0, 1, alpha) / y
        assert np.allclose(lhs, rhs, rtol=1e-12)


def test_kernel_rejects_nonpositive_height():
    with pytest.raises(ValueError):
        poisson_kernel(np.zeros(3), 0.0, 1, 0.5)


def test_extend_by_kernel_unit_mass():
    g = build_extension_grid(1, 40.0, 1.0, 801, 9, 0.5, grading=1.0)
    u = TraceField(g, np.ones(g.nx))
    y = 0.5
    v = extend_by_kernel(u, y)
    mid = g.nx // 2
    # the only loss is the kernel tail beyond the trace grid
    q = poisson_kernel_constant(1, 0.5)
    tail = 2.0 * q * y / g.half_width
    assert v.values[mid] == pytest.approx(1.0, abs=tail + 1e-4)
    assert v.values[mid] < 1.0


def test_extend_by_kernel_delta_bump():
    g = build_extension_grid(1, 8.0, 1.0, 1601, 9, 0.5, grading=1.0)
    u = np.zeros(g.nx)
    i0 = g.nx // 2
    u[i0] = 1.0
    mass = g.trace_cell_measures[i0]
    v = extend_by_kernel(TraceField(g, u), 0.25)
    expect = mass * poisson_kernel(g.x_nodes, 0.25, 1, 0.5)
    sel = np.abs(g.x_nodes) > 0.05
    assert np.allclose(v.values[sel], expect[sel], rtol=0.02, atol=1e-6)


def test_extend_by_kernel_matches_dirichlet_solve():
    """Two independent discretizations of the same extension problem."""
    g = build_extension_grid(1, 6.0, 6.0, 257, 129, 0.5, grading=2.0)
    t = np.minimum(np.abs(g.x_nodes), 1.0)
    u = TraceField(g, np.where(t < 1.0,
                               np.exp(1.0 - 1.0 / np.maximum(1 - t * t, 1e-300)),
                               0.0))
    op = get_operator(g)
    spec = DirichletSpec(trace_values=u, fixed_mask=np.ones(g.nx, bool))
    v = solve_dirichlet(op, spec)
    j = np.searchsorted(g.y_nodes, 0.5)
    y = g.y_nodes[j]
    conv = extend_by_kernel(u, y)
    sol = v.values[:, j]
    err = np.linalg.norm(conv.values - sol) / np.linalg.norm(sol)
    assert err <= 0.05


# ---------------------------------------------------------------------------
# boundary flux
# ---------------------------------------------------------------------------

def test_fast_periodic_solver_equals_sparse_solve():
    """The FFT/Thomas fast path solves the identical discrete system."""
    from fracdesign.extension import solve_periodic_trace
    g = build_extension_grid(1, np.pi, 5.0, 64, 17, 0.3, grading=2.0,
                             periodic=True)
    rng = np.random.default_rng(0)
    u = TraceField(g, rng.normal(size=g.nx))
    fast = solve_periodic_trace(g, u)
    op = get_operator(g)
    fixed = np.zeros(g.field_shape, bool)
    fixed[..., 0] = fixed[..., -1] = True
    vals = np.zeros(g.field_shape)
    vals[:, 0] = u.values
    ref = BoundaryValueSolver(op, fixed.reshape(-1)).solve(vals.reshape(-1))
    assert np.max(np.abs(fast.values - ref.reshape(g.field_shape))) < 1e-12


def test_reflect_lateral_preserves_constants():
    g = build_extension_grid(1, 1.0, 1.0, 17, 9, 0.4, grading=2.0)
    op = get_operator(g)
    spec = DirichletSpec(trace_values=TraceField(g, np.full(g.nx, 1.5)),
                         fixed_mask=np.ones(g.nx, bool),
                         lateral_bc="reflect", top_bc="zero_flux")
    v = solve_dirichlet(op, spec)
    assert np.allclose(v.values, 1.5, atol=1e-10)


def test_flux_of_constant_is_zero():
    g = grid_1d()
    v = ScalarField(g, np.full(g.field_shape, 3.0))
    out = fractional_laplacian_via_flux(v)
    assert np.max(np.abs(out.values)) < 1e-12


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_flux_matches_spectral_on_cosines_and_converges(alpha):
    k = 2
    errs = []
    for nx, ny in ((256, 33), (512, 65)):
        g = build_extension_grid(1, np.pi, 10.0, nx, ny, alpha, grading=2.0,
                                 periodic=True)
        op = get_operator(g)
        spec = DirichletSpec(trace_values=TraceField(g, np.cos(k * g.x_nodes)),
                             fixed_mask=np.ones(g.nx, bool),
                             lateral_bc="periodic", top_bc="zero")
        v = solve_dirichlet(op, spec)
        flux = fractional_laplacian_via_flux(v)
        target = fo.frac_lap_spectral(
            TraceField(g, np.cos(k * g.x_nodes)), alpha).values
        errs.append(np.linalg.norm(flux.values - target)
                    / np.linalg.norm(target))
    assert errs[0] < 0.02
    assert errs[1] < errs[0]


def test_flux_normalization_matches_gamma_constant():
    from scipy.special import gamma
    for alpha in (0.25, 0.5, 0.75):
        d = ext.flux_normalization(alpha)
        ref = 2.0 * gamma(1.0 - alpha) / (4.0 ** alpha * gamma(alpha))
        assert d == pytest.approx(ref, rel=0.01)


def test_flux_vanishes_on_positivity_set_of_profile():
    """Extension of (x_+)^alpha has vanishing flux where the trace is positive."""
    alpha = 0.5
    g = build_extension_grid(1, 4.0, 4.0, 513, 65, alpha, grading=2.0)
    trace = np.maximum(g.x_nodes, 0.0) ** alpha
    op = get_operator(g)
    fixed = np.zeros(g.field_shape, bool)
    fixed[..., 0] = fixed[..., -1] = True
    fixed[0, :] = fixed[-1, :] = True
    vals = np.zeros(g.field_shape)
    vals[:, 0] = trace
    # lateral and top data from the exact half-space extension by convolution
    big = build_extension_grid(1, 32.0, 4.0, 2049, 9, alpha, grading=1.0)
    ubig = TraceField(big, np.maximum(big.x_nodes, 0.0) ** alpha)
    for j in range(1, g.ny):
        row = extend_by_kernel(ubig, g.y_nodes[j])
        sel = np.searchsorted(big.x_nodes, g.x_nodes[np.array([0, g.nx - 1])])
        vals[0, j], vals[-1, j] = row.values[sel[0]], row.values[sel[1]]
        if j == g.ny - 1:
            idx = np.searchsorted(big.x_nodes, g.x_nodes)
            vals[:, j] = row.values[idx]
    out = BoundaryValueSolver(op, fixed.reshape(-1)).solve(vals)
    flux = fractional_laplacian_via_flux(
        ScalarField(g, out.reshape(g.field_shape)))
    sel = (g.x_nodes > 0.5) & (g.x_nodes < 3.0)
    scale = np.max(np.abs(flux.values))
    assert np.max(np.abs(flux.values[sel])) <= 0.02 * scale
