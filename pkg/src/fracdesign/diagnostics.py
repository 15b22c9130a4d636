"""Quantitative free-boundary diagnostics for computed minimizers.

Each check measures a scaling law the theory predicts near the free
boundary: Hoelder-alpha growth of the trace, the non-degeneracy floor, the
two-phase density bounds, Morrey growth of the weighted energy, the
constancy of the blow-up coefficient along the boundary, the first-order
energy/volume trade under domain perturbations, and the sign/support
structure of the boundary flux.  Constants in the theory are anonymous, so
every check reports a measured quantity against a configured floor or
spread, never a literal value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _interface as geom
from .extension import fractional_laplacian_via_flux, get_operator
from .mesh import Array, ExtensionGrid
from .penalty import (Configuration, PenaltyParams, PerturbationSpec,
                      default_bump, transported_energy_delta)


@dataclass
class FreeBoundarySet:
    """Free-boundary faces of a configuration.

    Points are cell-interface midpoints between a positive cell and a zero
    cell outside the fixed region; normals are unit outward vectors of the
    positivity set (a sign in 1D, kept as a 1-vector for uniformity).
    """

    points: Array          # (k, trace_dim)
    normals: Array         # (k, trace_dim)
    pos_cells: Array       # (k, trace_dim) int
    zero_cells: Array      # (k, trace_dim) int

    def __len__(self) -> int:
        return self.points.shape[0]


def extract_free_boundary(c: Configuration) -> FreeBoundarySet:
    """Deterministic interface extraction; an empty set is a valid result."""
    pos, zero, _ = geom.interface_faces(c.positivity_mask, ~c.fixed_region_D)
    order = np.lexsort(pos.T[::-1])
    pos, zero = pos[order], zero[order]
    pts = geom.face_midpoints(c.grid, pos, zero)
    nrm = geom.outward_normals(c.grid, c.positivity_mask, pos, zero)
    return FreeBoundarySet(points=pts, normals=nrm, pos_cells=pos,
                           zero_cells=zero)


def _fb_distance(c: Configuration, pts: Array, fb: FreeBoundarySet) -> Array:
    """Distance from trace points (k, n) to the nearest FB point."""
    if len(fb) == 0:
        return np.full(pts.shape[0], np.inf)
    d = np.linalg.norm(pts[:, None, :] - fb.points[None, :, :], axis=2)
    return d.min(axis=1)


def _require_on_fb(c: Configuration, x0, fb: FreeBoundarySet | None = None):
    fb = fb or extract_free_boundary(c)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).reshape(1, -1)
    d = _fb_distance(c, x0, fb)[0]
    if d > 1.5 * c.grid.x_spacing:
        raise ValueError(f"point {x0.ravel()} is {d:.4g} away from the free "
                         "boundary; diagnostics require a free-boundary point")
    return fb


def _trace_at(c: Configuration, pts: Array) -> Array:
    """Trace values at arbitrary points (multilinear)."""
    grid = c.grid
    vals = c.trace_values.values
    if grid.trace_dim == 1:
        return np.interp(pts[:, 0], grid.x_nodes, vals)
    xs = grid.x_nodes
    h = grid.x_spacing
    f1 = np.clip((pts[:, 0] - xs[0]) / h, 0, grid.nx - 1 - 1e-12)
    f2 = np.clip((pts[:, 1] - xs[0]) / h, 0, grid.nx - 1 - 1e-12)
    i1, i2 = f1.astype(int), f2.astype(int)
    w1, w2 = f1 - i1, f2 - i2
    return ((1 - w1) * (1 - w2) * vals[i1, i2]
            + w1 * (1 - w2) * vals[i1 + 1, i2]
            + (1 - w1) * w2 * vals[i1, i2 + 1]
            + w1 * w2 * vals[i1 + 1, i2 + 1])


# ---------------------------------------------------------------------------
# growth, non-degeneracy, density, Morrey
# ---------------------------------------------------------------------------

def fit_growth_exponent(c: Configuration, x0, radii) -> tuple[float, float]:
    """Least-squares slope of log sup_{B_r} u against log r, with stderr.

    Near a free-boundary point the sup grows like r^alpha (Hoelder bound
    from above, non-degeneracy from below), so the slope estimates alpha.
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    if radii.size < 4 or radii[-1] / radii[0] < 4.0 - 1e-9:
        raise ValueError("need >= 4 radii spanning >= 2 dyadic octaves")
    fb = _require_on_fb(c, x0)
    grid = c.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    pts = _trace_node_coords(grid)
    dist = np.linalg.norm(pts - x0[None, :], axis=1)
    vals = c.trace_values.values.reshape(-1)
    sups = []
    for r in radii:
        sel = dist <= r
        if not sel.any():
            raise ValueError(f"radius {r} captures no trace node")
        sups.append(float(np.max(vals[sel])))
    sups = np.asarray(sups)
    if np.any(sups <= 0.0):
        raise ValueError("sup of u vanishes on a fit ball; x0 must touch the "
                         "positivity set")
    lx, ly = np.log(radii), np.log(sups)
    n = lx.size
    sxx = np.sum((lx - lx.mean()) ** 2)
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    resid = ly - (ly.mean() + slope * (lx - lx.mean()))
    stderr = float(np.sqrt(np.sum(resid ** 2) / max(n - 2, 1) / sxx))
    return slope, stderr


def _trace_node_coords(grid: ExtensionGrid) -> Array:
    xs = grid.x_nodes
    if grid.trace_dim == 1:
        return xs[:, None]
    return np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)


def nondegeneracy_check(c: Configuration, sample_points=None) -> float:
    """min over samples of u(x) / dist(x, FB)^alpha.

    Default samples: every positivity node outside D at least 2 cells from
    the free boundary.  A vanishing ratio flags degenerate (flat) growth.
    """
    grid = c.grid
    fb = extract_free_boundary(c)
    if len(fb) == 0:
        raise ValueError("configuration has no free boundary")
    h = grid.x_spacing
    if sample_points is None:
        pts = _trace_node_coords(grid)
        vals = c.trace_values.values.reshape(-1)
        keep = (c.positivity_mask & ~c.fixed_region_D).reshape(-1)
        pts, vals = pts[keep], vals[keep]
        d = _fb_distance(c, pts, fb)
        sel = d >= 2.0 * h
        if not sel.any():
            raise ValueError("no sample at least 2 cells inside the "
                             "positivity set")
        pts, vals, d = pts[sel], vals[sel], d[sel]
    else:
        pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
        d = _fb_distance(c, pts, fb)
        if np.any(d < 2.0 * h):
            raise ValueError("samples must be at least 2 cells from the FB")
        vals = _trace_at(c, pts)
        inside = (vals > c.theta_pos)
        if not inside.all():
            raise ValueError("samples must lie in the positivity set")
    return float(np.min(vals / d ** grid.alpha))


def density_check(c: Configuration, x0, radii) -> tuple[float, float]:
    """Minimal phase densities in trace balls around a free-boundary point.

    Densities use the half-ball normalization: measure(phase in B_r) divided
    by |B_r^n| / 2, so a flat interface scores 1 for both phases.  Balls are
    intersected with the trace domain.
    """
    grid = c.grid
    radii = np.sort(np.asarray(radii, dtype=float))
    h = grid.x_spacing
    if radii[0] < 3.0 * h - 1e-12:
        raise ValueError("density radii must be at least 3 cells")
    _require_on_fb(c, x0)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    pts = _trace_node_coords(grid)
    dist = np.linalg.norm(pts - x0[None, :], axis=1)
    measures = grid.trace_cell_measures.reshape(-1)
    pos = c.positivity_mask.reshape(-1)
    dmin_zero, dmin_pos = np.inf, np.inf
    for r in radii:
        sel = dist <= r
        half_ball = r if grid.trace_dim == 1 else 0.5 * np.pi * r * r
        mzero = float(np.sum(measures[sel & ~pos]))
        mpos = float(np.sum(measures[sel & pos]))
        dmin_zero = min(dmin_zero, mzero / half_ball)
        dmin_pos = min(dmin_pos, mpos / half_ball)
    return dmin_zero, dmin_pos


def morrey_growth_check(c: Configuration, x0, radii,
                        on_boundary: bool = True) -> dict:
    """r^{-n} * weighted energy over extension half-balls B_r((x0, 0)).

    Returns the per-radius sequence and its sup; boundedness (no sustained
    octave-to-octave growth) is the measurable form of the Morrey estimate.
    With on_boundary=False the center may sit anywhere on the trace (there
    the scaled energy of a smooth field decays like r instead).
    """
    grid = c.grid
    radii = np.sort(np.asarray(radii, dtype=float))
    if on_boundary:
        _require_on_fb(c, x0)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    op = get_operator(grid)
    xs = grid.x_nodes
    if grid.trace_dim == 1:
        dist2 = ((xs[:, None] - x0[0]) ** 2
                 + grid.y_nodes[None, :] ** 2)
    else:
        dist2 = ((xs[:, None, None] - x0[0]) ** 2
                 + (xs[None, :, None] - x0[1]) ** 2
                 + grid.y_nodes[None, None, :] ** 2)
    n = grid.trace_dim
    seq = []
    for r in radii:
        region = dist2 < r * r
        seq.append(op.energy(c.extension.values, region) / r ** n)
    seq = np.asarray(seq)
    return {"radii": radii, "sequence": seq, "sup": float(np.max(seq))}


# ---------------------------------------------------------------------------
# blow-up coefficient and its constancy
# ---------------------------------------------------------------------------

def estimate_q(c: Configuration, x0, fit_radii, normal=None) -> float:
    """Least-squares coefficient of u(x0 + t*nu_in) against t^alpha.

    nu_in is the inward normal (into the positivity set); by the blow-up
    profile the trace behaves like q * t^alpha along it.  Homogeneous of
    degree 1 in the field values.
    """
    grid = c.grid
    fb = _require_on_fb(c, x0)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if normal is None:
        d = np.linalg.norm(fb.points - x0[None, :], axis=1)
        normal = fb.normals[int(np.argmin(d))]
    nu_in = -np.atleast_1d(np.asarray(normal, dtype=float))
    t = np.sort(np.asarray(fit_radii, dtype=float))
    if np.any(t <= 0.0):
        raise ValueError("fit radii must be positive")
    pts = x0[None, :] + t[:, None] * nu_in[None, :]
    L = grid.half_width
    if np.any(np.abs(pts) > L):
        raise ValueError("fit radii leave the trace domain")
    u = _trace_at(c, pts)
    ta = t ** grid.alpha
    return float(np.dot(u, ta) / np.dot(ta, ta))


def default_fit_radii(grid: ExtensionGrid) -> Array:
    """Fit window excluding the innermost 2 cells: {2, 3, 4, 6} * h."""
    return grid.x_spacing * np.array([2.0, 3.0, 4.0, 6.0])


def capped_fit_radii(c: Configuration, x0) -> Array:
    """Default fit radii kept inside half the distance to the datum."""
    radii = default_fit_radii(c.grid)
    cap = 0.5 * _clean_window_limit(c, x0)
    keep = radii[radii <= cap]
    return keep if keep.size >= 2 else radii[:2]


def q_constancy_check(c: Configuration, fit_radii=None) -> dict:
    """Spread statistic (max q - min q) / median q across FB points."""
    fb = extract_free_boundary(c)
    if len(fb) < 2:
        raise ValueError("need at least 2 free-boundary points")
    qs = np.array([estimate_q(c, fb.points[i],
                              capped_fit_radii(c, fb.points[i])
                              if fit_radii is None else fit_radii,
                              fb.normals[i])
                   for i in range(len(fb))])
    med = float(np.median(qs))
    if med <= 0.0:
        raise ValueError("median blow-up coefficient is not positive")
    spread = float((np.max(qs) - np.min(qs)) / med)
    return {"q_values": qs, "median": med, "spread": spread}


# ---------------------------------------------------------------------------
# Hadamard trade: energy change per unit of displaced volume
# ---------------------------------------------------------------------------

@dataclass
class HadamardReport:
    volumes: Array
    energy_deltas: Array
    slope: float
    lambda_est: float
    rel_deviation: float
    residuals: Array
    pair_volume: float
    pair_delta: float
    pair_vs_linear: float
    skipped: list = field(default_factory=list)


def _hadamard_radius(c: Configuration, fb: FreeBoundarySet) -> float:
    """Perturbation ball radius: well resolved, disjoint balls, inside grid."""
    grid = c.grid
    sep = float(np.linalg.norm(fb.points[1] - fb.points[0]))
    room = grid.half_width - float(np.max(np.abs(fb.points)))
    dpts = _trace_node_coords(grid)[c.fixed_region_D.reshape(-1)]
    d_to_data = float(min(np.min(np.linalg.norm(dpts - fb.points[i][None, :],
                                                axis=1))
                          for i in range(len(fb)))) if dpts.size else np.inf
    return 0.9 * min(sep / 4.0, room, d_to_data)


def hadamard_check(c: Configuration, p: PenaltyParams, volumes,
                   fit_radii=None) -> HadamardReport:
    """First-order energy/volume trade at the free boundary (1D).

    For each requested displaced volume V, the radial bump map pushes the
    right free endpoint inward by V = gamma*r*rho(0) and the energy change
    of the transported configuration is evaluated through the exact
    change-of-variables quadrature on the computed field (the transported
    competitor realizes the first-order trade; re-solving in the perturbed
    region gives the same slope up to o(V) but quantizes V to whole cells).
    The fitted slope of dE against V is compared with the squared median
    blow-up coefficient; an inward/outward pair at the two endpoints with
    matched V checks that the linear terms cancel.
    """
    grid = c.grid
    if grid.trace_dim != 1:
        raise NotImplementedError("the energy/volume trade check is 1D only")
    fb = extract_free_boundary(c)
    if len(fb) != 2:
        raise ValueError(f"expected 2 free endpoints, found {len(fb)}")
    if fit_radii is None:
        fit_radii = default_fit_radii(grid)
    qs = [estimate_q(c, fb.points[i], fit_radii, fb.normals[i])
          for i in range(len(fb))]
    lam = float(np.median(qs))

    if not fb.points[0, 0] < fb.points[1, 0]:
        raise ValueError("free endpoints are not ordered")
    r = _hadamard_radius(c, fb)
    rho = default_bump()
    x_right, x_left = fb.points[1], fb.points[0]
    nu_right, nu_left = fb.normals[1], fb.normals[0]

    vols, deltas, skipped = [], [], []
    for V in np.asarray(volumes, dtype=float):
        if V == 0.0:
            vols.append(0.0)
            deltas.append(0.0)
            continue
        gamma = V / (r * rho.at_zero)
        try:
            PerturbationSpec(centers=(x_right, x_left), radius=r, gamma=gamma,
                             bump=rho, strict_separation=False)
        except ValueError as exc:
            skipped.append((float(V), str(exc)))
            continue
        # inward at the right endpoint: displacement against the outward normal
        d_e = transported_energy_delta(c, x_right, nu_right, -gamma, r, rho)
        vols.append(float(V))
        deltas.append(d_e)
    vols = np.asarray(vols)
    deltas = np.asarray(deltas)
    live = vols > 0.0
    if np.count_nonzero(live) < 2:
        raise ValueError("fewer than 2 feasible perturbation volumes")
    slope = float(np.dot(deltas[live], vols[live])
                  / np.dot(vols[live], vols[live]))
    residuals = deltas - slope * vols
    rel_dev = abs(slope - lam ** 2) / lam ** 2

    v_pair = float(np.max(vols[live]))
    gamma = v_pair / (r * rho.at_zero)
    pair_delta = (transported_energy_delta(c, x_right, nu_right, -gamma, r, rho)
                  + transported_energy_delta(c, x_left, nu_left, +gamma, r, rho))
    pair_vs_linear = abs(pair_delta) / abs(slope * v_pair)

    return HadamardReport(volumes=vols, energy_deltas=deltas, slope=slope,
                          lambda_est=lam, rel_deviation=float(rel_dev),
                          residuals=residuals, pair_volume=v_pair,
                          pair_delta=float(pair_delta),
                          pair_vs_linear=float(pair_vs_linear),
                          skipped=skipped)


# ---------------------------------------------------------------------------
# boundary flux as a measure
# ---------------------------------------------------------------------------

@dataclass
class FluxMeasureStats:
    interior_max_abs: float     # |flux| deep inside the positivity set
    fb_peak: float              # max of mu = -flux next to the FB
    min_mu_near_fb: float       # most negative mu next to the FB
    min_mu_everywhere: float    # most negative mu on the free trace
    mass_near_fb: float         # sum of mu * cell over FB-adjacent cells
    interior_cells: int
    fb_cells: int


def flux_measure_check(c: Configuration) -> FluxMeasureStats:
    """Sign and support structure of mu = -(-Delta)^alpha u on the trace.

    On the positivity set away from the boundary the flux vanishes (the
    minimizer is alpha-harmonic there); next to the free boundary mu must
    be nonnegative up to discretization tolerance; its mass concentrates in
    the boundary cells.
    """
    grid = c.grid
    flux = fractional_laplacian_via_flux(c.extension).values
    mu = -flux
    fb = extract_free_boundary(c)
    pts = _trace_node_coords(grid)
    d = _fb_distance(c, pts, fb).reshape(grid.trace_shape)
    h = grid.x_spacing
    free = ~c.fixed_region_D

    near = free & (d <= 1.0 * h)
    interior = free & c.positivity_mask & (d >= 3.0 * h)
    # exclude the truncation-polluted outer 10% of the domain
    margin = 0.9 * grid.half_width
    inner_box = np.all(np.abs(pts) <= margin, axis=1).reshape(grid.trace_shape)
    interior &= inner_box

    measures = grid.trace_cell_measures
    return FluxMeasureStats(
        interior_max_abs=float(np.max(np.abs(flux[interior])))
        if interior.any() else 0.0,
        fb_peak=float(np.max(mu[near])) if near.any() else 0.0,
        min_mu_near_fb=float(np.min(mu[near])) if near.any() else 0.0,
        min_mu_everywhere=float(np.min(mu[free])) if free.any() else 0.0,
        mass_near_fb=float(np.sum(mu[near] * measures[near]))
        if near.any() else 0.0,
        interior_cells=int(np.count_nonzero(interior)),
        fb_cells=int(np.count_nonzero(near)),
    )


# ---------------------------------------------------------------------------
# aggregate report
# ---------------------------------------------------------------------------

@dataclass
class DiagnosticsThresholds:
    holder_max_dev: float = 0.07
    nondegeneracy_floor: float = 0.1
    density_floor: float = 0.2
    morrey_octave_factor: float = 2.0
    q_spread_max: float = 0.1
    hadamard_max_rel: float = 0.15
    pair_cancellation_factor: float = 5.0
    flux_interior_rel: float = 0.05


@dataclass
class DiagnosticsReport:
    holder_exponent: float
    holder_stderr: float
    holder_per_point: list
    nondegeneracy_min_ratio: float
    density_min: tuple
    morrey_sup: float
    morrey_sequences: list
    q_estimates: list
    q_spread: float
    hadamard_slope: float | None
    hadamard_rel_deviation: float | None
    hadamard_pair_vs_linear: float | None
    flux_stats: FluxMeasureStats | None
    passes: dict

    def all_pass(self) -> bool:
        return all(self.passes.values())

    def to_dict(self) -> dict:
        out = {
            "holder_exponent": self.holder_exponent,
            "holder_stderr": self.holder_stderr,
            "holder_per_point": [list(map(float, t)) for t in self.holder_per_point],
            "nondegeneracy_min_ratio": self.nondegeneracy_min_ratio,
            "density_min_zero_phase": self.density_min[0],
            "density_min_positive_phase": self.density_min[1],
            "morrey_sup": self.morrey_sup,
            "morrey_sequences": [list(map(float, s)) for s in self.morrey_sequences],
            "q_estimates": list(map(float, self.q_estimates)),
            "q_spread": self.q_spread,
            "hadamard_slope": self.hadamard_slope,
            "hadamard_rel_deviation": self.hadamard_rel_deviation,
            "hadamard_pair_vs_linear": self.hadamard_pair_vs_linear,
            "passes": {k: bool(v) for k, v in self.passes.items()},
        }
        if self.flux_stats is not None:
            out["flux"] = {
                "interior_max_abs": self.flux_stats.interior_max_abs,
                "fb_peak": self.flux_stats.fb_peak,
                "min_mu_near_fb": self.flux_stats.min_mu_near_fb,
                "min_mu_everywhere": self.flux_stats.min_mu_everywhere,
                "mass_near_fb": self.flux_stats.mass_near_fb,
                "interior_cells": self.flux_stats.interior_cells,
                "fb_cells": self.flux_stats.fb_cells,
            }
        return out


def _clean_window_limit(c: Configuration, x0) -> float:
    """Outer radius limit: inside the domain core, away from the datum."""
    grid = c.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    limit = 0.9 * grid.half_width - float(np.max(np.abs(x0)))
    if c.fixed_region_D.any():
        dpts = _trace_node_coords(grid)[c.fixed_region_D.reshape(-1)]
        limit = min(limit, float(np.min(np.linalg.norm(dpts - x0[None, :],
                                                       axis=1))))
    return limit


def default_growth_radii(c: Configuration, x0) -> Array:
    """Radii for the growth-exponent fit around a FB point.

    The pure r^alpha law only holds asymptotically: the window starts right
    after the 2 discretization-dominated cells and stays within a quarter of
    the distance to the datum, where the next-order correction is still
    small.  Spans 2 octaves with 4 points.
    """
    grid = c.grid
    h = grid.x_spacing
    r_min = 2.0 * h
    r_max = max(4.0 * r_min, 0.25 * _clean_window_limit(c, x0))
    return np.geomspace(r_min, r_max, 4)


def default_ball_radii(c: Configuration, x0) -> Array:
    """Radii for density and Morrey checks: 3 cells up to the clean window."""
    grid = c.grid
    h = grid.x_spacing
    limit = 0.45 * _clean_window_limit(c, x0)
    r_max = max(limit, 12.0 * h)
    r_min = max(3.0 * h, r_max / 8.0)
    if r_max < 4.0 * r_min:
        r_max = 4.0 * r_min          # coarse grid: stretch to keep 2 octaves
    return np.geomspace(r_min, r_max, 4)


def run_diagnostics(c: Configuration, p: PenaltyParams | None = None,
                    thresholds: DiagnosticsThresholds | None = None,
                    hadamard_volumes=None) -> DiagnosticsReport:
    """Full diagnostics battery on a converged configuration."""
    th = thresholds or DiagnosticsThresholds()
    grid = c.grid
    alpha = grid.alpha
    fb = extract_free_boundary(c)
    if len(fb) == 0:
        raise ValueError("configuration has an empty free boundary")

    holder_pts = []
    density_zero, density_pos = np.inf, np.inf
    morrey_seqs, morrey_sup = [], 0.0
    morrey_ok = True
    for i in range(len(fb)):
        x0 = fb.points[i]
        holder_pts.append(fit_growth_exponent(c, x0,
                                              default_growth_radii(c, x0)))
        radii = default_ball_radii(c, x0)
        dz, dp = density_check(c, x0, radii)
        density_zero = min(density_zero, dz)
        density_pos = min(density_pos, dp)
        m = morrey_growth_check(c, x0, radii)
        morrey_seqs.append(m["sequence"])
        morrey_sup = max(morrey_sup, m["sup"])
        seq = m["sequence"]
        ratios = seq[1:] / np.maximum(seq[:-1], 1e-300)
        if np.any(ratios > th.morrey_octave_factor):
            morrey_ok = False

    exps = np.array([t[0] for t in holder_pts])
    holder_val = float(np.mean(exps))
    holder_err = float(np.max([t[1] for t in holder_pts]))
    holder_ok = bool(np.all(np.abs(exps - alpha) <= th.holder_max_dev))

    ratio = nondegeneracy_check(c)
    qinfo = q_constancy_check(c) if len(fb) >= 2 else {"q_values": [], "spread": np.nan}
    flux = flux_measure_check(c)

    had_slope = had_rel = had_pair = None
    had_ok = True
    if p is not None and grid.trace_dim == 1 and len(fb) == 2:
        if hadamard_volumes is None:
            hadamard_volumes = p.omega * np.array([1e-3, 2e-3, 4e-3, 8e-3, 1e-2])
        rep = hadamard_check(c, p, hadamard_volumes)
        had_slope, had_rel = rep.slope, rep.rel_deviation
        had_pair = rep.pair_vs_linear
        had_ok = (rep.rel_deviation <= th.hadamard_max_rel
                  and rep.pair_vs_linear <= 1.0 / th.pair_cancellation_factor)

    passes = {
        "holder": holder_ok,
        "nondegeneracy": ratio >= th.nondegeneracy_floor,
        "density": (density_zero >= th.density_floor
                    and density_pos >= th.density_floor),
        "morrey": morrey_ok,
        "q_constancy": (len(fb) < 2
                        or qinfo["spread"] <= th.q_spread_max),
        "flux_interior": (flux.interior_cells == 0
                          or flux.interior_max_abs
                          <= th.flux_interior_rel * max(flux.fb_peak, 1e-300)),
        "flux_nonnegative": flux.min_mu_near_fb
        >= -th.flux_interior_rel * max(flux.fb_peak, 1e-300),
        "hadamard": had_ok,
    }
    return DiagnosticsReport(
        holder_exponent=holder_val, holder_stderr=holder_err,
        holder_per_point=holder_pts,
        nondegeneracy_min_ratio=float(ratio),
        density_min=(float(density_zero), float(density_pos)),
        morrey_sup=float(morrey_sup), morrey_sequences=morrey_seqs,
        q_estimates=list(qinfo["q_values"]),
        q_spread=float(qinfo["spread"]) if len(fb) >= 2 else float("nan"),
        hadamard_slope=had_slope, hadamard_rel_deviation=had_rel,
        hadamard_pair_vs_linear=had_pair,
        flux_stats=flux, passes=passes)
