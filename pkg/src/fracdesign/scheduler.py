"""Outer penalty-parameter loop recovering the exact volume constraint.

For small enough eps the penalized minimizer attains the target volume
exactly (the price jump at the budget dominates the bounded energy rate), so
a geometric eps schedule with warm starts walks the minimizer onto the
constraint.  The sweep record keeps the per-eps summaries the boundedness
checks need: volumes for the upper envelope vol <= omega + C*eps, and the
free-boundary coefficient for the no-blow-up / no-vanishing test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagnostics import default_fit_radii, estimate_q, extract_free_boundary
from .mesh import Array, ExtensionGrid, TraceField
from .penalty import (Configuration, MinimizeNonConvergence, MinimizeOptions,
                      PenaltyParams, energy_I_eps, minimize_iterative,
                      positivity_volume)


class SweepFailure(RuntimeError):
    """Minimization failed at some eps; carries the partial sweep."""

    def __init__(self, message: str, record: "SweepRecord"):
        self.record = record
        super().__init__(message)


@dataclass(frozen=True)
class ConstrainedProblem:
    """Data of the volume-constrained design problem."""

    grid: ExtensionGrid
    fixed_region_D: Array
    phi: TraceField
    omega: float

    def __post_init__(self):
        if self.omega <= 0.0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        D = np.asarray(self.fixed_region_D, dtype=bool)
        object.__setattr__(self, "fixed_region_D", D)
        admissible = float(np.sum(self.grid.trace_cell_measures[~D]))
        if self.omega > admissible:
            raise ValueError(f"omega={self.omega} exceeds admissible measure "
                             f"{admissible:.6g}")


@dataclass(frozen=True)
class EpsSchedule:
    """Geometric eps schedule with a volume stopping tolerance."""

    eps0: float = 1.0
    ratio: float = 0.5
    max_steps: int = 8
    vol_tol: float | None = None      # None: one trace cell measure

    def __post_init__(self):
        if self.eps0 <= 0.0:
            raise ValueError(f"eps0 must be positive, got {self.eps0}")
        if not (0.0 < self.ratio < 1.0):
            raise ValueError(f"ratio must lie in (0, 1), got {self.ratio}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    def resolved_vol_tol(self, grid: ExtensionGrid) -> float:
        cell = grid.x_spacing ** grid.trace_dim
        if self.vol_tol is None:
            return cell
        if self.vol_tol < cell - 1e-15:
            raise ValueError(f"vol_tol {self.vol_tol} below one trace cell "
                             f"measure {cell:.4g}")
        return self.vol_tol

    def eps_values(self):
        return [self.eps0 * self.ratio ** k for k in range(self.max_steps)]


@dataclass
class SweepEntry:
    eps: float
    volume: float
    energy: float
    lambda_est: float
    fb_points: int


@dataclass
class SweepRecord:
    """Per-eps minimizer summaries, ordered by decreasing eps."""

    omega: float
    entries: list = field(default_factory=list)
    attained: bool = False
    attained_eps: float | None = None
    failure: str | None = None

    def append(self, entry: SweepEntry):
        if self.entries and entry.eps >= self.entries[-1].eps:
            raise ValueError("sweep entries must have decreasing eps")
        self.entries.append(entry)

    @property
    def volumes(self) -> Array:
        return np.array([e.volume for e in self.entries])

    @property
    def eps_list(self) -> Array:
        return np.array([e.eps for e in self.entries])


def _lambda_estimate(cfg: Configuration) -> tuple[float, int]:
    fb = extract_free_boundary(cfg)
    if len(fb) == 0:
        return float("nan"), 0
    radii = default_fit_radii(cfg.grid)
    qs = [estimate_q(cfg, fb.points[i], radii, fb.normals[i])
          for i in range(len(fb))]
    return float(np.median(qs)), len(fb)


def solve_constrained(problem: ConstrainedProblem, sched: EpsSchedule,
                      opts: MinimizeOptions | None = None,
                      continue_after_attainment: bool = False
                      ) -> tuple[Configuration, SweepRecord]:
    """Run the eps sweep until the volume constraint is met.

    Each minimize is warm-started from the previous minimizer.  Returns the
    first configuration with |volume - omega| <= vol_tol together with the
    sweep record; if the budget of steps runs out, returns the closest
    configuration with record.attained False.  A minimizer failure raises
    SweepFailure carrying the partial record.

    With continue_after_attainment the sweep records all max_steps values of
    eps (for coefficient-boundedness and stability reports) but still
    returns the first attaining configuration.
    """
    opts = opts or MinimizeOptions()
    grid = problem.grid
    vol_tol = sched.resolved_vol_tol(grid)
    record = SweepRecord(omega=problem.omega)
    best_cfg = None
    best_gap = np.inf
    attained_cfg = None
    warm = opts.initial_active
    for eps in sched.eps_values():
        p = PenaltyParams(eps=eps, omega=problem.omega)
        step_opts = MinimizeOptions(
            max_outer=opts.max_outer, solver_tol=opts.solver_tol,
            theta_pos=opts.theta_pos, initial_active=warm,
            polish_radius=opts.polish_radius, descent_tol=opts.descent_tol)
        try:
            cfg = minimize_iterative(p, problem.fixed_region_D, problem.phi,
                                     grid, step_opts)
        except MinimizeNonConvergence as exc:
            record.failure = f"eps={eps}: {exc}"
            raise SweepFailure(record.failure, record) from exc
        vol = positivity_volume(cfg)
        lam, nfb = _lambda_estimate(cfg)
        record.append(SweepEntry(eps=eps, volume=vol,
                                 energy=energy_I_eps(cfg, p),
                                 lambda_est=lam, fb_points=nfb))
        gap = abs(vol - problem.omega)
        if gap < best_gap:
            best_cfg, best_gap = cfg, gap
        warm = cfg.active_set
        if gap <= vol_tol and not record.attained:
            record.attained = True
            record.attained_eps = eps
            attained_cfg = cfg
            if not continue_after_attainment:
                return cfg, record
    if attained_cfg is not None:
        return attained_cfg, record
    return best_cfg, record


def lambda_sweep(record: SweepRecord, max_spread_ratio: float = 3.0) -> dict:
    """Boundedness report for the free-boundary coefficient along the sweep.

    The theory gives eps-independent upper and lower bounds; the measurable
    form is that max/min stays below a configured ratio as eps decreases.
    Requires at least 4 valid estimates, otherwise reports insufficient data.
    """
    lams = np.array([e.lambda_est for e in record.entries])
    lams = lams[np.isfinite(lams) & (lams > 0.0)]
    if lams.size < 4:
        return {"status": "insufficient-data", "count": int(lams.size),
                "ok": None, "min": None, "max": None, "spread_ratio": None}
    lo, hi = float(np.min(lams)), float(np.max(lams))
    ratio = hi / lo
    return {"status": "ok", "count": int(lams.size), "min": lo, "max": hi,
            "spread_ratio": ratio, "ok": bool(ratio <= max_spread_ratio)}


def fit_volume_envelope(record: SweepRecord) -> dict:
    """Fit the upper envelope vol(eps) <= omega + C*eps.

    C is the least-squares slope (through the origin) of the positive volume
    excesses against eps; residuals above the line are reported so callers
    can assert they stay within a cell.  No intercept is allowed: a positive
    excess at eps -> 0 would contradict volume recovery.
    """
    eps = record.eps_list
    excess = record.volumes - record.omega
    pos = excess > 0.0
    if not pos.any():
        return {"C": 0.0, "residuals": np.maximum(excess, 0.0),
                "max_residual": float(np.max(np.maximum(excess, 0.0),
                                             initial=0.0))}
    C = float(np.dot(excess[pos], eps[pos]) / np.dot(eps[pos], eps[pos]))
    C = max(C, 0.0)
    resid = excess - C * eps
    return {"C": C, "residuals": resid,
            "max_residual": float(np.max(resid))}
