"""Tensor-product grids for the truncated upper half-space, with the y^beta weight.

The computational domain is [-L, L]^n x [0, Y] (n = 1 or 2): a uniform trace
mesh in x and a graded mesh in the extension direction y.  The degenerate
weight y^beta with beta = 1 - 2*alpha is integrable but singular (beta < 0) or
vanishing (beta > 0) at y = 0, so it is never sampled pointwise at nodes;
every coefficient is an exact cell average of y^beta, which is finite and
positive for all beta in (-1, 1), including cells touching y = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

Array = np.ndarray


class GridError(ValueError):
    """Invalid grid construction parameters."""


def graded_nodes(height: float, ny: int, grading: float) -> Array:
    """Node coordinates Y*(j/(ny-1))**grading, j = 0..ny-1.

    grading = 1 is uniform; grading > 1 clusters nodes at y = 0, where the
    weighted flux y^beta * dv/dy has to be resolved.
    """
    if ny < 2:
        raise GridError("need at least 2 nodes in y")
    if grading < 1.0:
        raise GridError(f"grading must be >= 1, got {grading}")
    j = np.arange(ny, dtype=float)
    return height * (j / (ny - 1)) ** grading


def weight_cell_integral(beta: float, a: float | Array, b: float | Array):
    """Exact integral of t^beta over [a, b], 0 <= a <= b.

    Finite for beta > -1 even when a = 0.
    """
    if beta <= -1.0 or beta >= 1.0:
        raise GridError(f"weight exponent beta must lie in (-1, 1), got {beta}")
    return (np.power(b, beta + 1.0) - np.power(a, beta + 1.0)) / (beta + 1.0)


def node_weight(y: float, beta: float, cell_span: tuple[float, float]) -> float:
    """Cell-averaged weight (1/|span|) * int_span t^beta dt.

    `y` is the node coordinate the cell belongs to; it is only consulted for
    a degenerate (zero-length) span, where the pointwise value |y|^beta is
    returned instead.
    """
    a, b = float(cell_span[0]), float(cell_span[1])
    if a < 0.0 or b < a:
        raise GridError(f"cell span must satisfy 0 <= a <= b, got ({a}, {b})")
    if beta <= -1.0:
        raise GridError(f"weight t^beta not integrable at 0 for beta={beta}")
    if beta >= 1.0:
        raise GridError(f"weight exponent beta must lie in (-1, 1), got {beta}")
    if b == a:
        if y <= 0.0 and beta < 0.0:
            raise GridError("pointwise weight undefined at y=0 for beta<0")
        return float(np.abs(y) ** beta)
    return float(weight_cell_integral(beta, a, b) / (b - a))


@dataclass(frozen=True, eq=False)
class ExtensionGrid:
    """Immutable tensor mesh of [-L, L]^n x [0, Y].

    Trace nodes are uniform.  For periodic grids the trace is the circle of
    circumference 2L sampled at nx points (no duplicated endpoint); otherwise
    the nx nodes include both endpoints -L and L.  y_nodes are graded toward
    y = 0.  Immutable after construction, safe to share across workers.
    """

    trace_dim: int
    half_width: float
    height: float
    nx: int
    ny: int
    alpha: float
    grading: float
    y_nodes: Array
    periodic: bool = False

    def __post_init__(self):
        if self.trace_dim not in (1, 2):
            raise GridError(f"trace_dim must be 1 or 2, got {self.trace_dim}")
        if not (0.0 < self.alpha < 1.0):
            raise GridError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.half_width <= 0.0 or self.height <= 0.0:
            raise GridError("half_width and height must be positive")
        if self.nx < 8 or self.ny < 8:
            raise GridError(f"grids smaller than 8 nodes per axis are rejected "
                            f"as degenerate (nx={self.nx}, ny={self.ny})")
        y = np.asarray(self.y_nodes, dtype=float)
        if y.shape != (self.ny,):
            raise GridError("y_nodes length must equal ny")
        if y[0] != 0.0:
            raise GridError("y_nodes must start at 0")
        dy = np.diff(y)
        if np.any(dy <= 0.0):
            raise GridError("y_nodes must be strictly increasing")
        if np.any(np.diff(dy) < -1e-12 * self.height):
            raise GridError("y spacing must be non-decreasing away from y=0")
        b = self.beta
        if not (-1.0 < b < 1.0):
            raise GridError(f"beta = 1 - 2*alpha = {b} out of (-1, 1)")

    @property
    def beta(self) -> float:
        return 1.0 - 2.0 * self.alpha

    # ----- trace geometry -------------------------------------------------

    @cached_property
    def x_spacing(self) -> float:
        if self.periodic:
            return 2.0 * self.half_width / self.nx
        return 2.0 * self.half_width / (self.nx - 1)

    @cached_property
    def x_nodes(self) -> Array:
        h = self.x_spacing
        if self.periodic:
            return -self.half_width + h * np.arange(self.nx)
        return np.linspace(-self.half_width, self.half_width, self.nx)

    @cached_property
    def x_cell_measures(self) -> Array:
        """Dual-cell length per trace node along one axis."""
        m = np.full(self.nx, self.x_spacing)
        if not self.periodic:
            m[0] *= 0.5
            m[-1] *= 0.5
        return m

    @property
    def trace_shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.trace_dim

    @cached_property
    def trace_cell_measures(self) -> Array:
        m = self.x_cell_measures
        if self.trace_dim == 1:
            return m.copy()
        return np.outer(m, m)

    @property
    def field_shape(self) -> tuple[int, ...]:
        return self.trace_shape + (self.ny,)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.field_shape))

    # ----- y geometry and weights ------------------------------------------

    @cached_property
    def y_dual_bounds(self) -> tuple[Array, Array]:
        """Dual-cell intervals [lo_j, hi_j] around each y node."""
        y = self.y_nodes
        mid = 0.5 * (y[:-1] + y[1:])
        lo = np.concatenate(([0.0], mid))
        hi = np.concatenate((mid, [self.height]))
        return lo, hi

    @cached_property
    def y_dual_len(self) -> Array:
        lo, hi = self.y_dual_bounds
        return hi - lo

    @cached_property
    def y_dual_weight_int(self) -> Array:
        """int t^beta over the dual cell of each y node."""
        lo, hi = self.y_dual_bounds
        return weight_cell_integral(self.beta, lo, hi)

    @cached_property
    def y_face_weight_int(self) -> Array:
        """int t^beta over each edge interval [y_j, y_{j+1}]."""
        y = self.y_nodes
        return weight_cell_integral(self.beta, y[:-1], y[1:])

    @cached_property
    def y_face_transmissivity(self) -> Array:
        """1 / int t^(-beta) over [y_j, y_{j+1}]: series-exact conductance.

        Vertical faces see the weight in series along the gradient, so the
        harmonic (resistivity-averaged) coefficient is the consistent one; it
        reproduces the flux of the pure y^(2 alpha) boundary layer exactly,
        while the arithmetic average errs by a constant factor on the cell
        touching y = 0.  Finite for all beta in (-1, 1).
        """
        y = self.y_nodes
        return 1.0 / weight_cell_integral(-self.beta, y[:-1], y[1:])

    # ----- misc -------------------------------------------------------------

    def refine(self) -> "ExtensionGrid":
        """Grid with 2x nodes per axis (2*nx, 2*ny), same domain and grading."""
        nx = 2 * self.nx if self.periodic else 2 * self.nx - 1
        return build_extension_grid(self.trace_dim, self.half_width, self.height,
                                    nx, 2 * self.ny - 1, self.alpha,
                                    grading=self.grading, periodic=self.periodic)


def build_extension_grid(n: int, L: float, Y: float, nx: int, ny: int,
                         alpha: float, grading: float = 2.0,
                         periodic: bool = False) -> ExtensionGrid:
    """Build the truncated half-space mesh [-L, L]^n x [0, Y].

    y nodes follow Y*(j/(ny-1))**grading; trace nodes are uniform.
    """
    if n not in (1, 2):
        raise GridError(f"trace dimension must be 1 or 2, got {n}")
    if not (0.0 < alpha < 1.0):
        raise GridError(f"alpha must lie in (0, 1), got {alpha}")
    if L <= 0.0 or Y <= 0.0:
        raise GridError("L and Y must be positive")
    y = graded_nodes(Y, ny, grading)
    return ExtensionGrid(trace_dim=n, half_width=L, height=Y, nx=nx, ny=ny,
                         alpha=alpha, grading=grading, y_nodes=y,
                         periodic=periodic)


@dataclass
class ScalarField:
    """Discrete function on the extension grid, one value per node."""

    grid: ExtensionGrid
    values: Array

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.field_shape:
            raise ValueError(f"field shape {self.values.shape} does not match "
                             f"grid shape {self.grid.field_shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def trace(self) -> "TraceField":
        return TraceField(self.grid, self.values[..., 0].copy())

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class TraceField:
    """Discrete function on the trace hyperplane {y = 0}."""

    grid: ExtensionGrid
    values: Array

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.trace_shape:
            raise ValueError(f"trace shape {self.values.shape} does not match "
                             f"grid trace shape {self.grid.trace_shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace contains non-finite values")

    def copy(self) -> "TraceField":
        return TraceField(self.grid, self.values.copy())
