import numpy as np
import pytest

from fracdesign.mesh import build_extension_grid, TraceField
from fracdesign import penalty as pen


@pytest.fixture(scope="session")
def small_problem():
    """1D problem small enough for exhaustive scans: L=1, D=[-.25,.25], phi=1."""
    grid = build_extension_grid(1, 1.0, 1.0, 81, 17, 0.5, grading=2.0)
    xs = grid.x_nodes
    D = np.abs(xs) <= 0.25 + 1e-12
    phi = TraceField(grid, np.where(D, 1.0, 0.0))
    return grid, D, phi


@pytest.fixture(scope="session")
def small_minimizer(small_problem):
    grid, D, phi = small_problem
    p = pen.PenaltyParams(eps=0.2, omega=0.6)
    cfg = pen.minimize_iterative(p, D, phi, grid)
    return cfg, p


@pytest.fixture(scope="session")
def reference_minimizer():
    """The 1D reference problem (alpha = 0.6) at its acceptance resolution."""
    grid = build_extension_grid(1, 2.0, 1.5, 513, 49, 0.6, grading=2.0)
    xs = grid.x_nodes
    D = np.abs(xs) <= 0.25 + 1e-12
    phi = TraceField(grid, np.where(D, 1.0, 0.0))
    p = pen.PenaltyParams(eps=0.125, omega=0.5)
    cfg = pen.minimize_iterative(p, D, phi, grid)
    return cfg, p
