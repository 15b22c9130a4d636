"""Volume-constrained optimal design with fractional diffusion.

A numerical laboratory around the penalized variational problem: a weighted
extension solver realizing the fractional Laplacian as a boundary flux,
independent quadrature and spectral oracles, free-boundary minimizers of the
penalized energy, a penalty-parameter scheduler recovering the exact volume
constraint, and diagnostics that turn regularity, non-degeneracy, density,
free-boundary-condition and domain-variation statements into measurable
scaling checks.
"""

__version__ = "0.1.0"
