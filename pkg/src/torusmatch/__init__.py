"""Numerical laboratory for random bipartite matching on the flat torus.

Modules
-------
torus       points, wrapping and the flat distance
fields      periodic grid fields, spectral and finite-difference calculus
sampling    reproducible uniform point clouds
heat        heat kernel and heat smoothing
qpoisson    q-Poisson solver and its linear special case
hopflax     Hopf-Lax semigroup and the energy curve along it
wasserstein exact matching and grid transport costs, sandwich certificate
experiment  Monte Carlo harness and statistical checks
"""

__version__ = "0.1.0"
