"""Spin random fields on SO(3): simulation, excursion-set geometry, and
exact expected Lipschitz-Killing curvatures.

Modules
-------
wigner        rotation-matrix elements d^l_{m,n}(theta), D^l_{m,n}
spinfield     band-limited Gaussian spin fields and their derivatives
so3geom       left-invariant metric tensors on SO(3) in Euler angles
lkestim       grid/mesh estimators for (L0, L1, L2, L3) of excursion sets
expectations  closed-form and quadrature expected curvatures
mc            reproducible Monte Carlo validation harness
cli           command-line front end (`lkspin`)
"""

__version__ = "0.1.0"
