"""Shared test helpers: finite-difference oracles and a worker cap."""

import os

# Keep worker pools deterministic and small on CI boxes.
os.environ.setdefault("LKSPIN_THREADS", "1")

import numpy as np


def fd_gradient(func, x, h=1e-6):
    """Central first difference, accurate to O(h^2)."""
    return (np.asarray(func(x + h)) - np.asarray(func(x - h))) / (2.0 * h)


def fd_second(func, x, h=1e-4):
    """Central second difference, accurate to O(h^2)."""
    fp = np.asarray(func(x + h))
    f0 = np.asarray(func(x))
    fm = np.asarray(func(x - h))
    return (fp - 2.0 * f0 + fm) / (h * h)
