"""Quadrature rules on the reference triangle and on intervals.

The reference triangle is ``{(s, t) : s, t >= 0, s + t <= 1}`` with area 1/2.
Low degrees use the classical symmetric rules; everything else is a
collapsed (Duffy) product of Gauss-Legendre and Gauss-Jacobi rules, which
has positive weights and interior points for any degree.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import UnsupportedDegree

MAX_DEGREE = 40


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates ``(l0, l1, l2)`` and weights.

    Weights sum to the reference-triangle area 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int

    @property
    def ref_points(self):
        """Points as reference coordinates ``(s, t) = (l1, l2)``."""
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)], [w] * 3


def _orbit6(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b, c), (b, a, c), (a, c, b), (c, a, b), (b, c, a), (c, b, a)]
    return pts, [w] * 6


def _dunavant6():
    # Dunavant (1985), degree 6, 12 points; weights normalised to sum 1.
    pts, wts = [], []
    for p, w in (
        _orbit3(0.063089014491502228, 0.050844906370206817),
        _orbit3(0.249286745170910421, 0.116786275726379366),
        _orbit6(0.053145049844816947, 0.310352451033784405, 0.082851075618373575),
    ):
        pts += p
        wts += w
    return np.array(pts), np.array(wts)


def _collapsed(n):
    s, ws = np.polynomial.legendre.leggauss(n)
    s, ws = 0.5 * (s + 1.0), 0.5 * ws
    t, wt = roots_jacobi(n, 1.0, 0.0)
    t, wt = 0.5 * (t + 1.0), 0.25 * wt
    ss, tt = np.meshgrid(s, t, indexing="ij")
    x = (ss * (1.0 - tt)).ravel()
    y = tt.ravel()
    w = np.outer(ws, wt).ravel()
    return np.column_stack([1.0 - x - y, x, y]), 2.0 * w


@lru_cache(maxsize=None)
def quadrature(exact_degree=6):
    """Return a triangle rule exact for polynomials up to ``exact_degree``."""
    d = int(exact_degree)
    if d < 1 or d > MAX_DEGREE:
        raise UnsupportedDegree(f"degree {exact_degree} outside 1..{MAX_DEGREE}")
    if d == 1:
        pts, w, deg = np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]), 1
    elif d == 2:
        pts, w = _orbit3(1 / 6, 1 / 3)
        pts, w, deg = np.array(pts), np.array(w), 2
    elif d == 6:
        (pts, w), deg = _dunavant6(), 6
    else:
        n = (d + 2) // 2
        (pts, w), deg = _collapsed(n), 2 * n - 1
    pts.setflags(write=False)
    w = 0.5 * w
    w.setflags(write=False)
    return QuadratureRule(pts, w, deg)


@lru_cache(maxsize=None)
def gauss_interval(n):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
