"""Positive-weight quadrature on the reference interval, triangle and tetrahedron.

Simplex rules are built as tensor products of one-dimensional Gauss rules
under the collapsing (Duffy) map, with the map Jacobian absorbed into
Gauss-Jacobi weight functions.  All weights are strictly positive, which
the discrete energy argument relies on: pointwise-nonnegative integrands
(upwind switches, penalty terms) then have nonnegative quadrature value.

Reference domains:
    interval      [0, 1]
    triangle      {x >= 0, y >= 0, x + y <= 1}
    tetrahedron   {x >= 0, y >= 0, z >= 0, x + y + z <= 1}
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import QuadratureError

#: Largest polynomial degree the rule table serves.  Collapsed rules exist
#: for any degree; the cap just bounds table size and catches runaway
#: degree requests coming from malformed configurations.
MAX_DEGREE = 40

_REF_MEASURE = {"interval": 1.0, "triangle": 0.5, "tetrahedron": 1.0 / 6.0}


@dataclass(frozen=True)
class QuadratureRule:
    """Points (reference coordinates) and positive weights for one domain.

    ``weights`` sum to the reference measure, so physical integrals are
    ``sum(w_q * f(x_q)) * |det J|`` with the affine-map Jacobian factored
    out by the caller.
    """

    domain: str
    degree: int
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __len__(self):
        return self.weights.shape[0]


def _gauss_legendre_01(m):
    """m-point Gauss-Legendre rule on [0,1]; exact through degree 2m-1."""
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def _gauss_jacobi_01(m, alpha):
    """m-point rule on [0,1] with weight (1-x)**alpha; exact through 2m-1."""
    x, w = roots_jacobi(m, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def _interval_rule(degree):
    m = max(1, (degree + 2) // 2)
    x, w = _gauss_legendre_01(m)
    return x.reshape(-1, 1), w


def _triangle_rule(degree):
    # Collapse the square onto the triangle via (s,t) -> (s*(1-t), t); the
    # Jacobian (1-t) becomes the Gauss-Jacobi weight in the t direction.
    m = max(1, (degree + 2) // 2)
    xs, ws = _gauss_legendre_01(m)
    xt, wt = _gauss_jacobi_01(m, 1.0)
    s, t = np.meshgrid(xs, xt, indexing="ij")
    pts = np.column_stack([(s * (1.0 - t)).ravel(), t.ravel()])
    wts = np.outer(ws, wt).ravel()
    return pts, wts


def _tetrahedron_rule(degree):
    # (s,t,r) -> (s*(1-t)*(1-r), t*(1-r), r); Jacobian (1-t)*(1-r)**2.
    m = max(1, (degree + 2) // 2)
    xs, ws = _gauss_legendre_01(m)
    xt, wt = _gauss_jacobi_01(m, 1.0)
    xr, wr = _gauss_jacobi_01(m, 2.0)
    s, t, r = np.meshgrid(xs, xt, xr, indexing="ij")
    x = s * (1.0 - t) * (1.0 - r)
    y = t * (1.0 - r)
    z = r
    pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    wts = np.einsum("i,j,k->ijk", ws, wt, wr).ravel()
    return pts, wts


_BUILDERS = {
    "interval": _interval_rule,
    "triangle": _triangle_rule,
    "tetrahedron": _tetrahedron_rule,
}


@lru_cache(maxsize=None)
def quadrature_for(degree, domain):
    """Return a rule exact for polynomials up to ``degree`` on ``domain``."""
    if domain not in _BUILDERS:
        raise QuadratureError(
            f"unknown quadrature domain {domain!r}; "
            f"expected one of {sorted(_BUILDERS)}"
        )
    if degree < 0:
        raise QuadratureError(f"quadrature degree must be nonnegative, got {degree}")
    if degree > MAX_DEGREE:
        raise QuadratureError(
            f"quadrature degree {degree} exceeds the table maximum {MAX_DEGREE}"
        )
    pts, wts = _BUILDERS[domain](degree)
    pts = np.ascontiguousarray(pts, dtype=float)
    wts = np.ascontiguousarray(wts, dtype=float)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(domain=domain, degree=degree, points=pts, weights=wts)


def reference_measure(domain):
    return _REF_MEASURE[domain]
