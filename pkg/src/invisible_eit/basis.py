"""Dual perturbation basis and the projected seed on omega.

The gradient products ``psi_k`` are sampled at the quadrature points of the
omega elements.  With quadrature weights ``w`` the weighted sample matrix
``B = diag(sqrt(w)) Psi`` satisfies ``B^T B = A``, the Gram matrix of the
family.  Rather than inverting ``A`` (whose condition number is the square
of that of ``B``), the dual functions are formed from a column-pivoted QR
factorization ``B P = Q R``:

    dual values at the points:      (Q R^{-T}) / sqrt(w)   (columns permuted back)
    projection onto span{psi}:      Q Q^T

Both are exact rewrites of ``Psi A^{-1}`` and of the L2 projection, but lose
only one factor of the condition number of ``B``.
"""

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import GramSingular, SeedInSpan
from .expr import parse_expression
from .mesh import DEFAULT_DEGREE, Mesh
from .potentials import DiskPotentials, ElectrodeConfig, all_pairs, psi_table

PIVOT_RTOL = 1e-13
SEED_RTOL = 1e-12

#: Seeds used in the CEM validation table, by name.
BUILTIN_SEEDS = {
    "one": "1",
    "affine": "x + y + 1",
    "gaussian": "exp(-(x + 0.5)^2 - y^2)",
    "minus_y": "-y",
    "x": "x",
}


def make_seed(seed):
    """Callable seed from a built-in name, an expression string, a number or a callable."""
    if callable(seed):
        return seed
    if isinstance(seed, str):
        return parse_expression(BUILTIN_SEEDS.get(seed.strip(), seed))
    value = float(seed)
    return lambda p: np.full(np.shape(p)[:-1], value)


def _as_potentials(source):
    return DiskPotentials(source) if isinstance(source, ElectrodeConfig) else source


@dataclass(frozen=True)
class OmegaSamples:
    """Quadrature points of the omega elements, flattened."""

    elements: np.ndarray     # indices of omega elements
    points: np.ndarray       # (P, 2)
    weights: np.ndarray      # (P,)
    degree: int

    @classmethod
    def from_mesh(cls, mesh: Mesh, degree=DEFAULT_DEGREE):
        qt = mesh.quad_table(degree)
        el = np.nonzero(mesh.inside)[0]
        return cls(el, qt.points[el].reshape(-1, 2), qt.weights[el].ravel(), degree)

    def scatter(self, mesh, values):
        """Expand point values (..., P) to a full (..., E, Q) table, zero off omega."""
        qt = mesh.quad_table(self.degree)
        E, Q = qt.weights.shape
        lead = np.shape(values)[:-1]
        out = np.zeros(lead + (E, Q))
        out[..., self.elements, :] = np.reshape(values, lead + (len(self.elements), Q))
        return out


def psi_samples(potentials, points):
    """Matrix ``Psi`` of shape (P, K) with ``Psi[p, k-1] = psi_k(points[p])``."""
    g = potentials.gradients(points)
    return psi_table(g).T


def build_gram(mesh: Mesh, cfg, degree=DEFAULT_DEGREE):
    """``A[k, l] = integral over omega of psi_k psi_l`` (0-based indices)."""
    om = OmegaSamples.from_mesh(mesh, degree)
    psi = psi_samples(_as_potentials(cfg), om.points)
    A = psi.T @ (om.weights[:, None] * psi)
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class PerturbationBasis:
    """Dual functions of the ``psi`` family on omega plus the projected seed.

    Attributes
    ----------
    gram : (K, K) array
        Gram matrix of the ``psi`` family over omega.
    r_factor, permutation :
        Pivoted QR factor of the weighted samples, ``B[:, perm] = Q R``.
    kappa_coeffs : (K, K) array
        Row ``k`` holds the coefficients of the ``k``-th dual function in the
        ``psi`` basis (the inverse Gram matrix); kept for reference, since
        evaluation goes through the QR factor.
    dual_values : (P, K) array
        Dual functions at the omega quadrature points.
    kappa0_values : (P,) array or None
        Projected seed at the omega quadrature points.
    kappa0_coeffs : (K,) array or None
        Coefficients ``c`` with ``kappa0 = seed - sum_k c_k psi_k`` on omega.
    """

    potentials: object
    samples: OmegaSamples
    gram: np.ndarray
    r_factor: np.ndarray
    permutation: np.ndarray
    kappa_coeffs: np.ndarray
    dual_values: np.ndarray
    condition_estimate: float
    min_pivot_ratio: float
    q_factor: np.ndarray
    omega: object = None
    kappa0_seed: Optional[Callable] = None
    kappa0_values: Optional[np.ndarray] = None
    kappa0_coeffs: Optional[np.ndarray] = None
    kappa0_norm2: float = 0.0
    seed_norm2: float = 0.0

    @property
    def N(self):
        return self.potentials.N

    @property
    def K(self):
        return self.gram.shape[0]

    # -- pointwise evaluation ------------------------------------------------
    def _qcoords(self, points):
        psi = psi_samples(self.potentials, points)
        return sla.solve_triangular(self.r_factor, psi[:, self.permutation].T, trans="T").T

    def _inside(self, points):
        return self.omega.contains(np.asarray(points, dtype=float).reshape(-1, 2), tol=1e-12)

    def dual_at(self, points):
        """Dual functions at arbitrary points, (P, K); zero outside omega."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.zeros((len(p), self.K))
        inside = self._inside(p)
        if inside.any():
            q = self._qcoords(p[inside])
            vals = sla.solve_triangular(self.r_factor, q.T, lower=False).T
            out[np.ix_(inside, self.permutation)] = vals
        return out

    def kappa0_at(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.zeros(len(p))
        if self.kappa0_values is None:
            return out
        inside = self._inside(p)
        if inside.any():
            psi = psi_samples(self.potentials, p[inside])
            out[inside] = self.kappa0_seed(p[inside]) - psi @ self.kappa0_coeffs
        return out

    def with_zero_kappa0(self):
        """Copy whose projected seed is identically zero."""
        P = len(self.samples.weights)
        return replace(self, kappa0_seed=lambda p: np.zeros(np.shape(p)[:-1]),
                       kappa0_values=np.zeros(P), kappa0_coeffs=np.zeros(self.K),
                       kappa0_norm2=0.0, seed_norm2=0.0)


def build_dual_basis(mesh: Mesh, cfg, degree=DEFAULT_DEGREE):
    """Factor the weighted ``psi`` samples and form the dual functions.

    ``cfg`` is an :class:`ElectrodeConfig` or any object with ``N`` and a
    ``gradients(points)`` method (e.g. transported potentials).

    Raises
    ------
    GramSingular
        If a pivot of the Gram matrix falls below ``1e-13 * trace``.
    """
    pots = _as_potentials(cfg)
    om = OmegaSamples.from_mesh(mesh, degree)
    psi = psi_samples(pots, om.points)
    sw = np.sqrt(om.weights)
    B = sw[:, None] * psi
    Q, R, perm = sla.qr(B, mode="economic", pivoting=True)
    pivots = np.diag(R) ** 2
    trace = float(np.sum(B * B))
    ratio = float(pivots.min() / trace)
    if not ratio >= PIVOT_RTOL:
        k = int(np.argmin(pivots))
        raise GramSingular(f"Gram pivot {pivots[k]:.3g} below {PIVOT_RTOL:g} * trace ({trace:.3g})",
                           pivot=float(pivots[k]), trace=trace)
    K = psi.shape[1]
    Rinv = sla.solve_triangular(R, np.eye(K))
    coeffs = np.zeros((K, K))
    coeffs[np.ix_(perm, perm)] = Rinv @ Rinv.T
    dual = np.empty_like(psi)
    dual[:, perm] = (Q @ Rinv.T) / sw[:, None]
    gram = B.T @ B
    s = np.linalg.svd(R, compute_uv=False)
    basis = PerturbationBasis(
        potentials=pots, samples=om, gram=0.5 * (gram + gram.T), r_factor=R, permutation=perm,
        kappa_coeffs=coeffs, dual_values=dual, condition_estimate=float((s[0] / s[-1]) ** 2),
        min_pivot_ratio=ratio, q_factor=Q, omega=mesh.omega)
    return basis


def project_kappa0(basis: PerturbationBasis, kappa0_seed, mesh: Mesh = None):
    """Remove from the seed its L2(omega) projection onto span{psi_k}.

    The result is L2-orthogonal to every ``psi_k``, which is exactly the
    requirement that the seed contributes nothing to the pairings with the
    gradient products.  The projection is applied twice to suppress rounding.

    Raises
    ------
    SeedInSpan
        If the remainder has ``||kappa0||^2 < 1e-12 ||seed||^2``.
    """
    seed = make_seed(kappa0_seed)
    om = basis.samples
    sw = np.sqrt(om.weights)
    s = np.asarray(seed(om.points), dtype=float) * sw
    seed_norm2 = float(s @ s)
    Q, R = basis.q_factor, basis.r_factor
    c = np.zeros(basis.K)
    r = s.copy()
    for _ in range(2):
        proj = Q.T @ r
        r = r - Q @ proj
        c += proj
    k0_norm2 = float(r @ r)
    if not (seed_norm2 > 0 and k0_norm2 >= SEED_RTOL * seed_norm2):
        raise SeedInSpan(f"projected seed has squared norm {k0_norm2:.3g} "
                         f"against {seed_norm2:.3g} for the seed", residual=k0_norm2)
    coeffs = np.zeros(basis.K)
    coeffs[basis.permutation] = sla.solve_triangular(R, c)
    return replace(basis, kappa0_seed=seed, kappa0_values=r / sw, kappa0_coeffs=coeffs,
                   kappa0_norm2=k0_norm2, seed_norm2=seed_norm2)


def tau_vector(tau):
    """Entries ``tau[i, j]`` (``i <= j``) in pair order, as a length-K vector."""
    tau = np.asarray(tau, dtype=float)
    I, J = all_pairs(tau.shape[0])
    return tau[I, J]


def kappa_eval(basis: PerturbationBasis, tau, points=None, mesh: Mesh = None):
    """The perturbation ``kappa0 + sum_{i<=j} tau_ij kappa_ij``.

    With ``points`` given, evaluates pointwise (zero outside omega).  With
    ``mesh`` given, returns the full (E, Q) quadrature table.  Otherwise
    returns values at the omega quadrature points.
    """
    t = tau_vector(tau)
    if points is not None:
        return basis.kappa0_at(points) + basis.dual_at(points) @ t
    k0 = basis.kappa0_values if basis.kappa0_values is not None else 0.0
    vals = k0 + basis.dual_values @ t
    if mesh is not None:
        return basis.samples.scatter(mesh, vals)
    return vals


def duality_residuals(basis: PerturbationBasis):
    """``(max |int dual_k psi_l - delta_kl|, max |int kappa0 psi_k|)``."""
    om = basis.samples
    psi = psi_samples(basis.potentials, om.points)
    P = basis.dual_values.T @ (om.weights[:, None] * psi)
    d = float(np.abs(P - np.eye(basis.K)).max())
    o = 0.0
    if basis.kappa0_values is not None:
        o = float(np.abs((om.weights * basis.kappa0_values) @ psi).max())
    return d, o


def diagnostics_csv(basis: PerturbationBasis):
    d, o = duality_residuals(basis)
    rows = ["quantity,value",
            f"K,{basis.K}",
            f"condition_estimate,{basis.condition_estimate:.6e}",
            f"min_pivot_ratio,{basis.min_pivot_ratio:.6e}",
            f"duality_residual,{d:.6e}",
            f"kappa0_orthogonality,{o:.6e}",
            f"kappa0_l2_norm,{np.sqrt(basis.kappa0_norm2):.6e}"]
    return "\n".join(rows) + "\n"
