"""P2 finite elements for the pure-Neumann conductivity equation.

Conductivities and perturbations are sampled directly at quadrature points;
only potentials live on the P2 nodes.  Stiffness matrices have the constants
as their kernel, and :func:`solve_neumann` works on the quotient space by
running preconditioned conjugate gradients on loads orthogonal to the
constants, then fixing the representative with zero mean over the disk.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .errors import IncompatibleLoad, NoConvergence, NonpositiveConductivity, SupportViolation
from .mesh import DEFAULT_DEGREE, Mesh, map_reference, p2_shape, p2_shape_grad
from .quadrature import gauss_interval

ALL = "all"
INSIDE_OMEGA = "inside_omega"
DEFAULT_TOL = 1e-12
SUPPORT_TOL = 1e-14


@dataclass(frozen=True)
class FieldOnMesh:
    """Either P2 nodal coefficients or a scalar field at quadrature points.

    ``kind`` is ``"nodal"`` (``data`` has one entry per node) or
    ``"quadrature"`` (``data`` has shape (E, Q) for rule ``degree``).
    """

    kind: str
    data: np.ndarray
    degree: int = DEFAULT_DEGREE

    @classmethod
    def nodal(cls, coeffs):
        return cls("nodal", np.asarray(coeffs, dtype=float))

    @classmethod
    def sampled(cls, mesh, f, degree=DEFAULT_DEGREE):
        return cls("quadrature", sample(mesh, f, degree), degree)

    def at_quadrature(self, mesh, degree=DEFAULT_DEGREE):
        if self.kind == "nodal":
            return fe_values_at_quadrature(mesh, self.data, degree)
        if self.degree != degree:
            raise ValueError(f"field sampled for degree {self.degree}, requested {degree}")
        return self.data


def sample(mesh: Mesh, f, degree=DEFAULT_DEGREE):
    """Sample a scalar, an (E, Q) table, a :class:`FieldOnMesh` or a callable
    ``f(points[..., 2])`` at the quadrature points of ``mesh``."""
    qt = mesh.quad_table(degree)
    shape = qt.weights.shape
    if isinstance(f, FieldOnMesh):
        return f.at_quadrature(mesh, degree)
    if callable(f):
        return np.broadcast_to(np.asarray(f(qt.points), dtype=float), shape)
    a = np.asarray(f, dtype=float)
    return np.broadcast_to(a, shape)


# -- assembly -----------------------------------------------------------------

def _dof_pattern(mesh):
    key = "dof_pattern"
    if key not in mesh._cache:
        t = mesh.triangles
        rows = np.repeat(t, 6, axis=1).ravel()
        cols = np.tile(t, (1, 6)).ravel()
        mesh._cache[key] = (rows, cols)
    return mesh._cache[key]


def _scatter_matrix(mesh, local, elements=None):
    rows, cols = _dof_pattern(mesh)
    if elements is not None:
        rows = rows.reshape(-1, 36)[elements].ravel()
        cols = cols.reshape(-1, 36)[elements].ravel()
    n = mesh.n_nodes
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def stiffness_matrix(mesh: Mesh, coef, degree=DEFAULT_DEGREE, elements=None):
    """Sparse ``integral of coef grad phi_p . grad phi_q``, optionally over a
    subset of elements (``coef`` then has one row per listed element)."""
    qt = mesh.quad_table(degree)
    w, g = qt.weights, qt.grads
    if elements is not None:
        w, g = w[elements], g[elements]
    c = np.broadcast_to(np.asarray(coef, dtype=float), w.shape)
    local = np.einsum("eq,eqia,eqja->eij", w * c, g, g)
    return _scatter_matrix(mesh, local, elements)


def _scatter_vector(mesh, local, elements=None):
    """Accumulate element vectors (E, 6[, m]) into global vectors."""
    n = mesh.n_nodes
    t = (mesh.triangles if elements is None else mesh.triangles[elements]).ravel()
    if local.ndim == 2:
        return np.bincount(t, weights=local.ravel(), minlength=n)
    flat = local.reshape(-1, local.shape[-1])
    return np.stack([np.bincount(t, weights=flat[:, c], minlength=n) for c in range(flat.shape[1])], axis=1)


def node_masses(mesh, degree=DEFAULT_DEGREE):
    """``m_p = integral of phi_p`` over the disk."""
    key = ("masses", degree)
    if key not in mesh._cache:
        qt = mesh.quad_table(degree)
        mesh._cache[key] = _scatter_vector(mesh, np.einsum("eq,qi->ei", qt.weights, qt.values))
    return mesh._cache[key]


@dataclass
class SparseSystem:
    """Symmetric stiffness matrix with the data needed for quotient solves."""

    matrix: sp.csr_matrix
    masses: np.ndarray
    area: float
    preconditioner: Optional[Callable] = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape


def assemble_stiffness(mesh: Mesh, sigma=1.0, degree=DEFAULT_DEGREE, preconditioner="laplacian"):
    """``A_pq = integral of sigma grad phi_p . grad phi_q`` over the disk.

    Parameters
    ----------
    sigma : scalar, (E, Q) array, FieldOnMesh or callable
        Conductivity sampled at the quadrature points of the rule ``degree``.
    preconditioner : {"laplacian", "jacobi", None}
        ``"laplacian"`` preconditions with a factorization of the
        unit-conductivity stiffness matrix, cached on the mesh; the iteration
        count then depends only on the contrast of ``sigma``.
    """
    qt = mesh.quad_table(degree)
    s = sample(mesh, sigma, degree)
    if not np.all(np.isfinite(s)):
        raise NonpositiveConductivity("conductivity is not finite at some quadrature point")
    smin = float(s.min())
    if smin <= 0.0:
        e, q = np.unravel_index(int(np.argmin(s)), s.shape)
        loc = qt.points[e, q]
        raise NonpositiveConductivity(
            f"conductivity {smin:.3g} <= 0 at ({loc[0]:.4f}, {loc[1]:.4f})",
            minimum=smin, location=tuple(loc))
    A = stiffness_matrix(mesh, s, degree)
    m = node_masses(mesh, degree)
    system = SparseSystem(A, m, float(m.sum()))
    if preconditioner == "laplacian":
        system.preconditioner = laplacian_preconditioner(mesh, degree)
    elif preconditioner == "jacobi":
        d = A.diagonal().copy()
        system.preconditioner = lambda r: r / (d[:, None] if r.ndim == 2 else d)
    return system


def laplacian_preconditioner(mesh, degree=DEFAULT_DEGREE):
    """Solver for the unit-conductivity stiffness matrix grounded at node 0,
    projected onto vectors with zero sum; cached on the mesh."""
    key = ("laplace_lu", degree)
    if key not in mesh._cache:
        A1 = stiffness_matrix(mesh, 1.0, degree)
        # grounding one node makes the matrix nonsingular
        keep = np.arange(1, mesh.n_nodes)
        lu = splu(A1[keep][:, keep].tocsc())

        def apply(r):
            z = np.zeros_like(r)
            z[1:] = lu.solve(np.ascontiguousarray(r[1:]))
            return z - z.mean(axis=0)

        mesh._cache[key] = apply
    return mesh._cache[key]


def assemble_load(mesh: Mesh, f, degree=DEFAULT_DEGREE):
    """``b_p = integral of f phi_p`` over the disk."""
    qt = mesh.quad_table(degree)
    s = sample(mesh, f, degree)
    return _scatter_vector(mesh, np.einsum("eq,qi->ei", qt.weights * s, qt.values))


def assemble_gradient_load(mesh: Mesh, kappa, grads, degree=DEFAULT_DEGREE, region=ALL):
    """``b_p = integral of kappa g . grad phi_p`` for vector fields ``g``.

    ``grads`` is a callable returning (..., 2) gradients at points, or a
    table of shape (E, Q, 2) or (m, E, Q, 2) for ``m`` loads at once.
    Returns shape (n_nodes,) or (n_nodes, m).
    """
    qt = mesh.quad_table(degree)
    k = sample(mesh, kappa, degree)
    g = grads(qt.points) if callable(grads) else np.asarray(grads, dtype=float)
    w = qt.weights * k
    if region == INSIDE_OMEGA:
        w = w * mesh.inside[:, None]
    if g.ndim == 3:
        return _scatter_vector(mesh, np.einsum("eq,eqa,eqia->ei", w, g, qt.grads))
    local = np.einsum("eq,meqa,eqia->eim", w, g, qt.grads)
    return _scatter_vector(mesh, local)


def assemble_corrector_load(mesh: Mesh, kappa, grad_u0, degree=DEFAULT_DEGREE):
    """``b_p = integral over omega of kappa grad u0 . grad phi_p``.

    ``kappa`` must vanish at every quadrature point outside omega.
    """
    k = sample(mesh, kappa, degree)
    outside = ~mesh.inside
    if np.any(np.abs(k[outside]) > SUPPORT_TOL):
        bad = float(np.abs(k[outside]).max())
        raise SupportViolation(f"perturbation {bad:.3g} sampled outside omega", maximum=bad)
    return assemble_gradient_load(mesh, k, grad_u0, degree, region=INSIDE_OMEGA)


def edge_quadrature(mesh: Mesh, n_points=4, edges=None):
    """Gauss data on curved boundary edges.

    Returns ``(points (B, n, 2), weights (B, n), shape_values (n, 3))``; the
    weights include the arc-length Jacobian of the quadratic edge map.
    """
    t, w = gauss_interval(n_points)
    be = mesh.boundary_edges if edges is None else mesh.boundary_edges[edges]
    X = mesh.nodes[be]                                            # (B, 3, 2)
    N = np.stack([(1 - t) * (1 - 2 * t), 4 * t * (1 - t), t * (2 * t - 1)], axis=1)
    dN = np.stack([4 * t - 3, 4 - 8 * t, 4 * t - 1], axis=1)
    pts = np.einsum("qi,bia->bqa", N, X)
    tang = np.einsum("qi,bia->bqa", dN, X)
    jac = np.linalg.norm(tang, axis=-1)
    return pts, w[None, :] * jac, N


def assemble_boundary_load(mesh: Mesh, g, n_points=4):
    """``b_p = integral over the unit circle of g phi_p``."""
    pts, w, N = edge_quadrature(mesh, n_points)
    vals = np.asarray(g(pts), dtype=float) if callable(g) else np.broadcast_to(g, w.shape)
    local = np.einsum("bq,qi->bi", w * vals, N)
    return np.bincount(mesh.boundary_edges.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


# -- linear algebra -----------------------------------------------------------

def pcg(A, b, precond=None, x0=None, tol=DEFAULT_TOL, maxiter=None):
    """Preconditioned conjugate gradients on the columns of ``b``.

    Columns are iterated together but converge independently: a column stops
    updating once its recursive residual satisfies ``|r| <= tol |b|``.
    Returns ``(x, iterations, relative_residuals)``.
    """
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    B = b[:, None] if vec else b
    n, m = B.shape
    maxiter = maxiter or max(10 * n, 100)
    M = precond or (lambda r: r)
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=float).reshape(n, m)
    R = B - A @ X
    bnorm = np.linalg.norm(B, axis=0)
    bnorm[bnorm == 0.0] = 1.0
    active = np.linalg.norm(R, axis=0) > tol * bnorm
    Z = M(R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    while active.any() and it < maxiter:
        it += 1
        cols = np.nonzero(active)[0]
        Ap = A @ P[:, cols]
        pAp = np.einsum("ij,ij->j", P[:, cols], Ap)
        alpha = rz[cols] / pAp
        X[:, cols] += alpha * P[:, cols]
        R[:, cols] -= alpha * Ap
        res = np.linalg.norm(R[:, cols], axis=0)
        done = res <= tol * bnorm[cols]
        active[cols[done]] = False
        cols = cols[~done]
        if len(cols) == 0:
            break
        Zc = M(R[:, cols])
        rz_new = np.einsum("ij,ij->j", R[:, cols], Zc)
        beta = rz_new / rz[cols]
        rz[cols] = rz_new
        P[:, cols] = Zc + beta * P[:, cols]
    rel = np.linalg.norm(B - A @ X, axis=0) / bnorm
    if active.any():
        raise NoConvergence(f"PCG did not reach tol {tol:g} in {maxiter} iterations",
                            iterations=it, residual=float(rel.max()))
    return (X[:, 0] if vec else X), it, rel


def solve_neumann(system: SparseSystem, load, tol=DEFAULT_TOL, maxiter=None, x0=None, compat_tol=1e-8):
    """Zero-mean solution of ``A u = b`` for loads orthogonal to constants.

    ``load`` may hold several right-hand sides as columns.  The load is
    checked for compatibility (``|sum b| <= compat_tol * |b|_1``) and its
    residual mismatch with the constants is projected out before solving.
    """
    b = np.asarray(load, dtype=float)
    vec = b.ndim == 1
    B = b[:, None] if vec else b
    s = B.sum(axis=0)
    l1 = np.abs(B).sum(axis=0)
    bad = np.abs(s) > compat_tol * np.maximum(l1, 1e-300)
    if np.any(bad & (l1 > 0)):
        raise IncompatibleLoad(f"load has nonzero total {s[bad].max():.3g}", total=float(np.abs(s).max()))
    B = B - s / B.shape[0]
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(B.shape)
    X, _, _ = pcg(system.matrix, B, system.preconditioner, x0=x0, tol=tol, maxiter=maxiter)
    X = X - (system.masses @ X) / system.area
    return X[:, 0] if vec else X


# -- evaluation -----------------------------------------------------------------

def fe_values_at_quadrature(mesh: Mesh, coeffs, degree=DEFAULT_DEGREE):
    """Values of P2 fields at quadrature points: (E, Q) or (m, E, Q) for
    coefficient arrays of shape (n,) or (n, m)."""
    qt = mesh.quad_table(degree)
    c = np.asarray(coeffs, dtype=float)[mesh.triangles]          # (E, 6[, m])
    if c.ndim == 2:
        return np.einsum("qi,ei->eq", qt.values, c)
    return np.einsum("qi,eim->meq", qt.values, c)


def fe_gradient_at_quadrature(mesh: Mesh, coeffs, degree=DEFAULT_DEGREE):
    """Gradients of P2 fields at quadrature points: (E, Q, 2) or (m, E, Q, 2)."""
    qt = mesh.quad_table(degree)
    c = np.asarray(coeffs, dtype=float)[mesh.triangles]
    if c.ndim == 2:
        return np.einsum("eqia,ei->eqa", qt.grads, c)
    return np.einsum("eqia,eim->meqa", qt.grads, c)


def integrate(mesh: Mesh, integrand, region=ALL, degree=DEFAULT_DEGREE):
    """Quadrature sum of an (..., E, Q) table over all elements or over omega."""
    w = mesh.quad_table(degree).weights
    if region == INSIDE_OMEGA:
        w = w * mesh.inside[:, None]
    elif region != ALL:
        raise ValueError(f"unknown region {region!r}")
    return np.einsum("...eq,eq->...", np.asarray(integrand, dtype=float), w)


def interpolate(mesh: Mesh, f):
    """Nodal interpolant coefficients of a callable ``f(points)``."""
    return np.asarray(f(mesh.nodes), dtype=float)


def _element_locator(mesh):
    if "kdtree" not in mesh._cache:
        mesh._cache["kdtree"] = cKDTree(mesh.centroids())
    return mesh._cache["kdtree"]


def locate(mesh: Mesh, point, candidates=12):
    """Element index and reference coordinates of a point inside the disk."""
    x = np.asarray(point, dtype=float)
    _, idx = _element_locator(mesh).query(x, k=min(candidates, mesh.n_elements))
    for e in np.atleast_1d(idx):
        X = mesh.nodes[mesh.triangles[e]]
        ref = np.array([1 / 3, 1 / 3])
        for _ in range(30):
            N = p2_shape(ref[None])[0]
            J = p2_shape_grad(ref[None])[0].T @ X          # (2, 2): rows d/dref
            r = N @ X - x
            step = np.linalg.solve(J.T, r)
            ref = ref - step
            if np.abs(step).max() < 1e-14:
                break
        s, t = ref
        if s >= -1e-10 and t >= -1e-10 and s + t <= 1 + 1e-10:
            return int(e), ref
    raise ValueError(f"point {tuple(x)} not found in mesh")


def evaluate(mesh: Mesh, coeffs, points):
    """Point values of a P2 field."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(pts))
    for k, p in enumerate(pts):
        e, ref = locate(mesh, p)
        out[k] = p2_shape(ref[None])[0] @ np.asarray(coeffs)[mesh.triangles[e]]
    return out


def physical_points(mesh: Mesh, ref, elements=None):
    return map_reference(mesh, np.asarray(ref, dtype=float), elements)[0]
