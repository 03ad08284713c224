"""Complete electrode model on the unit disk.

Unknowns are the interior potential ``u`` (P2) and the electrode voltages
``U``.  The variational problem

    int sigma grad u . grad v + sum_l (1/z_l) int_{E_l} (u - U_l)(v - V_l) = sum_l I_l V_l

gives the symmetric block system ``[[A + B, -C], [-C^T, D]] [u; U] = [0; I]``
whose kernel is the common constant.  It is solved by conjugate gradients
preconditioned with a factorization of the unit-conductivity system, and
grounded afterwards so that the electrode voltages sum to zero.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import fem
from .errors import ArcsNotResolved, NotMeanFree, ValidationError
from .mesh import DEFAULT_DEGREE, Mesh

DEFAULT_WIDTH = np.pi / 32
DEFAULT_IMPEDANCE = 0.01
EDGE_POINTS = 4
ARC_TOL = 1e-9


@dataclass(frozen=True)
class CemElectrodes:
    """Electrode arcs on the unit circle: centre angles, arc width (radians,
    equal to arc length) and contact impedances."""

    centers: tuple
    width: float = DEFAULT_WIDTH
    impedance: tuple = DEFAULT_IMPEDANCE

    def __post_init__(self):
        c = tuple(float(t) for t in np.atleast_1d(self.centers))
        object.__setattr__(self, "centers", c)
        z = np.broadcast_to(np.asarray(self.impedance, dtype=float), (len(c),))
        object.__setattr__(self, "impedance", tuple(z.tolist()))
        if len(c) < 2:
            raise ValidationError("need at least two electrodes", field="centers")
        if not self.width > 0:
            raise ValidationError("must be positive", field="width")
        if np.any(z <= 0):
            raise ValidationError("must be positive", field="impedance")
        s = np.sort(np.mod(c, 2 * np.pi))
        gaps = np.diff(np.append(s, s[0] + 2 * np.pi))
        if gaps.min() <= self.width:
            raise ValidationError("electrode arcs overlap", field="width")

    @property
    def L(self):
        return len(self.centers)

    def with_width(self, width):
        return CemElectrodes(self.centers, width, self.impedance)


@dataclass
class CemSolution:
    potential: np.ndarray   # (n_nodes,) or (n_nodes, m)
    voltages: np.ndarray    # (L,) or (L, m), summing to zero
    iterations: int = 0


def trig_current_basis(angles):
    """``L - 1`` mean-free current patterns ``cos(m theta_l)``, ``sin(m theta_l)``.

    Pattern ``j`` (1-based) is the cosine of order ``m = (j + 1) // 2`` for odd
    ``j`` and the sine of order ``m = j // 2`` for even ``j``.  Returned as
    an array of shape (L - 1, L).
    """
    th = np.asarray(angles, dtype=float)
    L = len(th)
    if L < 2:
        raise ValidationError("need at least two electrodes", field="electrodes")
    rows = []
    for j in range(1, L):
        m = (j + 1) // 2
        v = np.cos(m * th) if j % 2 == 1 else np.sin(m * th)
        rows.append(v - v.mean())
    return np.array(rows)


def electrode_edges(mesh: Mesh, electrodes: CemElectrodes):
    """Boundary-edge indices covering each electrode arc.

    Raises
    ------
    ArcsNotResolved
        If an arc endpoint is not a boundary vertex of the mesh.
    """
    ba = mesh.boundary_angles
    mid = 0.5 * (ba[:, 0] + ba[:, 1])
    out = []
    for l, c in enumerate(electrodes.centers):
        for end in (c - 0.5 * electrodes.width, c + 0.5 * electrodes.width):
            if mesh.vertex_angle_distance(end) > ARC_TOL:
                raise ArcsNotResolved(f"endpoint {np.degrees(end):.6f} deg of electrode {l} "
                                      "is not a mesh vertex", electrode=l)
        d = np.abs(np.angle(np.exp(1j * (mid - c))))
        out.append(np.nonzero(d < 0.5 * electrodes.width)[0])
    return out


class CemOperator:
    """Assembled electrode blocks for one mesh and electrode set."""

    def __init__(self, mesh: Mesh, electrodes: CemElectrodes, degree=DEFAULT_DEGREE):
        self.mesh = mesh
        self.electrodes = electrodes
        self.degree = degree
        n, L = mesh.n_nodes, electrodes.L
        pts, w, N = fem.edge_quadrature(mesh, EDGE_POINTS)
        be = mesh.boundary_edges
        rows, cols, vals = [], [], []
        C = np.zeros((n, L))
        D = np.zeros(L)
        for l, edges in enumerate(electrode_edges(mesh, electrodes)):
            zinv = 1.0 / electrodes.impedance[l]
            we = w[edges] * zinv                                       # (b, q)
            loc = np.einsum("bq,qi,qj->bij", we, N, N)
            nodes = be[edges]
            rows.append(np.repeat(nodes, 3, axis=1).ravel())
            cols.append(np.tile(nodes, (1, 3)).ravel())
            vals.append(loc.ravel())
            np.add.at(C[:, l], nodes.ravel(), np.einsum("bq,qi->bi", we, N).ravel())
            D[l] = we.sum()
        Bm = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n, n)).tocsr()
        self.B = Bm
        self.C = sp.csr_matrix(C)
        self.D = sp.diags(D)
        self.lengths = D * np.asarray(electrodes.impedance)
        self._precond = None

    def matrix(self, A):
        return sp.bmat([[A + self.B, -self.C], [-self.C.T, self.D]], format="csr")

    def preconditioner(self):
        if self._precond is None:
            K1 = self.matrix(fem.stiffness_matrix(self.mesh, 1.0, self.degree))
            lu = splu(K1[1:, 1:].tocsc())

            def apply(r):
                z = np.zeros_like(r)
                z[1:] = lu.solve(np.ascontiguousarray(r[1:]))
                return z - z.mean(axis=0)

            self._precond = apply
        return self._precond

    def solve(self, sigma, currents, tol=fem.DEFAULT_TOL, x0=None):
        I = np.asarray(currents, dtype=float)
        vec = I.ndim == 1
        I2 = I[:, None] if vec else I
        n, L = self.mesh.n_nodes, self.electrodes.L
        if I2.shape[0] != L:
            raise ValidationError(f"current needs {L} entries", field="current")
        if np.any(np.abs(I2.sum(axis=0)) > 1e-12 * np.maximum(1.0, np.abs(I2).max(axis=0))):
            raise NotMeanFree("electrode currents must sum to zero")
        A = fem.assemble_stiffness(self.mesh, sigma, self.degree, preconditioner=None).matrix
        K = self.matrix(A)
        rhs = np.vstack([np.zeros((n, I2.shape[1])), I2])
        if not np.any(rhs):
            X, it = np.zeros_like(rhs), 0
        else:
            X, it, _ = fem.pcg(K, rhs, self.preconditioner(), x0=x0, tol=tol)
        U = X[n:]
        shift = U.mean(axis=0)
        u, U = X[:n] - shift, U - shift
        if vec:
            u, U = u[:, 0], U[:, 0]
        return CemSolution(u, U, it)

    def net_currents(self, sol: CemSolution):
        """``(1/z_l) int_{E_l} (U_l - u)`` for each electrode."""
        return self.D @ sol.voltages - self.C.T @ sol.potential


def solve_cem(mesh: Mesh, sigma, electrodes: CemElectrodes, current, tol=fem.DEFAULT_TOL,
              operator: CemOperator = None):
    """Electrode voltages and interior potential for one or several current
    patterns (columns)."""
    op = operator or CemOperator(mesh, electrodes)
    return op.solve(sigma, current, tol)


def stacked_voltages(mesh, sigma, electrodes, currents=None, operator=None):
    """Voltage vectors for each pattern of ``currents`` (rows), shape (m, L)."""
    op = operator or CemOperator(mesh, electrodes)
    if currents is None:
        currents = trig_current_basis(electrodes.centers)
    return op.solve(sigma, np.asarray(currents).T).voltages.T


def e_cem(mesh: Mesh, sigma_eps, electrodes: CemElectrodes, currents=None, operator=None,
          return_parts=False):
    """Relative Euclidean discrepancy of stacked electrode voltages between
    ``sigma_eps`` and the unit conductivity."""
    op = operator or CemOperator(mesh, electrodes)
    if currents is None:
        currents = trig_current_basis(electrodes.centers)
    U1 = stacked_voltages(mesh, sigma_eps, electrodes, currents, op)
    U0 = stacked_voltages(mesh, 1.0, electrodes, currents, op)
    e = float(np.linalg.norm(U1 - U0) / np.linalg.norm(U0))
    if return_parts:
        per = np.linalg.norm(U1 - U0, axis=1) / np.linalg.norm(U0, axis=1)
        return e, per, U1, U0
    return e
