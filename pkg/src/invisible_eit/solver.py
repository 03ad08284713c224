"""Fixed-point construction of measurement-invisible conductivities.

For a perturbation ``kappa(tau) = kappa0 + sum_{i<=j} tau_ij kappa_ij`` and
``sigma = 1 + eps * kappa``, the point-electrode measurement matrix is

    M_ij = -eps * integral over omega of kappa grad(u0_i + eps w_i) . grad u0_j,

where ``w_i`` (the corrector) solves ``div(sigma grad w_i) = -div(kappa grad u0_i)``
with zero mean.  Because the dual functions pair to the identity against the
gradient products, the first-order part of the integral equals ``tau``, and
the update ``tau <- tau - G(tau)`` (``G`` the symmetrized integral) has fixed
points exactly where ``M`` vanishes.
"""

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import fem
from .basis import PerturbationBasis, kappa_eval
from .errors import InvisibleEITError, MaxBackoffsExceeded, NotMeanFree, PositivityViolation
from .mesh import DEFAULT_DEGREE, Mesh
from .potentials import DiskPotentials, ElectrodeConfig

log = logging.getLogger(__name__)

CONVERGED = "CONVERGED"
MAX_ITER_EXCEEDED = "MAX_ITER_EXCEEDED"
DIVERGED = "DIVERGED"


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


@dataclass
class RunConfig:
    """Parameters of the fixed-point run.

    ``divergence_window`` consecutive increases of the discrepancy, an entry
    of ``tau`` above ``gamma_max`` or a conductivity below ``min_sigma``
    count as divergence; the run then restarts from ``tau0`` with ``epsilon``
    multiplied by ``epsilon_backoff``, at most ``max_backoffs`` times.
    """

    epsilon: float
    tau0: Optional[np.ndarray] = None
    stop_tol: float = 1e-8
    max_iter: int = 200
    gamma_max: float = 1e3
    epsilon_backoff: float = 0.5
    min_sigma: float = 1e-3
    max_backoffs: int = 5
    divergence_window: int = 3
    solver_tol: float = fem.DEFAULT_TOL
    compare_naive: bool = True

    def __post_init__(self):
        from .errors import ValidationError
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValidationError("must be positive", field="epsilon")
        if not 0 < self.stop_tol < 1:
            raise ValidationError("must lie in (0, 1)", field="stop_tol")
        for name in ("max_iter", "gamma_max", "min_sigma", "solver_tol"):
            if not getattr(self, name) > 0:
                raise ValidationError("must be positive", field=name)
        if not 0 < self.epsilon_backoff < 1:
            raise ValidationError("must lie in (0, 1)", field="epsilon_backoff")
        if self.max_backoffs < 0:
            raise ValidationError("must be non-negative", field="max_backoffs")


@dataclass
class IterationRecord:
    attempt: int
    iteration: int
    epsilon: float
    discrepancy: float
    tau_max: float
    min_sigma: float


@dataclass
class RunReport:
    converged: bool
    status: str
    iterations: int
    epsilon_requested: float
    epsilon_used: float
    backoffs: int
    tau: np.ndarray
    history: List[IterationRecord] = field(default_factory=list)
    measurement_max: float = float("nan")
    naive_measurement_max: float = float("nan")
    min_sigma: float = float("nan")
    backoff_reasons: List[str] = field(default_factory=list)

    @property
    def discrepancies(self):
        """Discrepancy history of the final attempt."""
        return np.array([r.discrepancy for r in self.history if r.attempt == self.backoffs])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attempt", "iteration", "epsilon", "discrepancy", "tau_max", "min_sigma"])
        for r in self.history:
            w.writerow([r.attempt, r.iteration, repr(r.epsilon), f"{r.discrepancy:.17e}",
                        f"{r.tau_max:.17e}", f"{r.min_sigma:.17e}"])
        return buf.getvalue()

    def summary(self):
        return {
            "converged": bool(self.converged),
            "status": self.status,
            "iterations": int(self.iterations),
            "epsilon_requested": float(self.epsilon_requested),
            "epsilon_used": float(self.epsilon_used),
            "backoff_triggered": self.backoffs > 0,
            "backoffs": int(self.backoffs),
            "backoff_reasons": list(self.backoff_reasons),
            "final_discrepancy": float(self.discrepancies[-1]) if len(self.discrepancies) else None,
            "tau_max": float(np.abs(self.tau).max()) if self.tau is not None else None,
            "measurement_max": _json_float(self.measurement_max),
            "naive_measurement_max": _json_float(self.naive_measurement_max),
            "min_sigma": _json_float(self.min_sigma),
        }

    def summary_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _json_float(x):
    x = float(x)
    return x if np.isfinite(x) else None


class CorrectorProblem:
    """Cached data for repeated corrector solves on one mesh and basis.

    Only omega elements carry a perturbation, so the stiffness matrix is the
    unit Laplacian plus ``eps`` times a matrix assembled over omega, and all
    loads and integrals run over omega elements.
    """

    def __init__(self, mesh: Mesh, basis: PerturbationBasis, degree=DEFAULT_DEGREE,
                 tol=fem.DEFAULT_TOL):
        self.mesh = mesh
        self.basis = basis
        self.degree = degree
        self.tol = tol
        qt = mesh.quad_table(degree)
        self.el = basis.samples.elements
        self.weights = qt.weights[self.el]
        self.gphi = qt.grads[self.el]
        self.points = qt.points[self.el]
        self.grad_u0 = basis.potentials.gradients(self.points)         # (N, Ei, Q, 2)
        self.laplacian = fem.stiffness_matrix(mesh, 1.0, degree)
        self.precond = fem.laplacian_preconditioner(mesh, degree)
        self.masses = fem.node_masses(mesh, degree)
        self.area = float(self.masses.sum())
        self._warm = None

    @property
    def N(self):
        return self.grad_u0.shape[0]

    def kappa(self, tau):
        """Perturbation at the omega quadrature points, shape (Ei, Q)."""
        return kappa_eval(self.basis, tau).reshape(self.weights.shape)

    def min_sigma(self, eps, kappa):
        return float(min(1.0, 1.0 + eps * kappa.min())) if kappa.size else 1.0

    def check_positivity(self, eps, kappa, floor):
        s = 1.0 + eps * kappa
        if s.size and s.min() < floor:
            e, q = np.unravel_index(int(np.argmin(s)), s.shape)
            loc = self.points[e, q]
            raise PositivityViolation(
                f"conductivity {s.min():.3g} below {floor:g} at ({loc[0]:.4f}, {loc[1]:.4f})",
                minimum=float(s.min()), location=tuple(loc))

    def system(self, eps, kappa):
        A = self.laplacian
        if eps != 0.0:
            A = A + fem.stiffness_matrix(self.mesh, eps * kappa, self.degree, elements=self.el)
        return fem.SparseSystem(A, self.masses, self.area, self.precond)

    def loads(self, kappa):
        """Columns ``integral of kappa grad u0_n . grad phi_p``, shape (n, N)."""
        local = np.einsum("eq,neqa,eqia->ein", self.weights * kappa, self.grad_u0, self.gphi)
        return fem._scatter_vector(self.mesh, local, self.el)

    def solve(self, eps, kappa, warm_start=True):
        """Correctors ``w_n`` as P2 coefficients, shape (n, N)."""
        b = self.loads(kappa)
        if not np.any(b):
            return np.zeros_like(b)
        x0 = self._warm if warm_start else None
        U = fem.solve_neumann(self.system(eps, kappa), -b, tol=self.tol, x0=x0)
        self._warm = U
        return U

    def grad_correctors(self, U):
        return np.einsum("eqia,eim->meqa", self.gphi, U[self.mesh.triangles[self.el]])

    def pairing(self, eps, kappa, U):
        """``G_ij = integral of kappa grad(u0_i + eps w_i) . grad u0_j``."""
        g = self.grad_u0 + eps * self.grad_correctors(U) if eps != 0.0 else self.grad_u0
        return np.einsum("eq,ieqa,jeqa->ij", self.weights * kappa, g, self.grad_u0)


def _problem(mesh, basis, problem=None):
    if problem is not None and problem.mesh is mesh and problem.basis is basis:
        return problem
    return CorrectorProblem(mesh, basis)


def solve_corrector(mesh, basis, tau, epsilon, n=None, min_sigma=1e-3, problem=None):
    """Zero-mean corrector for electrode ``n`` (1-based), or all electrodes
    as columns when ``n`` is None."""
    cp = _problem(mesh, basis, problem)
    k = cp.kappa(tau)
    cp.check_positivity(epsilon, k, min_sigma)
    U = cp.solve(epsilon, k, warm_start=False)
    return U if n is None else U[:, n - 1]


def fixed_point_step(mesh, basis, tau_k, epsilon, min_sigma=1e-3, problem=None):
    """One update ``tau - (G + G^T) / 2``."""
    cp = _problem(mesh, basis, problem)
    tau_k = symmetrize(tau_k)
    k = cp.kappa(tau_k)
    cp.check_positivity(epsilon, k, min_sigma)
    U = cp.solve(epsilon, k)
    return tau_k - symmetrize(cp.pairing(epsilon, k, U))


def pem_measurement_matrix(mesh, basis, tau, epsilon, min_sigma=1e-3, problem=None):
    """Point-electrode measurement matrix of ``1 + eps * kappa(tau)``."""
    if epsilon == 0.0:
        n = np.shape(tau)[0]
        return np.zeros((n, n))
    cp = _problem(mesh, basis, problem)
    k = cp.kappa(symmetrize(tau))
    cp.check_positivity(epsilon, k, min_sigma)
    U = cp.solve(epsilon, k)
    return -epsilon * symmetrize(cp.pairing(epsilon, k, U))


def measurement_matrix_from_sigma(mesh: Mesh, sigma, potentials, degree=DEFAULT_DEGREE,
                                  tol=fem.DEFAULT_TOL):
    """Measurement matrix of an arbitrary conductivity ``sigma``.

    ``sigma`` is anything accepted by :func:`fem.sample`; ``sigma - 1`` must
    vanish near the electrodes.  Solves for ``w_n`` with
    ``(sigma grad w, grad v) = -((sigma - 1) grad u0_n, grad v)`` and returns
    ``-integral of (sigma - 1) grad(u0_i + w_i) . grad u0_j``, symmetrized.
    """
    if isinstance(potentials, ElectrodeConfig):
        potentials = DiskPotentials(potentials)
    s = fem.sample(mesh, sigma, degree)
    d = s - 1.0
    el = np.nonzero(np.any(d != 0.0, axis=1))[0]
    N = potentials.N
    if len(el) == 0:
        return np.zeros((N, N))
    qt = mesh.quad_table(degree)
    w, gphi = qt.weights[el], qt.grads[el]
    g0 = potentials.gradients(qt.points[el])
    local = np.einsum("eq,neqa,eqia->ein", w * d[el], g0, gphi)
    b = fem._scatter_vector(mesh, local, el)
    system = fem.assemble_stiffness(mesh, s, degree)
    U = fem.solve_neumann(system, -b, tol=tol)
    gw = np.einsum("eqia,eim->meqa", gphi, U[mesh.triangles[el]])
    M = -np.einsum("eq,ieqa,jeqa->ij", w * d[el], g0 + gw, g0)
    return symmetrize(M)


def measurement_map_apply(m, current, tol=1e-12):
    """Relative electrode potentials produced by a mean-free current pattern.

    ``current`` has length ``N + 1`` (electrodes 0..N).  It is expanded as
    ``sum_n current[n] (e^n - e^0)``; ``m`` maps the coefficients to the
    potential differences against electrode 0.  The returned vector is the
    mean-free representative.
    """
    m = np.asarray(m, dtype=float)
    I = np.asarray(current, dtype=float)
    if I.shape != (m.shape[0] + 1,):
        raise ValueError(f"current must have length {m.shape[0] + 1}")
    if abs(I.sum()) > tol * max(1.0, np.abs(I).max()):
        raise NotMeanFree(f"current sums to {I.sum():.3g}", total=float(I.sum()))
    v = np.concatenate([[0.0], m @ I[1:]])
    return v - v.mean()


class ConductivityField:
    """``sigma = 1 + eps * kappa(tau)``, evaluable at points or on a mesh."""

    def __init__(self, basis: PerturbationBasis, tau, epsilon):
        self.basis = basis
        self.tau = symmetrize(tau)
        self.epsilon = float(epsilon)

    def kappa(self, points):
        p = np.asarray(points, dtype=float)
        return kappa_eval(self.basis, self.tau, points=p.reshape(-1, 2)).reshape(p.shape[:-1])

    def __call__(self, points):
        return 1.0 + self.epsilon * self.kappa(points)

    def kappa_table(self, mesh):
        return kappa_eval(self.basis, self.tau, mesh=mesh)

    def table(self, mesh):
        """Values at the quadrature points of ``mesh`` (the basis mesh)."""
        return 1.0 + self.epsilon * self.kappa_table(mesh)


def run_algorithm(mesh: Mesh, basis: PerturbationBasis, config: RunConfig):
    """Iterate the fixed point until ``sum |tau_new - tau| < stop_tol``.

    Returns ``(ConductivityField, RunReport)``.  Divergence triggers
    epsilon backoff; exhausting the backoffs raises
    :class:`MaxBackoffsExceeded` carrying the report.  Reaching ``max_iter``
    returns a report with ``converged=False``.
    """
    N = basis.N
    cp = CorrectorProblem(mesh, basis, tol=config.solver_tol)
    tau0 = np.zeros((N, N)) if config.tau0 is None else symmetrize(config.tau0)
    eps = float(config.epsilon)
    history, reasons = [], []
    attempt = 0
    while True:
        tau = tau0.copy()
        cp._warm = None
        status, reason, increases = None, None, 0
        prev = np.inf
        it = 0
        smin = cp.min_sigma(eps, cp.kappa(tau))
        while it < config.max_iter:
            k = cp.kappa(tau)
            smin = cp.min_sigma(eps, k)
            try:
                cp.check_positivity(eps, k, config.min_sigma)
            except PositivityViolation as err:
                reason = f"{err.code}: {err}"
                break
            U = cp.solve(eps, k)
            tau_new = tau - symmetrize(cp.pairing(eps, k, U))
            disc = float(np.abs(tau_new - tau).sum())
            it += 1
            tau = tau_new
            tmax = float(np.abs(tau).max())
            history.append(IterationRecord(attempt, it, eps, disc, tmax,
                                           cp.min_sigma(eps, cp.kappa(tau))))
            log.debug("eps=%g it=%d discrepancy=%.3e |tau|=%.3e", eps, it, disc, tmax)
            if not np.isfinite(disc) or tmax > config.gamma_max:
                reason = f"|tau|_max = {tmax:.3g} exceeds {config.gamma_max:g}"
                break
            increases = increases + 1 if disc > prev else 0
            prev = disc
            if increases >= config.divergence_window:
                reason = f"discrepancy increased {increases} times in a row"
                break
            if disc < config.stop_tol:
                status = CONVERGED
                break
        else:
            status = MAX_ITER_EXCEEDED
        if status is not None:
            break
        report = RunReport(False, DIVERGED, it, config.epsilon, eps, attempt, tau, history,
                           min_sigma=smin, backoff_reasons=reasons + [reason])
        if attempt >= config.max_backoffs:
            raise MaxBackoffsExceeded(f"diverged after {attempt} backoff(s): {reason}", report=report)
        reasons.append(reason)
        log.info("backing off: eps %g -> %g (%s)", eps, eps * config.epsilon_backoff, reason)
        eps *= config.epsilon_backoff
        attempt += 1

    report = RunReport(status == CONVERGED, status, it, config.epsilon, eps, attempt, tau, history,
                       backoff_reasons=reasons)
    k = cp.kappa(tau)
    report.min_sigma = cp.min_sigma(eps, k)
    try:
        report.measurement_max = float(np.abs(
            pem_measurement_matrix(mesh, basis, tau, eps, config.min_sigma, cp)).max())
        if config.compare_naive:
            report.naive_measurement_max = float(np.abs(
                pem_measurement_matrix(mesh, basis, np.zeros((N, N)), eps, config.min_sigma, cp)).max())
    except InvisibleEITError as err:
        log.warning("final measurement evaluation failed: %s", err)
    return ConductivityField(basis, tau, eps), report
