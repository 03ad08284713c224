import json

import numpy as np
import pytest

from invisible_eit import fem
from invisible_eit.basis import kappa_eval
from invisible_eit.errors import MaxBackoffsExceeded, NotMeanFree, PositivityViolation, ValidationError
from invisible_eit.solver import (CONVERGED, MAX_ITER_EXCEEDED, ConductivityField, RunConfig,
                                  fixed_point_step, measurement_map_apply,
                                  measurement_matrix_from_sigma, pem_measurement_matrix,
                                  run_algorithm, solve_corrector)


def sym(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) * scale
    return a + a.T


@pytest.fixture(scope="module")
def runs(medium_mesh, medium_basis):
    return {eps: run_algorithm(medium_mesh, medium_basis, RunConfig(epsilon=eps))
            for eps in (0.5, 1.0, 2.0)}


def test_zero_perturbation_gives_zero_corrector(medium_mesh, medium_basis):
    basis = medium_basis.with_zero_kappa0()
    w = solve_corrector(medium_mesh, basis, np.zeros((3, 3)), 1.0)
    assert not np.any(w)


def test_corrector_converges_as_epsilon_vanishes(medium_mesh, medium_basis):
    tau = np.zeros((3, 3))
    w0 = solve_corrector(medium_mesh, medium_basis, tau, 1e-9, n=1)
    diffs = [np.abs(solve_corrector(medium_mesh, medium_basis, tau, e, n=1) - w0).max()
             for e in (0.2, 0.1, 0.05)]
    assert diffs[0] > diffs[1] > diffs[2]
    for a, b in zip(diffs, diffs[1:]):
        assert a / b == pytest.approx(2.0, rel=0.1)


def test_energy_bound_constant_stable_across_seeds(medium_mesh, medium_basis):
    from invisible_eit.basis import project_kappa0
    consts = []
    for seed in ("1", "x + y + 1", "exp(-(x + 0.5)^2 - y^2)"):
        basis = project_kappa0(medium_basis, seed)
        kmax = np.abs(basis.kappa0_values).max()
        w = solve_corrector(medium_mesh, basis, np.zeros((3, 3)), 0.5)
        g = fem.fe_gradient_at_quadrature(medium_mesh, w)
        energy = np.sqrt(fem.integrate(medium_mesh, np.sum(g * g, axis=-1)))
        consts.append(energy.max() / kmax)
    assert max(consts) / min(consts) < 10


def test_positivity_violation(medium_mesh, medium_basis):
    with pytest.raises(PositivityViolation) as info:
        solve_corrector(medium_mesh, medium_basis, np.zeros((3, 3)), 1e6)
    assert info.value.details["minimum"] < 1e-3


def test_step_with_zero_epsilon_collapses(medium_mesh, medium_basis, rng):
    tau = sym(rng, 3)
    assert np.abs(fixed_point_step(medium_mesh, medium_basis, tau, 0.0)).max() < 1e-9


def test_first_step_is_scaled_measurement(medium_mesh, medium_basis):
    eps = 1.5
    zero = np.zeros((3, 3))
    step = fixed_point_step(medium_mesh, medium_basis, zero, eps)
    m = pem_measurement_matrix(medium_mesh, medium_basis, zero, eps)
    np.testing.assert_allclose(eps * step, m, rtol=1e-10, atol=1e-16)


def test_step_preserves_symmetry(medium_mesh, medium_basis, rng):
    out = fixed_point_step(medium_mesh, medium_basis, sym(rng, 3, 1e-3), 1.0)
    assert np.array_equal(out, out.T)


def test_measurement_zero_for_zero_epsilon(medium_mesh, medium_basis):
    assert not np.any(pem_measurement_matrix(medium_mesh, medium_basis, np.eye(3), 0.0))


def test_seed_only_measurement_is_second_order(medium_mesh, medium_basis):
    zero = np.zeros((3, 3))
    m1 = pem_measurement_matrix(medium_mesh, medium_basis, zero, 0.01)
    m2 = pem_measurement_matrix(medium_mesh, medium_basis, zero, 0.02)
    assert np.abs(m2).max() / np.abs(m1).max() == pytest.approx(4.0, rel=0.05)


def test_measurement_matrix_from_sigma_agrees(medium_mesh, medium_basis, runs):
    tau = 0.5 * runs[2.0][1].tau
    eps = 2.0
    direct = pem_measurement_matrix(medium_mesh, medium_basis, tau, eps)
    sigma = 1.0 + eps * kappa_eval(medium_basis, tau, mesh=medium_mesh)
    general = measurement_matrix_from_sigma(medium_mesh, sigma, medium_basis.potentials)
    np.testing.assert_allclose(general, direct, atol=1e-12 * np.abs(direct).max() + 1e-15)
    assert not np.any(measurement_matrix_from_sigma(medium_mesh, 1.0, medium_basis.potentials))


class _Superposed:
    """Potentials with an extra first member ``sum_n c_n u_n``."""

    def __init__(self, pots, coeffs):
        self._p, self._c = pots, np.asarray(coeffs)
        self.N = pots.N + 1

    def gradients(self, points):
        g = self._p.gradients(points)
        return np.concatenate([np.tensordot(self._c, g, axes=1)[None], g])


def test_measurement_map_superposition(medium_mesh, medium_basis, runs, rng):
    tau = 0.5 * runs[2.0][1].tau
    eps = 2.0
    m = pem_measurement_matrix(medium_mesh, medium_basis, tau, eps)
    current = rng.standard_normal(4)
    current -= current.mean()
    out = measurement_map_apply(m, current)
    sigma = 1.0 + eps * kappa_eval(medium_basis, tau, mesh=medium_mesh)
    big = measurement_matrix_from_sigma(medium_mesh, sigma,
                                        _Superposed(medium_basis.potentials, current[1:]))
    direct = np.concatenate([[0.0], big[0, 1:]])
    np.testing.assert_allclose(out, direct - direct.mean(), atol=1e-9)


def test_measurement_map_basics(rng):
    m = sym(rng, 3)
    e = np.array([-1.0, 1.0, 0.0, 0.0])
    v = np.concatenate([[0.0], m[:, 0]])
    np.testing.assert_allclose(measurement_map_apply(m, e), v - v.mean())
    assert not np.any(measurement_map_apply(np.zeros((3, 3)), e))
    assert measurement_map_apply(m, e).sum() == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(NotMeanFree):
        measurement_map_apply(m, np.array([1.0, 0.0, 0.0, 0.0]))


def test_runs_converge_with_invisibility(runs):
    for eps, (field, report) in runs.items():
        assert report.converged and report.status == CONVERGED
        assert report.discrepancies[-1] < 1e-8
        assert report.measurement_max <= 1e-3 * report.naive_measurement_max
        assert np.array_equal(report.tau, report.tau.T)
        assert report.min_sigma >= 1e-3


@pytest.mark.parametrize("eps", [0.5, 1.0])
def test_small_epsilon_discrepancy_strictly_decreases(runs, eps):
    d = runs[eps][1].discrepancies
    assert np.all(np.diff(d) < 0)


def test_geometric_convergence_and_contraction(runs):
    d = runs[2.0][1].discrepancies
    y = np.log(d)
    x = np.arange(len(y))
    fit = np.polyval(np.polyfit(x, y, 1), x)
    assert 1 - np.sum((y - fit) ** 2) / np.sum((y - y.mean()) ** 2) >= 0.98
    ratios = d[1:] / d[:-1]
    assert np.all(ratios < 1)
    assert ratios.max() / ratios.min() < 3


def test_field_is_one_outside_omega(runs):
    field = runs[2.0][0]
    pts = np.array([[0.6, 0.0], [0.0, 0.9], [-0.55, -0.3]])
    assert np.all(field(pts) == 1.0)
    assert np.any(field(np.array([[0.1, 0.1]])) != 1.0)


def test_zero_seed_gives_trivial_solution(medium_mesh, medium_basis):
    field, report = run_algorithm(medium_mesh, medium_basis.with_zero_kappa0(), RunConfig(epsilon=2.0))
    assert report.converged
    assert not np.any(report.tau)
    assert np.all(field.table(medium_mesh) == 1.0)


def test_max_backoffs_exceeded(medium_mesh, medium_basis):
    with pytest.raises(MaxBackoffsExceeded) as info:
        run_algorithm(medium_mesh, medium_basis, RunConfig(epsilon=1e6, max_backoffs=0))
    report = info.value.report
    assert not report.converged
    assert report.summary()["backoff_reasons"]


def test_backoff_recovers(medium_mesh, medium_basis):
    _, report = run_algorithm(medium_mesh, medium_basis, RunConfig(epsilon=40.0))
    assert report.converged
    assert report.backoffs > 0
    assert report.epsilon_used == 40.0 * 0.5 ** report.backoffs
    assert report.summary()["backoff_triggered"]


def test_max_iter_exceeded(medium_mesh, medium_basis):
    _, report = run_algorithm(medium_mesh, medium_basis, RunConfig(epsilon=4.0, max_iter=2))
    assert not report.converged
    assert report.status == MAX_ITER_EXCEEDED
    assert report.iterations == 2


def test_report_serialization(runs):
    report = runs[1.0][1]
    lines = report.to_csv().strip().splitlines()
    assert lines[0] == "attempt,iteration,epsilon,discrepancy,tau_max,min_sigma"
    assert len(lines) == report.iterations + 1
    summary = json.loads(report.summary_json())
    for key in ("converged", "iterations", "epsilon_used", "measurement_max", "min_sigma"):
        assert key in summary


@pytest.mark.parametrize("kwargs", [
    {"epsilon": 0.0}, {"epsilon": -1.0}, {"epsilon": 1.0, "stop_tol": 2.0},
    {"epsilon": 1.0, "epsilon_backoff": 1.5}, {"epsilon": 1.0, "max_backoffs": -1},
])
def test_run_config_validation(kwargs):
    with pytest.raises(ValidationError):
        RunConfig(**kwargs)


def test_conductivity_field_symmetrizes(medium_basis):
    f = ConductivityField(medium_basis, np.triu(np.ones((3, 3))), 1.0)
    assert np.array_equal(f.tau, f.tau.T)
