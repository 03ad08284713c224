import numpy as np
import pytest
from scipy.integrate import dblquad

from invisible_eit.basis import (BUILTIN_SEEDS, build_dual_basis, build_gram, diagnostics_csv,
                                 duality_residuals, kappa_eval, make_seed, project_kappa0,
                                 psi_samples)
from invisible_eit.errors import GramSingular, SeedInSpan
from invisible_eit.mesh import OmegaSpec, build_disk_mesh
from invisible_eit.potentials import DiskPotentials, ElectrodeConfig


@pytest.fixture(scope="module")
def disk_mesh():
    return build_disk_mesh(OmegaSpec.concentric_disk(0.5), 0.05)


def test_single_pair_gram_against_polar_quadrature(disk_mesh):
    cfg = ElectrodeConfig.from_degrees((0.0, 180.0))
    A = build_gram(disk_mesh, cfg)
    pots = DiskPotentials(cfg)

    def integrand(t, r):
        g = pots.gradients(np.array([r * np.cos(t), r * np.sin(t)]))[0]
        return (g @ g) ** 2 * r

    oracle, _ = dblquad(integrand, 0.0, 0.5, 0.0, 2 * np.pi, epsabs=1e-12, epsrel=1e-10)
    assert A.shape == (1, 1)
    assert A[0, 0] == pytest.approx(oracle, rel=1e-6)


def test_gram_symmetric_positive_diagonal(disk_mesh):
    A = build_gram(disk_mesh, ElectrodeConfig.equispaced(6))
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    assert np.all(np.diag(A) > 0)
    assert np.all(np.linalg.eigvalsh(A) > 0)


def test_gram_rotation_invariance(disk_mesh):
    deg = np.array([1.0, 91.0, 181.0, 271.0])
    A = build_gram(disk_mesh, ElectrodeConfig.from_degrees(deg))
    B = build_gram(disk_mesh, ElectrodeConfig.from_degrees(deg + 90.0))
    assert np.abs(A - B).max() <= 1e-10 * np.abs(A).max()


def test_scalar_case(disk_mesh):
    basis = build_dual_basis(disk_mesh, ElectrodeConfig.from_degrees((0.0, 180.0)))
    om = basis.samples
    psi = psi_samples(basis.potentials, om.points)[:, 0]
    assert np.sum(om.weights * basis.dual_values[:, 0] * psi) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(basis.dual_values[:, 0], psi / basis.gram[0, 0], rtol=1e-10)


def test_four_electrode_duality_and_seed_orthogonality(medium_basis):
    dual, orth = duality_residuals(medium_basis)
    assert dual < 1e-9
    assert orth < 1e-9
    assert medium_basis.kappa0_norm2 > 0


class _Scaled:
    """Potentials whose gradient products are doubled."""

    def __init__(self, pots):
        self.N = pots.N
        self._p = pots

    def gradients(self, points):
        return np.sqrt(2.0) * self._p.gradients(points)


def test_scale_covariance(disk_mesh, four_cfg):
    plain = build_dual_basis(disk_mesh, four_cfg)
    doubled = build_dual_basis(disk_mesh, _Scaled(DiskPotentials(four_cfg)))
    np.testing.assert_allclose(doubled.gram, 4 * plain.gram, rtol=1e-12)
    np.testing.assert_allclose(doubled.dual_values, plain.dual_values / 2, rtol=1e-8, atol=1e-12)
    assert duality_residuals(doubled)[0] < 1e-9


def test_seed_in_span(medium_basis):
    with pytest.raises(SeedInSpan):
        project_kappa0(medium_basis, 0.0)
    with pytest.raises(SeedInSpan):
        project_kappa0(medium_basis, lambda p: medium_basis.dual_at(p.reshape(-1, 2))[:, 0])


def test_gram_singular_for_nearly_coincident_electrodes(disk_mesh):
    cfg = ElectrodeConfig((0.0, 1.0, 1.0 + 1e-7))
    with pytest.raises(GramSingular):
        build_dual_basis(disk_mesh, cfg)


def test_condition_grows_when_electrodes_cluster(disk_mesh):
    spread = build_dual_basis(disk_mesh, ElectrodeConfig.from_degrees((0.0, 90.0, 180.0)))
    close = build_dual_basis(disk_mesh, ElectrodeConfig.from_degrees((0.0, 90.0, 91.0)))
    assert np.isfinite(spread.condition_estimate) and np.isfinite(close.condition_estimate)
    assert close.condition_estimate > spread.condition_estimate


def test_kappa_eval_affine_and_supported(medium_basis, rng):
    N = medium_basis.N
    t1 = rng.standard_normal((N, N))
    t1 = t1 + t1.T
    t2 = rng.standard_normal((N, N))
    t2 = t2 + t2.T
    zero = np.zeros((N, N))
    pts = np.column_stack([rng.uniform(-0.45, 0.45, 40), rng.uniform(-0.2, 0.2, 40)])
    k0 = kappa_eval(medium_basis, zero, points=pts)
    np.testing.assert_allclose(k0, medium_basis.kappa0_at(pts), atol=1e-15)
    lin = (kappa_eval(medium_basis, t1 + t2, points=pts) - kappa_eval(medium_basis, t1, points=pts)
           - kappa_eval(medium_basis, t2, points=pts) + k0)
    assert np.abs(lin).max() < 1e-12
    outside = np.array([[0.7, 0.0], [0.0, -0.51], [-0.6, 0.6]])
    assert np.all(kappa_eval(medium_basis, t1, points=outside) == 0.0)


def test_kappa_table_zero_off_omega(medium_mesh, medium_basis):
    N = medium_basis.N
    table = kappa_eval(medium_basis, np.eye(N), mesh=medium_mesh)
    assert np.all(table[~medium_mesh.inside] == 0.0)
    assert np.any(table[medium_mesh.inside] != 0.0)


def test_pointwise_and_table_agree(medium_mesh, medium_basis):
    N = medium_basis.N
    tau = np.ones((N, N))
    table = kappa_eval(medium_basis, tau, mesh=medium_mesh)
    el = np.nonzero(medium_mesh.inside)[0][:20]
    pts = medium_mesh.quad_table().points[el]
    np.testing.assert_allclose(kappa_eval(medium_basis, tau, points=pts.reshape(-1, 2)),
                               table[el].ravel(), rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("name", sorted(BUILTIN_SEEDS))
def test_builtin_seeds(name):
    seed = make_seed(name)
    p = np.array([[0.1, -0.2]])
    assert seed(p).shape == (1,)
    assert make_seed(BUILTIN_SEEDS[name])(p) == pytest.approx(seed(p))


def test_diagnostics_csv(medium_basis):
    text = diagnostics_csv(medium_basis)
    rows = dict(line.split(",") for line in text.strip().splitlines()[1:])
    assert int(rows["K"]) == 6
    assert float(rows["duality_residual"]) < 1e-9
