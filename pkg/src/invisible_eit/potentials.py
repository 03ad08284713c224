"""Reference potentials of point-electrode current pairs on the unit disk.

For unit conductivity and point electrodes ``x_0 .. x_N`` on the unit circle,
the potential driven by a unit current entering at ``x_n`` and leaving at
``x_0`` is

    u_n(x) = -(1/pi) * (log|x - x_n| - log|x - x_0|),

which has zero mean over the disk.  The products ``psi_k = grad u_i . grad u_j``
(``i <= j``) are enumerated as (1,1), (1,2), (2,2), (1,3), (2,3), (3,3), ...

Potentials on other simply connected domains are obtained by composing the
disk potentials with a conformal map onto the disk.

Point arrays have trailing dimension 2; evaluators return arrays with a
leading axis over electrodes ``n = 1..N`` (index ``n - 1``).
"""

from dataclasses import dataclass

import numpy as np

from .errors import EvalAtElectrode, MapDegenerate, ValidationError

TWO_PI = 2.0 * np.pi
EVAL_TOL = 1e-14


@dataclass(frozen=True)
class ElectrodeConfig:
    """Electrode polar angles ``theta_0 .. theta_N`` on the unit circle."""

    angles: tuple

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float)
        if a.ndim != 1 or len(a) < 2:
            raise ValidationError("need at least two electrodes", field="electrodes")
        w = np.sort(np.mod(a, TWO_PI))
        if np.min(np.diff(np.append(w, w[0] + TWO_PI))) < 1e-12:
            raise ValidationError("electrode angles must be distinct modulo 2*pi", field="electrodes")
        object.__setattr__(self, "angles", tuple(float(t) for t in a))

    @classmethod
    def from_degrees(cls, degrees):
        return cls(tuple(np.deg2rad(np.asarray(degrees, dtype=float))))

    @classmethod
    def equispaced(cls, count, offset_deg=1.0):
        """``theta_j = offset + j / count * 360 deg`` for ``j = 0 .. count-1``."""
        j = np.arange(count)
        return cls.from_degrees(offset_deg + j / count * 360.0)

    @property
    def N(self):
        return len(self.angles) - 1

    @property
    def K(self):
        return self.N * (self.N + 1) // 2

    @property
    def positions(self):
        a = np.asarray(self.angles)
        return np.column_stack([np.cos(a), np.sin(a)])


# -- pair index -------------------------------------------------------------

def pair_index(i, j):
    """1-based ``k`` of the product ``grad u_i . grad u_j`` (order-insensitive)."""
    i, j = min(i, j), max(i, j)
    if i < 1:
        raise ValueError("electrode indices start at 1")
    return j * (j - 1) // 2 + i


def index_pair(k):
    """Inverse of :func:`pair_index`; returns ``(i, j)`` with ``i <= j``."""
    if k < 1:
        raise ValueError("k starts at 1")
    j = int(np.ceil((np.sqrt(8 * k + 1) - 1) / 2))
    while j * (j - 1) // 2 >= k:
        j -= 1
    while j * (j + 1) // 2 < k:
        j += 1
    return k - j * (j - 1) // 2, j


def all_pairs(N):
    """``[(i, j) for k = 1..K]`` as 0-based index arrays ``(I, J)``."""
    I = np.array([i for j in range(1, N + 1) for i in range(1, j + 1)]) - 1
    J = np.array([j for j in range(1, N + 1) for _ in range(1, j + 1)]) - 1
    return I, J


def psi_table(grads):
    """All products ``psi_k`` from a gradient stack of shape (N, ..., 2)."""
    I, J = all_pairs(grads.shape[0])
    return np.einsum("k...a,k...a->k...", grads[I], grads[J])


# -- disk potentials ----------------------------------------------------------

class DiskPotentials:
    """Closed-form ``u_n`` and gradients on the unit disk."""

    def __init__(self, cfg: ElectrodeConfig):
        self.cfg = cfg
        self.N = cfg.N
        self._x = cfg.positions

    def _diffs(self, points):
        p = np.asarray(points, dtype=float)
        d = p[None, ...] - self._x.reshape((self.N + 1,) + (1,) * (p.ndim - 1) + (2,))
        r2 = np.sum(d * d, axis=-1)
        if np.any(r2 < EVAL_TOL ** 2):
            raise EvalAtElectrode("potential evaluated at an electrode")
        return d, r2

    def values(self, points):
        _, r2 = self._diffs(points)
        logs = 0.5 * np.log(r2)
        return -(logs[1:] - logs[0]) / np.pi

    def gradients(self, points):
        d, r2 = self._diffs(points)
        g = d / r2[..., None]
        return -(g[1:] - g[0]) / np.pi


def u0_value(n, x, cfg):
    """``u_n(x)`` for a single point or an array of points."""
    return DiskPotentials(cfg).values(x)[n - 1]


def u0_gradient(n, x, cfg):
    return DiskPotentials(cfg).gradients(x)[n - 1]


def psi_value(k, x, cfg):
    i, j = index_pair(k)
    g = DiskPotentials(cfg).gradients(x)
    return np.sum(g[i - 1] * g[j - 1], axis=-1)


# -- conformal transport --------------------------------------------------------

class MobiusMap:
    """Disk automorphism ``z -> exp(i phi) (z - a) / (1 - conj(a) z)``, |a| < 1."""

    def __init__(self, a=0j, phi=0.0):
        self.a = complex(a)
        self.phi = float(phi)
        if abs(self.a) >= 1.0:
            raise ValidationError("need |a| < 1", field="a")
        self._rot = np.exp(1j * self.phi)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return self._rot * (z - self.a) / (1.0 - np.conj(self.a) * z)

    def derivative(self, z):
        z = np.asarray(z, dtype=complex)
        return self._rot * (1.0 - abs(self.a) ** 2) / (1.0 - np.conj(self.a) * z) ** 2


class TransportedPotentials:
    """Potentials ``u_n = u_hat_n o Phi`` for a conformal map ``Phi`` onto the disk.

    ``conformal_map`` needs ``__call__(z)`` and ``derivative(z)`` on complex
    arrays.  ``cfg`` holds the electrode angles on the boundary of the
    physical domain; their images fix the electrodes of the disk problem.
    """

    def __init__(self, conformal_map, cfg: ElectrodeConfig):
        self.map = conformal_map
        self.cfg = cfg
        self.N = cfg.N
        z = np.exp(1j * np.asarray(cfg.angles))
        dphi = np.asarray(conformal_map.derivative(z))
        if np.any(np.abs(dphi) < 1e-12):
            raise MapDegenerate("conformal map derivative vanishes at an electrode")
        # written as a correction to theta so the identity map returns theta bit for bit
        turn = np.angle(np.asarray(conformal_map(z)) * np.conj(z))
        self.image_cfg = ElectrodeConfig(tuple(np.asarray(cfg.angles) + turn))
        self._disk = DiskPotentials(self.image_cfg)

    def _pull(self, points):
        p = np.asarray(points, dtype=float)
        z = p[..., 0] + 1j * p[..., 1]
        w = np.asarray(self.map(z))
        return np.stack([w.real, w.imag], axis=-1), z

    def values(self, points):
        w, _ = self._pull(points)
        return self._disk.values(w)

    def gradients(self, points):
        w, z = self._pull(points)
        dphi = np.asarray(self.map.derivative(z))
        if np.any(np.abs(dphi) < 1e-12):
            raise MapDegenerate("conformal map derivative vanishes at a sample point")
        g = self._disk.gradients(w)
        p, q = dphi.real, dphi.imag
        # chain rule with the Jacobian [[p, -q], [q, p]] of an analytic map
        return np.stack([p * g[..., 0] + q * g[..., 1], -q * g[..., 0] + p * g[..., 1]], axis=-1)


def transport_potentials(conformal_map, cfg):
    return TransportedPotentials(conformal_map, cfg)
