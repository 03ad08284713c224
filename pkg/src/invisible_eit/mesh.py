"""Structured quadratic triangulations of the unit disk fitted to a subdomain.

The generator places concentric rings of vertices, with every ring radius that
coincides with a subdomain boundary included exactly, and stitches
neighbouring rings with a "zipper" that connects every ring interval to the
nearest vertex on the adjacent ring.  Boundary vertices are pinned at the
requested electrode angles (and electrode-arc endpoints).  Midside nodes on the
unit circle and on circular subdomain boundaries are placed on the circle, so
those elements are isoparametrically curved; all other elements are straight.

An off-centre disk is meshed by generating a concentric mesh and mapping it
with a Moebius automorphism of the unit disk, which carries circles to circles.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateElement, OmegaTooCloseToBoundary, ValidationError
from .quadrature import QuadratureRule, quadrature

TWO_PI = 2.0 * np.pi
OUTSIDE_OMEGA = 0
INSIDE_OMEGA = 1
COARSEST_H = 0.25
DEFAULT_DEGREE = 6

CONCENTRIC_DISK = "concentric_disk"
ANNULUS_SECTOR = "annulus_sector"
OFFSET_DISK = "offset_disk"


@dataclass(frozen=True)
class OmegaSpec:
    """Support region of the conductivity perturbation.

    Use the constructors :meth:`concentric_disk`, :meth:`annulus_sector` and
    :meth:`offset_disk` rather than filling the fields by hand.
    """

    shape: str
    radius: float = 0.5
    r_in: float = 0.0
    r_out: float = 0.0
    angle_start: float = 0.0
    angle_span: float = TWO_PI
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.shape not in (CONCENTRIC_DISK, ANNULUS_SECTOR, OFFSET_DISK):
            raise ValidationError(f"unknown shape {self.shape!r}", field="omega.shape")
        if self.shape == ANNULUS_SECTOR:
            if not 0.0 < self.r_in < self.r_out:
                raise ValidationError("need 0 < r_in < r_out", field="omega.r_in")
            if not 0.0 < self.angle_span <= TWO_PI:
                raise ValidationError("need 0 < angle_span <= 2*pi", field="omega.angle_span")
        elif self.radius <= 0.0:
            raise ValidationError("radius must be positive", field="omega.radius")
        if not self.clearance > 0.0:
            raise ValidationError("closure of omega must lie inside the unit disk", field="omega")

    @classmethod
    def concentric_disk(cls, radius=0.5):
        return cls(CONCENTRIC_DISK, radius=float(radius))

    @classmethod
    def annulus_sector(cls, r_in, r_out, angle_start=0.0, angle_span=TWO_PI):
        return cls(ANNULUS_SECTOR, r_in=float(r_in), r_out=float(r_out),
                   angle_start=float(angle_start), angle_span=float(angle_span))

    @classmethod
    def offset_disk(cls, center, radius):
        return cls(OFFSET_DISK, radius=float(radius), center=(float(center[0]), float(center[1])))

    @property
    def clearance(self):
        """Distance from the closure of omega to the unit circle."""
        if self.shape == CONCENTRIC_DISK:
            return 1.0 - self.radius
        if self.shape == ANNULUS_SECTOR:
            return 1.0 - self.r_out
        return 1.0 - float(np.hypot(*self.center)) - self.radius

    @property
    def area(self):
        if self.shape == ANNULUS_SECTOR:
            return 0.5 * self.angle_span * (self.r_out ** 2 - self.r_in ** 2)
        return np.pi * self.radius ** 2

    def contains(self, points, tol=0.0):
        """Membership predicate (closed set, widened by ``tol``)."""
        p = np.asarray(points, dtype=float)
        if self.shape == OFFSET_DISK:
            return np.hypot(p[..., 0] - self.center[0], p[..., 1] - self.center[1]) <= self.radius + tol
        r = np.hypot(p[..., 0], p[..., 1])
        if self.shape == CONCENTRIC_DISK:
            return r <= self.radius + tol
        ang = np.mod(np.arctan2(p[..., 1], p[..., 0]) - self.angle_start, TWO_PI)
        in_angle = (ang <= self.angle_span + tol) | (ang >= TWO_PI - tol) | (self.angle_span >= TWO_PI)
        return (r >= self.r_in - tol) & (r <= self.r_out + tol) & in_angle


@dataclass(frozen=True)
class QuadTable:
    """Quadrature data mapped to every element of a mesh.

    ``points`` has shape (E, Q, 2), ``weights`` and ``detj`` (E, Q),
    ``values`` (Q, 6) and ``grads`` (E, Q, 6, 2) hold the P2 basis functions
    and their physical gradients.
    """

    rule: QuadratureRule
    points: np.ndarray
    weights: np.ndarray
    detj: np.ndarray
    values: np.ndarray
    grads: np.ndarray


@dataclass(frozen=True, eq=False)
class Mesh:
    """Quadratic (6-node) triangulation of the unit disk.

    ``nodes`` lists vertices first (``n_vertices`` of them) and then midside
    nodes.  ``triangles`` uses the local order: three vertices counter-
    clockwise, then the midsides of edges 0-1, 1-2 and 2-0 (the VTK quadratic
    triangle layout).  ``boundary_edges`` holds (vertex, midside, vertex)
    triples running counter-clockwise along the unit circle, and
    ``boundary_angles`` the (unwrapped) polar angles of their end vertices.
    """

    nodes: np.ndarray
    n_vertices: int
    triangles: np.ndarray
    element_tags: np.ndarray
    boundary_edges: np.ndarray
    boundary_angles: np.ndarray
    h_max: float
    omega: Optional[OmegaSpec] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.triangles)

    @property
    def inside(self):
        return self.element_tags == INSIDE_OMEGA

    @property
    def boundary_vertices(self):
        return np.unique(self.boundary_edges[:, [0, 2]])

    def quad_table(self, degree=DEFAULT_DEGREE) -> QuadTable:
        key = ("quad", degree)
        if key not in self._cache:
            self._cache[key] = _build_quad_table(self, quadrature(degree))
        return self._cache[key]

    def centroids(self):
        return self.nodes[self.triangles[:, :3]].mean(axis=1)

    def vertex_angle_distance(self, theta):
        """Smallest angular distance from ``theta`` to a boundary vertex."""
        bv = self.nodes[self.boundary_vertices]
        ang = np.arctan2(bv[:, 1], bv[:, 0])
        d = np.abs(np.angle(np.exp(1j * (ang - theta))))
        return float(d.min())


# -- P2 reference element ---------------------------------------------------

def p2_shape(ref):
    """P2 basis values at reference points ``ref`` (Q, 2) -> (Q, 6)."""
    s, t = ref[:, 0], ref[:, 1]
    l0, l1, l2 = 1.0 - s - t, s, t
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=1)


def p2_shape_grad(ref):
    """Reference gradients (Q, 6, 2)."""
    s, t = ref[:, 0], ref[:, 1]
    l0, l1, l2 = 1.0 - s - t, s, t
    d0, d1, d2 = np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])
    g = np.empty((len(s), 6, 2))
    g[:, 0] = (4 * l0 - 1)[:, None] * d0
    g[:, 1] = (4 * l1 - 1)[:, None] * d1
    g[:, 2] = (4 * l2 - 1)[:, None] * d2
    g[:, 3] = 4 * (l1[:, None] * d0 + l0[:, None] * d1)
    g[:, 4] = 4 * (l2[:, None] * d1 + l1[:, None] * d2)
    g[:, 5] = 4 * (l0[:, None] * d2 + l2[:, None] * d0)
    return g


def map_reference(mesh, ref, elements=None):
    """Map reference points to physical points, Jacobians and P2 data.

    Returns ``(points (E,Q,2), jac (E,Q,2,2), values (Q,6), dref (Q,6,2))``.
    """
    tri = mesh.triangles if elements is None else mesh.triangles[elements]
    X = mesh.nodes[tri]                                   # (E, 6, 2)
    N = p2_shape(ref)
    dN = p2_shape_grad(ref)
    pts = np.einsum("qi,eia->eqa", N, X)
    jac = np.einsum("qib,eia->eqab", dN, X)               # d x_a / d ref_b
    return pts, jac, N, dN


def _build_quad_table(mesh, rule):
    pts, jac, N, dN = map_reference(mesh, rule.ref_points)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    bad = np.nonzero(det.min(axis=1) <= 0.0)[0]
    if len(bad):
        raise DegenerateElement(f"{len(bad)} element(s) with non-positive Jacobian, first {bad[0]}",
                                elements=bad.tolist())
    inv = np.empty_like(jac)
    inv[..., 0, 0] = jac[..., 1, 1] / det
    inv[..., 1, 1] = jac[..., 0, 0] / det
    inv[..., 0, 1] = -jac[..., 0, 1] / det
    inv[..., 1, 0] = -jac[..., 1, 0] / det
    # grad phi = J^{-T} grad_ref N
    grads = np.einsum("eqba,qib->eqia", inv, dN)
    w = rule.weights[None, :] * det
    return QuadTable(rule, pts, w, det, N, grads)


def physical_quad_points(mesh, element, degree=DEFAULT_DEGREE):
    """List of ``(point, weight, jacobian_determinant)`` for one element.

    ``weight`` already includes the Jacobian factor.
    """
    rule = quadrature(degree)
    pts, jac, _, _ = map_reference(mesh, rule.ref_points, elements=[element])
    det = jac[0, :, 0, 0] * jac[0, :, 1, 1] - jac[0, :, 0, 1] * jac[0, :, 1, 0]
    return [(pts[0, q], rule.weights[q] * det[q], det[q]) for q in range(len(rule))]


# -- generation ---------------------------------------------------------------

def _mobius(z, a):
    return (z - a) / (1.0 - np.conj(a) * z)


def _mobius_inv(w, a):
    return (w + a) / (1.0 + np.conj(a) * w)


def offset_disk_frame(center, radius):
    """Moebius parameter ``a`` and radius ``rho`` such that z -> (z-a)/(1-conj(a)z)
    maps the disk |z - center| < radius onto |w| < rho."""
    c = complex(center[0], center[1])
    d = abs(c)
    if d == 0.0:
        return 0j, float(radius)
    u = c / d
    p = d * d - radius * radius
    t = ((1.0 + p) - np.sqrt((1.0 + p) ** 2 - 4.0 * d * d)) / (2.0 * d)
    s2 = d + radius
    rho = (s2 - t) / (1.0 - t * s2)
    return t * u, float(rho)


def _ring_angles(required, radius, h):
    """Relative angles in [0, 2pi) for one ring; ``required`` includes 0."""
    req = np.sort(np.mod(np.asarray(required, dtype=float), TWO_PI))
    keep = np.concatenate([[True], np.diff(req) > 1e-12])
    req = req[keep]
    if len(req) > 1 and TWO_PI - req[-1] < 1e-12:
        req = req[:-1]
    if len(req) == 1:
        n = 4 * int(np.ceil(TWO_PI * radius / (4.0 * h)))
        return np.arange(n) * (TWO_PI / n), np.ones(n, dtype=bool)
    ends = np.append(req, TWO_PI)
    out, pinned = [], []
    for a, b in zip(ends[:-1], ends[1:]):
        gap = b - a
        s = max(2, 2 * int(np.ceil(gap * radius / (2.0 * h))))
        out.append(a + gap * np.arange(s) / s)
        pinned.append(np.arange(s) == 0)
    return np.concatenate(out), np.concatenate(pinned)


def _zipper(ia, aa, ib, ab):
    """Triangulate the band between ring A (inner) and ring B (outer).

    Each interval of one ring is joined to the nearest vertex of the other;
    exact ties are broken by the sign of sin(2 * angle) so that layouts
    symmetric about the reference axis give mirror-symmetric meshes.
    """
    na, nb = len(aa), len(ab)
    ea, eb = np.append(aa, TWO_PI), np.append(ab, TWO_PI)
    ma, mb = 0.5 * (ea[:-1] + ea[1:]), 0.5 * (eb[:-1] + eb[1:])
    delta = 1e-9
    ka = ma - delta * np.sign(np.sin(2.0 * ma))
    kb = mb + delta * np.sign(np.sin(2.0 * mb))
    keys = np.concatenate([ka, kb])
    kinds = np.concatenate([np.zeros(na, dtype=int), np.ones(nb, dtype=int)])
    order = np.argsort(keys, kind="stable")
    tris = []
    i = j = 0
    for k in kinds[order]:
        a0, b0 = ia[i % na], ib[j % nb]
        if k == 0:
            tris.append((a0, b0, ia[(i + 1) % na]))
            i += 1
        else:
            tris.append((a0, b0, ib[(j + 1) % nb]))
            j += 1
    return tris


def _subdivide(breaks, h):
    radii = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        m = max(1, int(np.ceil((b - a) / h - 1e-9)))
        radii.extend(a + (b - a) * np.arange(1, m + 1) / m)
    return np.array(radii)


def build_disk_mesh(omega: OmegaSpec, target_h: float, electrode_angles: Sequence[float] = (),
                    cem_widths=None) -> Mesh:
    """Generate an omega-fitted P2 mesh of the unit disk.

    Parameters
    ----------
    omega : OmegaSpec
        Subdomain to be resolved by element edges.
    target_h : float
        Target element size.  Values above 0.25 are treated as 0.25.
    electrode_angles : sequence of float
        Polar angles (radians) that must be boundary vertices.
    cem_widths : float or sequence of float, optional
        Arc widths of finite electrodes centred at ``electrode_angles``; the
        arc endpoints are pinned as boundary vertices for every width given.
    """
    if not target_h > 0:
        raise ValidationError("target_h must be positive", field="target_h")
    angles = np.asarray(electrode_angles, dtype=float).ravel()
    wrapped = np.sort(np.mod(angles, TWO_PI))
    if len(angles) > 1 and (np.min(np.diff(np.append(wrapped, wrapped[0] + TWO_PI))) < 1e-12):
        raise ValidationError("electrode angles must be distinct modulo 2*pi", field="electrode_angles")
    h = min(float(target_h), COARSEST_H)
    if omega.clearance < 2.0 * h:
        raise OmegaTooCloseToBoundary(
            f"clearance {omega.clearance:.4g} < 2*h = {2 * h:.4g}", clearance=omega.clearance)

    boundary_req = list(angles)
    if cem_widths is not None and len(angles):
        for w in np.atleast_1d(np.asarray(cem_widths, dtype=float)):
            boundary_req += list(angles - 0.5 * w) + list(angles + 0.5 * w)
    boundary_req = np.asarray(boundary_req, dtype=float)

    # frame: coordinates in which omega's circular boundaries are concentric
    a = 0j
    h_frame = h
    if omega.shape == OFFSET_DISK:
        a, rho = offset_disk_frame(omega.center, omega.radius)
        h_frame = h * (1.0 - abs(a)) / (1.0 + abs(a))
        boundary_req = np.angle(_mobius(np.exp(1j * boundary_req), a))
        interfaces = [rho]
    elif omega.shape == CONCENTRIC_DISK:
        interfaces = [omega.radius]
    else:
        interfaces = [omega.r_in, omega.r_out]

    ref = float(boundary_req[0]) if len(boundary_req) else 0.0
    radii = _subdivide([0.0] + interfaces + [1.0], h_frame)
    radii[-1] = 1.0
    curved = np.array([np.any(np.isclose(r, interfaces, rtol=0, atol=1e-12)) or r == 1.0 for r in radii])

    coords = [np.zeros(2)]
    ring_of = [-1]
    ring_idx, ring_ang = [], []
    for m, r in enumerate(radii):
        req = [0.0]
        if m == len(radii) - 1:
            req += list(boundary_req - ref)
        if omega.shape == ANNULUS_SECTOR and omega.angle_span < TWO_PI \
                and omega.r_in - 1e-12 <= r <= omega.r_out + 1e-12:
            req += [omega.angle_start - ref, omega.angle_start + omega.angle_span - ref]
        rel, _ = _ring_angles(req, r, h_frame)
        idx = np.arange(len(ring_of), len(ring_of) + len(rel))
        absang = ref + rel
        coords.extend(np.column_stack([r * np.cos(absang), r * np.sin(absang)]))
        ring_of.extend([m] * len(rel))
        ring_idx.append(idx)
        ring_ang.append(rel)
    coords = np.array(coords)
    ring_of = np.array(ring_of)

    tris = [(0, ring_idx[0][j], ring_idx[0][(j + 1) % len(ring_idx[0])]) for j in range(len(ring_idx[0]))]
    for m in range(len(radii) - 1):
        tris += _zipper(ring_idx[m], ring_ang[m], ring_idx[m + 1], ring_ang[m + 1])
    tris = np.array(tris, dtype=np.int64)
    nv = len(coords)

    # tags from frame centroids
    cen = coords[tris].mean(axis=1)
    rc = np.hypot(cen[:, 0], cen[:, 1])
    if omega.shape == ANNULUS_SECTOR:
        ang = np.mod(np.arctan2(cen[:, 1], cen[:, 0]) - omega.angle_start, TWO_PI)
        inside = (rc > omega.r_in) & (rc < omega.r_out) & ((ang < omega.angle_span) | (omega.angle_span >= TWO_PI))
    else:
        inside = rc < interfaces[0]
    tags = np.where(inside, INSIDE_OMEGA, OUTSIDE_OMEGA).astype(np.int8)

    # midside nodes
    local = np.array([[0, 1], [1, 2], [2, 0]])
    edges = np.sort(tris[:, local].reshape(-1, 2), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mids = 0.5 * (coords[uniq[:, 0]] + coords[uniq[:, 1]])
    ra, rb = ring_of[uniq[:, 0]], ring_of[uniq[:, 1]]
    on_circle = (ra == rb) & (ra >= 0)
    on_circle &= curved[np.where(ra >= 0, ra, 0)]
    rad = radii[ra[on_circle]]
    mids[on_circle] *= (rad / np.hypot(mids[on_circle, 0], mids[on_circle, 1]))[:, None]

    if a != 0j:
        zv = _mobius_inv(coords[:, 0] + 1j * coords[:, 1], a)
        coords = np.column_stack([zv.real, zv.imag])
        zm = _mobius_inv(mids[:, 0] + 1j * mids[:, 1], a)
        straight = 0.5 * (coords[uniq[:, 0]] + coords[uniq[:, 1]])
        mids = np.where(on_circle[:, None], np.column_stack([zm.real, zm.imag]), straight)
        # snap pinned boundary vertices onto the requested physical angles
        bidx = ring_idx[-1]
        coords[bidx] /= np.hypot(coords[bidx, 0], coords[bidx, 1])[:, None]

    nodes = np.vstack([coords, mids])
    p2 = np.column_stack([tris, nv + inv.reshape(-1, 3)])

    # boundary edges in ring order
    bidx = ring_idx[-1]
    nb = len(bidx)
    pair_key = {tuple(e): k for k, e in enumerate(uniq)}
    bedges, bang = [], []
    for j in range(nb):
        v0, v1 = bidx[j], bidx[(j + 1) % nb]
        k = pair_key[(min(v0, v1), max(v0, v1))]
        bedges.append((v0, nv + k, v1))
        t0 = np.arctan2(nodes[v0, 1], nodes[v0, 0])
        t1 = np.arctan2(nodes[v1, 1], nodes[v1, 0])
        t1 = t0 + np.mod(t1 - t0, TWO_PI)
        bang.append((t0, t1))
    bedges = np.array(bedges, dtype=np.int64)
    bang = np.array(bang)

    v = nodes[tris]
    diam = np.max(np.stack([np.linalg.norm(v[:, 0] - v[:, 1], axis=1),
                            np.linalg.norm(v[:, 1] - v[:, 2], axis=1),
                            np.linalg.norm(v[:, 2] - v[:, 0], axis=1)]), axis=0)

    nodes.setflags(write=False)
    p2.setflags(write=False)
    mesh = Mesh(nodes, nv, p2, tags, bedges, bang, float(diam.max()), omega)
    mesh.quad_table(DEFAULT_DEGREE)  # raises DegenerateElement on inverted elements
    return mesh


def interior_edge_count(mesh):
    """Map each undirected vertex edge to the number of triangles using it."""
    local = np.array([[0, 1], [1, 2], [2, 0]])
    e = np.sort(mesh.triangles[:, :3][:, local].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts
