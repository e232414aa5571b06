"""Triangular meshes: generation, point location, barycentric interpolation.

Meshes discretize a rectangular channel with an optional circular obstacle.
Generation follows the force-equilibrium Delaunay approach with a sizing
field that targets the minimum edge length near the obstacle and grows
linearly toward ``edge_max = 5 * edge_min`` in the interior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay

NODE_KINDS = ("interior", "wall", "inflow", "outflow", "obstacle")
KIND_INTERIOR, KIND_WALL, KIND_INFLOW, KIND_OUTFLOW, KIND_OBSTACLE = range(5)
_KIND_CODE = {name: i for i, name in enumerate(NODE_KINDS)}

# Linear growth rate of the sizing field away from the obstacle.
SIZING_GRADE = 0.45
# Slack factors bounding admissible edge lengths.
EDGE_SLACK_LOW = 0.5
EDGE_SLACK_HIGH = 1.5


class MeshGenerationError(RuntimeError):
    """Mesh generation could not satisfy the sizing constraints."""


class OutsideDomainError(ValueError):
    """A query point lies outside the meshed domain (beyond tolerance)."""


@dataclass(frozen=True)
class ChannelDomain:
    """Rectangular channel [0, length] x [0, height] minus an optional disk."""

    length: float
    height: float
    obstacle_center: tuple[float, float] | None = None
    obstacle_radius: float = 0.0

    def __post_init__(self):
        if self.length <= 0 or self.height <= 0:
            raise ValueError("channel dimensions must be positive")
        if self.has_obstacle:
            cx, cy = self.obstacle_center
            r = self.obstacle_radius
            if r <= 0:
                raise ValueError("obstacle radius must be positive")
            if not (r < cx < self.length - r and r < cy < self.height - r):
                raise ValueError("obstacle disk must lie strictly inside the channel")

    @property
    def has_obstacle(self):
        return self.obstacle_center is not None and self.obstacle_radius > 0.0

    @property
    def diagonal(self):
        return float(np.hypot(self.length, self.height))

    @property
    def scale(self):
        return max(self.length, self.height)

    def signed_distance(self, pts):
        """Negative inside the domain, positive outside (rect minus disk)."""
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        d_rect = -np.minimum.reduce([x, self.length - x, y, self.height - y])
        if not self.has_obstacle:
            return d_rect
        cx, cy = self.obstacle_center
        d_disk = np.hypot(x - cx, y - cy) - self.obstacle_radius
        return np.maximum(d_rect, -d_disk)

    def obstacle_clearance(self):
        """Closest approach of the obstacle boundary to the channel walls."""
        if not self.has_obstacle:
            return np.inf
        cx, cy = self.obstacle_center
        r = self.obstacle_radius
        return min(cx - r, self.length - cx - r, cy - r, self.height - cy - r)


@dataclass(frozen=True)
class BaryLocation:
    """Containing (or nearest) triangle plus barycentric weights."""

    triangle_index: int
    weights: tuple[float, float, float]


class TriMesh:
    """Immutable planar triangulation with tagged boundary nodes.

    positions : (N, 2) float64
    triangles : (T, 3) int64, counter-clockwise
    node_kind : (N,) int64, codes into NODE_KINDS
    """

    def __init__(self, positions, triangles, node_kind, edge_min, edge_max):
        self.positions = np.asarray(positions, dtype=np.float64)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.node_kind = np.asarray(node_kind, dtype=np.int64)
        self.edge_min = float(edge_min)
        self.edge_max = float(edge_max)
        self._cache = {}
        for arr in (self.positions, self.triangles, self.node_kind):
            arr.setflags(write=False)

    @property
    def n_nodes(self):
        return self.positions.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def undirected_edges(self):
        """Unique mesh edges as (E, 2) index pairs with i < j, sorted."""
        if "edges" not in self._cache:
            t = self.triangles
            pairs = np.concatenate(
                [t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0
            )
            pairs = np.sort(pairs, axis=1)
            self._cache["edges"] = np.unique(pairs, axis=0)
        return self._cache["edges"]

    def edge_lengths(self):
        e = self.undirected_edges()
        d = self.positions[e[:, 0]] - self.positions[e[:, 1]]
        return np.hypot(d[:, 0], d[:, 1])

    def triangle_areas(self):
        if "areas" not in self._cache:
            a, b, c = (self.positions[self.triangles[:, k]] for k in range(3))
            self._cache["areas"] = 0.5 * (
                (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
            )
        return self._cache["areas"]

    def euler_characteristic(self):
        """V - E + T; 1 for a disk-like domain, 0 with one interior hole."""
        return self.n_nodes - len(self.undirected_edges()) + self.n_triangles

    def bounding_box(self):
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def _locator(self):
        if "locator" not in self._cache:
            self._cache["locator"] = _TriangleGrid(self)
        return self._cache["locator"]


class _TriangleGrid:
    """Uniform background grid binning triangle bounding boxes.

    Pure acceleration; results defined by the brute-force scan it shadows.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        lo, hi = mesh.bounding_box()
        self.lo = lo
        span = np.maximum(hi - lo, 1e-300)
        cell = max(mesh.edge_max, 1e-12)
        self.nx = max(1, int(np.ceil(span[0] / cell)))
        self.ny = max(1, int(np.ceil(span[1] / cell)))
        self.cell = np.array([span[0] / self.nx, span[1] / self.ny])
        self.bins = {}
        pts = mesh.positions
        for t_idx, tri in enumerate(mesh.triangles):
            p = pts[tri]
            i0, j0 = self._cell_index(p.min(axis=0))
            i1, j1 = self._cell_index(p.max(axis=0))
            for i in range(i0, i1 + 1):
                for j in range(j0, j1 + 1):
                    self.bins.setdefault((i, j), []).append(t_idx)

    def _cell_index(self, p):
        ij = np.floor((p - self.lo) / self.cell).astype(int)
        return (
            min(max(ij[0], 0), self.nx - 1),
            min(max(ij[1], 0), self.ny - 1),
        )

    def candidates(self, p):
        return self.bins.get(self._cell_index(np.asarray(p)), ())


def _barycentric(pts, tri, p):
    """Barycentric weights of p in triangle tri (exact for CCW triangles)."""
    a, b, c = pts[tri[0]], pts[tri[1]], pts[tri[2]]
    det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    w1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det
    w2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det
    return np.array([1.0 - w1 - w2, w1, w2])


_CONTAIN_TOL = -1e-12


def locate_point_brute(mesh, p):
    """Reference point location: exhaustive ascending scan over triangles.

    Returns the lowest-index containing triangle; if none contains p, the
    nearest triangle by squared distance with weights projected onto the
    simplex. This is the correctness oracle for :func:`locate_point`.
    """
    p = np.asarray(p, dtype=np.float64)
    for t_idx in range(mesh.n_triangles):
        w = _barycentric(mesh.positions, mesh.triangles[t_idx], p)
        if np.all(w >= _CONTAIN_TOL):
            w = np.clip(w, 0.0, None)
            return BaryLocation(t_idx, tuple(w / w.sum()))
    return _nearest_snap(mesh, p)


def _segment_closest(a, b, p):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
    return a + t * ab


def _nearest_snap(mesh, p):
    """Nearest triangle by squared distance; weights of the projected point."""
    pts = mesh.positions
    best = (np.inf, -1, None)
    for t_idx, tri in enumerate(mesh.triangles):
        w = _barycentric(pts, tri, p)
        if np.all(w >= _CONTAIN_TOL):
            q = p
        else:
            q = None
            d2q = np.inf
            for k in range(3):
                a, b = pts[tri[k]], pts[tri[(k + 1) % 3]]
                cand = _segment_closest(a, b, p)
                d2 = float(np.dot(cand - p, cand - p))
                if d2 < d2q:
                    d2q, q = d2, cand
        d2 = float(np.dot(q - p, q - p))
        if d2 < best[0] - 1e-300 or (abs(d2 - best[0]) <= 1e-300 and t_idx < best[1]):
            best = (d2, t_idx, q)
    w = _barycentric(pts, mesh.triangles[best[1]], best[2])
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    return BaryLocation(best[1], tuple(w))


def locate_point(mesh, p):
    """Find the triangle containing p and its barycentric weights.

    Ties at shared vertices/edges go to the lowest triangle index. Points
    inside the (slightly expanded) mesh bounding box that fall in no
    triangle, e.g. in the sliver between a coarse obstacle polygon and the
    true circle, snap to the nearest triangle with weights projected onto
    the simplex. Points outside the expanded bounding box raise
    :class:`OutsideDomainError`.
    """
    p = np.asarray(p, dtype=np.float64)
    lo, hi = mesh.bounding_box()
    tol = 1e-9 * float(np.hypot(*(hi - lo)))
    if np.any(p < lo - tol) or np.any(p > hi + tol):
        raise OutsideDomainError(f"point {p.tolist()} outside meshed domain")
    cand = mesh._locator().candidates(p)
    for t_idx in cand:
        w = _barycentric(mesh.positions, mesh.triangles[t_idx], p)
        if np.all(w >= _CONTAIN_TOL):
            w = np.clip(w, 0.0, None)
            return BaryLocation(t_idx, tuple(w / w.sum()))
    return _nearest_snap(mesh, p)


def build_interpolator(src_mesh, query_points):
    """Precompute (triangle corners, weights) rows for repeated interpolation."""
    query_points = np.atleast_2d(np.asarray(query_points, dtype=np.float64))
    n = query_points.shape[0]
    corners = np.empty((n, 3), dtype=np.int64)
    weights = np.empty((n, 3))
    for i, p in enumerate(query_points):
        loc = locate_point(src_mesh, p)
        corners[i] = src_mesh.triangles[loc.triangle_index]
        weights[i] = loc.weights
    return corners, weights


def apply_interpolator(corners, weights, field):
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 1:
        return (field[corners] * weights).sum(axis=1)
    return np.einsum("qc,qck->qk", weights, field[corners])


def interpolate_field(src_mesh, field, query_points):
    """Barycentric (P1) interpolation of a per-node field at query points."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape[0] != src_mesh.n_nodes:
        raise ValueError("field length does not match source mesh node count")
    corners, weights = build_interpolator(src_mesh, query_points)
    return apply_interpolator(corners, weights, field)


# ---------------------------------------------------------------------------
# Mesh generation
# ---------------------------------------------------------------------------


def _sizing_field(domain, edge_min, edge_max):
    if not domain.has_obstacle:
        return lambda pts: np.full(np.atleast_2d(pts).shape[0], edge_min)

    cx, cy = domain.obstacle_center
    r = domain.obstacle_radius

    def h(pts):
        pts = np.atleast_2d(pts)
        dist = np.abs(np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - r)
        return np.minimum(edge_min + SIZING_GRADE * dist, edge_max)

    return h


def _corner_mesh(domain):
    """The coarsest admissible triangulation: corners only, two triangles."""
    L, H = domain.length, domain.height
    positions = np.array([[0.0, 0.0], [L, 0.0], [L, H], [0.0, H]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    kinds = np.array([KIND_INFLOW, KIND_OUTFLOW, KIND_OUTFLOW, KIND_INFLOW])
    return positions, triangles, kinds


def _interior_triangles(domain, points, tris, geps):
    centroids = points[tris].mean(axis=1)
    keep = domain.signed_distance(centroids) < -geps
    return tris[keep]


def _project_to_boundary(domain, pts, deps):
    d = domain.signed_distance(pts)
    out = d > 0
    if not np.any(out):
        return pts
    p = pts[out]
    dx = (domain.signed_distance(p + [deps, 0.0]) - domain.signed_distance(p - [deps, 0.0])) / (2 * deps)
    dy = (domain.signed_distance(p + [0.0, deps]) - domain.signed_distance(p - [0.0, deps])) / (2 * deps)
    norm = np.maximum(np.hypot(dx, dy), 1e-12)
    p = p - (d[out] / norm**2)[:, None] * np.column_stack([dx, dy])
    pts = pts.copy()
    pts[out] = p
    return pts


def _classify_and_snap(domain, points, edge_min):
    """Tag boundary nodes and place them exactly on their boundary curve."""
    points = points.copy()
    kinds = np.full(points.shape[0], KIND_INTERIOR, dtype=np.int64)
    tol = 0.1 * edge_min
    L, H = domain.length, domain.height
    if domain.has_obstacle:
        cx, cy = domain.obstacle_center
        r = domain.obstacle_radius
        rad = np.hypot(points[:, 0] - cx, points[:, 1] - cy)
        on_obs = np.abs(rad - r) < tol
        scale = r / np.maximum(rad[on_obs], 1e-300)
        points[on_obs, 0] = cx + (points[on_obs, 0] - cx) * scale
        points[on_obs, 1] = cy + (points[on_obs, 1] - cy) * scale
        kinds[on_obs] = KIND_OBSTACLE
    free = kinds == KIND_INTERIOR
    on_wall_lo = free & (np.abs(points[:, 1]) < tol)
    on_wall_hi = free & (np.abs(points[:, 1] - H) < tol)
    points[on_wall_lo, 1] = 0.0
    points[on_wall_hi, 1] = H
    kinds[on_wall_lo | on_wall_hi] = KIND_WALL
    on_in = (kinds != KIND_OBSTACLE) & (np.abs(points[:, 0]) < tol)
    on_out = (kinds != KIND_OBSTACLE) & (np.abs(points[:, 0] - L) < tol)
    points[on_in, 0] = 0.0
    points[on_out, 0] = L
    kinds[on_in] = KIND_INFLOW
    kinds[on_out] = KIND_OUTFLOW
    return points, kinds


def _orient_ccw(points, tris):
    a, b, c = (points[tris[:, k]] for k in range(3))
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    flip = area2 < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def _drop_unused(points, kinds, tris):
    used = np.unique(tris)
    remap = -np.ones(points.shape[0], dtype=np.int64)
    remap[used] = np.arange(used.size)
    return points[used], kinds[used], remap[tris]


def generate_mesh(domain, edge_min, seed=0):
    """Generate a graded triangulation of the domain.

    The sizing field targets ``edge_min`` on the obstacle boundary and grows
    linearly (slope ``SIZING_GRADE``) up to ``edge_max = 5 * edge_min``;
    without an obstacle the target is uniform at ``edge_min``. Deterministic
    for fixed (domain, edge_min, seed).
    """
    if edge_min <= 0:
        raise MeshGenerationError("edge_min must be positive")
    edge_max = 5.0 * edge_min
    if domain.has_obstacle:
        clearance = domain.obstacle_clearance()
        if edge_min > clearance:
            raise MeshGenerationError(
                f"edge_min {edge_min:g} exceeds obstacle clearance {clearance:g}; "
                "refine the sizing or move the obstacle"
            )
        if 2 * np.pi * domain.obstacle_radius < 4 * edge_min:
            raise MeshGenerationError(
                "obstacle circumference supports fewer than 4 boundary segments "
                f"at edge_min {edge_min:g}"
            )
    elif edge_min >= min(domain.length, domain.height):
        positions, triangles, kinds = _corner_mesh(domain)
        return TriMesh(positions, triangles, kinds, edge_min, edge_max)

    h_fn = _sizing_field(domain, edge_min, edge_max)
    rng = np.random.default_rng(seed)
    L, H = domain.length, domain.height
    h0 = edge_min

    # Hexagonal candidate lattice thinned by the sizing field.
    xs = np.arange(0.0, L + 0.5 * h0, h0)
    ys = np.arange(0.0, H + 0.5 * h0 * np.sqrt(3) / 2, h0 * np.sqrt(3) / 2)
    gx, gy = np.meshgrid(xs, ys)
    gx[1::2] += h0 / 2
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[domain.signed_distance(pts) < 0.5 * h0]
    density = (h0 / h_fn(pts)) ** 2
    pts = pts[rng.random(pts.shape[0]) < density / density.max()]

    fixed = [np.array([[0.0, 0.0], [L, 0.0], [L, H], [0.0, H]])]
    if domain.has_obstacle:
        cx, cy = domain.obstacle_center
        r = domain.obstacle_radius
        n_ring = max(int(np.ceil(2 * np.pi * r / edge_min)), 8)
        th = 2 * np.pi * np.arange(n_ring) / n_ring
        fixed.append(np.column_stack([cx + r * np.cos(th), cy + r * np.sin(th)]))
    pfix = np.concatenate(fixed, axis=0)
    # Drop lattice points that collide with fixed ones.
    keep = np.ones(pts.shape[0], dtype=bool)
    for q in pfix:
        keep &= np.hypot(pts[:, 0] - q[0], pts[:, 1] - q[1]) > 0.5 * h0
    pts = np.concatenate([pfix, pts[keep]], axis=0)
    n_fix = pfix.shape[0]

    geps = 1e-3 * h0
    deps = np.sqrt(np.finfo(float).eps) * h0
    fscale, deltat = 1.2, 0.2
    old = np.full_like(pts, np.inf)
    tris = None
    for _ in range(200):
        if np.max(np.hypot(*(pts - old).T)) > 0.1 * h0:
            old = pts.copy()
            tris = Delaunay(pts).simplices
            tris = _interior_triangles(domain, pts, tris, geps)
            pairs = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
            bars = np.unique(np.sort(pairs, axis=1), axis=0)
        vec = pts[bars[:, 0]] - pts[bars[:, 1]]
        lengths = np.hypot(vec[:, 0], vec[:, 1])
        hbars = h_fn(0.5 * (pts[bars[:, 0]] + pts[bars[:, 1]]))
        l0 = hbars * fscale * np.sqrt((lengths**2).sum() / (hbars**2).sum())
        force = np.maximum(l0 - lengths, 0.0)
        fvec = (force / np.maximum(lengths, 1e-300))[:, None] * vec
        move = np.zeros_like(pts)
        np.add.at(move, bars[:, 0], fvec)
        np.add.at(move, bars[:, 1], -fvec)
        move[:n_fix] = 0.0
        pts = pts + deltat * move
        pts = _project_to_boundary(domain, pts, deps)
        interior = domain.signed_distance(pts) < -geps
        disp = deltat * np.hypot(move[:, 0], move[:, 1])
        if np.max(disp[interior], initial=0.0) < 1e-3 * h0:
            break

    protected = np.zeros(pts.shape[0], dtype=bool)
    protected[:n_fix] = True
    for _ in range(10):
        tris = Delaunay(pts).simplices
        tris = _interior_triangles(domain, pts, tris, geps)
        pairs = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        bars = np.unique(np.sort(pairs, axis=1), axis=0)
        vec = pts[bars[:, 0]] - pts[bars[:, 1]]
        lengths = np.hypot(vec[:, 0], vec[:, 1])
        short = lengths < 0.55 * edge_min
        long = lengths > 1.35 * edge_max
        if not np.any(short) and not np.any(long):
            break
        # Collapse over-short edges by deleting one (unprotected) endpoint;
        # split over-long edges at their midpoint.
        victims = set()
        for i, j in bars[short]:
            if i in victims or j in victims or (protected[i] and protected[j]):
                continue
            victims.add(int(j) if not protected[j] else int(i))
        midpoints = 0.5 * (pts[bars[long, 0]] + pts[bars[long, 1]])
        keep = np.ones(pts.shape[0], dtype=bool)
        if victims:
            keep[list(victims)] = False
        pts = np.concatenate([pts[keep], midpoints], axis=0)
        protected = np.concatenate(
            [protected[keep], np.zeros(midpoints.shape[0], dtype=bool)]
        )
        pts = _project_to_boundary(domain, pts, deps)

    tris = Delaunay(pts).simplices
    tris = _interior_triangles(domain, pts, tris, geps)
    points, kinds = _classify_and_snap(domain, pts, edge_min)
    tris = _remove_slivers(points, tris)
    points, kinds, tris = _drop_unused(points, kinds, tris)
    tris = _orient_ccw(points, tris)
    mesh = TriMesh(points, tris, kinds, edge_min, edge_max)
    validate_mesh(mesh, domain)
    return mesh


def _remove_slivers(points, tris):
    """Drop near-degenerate triangles (boundary slivers from the final pass)."""
    a, b, c = (points[tris[:, k]] for k in range(3))
    area2 = np.abs(
        (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    )
    lab = np.hypot(*(b - a).T)
    lbc = np.hypot(*(c - b).T)
    lca = np.hypot(*(a - c).T)
    longest = np.maximum.reduce([lab, lbc, lca])
    # Height of the triangle over its longest edge, relative to that edge.
    flatness = area2 / np.maximum(longest**2, 1e-300)
    return tris[flatness > 0.02]


def validate_mesh(mesh, domain=None):
    """Check the structural invariants; raises MeshGenerationError on failure."""
    if mesh.triangles.min(initial=0) < 0 or mesh.triangles.max(initial=-1) >= mesh.n_nodes:
        raise MeshGenerationError("triangle index out of range")
    areas = mesh.triangle_areas()
    if np.any(areas <= 0):
        raise MeshGenerationError("non-positive triangle area (degenerate or CW triangle)")
    lengths = mesh.edge_lengths()
    lo = EDGE_SLACK_LOW * mesh.edge_min
    hi = EDGE_SLACK_HIGH * mesh.edge_max
    if lengths.min() < lo or lengths.max() > hi:
        raise MeshGenerationError(
            f"edge length out of bounds: [{lengths.min():.3g}, {lengths.max():.3g}] "
            f"not within [{lo:.3g}, {hi:.3g}]"
        )
    if domain is not None:
        expected = 0 if domain.has_obstacle else 1
        chi = mesh.euler_characteristic()
        if chi != expected:
            raise MeshGenerationError(
                f"euler characteristic {chi} != {expected} for this topology"
            )
    return True


# ---------------------------------------------------------------------------
# Mesh file format: "msmesh v1"
# ---------------------------------------------------------------------------


def mesh_text(mesh):
    """Canonical "msmesh v1" serialization (see README for the grammar)."""
    lines = [
        "msmesh v1",
        f"sizing {mesh.edge_min!r} {mesh.edge_max!r}",
        str(mesh.n_nodes),
    ]
    for p, k in zip(mesh.positions, mesh.node_kind):
        lines.append(f"{float(p[0])!r} {float(p[1])!r} {NODE_KINDS[k]}")
    lines.append(str(mesh.n_triangles))
    for t in mesh.triangles:
        lines.append(f"{t[0]} {t[1]} {t[2]}")
    return "\n".join(lines) + "\n"


def save_mesh(mesh, path):
    """Write the structured-text mesh format."""
    with open(path, "w") as fh:
        fh.write(mesh_text(mesh))


def load_mesh(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines[0] != "msmesh v1":
        raise ValueError(f"not an msmesh v1 file: {path}")
    sizing = lines[1].split()
    if sizing[0] != "sizing":
        raise ValueError("missing sizing line in mesh file")
    edge_min, edge_max = float(sizing[1]), float(sizing[2])
    n_nodes = int(lines[2])
    positions = np.empty((n_nodes, 2))
    kinds = np.empty(n_nodes, dtype=np.int64)
    for i in range(n_nodes):
        x, y, kind = lines[3 + i].split()
        positions[i] = (float(x), float(y))
        kinds[i] = _KIND_CODE[kind]
    base = 3 + n_nodes
    n_tris = int(lines[base])
    triangles = np.empty((n_tris, 3), dtype=np.int64)
    for i in range(n_tris):
        triangles[i] = [int(v) for v in lines[base + 1 + i].split()]
    return TriMesh(positions, triangles, kinds, edge_min, edge_max)
