"""Floor boundaries: polygons, the 596-vertex ring, and deformation features.

A floor is a simple counter-clockwise polygon in the ground plane (x, z).
Any such polygon is registered onto a fixed ring of 596 vertices by arc
length, with ring vertices snapped exactly onto polygon corners. Relative to
a canonical reference ring, each vertex carries a 9-value deformation
feature: the symmetric scale/shear factor of its local transform (6 values,
embedded in 3D) and the rotation log (3 values, up-axis only for planar
rings). The codec is exact: feature extraction followed by reconstruction
reproduces the ring to solver precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

RING_VERTEX_COUNT = 596
FEATURE_DIM = 9
FEATURE_FILE_MAGIC = b"SHGNFLR1"

_CONDITION_SEED = 715517


class InvalidFloorError(ValueError):
    """Raised for degenerate or self-intersecting floor polygons."""


class DegenerateRingError(ValueError):
    """Raised when a ring has zero-length edges or a collapsing transform."""


# ---------------------------------------------------------------------------
# polygon geometry


def polygon_signed_area(vertices):
    v = np.asarray(vertices, dtype=np.float64)
    x, z = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z))


def polygon_perimeter(vertices):
    v = np.asarray(vertices, dtype=np.float64)
    return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())


def _orient(p, q, r):
    """Twice the signed area of triangle pqr (vectorized)."""
    return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (
        q[..., 1] - p[..., 1]
    ) * (r[..., 0] - p[..., 0])


def polygon_is_simple(vertices, tol=1e-12):
    """True if no two non-adjacent edges intersect and no edge degenerates."""
    v = np.asarray(vertices, dtype=np.float64)
    n = len(v)
    if n < 3:
        return False
    a = v
    b = np.roll(v, -1, axis=0)
    if np.any(np.linalg.norm(b - a, axis=1) <= tol):
        return False
    ii, jj = np.triu_indices(n, k=2)
    adjacent = (ii == 0) & (jj == n - 1)
    ii, jj = ii[~adjacent], jj[~adjacent]
    if len(ii) == 0:
        return True
    p1, p2 = a[ii], b[ii]
    q1, q2 = a[jj], b[jj]
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    proper = (d1 * d2 < -tol) & (d3 * d4 < -tol)
    if np.any(proper):
        return False

    def on_segment(p, q, r, d):
        near = np.abs(d) <= tol
        within = (
            (r[:, 0] <= np.maximum(p[:, 0], q[:, 0]) + tol)
            & (r[:, 0] >= np.minimum(p[:, 0], q[:, 0]) - tol)
            & (r[:, 1] <= np.maximum(p[:, 1], q[:, 1]) + tol)
            & (r[:, 1] >= np.minimum(p[:, 1], q[:, 1]) - tol)
        )
        return near & within

    touch = (
        on_segment(q1, q2, p1, d1)
        | on_segment(q1, q2, p2, d2)
        | on_segment(p1, p2, q1, d3)
        | on_segment(p1, p2, q2, d4)
    )
    return not np.any(touch)


def points_in_polygon(points, vertices, tol=1e-12):
    """Ray-casting containment test; points on the boundary count as inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v = np.asarray(vertices, dtype=np.float64)
    a = v[None, :, :]
    b = np.roll(v, -1, axis=0)[None, :, :]
    p = pts[:, None, :]

    ab = b - a
    ap = p - a
    seg_len2 = np.sum(ab * ab, axis=2)
    t = np.clip(np.sum(ap * ab, axis=2) / seg_len2, 0.0, 1.0)
    closest = a + t[:, :, None] * ab
    on_boundary = np.min(np.linalg.norm(p - closest, axis=2), axis=1) <= tol

    x, z = pts[:, 0:1], pts[:, 1:2]
    ax, az = a[:, :, 0], a[:, :, 1]
    bx, bz = b[:, :, 0], b[:, :, 1]
    cond = (az > z) != (bz > z)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (z - az) * (bx - ax) / (bz - az)
    crossings = np.sum(cond & (x < x_cross), axis=1)
    inside = (crossings % 2) == 1
    return inside | on_boundary


def nearest_boundary_feature(vertices, point):
    """Locate the closest boundary feature to `point`.

    Returns (segment_index, clamp) where clamp is -1 if the projection falls
    before the segment start, +1 past its end, and 0 in the interior. Used to
    fix the active branch when differentiating boundary distances.
    """
    v = np.asarray(vertices, dtype=np.float64)
    p = np.asarray(point, dtype=np.float64)
    a = v
    b = np.roll(v, -1, axis=0)
    ab = b - a
    t = np.sum((p - a) * ab, axis=1) / np.sum(ab * ab, axis=1)
    tc = np.clip(t, 0.0, 1.0)
    closest = a + tc[:, None] * ab
    d2 = np.sum((closest - p) ** 2, axis=1)
    k = int(np.argmin(d2))
    clamp = 0
    if t[k] <= 0.0:
        clamp = -1
    elif t[k] >= 1.0:
        clamp = 1
    return k, clamp


@dataclass
class FloorPolygon:
    """Simple counter-clockwise polygon in the ground plane, metres."""

    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)

    def require_valid(self):
        if len(self.vertices) < 3:
            raise InvalidFloorError("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(self.vertices)):
            raise InvalidFloorError("polygon has non-finite coordinates")
        if not polygon_is_simple(self.vertices):
            raise InvalidFloorError("polygon is self-intersecting or degenerate")
        if polygon_signed_area(self.vertices) <= 0.0:
            raise InvalidFloorError("polygon must be counter-clockwise")

    def is_valid(self):
        try:
            self.require_valid()
        except InvalidFloorError:
            return False
        return True

    def contains(self, points):
        return points_in_polygon(points, self.vertices)


@dataclass
class FloorRing:
    """Closed ring of exactly 596 2D vertices with cyclic connectivity."""

    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.shape != (RING_VERTEX_COUNT, 2):
            raise ValueError(
                f"ring must have shape ({RING_VERTEX_COUNT}, 2), got {self.vertices.shape}"
            )

    def edge_vectors(self):
        return np.roll(self.vertices, -1, axis=0) - self.vertices


def reference_ring():
    """Canonical reference: the unit square as a 596-vertex ring.

    149 vertices per side, counter-clockwise, starting at the corner with
    lexicographically smallest (x, z) so it matches the registration anchor.
    """
    square = FloorPolygon(
        np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    )
    return register_ring(square)


# ---------------------------------------------------------------------------
# registration


def _anchor_index(vertices):
    order = np.lexsort((vertices[:, 1], vertices[:, 0]))
    return int(order[0])


def register_ring(polygon: FloorPolygon) -> FloorRing:
    """Distribute 596 vertices on the polygon boundary by arc length.

    The ring starts at the polygon corner with lexicographically smallest
    (x, z); a snapping pass then moves the nearest ring vertex exactly onto
    every polygon corner so sharp corners survive.
    """
    polygon.require_valid()
    verts = polygon.vertices
    n_corner = len(verts)
    if n_corner > RING_VERTEX_COUNT:
        raise InvalidFloorError("polygon has more corners than ring vertices")

    start = _anchor_index(verts)
    corners = np.roll(verts, -start, axis=0)
    seg = np.roll(corners, -1, axis=0) - corners
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    perimeter = cum[-1]

    m = RING_VERTEX_COUNT
    t = perimeter * np.arange(m) / m
    seg_idx = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, n_corner - 1)
    local = (t - cum[seg_idx]) / seg_len[seg_idx]
    ring = corners[seg_idx] + local[:, None] * seg[seg_idx]

    spacing = perimeter / m
    claimed = set()
    for j in range(n_corner):
        target = int(np.round(cum[j] / spacing)) % m
        for delta in range(m):
            for cand in ((target + delta) % m, (target - delta) % m):
                if cand not in claimed:
                    claimed.add(cand)
                    ring[cand] = corners[j]
                    break
            else:
                continue
            break
    return FloorRing(ring)


# ---------------------------------------------------------------------------
# deformation features


def _vertex_similarities(ring_verts, ref_verts):
    """Per-vertex similarity transforms between reference and ring edges.

    Each vertex carries the unique rotation-plus-uniform-scale map taking its
    outgoing reference edge exactly onto its outgoing ring edge (a complex
    ratio in the plane). An exact per-edge map keeps the reconstruction
    system consistent for every simple polygon, including reflex corners
    where a two-edge affine fit would have to reverse orientation, and the
    uniform scale keeps the symmetric factor positive-definite.

    Returns (scale, alpha): positive scale and in-plane rotation angle.
    """
    e_ref = np.roll(ref_verts, -1, axis=0) - ref_verts
    e_ring = np.roll(ring_verts, -1, axis=0) - ring_verts
    if np.any(np.sum(e_ring * e_ring, axis=1) == 0.0) or np.any(
        np.sum(e_ref * e_ref, axis=1) == 0.0
    ):
        raise DegenerateRingError("ring contains a zero-length edge")

    ref_c = e_ref[:, 0] + 1j * e_ref[:, 1]
    ring_c = e_ring[:, 0] + 1j * e_ring[:, 1]
    ratio = ring_c / ref_c
    scale = np.abs(ratio)
    alpha = np.angle(ratio)
    return scale, alpha


@dataclass
class DeformationFeature:
    """Per-vertex features: 6 scale/shear values then 3 rotation-log values."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (RING_VERTEX_COUNT, FEATURE_DIM):
            raise ValueError(
                f"features must have shape ({RING_VERTEX_COUNT}, {FEATURE_DIM})"
            )

    @property
    def scale_shear(self):
        return self.values[:, :6]

    @property
    def rotation_log(self):
        return self.values[:, 6:]


def ring_to_features(ring: FloorRing, reference: FloorRing) -> DeformationFeature:
    """Extract per-vertex deformation features of `ring` against `reference`.

    The local transform at each vertex decomposes into a rotation (stored as
    the up-axis log angle, unwrapped along the cycle so adjacent angles
    differ by less than pi) and a symmetric positive-definite scale factor
    (6 entries in the 3D embedding).
    """
    scale, alpha = _vertex_similarities(ring.vertices, reference.vertices)

    # in-plane angle alpha corresponds to a rotation of -alpha about +y
    theta = -alpha
    for i in range(1, len(theta)):
        delta = theta[i] - theta[i - 1]
        theta[i] -= 2.0 * np.pi * np.round(delta / (2.0 * np.pi))

    feats = np.zeros((RING_VERTEX_COUNT, FEATURE_DIM))
    feats[:, 0] = scale
    feats[:, 1] = 1.0
    feats[:, 2] = scale
    feats[:, 7] = theta
    return DeformationFeature(feats)


def features_to_ring(
    features: DeformationFeature,
    reference: FloorRing,
    anchor_index: int,
    anchor_position,
) -> FloorRing:
    """Reconstruct a ring from deformation features.

    Solves the least-squares system that best reproduces every per-vertex
    transformed edge vector, with the anchor vertex pinned to fix the
    translation null-space.
    """
    vals = features.values
    theta = vals[:, 7]
    alpha = -theta
    ca, sa = np.cos(alpha), np.sin(alpha)
    s00, s11, s01 = vals[:, 0], vals[:, 2], vals[:, 4]

    # T = R(alpha) S
    t00 = ca * s00 - sa * s01
    t01 = ca * s01 - sa * s11
    t10 = sa * s00 + ca * s01
    t11 = sa * s01 + ca * s11

    ref = reference.vertices
    e_ref = np.roll(ref, -1, axis=0) - ref
    out_x = t00 * e_ref[:, 0] + t01 * e_ref[:, 1]
    out_z = t10 * e_ref[:, 0] + t11 * e_ref[:, 1]
    targets = np.stack([out_x, out_z], axis=1)

    n = RING_VERTEX_COUNT
    idx = np.arange(n)
    nxt = (idx + 1) % n

    # normal equations of the per-edge system x[i+1] - x[i] = T_i e_ref(i)
    normal = np.zeros((n, n))
    np.add.at(normal, (idx, idx), 1.0)
    np.add.at(normal, (nxt, nxt), 1.0)
    np.add.at(normal, (nxt, idx), -1.0)
    np.add.at(normal, (idx, nxt), -1.0)

    rhs = np.zeros((n, 2))
    np.add.at(rhs, nxt, targets)
    np.add.at(rhs, idx, -targets)

    anchor_index = int(anchor_index) % n
    anchor_position = np.asarray(anchor_position, dtype=np.float64)
    keep = idx != anchor_index
    reduced = normal[np.ix_(keep, keep)]
    reduced_rhs = rhs[keep] - np.outer(normal[keep, anchor_index], anchor_position)

    solution = np.linalg.solve(reduced, reduced_rhs)
    verts = np.empty((n, 2))
    verts[keep] = solution
    verts[anchor_index] = anchor_position
    return FloorRing(verts)


def identity_features() -> DeformationFeature:
    feats = np.zeros((RING_VERTEX_COUNT, FEATURE_DIM))
    feats[:, 0] = 1.0
    feats[:, 1] = 1.0
    feats[:, 2] = 1.0
    return DeformationFeature(feats)


# ---------------------------------------------------------------------------
# pooled condition vector


def pool_condition(features: DeformationFeature, dim: int = 32) -> np.ndarray:
    """Project per-channel mean and max statistics to a fixed-size vector.

    The projection matrix comes from a fixed seed, so equal features always
    produce the same condition vector.
    """
    vals = features.values
    pooled = np.concatenate([vals.mean(axis=0), vals.max(axis=0)])
    rng = np.random.Generator(np.random.PCG64(_CONDITION_SEED))
    proj = rng.standard_normal((int(dim), pooled.size)) / np.sqrt(pooled.size)
    return proj @ pooled


def polygon_condition(polygon: FloorPolygon, dim: int = 32) -> np.ndarray:
    """Full encode path: register, extract features, pool."""
    ring = register_ring(polygon)
    feats = ring_to_features(ring, reference_ring())
    return pool_condition(feats, dim)


# ---------------------------------------------------------------------------
# feature matrix file format


def write_feature_file(path, features: DeformationFeature):
    data = features.values.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(FEATURE_FILE_MAGIC)
        fh.write(data)


def read_feature_file(path) -> DeformationFeature:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FEATURE_FILE_MAGIC:
            raise ValueError(f"bad feature file magic: {magic!r}")
        payload = fh.read()
    expected = RING_VERTEX_COUNT * FEATURE_DIM * 8
    if len(payload) != expected:
        raise ValueError(
            f"feature file payload is {len(payload)} bytes, expected {expected}"
        )
    vals = np.frombuffer(payload, dtype="<f8").reshape(RING_VERTEX_COUNT, FEATURE_DIM)
    return DeformationFeature(vals.copy())
