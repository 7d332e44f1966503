"""Detection of binary edges, room-object flags, and n-ary hyper edges.

All detectors work from object placements alone. Distance-based checks use
the shared box surface samples; symmetry checks are closed-form residuals on
placements (extents, heights, yaws and mirror geometry). Hyper-edge
extraction follows a greedy merging scheme: parallel sets grow while the
combined parallel residual stays under the merge threshold, rotational sets
grow from symmetry pairs whose rotation centers coincide and are then
validated as full rotation cycles.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.spatial import cKDTree

from scenehgn import energy
from scenehgn.scene import (
    BinaryEdge,
    EdgeSet,
    HyperEdge,
    SceneHierarchy,
    SURFACE_SAMPLE_COUNT,
    bounding_sphere_radius,
    obb_ground_corners,
    surface_points,
    wrap_angle,
)
from scenehgn.floor import points_in_polygon


@dataclass
class DetectionThresholds:
    adjacency_factor: float = 0.05
    symmetry_tol: float = 0.02
    eps_r: float = 0.05
    eps_t: float = 0.01
    align_angle_tol: float = 0.05
    parallel_angle_tol: float = 0.02
    merge_scale: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0.0:
                raise ValueError(f"{f.name} must be strictly positive")

    @staticmethod
    def from_dict(doc):
        known = {f.name for f in fields(DetectionThresholds)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown threshold keys: {sorted(unknown)}")
        return DetectionThresholds(**doc)


def _wrap_mod(x, period):
    """Wrap to (-period/2, period/2]."""
    out = np.mod(x + period / 2.0, period) - period / 2.0
    if out == -period / 2.0:
        out = period / 2.0
    return float(out)


# ---------------------------------------------------------------------------
# binary detections


def detect_adjacency(a, b, thresholds=None, samples=SURFACE_SAMPLE_COUNT, _cache=None):
    """True iff the smallest surface-sample distance is below the size cutoff.

    The cutoff is adjacency_factor times the mean bounding-sphere radius of
    the two boxes; far pairs are rejected by the sphere bound without
    sampling.
    """
    th = thresholds or DetectionThresholds()
    ra = bounding_sphere_radius(a.placement)
    rb = bounding_sphere_radius(b.placement)
    cutoff = th.adjacency_factor * 0.5 * (ra + rb)
    gap_bound = float(np.linalg.norm(a.placement.center - b.placement.center)) - ra - rb
    if gap_bound >= cutoff:
        return False
    pa = _sampled(a, samples, _cache)
    pb = _sampled(b, samples, _cache)
    dist, _ = cKDTree(pb).query(pa, k=1, workers=1)
    return float(dist.min()) < cutoff


def _sampled(obj, samples, cache):
    if cache is None:
        return surface_points(obj.placement, samples)
    key = obj.id
    if key not in cache:
        cache[key] = surface_points(obj.placement, samples)
    return cache[key]


def translational_residuals(pa, pb):
    return np.abs(pa.scale - pb.scale).max(), abs(
        _wrap_mod(pb.orientation - pa.orientation, 2.0 * np.pi)
    )


def reflective_residuals(pa, pb):
    # a yaw-theta box faces polar angle -theta, and the mirror line through
    # the pair midpoint has polar angle phi_line; reflecting a gives a box of
    # yaw -(theta_a + 2 phi_line), matched against b modulo pi
    extent = np.abs(pa.scale - pb.scale).max()
    height = abs(pa.center[1] - pb.center[1])
    delta = pb.center - pa.center
    phi_line = np.arctan2(delta[2], delta[0]) + np.pi / 2.0
    mirror = abs(_wrap_mod(pa.orientation + pb.orientation + 2.0 * phi_line, np.pi))
    return extent, height, mirror


def rotational_residuals(pa, pb):
    extent = np.abs(pa.scale - pb.scale).max()
    height = abs(pa.center[1] - pb.center[1])
    delta = abs(_wrap_mod(pb.orientation - pa.orientation, 2.0 * np.pi))
    return extent, height, delta


def detect_binary_symmetries(a, b, thresholds=None):
    """Subset of {translational, reflective, rotational} holding for a pair.

    Boxes match their mirror image modulo pi (a cuboid is symmetric under a
    half turn), so reflection compares yaw sums against the mirror line
    direction modulo pi. A rotational pair needs a genuinely non-zero yaw
    difference; equal-yaw pairs are translational instead.
    """
    th = thresholds or DetectionThresholds()
    pa, pb = a.placement, b.placement
    out = set()
    extent, dyaw = translational_residuals(pa, pb)
    if extent <= th.symmetry_tol and dyaw <= th.align_angle_tol:
        out.add("translational")
    extent, height, mirror = reflective_residuals(pa, pb)
    if extent <= th.symmetry_tol and height <= th.symmetry_tol and mirror <= th.align_angle_tol:
        out.add("reflective")
    extent, height, delta = rotational_residuals(pa, pb)
    if extent <= th.symmetry_tol and height <= th.symmetry_tol and delta > th.align_angle_tol:
        out.add("rotational")
    return out


def rotation_center_of_pair(pa, pb, thresholds=None):
    """Vertical-axis point rotating box a onto box b, or None for equal yaws."""
    th = thresholds or DetectionThresholds()
    delta = _wrap_mod(pb.orientation - pa.orientation, 2.0 * np.pi)
    if abs(delta) <= th.align_angle_tol:
        return None
    c, s = np.cos(delta), np.sin(delta)
    rot = np.array([[c, s], [-s, c]])
    lhs = np.eye(2) - rot
    ca = pa.center[[0, 2]]
    cb = pb.center[[0, 2]]
    return np.linalg.solve(lhs, cb - rot @ ca)


# ---------------------------------------------------------------------------
# hyper detections


def _rotate_points_about(points, pivot, angle):
    c, s = np.cos(angle), np.sin(angle)
    out = points.copy()
    dx = points[:, 0] - pivot[0]
    dz = points[:, 2] - pivot[1]
    out[:, 0] = pivot[0] + dx * c + dz * s
    out[:, 2] = pivot[1] - dx * s + dz * c
    return out


def _chamfer_sets(a, b):
    ta = cKDTree(a)
    tb = cKDTree(b)
    dab, _ = tb.query(a, k=1, workers=1)
    dba, _ = ta.query(b, k=1, workers=1)
    return float(np.mean(dab**2) + np.mean(dba**2))


def detect_nfold_rotation(objects, thresholds=None, samples=SURFACE_SAMPLE_COUNT, _cache=None):
    """Detect an N-fold rotational symmetry hyper edge over >= 3 objects.

    Members are ordered cyclically by angle around the barycenter of their
    centers; the edge holds iff every member maps onto the next (wrapping
    around) under a 2*pi/N rotation about the barycenter, measured by the
    Chamfer distance between surface samples.
    """
    objects = sorted(objects, key=lambda o: o.id)
    n = len(objects)
    if n < 3:
        raise ValueError("n-fold rotation needs at least 3 objects")
    th = thresholds or DetectionThresholds()

    centers = np.array([o.placement.center[[0, 2]] for o in objects])
    pivot = centers.mean(axis=0)
    angles = np.arctan2(centers[:, 1] - pivot[1], centers[:, 0] - pivot[0])
    order = sorted(range(n), key=lambda i: (-angles[i], objects[i].id))
    cycle = [objects[i] for i in order]

    step = 2.0 * np.pi / n
    pts = [_sampled(o, samples, _cache) for o in cycle]
    for i in range(n):
        j = (i + 1) % n
        rotated = _rotate_points_about(pts[i], pivot, step)
        if _chamfer_sets(pts[j], rotated) > th.eps_r:
            return None
    members = sorted(o.id for o in objects)
    return HyperEdge(
        "nfold_rotation",
        members,
        {"center": [float(pivot[0]), float(pivot[1])], "n": n},
    )


def _parallel_direction(centers_xz):
    order = np.lexsort((centers_xz[:, 1], centers_xz[:, 0]))
    n = len(centers_xz)
    weights = np.zeros(n)
    weights[order] = 2.0 * np.arange(n) - (n - 1)
    v = weights @ centers_xz
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        return None
    return v / norm


def detect_parallel_collinear(objects, thresholds=None):
    """Detect a parallel-collinearity hyper edge over >= 3 objects.

    Needs (i) all plan-view box axes pairwise parallel (yaws equal modulo a
    quarter turn) and (ii) every center within the squared point-to-line
    threshold of the line through the barycenter along the pair-averaged
    direction.
    """
    objects = list(objects)
    if len(objects) < 3:
        raise ValueError("parallel collinearity needs at least 3 objects")
    th = thresholds or DetectionThresholds()

    yaws = [o.placement.orientation for o in objects]
    for i in range(len(yaws)):
        for j in range(i + 1, len(yaws)):
            if abs(_wrap_mod(yaws[i] - yaws[j], np.pi / 2.0)) > th.parallel_angle_tol:
                return None

    centers = np.array([o.placement.center[[0, 2]] for o in objects])
    v = _parallel_direction(centers)
    if v is None:
        return None
    rel = centers - centers.mean(axis=0)
    perp2 = np.sum(rel**2, axis=1) - (rel @ v) ** 2
    if np.any(perp2 > th.eps_t):
        return None
    members = sorted(o.id for o in objects)
    return HyperEdge(
        "parallel_collinear", members, {"direction": [float(v[0]), float(v[1])]}
    )


def extract_hyperedges(objects, thresholds=None, samples=SURFACE_SAMPLE_COUNT, _cache=None):
    """Extract all hyper edges among the objects of one region.

    Parallel: grow singleton sets greedily, merging the first pair (sets
    ordered by smallest member id) whose combined parallel residual stays
    under the merge threshold, to a fixpoint; surviving sets of >= 3 members
    are validated as parallel edges. Rotational: union symmetry pairs whose
    rotation centers coincide within the merge threshold, then validate the
    merged set as a full rotation cycle. A non-member object sitting at the
    rotation center is recorded as the edge's center object.
    """
    objects = sorted(objects, key=lambda o: o.id)
    th = thresholds or DetectionThresholds()
    if len(objects) <= 2:
        return []
    edges = []
    by_id = {o.id: o for o in objects}

    # parallel sets: greedy merge until fixpoint
    sets = [[o.id] for o in objects]
    merge_limit = th.merge_scale * th.eps_t
    changed = True
    while changed:
        changed = False
        sets.sort(key=lambda s: s[0])
        for i in range(len(sets)):
            for j in range(i + 1, len(sets)):
                union = sorted(sets[i] + sets[j])
                total = energy.hyper_parallel_total(
                    [by_id[m].placement for m in union]
                )
                if total <= merge_limit:
                    sets[i] = union
                    del sets[j]
                    changed = True
                    break
            if changed:
                break
    for group in sets:
        if len(group) < 3:
            continue
        edge = detect_parallel_collinear([by_id[m] for m in group], th)
        if edge is not None:
            edges.append(edge)

    # rotational groups: union pairs sharing a rotation center, then validate
    pair_centers = []
    ids = [o.id for o in objects]
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            a, b = by_id[ids[i]], by_id[ids[j]]
            if "rotational" not in detect_binary_symmetries(a, b, th):
                continue
            center = rotation_center_of_pair(a.placement, b.placement, th)
            if center is not None:
                pair_centers.append((ids[i], ids[j], center))

    center_limit = th.merge_scale * th.symmetry_tol
    groups = []
    for a, b, center in pair_centers:
        placed = False
        for group in groups:
            if np.linalg.norm(group["center"] - center) <= center_limit:
                group["members"].update((a, b))
                group["points"].append(center)
                group["center"] = np.mean(group["points"], axis=0)
                placed = True
                break
        if not placed:
            groups.append({"members": {a, b}, "points": [center], "center": center})

    for group in sorted(groups, key=lambda g: sorted(g["members"])[0]):
        members = sorted(group["members"])
        if len(members) < 3:
            continue
        edge = detect_nfold_rotation([by_id[m] for m in members], th, samples, _cache)
        if edge is None:
            continue
        pivot = np.asarray(edge.params["center"])
        best, best_dist = None, center_limit
        for o in objects:
            if o.id in group["members"]:
                continue
            dist = float(np.linalg.norm(o.placement.center[[0, 2]] - pivot))
            if dist <= best_dist:
                best, best_dist = o.id, dist
        if best is not None:
            edge.params["center_object"] = best
        edges.append(edge)

    return sorted(edges, key=lambda e: (e.type, tuple(e.members)))


# ---------------------------------------------------------------------------
# room-object vertical edges


def detect_room_object_edges(scene, thresholds=None):
    """Per-object boundary flags: yaw aligned to the axes, footprint inside."""
    th = thresholds or DetectionThresholds()
    scene.floor.require_valid()
    flags = {}
    for oid in sorted(scene.objects):
        p = scene.objects[oid].placement
        align = abs(_wrap_mod(p.orientation, np.pi / 2.0)) <= th.align_angle_tol
        corners = obb_ground_corners(p)
        inside = bool(np.all(points_in_polygon(corners, scene.floor.vertices)))
        flags[oid] = (align, inside)
    return flags


# ---------------------------------------------------------------------------
# whole-scene detection


def detect_scene(scene, thresholds=None, samples=SURFACE_SAMPLE_COUNT):
    """Return a copy of the scene with all edge sets freshly detected."""
    th = thresholds or DetectionThresholds()
    cache = {}
    edges = EdgeSet()

    ids = sorted(scene.objects)
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            a, b = scene.objects[ids[i]], scene.objects[ids[j]]
            if detect_adjacency(a, b, th, samples, _cache=cache):
                edges.binary.append(BinaryEdge("adjacency", a.id, b.id))
            for kind in sorted(detect_binary_symmetries(a, b, th)):
                edges.binary.append(BinaryEdge(kind, a.id, b.id))

    for region in sorted(scene.regions, key=lambda r: r.id):
        members = [scene.objects[c] for c in region.children if c in scene.objects]
        if len(members) > 2:
            edges.hyper.extend(extract_hyperedges(members, th, samples, _cache=cache))

    edges.vertical = detect_room_object_edges(scene, th)
    edges.binary.sort(key=lambda e: e.key())
    edges.hyper.sort(key=lambda e: (e.type, tuple(e.members)))

    return SceneHierarchy(
        room_id=scene.room_id,
        floor=scene.floor,
        regions=scene.regions,
        objects=scene.objects,
        edges=edges,
        room_type=scene.room_type,
    )
