"""Relational energy terms over placement parameters, with exact gradients.

Every term is built on the autodiff tape, so `total_energy` returns both the
value and the analytic gradient with respect to each object's 7 placement
parameters (center, scale, yaw). Non-smooth spots (Chamfer argmin switches,
hinge activation, orientation class argmax, sample-allocation changes) use
the locally active branch: indices are fixed from the forward values before
the differentiable part of the computation is built.

Objects enter Chamfer-based terms through their box surface samples, posed
differentiably by the current placement. Congruent boxes share the same
local sample pattern (one global sample seed), so residuals vanish exactly
on exact configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from scenehgn import autodiff as ad
from scenehgn.floor import nearest_boundary_feature, points_in_polygon
from scenehgn.scene import (
    PlacementParams,
    SURFACE_SAMPLE_COUNT,
    SURFACE_SAMPLE_SEED,
    unit_box_surface_points,
    wrap_angle,
)

ORIENTATION_CLASSES = np.deg2rad(
    np.array([0.0, 45.0, 90.0, 135.0, 180.0, -45.0, -90.0, -135.0])
)
ORIENTATION_OFFSET_LIMIT = np.pi / 8.0

_CANONICAL_NORMALS = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)


@dataclass
class EnergyWeights:
    w_locate: float = 1.0
    w_ro: float = 1.0
    w_inside: float = 1.0
    w_hrot: float = 1.0
    w_hpara: float = 1.0
    w_binary: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0.0:
                raise ValueError(f"{f.name} must be non-negative")


@dataclass
class EnergyReport:
    terms: dict
    total: float
    gradient: dict = field(default_factory=dict)  # object id -> (7,) array


# ---------------------------------------------------------------------------
# tape helpers


def _wrap_var(x, period=2.0 * np.pi):
    """Wrap a tape angle into (-period/2, period/2]; shift is branch-constant."""
    shift = period * np.floor((np.asarray(x.value) + period / 2.0) / period)
    shift = np.where(
        np.asarray(x.value) - shift == -period / 2.0, shift - period, shift
    )
    return x - shift


def _pairwise_d2(av, bv):
    d2 = (
        np.sum(av * av, axis=1)[:, None]
        + np.sum(bv * bv, axis=1)[None, :]
        - 2.0 * (av @ bv.T)
    )
    return np.maximum(d2, 0.0)


def _chamfer_value(av, bv):
    d2 = _pairwise_d2(av, bv)
    a_near = bv[d2.argmin(axis=1)]
    b_near = av[d2.argmin(axis=0)]
    return float(
        np.mean(np.sum((av - a_near) ** 2, axis=1))
        + np.mean(np.sum((bv - b_near) ** 2, axis=1))
    )


def chamfer_var(a, b):
    """Chamfer distance between tape point sets; pairing fixed at entry."""
    av, bv = a.value, b.value
    d2 = _pairwise_d2(av, bv)
    iab = d2.argmin(axis=1)
    iba = d2.argmin(axis=0)
    da = a - ad.take_rows(b, iab)
    db = b - ad.take_rows(a, iba)
    return ad.vmean(ad.vsum(da * da, axis=1)) + ad.vmean(ad.vsum(db * db, axis=1))


def pose_points_var(center, scale, yaw, local_points):
    """World-space samples: center + R(yaw) @ (local * scale), on the tape."""
    scaled = ad.as_var(local_points) * scale
    lx, ly, lz = scaled[:, 0], scaled[:, 1], scaled[:, 2]
    c, s = ad.cos(yaw), ad.sin(yaw)
    wx = center[0] + lx * c + lz * s
    wy = center[1] + ly
    wz = center[2] - lx * s + lz * c
    return ad.stack([wx, wy, wz], axis=1)


def rotated_normals_var(yaw):
    c, s = ad.cos(yaw), ad.sin(yaw)
    zero = ad.Var(0.0)
    one = ad.Var(1.0)
    nx = ad.stack([c, zero, -s])
    ny = ad.stack([zero, one, zero])
    nz = ad.stack([s, zero, c])
    return ad.stack([nx, -nx, ny, -ny, nz, -nz], axis=0)


def rotate_about_var(points, pivot_x, pivot_z, angle):
    """Rotate tape points by a constant angle about a vertical tape axis."""
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    dx = x - pivot_x
    dz = z - pivot_z
    rx = pivot_x + dx * c + dz * s
    rz = pivot_z - dx * s + dz * c
    return ad.stack([rx, y, rz], axis=1)


def room_object_term(yaw):
    """Chamfer mismatch between yaw-rotated box normals and the world axes."""
    return chamfer_var(rotated_normals_var(yaw), ad.Var(_CANONICAL_NORMALS))


def ground_corners_var(center, scale, yaw):
    """Plan-view footprint corners (4, 2) on the tape."""
    signs = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    lx = ad.as_var(signs[:, 0]) * scale[0]
    lz = ad.as_var(signs[:, 1]) * scale[2]
    c, s = ad.cos(yaw), ad.sin(yaw)
    wx = center[0] + lx * c + lz * s
    wz = center[2] - lx * s + lz * c
    return ad.stack([wx, wz], axis=1)


def containment_term(center, scale, yaw, floor_vertices):
    """Squared hinge of each footprint corner's distance outside the floor."""
    verts = np.asarray(floor_vertices, dtype=np.float64)
    # bounding-circle early out: deep-inside objects contribute exactly zero
    cxz = np.array([float(center.value[0]), float(center.value[2])])
    if points_in_polygon(cxz, verts)[0]:
        seg, _ = nearest_boundary_feature(verts, cxz)
        a, b = verts[seg], verts[(seg + 1) % len(verts)]
        ab = b - a
        t = np.clip(np.dot(cxz - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        boundary_dist = float(np.linalg.norm(cxz - (a + t * ab)))
        half_diag = 0.5 * float(np.hypot(scale.value[0], scale.value[2]))
        if boundary_dist > half_diag:
            return ad.Var(0.0)
    corners = ground_corners_var(center, scale, yaw)
    inside = points_in_polygon(corners.value, floor_vertices)
    total = ad.Var(0.0)
    for k in range(4):
        if inside[k]:
            continue
        corner = corners[k]
        seg, clamp = nearest_boundary_feature(verts, corners.value[k])
        a = verts[seg]
        b = verts[(seg + 1) % len(verts)]
        if clamp == -1:
            diff = corner - a
            total = total + ad.vsum(diff * diff)
        elif clamp == 1:
            diff = corner - b
            total = total + ad.vsum(diff * diff)
        else:
            tangent = (b - a) / np.linalg.norm(b - a)
            diff = corner - a
            along = ad.dot(diff, ad.Var(tangent))
            total = total + ad.vsum(diff * diff) - along * along
    return total


def hyper_rotation_term(centers, posed_points):
    """Rotational-symmetry residual for one hyper edge.

    For each member, the smallest Chamfer distance to the 2*pi/N rotation of
    any other member about the vertical axis through the member barycenter.
    The argmin partner is chosen on plain values; only the winning pair goes
    on the tape.
    """
    n = len(centers)
    angle = 2.0 * np.pi / n
    px = sum((c[0] for c in centers), ad.Var(0.0)) * (1.0 / n)
    pz = sum((c[2] for c in centers), ad.Var(0.0)) * (1.0 / n)

    pivot = (float(px.value), float(pz.value))
    rotated_values = [
        _rotate_points(pts.value, pivot, angle) for pts in posed_points
    ]
    rotated_cache = {}
    total = ad.Var(0.0)
    for i in range(n):
        best_j, best_val = None, np.inf
        for j in range(n):
            if j == i:
                continue
            val = _chamfer_value(posed_points[i].value, rotated_values[j])
            if val < best_val:
                best_j, best_val = j, val
        if best_j not in rotated_cache:
            rotated_cache[best_j] = rotate_about_var(
                posed_points[best_j], px, pz, angle
            )
        total = total + chamfer_var(posed_points[i], rotated_cache[best_j])
    return total


def _rotate_points(points, pivot, angle):
    c, s = np.cos(angle), np.sin(angle)
    out = points.copy()
    dx = points[:, 0] - pivot[0]
    dz = points[:, 2] - pivot[1]
    out[:, 0] = pivot[0] + dx * c + dz * s
    out[:, 2] = pivot[1] - dx * s + dz * c
    return out


def hyper_center_term(centers, target_center):
    """Squared offset between the member barycenter and a center object."""
    n = len(centers)
    px = sum((c[0] for c in centers), ad.Var(0.0)) * (1.0 / n)
    pz = sum((c[2] for c in centers), ad.Var(0.0)) * (1.0 / n)
    dx = px - target_center[0]
    dz = pz - target_center[2]
    return dx * dx + dz * dz


def hyper_parallel_term(centers, yaws):
    """Parallelism plus collinearity residual for one hyper edge.

    First part: pairwise Chamfer distances between the members' rotated
    normal sets. Second part: squared perpendicular distance of each center
    to the line through the barycenter along the pair-averaged direction
    (centers sorted by x then z before averaging pair offsets, ground plane
    only).
    """
    n = len(centers)
    normals = [rotated_normals_var(y) for y in yaws]
    para = ad.Var(0.0)
    for i in range(n):
        for j in range(i + 1, n):
            para = para + chamfer_var(normals[i], normals[j])

    cx = ad.stack([c[0] for c in centers])
    cz = ad.stack([c[2] for c in centers])
    order = np.lexsort((cz.value, cx.value))
    weights = np.zeros(n)
    weights[order] = 2.0 * np.arange(n) - (n - 1)
    vx = ad.dot(cx, ad.Var(weights))
    vz = ad.dot(cz, ad.Var(weights))
    vnorm2 = vx * vx + vz * vz
    if float(vnorm2.value) < 1e-24:
        return para, ad.Var(0.0)
    inv = vnorm2 ** -0.5
    ux, uz = vx * inv, vz * inv

    px = ad.vmean(cx)
    pz = ad.vmean(cz)
    dx = cx - px
    dz = cz - pz
    along = dx * ux + dz * uz
    perp2 = ad.vsum(dx * dx + dz * dz - along * along)
    return para, perp2


def mirror_line_angle_var(center_a, center_b):
    """Direction of the vertical mirror plane bisecting two centers."""
    dx = center_b[0] - center_a[0]
    dz = center_b[2] - center_a[2]
    return ad.atan2(dz, dx) + np.pi / 2.0


def binary_residual_term(edge_type, placement_a, placement_b):
    """Squared residual of the symmetry map implied by a binary edge.

    Takes tape triples (center, scale, yaw). Adjacency carries no residual.
    Translation: extent and yaw mismatch. Reflection: extent, height and
    mirrored-yaw mismatch (box yaw matches modulo pi). Rotation: extent and
    height mismatch (the in-plane rotation maps centers exactly).
    """
    ca, sa, ya = placement_a
    cb, sb, yb = placement_b
    ds = sa - sb
    extent = ad.vsum(ds * ds)
    if edge_type == "adjacency":
        return ad.Var(0.0)
    if edge_type == "translational":
        dyaw = _wrap_var(ya - yb)
        return extent + dyaw * dyaw
    dy = ca[1] - cb[1]
    height = dy * dy
    if edge_type == "rotational":
        return extent + height
    if edge_type == "reflective":
        phi = mirror_line_angle_var(ca, cb)
        resid = _wrap_var(ya + yb + 2.0 * phi, period=np.pi)
        return extent + height + resid * resid
    raise ValueError(f"unknown binary edge type {edge_type!r}")


# ---------------------------------------------------------------------------
# public operations (plain numpy in, floats out)


def placement_loss(pred: PlacementParams, rho, offset, gt: PlacementParams) -> float:
    """Squared placement error with discrete orientation decoding.

    The decoded yaw is the 45-degree class with the highest score plus a
    residual offset, which must lie in [-22.5, 22.5] degrees. The angular
    error is wrapped.
    """
    rho = np.asarray(rho, dtype=np.float64).reshape(8)
    offset = float(offset)
    if not -ORIENTATION_OFFSET_LIMIT <= offset <= ORIENTATION_OFFSET_LIMIT:
        raise ValueError(f"orientation offset {offset} outside +/-22.5 degrees")
    d_center = float(np.sum((pred.center - gt.center) ** 2))
    d_scale = float(np.sum((pred.scale - gt.scale) ** 2))
    decoded = ORIENTATION_CLASSES[int(np.argmax(rho))] + offset
    d_orient = wrap_angle(decoded - gt.orientation) ** 2
    return d_center + d_scale + d_orient


def nearest_orientation_class(theta):
    """Index of the 45-degree class closest to theta, plus the residual."""
    diffs = np.array([wrap_angle(theta - a) for a in ORIENTATION_CLASSES])
    k = int(np.argmin(np.abs(diffs)))
    return k, float(diffs[k])


def _object_local_points(obj, samples, overrides=None):
    if overrides is not None and obj.id in overrides:
        return overrides[obj.id]
    return unit_box_surface_points(
        samples, seed=SURFACE_SAMPLE_SEED, scale=obj.placement.scale
    )


def room_object_loss(scene) -> float:
    """Axis-alignment mismatch summed over objects flagged align-with-boundary."""
    total = 0.0
    for oid in sorted(scene.objects):
        flags = scene.edges.vertical.get(oid)
        if flags is None or not flags[0]:
            continue
        yaw = ad.Var(scene.objects[oid].placement.orientation)
        total += room_object_term(yaw).item()
    return total


def containment_penalty(scene) -> float:
    """Squared hinge of footprint corners outside the floor, summed."""
    scene.floor.require_valid()
    total = 0.0
    for oid in sorted(scene.objects):
        p = scene.objects[oid].placement
        term = containment_term(
            ad.Var(p.center), ad.Var(p.scale), ad.Var(p.orientation), scene.floor.vertices
        )
        total += term.item()
    return total


def _placement_vars(placements):
    return [
        (ad.Var(p.center), ad.Var(p.scale), ad.Var(p.orientation)) for p in placements
    ]


def hyper_rotation_loss(placements, n=None, samples=SURFACE_SAMPLE_COUNT) -> float:
    """Rotational hyper-edge residual for a list of member placements."""
    placements = list(placements)
    if n is None:
        n = len(placements)
    if n != len(placements) or n < 3:
        raise ValueError("rotational hyper edge needs n == len(members) >= 3")
    triples = _placement_vars(placements)
    posed = [
        pose_points_var(c, s, y, unit_box_surface_points(samples, scale=p.scale))
        for (c, s, y), p in zip(triples, placements)
    ]
    centers = [t[0] for t in triples]
    return hyper_rotation_term(centers, posed).item()


def hyper_parallel_loss(placements) -> float:
    """Parallel-collinearity residual for a list of member placements."""
    placements = list(placements)
    if len(placements) < 3:
        raise ValueError("parallel hyper edge needs at least 3 members")
    triples = _placement_vars(placements)
    para, line = hyper_parallel_term(
        [t[0] for t in triples], [t[2] for t in triples]
    )
    return para.item() + line.item()


def hyper_parallel_total(placements) -> float:
    """Same residual, defined for >= 2 members (used by edge extraction)."""
    placements = list(placements)
    if len(placements) < 2:
        return 0.0
    triples = _placement_vars(placements)
    para, line = hyper_parallel_term(
        [t[0] for t in triples], [t[2] for t in triples]
    )
    return para.item() + line.item()


def binary_symmetry_residual(edge, objects) -> float:
    """Residual of one binary edge given the scene's object map."""
    pa = objects[edge.a].placement
    pb = objects[edge.b].placement
    va = (ad.Var(pa.center), ad.Var(pa.scale), ad.Var(pa.orientation))
    vb = (ad.Var(pb.center), ad.Var(pb.scale), ad.Var(pb.orientation))
    return binary_residual_term(edge.type, va, vb).item()


def total_energy(
    scene,
    weights: EnergyWeights | None = None,
    samples: int = SURFACE_SAMPLE_COUNT,
    local_points: dict | None = None,
    need_grad: bool = True,
) -> EnergyReport:
    """Weighted sum of all relational terms plus its placement gradient.

    Terms: room_object (yaw alignment for flagged objects), containment
    (footprint corners inside the floor), hyper_rotation and hyper_center
    (rotational hyper edges; the center part anchors the member barycenter
    to the edge's center object when one is recorded), hyper_parallel, and
    binary (symmetry-map residuals). `local_points` optionally pins each
    object's local sample pattern, which keeps the objective smooth while
    scales move during optimization.
    """
    weights = weights or EnergyWeights()
    ids = sorted(scene.objects)
    tape = {}
    for oid in ids:
        p = scene.objects[oid].placement
        tape[oid] = (ad.Var(p.center), ad.Var(p.scale), ad.Var(p.orientation))

    posed_cache = {}

    def posed(oid):
        if oid not in posed_cache:
            obj = scene.objects[oid]
            local = _object_local_points(obj, samples, local_points)
            c, s, y = tape[oid]
            posed_cache[oid] = pose_points_var(c, s, y, local)
        return posed_cache[oid]

    terms = {
        "room_object": ad.Var(0.0),
        "containment": ad.Var(0.0),
        "hyper_rotation": ad.Var(0.0),
        "hyper_center": ad.Var(0.0),
        "hyper_parallel": ad.Var(0.0),
        "binary": ad.Var(0.0),
    }

    floor_ok = scene.floor.is_valid()
    for oid in ids:
        c, s, y = tape[oid]
        flags = scene.edges.vertical.get(oid)
        if flags is not None and flags[0]:
            terms["room_object"] = terms["room_object"] + room_object_term(y)
        if floor_ok:
            terms["containment"] = terms["containment"] + containment_term(
                c, s, y, scene.floor.vertices
            )

    for edge in sorted(scene.edges.hyper, key=lambda e: (e.type, tuple(e.members))):
        members = [m for m in edge.members if m in scene.objects]
        if len(members) < 3:
            continue
        centers = [tape[m][0] for m in members]
        if edge.type == "nfold_rotation":
            pts = [posed(m) for m in members]
            terms["hyper_rotation"] = terms["hyper_rotation"] + hyper_rotation_term(
                centers, pts
            )
            center_obj = edge.params.get("center_object")
            if center_obj is not None and center_obj in scene.objects:
                terms["hyper_center"] = terms["hyper_center"] + hyper_center_term(
                    centers, tape[center_obj][0]
                )
        elif edge.type == "parallel_collinear":
            yaws = [tape[m][2] for m in members]
            para, line = hyper_parallel_term(centers, yaws)
            terms["hyper_parallel"] = terms["hyper_parallel"] + para + line

    for edge in sorted(scene.edges.binary, key=lambda e: e.key()):
        if edge.type == "adjacency":
            continue
        if edge.a not in scene.objects or edge.b not in scene.objects:
            continue
        terms["binary"] = terms["binary"] + binary_residual_term(
            edge.type, tape[edge.a], tape[edge.b]
        )

    total = (
        weights.w_ro * terms["room_object"]
        + weights.w_inside * terms["containment"]
        + weights.w_hrot * (terms["hyper_rotation"] + terms["hyper_center"])
        + weights.w_hpara * terms["hyper_parallel"]
        + weights.w_binary * terms["binary"]
    )

    gradient = {}
    if need_grad:
        ad.backward(total)
        for oid in ids:
            c, s, y = tape[oid]
            grad = np.zeros(7)
            if c.grad is not None:
                grad[0:3] = c.grad
            if s.grad is not None:
                grad[3:6] = s.grad
            if y.grad is not None:
                grad[6] = y.grad
            gradient[oid] = grad

    return EnergyReport(
        terms={k: v.item() for k, v in terms.items()},
        total=total.item(),
        gradient=gradient,
    )
