import numpy as np
import pytest

from scenehgn import detect as dt
from scenehgn import scene as sc
from scenehgn import synth
from scenehgn.floor import FloorPolygon


def obj(oid, center, scale, yaw, category="chair"):
    return sc.ObjectNode(oid, category, sc.PlacementParams(center, scale, yaw))


def exact_ring(n, radius=1.2, scale=(0.5, 0.8, 0.45), center=(0.0, 0.0)):
    members = []
    for i in range(n):
        alpha = np.pi / 2 - 2 * np.pi * i / n
        members.append(
            obj(
                f"c{i}",
                [center[0] + radius * np.cos(alpha), scale[1] / 2, center[1] + radius * np.sin(alpha)],
                scale,
                sc.wrap_angle(np.pi - alpha),
            )
        )
    return members


# ---------------------------------------------------------------------------
# adjacency


def test_adjacency_touching_and_gap():
    a = obj("a", [0, 0.25, 0], [0.5, 0.5, 0.5], 0.0)
    touching = obj("b", [0.48, 0.25, 0], [0.5, 0.5, 0.5], 0.0)
    assert dt.detect_adjacency(a, touching)
    rbar = sc.bounding_sphere_radius(a.placement)
    gapped = obj("c", [0.5 + 0.2 * rbar, 0.25, 0], [0.5, 0.5, 0.5], 0.0)
    assert not dt.detect_adjacency(a, gapped)


def test_adjacency_matches_brute_force_distance(rng):
    th = dt.DetectionThresholds()
    for _ in range(12):
        a = obj("a", rng.uniform(-1, 1, 3), rng.uniform(0.3, 0.8, 3), rng.uniform(-np.pi, np.pi))
        b = obj("b", rng.uniform(-1, 1, 3), rng.uniform(0.3, 0.8, 3), rng.uniform(-np.pi, np.pi))
        pa = sc.surface_points(a.placement, 300)
        pb = sc.surface_points(b.placement, 300)
        brute = np.sqrt(np.min(np.sum((pa[:, None] - pb[None]) ** 2, axis=2)))
        cutoff = th.adjacency_factor * 0.5 * (
            sc.bounding_sphere_radius(a.placement) + sc.bounding_sphere_radius(b.placement)
        )
        assert dt.detect_adjacency(a, b, th, samples=300) == (brute < cutoff)


# ---------------------------------------------------------------------------
# binary symmetries


def test_nightstand_pair_translational_and_reflective():
    a = obj("a", [-1, 0.25, 0], [0.45, 0.5, 0.45], 0.0, "nightstand")
    b = obj("b", [1, 0.25, 0], [0.45, 0.5, 0.45], 0.0, "nightstand")
    assert dt.detect_binary_symmetries(a, b) == {"translational", "reflective"}


def test_chairs_on_circle_rotational():
    a = obj("a", [1, 0.4, 0], [0.5, 0.8, 0.45], np.pi / 2)
    b = obj("b", [0, 0.4, 1], [0.5, 0.8, 0.45], 0.0)
    assert "rotational" in dt.detect_binary_symmetries(a, b)


def test_symmetries_match_residual_thresholds(rng):
    """Randomized pairs against an explicit mirror/rotation residual search."""
    th = dt.DetectionThresholds()
    for _ in range(40):
        pa = sc.PlacementParams(rng.uniform(-2, 2, 3), rng.uniform(0.3, 0.8, 3), rng.uniform(-np.pi, np.pi))
        if rng.random() < 0.5:
            scale_b = pa.scale + rng.normal(0, 0.01, 3)
        else:
            scale_b = rng.uniform(0.3, 0.8, 3)
        pb = sc.PlacementParams(
            pa.center + rng.uniform(-2, 2, 3) * [1, 0.02, 1],
            scale_b,
            rng.uniform(-np.pi, np.pi) if rng.random() < 0.5 else pa.orientation,
        )
        a, b = obj("a", pa.center, pa.scale, pa.orientation), obj("b", pb.center, pb.scale, pb.orientation)
        got = dt.detect_binary_symmetries(a, b, th)

        extent = np.abs(pa.scale - pb.scale).max()
        height = abs(pa.center[1] - pb.center[1])
        dyaw = abs(sc.wrap_angle(pb.orientation - pa.orientation))
        delta = pb.center - pa.center
        phi = np.arctan2(delta[2], delta[0]) + np.pi / 2
        mirror = pa.orientation + pb.orientation + 2 * phi
        mirror = abs(mirror - np.pi * np.round(mirror / np.pi))
        want = set()
        if extent <= th.symmetry_tol and dyaw <= th.align_angle_tol:
            want.add("translational")
        if extent <= th.symmetry_tol and height <= th.symmetry_tol and mirror <= th.align_angle_tol:
            want.add("reflective")
        if extent <= th.symmetry_tol and height <= th.symmetry_tol and dyaw > th.align_angle_tol:
            want.add("rotational")
        assert got == want


def test_rotation_center_maps_a_onto_b(rng):
    for _ in range(20):
        pa = sc.PlacementParams(rng.uniform(-2, 2, 3), [0.5, 0.6, 0.4], rng.uniform(-np.pi, np.pi))
        delta = rng.uniform(0.2, np.pi)
        pb_center = rng.uniform(-2, 2, 3)
        pb = sc.PlacementParams(pb_center, [0.5, 0.6, 0.4], sc.wrap_angle(pa.orientation + delta))
        center = dt.rotation_center_of_pair(pa, pb)
        assert center is not None
        c, s = np.cos(delta), np.sin(delta)
        rot = np.array([[c, s], [-s, c]])
        mapped = center + rot @ (pa.center[[0, 2]] - center)
        assert np.allclose(mapped, pb.center[[0, 2]], atol=1e-9)
    # parallel yaws have no rotation center
    pa = sc.PlacementParams([0, 0, 0], [1, 1, 1], 0.3)
    pb = sc.PlacementParams([1, 0, 1], [1, 1, 1], 0.3)
    assert dt.rotation_center_of_pair(pa, pb) is None


# ---------------------------------------------------------------------------
# n-fold rotation


def test_nfold_exact_configurations():
    for n in (3, 4, 5):
        edge = dt.detect_nfold_rotation(exact_ring(n), samples=400)
        assert edge is not None
        assert edge.params["n"] == n
        assert np.allclose(edge.params["center"], [0, 0], atol=1e-12)


def test_nfold_rejects_half_meter_jitter():
    members = exact_ring(4)
    members[2] = obj(
        "c2",
        members[2].placement.center + np.array([0.5, 0, 0]),
        members[2].placement.scale,
        members[2].placement.orientation,
    )
    assert dt.detect_nfold_rotation(members, samples=400) is None


def test_nfold_invariant_to_input_order(rng):
    members = exact_ring(4)
    shuffled = [members[i] for i in rng.permutation(4)]
    a = dt.detect_nfold_rotation(members, samples=300)
    b = dt.detect_nfold_rotation(shuffled, samples=300)
    assert a.members == b.members
    assert a.params == b.params


def test_nfold_acceptance_matches_exhaustive_oracle(rng):
    """Jittered rings verified against exhaustive orderings and center grid."""
    th = dt.DetectionThresholds()
    from itertools import permutations

    for jitter in (0.01, 0.05, 0.2, 0.5):
        members = exact_ring(3)
        moved = [
            obj(
                m.id,
                m.placement.center + np.array([rng.normal(0, jitter), 0, rng.normal(0, jitter)]),
                m.placement.scale,
                m.placement.orientation,
            )
            for m in members
        ]
        got = dt.detect_nfold_rotation(moved, th, samples=200) is not None

        clouds = [sc.surface_points(m.placement, 200) for m in moved]
        centers = np.stack([m.placement.center[[0, 2]] for m in moved])
        pivot = centers.mean(axis=0)
        best = np.inf
        angle = 2 * np.pi / 3
        c, s = np.cos(angle), np.sin(angle)
        for perm in permutations(range(3)):
            worst = 0.0
            for i in range(3):
                src = clouds[perm[i]].copy()
                dst = clouds[perm[(i + 1) % 3]]
                dx = src[:, 0] - pivot[0]
                dz = src[:, 2] - pivot[1]
                src[:, 0] = pivot[0] + dx * c + dz * s
                src[:, 2] = pivot[1] - dx * s + dz * c
                d2 = np.sum((dst[:, None] - src[None]) ** 2, axis=2)
                cd = d2.min(axis=1).mean() + d2.min(axis=0).mean()
                worst = max(worst, cd)
            best = min(best, worst)
        oracle = best <= th.eps_r
        assert got == oracle


def test_nfold_monotone_in_eps():
    members = exact_ring(4)
    jittered = [
        obj(
            m.id,
            m.placement.center + np.array([0.05 * (i % 2), 0, 0]),
            m.placement.scale,
            m.placement.orientation,
        )
        for i, m in enumerate(members)
    ]
    loose = dt.DetectionThresholds(eps_r=0.5)
    tight = dt.DetectionThresholds(eps_r=1e-6)
    assert dt.detect_nfold_rotation(jittered, loose, samples=200) is not None
    assert dt.detect_nfold_rotation(jittered, tight, samples=200) is None


# ---------------------------------------------------------------------------
# parallel collinearity


def test_parallel_collinear_examples():
    row = [
        obj("bed", [0, 0.3, 0], [1.6, 0.6, 2.0], 0.0, "bed"),
        obj("n1", [-1.2, 0.25, 0], [0.45, 0.5, 0.45], 0.0, "nightstand"),
        obj("n2", [1.2, 0.25, 0], [0.45, 0.5, 0.45], 0.0, "nightstand"),
    ]
    edge = dt.detect_parallel_collinear(row)
    assert edge is not None and edge.type == "parallel_collinear"
    rotated = [row[0], row[1], obj("n2", [1.2, 0.25, 0], [0.45, 0.5, 0.45], 0.5236, "nightstand")]
    assert dt.detect_parallel_collinear(rotated) is None


def test_parallel_collinear_matches_least_squares_oracle(rng):
    th = dt.DetectionThresholds()
    for noise in (0.0, 0.02, 0.05, 0.1, 0.3):
        members = [
            obj(f"k{i}", [i * 1.0, 0.3, rng.normal(0, noise)], [0.5, 0.6, 0.4], 0.0)
            for i in range(4)
        ]
        got = dt.detect_parallel_collinear(members, th) is not None
        centers = np.stack([m.placement.center[[0, 2]] for m in members])
        order = np.lexsort((centers[:, 1], centers[:, 0]))
        w = np.zeros(4)
        w[order] = 2 * np.arange(4) - 3
        v = w @ centers
        v = v / np.linalg.norm(v)
        rel = centers - centers.mean(axis=0)
        perp2 = np.sum(rel**2, axis=1) - (rel @ v) ** 2
        assert got == bool(np.all(perp2 <= th.eps_t))


def test_parallel_monotone_in_eps_t():
    members = [
        obj(f"k{i}", [i * 1.0, 0.3, 0.05 * i * i], [0.5, 0.6, 0.4], 0.0) for i in range(3)
    ]
    loose = dt.DetectionThresholds(eps_t=10.0)
    tight = dt.DetectionThresholds(eps_t=1e-8)
    assert dt.detect_parallel_collinear(members, loose) is not None
    assert dt.detect_parallel_collinear(members, tight) is None


# ---------------------------------------------------------------------------
# extraction


def test_extract_dining_pattern():
    chairs = exact_ring(4)
    table = obj("table", [0, 0.37, 0], [0.9, 0.74, 0.9], 0.0, "dining_table")
    edges = dt.extract_hyperedges(chairs + [table])
    assert len(edges) == 1
    edge = edges[0]
    assert edge.type == "nfold_rotation"
    assert edge.members == ["c0", "c1", "c2", "c3"]
    assert edge.params["center_object"] == "table"


def test_extract_collinear_cabinets():
    row = [obj(f"k{i}", [i * 1.1, 0.55, 0], [0.55, 1.1, 0.45], 0.0, "cabinet") for i in range(3)]
    edges = dt.extract_hyperedges(row)
    assert len(edges) == 1
    assert edges[0].type == "parallel_collinear"
    assert edges[0].members == ["k0", "k1", "k2"]


def test_extract_requires_more_than_two():
    row = [obj(f"k{i}", [i * 1.1, 0.55, 0], [0.55, 1.1, 0.45], 0.0) for i in range(2)]
    assert dt.extract_hyperedges(row) == []


def test_extract_matches_planted_ground_truth():
    for seed in range(8):
        for name, template in synth.default_templates().items():
            scene, truth = synth.gen_scene(template, seed)
            for region in scene.regions:
                members = [scene.objects[c] for c in region.children]
                if len(members) <= 2:
                    continue
                got = {
                    (e.type, frozenset(e.members), e.params.get("center_object"))
                    for e in dt.extract_hyperedges(members)
                }
                want = {
                    (e["type"], frozenset(e["members"]), e["params"].get("center_object"))
                    for e in truth["hyper"]
                    if set(e["members"]) <= set(region.children)
                }
                assert got == want, f"{name} seed {seed} region {region.id}"


def test_extraction_deterministic_bytes():
    scene, _ = synth.gen_scene(synth.default_templates()["dining"], 5)
    members = [scene.objects[c] for c in scene.regions[0].children]
    runs = []
    for _ in range(3):
        edges = dt.extract_hyperedges(members)
        blob = repr([(e.type, e.members, sorted(e.params.items())) for e in edges])
        runs.append(blob)
    assert runs[0] == runs[1] == runs[2]


# ---------------------------------------------------------------------------
# room-object flags


def floor_rect():
    return FloorPolygon([[-3, -3], [3, -3], [3, 3], [-3, 3]])


def wrap_scene(objects):
    region = sc.RegionNode("r0", "Living_region", [o.id for o in objects])
    return sc.SceneHierarchy(
        "room", floor_rect(), [region], {o.id: o for o in objects}, sc.EdgeSet()
    )


def test_room_object_flags_examples():
    aligned = obj("bed", [0, 0.3, 0], [1.6, 0.6, 2.0], 0.0, "bed")
    scene = wrap_scene([aligned])
    assert dt.detect_room_object_edges(scene)["bed"] == (True, True)

    tilted = obj("bed", [2.6, 0.3, 0], [1.6, 0.6, 2.0], 0.3, "bed")
    scene = wrap_scene([tilted])
    assert dt.detect_room_object_edges(scene)["bed"] == (False, False)


def test_inside_flag_matches_ray_casting_oracle(rng):
    floor = FloorPolygon([[0, 0], [4, 0], [4, 2.5], [2, 2.5], [2, 4], [0, 4]])
    region_objs = []
    for k in range(30):
        region_objs.append(
            obj(
                f"o{k}",
                [rng.uniform(-0.5, 4.5), 0.3, rng.uniform(-0.5, 4.5)],
                rng.uniform(0.2, 0.7, 3),
                rng.uniform(-np.pi, np.pi),
            )
        )
    scene = sc.SceneHierarchy(
        "room", floor, [sc.RegionNode("r0", "Living_region", [o.id for o in region_objs])],
        {o.id: o for o in region_objs}, sc.EdgeSet(),
    )
    flags = dt.detect_room_object_edges(scene)

    def inside(pt):
        x, z = pt
        hit = 0
        verts = floor.vertices
        for i in range(len(verts)):
            a, b = verts[i], verts[(i + 1) % len(verts)]
            if (a[1] > z) != (b[1] > z):
                xc = a[0] + (z - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
                if x < xc:
                    hit += 1
        return hit % 2 == 1

    for o in region_objs:
        want = all(inside(c) for c in sc.obb_ground_corners(o.placement))
        assert flags[o.id][1] == want


def test_self_intersecting_floor_raises():
    floor = FloorPolygon([[0, 0], [1, 1], [1, 0], [0, 1]])
    scene = sc.SceneHierarchy("room", floor, [], {}, sc.EdgeSet())
    from scenehgn.floor import InvalidFloorError

    with pytest.raises(InvalidFloorError):
        dt.detect_room_object_edges(scene)


# ---------------------------------------------------------------------------
# invariances


def rigid_transform_scene(members, yaw, shift):
    rot = sc.rotation_y(yaw)
    out = []
    for m in members:
        center = rot @ m.placement.center + shift
        out.append(obj(m.id, center, m.placement.scale, sc.wrap_angle(m.placement.orientation + yaw), m.category))
    return out


def test_detections_invariant_under_rigid_transform(rng):
    members = exact_ring(4)
    table = obj("table", [0, 0.37, 0], [0.9, 0.74, 0.9], 0.0, "dining_table")
    group = members + [table]
    moved = rigid_transform_scene(group, 0.83, np.array([2.0, 0.0, -1.0]))

    before = {
        (e.type, frozenset(e.members)) for e in dt.extract_hyperedges(group)
    }
    after = {
        (e.type, frozenset(e.members)) for e in dt.extract_hyperedges(moved)
    }
    assert before == after

    for a, b in [(0, 1), (1, 2), (0, 3)]:
        assert dt.detect_binary_symmetries(group[a], group[b]) == dt.detect_binary_symmetries(
            moved[a], moved[b]
        )
        assert dt.detect_adjacency(group[a], group[b], samples=200) == dt.detect_adjacency(
            moved[a], moved[b], samples=200
        )
