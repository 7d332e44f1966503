import copy

import numpy as np
import pytest

from scenehgn import energy as en
from scenehgn import scene as sc
from scenehgn.autodiff import Var
from scenehgn.floor import FloorPolygon


def box(center, scale, yaw):
    return sc.PlacementParams(center, scale, yaw)


def chamfer_oracle(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    ab = sum(min(float(np.sum((x - y) ** 2)) for y in b) for x in a) / len(a)
    ba = sum(min(float(np.sum((y - x) ** 2)) for x in a) for y in b) / len(b)
    return ab + ba


def rotated_normals(yaw):
    rot = sc.rotation_y(yaw)
    base = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    return base @ rot.T


# ---------------------------------------------------------------------------
# placement loss


def test_placement_loss_perfect_prediction_is_zero():
    gt = box([1, 2, 3], [1, 1, 1], np.deg2rad(50))
    rho = np.zeros(8)
    rho[1] = 1.0  # the 45 degree class
    pred = box([1, 2, 3], [1, 1, 1], 0.0)
    assert en.placement_loss(pred, rho, np.deg2rad(5), gt) == 0.0


def test_placement_loss_center_offset():
    gt = box([0, 0, 0], [1, 1, 1], 0.0)
    pred = box([1, 0, 0], [1, 1, 1], 0.0)
    rho = np.zeros(8)
    rho[0] = 1.0
    assert en.placement_loss(pred, rho, 0.0, gt) == pytest.approx(1.0)


def test_placement_loss_orientation_formula():
    gt = box([0, 0, 0], [1, 1, 1], np.deg2rad(50))
    pred = box([0, 0, 0], [1, 1, 1], 0.0)
    rho0 = np.zeros(8)
    rho0[0] = 1.0
    got = en.placement_loss(pred, rho0, 0.0, gt)
    assert got == pytest.approx(np.deg2rad(50) ** 2, rel=1e-12)


def test_placement_loss_offset_domain():
    gt = box([0, 0, 0], [1, 1, 1], 0.0)
    with pytest.raises(ValueError):
        en.placement_loss(gt, np.ones(8), np.deg2rad(23), gt)


def test_placement_loss_wraps_angle():
    gt = box([0, 0, 0], [1, 1, 1], np.deg2rad(-170))
    rho = np.zeros(8)
    rho[4] = 1.0  # the 180 degree class
    got = en.placement_loss(gt, rho, np.deg2rad(10), gt)
    assert got == pytest.approx(0.0, abs=1e-18)


def test_nearest_orientation_class():
    k, resid = en.nearest_orientation_class(np.deg2rad(50))
    assert k == 1 and resid == pytest.approx(np.deg2rad(5))
    k, resid = en.nearest_orientation_class(np.deg2rad(-170))
    assert k == 4 and resid == pytest.approx(np.deg2rad(10))


# ---------------------------------------------------------------------------
# room-object alignment


@pytest.mark.parametrize("deg,expect_zero", [(0, True), (90, True), (180, True), (30, False)])
def test_room_object_quarter_turn_periodicity(deg, expect_zero):
    value = en.room_object_term(Var(np.deg2rad(deg))).item()
    if expect_zero:
        assert value <= 1e-30
    else:
        assert value > 1e-3


def test_room_object_matches_six_by_six_oracle():
    for deg in (30, 12.5, 61):
        got = en.room_object_term(Var(np.deg2rad(deg))).item()
        base = rotated_normals(0.0)
        want = chamfer_oracle(rotated_normals(np.deg2rad(deg)), base)
        assert got == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------------------
# containment


def unit_floor():
    return FloorPolygon([[-2, -2], [2, -2], [2, 2], [-2, 2]])


def containment_value(placement, floor):
    term = en.containment_term(
        Var(placement.center), Var(placement.scale), Var(placement.orientation), floor.vertices
    )
    return term.item()


def test_containment_zero_inside():
    assert containment_value(box([0, 0.3, 0], [1, 0.6, 1], 0.4), unit_floor()) == 0.0


def test_containment_hinge_half_meter():
    # axis-aligned box with one face 0.5 m beyond the x = 2 wall
    p = box([2.0, 0.3, 0.0], [1.0, 0.6, 1.0], 0.0)
    got = containment_value(p, unit_floor())
    assert got == pytest.approx(2 * 0.25, rel=1e-12)  # two corners, 0.5^2 each


def test_containment_sign_matches_ray_casting_oracle(rng):
    floor = FloorPolygon([[0, 0], [3, 0], [3, 2], [1.5, 2], [1.5, 3], [0, 3]])
    for _ in range(50):
        p = box(
            [rng.uniform(-0.5, 3.5), 0.3, rng.uniform(-0.5, 3.5)],
            rng.uniform(0.2, 0.8, 3),
            rng.uniform(-np.pi, np.pi),
        )
        corners = sc.obb_ground_corners(p)
        # oracle: plain crossing-number test per corner
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

        all_inside = all(inside(c) for c in corners)
        value = containment_value(p, floor)
        if all_inside:
            assert value <= 1e-18
        else:
            assert value > 0.0


# ---------------------------------------------------------------------------
# hyper rotation


def exact_ring(n, radius=1.2, scale=(0.5, 0.8, 0.45)):
    members = []
    for i in range(n):
        alpha = np.pi / 2 - 2 * np.pi * i / n
        members.append(
            box(
                [radius * np.cos(alpha), scale[1] / 2, radius * np.sin(alpha)],
                scale,
                sc.wrap_angle(np.pi - alpha),
            )
        )
    return members


def hyper_rotation_oracle(placements, samples):
    """All (i, j) pairs with double-loop chamfer on rotated sample clouds."""
    n = len(placements)
    centers = np.stack([p.center[[0, 2]] for p in placements])
    pivot = centers.mean(axis=0)
    clouds = [sc.surface_points(p, samples) for p in placements]
    angle = 2 * np.pi / n
    c, s = np.cos(angle), np.sin(angle)
    total = 0.0
    for i in range(n):
        best = np.inf
        for j in range(n):
            if i == j:
                continue
            rot = clouds[j].copy()
            dx = rot[:, 0] - pivot[0]
            dz = rot[:, 2] - pivot[1]
            rot[:, 0] = pivot[0] + dx * c + dz * s
            rot[:, 2] = pivot[1] - dx * s + dz * c
            best = min(best, chamfer_oracle(clouds[i], rot))
        total += best
    return total


def test_hyper_rotation_exact_configuration_is_zero():
    members = exact_ring(4)
    assert en.hyper_rotation_loss(members, samples=200) <= 1e-20


def test_hyper_rotation_increases_with_displacement():
    base = exact_ring(4)
    losses = []
    for delta in (0.0, 0.1, 0.2, 0.3):
        jittered = copy.deepcopy(base)
        jittered[1] = box(
            jittered[1].center, jittered[1].scale, jittered[1].orientation + delta
        )
        losses.append(en.hyper_rotation_loss(jittered, samples=128))
    assert losses[0] <= 1e-20
    assert all(b > a for a, b in zip(losses, losses[1:]))


def test_hyper_rotation_matches_brute_force_oracle(rng):
    for trial in range(6):
        n = int(rng.integers(3, 6))
        members = exact_ring(n)
        jittered = [
            box(
                p.center + np.array([rng.normal(0, 0.08), 0, rng.normal(0, 0.08)]),
                p.scale,
                p.orientation + rng.normal(0, 0.08),
            )
            for p in members
        ]
        got = en.hyper_rotation_loss(jittered, samples=40)
        want = hyper_rotation_oracle(jittered, samples=40)
        assert got == pytest.approx(want, rel=1e-10)


def test_hyper_rotation_requires_three():
    with pytest.raises(ValueError):
        en.hyper_rotation_loss(exact_ring(4)[:2])


# ---------------------------------------------------------------------------
# hyper parallel


def collinear_row(offsets=(-1.0, 0.0, 1.0), yaw=0.0, z=0.0):
    return [box([x, 0.25, z], [0.4, 0.5, 0.35], yaw) for x in offsets]


def parallel_oracle(placements):
    """Independent line-geometry + normals double loop."""
    n = len(placements)
    para = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            para += chamfer_oracle(
                rotated_normals(placements[i].orientation),
                rotated_normals(placements[j].orientation),
            )
    centers = np.stack([p.center[[0, 2]] for p in placements])
    order = np.lexsort((centers[:, 1], centers[:, 0]))
    weights = np.zeros(n)
    weights[order] = 2.0 * np.arange(n) - (n - 1)
    v = weights @ centers
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        return para
    v = v / norm
    p = centers.mean(axis=0)
    line = 0.0
    for c in centers:
        d = c - p
        line += float(d @ d - (d @ v) ** 2)
    return para + line


def test_parallel_exact_row_is_zero():
    assert en.hyper_parallel_loss(collinear_row()) == 0.0


def test_parallel_quarter_turn_normals_still_zero():
    members = collinear_row()
    members[1] = box(members[1].center, members[1].scale, np.pi / 2)
    placements = members
    # the normals part is invariant under quarter turns; centers stay collinear
    assert en.hyper_parallel_loss(placements) <= 1e-25


def test_parallel_displaced_center_matches_line_oracle():
    members = collinear_row()
    members[1] = box([0.0, 0.25, 0.3], members[1].scale, 0.0)
    got = en.hyper_parallel_loss(members)
    want = parallel_oracle(members)
    assert got == pytest.approx(want, rel=1e-12)
    assert got == pytest.approx(0.06, rel=1e-9)  # 0.01 + 0.04 + 0.01


def test_parallel_matches_oracle_randomized(rng):
    for _ in range(8):
        members = [
            box(
                [x + rng.normal(0, 0.1), 0.25, rng.normal(0, 0.1)],
                [0.4, 0.5, 0.35],
                rng.normal(0, 0.2),
            )
            for x in (-1.0, 0.0, 1.0, 2.0)
        ]
        got = en.hyper_parallel_loss(members)
        want = parallel_oracle(members)
        assert got == pytest.approx(want, rel=1e-10)


def test_parallel_degenerate_centers():
    members = [box([0, 0.25, 0], [0.4, 0.5, 0.35], 0.0) for _ in range(3)]
    got = en.hyper_parallel_loss(members)
    assert got == 0.0  # normals equal, line part skipped


# ---------------------------------------------------------------------------
# binary residuals


def test_translational_residual():
    a = sc.ObjectNode("a", "nightstand", box([0, 0.25, 0], [0.45, 0.5, 0.45], 0.0))
    b = sc.ObjectNode("b", "nightstand", box([1, 0.25, 0], [0.45, 0.5, 0.45], 0.0))
    edge = sc.BinaryEdge("translational", "a", "b")
    assert en.binary_symmetry_residual(edge, {"a": a, "b": b}) == 0.0
    b2 = sc.ObjectNode("b", "nightstand", box([1, 0.25, 0], [0.55, 0.5, 0.45], 0.0))
    got = en.binary_symmetry_residual(edge, {"a": a, "b": b2})
    assert got == pytest.approx(0.01, rel=1e-12)


def test_reflective_residual_matches_detection_mirror():
    from scenehgn.detect import reflective_residuals

    rng = np.random.default_rng(3)
    for _ in range(20):
        pa = box(rng.uniform(-1, 1, 3), [0.5, 0.6, 0.4], rng.uniform(-np.pi, np.pi))
        pb = box(rng.uniform(-1, 1, 3) + [2, 0, 0], [0.5, 0.6, 0.4], rng.uniform(-np.pi, np.pi))
        a = sc.ObjectNode("a", "chair", pa)
        b = sc.ObjectNode("b", "chair", pb)
        edge = sc.BinaryEdge("reflective", "a", "b")
        got = en.binary_symmetry_residual(edge, {"a": a, "b": b})
        extent, height, mirror = reflective_residuals(pa, pb)
        scale_part = float(np.sum((pa.scale - pb.scale) ** 2))
        assert got == pytest.approx(scale_part + height**2 + mirror**2, rel=1e-9)


def test_rotational_residual_matches_detection():
    from scenehgn.detect import rotational_residuals

    pa = box([0, 0.3, 0], [0.5, 0.6, 0.4], 0.2)
    pb = box([1, 0.45, 1], [0.52, 0.64, 0.40], 1.3)
    a, b = sc.ObjectNode("a", "chair", pa), sc.ObjectNode("b", "chair", pb)
    got = en.binary_symmetry_residual(sc.BinaryEdge("rotational", "a", "b"), {"a": a, "b": b})
    extent, height, _ = rotational_residuals(pa, pb)
    want = float(np.sum((pa.scale - pb.scale) ** 2)) + height**2
    assert got == pytest.approx(want, rel=1e-12)


def test_adjacency_has_no_residual():
    a = sc.ObjectNode("a", "chair", box([0, 0.3, 0], [0.5, 0.6, 0.4], 0.1))
    b = sc.ObjectNode("b", "bed", box([9, 0.3, 0], [2.0, 0.6, 1.4], 0.9))
    assert en.binary_symmetry_residual(sc.BinaryEdge("adjacency", "a", "b"), {"a": a, "b": b}) == 0.0


# ---------------------------------------------------------------------------
# total energy


def random_scene(rng, n_objects=5):
    floor = FloorPolygon([[-3, -3], [3, -3], [3, 3], [-3, 3]])
    objects = {}
    for k in range(n_objects):
        center = rng.uniform(-1.6, 1.6, 3)
        center[1] = abs(center[1]) * 0.3 + 0.2
        objects[f"o{k}"] = sc.ObjectNode(
            f"o{k}", "chair",
            box(center, rng.uniform(0.3, 0.9, 3), rng.uniform(-np.pi, np.pi)),
        )
    edges = sc.EdgeSet(
        binary=[
            sc.BinaryEdge("translational", "o0", "o1"),
            sc.BinaryEdge("reflective", "o1", "o2"),
            sc.BinaryEdge("rotational", "o2", "o3"),
        ],
        hyper=[
            sc.HyperEdge("nfold_rotation", ["o0", "o1", "o2"], {"center_object": "o4"}),
            sc.HyperEdge("parallel_collinear", ["o1", "o3", "o4"], {}),
        ],
        vertical={f"o{k}": (k % 2 == 0, True) for k in range(n_objects)},
    )
    regions = [sc.RegionNode("r0", "Living_region", [f"o{k}" for k in range(n_objects)])]
    return sc.SceneHierarchy("rand", floor, regions, objects, edges)


def test_total_energy_zero_on_planted_scene():
    from scenehgn import synth

    scene, _ = synth.gen_scene(synth.default_templates()["dining"], 0)
    report = en.total_energy(scene, samples=256)
    assert report.total <= 1e-18
    grads = np.concatenate([report.gradient[k] for k in sorted(report.gradient)])
    assert np.abs(grads).max() <= 1e-8


def test_total_energy_weight_linearity(rng):
    scene = random_scene(rng)
    base = en.total_energy(scene, en.EnergyWeights(), samples=64, need_grad=False)
    doubled = en.total_energy(
        scene, en.EnergyWeights(w_hrot=2.0), samples=64, need_grad=False
    )
    expected = base.total + base.terms["hyper_rotation"] + base.terms["hyper_center"]
    assert doubled.total == pytest.approx(expected, rel=1e-12)


def test_total_energy_gradient_matches_finite_differences(rng):
    scene = random_scene(rng)
    local = {
        oid: sc.unit_box_surface_points(48, scale=obj.placement.scale)
        for oid, obj in scene.objects.items()
    }
    report = en.total_energy(scene, samples=48, local_points=local)
    h = 1e-5
    for oid in sorted(scene.objects):
        for d in range(7):
            def shifted(delta):
                other = copy.deepcopy(scene)
                vec = other.objects[oid].placement.as_vector()
                vec[d] += delta
                other.objects[oid].placement = sc.PlacementParams.from_vector(vec)
                return en.total_energy(
                    other, samples=48, local_points=local, need_grad=False
                ).total

            fd = (shifted(h) - shifted(-h)) / (2 * h)
            assert report.gradient[oid][d] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        en.EnergyWeights(w_ro=-1.0)
