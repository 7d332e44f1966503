import numpy as np
import pytest

from scenehgn import floor as fl


def square(side=1.0, offset=(0.0, 0.0)):
    ox, oz = offset
    return fl.FloorPolygon(
        [[ox, oz], [ox + side, oz], [ox + side, oz + side], [ox, oz + side]]
    )


def lshape():
    return fl.FloorPolygon([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]])


def synth_floors(count=50):
    """Rectangles, L-shapes and random rectilinear polygons."""
    rng = np.random.default_rng(99)
    floors = []
    while len(floors) < count:
        kind = len(floors) % 3
        if kind == 0:
            w, d = rng.uniform(1.5, 6.0, 2)
            poly = fl.FloorPolygon([[0, 0], [w, 0], [w, d], [0, d]])
        elif kind == 1:
            w, d = rng.uniform(3.0, 6.0, 2)
            cw, cd = rng.uniform(1.0, w - 1.0), rng.uniform(1.0, d - 1.0)
            poly = fl.FloorPolygon(
                [[0, 0], [w, 0], [w, d], [w - cw, d], [w - cw, d - cd], [0, d - cd]]
            )
        else:
            w, d = rng.uniform(4.0, 7.0, 2)
            n1, n2 = rng.uniform(0.4, 1.2, 2)
            poly = fl.FloorPolygon(
                [[0, 0], [w - n1, 0], [w - n1, n1], [w, n1], [w, d],
                 [n2, d], [n2, d - n2], [0, d - n2]]
            )
        if poly.is_valid():
            floors.append(poly)
    return floors


# ---------------------------------------------------------------------------
# polygon utilities


def test_polygon_validity_checks():
    assert square().is_valid()
    bowtie = fl.FloorPolygon([[0, 0], [1, 1], [1, 0], [0, 1]])
    assert not bowtie.is_valid()
    clockwise = fl.FloorPolygon([[0, 0], [0, 1], [1, 1], [1, 0]])
    assert not clockwise.is_valid()
    with pytest.raises(fl.InvalidFloorError):
        bowtie.require_valid()


def test_points_in_polygon_including_boundary():
    poly = square()
    pts = np.array([[0.5, 0.5], [1.5, 0.5], [0.0, 0.5], [1.0, 1.0], [-0.01, 0.5]])
    got = fl.points_in_polygon(pts, poly.vertices)
    assert list(got) == [True, False, True, True, False]


def test_points_in_polygon_concave():
    poly = lshape()
    got = fl.points_in_polygon(np.array([[0.5, 0.5], [1.5, 1.5], [0.5, 1.5]]), poly.vertices)
    assert list(got) == [True, False, True]


# ---------------------------------------------------------------------------
# registration


def test_register_unit_square_counts_and_corners():
    ring = fl.register_ring(square())
    assert len(ring.vertices) == fl.RING_VERTEX_COUNT
    corners = {(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)}
    snapped = {tuple(v) for v in ring.vertices if tuple(v) in corners}
    assert snapped == corners
    # 149 +- 1 vertices per side
    for axis, value in ((1, 0.0), (0, 1.0), (1, 1.0), (0, 0.0)):
        count = int(np.sum(np.isclose(ring.vertices[:, axis], value)))
        assert abs(count - 150) <= 1  # 149 intervals -> 150 boundary points


def test_register_starts_at_lexicographic_smallest():
    poly = fl.FloorPolygon([[2, 2], [3, 2], [3, 3], [2, 3]])
    ring = fl.register_ring(poly)
    assert np.allclose(ring.vertices[0], [2, 2])


def test_register_spacing_near_uniform_on_64_gon():
    angles = 2 * np.pi * np.arange(64) / 64
    poly = fl.FloorPolygon(np.stack([2 * np.cos(angles), 2 * np.sin(angles)], axis=1))
    ring = fl.register_ring(poly)
    gaps = np.linalg.norm(np.roll(ring.vertices, -1, axis=0) - ring.vertices, axis=1)
    perimeter = fl.polygon_perimeter(poly.vertices)
    assert np.abs(gaps - perimeter / fl.RING_VERTEX_COUNT).max() <= 0.01 * perimeter


def test_register_translation_equivariant():
    a = fl.register_ring(square())
    b = fl.register_ring(square(offset=(3.25, -1.5)))
    assert np.array_equal(b.vertices, a.vertices + np.array([3.25, -1.5]))


def test_register_rejects_degenerate():
    with pytest.raises(fl.InvalidFloorError):
        fl.register_ring(fl.FloorPolygon([[0, 0], [1, 0], [2, 0]]))


# ---------------------------------------------------------------------------
# features


def test_identity_features_exact():
    ref = fl.reference_ring()
    feats = fl.ring_to_features(ref, ref)
    assert np.array_equal(feats.values, fl.identity_features().values)


def test_global_rotation_feature():
    ref = fl.reference_ring()
    theta = 0.7
    c, s = np.cos(theta), np.sin(theta)
    rotated = fl.FloorRing(ref.vertices @ np.array([[c, s], [-s, c]]).T)
    feats = fl.ring_to_features(rotated, ref)
    assert np.allclose(feats.rotation_log[:, 1], theta, atol=1e-12)
    assert np.allclose(feats.rotation_log[:, [0, 2]], 0.0)
    assert np.allclose(feats.scale_shear, fl.identity_features().scale_shear, atol=1e-12)


def test_round_trip_fifty_synth_floors():
    ref = fl.reference_ring()
    for poly in synth_floors(50):
        ring = fl.register_ring(poly)
        feats = fl.ring_to_features(ring, ref)
        rec = fl.features_to_ring(feats, ref, 0, ring.vertices[0])
        assert np.abs(rec.vertices - ring.vertices).max() <= 1e-8


def test_uniform_scale_feature_reconstruction():
    ref = fl.reference_ring()
    feats = fl.identity_features().values.copy()
    feats[:, 0] = 2.0
    feats[:, 2] = 2.0
    rec = fl.features_to_ring(fl.DeformationFeature(feats), ref, 0, ref.vertices[0])
    expected = ref.vertices[0] + 2.0 * (ref.vertices - ref.vertices[0])
    assert np.abs(rec.vertices - expected).max() <= 1e-9


def test_identity_features_reconstruct_reference():
    ref = fl.reference_ring()
    rec = fl.features_to_ring(fl.identity_features(), ref, 0, ref.vertices[0])
    assert np.abs(rec.vertices - ref.vertices).max() <= 1e-10


def test_scale_shear_block_positive_definite_on_floors():
    ref = fl.reference_ring()
    for poly in synth_floors(9):
        feats = fl.ring_to_features(fl.register_ring(poly), ref)
        s = feats.scale_shear
        # stored symmetric factor: diag (s00, s11, s22), off (s01, s02, s12)
        for row in s[::37]:
            mat = np.array(
                [[row[0], row[3], row[4]], [row[3], row[1], row[5]], [row[4], row[5], row[2]]]
            )
            assert np.all(np.linalg.eigvalsh(mat) > 0.0)


def test_interpolated_features_stay_simple():
    ref = fl.reference_ring()
    floors = synth_floors(6)
    for a, b in zip(floors[:3], floors[3:]):
        ring_a, ring_b = fl.register_ring(a), fl.register_ring(b)
        fa = fl.ring_to_features(ring_a, ref)
        fb = fl.ring_to_features(ring_b, ref)
        for t in (0.0, 0.25, 0.5, 0.75, 1.0):
            blend = fl.DeformationFeature((1 - t) * fa.values + t * fb.values)
            anchor = (1 - t) * ring_a.vertices[0] + t * ring_b.vertices[0]
            rec = fl.features_to_ring(blend, ref, 0, anchor)
            assert fl.polygon_is_simple(rec.vertices)


def test_degenerate_ring_rejected():
    ref = fl.reference_ring()
    bad = ref.vertices.copy()
    bad[5] = bad[6]
    with pytest.raises(fl.DegenerateRingError):
        fl.ring_to_features(fl.FloorRing(bad), ref)


# ---------------------------------------------------------------------------
# pooled condition


def test_pool_condition_deterministic_and_discriminative():
    ref = fl.reference_ring()
    conds = []
    for poly in synth_floors(12):
        feats = fl.ring_to_features(fl.register_ring(poly), ref)
        c1 = fl.pool_condition(feats, 32)
        c2 = fl.pool_condition(feats, 32)
        assert np.array_equal(c1, c2)
        conds.append(c1)
    for i in range(len(conds)):
        for j in range(i + 1, len(conds)):
            assert np.linalg.norm(conds[i] - conds[j]) > 1e-9


def test_pool_condition_identity_image():
    pooled = fl.pool_condition(fl.identity_features(), 8)
    assert pooled.shape == (8,)
    assert np.all(np.isfinite(pooled))


# ---------------------------------------------------------------------------
# feature file format


def test_feature_file_round_trip(tmp_path):
    ref = fl.reference_ring()
    feats = fl.ring_to_features(fl.register_ring(lshape()), ref)
    path = tmp_path / "floor.bin"
    fl.write_feature_file(path, feats)
    raw = path.read_bytes()
    assert raw[:8] == fl.FEATURE_FILE_MAGIC
    assert len(raw) == 8 + fl.RING_VERTEX_COUNT * fl.FEATURE_DIM * 8
    again = fl.read_feature_file(path)
    assert np.array_equal(again.values, feats.values)


def test_feature_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 100)
    with pytest.raises(ValueError):
        fl.read_feature_file(path)
