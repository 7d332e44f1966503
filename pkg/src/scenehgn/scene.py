"""Scene data model: placements, oriented boxes, hierarchy, validation, JSON.

A scene is a rooted tree (room -> functional regions -> objects) plus edge
sets. Objects are yaw-only oriented boxes: center (3), scale (3, full
extents) and a yaw angle about the world up-axis (+y). Scenes are treated as
immutable values after construction; all operations here are pure.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from scenehgn.floor import FloorPolygon

REGION_TYPES = (
    "Living_region",
    "Dining_region",
    "Office_region",
    "Ceil_region",
    "Cabinet_region",
)

BINARY_EDGE_TYPES = ("adjacency", "translational", "reflective", "rotational")
HYPER_EDGE_TYPES = ("nfold_rotation", "parallel_collinear")

DEFAULT_CATEGORIES = (
    "bed",
    "nightstand",
    "wardrobe",
    "cabinet",
    "sofa",
    "coffee_table",
    "dining_table",
    "chair",
    "stool",
    "desk",
    "bookshelf",
    "tv_stand",
    "ceiling_lamp",
)

OBJECT_FEATURE_DIM = 16
MAX_CHILDREN = 10

SURFACE_SAMPLE_COUNT = 2000
# One shared sample seed: congruent boxes then carry identical local sample
# patterns, so symmetry residuals vanish exactly on exact configurations.
SURFACE_SAMPLE_SEED = 0


class InvalidPlacementError(ValueError):
    """Raised by geometry operations on placements with non-positive scale."""


class SceneParseError(ValueError):
    """Raised for malformed scene JSON; carries a location string."""

    def __init__(self, message, location="$"):
        super().__init__(f"{message} (at {location})")
        self.location = location


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    out = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if np.ndim(theta) == 0 else out


def stable_seed(*parts):
    """Deterministic 32-bit seed from strings/ints (no hash randomization)."""
    acc = 0
    for part in parts:
        acc = zlib.crc32(str(part).encode("utf-8"), acc)
    return acc & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# placements and box geometry


@dataclass
class PlacementParams:
    """Oriented-box placement: center, full extents, yaw about +y."""

    center: np.ndarray
    scale: np.ndarray
    orientation: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.orientation = float(self.orientation)

    def as_vector(self):
        return np.concatenate([self.center, self.scale, [self.orientation]])

    @staticmethod
    def from_vector(vec):
        vec = np.asarray(vec, dtype=np.float64).reshape(7)
        return PlacementParams(vec[:3], vec[3:6], vec[6])


def rotation_y(theta):
    """Rotation about the +y world axis."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, -1, +1],
        [-1, -1, +1],
        [-1, +1, -1],
        [+1, +1, -1],
        [+1, +1, +1],
        [-1, +1, +1],
    ],
    dtype=np.float64,
)


def _require_valid_placement(placement):
    if np.any(placement.scale <= 0.0):
        raise InvalidPlacementError(f"non-positive scale {placement.scale}")


def obb_corners(placement: PlacementParams) -> np.ndarray:
    """The 8 box corners, bottom face first, plan corners counter-clockwise.

    Corner k sits at center + R(yaw) @ (signs[k] * scale / 2) with the sign
    table (-,-,-), (+,-,-), (+,-,+), (-,-,+) for the bottom face then the
    same plan order for the top face.
    """
    _require_valid_placement(placement)
    local = _CORNER_SIGNS * (placement.scale / 2.0)
    return placement.center + local @ rotation_y(placement.orientation).T


def obb_ground_corners(placement: PlacementParams) -> np.ndarray:
    """The 4 plan-view corners (x, z) of the box footprint."""
    corners = obb_corners(placement)[:4]
    return corners[:, [0, 2]]


def obb_normals(placement: PlacementParams) -> np.ndarray:
    """Six unit face normals: +/-x, +/-y, +/-z axes rotated by yaw."""
    _require_valid_placement(placement)
    rot = rotation_y(placement.orientation)
    axes = np.concatenate([rot.T, -rot.T], axis=0)
    return axes[[0, 3, 1, 4, 2, 5]]


def bounding_sphere_radius(placement: PlacementParams) -> float:
    return float(np.linalg.norm(placement.scale) / 2.0)


def unit_box_surface_points(n, seed=SURFACE_SAMPLE_SEED, scale=(1.0, 1.0, 1.0)):
    """Stratified samples on the surface of the unit box, in local coords.

    Counts per face are proportional to the face areas implied by `scale`
    (largest-remainder rounding, so each face is within one sample of its
    exact quota); within a face samples sit on a jittered grid. Returned
    points live on the unit cube [-1/2, 1/2]^3; multiply by the box extents
    to land on the real surface.
    """
    n = int(n)
    if n < 1:
        raise ValueError("need at least one sample")
    sx, sy, sz = np.asarray(scale, dtype=np.float64)
    # faces: -x, +x, -y, +y, -z, +z
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    quota = n * areas / areas.sum()
    counts = np.floor(quota).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(quota - counts), kind="stable")
    counts[order[:rem]] += 1

    rng = np.random.Generator(np.random.PCG64(seed))
    # face -> (fixed axis, sign, u axis, v axis); u/v aspect from scale
    face_axes = [(0, -1, 1, 2), (0, +1, 1, 2), (1, -1, 0, 2), (1, +1, 0, 2), (2, -1, 0, 1), (2, +1, 0, 1)]
    extents = np.array([sx, sy, sz])
    points = np.empty((n, 3))
    row = 0
    for f, (axis, sign, ua, va) in enumerate(face_axes):
        k = counts[f]
        if k == 0:
            continue
        aspect = extents[ua] / extents[va]
        gu = max(1, int(np.round(np.sqrt(k * aspect))))
        gv = int(np.ceil(k / gu))
        cells = np.arange(gu * gv)
        cu, cv = cells % gu, cells // gu
        jitter = rng.random((gu * gv, 2))
        u = (cu + jitter[:, 0]) / gu - 0.5
        v = (cv + jitter[:, 1]) / gv - 0.5
        pts = np.empty((k, 3))
        pts[:, axis] = 0.5 * sign
        pts[:, ua] = u[:k]
        pts[:, va] = v[:k]
        points[row : row + k] = pts
        row += k
    return points


def surface_points(placement: PlacementParams, n=SURFACE_SAMPLE_COUNT, seed=SURFACE_SAMPLE_SEED):
    """World-space surface samples of the placed box."""
    _require_valid_placement(placement)
    local = unit_box_surface_points(n, seed=seed, scale=placement.scale)
    posed = (local * placement.scale) @ rotation_y(placement.orientation).T
    return placement.center + posed


def chamfer_distance(a, b):
    """Symmetric mean-of-min squared point-set distance.

    CD(A, B) = mean_i min_j |a_i - b_j|^2 + mean_j min_i |b_j - a_i|^2.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def min_pair_distance(a, b):
    """Smallest euclidean distance between two point sets."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    return float(np.sqrt(d2.min()))


# ---------------------------------------------------------------------------
# nodes and edges


@dataclass
class ObjectNode:
    id: str
    category: str
    placement: PlacementParams
    feature: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.feature is None:
            self.feature = np.zeros(OBJECT_FEATURE_DIM)
        self.feature = np.asarray(self.feature, dtype=np.float64).reshape(-1)


@dataclass
class RegionNode:
    id: str
    region_type: str
    children: list

    def __post_init__(self):
        self.children = list(self.children)


@dataclass
class BinaryEdge:
    type: str
    a: str
    b: str

    def key(self):
        lo, hi = sorted((self.a, self.b))
        return (self.type, lo, hi)


@dataclass
class HyperEdge:
    type: str
    members: list
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.members = list(self.members)


@dataclass
class EdgeSet:
    binary: list = field(default_factory=list)
    hyper: list = field(default_factory=list)
    vertical: dict = field(default_factory=dict)  # object id -> (align, inside)


@dataclass
class SceneHierarchy:
    room_id: str
    floor: FloorPolygon
    regions: list
    objects: dict
    edges: EdgeSet = field(default_factory=EdgeSet)
    room_type: str = "room"

    def object_list(self):
        return [self.objects[k] for k in sorted(self.objects)]

    def region_of(self, object_id):
        for region in self.regions:
            if object_id in region.children:
                return region
        return None


# ---------------------------------------------------------------------------
# validation


@dataclass
class Violation:
    node_id: str
    rule: str
    message: str

    def __str__(self):
        return f"[{self.rule}] {self.node_id}: {self.message}"


def validate(scene: SceneHierarchy, categories=DEFAULT_CATEGORIES, feature_dim=None):
    """Check every structural invariant; returns a list of violations.

    An empty report means the scene is well formed. Violations are data, not
    exceptions: malformed scenes can always be inspected.
    """
    out = []
    categories = set(categories)

    try:
        scene.floor.require_valid()
    except Exception as exc:  # noqa: BLE001 - report, never raise
        out.append(Violation(scene.room_id, "floor", str(exc)))

    if not 1 <= len(scene.regions) <= MAX_CHILDREN:
        out.append(
            Violation(
                scene.room_id,
                "region_count",
                f"room has {len(scene.regions)} regions, expected 1..{MAX_CHILDREN}",
            )
        )

    for obj in scene.objects.values():
        if np.any(obj.placement.scale <= 0.0):
            out.append(Violation(obj.id, "scale_positive", f"scale {obj.placement.scale}"))
        theta = obj.placement.orientation
        if not (-np.pi < theta <= np.pi):
            out.append(Violation(obj.id, "orientation_range", f"yaw {theta} outside (-pi, pi]"))
        if obj.category not in categories:
            out.append(Violation(obj.id, "category_vocabulary", f"unknown category {obj.category!r}"))
        if feature_dim is not None and obj.feature.size != feature_dim:
            out.append(
                Violation(obj.id, "feature_dim", f"feature has size {obj.feature.size}, expected {feature_dim}")
            )

    seen = {}
    for region in scene.regions:
        if region.region_type not in REGION_TYPES:
            out.append(Violation(region.id, "region_type", f"unknown region type {region.region_type!r}"))
        if not 1 <= len(region.children) <= MAX_CHILDREN:
            out.append(
                Violation(
                    region.id,
                    "child_cap",
                    f"region has {len(region.children)} children, expected 1..{MAX_CHILDREN}",
                )
            )
        for child in region.children:
            if child not in scene.objects:
                out.append(Violation(region.id, "child_exists", f"unknown object {child!r}"))
            elif child in seen:
                out.append(Violation(child, "single_region", f"object also in region {seen[child]!r}"))
            else:
                seen[child] = region.id
    for obj_id in scene.objects:
        if obj_id not in seen:
            out.append(Violation(obj_id, "single_region", "object belongs to no region"))

    keys = set()
    for edge in scene.edges.binary:
        if edge.type not in BINARY_EDGE_TYPES:
            out.append(Violation(f"{edge.a}-{edge.b}", "binary_type", f"unknown type {edge.type!r}"))
        for end in (edge.a, edge.b):
            if end not in scene.objects:
                out.append(Violation(end, "edge_endpoint", f"binary edge references unknown object {end!r}"))
        if edge.key() in keys:
            out.append(Violation(f"{edge.a}-{edge.b}", "binary_duplicate", f"duplicate {edge.type} edge"))
        keys.add(edge.key())

    for edge in scene.edges.hyper:
        label = ",".join(edge.members)
        if edge.type not in HYPER_EDGE_TYPES:
            out.append(Violation(label, "hyper_type", f"unknown type {edge.type!r}"))
        if len(edge.members) < 3:
            out.append(Violation(label, "hyper_size", f"{len(edge.members)} members, need >= 3"))
        if len(set(edge.members)) != len(edge.members):
            out.append(Violation(label, "hyper_distinct", "duplicate members"))
        regions = set()
        for mid in edge.members:
            if mid not in scene.objects:
                out.append(Violation(mid, "edge_endpoint", f"hyper edge references unknown object {mid!r}"))
            else:
                regions.add(seen.get(mid))
        if len(regions) > 1:
            out.append(Violation(label, "hyper_one_region", f"members span regions {sorted(map(str, regions))}"))

    for obj_id in scene.edges.vertical:
        if obj_id not in scene.objects:
            out.append(Violation(obj_id, "edge_endpoint", f"vertical flags reference unknown object {obj_id!r}"))

    return out


# ---------------------------------------------------------------------------
# serialization


def _float_list(arr):
    return [float(x) for x in np.asarray(arr).reshape(-1)]


def scene_to_dict(scene: SceneHierarchy) -> dict:
    return {
        "room_id": scene.room_id,
        "room_type": scene.room_type,
        "floor": [[float(x), float(z)] for x, z in scene.floor.vertices],
        "regions": [
            {"id": r.id, "region_type": r.region_type, "children": list(r.children)}
            for r in sorted(scene.regions, key=lambda r: r.id)
        ],
        "objects": [
            {
                "id": o.id,
                "category": o.category,
                "center": _float_list(o.placement.center),
                "scale": _float_list(o.placement.scale),
                "orientation": float(o.placement.orientation),
                "feature": _float_list(o.feature),
            }
            for o in (scene.objects[k] for k in sorted(scene.objects))
        ],
        "edges": {
            "binary": [
                {"type": e.type, "a": e.a, "b": e.b}
                for e in sorted(scene.edges.binary, key=lambda e: e.key())
            ],
            "hyper": [
                {
                    "type": e.type,
                    "members": list(e.members),
                    "params": {
                        k: (_float_list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                        for k, v in sorted(e.params.items())
                    },
                }
                for e in sorted(scene.edges.hyper, key=lambda e: (e.type, tuple(e.members)))
            ],
            "vertical": [
                {"object": oid, "align": bool(flags[0]), "inside": bool(flags[1])}
                for oid, flags in sorted(scene.edges.vertical.items())
            ],
        },
    }


def serialize(scene: SceneHierarchy) -> bytes:
    """Scene -> canonical UTF-8 JSON bytes (sorted keys, repr-exact floats)."""
    doc = scene_to_dict(scene)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _expect(cond, message, location):
    if not cond:
        raise SceneParseError(message, location)


def scene_from_dict(doc: dict) -> SceneHierarchy:
    _expect(isinstance(doc, dict), "top level must be an object", "$")
    for key in ("room_id", "floor", "regions", "objects", "edges"):
        _expect(key in doc, f"missing key {key!r}", "$")

    floor_raw = doc["floor"]
    _expect(isinstance(floor_raw, list) and len(floor_raw) >= 3, "floor needs >= 3 vertices", "$.floor")
    for i, pt in enumerate(floor_raw):
        _expect(
            isinstance(pt, list) and len(pt) == 2 and all(isinstance(c, (int, float)) for c in pt),
            "floor vertex must be [x, z]",
            f"$.floor[{i}]",
        )
    floor = FloorPolygon(np.asarray(floor_raw, dtype=np.float64))

    objects = {}
    for i, raw in enumerate(doc["objects"]):
        loc = f"$.objects[{i}]"
        _expect(isinstance(raw, dict), "object must be a mapping", loc)
        for key in ("id", "category", "center", "scale", "orientation"):
            _expect(key in raw, f"missing key {key!r}", loc)
        _expect(isinstance(raw["center"], list) and len(raw["center"]) == 3, "center must be [x,y,z]", loc)
        _expect(isinstance(raw["scale"], list) and len(raw["scale"]) == 3, "scale must be [x,y,z]", loc)
        _expect(isinstance(raw["orientation"], (int, float)), "orientation must be a number", loc)
        oid = raw["id"]
        _expect(isinstance(oid, str), "object id must be a string", loc)
        _expect(oid not in objects, f"duplicate object id {oid!r}", loc)
        objects[oid] = ObjectNode(
            id=oid,
            category=raw["category"],
            placement=PlacementParams(raw["center"], raw["scale"], raw["orientation"]),
            feature=np.asarray(raw.get("feature", []), dtype=np.float64),
        )

    regions = []
    for i, raw in enumerate(doc["regions"]):
        loc = f"$.regions[{i}]"
        _expect(isinstance(raw, dict), "region must be a mapping", loc)
        for key in ("id", "region_type", "children"):
            _expect(key in raw, f"missing key {key!r}", loc)
        _expect(isinstance(raw["children"], list), "children must be a list", loc)
        regions.append(RegionNode(raw["id"], raw["region_type"], raw["children"]))

    edges_raw = doc["edges"]
    _expect(isinstance(edges_raw, dict), "edges must be a mapping", "$.edges")
    edges = EdgeSet()
    for i, raw in enumerate(edges_raw.get("binary", [])):
        loc = f"$.edges.binary[{i}]"
        for key in ("type", "a", "b"):
            _expect(isinstance(raw, dict) and key in raw, f"missing key {key!r}", loc)
        edges.binary.append(BinaryEdge(raw["type"], raw["a"], raw["b"]))
    for i, raw in enumerate(edges_raw.get("hyper", [])):
        loc = f"$.edges.hyper[{i}]"
        for key in ("type", "members"):
            _expect(isinstance(raw, dict) and key in raw, f"missing key {key!r}", loc)
        _expect(isinstance(raw["members"], list), "members must be a list", loc)
        edges.hyper.append(HyperEdge(raw["type"], raw["members"], dict(raw.get("params", {}))))
    for i, raw in enumerate(edges_raw.get("vertical", [])):
        loc = f"$.edges.vertical[{i}]"
        for key in ("object", "align", "inside"):
            _expect(isinstance(raw, dict) and key in raw, f"missing key {key!r}", loc)
        edges.vertical[raw["object"]] = (bool(raw["align"]), bool(raw["inside"]))

    return SceneHierarchy(
        room_id=doc["room_id"],
        floor=floor,
        regions=regions,
        objects=objects,
        edges=edges,
        room_type=doc.get("room_type", "room"),
    )


def deserialize(data) -> SceneHierarchy:
    """Parse scene JSON bytes/str; malformed input raises SceneParseError."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SceneParseError(f"not valid UTF-8: {exc}", "$") from exc
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"invalid JSON: {exc.msg}", f"offset {exc.pos}") from exc
    return scene_from_dict(doc)


def scenes_equal(a: SceneHierarchy, b: SceneHierarchy) -> bool:
    """Field-for-field equality, used to check round-trip identity."""
    return serialize(a) == serialize(b)
