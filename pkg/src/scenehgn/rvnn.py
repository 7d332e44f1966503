"""Toy-scale recursive conditional VAE over box-level scene hierarchies.

Scenes are encoded bottom-up (objects -> regions -> room) with hyper-edge
aware object codes and edge-indexed message passing, then mapped to a
Gaussian latent. Decoding expands the room top-down into up-to-10 region
slots and up-to-10 object slots each, with existence, semantics, placement
(discrete orientation classes plus a bounded offset), pairwise edge and
hyper-membership heads. All layers run on the autodiff tape, so the full
training loss has exact parameter gradients; training is plain Adam on the
mean loss of a small corpus.

Reconstruction losses are teacher-forced: ground-truth children occupy the
first slots in a canonical order (regions by type then centroid, objects by
category then center).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from scenehgn import autodiff as ad
from scenehgn import energy as en
from scenehgn.floor import FloorPolygon
from scenehgn.regions import ClusterParams, dbscan
from scenehgn.scene import (
    BINARY_EDGE_TYPES,
    BinaryEdge,
    DEFAULT_CATEGORIES,
    EdgeSet,
    HyperEdge,
    MAX_CHILDREN,
    OBJECT_FEATURE_DIM,
    ObjectNode,
    PlacementParams,
    REGION_TYPES,
    RegionNode,
    SceneHierarchy,
    unit_box_surface_points,
    wrap_angle,
)

CHECKPOINT_MAGIC = b"SHGNRVN1"
TRAIN_SAMPLES = 64  # surface samples per object in geometric loss terms
_LEAKY = 0.01
_PROB_FLOOR = 1e-300


class ConfigError(ValueError):
    """Raised for shape/configuration mismatches."""


class TrainingError(RuntimeError):
    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass
class ModelConfig:
    feature_dim: int = 64
    latent_dim: int = 128
    condition_dim: int = 32
    max_children: int = MAX_CHILDREN
    message_rounds: int = 2
    categories: tuple = DEFAULT_CATEGORIES
    n_region_types: int = len(REGION_TYPES)
    n_hyper_types: int = 3  # none / rotation / parallel
    object_feature_dim: int = OBJECT_FEATURE_DIM

    def __post_init__(self):
        if min(self.feature_dim, self.latent_dim, self.condition_dim) < 1:
            raise ConfigError("dimensions must be positive")
        if self.max_children != MAX_CHILDREN:
            raise ConfigError(f"max_children is fixed at {MAX_CHILDREN}")

    @property
    def n_categories(self):
        return len(self.categories)

    def category_index(self, name):
        try:
            return self.categories.index(name)
        except ValueError as exc:
            raise ConfigError(f"category {name!r} not in vocabulary") from exc


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    decay_rate: float = 0.9
    decay_every: int = 2000
    batch_size: int = 8
    epochs: int = 2000
    kl_weight: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0.0 or self.decay_rate <= 0.0:
            raise ConfigError("rates must be positive")
        if self.kl_weight < 0.0:
            raise ConfigError("KL weight must be non-negative")


# ---------------------------------------------------------------------------
# parameters


def _tensor_shapes(cfg: ModelConfig):
    F, L, C = cfg.feature_dim, cfg.latent_dim, cfg.condition_dim
    K, R, H, D = cfg.n_categories, cfg.n_region_types, cfg.n_hyper_types, cfg.object_feature_dim
    E = len(BINARY_EDGE_TYPES)
    M = cfg.max_children
    shapes = {
        "enc_obj.w": (F, D + 7 + K),
        "enc_obj.b": (F,),
        "enc_hyper.w1": (F, F + H),
        "enc_hyper.b1": (F,),
        "enc_hyper.w2": (F, F),
        "enc_hyper.b2": (F,),
        "enc_obj_agg.w": (F, F + K),
        "enc_obj_agg.b": (F,),
        "enc_region_agg.w": (F, F + R),
        "enc_region_agg.b": (F,),
        "latent_mu.w": (L, F + C),
        "latent_mu.b": (L,),
        "latent_logvar.w": (L, F + C),
        "latent_logvar.b": (L,),
        "dec_root.w": (F, L + C),
        "dec_root.b": (F,),
        "dec_region_expand.w": (M * F, F + C),
        "dec_region_expand.b": (M * F,),
        "dec_region_exist.w": (1, F),
        "dec_region_exist.b": (1,),
        "dec_region_sem.w": (R, F),
        "dec_region_sem.b": (R,),
        "dec_obj_expand.w": (M * F, F + C),
        "dec_obj_expand.b": (M * F,),
        "dec_obj_exist.w": (1, F),
        "dec_obj_exist.b": (1,),
        "dec_obj_sem.w": (K, F),
        "dec_obj_sem.b": (K,),
        "dec_obj_feat.w": (D, F),
        "dec_obj_feat.b": (D,),
        "dec_place_fc1.w": (F, F),
        "dec_place_fc1.b": (F,),
        "dec_place_fc2.w": (F, F),
        "dec_place_fc2.b": (F,),
        "dec_center.w": (3, F),
        "dec_center.b": (3,),
        "dec_scale.w": (3, F),
        "dec_scale.b": (3,),
        "dec_rho.w": (8, F),
        "dec_rho.b": (8,),
        "dec_offset.w": (1, F),
        "dec_offset.b": (1,),
        "dec_edge.w": (E, 2 * F),
        "dec_edge.b": (E,),
        "att_q.w": (F, F),
        "att_k.w": (F, F),
        "att_v.w": (F, F),
        "dec_hyper.w": (H, 2 * F),
        "dec_hyper.b": (H,),
    }
    for t in range(cfg.message_rounds):
        shapes[f"enc_mp{t}.w"] = (F, 2 * F + E)
        shapes[f"enc_mp{t}.b"] = (F,)
    return shapes


def init_params(cfg: ModelConfig, seed=0):
    """Gaussian initialization scaled by fan-in; biases start at zero."""
    rng = np.random.Generator(np.random.PCG64([seed, 0xC0FFEE]))
    params = {}
    for name, shape in sorted(_tensor_shapes(cfg).items()):
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[-1]
            params[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return params


def check_params(params, cfg: ModelConfig):
    shapes = _tensor_shapes(cfg)
    missing = sorted(set(shapes) - set(params))
    if missing:
        raise ConfigError(f"missing tensors: {missing[:4]}")
    for name, shape in shapes.items():
        if tuple(params[name].shape) != shape:
            raise ConfigError(
                f"tensor {name} has shape {params[name].shape}, expected {shape}"
            )
        if not np.all(np.isfinite(params[name])):
            raise ConfigError(f"tensor {name} has non-finite entries")


# ---------------------------------------------------------------------------
# checkpoint format


def save_checkpoint(path, params, cfg: ModelConfig):
    blob = io.BytesIO()
    blob.write(CHECKPOINT_MAGIC)
    blob.write(struct.pack("<I", 1))
    cfg_doc = {
        "feature_dim": cfg.feature_dim,
        "latent_dim": cfg.latent_dim,
        "condition_dim": cfg.condition_dim,
        "max_children": cfg.max_children,
        "message_rounds": cfg.message_rounds,
        "categories": list(cfg.categories),
        "n_region_types": cfg.n_region_types,
        "n_hyper_types": cfg.n_hyper_types,
        "object_feature_dim": cfg.object_feature_dim,
    }
    cfg_bytes = json.dumps(cfg_doc, sort_keys=True, separators=(",", ":")).encode()
    blob.write(struct.pack("<I", len(cfg_bytes)))
    blob.write(cfg_bytes)
    names = sorted(params)
    blob.write(struct.pack("<I", len(names)))
    for name in names:
        data = np.ascontiguousarray(params[name], dtype="<f8")
        encoded = name.encode("utf-8")
        blob.write(struct.pack("<H", len(encoded)))
        blob.write(encoded)
        blob.write(struct.pack("<B", data.ndim))
        for dim in data.shape:
            blob.write(struct.pack("<Q", dim))
        blob.write(data.tobytes())
    with open(path, "wb") as fh:
        fh.write(blob.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    view = io.BytesIO(raw)
    if view.read(8) != CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<I", view.read(4))
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", view.read(4))
    cfg_doc = json.loads(view.read(cfg_len).decode("utf-8"))
    cfg_doc["categories"] = tuple(cfg_doc["categories"])
    cfg = ModelConfig(**cfg_doc)
    (count,) = struct.unpack("<I", view.read(4))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", view.read(2))
        name = view.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", view.read(1))
        shape = tuple(struct.unpack("<Q", view.read(8))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(view.read(size * 8), dtype="<f8").reshape(shape).copy()
    check_params(params, cfg)
    return params, cfg


# ---------------------------------------------------------------------------
# canonical ordering and scene tensors


def canonical_regions(scene, cfg):
    def region_key(region):
        centers = [scene.objects[c].placement.center for c in region.children]
        centroid = tuple(np.mean(centers, axis=0)) if centers else (0.0, 0.0, 0.0)
        type_id = REGION_TYPES.index(region.region_type) if region.region_type in REGION_TYPES else 99
        return (type_id, centroid, region.id)

    return sorted(scene.regions, key=region_key)


def canonical_children(scene, region, cfg):
    def child_key(oid):
        obj = scene.objects[oid]
        return (cfg.category_index(obj.category), tuple(obj.placement.center), oid)

    return sorted(region.children, key=child_key)


def _one_hot(index, size):
    out = np.zeros(size)
    out[index] = 1.0
    return out


def _hyper_labels(scene, children):
    labels = np.zeros((len(children), 3))
    member_types = {}
    for edge in scene.edges.hyper:
        t = 1 if edge.type == "nfold_rotation" else 2
        for mid in edge.members:
            member_types[mid] = t
    for i, oid in enumerate(children):
        labels[i, member_types.get(oid, 0)] = 1.0
    return labels


def _region_edges(scene, children):
    index = {oid: i for i, oid in enumerate(children)}
    out = []
    for edge in sorted(scene.edges.binary, key=lambda e: e.key()):
        if edge.a in index and edge.b in index:
            out.append((index[edge.a], index[edge.b], BINARY_EDGE_TYPES.index(edge.type)))
    return out


# ---------------------------------------------------------------------------
# network building blocks (all on the tape)


def _transpose(w):
    val = w.value.T

    def vjp(g):
        return (g.T,)

    return ad.Var(val, (w,), vjp)


def dense_rows(pv, name, x):
    """Dense layer applied to rows of x: (n, in) -> (n, out)."""
    return ad.matmul(x, _transpose(pv[f"{name}.w"])) + pv[f"{name}.b"]


def dense_vec(pv, name, x):
    """Dense layer on a single vector."""
    return ad.matmul(pv[f"{name}.w"], x) + pv[f"{name}.b"]


def _softmax_rows(logits):
    shift = logits.value.max(axis=-1, keepdims=True)
    exps = ad.exp(logits - shift)
    return exps / ad.vsum(exps, axis=-1, keepdims=True)


def _sigmoid(x):
    return ad.sigmoid(x)


def encode_object_codes(pv, cfg, feats, pos, labels):
    """Object codes from [feature; placement; category one-hot] rows."""
    x = ad.concat([ad.as_var(feats), ad.as_var(pos), ad.as_var(labels)], axis=1)
    return dense_rows(pv, "enc_obj", x)


def encode_region_code(pv, cfg, codes, cat_onehots, edges, hyper_onehots):
    """Region code: hyper-aware codes, message passing, symmetric sum."""
    n = codes.value.shape[0]
    # only hyper-edge members get the updated code; others pass through
    hyper_mask = (np.asarray(hyper_onehots)[:, 0] == 0.0).astype(float)[:, None]
    hx = ad.concat([codes, ad.as_var(hyper_onehots)], axis=1)
    hidden = ad.leaky_relu(
        ad.matmul(hx, _transpose(pv["enc_hyper.w1"])) + pv["enc_hyper.b1"], _LEAKY
    )
    updated = ad.matmul(hidden, _transpose(pv["enc_hyper.w2"])) + pv["enc_hyper.b2"]
    codes = ad.as_var(hyper_mask) * updated + ad.as_var(1.0 - hyper_mask) * codes

    if edges:
        n_types = len(BINARY_EDGE_TYPES)
        directed = []
        for a, b, t in edges:
            directed.append((a, b, t))
            directed.append((b, a, t))
        recv = np.array([d[0] for d in directed])
        send = np.array([d[1] for d in directed])
        onehots = np.zeros((len(directed), n_types))
        onehots[np.arange(len(directed)), [d[2] for d in directed]] = 1.0
        scatter = np.zeros((n, len(directed)))
        scatter[recv, np.arange(len(directed))] = 1.0
        rounds = sum(1 for k in pv if k.startswith("enc_mp") and k.endswith(".w"))
        for t in range(rounds):
            msg_in = ad.concat(
                [ad.take_rows(codes, recv), ad.take_rows(codes, send), ad.Var(onehots)],
                axis=1,
            )
            messages = ad.leaky_relu(dense_rows(pv, f"enc_mp{t}", msg_in), _LEAKY)
            codes = codes + ad.matmul(ad.Var(scatter), messages)

    summed = ad.vsum(ad.concat([codes, ad.as_var(cat_onehots)], axis=1), axis=0)
    return ad.leaky_relu(dense_vec(pv, "enc_obj_agg", summed), _LEAKY)


def encode_scene_vars(pv, cfg, scene, condition):
    """Bottom-up encoding to (mu, logvar) tape nodes."""
    region_rows = []
    for region in canonical_regions(scene, cfg):
        children = canonical_children(scene, region, cfg)
        if not 1 <= len(children) <= cfg.max_children:
            raise ConfigError(f"region {region.id} has {len(children)} children")
        feats = np.stack([scene.objects[c].feature for c in children])
        if feats.shape[1] != cfg.object_feature_dim:
            raise ConfigError("object feature dimension mismatch")
        pos = np.stack([scene.objects[c].placement.as_vector() for c in children])
        labels = np.stack(
            [_one_hot(cfg.category_index(scene.objects[c].category), cfg.n_categories) for c in children]
        )
        codes = encode_object_codes(pv, cfg, feats, pos, labels)
        code = encode_region_code(
            pv, cfg, codes, labels, _region_edges(scene, children), _hyper_labels(scene, children)
        )
        type_id = REGION_TYPES.index(region.region_type)
        region_rows.append(ad.concat([code, ad.Var(_one_hot(type_id, cfg.n_region_types))]))

    summed = region_rows[0]
    for row in region_rows[1:]:
        summed = summed + row
    room = ad.leaky_relu(dense_vec(pv, "enc_region_agg", summed), _LEAKY)
    joint = ad.concat([room, ad.as_var(condition)])
    mu = dense_vec(pv, "latent_mu", joint)
    # soft-bound the log-variance so the reparameterized std cannot explode
    logvar = ad.tanh(dense_vec(pv, "latent_logvar", joint) * (1.0 / 8.0)) * 8.0
    return mu, logvar


def box_view_latent(pv, cfg, placements, condition, feature_rng):
    """Latent of an edge-free, label-free hierarchy over bare boxes.

    Boxes group by center proximity; semantic and region labels are zero and
    geometry features are random draws. This is the encoding path used for
    generation from box layouts, and training pulls it toward the full-scene
    latent so bare boxes land in the learned region of the space.
    """
    placements = list(placements)
    centers = np.stack([p.center for p in placements])
    labels = dbscan(centers, ClusterParams(eps=1.8, min_pts=1, samples_per_object=1))
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    grouped = []
    for lab in sorted(groups):
        idxs = groups[lab]
        for start in range(0, len(idxs), cfg.max_children):
            grouped.append(idxs[start : start + cfg.max_children])

    region_rows = []
    zero_region_type = np.zeros(cfg.n_region_types)
    for idxs in grouped:
        feats = feature_rng.standard_normal((len(idxs), cfg.object_feature_dim))
        pos = np.stack([placements[i].as_vector() for i in idxs])
        zero_labels = np.zeros((len(idxs), cfg.n_categories))
        codes = encode_object_codes(pv, cfg, feats, pos, zero_labels)
        code = encode_region_code(
            pv, cfg, codes, zero_labels, [], np.zeros((len(idxs), cfg.n_hyper_types))
        )
        region_rows.append(ad.concat([code, ad.Var(zero_region_type)]))
    summed = region_rows[0]
    for row in region_rows[1:]:
        summed = summed + row
    room = ad.leaky_relu(dense_vec(pv, "enc_region_agg", summed), _LEAKY)
    joint = ad.concat([room, ad.as_var(np.asarray(condition))])
    mu = dense_vec(pv, "latent_mu", joint)
    logvar = ad.tanh(dense_vec(pv, "latent_logvar", joint) * (1.0 / 8.0)) * 8.0
    return mu, logvar


def decode_root(pv, z, condition):
    joint = ad.concat([ad.as_var(z), ad.as_var(condition)])
    return ad.leaky_relu(dense_vec(pv, "dec_root", joint), _LEAKY)


def expand_slots(pv, cfg, parent, condition, which):
    joint = ad.concat([parent, ad.as_var(condition)])
    flat = ad.leaky_relu(dense_vec(pv, f"dec_{which}_expand", joint), _LEAKY)
    return ad.reshape(flat, (cfg.max_children, cfg.feature_dim))


def placement_heads(pv, slots):
    hidden = ad.leaky_relu(dense_rows(pv, "dec_place_fc1", slots), _LEAKY)
    trunk = slots + dense_rows(pv, "dec_place_fc2", hidden)
    centers = dense_rows(pv, "dec_center", trunk)
    scales = ad.softplus(dense_rows(pv, "dec_scale", trunk)) + 1e-6
    rho = _softmax_rows(dense_rows(pv, "dec_rho", trunk))
    offsets = ad.tanh(dense_rows(pv, "dec_offset", trunk)) * (np.pi / 8.0)
    return centers, scales, rho, offsets


def edge_probs(pv, slots, pairs):
    """Symmetric pairwise edge probabilities for (i, j) index pairs."""
    if not pairs:
        return None
    ii = np.array([p[0] for p in pairs])
    jj = np.array([p[1] for p in pairs])
    hi = ad.take_rows(slots, ii)
    hj = ad.take_rows(slots, jj)
    sym = ad.concat([hi + hj, ad.absolute(hi - hj)], axis=1)
    return _sigmoid(dense_rows(pv, "dec_edge", sym))


def hyper_probs(pv, cfg, slots):
    """Per-object hyper-membership probabilities via single-head attention."""
    q = ad.matmul(slots, _transpose(pv["att_q.w"]))
    k = ad.matmul(slots, _transpose(pv["att_k.w"]))
    v = ad.matmul(slots, _transpose(pv["att_v.w"]))
    scores = ad.matmul(q, _transpose_var(k)) * (1.0 / np.sqrt(cfg.feature_dim))
    weights = _softmax_rows(scores)
    ctx = ad.matmul(weights, v)
    joint = ad.concat([slots, ctx], axis=1)
    return _softmax_rows(dense_rows(pv, "dec_hyper", joint))


def _transpose_var(x):
    val = x.value.T

    def vjp(g):
        return (g.T,)

    return ad.Var(val, (x,), vjp)


# ---------------------------------------------------------------------------
# teacher-forced reconstruction loss


@dataclass
class TeacherForcedDecode:
    """Decoder outputs aligned to the canonical ground-truth slots.

    All entries are probabilities or raw placement values (not logits), so a
    decode that equals the ground truth exactly gives zero loss. Per-region
    lists follow the canonical region order.
    """

    region_exist: object  # (max_children,)
    region_sem: object  # (n_regions, n_region_types)
    obj_exist: list  # per region: (max_children,)
    obj_sem: list  # per region: (n_children, n_categories)
    obj_feat: list  # per region: (n_children, object_feature_dim)
    centers: list  # per region: (n_children, 3)
    scales: list  # per region: (n_children, 3)
    rho: list  # per region: (n_children, 8) class probabilities
    offsets: list  # per region: (n_children,)
    edge_probs: list  # per region: (n_pairs, 4) for pairs i<j
    hyper_probs: list  # per region: (n_children, 3)


def teacher_forced_decode(pv, cfg, scene, z, condition):
    """Run the decoder along the ground-truth hierarchy."""
    root = decode_root(pv, z, condition)
    region_slots = expand_slots(pv, cfg, root, condition, "region")
    region_exist = _sigmoid(dense_rows(pv, "dec_region_exist", region_slots))[:, 0]
    regions = canonical_regions(scene, cfg)
    region_sem = _softmax_rows(
        dense_rows(pv, "dec_region_sem", ad.take_rows(region_slots, np.arange(len(regions))))
    )

    out = TeacherForcedDecode(region_exist, region_sem, [], [], [], [], [], [], [], [], [])
    for r, region in enumerate(regions):
        children = canonical_children(scene, region, cfg)
        n = len(children)
        slots = expand_slots(pv, cfg, region_slots[r], condition, "obj")
        exist = _sigmoid(dense_rows(pv, "dec_obj_exist", slots))[:, 0]
        used = ad.take_rows(slots, np.arange(n))
        sem = _softmax_rows(dense_rows(pv, "dec_obj_sem", used))
        feat = dense_rows(pv, "dec_obj_feat", used)
        centers, scales, rho, offsets = placement_heads(pv, used)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        eprob = edge_probs(pv, used, pairs)
        hprob = hyper_probs(pv, cfg, used)
        out.obj_exist.append(exist)
        out.obj_sem.append(sem)
        out.obj_feat.append(feat)
        out.centers.append(centers)
        out.scales.append(scales)
        out.rho.append(rho)
        out.offsets.append(offsets[:, 0])
        out.edge_probs.append(eprob)
        out.hyper_probs.append(hprob)
    return out


def _log_floored(x):
    """log(max(x, floor)); the floor branch blocks the gradient."""
    mask = (x.value >= _PROB_FLOOR).astype(float)
    floored = ad.Var(np.maximum(x.value, _PROB_FLOOR), (x,), lambda g: (g * mask,))
    return ad.log(floored)


def _nll(prob_var, target_onehot):
    """Cross-entropy from probability rows against one-hot targets."""
    picked = ad.vsum(prob_var * ad.as_var(target_onehot), axis=-1)
    return -ad.vsum(_log_floored(picked))


def _bce(prob_var, targets):
    targets = np.asarray(targets, dtype=np.float64)
    return -(
        ad.vsum(ad.as_var(targets) * _log_floored(prob_var))
        + ad.vsum(ad.as_var(1.0 - targets) * _log_floored(1.0 - prob_var))
    )


def kl_divergence_var(mu, logvar):
    return 0.5 * ad.vsum(mu * mu + ad.exp(logvar) - 1.0 - logvar)


def loss_terms(cfg, scene, decoded: TeacherForcedDecode, mu, logvar, kl_weight=0.01,
               samples=TRAIN_SAMPLES):
    """All training loss terms on the tape; returns (total, breakdown dict).

    Inputs may be tape nodes (training) or plain arrays (evaluation); plain
    arrays are wrapped as constants.
    """
    decoded = TeacherForcedDecode(
        *[
            [ad.as_var(v) for v in fieldval] if isinstance(fieldval, list) else (ad.as_var(fieldval) if fieldval is not None else None)
            for fieldval in (
                decoded.region_exist, decoded.region_sem, decoded.obj_exist,
                decoded.obj_sem, decoded.obj_feat, decoded.centers, decoded.scales,
                decoded.rho, decoded.offsets, decoded.edge_probs, decoded.hyper_probs,
            )
        ]
    )
    mu = ad.as_var(mu)
    logvar = ad.as_var(logvar)
    regions = canonical_regions(scene, cfg)

    existence = ad.Var(0.0)
    semantic = ad.Var(0.0)
    placement = ad.Var(0.0)
    orientation = ad.Var(0.0)
    feature = ad.Var(0.0)
    edge = ad.Var(0.0)
    hyper_mask = ad.Var(0.0)
    geometric = ad.Var(0.0)

    r_targets = np.zeros(cfg.max_children)
    r_targets[: len(regions)] = 1.0
    existence = existence + _bce(decoded.region_exist, r_targets)
    r_sem_targets = np.stack(
        [_one_hot(REGION_TYPES.index(r.region_type), cfg.n_region_types) for r in regions]
    )
    semantic = semantic + _nll(decoded.region_sem, r_sem_targets)

    for r, region in enumerate(regions):
        children = canonical_children(scene, region, cfg)
        n = len(children)
        o_targets = np.zeros(cfg.max_children)
        o_targets[:n] = 1.0
        existence = existence + _bce(decoded.obj_exist[r], o_targets)

        sem_targets = np.stack(
            [_one_hot(cfg.category_index(scene.objects[c].category), cfg.n_categories) for c in children]
        )
        semantic = semantic + _nll(decoded.obj_sem[r], sem_targets)

        gt_feat = np.stack([scene.objects[c].feature for c in children])
        dfeat = decoded.obj_feat[r] - gt_feat
        feature = feature + ad.vsum(dfeat * dfeat)

        gt_centers = np.stack([scene.objects[c].placement.center for c in children])
        gt_scales = np.stack([scene.objects[c].placement.scale for c in children])
        dc = decoded.centers[r] - gt_centers
        ds = decoded.scales[r] - gt_scales
        placement = placement + ad.vsum(dc * dc) + ad.vsum(ds * ds)

        rho_targets = np.zeros((n, 8))
        offset_targets = np.zeros(n)
        for i, c in enumerate(children):
            k, resid = en.nearest_orientation_class(scene.objects[c].placement.orientation)
            rho_targets[i, k] = 1.0
            offset_targets[i] = resid
        orientation = orientation + _nll(decoded.rho[r], rho_targets)
        doff = decoded.offsets[r] - offset_targets
        orientation = orientation + ad.vsum(doff * doff)

        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        if pairs and decoded.edge_probs[r] is not None:
            index = {oid: i for i, oid in enumerate(children)}
            targets = np.zeros((len(pairs), len(BINARY_EDGE_TYPES)))
            pair_pos = {p: row for row, p in enumerate(pairs)}
            for e in scene.edges.binary:
                if e.a in index and e.b in index:
                    i, j = sorted((index[e.a], index[e.b]))
                    targets[pair_pos[(i, j)], BINARY_EDGE_TYPES.index(e.type)] = 1.0
            edge = edge + _bce(decoded.edge_probs[r], targets)

        hyper_mask = hyper_mask + _nll(decoded.hyper_probs[r], _hyper_labels(scene, children))

        # geometric terms on the decoded placements with ground-truth relations
        dec_yaws = []
        dec_centers = []
        dec_posed = {}
        for i, c in enumerate(children):
            k = int(np.argmax(decoded.rho[r].value[i]))
            yaw = en.ORIENTATION_CLASSES[k] + decoded.offsets[r][i]
            dec_yaws.append(yaw)
            dec_centers.append(decoded.centers[r][i])
        flags = scene.edges.vertical
        for i, c in enumerate(children):
            if flags.get(c, (False, False))[0]:
                geometric = geometric + en.room_object_term(dec_yaws[i])
        child_index = {oid: i for i, oid in enumerate(children)}

        def posed_points(i, oid):
            if i not in dec_posed:
                local = unit_box_surface_points(samples, scale=scene.objects[oid].placement.scale)
                dec_posed[i] = en.pose_points_var(
                    dec_centers[i], decoded.scales[r][i], dec_yaws[i], local
                )
            return dec_posed[i]

        for hedge in scene.edges.hyper:
            members = [m for m in hedge.members if m in child_index]
            if len(members) < 3:
                continue
            centers = [dec_centers[child_index[m]] for m in members]
            if hedge.type == "nfold_rotation":
                pts = [posed_points(child_index[m], m) for m in members]
                geometric = geometric + en.hyper_rotation_term(centers, pts)
            else:
                yaws = [dec_yaws[child_index[m]] for m in members]
                para, line = en.hyper_parallel_term(centers, yaws)
                geometric = geometric + para + line
        for bedge in scene.edges.binary:
            if bedge.type == "adjacency":
                continue
            if bedge.a in child_index and bedge.b in child_index:
                i, j = child_index[bedge.a], child_index[bedge.b]
                geometric = geometric + en.binary_residual_term(
                    bedge.type,
                    (dec_centers[i], decoded.scales[r][i], dec_yaws[i]),
                    (dec_centers[j], decoded.scales[r][j], dec_yaws[j]),
                )

    kl = kl_divergence_var(mu, logvar)
    breakdown = {
        "existence": existence,
        "semantic": semantic,
        "placement": placement,
        "orientation": orientation,
        "feature": feature,
        "edge": edge,
        "hyper_mask": hyper_mask,
        "geometric": geometric,
        "kl": kl,
    }
    recon = (
        existence + semantic + placement + orientation + feature + edge + hyper_mask + geometric
    )
    total = recon + kl_weight * kl
    breakdown["recon"] = recon
    breakdown["total"] = total
    return total, breakdown


def loss(scene, decoded: TeacherForcedDecode, mu, logvar, cfg=None, kl_weight=0.01):
    """Training loss of one scene against a teacher-forced decode; floats out."""
    cfg = cfg or ModelConfig()
    total, breakdown = loss_terms(cfg, scene, decoded, mu, logvar, kl_weight)
    return total.item(), {k: v.item() for k, v in breakdown.items()}


# ---------------------------------------------------------------------------
# public encode / decode


def encode_scene(scene, condition, params, cfg=None, seed=0):
    """Encode a scene to (mu, logvar, z); z is reparameterized with the seed."""
    cfg = cfg or ModelConfig()
    pv = {k: ad.Var(v) for k, v in params.items()}
    mu, logvar = encode_scene_vars(pv, cfg, scene, np.asarray(condition))
    rng = np.random.Generator(np.random.PCG64([int(seed), 0x5EED]))
    epsilon = rng.standard_normal(cfg.latent_dim)
    z = mu.value + np.exp(0.5 * logvar.value) * epsilon
    return mu.value.copy(), logvar.value.copy(), z


def _default_floor():
    return FloorPolygon(np.array([[-4.5, -4.5], [4.5, -4.5], [4.5, 4.5], [-4.5, 4.5]]))


def decode_scene(z, condition, params, cfg=None, floor=None, room_id="decoded"):
    """Decode a latent vector into a complete, always-valid scene hierarchy.

    Existence scores above 0.5 survive; if nothing survives, the best slot is
    kept so the hierarchy never goes empty. Pairwise edges threshold at 0.5;
    hyper membership is the argmax of the per-object mask rows, and member
    groups smaller than 3 are dropped.
    """
    cfg = cfg or ModelConfig()
    check_params(params, cfg)
    pv = {k: ad.Var(v) for k, v in params.items()}
    floor = floor or _default_floor()

    root = decode_root(pv, z, condition)
    region_slots = expand_slots(pv, cfg, root, condition, "region")
    region_exist = _sigmoid(dense_rows(pv, "dec_region_exist", region_slots)).value[:, 0]
    keep_regions = [i for i in range(cfg.max_children) if region_exist[i] > 0.5]
    if not keep_regions:
        keep_regions = [int(np.argmax(region_exist))]
    region_sem = _softmax_rows(dense_rows(pv, "dec_region_sem", region_slots)).value

    objects = {}
    regions = []
    edges = EdgeSet()
    for out_r, slot_r in enumerate(keep_regions):
        slots = expand_slots(pv, cfg, region_slots[slot_r], condition, "obj")
        exist = _sigmoid(dense_rows(pv, "dec_obj_exist", slots)).value[:, 0]
        keep = [i for i in range(cfg.max_children) if exist[i] > 0.5]
        if not keep:
            keep = [int(np.argmax(exist))]
        used = ad.take_rows(slots, np.array(keep))
        sem = _softmax_rows(dense_rows(pv, "dec_obj_sem", used)).value
        feats = dense_rows(pv, "dec_obj_feat", used).value
        centers, scales, rho, offsets = placement_heads(pv, used)
        centers, scales = centers.value, scales.value
        rho_v, off_v = rho.value, offsets.value[:, 0]

        child_ids = []
        for row, slot in enumerate(keep):
            oid = f"obj_{out_r}_{slot}"
            yaw = wrap_angle(
                en.ORIENTATION_CLASSES[int(np.argmax(rho_v[row]))] + off_v[row]
            )
            objects[oid] = ObjectNode(
                id=oid,
                category=cfg.categories[int(np.argmax(sem[row]))],
                placement=PlacementParams(centers[row], scales[row], yaw),
                feature=feats[row],
            )
            child_ids.append(oid)

        n = len(child_ids)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        eprob = edge_probs(pv, used, pairs)
        if eprob is not None:
            ep = eprob.value
            for row, (i, j) in enumerate(pairs):
                for t, kind in enumerate(BINARY_EDGE_TYPES):
                    if ep[row, t] > 0.5:
                        edges.binary.append(BinaryEdge(kind, child_ids[i], child_ids[j]))
        hp = hyper_probs(pv, cfg, used).value
        kinds = np.argmax(hp, axis=1)
        for t, kind in ((1, "nfold_rotation"), (2, "parallel_collinear")):
            members = [child_ids[i] for i in range(n) if kinds[i] == t]
            if len(members) < 3:
                continue
            pts = np.stack([objects[m].placement.center[[0, 2]] for m in members])
            params_dict = {}
            if kind == "nfold_rotation":
                pivot = pts.mean(axis=0)
                params_dict = {"center": [float(pivot[0]), float(pivot[1])], "n": len(members)}
            else:
                rel = pts - pts.mean(axis=0)
                order = np.lexsort((pts[:, 1], pts[:, 0]))
                w = np.zeros(len(members))
                w[order] = 2.0 * np.arange(len(members)) - (len(members) - 1)
                v = w @ pts
                norm = np.linalg.norm(v)
                direction = (v / norm) if norm > 1e-12 else np.array([1.0, 0.0])
                params_dict = {"direction": [float(direction[0]), float(direction[1])]}
            edges.hyper.append(HyperEdge(kind, sorted(members), params_dict))

        regions.append(
            RegionNode(
                id=f"region_{out_r}",
                region_type=REGION_TYPES[int(np.argmax(region_sem[slot_r]))],
                children=child_ids,
            )
        )

    edges.binary.sort(key=lambda e: e.key())
    edges.hyper.sort(key=lambda e: (e.type, tuple(e.members)))
    return SceneHierarchy(
        room_id=room_id,
        floor=floor,
        regions=regions,
        objects=objects,
        edges=edges,
        room_type="room",
    )


# ---------------------------------------------------------------------------
# training


def scene_condition(scene, cfg=None):
    """Floor-boundary condition vector via the deterministic ring codec."""
    from scenehgn.floor import polygon_condition

    cfg = cfg or ModelConfig()
    return polygon_condition(scene.floor, cfg.condition_dim)


def train(corpus, cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None,
          conditions=None, log_every=0):
    """Fit the VAE to a scene corpus with Adam; returns (params, loss curve).

    One epoch sweeps the corpus in batches; with a corpus no larger than the
    batch size each epoch is a single step. The learning rate decays by the
    configured factor every `decay_every` steps. Deterministic per seed.
    """
    cfg = cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    corpus = list(corpus)
    if not corpus:
        raise ConfigError("training corpus is empty")
    if conditions is None:
        conditions = [scene_condition(s, cfg) for s in corpus]

    params = init_params(cfg, seed=train_cfg.seed)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    rng = np.random.Generator(np.random.PCG64([train_cfg.seed, 0x7EA1]))

    n = len(corpus)
    batch = max(1, min(train_cfg.batch_size, n))
    curve = []
    step = 0
    for epoch in range(train_cfg.epochs):
        order = list(range(n))
        epoch_totals = {}
        for start in range(0, n, batch):
            step += 1
            chosen = order[start : start + batch]
            pv = {k: ad.Var(val) for k, val in params.items()}
            totals = None
            breakdowns = {}
            for idx in chosen:
                scene = corpus[idx]
                cond = conditions[idx]
                mu, logvar = encode_scene_vars(pv, cfg, scene, cond)
                epsilon = rng.standard_normal(cfg.latent_dim)
                z = mu + ad.exp(logvar * 0.5) * epsilon
                decoded = teacher_forced_decode(pv, cfg, scene, z, cond)
                total, breakdown = loss_terms(
                    cfg, scene, decoded, mu, logvar, train_cfg.kl_weight
                )
                # latent consistency for bare box layouts: the label-free box
                # view of the scene should emit the same Gaussian as the full
                # encoding, so box-layout generation decodes in the right basin
                box_mu, box_logvar = box_view_latent(
                    pv, cfg, [o.placement for o in scene.object_list()], cond, rng
                )
                box_diff = box_mu - mu
                logvar_diff = box_logvar - logvar
                box_term = 25.0 * ad.vsum(box_diff * box_diff) + ad.vsum(
                    logvar_diff * logvar_diff
                )
                total = total + box_term
                breakdown["box_consistency"] = box_term
                breakdown["total"] = total
                totals = total if totals is None else totals + total
                for key, var in breakdown.items():
                    breakdowns[key] = breakdowns.get(key, 0.0) + var.item()
            mean_loss = totals * (1.0 / len(chosen))
            if not np.isfinite(mean_loss.item()):
                raise TrainingError("loss is not finite", step)
            ad.backward(mean_loss)

            lr = train_cfg.learning_rate * train_cfg.decay_rate ** (
                step // train_cfg.decay_every
            )
            for key in sorted(params):
                g = pv[key].grad
                if g is None:
                    continue
                m[key] = beta1 * m[key] + (1.0 - beta1) * g
                v[key] = beta2 * v[key] + (1.0 - beta2) * g * g
                m_hat = m[key] / (1.0 - beta1**step)
                v_hat = v[key] / (1.0 - beta2**step)
                params[key] = params[key] - lr * m_hat / (np.sqrt(v_hat) + eps)
            for key, val in breakdowns.items():
                epoch_totals[key] = epoch_totals.get(key, 0.0) + val / len(chosen)
        record = {k: val for k, val in epoch_totals.items()}
        curve.append(record)
        if log_every and (epoch + 1) % log_every == 0:
            print(
                f"epoch {epoch + 1}: total {record.get('total', float('nan')):.4f} "
                f"recon {record.get('recon', float('nan')):.4f}"
            )
    return params, curve


# ---------------------------------------------------------------------------
# applications


def reconstruct(scene, params, cfg=None, seed=0):
    """Encode a scene and decode its mean latent back to a hierarchy."""
    cfg = cfg or ModelConfig()
    cond = scene_condition(scene, cfg)
    mu, logvar, _ = encode_scene(scene, cond, params, cfg, seed=seed)
    return decode_scene(mu, cond, params, cfg, floor=scene.floor, room_id=f"{scene.room_id}_recon")


def interpolate(scene_a, scene_b, t, params, cfg=None):
    """Decode the linear blend of two scene latents and floor conditions.

    Both the latent mean and the floor features interpolate; the output floor
    is the ring reconstructed from the blended deformation features.
    """
    from scenehgn import floor as fl

    cfg = cfg or ModelConfig()
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    ref = fl.reference_ring()
    ring_a = fl.register_ring(scene_a.floor)
    ring_b = fl.register_ring(scene_b.floor)
    feats_a = fl.ring_to_features(ring_a, ref)
    feats_b = fl.ring_to_features(ring_b, ref)
    blend = fl.DeformationFeature((1.0 - t) * feats_a.values + t * feats_b.values)
    anchor = (1.0 - t) * ring_a.vertices[0] + t * ring_b.vertices[0]
    ring = fl.features_to_ring(blend, ref, 0, anchor)
    floor = FloorPolygon(ring.vertices)

    cond_a = fl.pool_condition(feats_a, cfg.condition_dim)
    cond_b = fl.pool_condition(feats_b, cfg.condition_dim)
    cond = (1.0 - t) * cond_a + t * cond_b
    mu_a, _, _ = encode_scene(scene_a, cond_a, params, cfg)
    mu_b, _, _ = encode_scene(scene_b, cond_b, params, cfg)
    z = (1.0 - t) * mu_a + t * mu_b
    return decode_scene(z, cond, params, cfg, floor=floor, room_id=f"interp_{t:.2f}")


def complete(partial_scene, params, cfg=None):
    """Map a partial scene through the latent space to a complete scene."""
    cfg = cfg or ModelConfig()
    cond = scene_condition(partial_scene, cfg)
    mu, _, _ = encode_scene(partial_scene, cond, params, cfg)
    return decode_scene(
        mu, cond, params, cfg, floor=partial_scene.floor,
        room_id=f"{partial_scene.room_id}_complete",
    )


def delete_object(scene, object_id):
    """Drop one object (and its region when emptied) from a scene copy."""
    objects = {k: v for k, v in scene.objects.items() if k != object_id}
    regions = []
    for region in scene.regions:
        children = [c for c in region.children if c != object_id]
        if children:
            regions.append(RegionNode(region.id, region.region_type, children))
    edges = EdgeSet(
        binary=[e for e in scene.edges.binary if object_id not in (e.a, e.b)],
        hyper=[
            HyperEdge(e.type, [m for m in e.members if m != object_id], dict(e.params))
            for e in scene.edges.hyper
            if len([m for m in e.members if m != object_id]) >= 3
        ],
        vertical={k: v for k, v in scene.edges.vertical.items() if k != object_id},
    )
    return SceneHierarchy(
        room_id=scene.room_id,
        floor=scene.floor,
        regions=regions,
        objects=objects,
        edges=edges,
        room_type=scene.room_type,
    )


def box_layout_to_scene(boxes, condition, params, cfg=None, seed=0, floor=None):
    """Generate a scene whose objects land near the given box placements.

    Builds an edge-free hierarchy over the boxes (grouped by center
    proximity), fills geometry features with seeded random numbers and zero
    semantic labels, encodes it, samples a latent from the emitted Gaussian
    and decodes.
    """
    cfg = cfg or ModelConfig()
    boxes = list(boxes)
    if not boxes:
        raise ValueError("need at least one box")
    rng = np.random.Generator(np.random.PCG64([int(seed), 0xB0E5]))
    pv = {k: ad.Var(v) for k, v in params.items()}
    mu, logvar = box_view_latent(pv, cfg, boxes, condition, rng)
    z = mu.value + np.exp(0.5 * logvar.value) * rng.standard_normal(cfg.latent_dim)
    return decode_scene(z, condition, params, cfg, floor=floor, room_id="boxgen")
