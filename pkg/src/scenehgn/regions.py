"""Functional-region extraction via density clustering of surface samples.

Objects are represented by point clouds sampled on their box surfaces; the
pooled cloud is clustered with DBSCAN and each object joins the cluster
holding the plurality of its points. Clusters become regions typed by the
category of their largest-footprint object.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from scenehgn.scene import RegionNode, surface_points

DEFAULT_LABEL_MAP = {
    "bed": "Living_region",
    "nightstand": "Living_region",
    "wardrobe": "Cabinet_region",
    "cabinet": "Cabinet_region",
    "sofa": "Living_region",
    "coffee_table": "Living_region",
    "dining_table": "Dining_region",
    "chair": "Dining_region",
    "stool": "Dining_region",
    "desk": "Office_region",
    "bookshelf": "Office_region",
    "tv_stand": "Living_region",
    "ceiling_lamp": "Ceil_region",
}


@dataclass
class ClusterParams:
    eps: float = 0.5
    min_pts: int = 30
    samples_per_object: int = 10000

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be at least 1")
        if self.samples_per_object < 1:
            raise ValueError("samples_per_object must be at least 1")


def sample_surface_points(obj, n, seed):
    """Surface samples on an object's oriented box, deterministic per seed."""
    return surface_points(obj.placement, n=n, seed=seed)


def dbscan(points, params: ClusterParams):
    """Plain DBSCAN; returns one label per point, noise labelled -1.

    Neighborhoods are closed balls of radius eps and include the point
    itself. Core points connect into clusters; a border point joins the
    cluster of its first core neighbor in input order. Cluster ids count up
    in order of each cluster's first core point.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels

    tree = cKDTree(pts)
    counts = tree.query_ball_point(pts, params.eps, return_length=True, workers=1)
    core = counts >= params.min_pts

    cluster = 0
    for start in range(n):
        if not core[start] or labels[start] != -1:
            continue
        labels[start] = cluster
        queue = deque([start])
        while queue:
            p = queue.popleft()
            for q in sorted(tree.query_ball_point(pts[p], params.eps)):
                if core[q] and labels[q] == -1:
                    labels[q] = cluster
                    queue.append(q)
        cluster += 1

    # border points: first core neighbor in input order decides
    border = np.nonzero(~core)[0]
    for p in border:
        neighbors = sorted(tree.query_ball_point(pts[p], params.eps))
        for q in neighbors:
            if core[q]:
                labels[p] = labels[q]
                break
    return labels


def _footprint_area(obj):
    return float(obj.placement.scale[0] * obj.placement.scale[2])


def _region_type_for(members, label_map):
    largest = max(members, key=lambda o: (_footprint_area(o), o.id))
    return label_map.get(largest.category, "Living_region")


def extract_regions(objects, params: ClusterParams | None = None, label_map=None, seed=0):
    """Cluster objects into functional regions.

    Pools per-object surface samples, runs DBSCAN, lifts point labels to
    objects by plurality, and types each region by its largest-footprint
    member. Objects with only noise points become singleton regions. Regions
    over the 10-child cap are re-clustered with halved eps until they fit.
    """
    objects = sorted(objects, key=lambda o: o.id)
    if not objects:
        raise ValueError("extract_regions needs at least one object")
    params = params or ClusterParams()
    label_map = DEFAULT_LABEL_MAP if label_map is None else label_map

    def cluster_objects(objs, eps):
        local = ClusterParams(eps, params.min_pts, params.samples_per_object)
        clouds = [sample_surface_points(o, params.samples_per_object, seed) for o in objs]
        owners = np.repeat(np.arange(len(objs)), [len(c) for c in clouds])
        labels = dbscan(np.concatenate(clouds), local)
        assignment = []
        for k in range(len(objs)):
            mine = labels[owners == k]
            clustered = mine[mine >= 0]
            if clustered.size == 0:
                assignment.append(-1)
            else:
                assignment.append(int(np.bincount(clustered).argmax()))
        return assignment

    def split(objs, eps, depth=0):
        if len(objs) <= 10:
            return [objs]
        if depth >= 12 or eps <= 1e-6:
            return [objs[i : i + 10] for i in range(0, len(objs), 10)]
        assignment = cluster_objects(objs, eps)
        buckets = {}
        for obj, lab in zip(objs, assignment):
            buckets.setdefault(lab, []).append(obj)
        if len(buckets) == 1:
            return split(objs, eps / 2.0, depth + 1)
        out = []
        for lab in sorted(buckets):
            out.extend(split(buckets[lab], eps / 2.0, depth + 1))
        return out

    assignment = cluster_objects(objects, params.eps)
    groups = {}
    singles = []
    for obj, lab in zip(objects, assignment):
        if lab < 0:
            singles.append([obj])
        else:
            groups.setdefault(lab, []).append(obj)

    member_lists = []
    for lab in sorted(groups):
        member_lists.extend(split(groups[lab], params.eps / 2.0))
    member_lists.extend(singles)

    regions = []
    for idx, members in enumerate(member_lists):
        regions.append(
            RegionNode(
                id=f"region_{idx:03d}",
                region_type=_region_type_for(members, label_map),
                children=[o.id for o in members],
            )
        )
    return regions
