"""Layout-quality metrics over scene corpora.

Category-distribution distances (overall, per room type, and pairwise
co-occurrence), pairwise x-z offset heatmaps on a fixed 3.5 m grid, and the
orientation score that peaks on the eight 45-degree yaw angles.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

HEATMAP_CELLS = 1000
HEATMAP_EDGE = 3.5  # metres, square centred at the origin


@dataclass
class CategoryHistogram:
    counts: dict = field(default_factory=dict)

    def add(self, category, weight=1):
        self.counts[category] = self.counts.get(category, 0) + weight

    def normalized(self, support):
        vec = np.array([self.counts.get(c, 0) for c in support], dtype=np.float64)
        total = vec.sum()
        if total > 0:
            vec /= total
        return vec


def emd_categorical(p, q):
    """Earth mover's distance between category distributions (0/1 ground metric).

    With unit cost between distinct categories the optimal transport cost is
    half the L1 distance. Distributions must share a support and be
    normalized.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must share a support")
    for name, vec in (("p", p), ("q", q)):
        if abs(vec.sum() - 1.0) > 1e-9 or np.any(vec < -1e-12):
            raise ValueError(f"{name} is not a normalized distribution")
    return 0.5 * float(np.abs(p - q).sum())


def emd_transport(p, q, cost=None):
    """EMD by solving the transport linear program; arbitrary ground metrics.

    This is the general path (and the oracle for the categorical shortcut):
    minimize <C, X> subject to row sums p, column sums q, X >= 0.
    """
    from scipy.optimize import linprog

    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    n = len(p)
    if cost is None:
        cost = 1.0 - np.eye(n)
    cost = np.asarray(cost, dtype=np.float64)
    a_eq = []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1.0
        a_eq.append(row.reshape(-1))
    for j in range(n):
        col = np.zeros((n, n))
        col[:, j] = 1.0
        a_eq.append(col.reshape(-1))
    b_eq = np.concatenate([p, q])
    res = linprog(cost.reshape(-1), A_eq=np.stack(a_eq), b_eq=b_eq, method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


# ---------------------------------------------------------------------------
# corpus distributions


def _category_support(corpora):
    support = set()
    for corpus in corpora:
        for scene in corpus:
            support.update(o.category for o in scene.objects.values())
    return sorted(support)


def _pooled_histogram(corpus):
    hist = CategoryHistogram()
    for scene in corpus:
        for obj in scene.objects.values():
            hist.add(obj.category)
    return hist


def o1(corpus_a, corpus_b):
    """EMD between the pooled category distributions of two corpora."""
    support = _category_support([corpus_a, corpus_b])
    return emd_categorical(
        _pooled_histogram(corpus_a).normalized(support),
        _pooled_histogram(corpus_b).normalized(support),
    )


def _by_room_type(corpus):
    grouped = {}
    for scene in corpus:
        grouped.setdefault(scene.room_type, []).append(scene)
    return grouped


def o2(corpus_a, corpus_b, warn=None):
    """Mean per-room-type EMD of category distributions."""
    support = _category_support([corpus_a, corpus_b])
    ga, gb = _by_room_type(corpus_a), _by_room_type(corpus_b)
    values = []
    for room_type in sorted(set(ga) | set(gb)):
        if room_type not in ga or room_type not in gb:
            if warn is not None:
                warn(f"room type {room_type!r} missing on one side; skipped")
            continue
        values.append(
            emd_categorical(
                _pooled_histogram(ga[room_type]).normalized(support),
                _pooled_histogram(gb[room_type]).normalized(support),
            )
        )
    return float(np.mean(values)) if values else 0.0


def _cooccurrence_histogram(corpus):
    hist = CategoryHistogram()
    for scene in corpus:
        present = sorted({o.category for o in scene.objects.values()})
        for a, b in itertools.combinations(present, 2):
            hist.add((a, b))
    return hist


def o3(corpus_a, corpus_b, warn=None):
    """Mean per-room-type EMD of unordered category co-occurrence distributions."""
    ga, gb = _by_room_type(corpus_a), _by_room_type(corpus_b)
    values = []
    for room_type in sorted(set(ga) | set(gb)):
        if room_type not in ga or room_type not in gb:
            if warn is not None:
                warn(f"room type {room_type!r} missing on one side; skipped")
            continue
        ha = _cooccurrence_histogram(ga[room_type])
        hb = _cooccurrence_histogram(gb[room_type])
        support = sorted(set(ha.counts) | set(hb.counts))
        if not support:
            values.append(0.0)
            continue
        values.append(emd_categorical(ha.normalized(support), hb.normalized(support)))
    return float(np.mean(values)) if values else 0.0


# ---------------------------------------------------------------------------
# offset heatmaps


@dataclass
class OffsetHeatmap:
    grid: np.ndarray
    pair: tuple

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.shape != (HEATMAP_CELLS, HEATMAP_CELLS):
            raise ValueError("heatmap grid must be 1000 x 1000")

    @property
    def total(self):
        return int(self.grid.sum())


def o4_heatmap(corpus, pair):
    """Histogram of x-z offsets between ordered (A, B) object pairs.

    For every scene and every A-object/B-object pair of the given categories
    the offset (x_B - x_A, z_B - z_A) is binned into a 1000 x 1000 grid over
    the 3.5 m square centred at the origin (half-open bins, so offsets on the
    positive boundary fall outside).
    """
    cat_a, cat_b = pair
    cell = HEATMAP_EDGE / HEATMAP_CELLS
    half = HEATMAP_EDGE / 2.0
    grid = np.zeros((HEATMAP_CELLS, HEATMAP_CELLS), dtype=np.int64)
    for scene in corpus:
        a_objs = [o for o in scene.object_list() if o.category == cat_a]
        b_objs = [o for o in scene.object_list() if o.category == cat_b]
        for oa in a_objs:
            for ob in b_objs:
                if oa.id == ob.id:
                    continue
                dx = ob.placement.center[0] - oa.placement.center[0]
                dz = ob.placement.center[2] - oa.placement.center[2]
                ix = int(np.floor((dx + half) / cell))
                iz = int(np.floor((dz + half) / cell))
                if 0 <= ix < HEATMAP_CELLS and 0 <= iz < HEATMAP_CELLS:
                    grid[ix, iz] += 1
    return OffsetHeatmap(grid, (cat_a, cat_b))


def heatmap_to_pgm(heatmap: OffsetHeatmap) -> bytes:
    """Render the grid as a binary PGM image, max-normalized to 8 bits."""
    grid = heatmap.grid
    peak = grid.max()
    if peak > 0:
        img = (grid.T * (255.0 / peak)).astype(np.uint8)
    else:
        img = np.zeros_like(grid, dtype=np.uint8).T
    header = f"P5\n{HEATMAP_CELLS} {HEATMAP_CELLS}\n255\n".encode()
    return header + img.tobytes()


# ---------------------------------------------------------------------------
# orientation score


def orientation_score(corpus, formula="eight_peak"):
    """Mean orientation regularity over all objects.

    The default `eight_peak` formula cos^2(4 theta) attains 1 exactly at the
    eight 45-degree-spaced yaw angles. The `literal` variant cos^2(2 theta)
    peaks only at quarter-turn angles; it is kept selectable because the two
    conventions disagree at odd multiples of 45 degrees.
    """
    yaws = [
        o.placement.orientation for scene in corpus for o in scene.objects.values()
    ]
    if not yaws:
        raise ValueError("corpus has no objects")
    theta = np.asarray(yaws)
    if formula == "eight_peak":
        return float(np.mean(np.cos(4.0 * theta) ** 2))
    if formula == "literal":
        return float(np.mean(np.cos(2.0 * theta) ** 2))
    raise ValueError(f"unknown orientation formula {formula!r}")


# ---------------------------------------------------------------------------
# FID hook


def frechet_distance(features_a, features_b):
    """Frechet distance between Gaussians fitted to two feature sets.

    Plug-in hook: callers supply externally computed feature vectors (for
    example activations of an image network); no rendering or network lives
    here.
    """
    from scipy import linalg

    a = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    covmean = linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * covmean))
