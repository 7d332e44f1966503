"""Top-down SVG rendering of scenes.

Byte-deterministic output: a fixed palette, fixed float formatting and
sorted element order, so identical scenes always produce identical files.
"""

from __future__ import annotations

import numpy as np

from scenehgn.scene import obb_ground_corners

PALETTE = {
    "bed": "#8dd3c7",
    "nightstand": "#ffffb3",
    "wardrobe": "#bebada",
    "cabinet": "#fb8072",
    "sofa": "#80b1d3",
    "coffee_table": "#fdb462",
    "dining_table": "#b3de69",
    "chair": "#fccde5",
    "stool": "#d9d9d9",
    "desk": "#bc80bd",
    "bookshelf": "#ccebc5",
    "tv_stand": "#ffed6f",
    "ceiling_lamp": "#c9b2a5",
}
_FALLBACK_COLOR = "#aaaaaa"


def _fmt(x):
    return f"{x:.6f}"


def _convex_hull(points):
    """Andrew's monotone chain; points (n, 2) -> hull vertex list (CCW)."""
    pts = sorted({(float(x), float(z)) for x, z in points})
    if len(pts) <= 2:
        return list(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def scene_svg(scene) -> bytes:
    """Render the scene to SVG bytes: floor outline, dashed region hulls,
    category-coloured object footprints, and hyper-edge center links."""
    floor = np.asarray(scene.floor.vertices, dtype=np.float64)
    lo = floor.min(axis=0) - 0.5
    hi = floor.max(axis=0) + 0.5
    width, height = hi - lo

    parts = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(lo[0])} {_fmt(lo[1])} '
        f'{_fmt(width)} {_fmt(height)}" width="640" height="{_fmt(640.0 * height / width)}">'
    )
    parts.append(f'<g transform="translate(0 {_fmt(lo[1] + hi[1])}) scale(1 -1)">')

    floor_path = " ".join(f"{_fmt(x)},{_fmt(z)}" for x, z in floor)
    parts.append(
        f'<polygon class="floor" points="{floor_path}" fill="#f7f4ef" '
        f'stroke="#333333" stroke-width="0.04"/>'
    )

    for region in sorted(scene.regions, key=lambda r: r.id):
        corners = []
        for oid in region.children:
            if oid in scene.objects:
                corners.extend(obb_ground_corners(scene.objects[oid].placement))
        if len(corners) < 3:
            continue
        hull = _convex_hull(np.asarray(corners))
        if len(hull) < 3:
            continue
        path = " ".join(f"{_fmt(x)},{_fmt(z)}" for x, z in hull)
        parts.append(
            f'<polygon class="region" points="{path}" fill="none" stroke="#666666" '
            f'stroke-width="0.02" stroke-dasharray="0.12,0.08"/>'
        )

    for oid in sorted(scene.objects):
        obj = scene.objects[oid]
        color = PALETTE.get(obj.category, _FALLBACK_COLOR)
        cx, cz = obj.placement.center[0], obj.placement.center[2]
        sx, sz = obj.placement.scale[0], obj.placement.scale[2]
        deg = -np.degrees(obj.placement.orientation)
        parts.append(
            f'<g class="object" transform="translate({_fmt(cx)} {_fmt(cz)}) rotate({_fmt(deg)})">'
            f'<rect x="{_fmt(-sx / 2)}" y="{_fmt(-sz / 2)}" width="{_fmt(sx)}" height="{_fmt(sz)}" '
            f'fill="{color}" fill-opacity="0.85" stroke="#222222" stroke-width="0.02"/>'
            f'<line x1="0" y1="0" x2="{_fmt(sx / 2)}" y2="0" stroke="#222222" stroke-width="0.02"/>'
            f"</g>"
        )

    for edge in sorted(scene.edges.hyper, key=lambda e: (e.type, tuple(e.members))):
        centers = [
            scene.objects[m].placement.center[[0, 2]]
            for m in edge.members
            if m in scene.objects
        ]
        if not centers:
            continue
        if "center" in edge.params:
            pivot = np.asarray(edge.params["center"], dtype=np.float64)
        else:
            pivot = np.mean(centers, axis=0)
        for c in centers:
            parts.append(
                f'<line class="hyper" x1="{_fmt(pivot[0])}" y1="{_fmt(pivot[1])}" '
                f'x2="{_fmt(c[0])}" y2="{_fmt(c[1])}" stroke="#d62728" '
                f'stroke-width="0.015" stroke-dasharray="0.05,0.05"/>'
            )

    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts).encode("utf-8")


def render_svg(scene, path):
    """Write the scene rendering to a file."""
    data = scene_svg(scene)
    with open(path, "wb") as fh:
        fh.write(data)
    return path
