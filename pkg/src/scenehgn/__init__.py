"""Hierarchical indoor-scene toolkit.

Builds and validates room / region / object hierarchies, detects binary and
n-ary placement relations, encodes floor boundaries as ring deformation
features, evaluates and differentiates relational energy terms for layout
refinement, trains a toy-scale recursive scene VAE, and computes layout
quality metrics.
"""

from scenehgn.scene import (
    PlacementParams,
    ObjectNode,
    RegionNode,
    EdgeSet,
    BinaryEdge,
    HyperEdge,
    SceneHierarchy,
    chamfer_distance,
    obb_corners,
    obb_normals,
    serialize,
    deserialize,
    validate,
)

__all__ = [
    "PlacementParams",
    "ObjectNode",
    "RegionNode",
    "EdgeSet",
    "BinaryEdge",
    "HyperEdge",
    "SceneHierarchy",
    "chamfer_distance",
    "obb_corners",
    "obb_normals",
    "serialize",
    "deserialize",
    "validate",
]
