"""Point-cloud visibility: viewpoint sampling, hidden-point removal, and
the self-occlusion ratio that drives mask-based correspondence filtering.

A point P of an object O gets a visibility fraction V(P): the proportion
of viewpoints, sampled uniformly on a sphere around the object, from which
P survives the hidden-point-removal (HPR) test. Points with V(P) in
[0.2, 0.4) count as easily self-occluded (values below 0.2 are treated as
HPR misclassifications and fall outside the band); the object-level ratio

    r_so = (1 / |O|) * #{P : 0.2 <= V(P) < 0.4}

triggers visible-mask filtering for textureless objects when it reaches
0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import ObjectModel

__all__ = [
    "ViewpointSet",
    "VisibilityProfile",
    "DegenerateHullError",
    "icosphere",
    "icosphere_mesh",
    "sample_viewpoints",
    "hpr_visible",
    "visibility_profile",
    "filter_decision",
    "SELF_OCCLUSION_BAND",
    "FILTER_RATIO",
]

SELF_OCCLUSION_BAND = (0.2, 0.4)
FILTER_RATIO = 0.5


class DegenerateHullError(ValueError):
    """Too few or degenerate points to build the HPR convex hull."""


@dataclass(frozen=True)
class ViewpointSet:
    """Unit view directions plus the camera-distance factor (x diameter)."""

    directions: np.ndarray
    radius_factor: float = 3.0

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3:
            raise ValueError("directions must be (M, 3)")
        norms = np.linalg.norm(d, axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("directions must be unit vectors")
        object.__setattr__(self, "directions", d)

    @property
    def count(self) -> int:
        return self.directions.shape[0]


@dataclass(frozen=True)
class VisibilityProfile:
    """Per-vertex visibility fractions and the derived self-occlusion ratio."""

    v: np.ndarray
    r_so: float

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 1 or (v.size and (v.min() < 0.0 or v.max() > 1.0)):
            raise ValueError("v must be fractions in [0, 1]")
        object.__setattr__(self, "v", v)
        expected = self_occlusion_ratio(v)
        if abs(expected - self.r_so) > 1e-12:
            raise ValueError(f"r_so {self.r_so} does not match v (expected {expected})")

    @staticmethod
    def from_fractions(v: np.ndarray) -> "VisibilityProfile":
        v = np.asarray(v, dtype=np.float64)
        return VisibilityProfile(v=v, r_so=self_occlusion_ratio(v))


def self_occlusion_ratio(v: np.ndarray) -> float:
    lo, hi = SELF_OCCLUSION_BAND
    v = np.asarray(v, dtype=np.float64)
    return float(np.mean((v >= lo) & (v < hi))) if v.size else 0.0


def icosphere(level: int) -> np.ndarray:
    """Unit-sphere vertices of a subdivided icosahedron: 10 * 4^level + 2."""
    return icosphere_mesh(level)[0]


def icosphere_mesh(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and triangle faces of a subdivided icosahedron.

    Subdivision splits every triangle into four via shared edge midpoints,
    renormalizing to the sphere; construction is fully deterministic.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(level):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)


def sample_viewpoints(level: int = 4, radius_factor: float = 3.0) -> ViewpointSet:
    """Uniform sphere directions from icosphere subdivision (2562 at level 4)."""
    return ViewpointSet(directions=icosphere(level), radius_factor=radius_factor)


def hpr_visible(points: np.ndarray, viewpoint: np.ndarray,
                radius: float | None = None, radius_scale: float = 100.0) -> np.ndarray:
    """Hidden-point-removal visibility of a point cloud from one viewpoint.

    Spherical flip: with the viewpoint at the origin, each point maps to
    ``p + 2 (R - |p|) p / |p|``; a point is visible iff its flipped image is
    a vertex of the convex hull of the flipped cloud plus the origin. With
    ``radius=None``, R = radius_scale * max |p|.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (N, 3)")
    if pts.shape[0] < 4:
        raise DegenerateHullError("HPR needs at least 4 points")
    rel = pts - np.asarray(viewpoint, dtype=np.float64).reshape(1, 3)
    norms = np.linalg.norm(rel, axis=1)
    if norms.min() <= 0.0:
        raise ValueError("viewpoint coincides with a point")
    r = radius_scale * norms.max() if radius is None else float(radius)
    if r < norms.max():
        raise ValueError("radius must be >= the farthest point distance")
    flipped = rel + 2.0 * (r - norms)[:, None] * rel / norms[:, None]
    cloud = np.vstack([flipped, np.zeros(3)])
    try:
        hull = ConvexHull(cloud)
    except QhullError as exc:
        raise DegenerateHullError(f"degenerate HPR hull: {exc}") from exc
    visible = np.zeros(pts.shape[0], dtype=bool)
    visible[hull.vertices[hull.vertices < pts.shape[0]]] = True
    return visible


def visibility_profile(model: ObjectModel | np.ndarray,
                       views: ViewpointSet | None = None,
                       max_points: int = 5000,
                       radius_scale: float = 100.0,
                       subsample_seed: int = 0) -> VisibilityProfile:
    """V(P) over the model's vertices and the self-occlusion ratio.

    Viewpoints sit at ``radius_factor * diameter`` from the centroid. Meshes
    with more than ``max_points`` vertices are uniformly subsampled (seeded)
    before the per-viewpoint HPR runs; the ratio is then computed over the
    subsample.
    """
    if views is None:
        views = sample_viewpoints()
    if isinstance(model, ObjectModel):
        pts = model.vertices
        diameter = model.diameter
    else:
        pts = np.asarray(model, dtype=np.float64)
        from .geometry import object_diameter_points
        diameter = object_diameter_points(pts)
    if pts.shape[0] > max_points:
        rng = np.random.default_rng(subsample_seed)
        keep = np.sort(rng.choice(pts.shape[0], size=max_points, replace=False))
        pts = pts[keep]
    centroid = pts.mean(axis=0)
    radius = views.radius_factor * diameter
    counts = np.zeros(pts.shape[0], dtype=np.int64)
    for direction in views.directions:
        vp = centroid + radius * direction
        counts += hpr_visible(pts, vp, radius_scale=radius_scale)
    return VisibilityProfile.from_fractions(counts / views.count)


def filter_decision(profile: VisibilityProfile, textureless: bool) -> bool:
    """Use the visible-mask correspondence filter?

    True iff the object is textureless and at least half of it is easily
    self-occluded (r_so >= 0.5).
    """
    return bool(textureless and profile.r_so >= FILTER_RATIO)
