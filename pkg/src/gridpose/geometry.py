"""Object models, camera geometry, keypoint sampling, and k-NN graphs.

Everything in this module is a pure function over immutable inputs: object
meshes and point clouds live in the object frame (meters), camera poses map
object-frame points into a pinhole camera, and square regions of interest
(RoIs) carry their own affine pixel transform.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ObjectModel",
    "Pose",
    "CameraIntrinsics",
    "RoiTransform",
    "KeypointSet",
    "KnnGraph",
    "farthest_point_sample",
    "build_knn_graph",
    "project",
    "to_roi",
    "from_roi",
    "object_diameter",
]

_ORTHONORMAL_TOL = 1e-9


def _as_points(a, name: str = "points") -> np.ndarray:
    pts = np.asarray(a, dtype=np.float64)
    if pts.ndim == 1 and pts.size in (2, 3):
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ValueError(f"{name} must be an (N, 2) or (N, 3) array, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class ObjectModel:
    """A 3D object: vertices in meters (object frame) plus optional faces.

    The diameter is the maximum pairwise vertex distance and is recomputed
    on construction when not supplied.
    """

    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    diameter: float = 0.0

    def __post_init__(self):
        verts = _as_points(self.vertices, "vertices")
        if verts.shape[1] != 3:
            raise ValueError("vertices must be 3D")
        if verts.shape[0] < 1:
            raise ValueError("an object model needs at least one vertex")
        faces = np.asarray(self.faces, dtype=np.int64)
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must be an (M, 3) index array, got shape {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= verts.shape[0]):
            raise ValueError("face indices out of range")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        diam = float(self.diameter)
        if diam <= 0.0:
            diam = object_diameter_points(verts)
        object.__setattr__(self, "diameter", diam)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: camera-frame point = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        err = np.linalg.norm(r.T @ r - np.eye(3))
        if err > _ORTHONORMAL_TOL:
            raise ValueError(f"rotation is not orthonormal (||R^T R - I|| = {err:.3e})")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation has determinant -1 (reflection)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def transform(self, points) -> np.ndarray:
        """Map object-frame points into the camera frame."""
        pts = _as_points(points)
        return pts @ self.rotation.T + self.translation

    def camera_center(self) -> np.ndarray:
        """Camera origin expressed in the object frame."""
        return -self.rotation.T @ self.translation

    def compose(self, other: "Pose") -> "Pose":
        """Pose applying ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RoiTransform:
    """Affine map between full-image pixels and square RoI coordinates.

    RoI coordinates are ``q = (p - bbox_origin) * roi_size / bbox_size``
    per axis; the bbox may be anisotropic, the resized RoI is always the
    square ``roi_size x roi_size``.
    """

    bbox_origin: tuple[float, float]
    bbox_size: tuple[float, float]
    roi_size: int = 256

    def __post_init__(self):
        origin = (float(self.bbox_origin[0]), float(self.bbox_origin[1]))
        size = (float(self.bbox_size[0]), float(self.bbox_size[1]))
        if size[0] <= 0 or size[1] <= 0:
            raise ValueError("bbox_size components must be positive")
        if self.roi_size <= 0:
            raise ValueError("roi_size must be positive")
        object.__setattr__(self, "bbox_origin", origin)
        object.__setattr__(self, "bbox_size", size)

    def scale(self) -> np.ndarray:
        return np.array([self.roi_size / self.bbox_size[0],
                         self.roi_size / self.bbox_size[1]])


@dataclass(frozen=True)
class KeypointSet:
    """N object-frame keypoints selected from a model's vertices."""

    points: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if pts.shape[0] != idx.shape[0]:
            raise ValueError("points and indices disagree on keypoint count")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "indices", idx)

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class KnnGraph:
    """Directed k-NN graph: row i of ``neighbors`` lists i's nearest nodes.

    Every node has out-degree exactly ``min(k, node_count - 1)``; neighbor
    columns are ordered closest-first with distance ties broken by lowest
    node index.
    """

    neighbors: np.ndarray
    k: int

    def __post_init__(self):
        nbr = np.asarray(self.neighbors, dtype=np.int64)
        if nbr.ndim != 2:
            raise ValueError("neighbors must be a 2D index array")
        object.__setattr__(self, "neighbors", nbr)

    @property
    def node_count(self) -> int:
        return self.neighbors.shape[0]

    @property
    def out_degree(self) -> int:
        return self.neighbors.shape[1]

    def edges(self) -> np.ndarray:
        """All directed edges (i, j) as an (E, 2) array."""
        n, deg = self.neighbors.shape
        src = np.repeat(np.arange(n), deg)
        return np.stack([src, self.neighbors.reshape(-1)], axis=1)

    def permuted(self, perm: np.ndarray) -> "KnnGraph":
        """Relabel nodes so old node i becomes new node perm[i]."""
        perm = np.asarray(perm, dtype=np.int64)
        new_nbr = np.empty_like(self.neighbors)
        new_nbr[perm] = perm[self.neighbors]
        return KnnGraph(new_nbr, self.k)

    def scatter_plan(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Segment plan for summing per-edge values into their target node.

        Returns (order, starts, targets): flattened edge slots sorted by
        target node, reduceat starts of the non-empty segments, and the
        node index each segment belongs to. Consecutive non-empty starts
        are strictly increasing, which reduceat requires. Cached, since the
        graph is immutable.
        """
        plan = getattr(self, "_scatter_plan", None)
        if plan is None:
            flat = self.neighbors.reshape(-1)
            order = np.argsort(flat, kind="stable")
            counts = np.bincount(flat, minlength=self.node_count)
            all_starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
            nonempty = counts > 0
            plan = (order, all_starts[nonempty], np.flatnonzero(nonempty))
            object.__setattr__(self, "_scatter_plan", plan)
        return plan


def farthest_point_sample(model: ObjectModel, n: int, seed_index: int = 0) -> KeypointSet:
    """Greedy farthest point sampling over the model's vertex set.

    The first keypoint is ``seed_index``; each subsequent keypoint maximizes
    its minimum distance to the already-selected set, ties broken by lowest
    vertex index.
    """
    verts = model.vertices
    count = verts.shape[0]
    if not (1 <= n <= count):
        raise ValueError(f"n must be in [1, {count}], got {n}")
    if not (0 <= seed_index < count):
        raise ValueError(f"seed_index out of range: {seed_index}")
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = seed_index
    min_dist = np.linalg.norm(verts - verts[seed_index], axis=1)
    for i in range(1, n):
        # np.argmax returns the first (lowest-index) maximum, which is the tie rule.
        nxt = int(np.argmax(min_dist))
        chosen[i] = nxt
        min_dist = np.minimum(min_dist, np.linalg.norm(verts - verts[nxt], axis=1))
    return KeypointSet(points=verts[chosen], indices=chosen)


def build_knn_graph(keypoints: KeypointSet | np.ndarray, k: int) -> KnnGraph:
    """Exact Euclidean k-NN over the keypoints, ties broken by lowest index."""
    pts = keypoints.points if isinstance(keypoints, KeypointSet) else _as_points(keypoints)
    n = pts.shape[0]
    if n < 2:
        raise ValueError("k-NN graph needs at least 2 points")
    if k < 1:
        raise ValueError("k must be >= 1")
    deg = min(k, n - 1)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    # Stable sort keeps equal distances in index order.
    order = np.argsort(d2, axis=1, kind="stable")
    return KnnGraph(neighbors=order[:, :deg], k=k)


def project(points, pose: Pose, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of object-frame points.

    Returns:
        (uv, in_front): uv is (N, 2) pixel coordinates, in_front flags points
        with strictly positive camera-frame depth. Behind-camera points get a
        False flag and their uv entries are not meaningful.
    """
    cam = pose.transform(points)
    z = cam[:, 2]
    in_front = z > 0.0
    safe_z = np.where(in_front, z, 1.0)
    uv = np.empty((cam.shape[0], 2))
    uv[:, 0] = intr.fx * cam[:, 0] / safe_z + intr.cx
    uv[:, 1] = intr.fy * cam[:, 1] / safe_z + intr.cy
    return uv, in_front


def to_roi(points_px, t: RoiTransform) -> np.ndarray:
    """Map full-image pixel coordinates into RoI coordinates."""
    pts = _as_points(points_px)
    return (pts - np.asarray(t.bbox_origin)) * t.scale()


def from_roi(points_roi, t: RoiTransform) -> np.ndarray:
    """Inverse of :func:`to_roi`."""
    pts = _as_points(points_roi)
    return pts / t.scale() + np.asarray(t.bbox_origin)


def object_diameter_points(vertices: np.ndarray, chunk: int = 1024) -> float:
    """Maximum pairwise distance of a point set (exact, O(N^2))."""
    verts = _as_points(vertices)
    n = verts.shape[0]
    if n < 2:
        warnings.warn("object has a single vertex; diameter is 0", stacklevel=2)
        return 0.0
    best = 0.0
    for start in range(0, n, chunk):
        block = verts[start:start + chunk]
        d2 = np.sum((block[:, None, :] - verts[None, :, :]) ** 2, axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def object_diameter(model: ObjectModel) -> float:
    """Maximum pairwise vertex distance of the model."""
    return object_diameter_points(model.vertices)
