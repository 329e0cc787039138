"""gridpose: dense 3D-2D correspondence pose estimation with progressive grid codes.

A desk-scale toolkit covering the full pipeline: farthest-point keypoint
sampling, hierarchical binary coding of 2D locations, a small graph network
with exact gradients for progressive code prediction, self-occlusion
analysis for mask-based correspondence filtering, robust PnP solving, and
the standard pose-accuracy metrics.
"""

from .codes import (
    BinaryCodeSet,
    CellIndex,
    GridSpec,
    SoftCodeSet,
    code_to_index,
    decode_codes,
    encode_projection,
    harden,
    index_to_code,
)
from .geometry import (
    CameraIntrinsics,
    KeypointSet,
    KnnGraph,
    ObjectModel,
    Pose,
    RoiTransform,
    build_knn_graph,
    farthest_point_sample,
    from_roi,
    object_diameter,
    project,
    to_roi,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryCodeSet",
    "CameraIntrinsics",
    "CellIndex",
    "GridSpec",
    "KeypointSet",
    "KnnGraph",
    "ObjectModel",
    "Pose",
    "RoiTransform",
    "SoftCodeSet",
    "build_knn_graph",
    "code_to_index",
    "decode_codes",
    "encode_projection",
    "farthest_point_sample",
    "from_roi",
    "harden",
    "index_to_code",
    "object_diameter",
    "project",
    "to_roi",
    "__version__",
]
