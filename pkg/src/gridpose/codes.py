"""Hierarchical binary codes for 2D keypoint locations on a square RoI.

A keypoint's 2D location is stored as one visibility bit ``b_v`` plus two
d-bit cell-index codes ``b_x``/``b_y`` (most-significant bit first) on the
``2^d x 2^d`` grid over the RoI: ``2d + 1`` bits per keypoint in total.
The first ``j`` bits of each index code identify the level-j ancestor cell,
so predictions can be refined grid level by grid level.

Cells are half-open: a point exactly on an interior cell boundary belongs
to the higher-index cell, and ``roi_size`` itself lies outside the RoI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridSpec",
    "CellIndex",
    "BinaryCodeSet",
    "SoftCodeSet",
    "code_to_index",
    "index_to_code",
    "encode_projection",
    "decode_codes",
    "prefix_cell",
    "prefix_cells",
    "child_cells",
    "parent_cell",
    "harden",
    "codes_to_json",
    "codes_from_json",
    "pack_codes",
    "unpack_codes",
]


@dataclass(frozen=True)
class GridSpec:
    """Quadtree grid over a square RoI: depth d, coarse depth d_0."""

    roi_size: int = 256
    depth: int = 6
    base_depth: int = 3

    def __post_init__(self):
        if not (1 <= self.base_depth <= self.depth):
            raise ValueError("need 1 <= base_depth <= depth")
        if self.roi_size % (1 << self.depth) != 0:
            raise ValueError(
                f"roi_size {self.roi_size} not divisible by 2^depth = {1 << self.depth}")

    @property
    def cells(self) -> int:
        """Cells per axis at the finest level."""
        return 1 << self.depth

    @property
    def cell_size(self) -> float:
        return self.roi_size / self.cells

    @property
    def refinement_stages(self) -> int:
        return self.depth - self.base_depth


@dataclass(frozen=True)
class CellIndex:
    """A cell on the level-j grid (2^j cells per axis)."""

    level: int
    ix: int
    iy: int

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("level must be >= 1")
        hi = 1 << self.level
        if not (0 <= self.ix < hi and 0 <= self.iy < hi):
            raise ValueError(f"cell ({self.ix}, {self.iy}) out of range for level {self.level}")


@dataclass(frozen=True)
class BinaryCodeSet:
    """Hard codes for N keypoints: b_v (N,), b_x and b_y (N, d), MSB first."""

    b_v: np.ndarray
    b_x: np.ndarray
    b_y: np.ndarray

    def __post_init__(self):
        bv = np.asarray(self.b_v, dtype=np.uint8).reshape(-1)
        bx = np.asarray(self.b_x, dtype=np.uint8)
        by = np.asarray(self.b_y, dtype=np.uint8)
        if bx.ndim != 2 or by.shape != bx.shape or bx.shape[0] != bv.shape[0]:
            raise ValueError("inconsistent code array shapes")
        for name, arr in (("b_v", bv), ("b_x", bx), ("b_y", by)):
            if arr.size and arr.max() > 1:
                raise ValueError(f"{name} must be binary")
        object.__setattr__(self, "b_v", bv)
        object.__setattr__(self, "b_x", bx)
        object.__setattr__(self, "b_y", by)

    @property
    def n(self) -> int:
        return self.b_v.shape[0]

    @property
    def depth(self) -> int:
        return self.b_x.shape[1]


@dataclass(frozen=True)
class SoftCodeSet:
    """Per-bit probabilities mirroring :class:`BinaryCodeSet`."""

    p_v: np.ndarray
    p_x: np.ndarray
    p_y: np.ndarray

    def __post_init__(self):
        pv = np.asarray(self.p_v, dtype=np.float64).reshape(-1)
        px = np.asarray(self.p_x, dtype=np.float64)
        py = np.asarray(self.p_y, dtype=np.float64)
        if px.ndim != 2 or py.shape != px.shape or px.shape[0] != pv.shape[0]:
            raise ValueError("inconsistent probability array shapes")
        for name, arr in (("p_v", pv), ("p_x", px), ("p_y", py)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} probabilities must lie in [0, 1]")
        object.__setattr__(self, "p_v", pv)
        object.__setattr__(self, "p_x", px)
        object.__setattr__(self, "p_y", py)


def code_to_index(bits) -> np.ndarray | int:
    """Binary code(s) -> integer cell index: i = sum_k bits[k] * 2^(d-1-k).

    Accepts a single d-bit vector or an (..., d) stack; the most significant
    bit comes first.
    """
    arr = np.asarray(bits, dtype=np.int64)
    d = arr.shape[-1]
    weights = 1 << np.arange(d - 1, -1, -1, dtype=np.int64)
    out = arr @ weights
    return int(out) if out.ndim == 0 else out


def index_to_code(i, d: int) -> np.ndarray:
    """Integer cell index (or array of them) -> d-bit code, MSB first."""
    idx = np.asarray(i, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= (1 << d)):
        raise ValueError(f"index out of range for d={d}")
    shifts = np.arange(d - 1, -1, -1, dtype=np.int64)
    return ((idx[..., None] >> shifts) & 1).astype(np.uint8)


def encode_projection(points_roi, grid: GridSpec) -> BinaryCodeSet:
    """Encode RoI-coordinate projections into (b_v, b_x, b_y) codes.

    Points inside ``[0, roi_size)`` per axis get ``b_v = 1`` and the index
    codes of their finest-level cell; points outside get ``b_v = 0`` with
    all-zero placeholder index bits. NaN or infinite coordinates are
    rejected.
    """
    pts = np.asarray(points_roi, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (N, 2) points, got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("projection coordinates must be finite")
    inside = ((pts[:, 0] >= 0) & (pts[:, 0] < grid.roi_size)
              & (pts[:, 1] >= 0) & (pts[:, 1] < grid.roi_size))
    cells = np.zeros((pts.shape[0], 2), dtype=np.int64)
    scale = grid.cells / grid.roi_size
    cells[inside] = np.floor(pts[inside] * scale).astype(np.int64)
    cells = np.clip(cells, 0, grid.cells - 1)
    bx = index_to_code(cells[:, 0], grid.depth)
    by = index_to_code(cells[:, 1], grid.depth)
    bx[~inside] = 0
    by[~inside] = 0
    return BinaryCodeSet(b_v=inside.astype(np.uint8), b_x=bx, b_y=by)


def decode_codes(codes: BinaryCodeSet, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Decode codes to cell-center RoI coordinates plus validity flags.

    Entries with ``b_v = 0`` are flagged invalid; their coordinates are the
    (meaningless) center of cell (0, 0).
    """
    if codes.depth != grid.depth:
        raise ValueError(f"code depth {codes.depth} != grid depth {grid.depth}")
    ix = code_to_index(codes.b_x)
    iy = code_to_index(codes.b_y)
    centers = (np.stack([ix, iy], axis=1) + 0.5) * grid.cell_size
    return centers, codes.b_v.astype(bool)


def prefix_cells(codes: BinaryCodeSet, level: int) -> np.ndarray:
    """Level-j ancestor cells of every keypoint as an (N, 2) (ix, iy) array."""
    if not (1 <= level <= codes.depth):
        raise ValueError(f"level must be in [1, {codes.depth}]")
    ix = code_to_index(codes.b_x[:, :level])
    iy = code_to_index(codes.b_y[:, :level])
    return np.stack([ix, iy], axis=1)


def prefix_cell(codes: BinaryCodeSet, keypoint: int, level: int) -> CellIndex:
    """Level-j ancestor cell of one keypoint."""
    cell = prefix_cells(codes, level)[keypoint]
    return CellIndex(level=level, ix=int(cell[0]), iy=int(cell[1]))


def child_cells(cell: CellIndex) -> list[CellIndex]:
    """The 2x2 subdivision of a cell, one level down."""
    lvl = cell.level + 1
    return [CellIndex(lvl, 2 * cell.ix + dx, 2 * cell.iy + dy)
            for dy in (0, 1) for dx in (0, 1)]


def parent_cell(cell: CellIndex) -> CellIndex:
    if cell.level <= 1:
        raise ValueError("level-1 cells have no parent")
    return CellIndex(cell.level - 1, cell.ix // 2, cell.iy // 2)


def harden(soft: SoftCodeSet, threshold: float = 0.5) -> BinaryCodeSet:
    """Threshold soft codes: bit = 1 iff probability >= threshold."""
    return BinaryCodeSet(
        b_v=(soft.p_v >= threshold).astype(np.uint8),
        b_x=(soft.p_x >= threshold).astype(np.uint8),
        b_y=(soft.p_y >= threshold).astype(np.uint8),
    )


# --- serialization ---------------------------------------------------------

def codes_to_json(codes: BinaryCodeSet) -> str:
    """JSON array of {"b_v": 0|1, "b_x": "101...", "b_y": "010..."}."""
    rows = [{"b_v": int(v),
             "b_x": "".join(str(b) for b in bx),
             "b_y": "".join(str(b) for b in by)}
            for v, bx, by in zip(codes.b_v, codes.b_x, codes.b_y)]
    return json.dumps(rows)


def codes_from_json(text: str) -> BinaryCodeSet:
    rows = json.loads(text)
    if not isinstance(rows, list) or not rows:
        raise ValueError("expected a non-empty JSON array of code records")
    b_v = np.array([int(r["b_v"]) for r in rows], dtype=np.uint8)
    b_x = np.array([[int(c) for c in r["b_x"]] for r in rows], dtype=np.uint8)
    b_y = np.array([[int(c) for c in r["b_y"]] for r in rows], dtype=np.uint8)
    return BinaryCodeSet(b_v=b_v, b_x=b_x, b_y=b_y)


def pack_codes(codes: BinaryCodeSet) -> bytes:
    """Packed layout: per keypoint b_v, b_x, b_y bits (MSB-first), byte-padded."""
    d = codes.depth
    bits = np.concatenate([codes.b_v[:, None], codes.b_x, codes.b_y], axis=1)
    return np.packbits(bits, axis=1).tobytes()


def unpack_codes(blob: bytes, n: int, d: int) -> BinaryCodeSet:
    stride = (1 + 2 * d + 7) // 8
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(n, stride)
    bits = np.unpackbits(raw, axis=1)[:, :1 + 2 * d]
    return BinaryCodeSet(b_v=bits[:, 0], b_x=bits[:, 1:1 + d], b_y=bits[:, 1 + d:])
