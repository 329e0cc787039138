"""Convolutional image branch: encoder, decoder pyramid, and mask head.

The encoder turns a ``(B, 3, roi, roi)`` RoI image into a coarse feature
map ``(B, C0, 2^d0, 2^d0)`` through a stack of stride-2 convolutions; the
decoder walks back up with nearest-neighbor upsampling, skip connections
from matching encoder resolutions, and produces one feature map per grid
refinement level plus two segmentation-mask logit channels (full, visible)
at the finest grid resolution. Everything is differentiable with explicit
``backward`` passes.

This is a deliberately small stand-in for a large pretrained backbone;
widths are configurable and nothing here depends on pretrained weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import CellIndex, GridSpec
from .nnops import Conv2d, Param, relu, relu_grad, sigmoid, upsample2x, upsample2x_grad

__all__ = [
    "SegmentationMasks",
    "ImageEncoder",
    "PyramidDecoder",
    "crop_patch",
    "crop_patches",
    "crop_patches_backward",
]


@dataclass(frozen=True)
class SegmentationMasks:
    """Mask probabilities on the finest grid: ``full`` and ``visible``."""

    full: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.full, dtype=np.float64)
        v = np.asarray(self.visible, dtype=np.float64)
        if f.shape != v.shape or f.ndim != 2:
            raise ValueError("masks must be two equal (G, G) arrays")
        for name, arr in (("full", f), ("visible", v)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} mask values must lie in [0, 1]")
        object.__setattr__(self, "full", f)
        object.__setattr__(self, "visible", v)


def masks_from_logits(logits: np.ndarray) -> SegmentationMasks:
    """Squash (2, G, G) logits into mask probabilities."""
    p = sigmoid(np.asarray(logits, dtype=np.float64))
    return SegmentationMasks(full=p[0], visible=p[1])


class ImageEncoder:
    """Stride-2 conv stack: (B, 3, roi, roi) -> (B, C0, 2^d0, 2^d0).

    Intermediate activations at resolutions 2^(d0+1) .. 2^d are kept as
    skip features for the decoder.
    """

    def __init__(self, grid: GridSpec, channels: tuple[int, ...] = (16, 32, 64, 64, 64),
                 *, rng: np.random.Generator, dtype=np.float64):
        self.grid = grid
        n_stages = int(np.log2(grid.roi_size)) - grid.base_depth
        if 2 ** (n_stages + grid.base_depth) != grid.roi_size:
            raise ValueError("roi_size must be a power of two")
        if len(channels) != n_stages:
            raise ValueError(f"need {n_stages} channel widths for roi {grid.roi_size}, "
                             f"got {len(channels)}")
        self.channels = tuple(channels)
        self.c0 = channels[-1]
        self.convs = []
        c_prev = 3
        for i, c in enumerate(channels):
            self.convs.append(Conv2d(f"enc{i}", c_prev, c, ksize=3, stride=2,
                                     rng=rng, dtype=dtype))
            c_prev = c
        # Stage i outputs resolution roi / 2^(i+1); skips are the stages whose
        # resolution lies in (2^d0, 2^d], finest first is not required -- we
        # store coarsest-to-finest as the decoder consumes them.
        self._skip_stages = []
        for i in range(n_stages):
            res = grid.roi_size >> (i + 1)
            if (1 << grid.base_depth) < res <= (1 << grid.depth):
                self._skip_stages.append(i)
        self._cache = None

    def params(self) -> list[Param]:
        return [p for conv in self.convs for p in conv.params()]

    def skip_channels(self) -> list[int]:
        """Channel widths of the skip maps, ordered coarse-to-fine (16^2 first)."""
        return [self.channels[i] for i in reversed(self._skip_stages)]

    def forward(self, image: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (f0, skips) with skips ordered coarse-to-fine."""
        if image.ndim == 3:
            image = image[None]
        if image.shape[1] != 3 or image.shape[2] != self.grid.roi_size \
                or image.shape[3] != self.grid.roi_size:
            raise ValueError(f"expected (B, 3, {self.grid.roi_size}, "
                             f"{self.grid.roi_size}) image, got {image.shape}")
        x = image
        masks = []
        stage_out = []
        for conv in self.convs:
            z = conv.forward(x)
            masks.append(z > 0.0)
            x = relu(z)
            stage_out.append(x)
        self._cache = masks
        skips = [stage_out[i] for i in reversed(self._skip_stages)]
        return x, skips

    def backward(self, d_f0: np.ndarray, d_skips: list[np.ndarray] | None = None) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        masks = self._cache
        grads = {i: g for i, g in zip(reversed(self._skip_stages), d_skips or [])
                 if g is not None}
        dx = d_f0
        for i in range(len(self.convs) - 1, -1, -1):
            if i in grads:
                dx = dx + grads[i]
            dx = self.convs[i].backward(relu_grad(dx, masks[i]))
        return dx

    def routing(self) -> list[np.ndarray]:
        return [m.astype(np.uint8) for m in (self._cache or [])]


class PyramidDecoder:
    """Upsample-and-fuse decoder producing the refinement feature pyramid.

    Level j (1-based) output has resolution 2^(d0+j); the mask head is a
    single 1x1 convolution on the finest level giving (B, 2, 2^d, 2^d)
    logits, channel 0 = full mask, channel 1 = visible mask.
    """

    def __init__(self, grid: GridSpec, c_in: int, skip_channels: list[int],
                 widths: tuple[int, ...] = (64, 64, 64),
                 *, rng: np.random.Generator, dtype=np.float64):
        self.grid = grid
        levels = grid.refinement_stages
        if len(widths) != levels:
            raise ValueError(f"need {levels} decoder widths, got {len(widths)}")
        if len(skip_channels) != levels:
            raise ValueError(f"need {levels} skip widths, got {len(skip_channels)}")
        self.widths = tuple(widths)
        self.convs = []
        c_prev = c_in
        for j, (w, sc) in enumerate(zip(widths, skip_channels), start=1):
            self.convs.append(Conv2d(f"dec{j}", c_prev + sc, w, ksize=3, stride=1,
                                     rng=rng, dtype=dtype))
            c_prev = w
        self.mask_head = Conv2d("mask_head", c_prev, 2, ksize=1, stride=1, pad=0,
                                rng=rng, dtype=dtype)
        self._cache = None

    def params(self) -> list[Param]:
        out = [p for conv in self.convs for p in conv.params()]
        out += self.mask_head.params()
        return out

    def forward(self, f0: np.ndarray, skips: list[np.ndarray]
                ) -> tuple[list[np.ndarray], np.ndarray]:
        """Returns (pyramid levels coarse-to-fine, mask logits)."""
        if len(skips) != len(self.convs):
            raise ValueError(f"expected {len(self.convs)} skip maps, got {len(skips)}")
        x = f0
        pyramid = []
        masks = []
        split_at = []
        for conv, skip in zip(self.convs, skips):
            up = upsample2x(x)
            if up.shape[2] != skip.shape[2]:
                raise ValueError(f"skip resolution {skip.shape} does not match "
                                 f"upsampled {up.shape}")
            split_at.append(up.shape[1])
            z = conv.forward(np.concatenate([up, skip], axis=1))
            masks.append(z > 0.0)
            x = relu(z)
            pyramid.append(x)
        mask_logits = self.mask_head.forward(x)
        self._cache = (masks, split_at)
        return pyramid, mask_logits

    def backward(self, d_pyramid: list[np.ndarray | None], d_mask_logits: np.ndarray | None
                 ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (d_f0, d_skips)."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        masks, split_at = self._cache
        d_skips: list[np.ndarray] = [None] * len(self.convs)
        dx = None
        if d_mask_logits is not None:
            dx = self.mask_head.backward(d_mask_logits)
        for j in range(len(self.convs) - 1, -1, -1):
            dj = d_pyramid[j] if j < len(d_pyramid) else None
            if dj is not None:
                dx = dj if dx is None else dx + dj
            if dx is None:
                dx = np.zeros_like(masks[j], dtype=self.convs[j].w.value.dtype)
            dcat = self.convs[j].backward(relu_grad(dx, masks[j]))
            d_up, d_skips[j] = dcat[:, :split_at[j]], dcat[:, split_at[j]:]
            dx = upsample2x_grad(d_up)
        return dx, d_skips

    def routing(self) -> list[np.ndarray]:
        if self._cache is None:
            return []
        return [m.astype(np.uint8) for m in self._cache[0]]


def crop_patch(feature_map: np.ndarray, cell: CellIndex, patch: int = 1) -> np.ndarray:
    """Patch x patch window of a (C, H, W) map centered on a grid cell.

    The cell's grid level must match the map resolution (H = W = 2^level);
    windows extending past the border are zero padded. The result is
    flattened in (channel, row, col) order.
    """
    fmap = np.asarray(feature_map)
    if fmap.ndim != 3:
        raise ValueError(f"expected (C, H, W) feature map, got {fmap.shape}")
    if patch % 2 != 1 or patch < 1:
        raise ValueError(f"patch size must be odd and positive, got {patch}")
    c, h, w = fmap.shape
    if h != w or (1 << cell.level) != h:
        raise ValueError(f"cell level {cell.level} does not match map resolution {h}x{w}")
    half = patch // 2
    out = np.zeros((c, patch, patch), dtype=fmap.dtype)
    for dy in range(-half, half + 1):
        y = cell.iy + dy
        if not (0 <= y < h):
            continue
        for dx in range(-half, half + 1):
            x = cell.ix + dx
            if 0 <= x < w:
                out[:, dy + half, dx + half] = fmap[:, y, x]
    return out.reshape(-1)


def crop_patches(feature_map: np.ndarray, cells: np.ndarray, patch: int = 1) -> np.ndarray:
    """Batched :func:`crop_patch`: (B, C, H, W) + (B, N, 2) -> (B, N, C*patch^2).

    ``cells[..., 0]`` is ix (column), ``cells[..., 1]`` is iy (row).
    """
    if patch % 2 != 1 or patch < 1:
        raise ValueError(f"patch size must be odd and positive, got {patch}")
    b, c, h, w = feature_map.shape
    half = patch // 2
    fp = np.pad(feature_map, ((0, 0), (0, 0), (half, half), (half, half))) \
        if half else feature_map
    n = cells.shape[1]
    bidx = np.arange(b)[:, None]
    out = np.empty((b, n, c, patch, patch), dtype=feature_map.dtype)
    for dy in range(patch):
        for dx in range(patch):
            out[:, :, :, dy, dx] = fp[bidx, :, cells[:, :, 1] + dy, cells[:, :, 0] + dx]
    return out.reshape(b, n, c * patch * patch)


def crop_patches_backward(d_patches: np.ndarray, cells: np.ndarray,
                          map_shape: tuple[int, int, int, int], patch: int = 1) -> np.ndarray:
    """Scatter patch gradients back into a zero feature-map gradient."""
    b, c, h, w = map_shape
    half = patch // 2
    n = cells.shape[1]
    dp = d_patches.reshape(b, n, c, patch, patch)
    dfp = np.zeros((b, c, h + 2 * half, w + 2 * half), dtype=d_patches.dtype)
    bidx = np.arange(b)[:, None]
    for dy in range(patch):
        for dx in range(patch):
            np.add.at(dfp, (bidx, slice(None), cells[:, :, 1] + dy, cells[:, :, 0] + dx),
                      dp[:, :, :, dy, dx])
    return dfp[:, :, half:half + h, half:half + w] if half else dfp
