"""Full progressive keypoint-localization network.

Composition: image encoder -> (decoder pyramid + mask logits, initial node
embeddings) -> stage-0 graph predictor (visibility bit + coarse index bits)
-> refinement stages. Before refinement stage j the bits predicted so far
are hardened into each keypoint's level-(d0+j-1) cell; the stage then
fuses a local patch from decoder level j (resolution 2^(d0+j)), centered
on that cell's 2x2 child block, so the patch covers exactly the candidate
cells whose bits the stage predicts.

The discrete cell choice is treated like an argmax: no gradient flows
through it, only through the patch values it selects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import ImageEncoder, PyramidDecoder, crop_patches, crop_patches_backward
from .codes import BinaryCodeSet, GridSpec, SoftCodeSet, code_to_index
from .geometry import KnnGraph
from .graphnet import (
    LossBreakdown,
    RefinementStage,
    Stage0Predictor,
    StagePlan,
    InitEmbedding,
    loss_bits,
    loss_bits_grad,
    loss_mask,
    loss_mask_grad,
    loss_v,
    loss_v_grad,
    total_loss,
)
from .nnops import Param

__all__ = ["NetConfig", "NetOutputs", "ProgressiveLocalizer", "localization_loss"]


@dataclass(frozen=True)
class NetConfig:
    """Architecture knobs for :class:`ProgressiveLocalizer`."""

    grid: GridSpec = field(default_factory=GridSpec)
    n_keypoints: int = 512
    plan: StagePlan = field(default_factory=StagePlan)
    encoder_channels: tuple[int, ...] = (16, 32, 64, 64, 64)
    decoder_widths: tuple[int, ...] = (64, 64, 64)
    patch: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.plan.stages != self.grid.refinement_stages:
            raise ValueError(
                f"plan.stages = {self.plan.stages} must equal grid depth - base depth "
                f"= {self.grid.refinement_stages}")


@dataclass
class NetOutputs:
    """Soft predictions of one forward pass (batched)."""

    p_v: np.ndarray
    p_x: np.ndarray
    p_y: np.ndarray
    mask_logits: np.ndarray

    def soft_codes(self, sample: int = 0) -> SoftCodeSet:
        return SoftCodeSet(p_v=self.p_v[sample], p_x=self.p_x[sample],
                           p_y=self.p_y[sample])


class ProgressiveLocalizer:
    """End-to-end differentiable localizer with explicit backward."""

    def __init__(self, cfg: NetConfig, dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        grid, plan = cfg.grid, cfg.plan
        rng = np.random.default_rng(cfg.seed)
        self.encoder = ImageEncoder(grid, cfg.encoder_channels, rng=rng, dtype=dtype)
        self.decoder = PyramidDecoder(grid, self.encoder.c0, self.encoder.skip_channels(),
                                      cfg.decoder_widths, rng=rng, dtype=dtype)
        self.width = 1 << (2 * grid.base_depth)
        self.embed = InitEmbedding("embed", cfg.n_keypoints, self.encoder.c0,
                                   rng=rng, dtype=dtype)
        self.stage0 = Stage0Predictor(self.width, grid.base_depth, plan, rng=rng, dtype=dtype)
        # Refinement stage j fuses a patch from decoder level j, whose
        # resolution 2^(d0 + j) matches the grid level being predicted.
        self.refines = [
            RefinementStage(j, self.width, cfg.decoder_widths[j - 1] * cfg.patch * cfg.patch,
                            plan, rng=rng, dtype=dtype)
            for j in range(1, plan.stages + 1)
        ]
        self._cache = None

    # -- parameter plumbing --------------------------------------------------

    def params(self) -> list[Param]:
        out = self.encoder.params() + self.decoder.params() + self.embed.params()
        out += self.stage0.params()
        for r in self.refines:
            out += r.params()
        return out

    def stage0_params(self) -> list[Param]:
        """The pretraining subset: image branch, embedding, stage-0 predictor."""
        return (self.encoder.params() + self.decoder.params()
                + self.embed.params() + self.stage0.params())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    # -- forward / backward ----------------------------------------------------

    def forward(self, images: np.ndarray, graph: KnnGraph, *,
                max_stage: int | None = None,
                teacher_codes: list[BinaryCodeSet] | None = None) -> NetOutputs:
        """Run the network through ``max_stage`` refinement stages (default all).

        ``teacher_codes`` substitutes ground-truth prefix cells for the
        hardened predictions when selecting fusion patches (teacher forcing).
        """
        grid, plan = self.cfg.grid, self.cfg.plan
        stages = plan.stages if max_stage is None else max_stage
        if not (0 <= stages <= plan.stages):
            raise ValueError(f"max_stage must be in [0, {plan.stages}]")
        images = np.asarray(images, dtype=self.dtype)
        if images.ndim == 3:
            images = images[None]
        f0, skips = self.encoder.forward(images)
        pyramid, mask_logits = self.decoder.forward(f0, skips)
        emb = self.embed.forward(f0)
        p_v, p_x, p_y, g = self.stage0.forward(emb, graph)
        cells_per_stage = []
        for j in range(1, stages + 1):
            level = grid.base_depth + j - 1
            if teacher_codes is not None:
                ix = np.stack([code_to_index(c.b_x[:, :level]) for c in teacher_codes])
                iy = np.stack([code_to_index(c.b_y[:, :level]) for c in teacher_codes])
                parent = np.stack([ix, iy], axis=-1)
            else:
                hard_x = (p_x >= 0.5).astype(np.int64)
                hard_y = (p_y >= 0.5).astype(np.int64)
                parent = np.stack([code_to_index(hard_x), code_to_index(hard_y)], axis=-1)
            # Center of the parent cell in the level-(d0+j) grid: the odd
            # child index, so a 3x3 patch covers all four children.
            cells = 2 * parent + 1
            cells_per_stage.append(cells)
            patches = crop_patches(pyramid[j - 1], cells, self.cfg.patch)
            px_j, py_j, g = self.refines[j - 1].forward(g, patches, graph)
            p_x = np.concatenate([p_x, px_j[..., None]], axis=-1)
            p_y = np.concatenate([p_y, py_j[..., None]], axis=-1)
        self._cache = (stages, cells_per_stage, [m.shape for m in pyramid],
                       images.shape[0])
        return NetOutputs(p_v=p_v, p_x=p_x, p_y=p_y, mask_logits=mask_logits)

    def backward(self, d_pv: np.ndarray | None, d_px: np.ndarray | None,
                 d_py: np.ndarray | None, d_mask_logits: np.ndarray | None) -> np.ndarray:
        """Backpropagate output gradients; returns the input-image gradient."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        grid, plan = self.cfg.grid, self.cfg.plan
        stages, cells_per_stage, pyramid_shapes, batch = self._cache
        d0 = grid.base_depth
        d_pyramid: list[np.ndarray | None] = [None] * plan.stages
        d_g = None
        for j in range(stages, 0, -1):
            dx_j = None if d_px is None else d_px[..., d0 + j - 1]
            dy_j = None if d_py is None else d_py[..., d0 + j - 1]
            d_g, d_patches = self.refines[j - 1].backward(dx_j, dy_j, d_g)
            scat = crop_patches_backward(d_patches, cells_per_stage[j - 1],
                                         pyramid_shapes[j - 1], self.cfg.patch)
            d_pyramid[j - 1] = scat if d_pyramid[j - 1] is None else d_pyramid[j - 1] + scat
        d_emb = self.stage0.backward(
            d_pv,
            None if d_px is None else d_px[..., :d0],
            None if d_py is None else d_py[..., :d0],
            d_g)
        d_f0 = self.embed.backward(d_emb)
        d_f0_dec, d_skips = self.decoder.backward(d_pyramid, d_mask_logits)
        return self.encoder.backward(d_f0 + d_f0_dec, d_skips)

    def routing(self) -> list[np.ndarray]:
        """Every data-dependent branch of the last forward, for kink filtering."""
        out = self.encoder.routing() + self.decoder.routing() + self.stage0.routing()
        for r in self.refines:
            out += r.routing()
        if self._cache is not None:
            out += [c.astype(np.int32) for c in self._cache[1]]
        return out

    def predict(self, image: np.ndarray, graph: KnnGraph) -> NetOutputs:
        """Inference convenience for a single RoI image."""
        return self.forward(image[None] if image.ndim == 3 else image, graph)


def localization_loss(outputs: NetOutputs, gt_codes: list[BinaryCodeSet],
                      gt_masks: np.ndarray
                      ) -> tuple[LossBreakdown, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Losses plus output gradients for a batch.

    ``gt_codes`` is one code set per sample; ``gt_masks`` is (B, 2, G, G)
    binary targets (full, visible). Bit targets are truncated to however
    many bits the forward pass produced, so stage-0-only training reuses the
    same call.
    """
    n_bits = outputs.p_x.shape[-1]
    t_v = np.stack([c.b_v for c in gt_codes]).astype(np.float64)
    t_x = np.stack([c.b_x[:, :n_bits] for c in gt_codes]).astype(np.float64)
    t_y = np.stack([c.b_y[:, :n_bits] for c in gt_codes]).astype(np.float64)
    l_v = loss_v(outputs.p_v, t_v)
    l_x, _ = loss_bits(outputs.p_x, t_x, t_v > 0.5)
    l_y, _ = loss_bits(outputs.p_y, t_y, t_v > 0.5)
    l_m = loss_mask(outputs.mask_logits, gt_masks)
    breakdown = total_loss(l_v, l_x, l_y, l_m)
    d_pv = loss_v_grad(outputs.p_v, t_v)
    d_px = loss_bits_grad(outputs.p_x, t_x, t_v > 0.5)
    d_py = loss_bits_grad(outputs.p_y, t_y, t_v > 0.5)
    d_mask = loss_mask_grad(outputs.mask_logits, gt_masks)
    return breakdown, d_pv, d_px, d_py, d_mask
