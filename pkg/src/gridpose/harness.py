"""Synthetic scenes, the end-to-end pipeline, the toy trainer, and benchmarks.

Scenes are fully synthetic: a procedural object is posed randomly in front
of the harness camera, a square RoI is fit around its projection, and the
scene carries exact ground-truth codes, grid-resolution masks, and a
rendered input image. The rendered input is a normalized-object-coordinate
image: three channels holding the object-frame XYZ of the visible surface
(zero background), rasterized by z-buffered point splatting. That gives the
toy backbone a learnable signal without any photorealistic rendering.

Everything is deterministic: per-scene generators derive from the master
seed through splitmix64, so (seed, config) pins every artifact byte.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.ndimage import binary_closing
from scipy.spatial import Delaunay, QhullError

from .backbone import masks_from_logits
from .codes import BinaryCodeSet, GridSpec, decode_codes, encode_projection, harden, prefix_cells
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
    project,
    to_roi,
)
from .graphnet import StagePlan
from .metrics import MetricsReport, SymmetrySpec, add_error, adds_error, evaluate_poses, rot_trans_error
from .network import NetConfig, NetOutputs, ProgressiveLocalizer, localization_loss
from .nnops import Adam, save_checkpoint
from .solver import (
    CorrespondenceSet,
    PoseEstimate,
    SolverConfig,
    SolverError,
    mask_filter,
    ransac_pnp,
    spatial_coherence_solve,
)
from .visibility import hpr_visible, icosphere_mesh

__all__ = [
    "RunConfig",
    "PoseSamplerConfig",
    "NoiseModel",
    "SceneSample",
    "SceneGenerationError",
    "TrainingDivergedError",
    "PipelineResult",
    "TrainLog",
    "splitmix64",
    "make_toy_object",
    "generate_scene",
    "generate_scenes",
    "corrupt_codes",
    "infer_pipeline",
    "train_toy",
    "run_benchmark",
]

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, index: int) -> int:
    """Derive the index-th child seed from a master seed (splitmix64 mix)."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class SceneGenerationError(RuntimeError):
    """Pose sampling kept violating the in-view constraints."""


class TrainingDivergedError(RuntimeError):
    """A training loss went non-finite."""


@dataclass(frozen=True)
class PoseSamplerConfig:
    """Random-pose distribution: uniform rotations in a translation box.

    ``max_angle_deg`` caps the rotation angle away from the reference
    orientation (None means fully uniform over SO(3)).
    """

    z_range: tuple[float, float] = (0.8, 1.2)
    xy_range: float = 0.1
    max_angle_deg: float | None = None


@dataclass(frozen=True)
class NoiseModel:
    """Stress model for decoded codes: bit flips and keypoint relocations."""

    bit_flip_prob: float = 0.0
    bit_flip_x_only: bool = False
    msb_flip_prob: float = 0.0
    outlier_prob: float = 0.0
    pixel_noise_sigma: float = 0.0

    def __post_init__(self):
        for name in ("bit_flip_prob", "msb_flip_prob", "outlier_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.pixel_noise_sigma < 0:
            raise ValueError("pixel_noise_sigma must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    """Every default of the synthetic harness in one record."""

    n_keypoints: int = 512
    knn_k: int = 20
    roi_size: int = 256
    depth: int = 6
    base_depth: int = 3
    plan: StagePlan = field(default_factory=StagePlan)
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    image_size: tuple[int, int] = (640, 480)
    object_kind: str = "bumpy"
    object_subdiv: int = 5
    object_diameter: float = 0.2
    pose_sampler: PoseSamplerConfig = field(default_factory=PoseSamplerConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    bench_scenes: int = 200
    # toy-training knobs
    toy_keypoints: int = 64
    train_scenes: int = 200
    test_scenes: int = 50
    steps: int = 5000
    phase1_steps: int = 1000
    batch_size: int = 8
    lr_phase1: float = 3e-3
    lr_phase2: float = 1e-3
    eval_interval: int = 250
    encoder_channels: tuple[int, ...] = (8, 16, 32, 48, 128)
    decoder_widths: tuple[int, ...] = (32, 32, 16)
    patch: int = 3
    net_dtype: str = "float32"
    teacher_forcing: bool = False

    def __post_init__(self):
        if not (1 <= self.base_depth <= self.depth):
            raise ValueError("need 1 <= base_depth <= depth")
        if self.plan.stages != self.depth - self.base_depth:
            raise ValueError("plan.stages must equal depth - base_depth")
        if self.roi_size % (1 << self.depth) != 0:
            raise ValueError("roi_size must be divisible by 2^depth")

    def grid(self) -> GridSpec:
        return GridSpec(self.roi_size, self.depth, self.base_depth)

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy)

    def net_config(self, n_keypoints: int | None = None) -> NetConfig:
        return NetConfig(
            grid=self.grid(),
            n_keypoints=self.toy_keypoints if n_keypoints is None else n_keypoints,
            plan=self.plan,
            encoder_channels=self.encoder_channels,
            decoder_widths=self.decoder_widths,
            patch=self.patch,
            seed=self.seed,
        )


@dataclass(frozen=True)
class SceneSample:
    """One synthetic scene with exact ground truth."""

    pose: Pose
    roi: RoiTransform
    gt_codes: BinaryCodeSet
    gt_masks: np.ndarray          # (2, G, G) uint8: [full, visible]
    image: np.ndarray             # (3, roi, roi) float32
    keypoint_uv_roi: np.ndarray   # (N, 2) exact projections, RoI coords


@dataclass
class PipelineResult:
    """Outcome of one pipeline run; ``estimate`` is None on solver failure."""

    estimate: PoseEstimate | None
    error: str | None = None
    diagnostics: dict = field(default_factory=dict)


def make_toy_object(kind: str = "bumpy", subdiv: int = 4, diameter: float = 0.2,
                    seed: int = 0) -> ObjectModel:
    """Procedural test object scaled to the requested diameter.

    ``bumpy`` modulates a subdivided sphere with low-order sinusoidal lobes
    (mildly non-convex, so self-occlusion exists); ``convex`` is the plain
    sphere; ``ellipsoid`` stretches it.
    """
    verts, faces = icosphere_mesh(subdiv)
    if kind == "bumpy":
        x, y, z = verts.T
        theta = np.arccos(np.clip(z, -1, 1))
        phi = np.arctan2(y, x)
        radial = 1.0 + 0.22 * np.sin(3 * theta) * np.cos(2 * phi) + 0.13 * np.cos(4 * phi)
        verts = verts * radial[:, None]
    elif kind == "ellipsoid":
        verts = verts * np.array([1.0, 0.75, 0.55])
    elif kind != "convex":
        raise ValueError(f"unknown object kind {kind!r}")
    from .geometry import object_diameter_points
    verts = verts * (diameter / object_diameter_points(verts))
    return ObjectModel(vertices=verts, faces=faces)


def _sample_pose(sampler: PoseSamplerConfig, rng: np.random.Generator) -> Pose:
    if sampler.max_angle_deg is None:
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        r = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])
    else:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        ang = np.radians(sampler.max_angle_deg) * rng.uniform()
        kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]],
                       [-axis[1], axis[0], 0]])
        r = np.eye(3) + np.sin(ang) * kx + (1 - np.cos(ang)) * (kx @ kx)
    t = np.array([rng.uniform(-sampler.xy_range, sampler.xy_range),
                  rng.uniform(-sampler.xy_range, sampler.xy_range),
                  rng.uniform(*sampler.z_range)])
    return Pose(r, t)


def _full_mask(kp_uv_roi: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Cells covered by the convex hull of the projected keypoints."""
    g = grid.cells
    mask = np.zeros((g, g), dtype=np.uint8)
    scale = g / grid.roi_size
    cells = np.floor(kp_uv_roi * scale).astype(np.int64)
    ok = (cells[:, 0] >= 0) & (cells[:, 0] < g) & (cells[:, 1] >= 0) & (cells[:, 1] < g)
    mask[cells[ok, 1], cells[ok, 0]] = 1
    try:
        tri = Delaunay(kp_uv_roi * scale)
    except QhullError:
        return mask
    xs, ys = np.meshgrid(np.arange(g) + 0.5, np.arange(g) + 0.5, indexing="xy")
    centers = np.stack([xs.ravel(), ys.ravel()], axis=1)
    inside = tri.find_simplex(centers) >= 0
    mask[centers[inside, 1].astype(int), centers[inside, 0].astype(int)] = 1
    return mask


def _visible_mask(vis_uv_roi: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Cells touched by visible-surface projections, with pinholes closed."""
    g = grid.cells
    mask = np.zeros((g, g), dtype=np.uint8)
    scale = g / grid.roi_size
    cells = np.floor(vis_uv_roi * scale).astype(np.int64)
    ok = (cells[:, 0] >= 0) & (cells[:, 0] < g) & (cells[:, 1] >= 0) & (cells[:, 1] < g)
    mask[cells[ok, 1], cells[ok, 0]] = 1
    return binary_closing(mask, structure=np.ones((3, 3), dtype=bool)).astype(np.uint8)


def _render_xyz(model: ObjectModel, visible: np.ndarray, pose: Pose,
                intr: CameraIntrinsics, roi: RoiTransform, splat: int = 2) -> np.ndarray:
    """Z-buffered point splats of visible vertices; channels = object XYZ in [0,1]."""
    size = roi.roi_size
    img = np.zeros((3, size, size), dtype=np.float32)
    verts = model.vertices[visible]
    if verts.shape[0] == 0:
        return img
    lo = model.vertices.min(axis=0)
    span = model.vertices.max(axis=0) - lo
    span[span <= 0] = 1.0
    colors = ((verts - lo) / span).astype(np.float32)
    cam = pose.transform(verts)
    uv, front = project(verts, pose, intr)
    uv = to_roi(uv[front], roi)
    colors = colors[front]
    depth = cam[front, 2]
    # Painter's order: sort far-to-near so nearer splats overwrite.
    order = np.argsort(-depth, kind="stable")
    uv = uv[order]
    colors = colors[order]
    px = np.round(uv).astype(np.int64)
    for dy in range(-splat, splat + 1):
        for dx in range(-splat, splat + 1):
            x = px[:, 0] + dx
            y = px[:, 1] + dy
            ok = (x >= 0) & (x < size) & (y >= 0) & (y < size)
            img[:, y[ok], x[ok]] = colors[ok].T
    return img


def generate_scene(model: ObjectModel, keypoints: KeypointSet, cfg: RunConfig,
                   rng: np.random.Generator, max_attempts: int = 100) -> SceneSample:
    """Sample a pose, fit the square RoI, and derive exact ground truth.

    The pose resamples (up to ``max_attempts``) until every vertex is in
    front of the camera and the padded bounding box fits the image.
    """
    grid = cfg.grid()
    intr = cfg.intrinsics()
    w_img, h_img = cfg.image_size
    for _ in range(max_attempts):
        pose = _sample_pose(cfg.pose_sampler, rng)
        uv_all, in_front = project(model.vertices, pose, intr)
        if not in_front.all():
            continue
        lo = uv_all.min(axis=0)
        hi = uv_all.max(axis=0)
        side = 1.1 * float(max(hi[0] - lo[0], hi[1] - lo[1]))
        center = (lo + hi) / 2.0
        origin = center - side / 2.0
        if origin[0] < 0 or origin[1] < 0 or origin[0] + side > w_img or origin[1] + side > h_img:
            continue
        roi = RoiTransform(bbox_origin=(origin[0], origin[1]), bbox_size=(side, side),
                           roi_size=grid.roi_size)
        kp_uv, kp_front = project(keypoints.points, pose, intr)
        if not kp_front.all():
            continue
        kp_uv_roi = to_roi(kp_uv, roi)
        gt_codes = encode_projection(kp_uv_roi, grid)
        cam_center = pose.camera_center()
        visible = hpr_visible(model.vertices, cam_center)
        vis_uv_roi = to_roi(uv_all[visible], roi)
        full = _full_mask(kp_uv_roi, grid)
        vis = (_visible_mask(vis_uv_roi, grid) & full).astype(np.uint8)
        image = _render_xyz(model, visible, pose, intr, roi)
        return SceneSample(pose=pose, roi=roi, gt_codes=gt_codes,
                           gt_masks=np.stack([full, vis]).astype(np.uint8),
                           image=image, keypoint_uv_roi=kp_uv_roi)
    raise SceneGenerationError(f"no valid pose found in {max_attempts} attempts")


def generate_scenes(model: ObjectModel, keypoints: KeypointSet, cfg: RunConfig,
                    count: int, seed_offset: int = 0) -> list[SceneSample]:
    """Deterministic scene list; scene i uses child seed splitmix64(seed, i)."""
    out = []
    for i in range(count):
        rng = np.random.default_rng(splitmix64(cfg.seed, seed_offset + i))
        out.append(generate_scene(model, keypoints, cfg, rng))
    return out


def corrupt_codes(codes: BinaryCodeSet, noise: NoiseModel, rng: np.random.Generator,
                  grid: GridSpec | None = None) -> BinaryCodeSet:
    """Apply independent bit flips and whole-keypoint relocations."""
    b_v = codes.b_v.copy()
    b_x = codes.b_x.copy()
    b_y = codes.b_y.copy()
    n, d = b_x.shape
    if noise.bit_flip_prob > 0:
        flips = rng.uniform(size=(n, d)) < noise.bit_flip_prob
        b_x ^= flips.astype(np.uint8)
        if not noise.bit_flip_x_only:
            flips = rng.uniform(size=(n, d)) < noise.bit_flip_prob
            b_y ^= flips.astype(np.uint8)
    if noise.msb_flip_prob > 0:
        hit = rng.uniform(size=n) < noise.msb_flip_prob
        b_x[hit, 0] ^= 1
        b_y[hit, 0] ^= 1
    if noise.outlier_prob > 0:
        if grid is None:
            raise ValueError("outlier relocation needs the GridSpec")
        hit = rng.uniform(size=n) < noise.outlier_prob
        if hit.any():
            new_pts = rng.uniform(0, grid.roi_size, size=(int(hit.sum()), 2))
            reloc = encode_projection(new_pts, grid)
            b_x[hit] = reloc.b_x
            b_y[hit] = reloc.b_y
            b_v[hit] = 1
    return BinaryCodeSet(b_v=b_v, b_x=b_x, b_y=b_y)


def infer_pipeline(sample: SceneSample, keypoints: KeypointSet, cfg: RunConfig,
                   net: ProgressiveLocalizer | None = None,
                   graph: KnnGraph | None = None,
                   codes: BinaryCodeSet | None = None,
                   use_mask_filter: bool = False,
                   solver: str = "ransac") -> PipelineResult:
    """Codes -> decode -> (optional visible-mask filter) -> robust PnP.

    Without a network this runs in oracle mode on ``codes`` (defaulting to
    the scene's ground-truth codes). With a network, codes come from the
    hardened forward pass and the mask filter uses the predicted visible
    mask; in oracle mode the filter uses the ground-truth mask.
    """
    grid = cfg.grid()
    intr = cfg.intrinsics()
    diagnostics: dict = {}
    if net is not None:
        if graph is None:
            raise ValueError("network inference needs the keypoint graph")
        out = net.forward(sample.image[None], graph)
        soft = out.soft_codes(0)
        hard = harden(soft)
        vis_mask = (masks_from_logits(out.mask_logits[0]).visible >= 0.5).astype(np.uint8)
    else:
        hard = codes if codes is not None else sample.gt_codes
        vis_mask = sample.gt_masks[1]
    points_roi, valid = decode_codes(hard, grid)
    diagnostics["n_visible"] = int(valid.sum())
    if hasattr(sample, "keypoint_uv_roi"):
        meds = {}
        for level in range(grid.base_depth, grid.depth + 1):
            cells = prefix_cells(hard, level)
            centers = (cells + 0.5) * (grid.roi_size / (1 << level))
            err = np.linalg.norm(centers - sample.keypoint_uv_roi, axis=1)
            if valid.any():
                meds[level] = float(np.median(err[valid]))
        diagnostics["stage_median_px"] = meds
    corrs = CorrespondenceSet(keypoints.points, points_roi, valid)
    if use_mask_filter:
        corrs = mask_filter(corrs, vis_mask, grid)
        diagnostics["n_after_filter"] = int(corrs.valid.sum())
    corrs = CorrespondenceSet(corrs.p3d, from_roi(corrs.p2d, sample.roi), corrs.valid)
    solve = spatial_coherence_solve if solver == "progx" else ransac_pnp
    try:
        est = solve(corrs, intr, cfg.solver)
    except SolverError as exc:
        return PipelineResult(estimate=None, error=f"{type(exc).__name__}: {exc}",
                              diagnostics=diagnostics)
    diagnostics["n_inliers"] = int(est.inliers.sum())
    diagnostics["mean_inlier_px"] = est.mean_error
    return PipelineResult(estimate=est, diagnostics=diagnostics)


@dataclass
class TrainLog:
    """Per-step loss records plus periodic held-out localization medians."""

    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)

    def totals(self) -> np.ndarray:
        return np.array([s["total"] for s in self.steps])


def _median_localization_px(net: ProgressiveLocalizer, samples: list[SceneSample],
                            graph: KnnGraph, grid: GridSpec) -> float:
    errs = []
    for s in samples:
        out = net.forward(s.image[None], graph)
        hard = harden(out.soft_codes(0))
        pts, _ = decode_codes(hard, grid)
        vis = s.gt_codes.b_v.astype(bool)
        errs.append(np.linalg.norm(pts[vis] - s.keypoint_uv_roi[vis], axis=1))
    return float(np.median(np.concatenate(errs))) if errs else float("nan")


def train_toy(train_samples: list[SceneSample], cfg: RunConfig,
              keypoints: KeypointSet, graph: KnnGraph,
              eval_samples: list[SceneSample] | None = None,
              steps: int | None = None) -> tuple[ProgressiveLocalizer, TrainLog]:
    """Two-phase toy training.

    Phase 1 (``cfg.phase1_steps``) trains the image branch, embedding, and
    stage-0 predictor on the visibility bit, the coarse index bits, and the
    mask loss; phase 2 trains everything on the full loss. Both phases use
    Adam; batches are drawn from a seeded generator, so reruns reproduce
    the loss curve bitwise.
    """
    if not train_samples:
        raise ValueError("training needs a non-empty dataset")
    dtype = np.float32 if cfg.net_dtype == "float32" else np.float64
    net = ProgressiveLocalizer(cfg.net_config(keypoints.n), dtype=dtype)
    total_steps = cfg.steps if steps is None else steps
    phase1 = min(cfg.phase1_steps, total_steps)
    rng = np.random.default_rng(splitmix64(cfg.seed, 0x7EA1))
    log = TrainLog()
    grid = cfg.grid()

    images = np.stack([s.image for s in train_samples]).astype(dtype)
    gt_masks = np.stack([s.gt_masks for s in train_samples]).astype(np.float64)
    gt_codes = [s.gt_codes for s in train_samples]

    def run_phase(n_steps: int, params, lr: float, max_stage: int | None, start: int):
        opt = Adam(params, lr=lr)
        for step in range(n_steps):
            idx = rng.choice(len(train_samples), size=min(cfg.batch_size, len(train_samples)),
                             replace=False)
            teacher = [gt_codes[i] for i in idx] if cfg.teacher_forcing else None
            out = net.forward(images[idx], graph, max_stage=max_stage,
                              teacher_codes=teacher)
            bd, d_pv, d_px, d_py, d_mask = localization_loss(
                out, [gt_codes[i] for i in idx], gt_masks[idx])
            if not np.isfinite(bd.total):
                raise TrainingDivergedError(
                    f"non-finite loss at step {start + step}: {bd}")
            opt.zero_grad()
            net.backward(d_pv.astype(dtype), d_px.astype(dtype),
                         d_py.astype(dtype), d_mask.astype(dtype))
            opt.step()
            log.steps.append({"step": start + step, "l_v": bd.l_v, "l_x": bd.l_x,
                              "l_y": bd.l_y, "l_mask": bd.l_mask, "total": bd.total})
            if eval_samples and (start + step + 1) % cfg.eval_interval == 0:
                med = _median_localization_px(net, eval_samples, graph, grid)
                log.evals.append({"step": start + step + 1, "median_px": med})

    run_phase(phase1, net.stage0_params(), cfg.lr_phase1, 0, 0)
    run_phase(total_steps - phase1, net.params(), cfg.lr_phase2, None, phase1)
    return net, log


def run_benchmark(cfg: RunConfig, out_dir: str | os.PathLike | None = None,
                  net: ProgressiveLocalizer | None = None,
                  solver: str = "ransac",
                  use_mask_filter: bool = False,
                  sym: SymmetrySpec | None = None
                  ) -> tuple[MetricsReport, list[dict]]:
    """Generate scenes, run the pipeline, evaluate, and persist JSON + CSV.

    Without a network this is the oracle run: ground-truth codes (optionally
    corrupted per ``cfg.noise``) go straight to the solver, which isolates
    quantization plus solver behavior.
    """
    if cfg.bench_scenes < 1:
        raise ValueError("bench_scenes must be >= 1")
    n_kp = cfg.toy_keypoints if net is not None else cfg.n_keypoints
    model = make_toy_object(cfg.object_kind, cfg.object_subdiv, cfg.object_diameter)
    keypoints = farthest_point_sample(model, n_kp)
    graph = build_knn_graph(keypoints, cfg.knn_k)
    scenes = generate_scenes(model, keypoints, cfg, cfg.bench_scenes)
    grid = cfg.grid()
    records = []
    preds: list[Pose | None] = []
    for i, scene in enumerate(scenes):
        codes = scene.gt_codes
        if net is None and (cfg.noise.bit_flip_prob or cfg.noise.msb_flip_prob
                            or cfg.noise.outlier_prob):
            rng = np.random.default_rng(splitmix64(cfg.seed, 0xC0DE + i))
            codes = corrupt_codes(codes, cfg.noise, rng, grid)
        res = infer_pipeline(scene, keypoints, cfg, net=net, graph=graph, codes=codes,
                             use_mask_filter=use_mask_filter, solver=solver)
        rec: dict = {"scene": i, "error": res.error}
        if res.estimate is not None:
            pose = res.estimate.pose
            preds.append(pose)
            rot_deg, trans_m = rot_trans_error(pose, scene.pose, sym)
            rec.update(add=add_error(pose, scene.pose, model),
                       adds=adds_error(pose, scene.pose, model),
                       rot_deg=rot_deg, trans_m=trans_m,
                       n_inliers=res.diagnostics.get("n_inliers"))
        else:
            preds.append(None)
        records.append(rec)
    report = evaluate_poses(preds, [s.pose for s in scenes], model, sym)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump({"report": report.as_dict(), "records": records}, fh, indent=2)
        with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            cols = ["method", "0.02d", "0.05d", "0.1d"] + \
                [f"{d}deg{c}cm" for (d, c) in report.deg_cm_recalls]
            writer.writerow(cols)
            writer.writerow([solver, f"{report.recall_002d:.1f}", f"{report.recall_005d:.1f}",
                             f"{report.recall_010d:.1f}"]
                            + [f"{v:.1f}" for v in report.deg_cm_recalls.values()])
    return report, records
