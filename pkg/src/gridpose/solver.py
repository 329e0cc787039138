"""Pose recovery from 3D-2D correspondences.

The minimal solver is EPnP: the 3D points are rewritten as barycentric
combinations of four control points (centroid plus PCA axes), the control
points' camera-frame coordinates are found in the null space of the 12x12
projection-constraint system, with the null-space combination weights
(betas) estimated for the four classic cases and the winner picked by
reprojection error; the final rotation comes from SVD point alignment with
reflection correction.

Robust wrappers: seeded RANSAC over 4-point minimal samples, and a
spatial-coherence variant that confirms each inlier vote only when the
majority of the correspondence's nearest 3D neighbors agree. The latter
targets decoded-bit-flip outliers, whose 2D positions jump across the grid
and therefore appear spatially isolated.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .codes import GridSpec
from .geometry import CameraIntrinsics, Pose, RoiTransform, to_roi

__all__ = [
    "SolverError",
    "InsufficientDataError",
    "DegenerateConfigurationError",
    "NoConsensusError",
    "CorrespondenceSet",
    "SolverConfig",
    "PoseEstimate",
    "epnp",
    "ransac_pnp",
    "spatial_coherence_solve",
    "mask_filter",
    "reprojection_errors",
]


class SolverError(RuntimeError):
    """Base class for pose-solver failures."""


class InsufficientDataError(SolverError):
    """Fewer valid correspondences than the solver needs."""


class DegenerateConfigurationError(SolverError):
    """3D points are (near) coplanar or collinear; no stable pose."""


class NoConsensusError(SolverError):
    """No hypothesis reached the required inlier count."""


@dataclass(frozen=True)
class CorrespondenceSet:
    """Paired object-frame 3D points and 2D image points with validity flags."""

    p3d: np.ndarray
    p2d: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        p3d = np.asarray(self.p3d, dtype=np.float64).reshape(-1, 3)
        p2d = np.asarray(self.p2d, dtype=np.float64).reshape(-1, 2)
        if p3d.shape[0] != p2d.shape[0]:
            raise ValueError("p3d and p2d lengths differ")
        valid = (np.ones(p3d.shape[0], dtype=bool) if self.valid is None
                 else np.asarray(self.valid, dtype=bool).reshape(-1))
        if valid.shape[0] != p3d.shape[0]:
            raise ValueError("valid flags length differs from pair count")
        object.__setattr__(self, "p3d", p3d)
        object.__setattr__(self, "p2d", p2d)
        object.__setattr__(self, "valid", valid)

    @property
    def n(self) -> int:
        return self.p3d.shape[0]

    def with_validity(self, valid: np.ndarray) -> "CorrespondenceSet":
        return CorrespondenceSet(self.p3d, self.p2d, valid)


@dataclass(frozen=True)
class SolverConfig:
    """Robust-solver settings (reprojection threshold in pixels)."""

    reproj_threshold: float = 2.0
    ransac_iters: int = 150
    progx_iters: int = 400
    min_inliers: int = 6
    seed: int = 0
    coherence_neighbors: int = 5

    def __post_init__(self):
        if self.reproj_threshold <= 0:
            raise ValueError("reproj_threshold must be positive")
        if min(self.ransac_iters, self.progx_iters, self.min_inliers) < 1:
            raise ValueError("iteration and inlier counts must be positive")


@dataclass(frozen=True)
class PoseEstimate:
    """A recovered pose, per-pair inlier flags, and mean inlier error (px)."""

    pose: Pose
    inliers: np.ndarray
    mean_error: float


def reprojection_errors(pose: Pose, p3d: np.ndarray, p2d: np.ndarray,
                        intr: CameraIntrinsics) -> np.ndarray:
    """Pixel reprojection error per pair; behind-camera points get +inf."""
    cam = np.asarray(p3d) @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    err = np.full(cam.shape[0], np.inf)
    front = z > 1e-12
    u = intr.fx * cam[front, 0] / z[front] + intr.cx
    v = intr.fy * cam[front, 1] / z[front] + intr.cy
    err[front] = np.hypot(u - p2d[front, 0], v - p2d[front, 1])
    return err


# --- EPnP --------------------------------------------------------------------

_PAIRS = list(combinations(range(4), 2))


def _control_points(p3d: np.ndarray) -> np.ndarray:
    centroid = p3d.mean(axis=0)
    centered = p3d - centroid
    cov = centered.T @ centered / p3d.shape[0]
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[-1] <= 0 or eigval[0] / eigval[-1] < 1e-9:
        raise DegenerateConfigurationError(
            "3D points are (near) coplanar; EPnP control points are degenerate")
    ctrl = [centroid]
    for k in range(3):
        ctrl.append(centroid + np.sqrt(eigval[k]) * eigvec[:, k])
    return np.asarray(ctrl)


def _barycentric(p3d: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    c = np.vstack([ctrl.T, np.ones(4)])
    try:
        cinv = np.linalg.inv(c)
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfigurationError("control points are not affinely independent") from exc
    ph = np.hstack([p3d, np.ones((p3d.shape[0], 1))])
    return ph @ cinv.T


def _build_m(alphas: np.ndarray, p2d: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    n = alphas.shape[0]
    m = np.zeros((2 * n, 12))
    du = intr.cx - p2d[:, 0]
    dv = intr.cy - p2d[:, 1]
    for j in range(4):
        a = alphas[:, j]
        m[0::2, 3 * j] = a * intr.fx
        m[0::2, 3 * j + 2] = a * du
        m[1::2, 3 * j + 1] = a * intr.fy
        m[1::2, 3 * j + 2] = a * dv
    return m


def _rho(ctrl: np.ndarray) -> np.ndarray:
    return np.array([np.sum((ctrl[a] - ctrl[b]) ** 2) for a, b in _PAIRS])


def _build_l(dv: np.ndarray) -> np.ndarray:
    """6x10 system on beta products, columns ordered
    [b11, b12, b22, b13, b23, b33, b14, b24, b34, b44]."""
    cols = [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2), (0, 3), (1, 3), (2, 3), (3, 3)]
    l = np.empty((6, 10))
    for c, (i, j) in enumerate(cols):
        dot = np.sum(dv[i] * dv[j], axis=1)
        l[:, c] = dot if i == j else 2.0 * dot
    return l


def _betas_case1(l: np.ndarray, rho: np.ndarray) -> np.ndarray:
    # N = 4 approximation: [b11, b12, b13, b14]
    sol, *_ = np.linalg.lstsq(l[:, [0, 1, 3, 6]], rho, rcond=None)
    b1 = np.sqrt(abs(sol[0]))
    betas = np.array([b1, 0.0, 0.0, 0.0])
    if b1 > 1e-12:
        betas[1:] = sol[1:] / b1
    return betas


def _betas_case2(l: np.ndarray, rho: np.ndarray) -> np.ndarray:
    # N = 2: [b11, b12, b22]
    sol, *_ = np.linalg.lstsq(l[:, [0, 1, 2]], rho, rcond=None)
    b1 = np.sqrt(abs(sol[0]))
    b2 = np.sqrt(abs(sol[2]))
    if sol[1] < 0:
        b2 = -b2
    return np.array([b1, b2, 0.0, 0.0])


def _betas_case3(l: np.ndarray, rho: np.ndarray) -> np.ndarray:
    # N = 3: [b11, b12, b22, b13, b23]
    sol, *_ = np.linalg.lstsq(l[:, [0, 1, 2, 3, 4]], rho, rcond=None)
    b1 = np.sqrt(abs(sol[0]))
    b2 = np.sqrt(abs(sol[2]))
    if sol[1] < 0:
        b2 = -b2
    b3 = sol[3] / b1 if b1 > 1e-12 else 0.0
    return np.array([b1, b2, b3, 0.0])


def _betas_case_n1(v: np.ndarray, rho: np.ndarray) -> np.ndarray:
    # N = 1: scale of the single null vector from distance preservation.
    dv = _rho(v[:, 0].reshape(4, 3))
    denom = dv.sum()
    beta = np.sqrt(rho.sum() / denom) if denom > 1e-18 else 0.0
    return np.array([beta, 0.0, 0.0, 0.0])


def _ctrl_diffs(v: np.ndarray) -> np.ndarray:
    """(4, 6, 3): control-point pair differences of each null-space vector."""
    dv = np.empty((4, 6, 3))
    for k in range(4):
        ctrl = v[:, k].reshape(4, 3)
        for row, (a, b) in enumerate(_PAIRS):
            dv[k, row] = ctrl[a] - ctrl[b]
    return dv


def _gauss_newton(betas: np.ndarray, dv: np.ndarray, rho: np.ndarray,
                  iters: int = 10) -> np.ndarray:
    """Refine betas so control-point distances match the world distances."""
    betas = betas.copy()
    for _ in range(iters):
        dc = np.einsum("k,kpc->pc", betas, dv)
        residual = np.sum(dc * dc, axis=1) - rho
        jac = 2.0 * np.einsum("pc,kpc->pk", dc, dv)
        try:
            step, *_ = np.linalg.lstsq(jac, residual, rcond=None)
        except np.linalg.LinAlgError:
            break
        betas -= step
    return betas


def _align(p_world: np.ndarray, p_cam: np.ndarray) -> Pose:
    """Rigid alignment p_cam ~ R @ p_world + t via SVD with det correction."""
    cw = p_world.mean(axis=0)
    cc = p_cam.mean(axis=0)
    h = (p_world - cw).T @ (p_cam - cc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(r, cc - r @ cw)


def epnp(corrs: CorrespondenceSet, intr: CameraIntrinsics) -> Pose:
    """EPnP pose from >= 4 valid, non-coplanar correspondences."""
    p3d = corrs.p3d[corrs.valid]
    p2d = corrs.p2d[corrs.valid]
    if p3d.shape[0] < 4:
        raise InsufficientDataError(f"need >= 4 valid pairs, got {p3d.shape[0]}")
    ctrl_w = _control_points(p3d)
    alphas = _barycentric(p3d, ctrl_w)
    m = _build_m(alphas, p2d, intr)
    # Null space from the 12x12 normal matrix; eigh orders ascending, so the
    # first four eigenvectors are the (near-)null basis, smallest first.
    _, eigvec = np.linalg.eigh(m.T @ m)
    v = eigvec[:, :4]
    rho = _rho(ctrl_w)
    dv = _ctrl_diffs(v)
    l = _build_l(dv)

    best: tuple[float, Pose] | None = None
    for betas in (_betas_case_n1(v, rho), _betas_case2(l, rho),
                  _betas_case3(l, rho), _betas_case1(l, rho)):
        betas = _gauss_newton(betas, dv, rho)
        x = v @ betas
        ctrl_c = x.reshape(4, 3)
        # Rescale so camera-frame control distances match the world ones.
        dc = _rho(ctrl_c)
        denom = dc.sum()
        if denom <= 1e-18:
            continue
        ctrl_c = ctrl_c * np.sqrt(rho.sum() / denom)
        p_cam = alphas @ ctrl_c
        if np.median(p_cam[:, 2]) < 0:
            p_cam = -p_cam
        pose = _align(p3d, p_cam)
        err = float(np.mean(reprojection_errors(pose, p3d, p2d, intr)))
        if best is None or err < best[0]:
            best = (err, pose)
    if best is None:
        raise DegenerateConfigurationError("all beta cases collapsed")
    return best[1]


# --- robust wrappers ---------------------------------------------------------

def _draw_samples(rng: np.random.Generator, n: int, iters: int) -> np.ndarray:
    return np.stack([rng.choice(n, size=4, replace=False) for _ in range(iters)])


def _hypothesis(p3d, p2d, intr, sample) -> Pose | None:
    try:
        return epnp(CorrespondenceSet(p3d[sample], p2d[sample]), intr)
    except SolverError:
        return None


def _search(corrs: CorrespondenceSet, intr: CameraIntrinsics, cfg: SolverConfig,
            iters: int, confirm=None) -> PoseEstimate:
    valid_idx = np.flatnonzero(corrs.valid)
    n = valid_idx.size
    if n < 4:
        raise InsufficientDataError(f"need >= 4 valid pairs, got {n}")
    p3d = corrs.p3d[valid_idx]
    p2d = corrs.p2d[valid_idx]
    rng = np.random.default_rng(cfg.seed)
    samples = _draw_samples(rng, n, iters)
    reserve = np.random.default_rng(cfg.seed + 0x9E3779B9)

    best_key = None
    best_inliers = None
    for it in range(iters):
        pose = _hypothesis(p3d, p2d, intr, samples[it])
        for _ in range(10):
            if pose is not None:
                break
            pose = _hypothesis(p3d, p2d, intr, reserve.choice(n, size=4, replace=False))
        if pose is None:
            continue
        err = reprojection_errors(pose, p3d, p2d, intr)
        inl = err <= cfg.reproj_threshold
        if confirm is not None:
            inl = confirm(inl)
        count = int(inl.sum())
        if count == 0:
            continue
        mean_err = float(err[inl].mean())
        key = (count, -mean_err, -it)
        if best_key is None or key > best_key:
            best_key = key
            best_inliers = inl
    if best_key is None or best_key[0] < cfg.min_inliers:
        got = 0 if best_key is None else best_key[0]
        raise NoConsensusError(
            f"best hypothesis has {got} inliers < min_inliers = {cfg.min_inliers}")

    try:
        pose = epnp(CorrespondenceSet(p3d[best_inliers], p2d[best_inliers]), intr)
    except SolverError:
        # Refit can degenerate (e.g. near-coplanar inlier set); fall back to a
        # minimal re-estimate over the best sample set by rerunning hypotheses.
        raise NoConsensusError("refit on the consensus set failed")
    err = reprojection_errors(pose, p3d, p2d, intr)
    inl = err <= cfg.reproj_threshold
    flags = np.zeros(corrs.n, dtype=bool)
    flags[valid_idx[inl]] = True
    mean_err = float(err[inl].mean()) if inl.any() else float("inf")
    return PoseEstimate(pose=pose, inliers=flags, mean_error=mean_err)


def ransac_pnp(corrs: CorrespondenceSet, intr: CameraIntrinsics,
               cfg: SolverConfig = SolverConfig()) -> PoseEstimate:
    """Seeded RANSAC with 4-point EPnP hypotheses and inlier refit.

    Hypotheses are ranked by inlier count, ties by lower mean inlier error,
    then by earlier iteration; the returned inlier flags are recomputed
    under the final refit pose.
    """
    return _search(corrs, intr, cfg, cfg.ransac_iters)


def spatial_coherence_solve(corrs: CorrespondenceSet, intr: CameraIntrinsics,
                            cfg: SolverConfig = SolverConfig()) -> PoseEstimate:
    """RANSAC whose inlier votes require local 3D-neighborhood agreement.

    A correspondence confirms only if the strict majority of its m nearest
    3D neighbors (among the valid pairs) are inliers of the same candidate
    pose, then the pose refits on confirmed inliers. Spatially isolated
    outliers, such as decoded codes with flipped high bits, never confirm.
    """
    valid_idx = np.flatnonzero(corrs.valid)
    if valid_idx.size < 4:
        raise InsufficientDataError(f"need >= 4 valid pairs, got {valid_idx.size}")
    p3d = corrs.p3d[valid_idx]
    m = min(cfg.coherence_neighbors, valid_idx.size - 1)
    d2 = np.sum((p3d[:, None, :] - p3d[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    nbr = np.argsort(d2, axis=1, kind="stable")[:, :m]

    def confirm(inliers: np.ndarray) -> np.ndarray:
        agree = inliers[nbr].sum(axis=1)
        return inliers & (2 * agree > m)

    return _search(corrs, intr, cfg, cfg.progx_iters, confirm=confirm)


def mask_filter(corrs: CorrespondenceSet, mask: np.ndarray, grid: GridSpec,
                roi: RoiTransform | None = None) -> CorrespondenceSet:
    """Invalidate pairs whose 2D point lands in a zero cell of the mask.

    ``mask`` is a (2^d, 2^d) binary grid indexed [iy, ix]. 2D points are
    taken as RoI coordinates unless ``roi`` is given to map image pixels
    into the RoI first. Points outside the RoI are outside every mask cell
    and get invalidated as well.
    """
    mask = np.asarray(mask)
    if mask.shape != (grid.cells, grid.cells):
        raise ValueError(f"mask shape {mask.shape} != grid {(grid.cells, grid.cells)}")
    pts = corrs.p2d if roi is None else to_roi(corrs.p2d, roi)
    scale = grid.cells / grid.roi_size
    cells = np.floor(pts * scale).astype(np.int64)
    inside = ((cells[:, 0] >= 0) & (cells[:, 0] < grid.cells)
              & (cells[:, 1] >= 0) & (cells[:, 1] < grid.cells))
    keep = np.zeros(corrs.n, dtype=bool)
    ok = inside & corrs.valid
    keep[ok] = mask[cells[ok, 1], cells[ok, 0]] > 0
    return corrs.with_validity(keep)
