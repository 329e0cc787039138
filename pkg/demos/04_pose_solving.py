"""Robust pose recovery from noisy, outlier-ridden correspondences.

Exact correspondences give near-exact EPnP poses; RANSAC shrugs off
scattered outliers; and the spatial-coherence variant additionally rejects
decoded-bit-flip outliers, whose 2D positions jump across the grid while
their 3D points stay embedded among well-localized neighbors.
"""

import numpy as np

from gridpose.codes import BinaryCodeSet, GridSpec, decode_codes, encode_projection
from gridpose.geometry import CameraIntrinsics, Pose, project
from gridpose.solver import (
    CorrespondenceSet,
    SolverConfig,
    epnp,
    ransac_pnp,
    spatial_coherence_solve,
)

rng = np.random.default_rng(0)
intr = CameraIntrinsics(600, 600, 320, 240)


def rot_deg(a, b):
    return np.degrees(np.arccos(np.clip((np.trace(a.T @ b) - 1) / 2, -1, 1)))


def random_pose(r):
    q = r.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                    [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                    [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
    return Pose(rot, np.array([0.02, -0.01, 1.0]))


pts = rng.uniform(-0.1, 0.1, size=(512, 3))
pose = random_pose(rng)
uv, _ = project(pts, pose, intr)

est = epnp(CorrespondenceSet(pts, uv), intr)
print(f"EPnP on exact data:       rot err {rot_deg(est.rotation, pose.rotation):.2e} deg")

noisy = uv + rng.normal(0, 1.0, uv.shape)
out_idx = rng.choice(512, 154, replace=False)
noisy[out_idx] = rng.uniform([0, 0], [640, 480], size=(154, 2))
est = ransac_pnp(CorrespondenceSet(pts, noisy), intr, SolverConfig(seed=1))
print(f"RANSAC, 30% outliers:     rot err {rot_deg(est.pose.rotation, pose.rotation):.3f} deg, "
      f"{int(est.inliers.sum())} inliers")

# bit-flip corruption: encode to grid codes, flip the MSB for a few points
grid = GridSpec(256, 6, 3)
span = (uv.max(axis=0) - uv.min(axis=0)).max()
origin = uv.min(axis=0)
codes = encode_projection(np.clip((uv - origin) * 256 / span, 0, 255.999), grid)
flip = rng.choice(512, 26, replace=False)
bx, by = codes.b_x.copy(), codes.b_y.copy()
bx[flip, 0] ^= 1
by[flip, 0] ^= 1
dec, _ = decode_codes(BinaryCodeSet(codes.b_v, bx, by), grid)
uv_flip = dec * span / 256 + origin

for name, solve, iters in (("RANSAC", ransac_pnp, 150),
                           ("spatial coherence", spatial_coherence_solve, 400)):
    est = solve(CorrespondenceSet(pts, uv_flip), intr,
                SolverConfig(seed=2, ransac_iters=iters, progx_iters=iters))
    leaked = int(est.inliers[flip].sum())
    print(f"{name:18s} vs 5% MSB flips: rot err "
          f"{rot_deg(est.pose.rotation, pose.rotation):.3f} deg, "
      f"flipped pairs among inliers: {leaked}")
