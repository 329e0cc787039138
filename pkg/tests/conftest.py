"""Shared fixtures and oracle helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from gridpose.geometry import CameraIntrinsics, Pose


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation from a normalized random quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng: np.random.Generator, z_range=(0.8, 1.2), xy=0.1) -> Pose:
    return Pose(random_rotation(rng),
                np.array([rng.uniform(-xy, xy), rng.uniform(-xy, xy),
                          rng.uniform(*z_range)]))


def rotation_error_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    c = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def axis_rotation(axis, angle_rad: float) -> np.ndarray:
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * kx + (1 - np.cos(angle_rad)) * (kx @ kx)


@pytest.fixture
def intr() -> CameraIntrinsics:
    return CameraIntrinsics(600.0, 600.0, 320.0, 240.0)


def fd_check_params(params, forward, rel_tol=1e-4, floor=1e-3, step=1e-4,
                    max_coords=None, rng=None):
    """Central-difference check of every parameter against analytic grads.

    ``forward`` runs the op and returns (loss, routing_signature); analytic
    gradients must already be accumulated in ``p.grad``. Coordinates whose
    perturbation changes the routing signature are excluded (kink filter).
    Returns the max relative error over comparable coordinates.
    """
    from gridpose.nnops import compare_gradients

    flat = np.concatenate([p.value.reshape(-1).astype(np.float64) for p in params])
    analytic = np.concatenate([p.grad.reshape(-1).astype(np.float64) for p in params])

    def set_flat(x):
        i = 0
        for p in params:
            n = p.value.size
            p.value[...] = x[i:i + n].reshape(p.value.shape)
            i += n

    if max_coords is not None and flat.size > max_coords:
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(flat.size, size=max_coords, replace=False)
    else:
        idx = np.arange(flat.size)

    base = flat.copy()
    _, base_sig = forward()
    num = np.zeros(idx.size)
    ok = np.ones(idx.size, dtype=bool)
    for m, i in enumerate(idx):
        xp = base.copy()
        xp[i] += step
        set_flat(xp)
        lp, sig_p = forward()
        xm = base.copy()
        xm[i] -= step
        set_flat(xm)
        lm, sig_m = forward()
        num[m] = (lp - lm) / (2 * step)
        ok[m] = (sig_p == base_sig) and (sig_m == base_sig)
    set_flat(base)
    return compare_gradients(analytic[idx], num, ok, rel_tol, floor)
