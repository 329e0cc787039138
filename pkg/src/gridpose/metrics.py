"""Pose-accuracy metrics: ADD, ADD-S, threshold recalls, AUC, and angular
/ translational errors with symmetry handling.

ADD is the mean distance between model vertices transformed by the
predicted and ground-truth poses; ADD-S replaces the paired distance with
the distance to the closest transformed ground-truth vertex, which makes
it invariant to symmetries of the vertex set. Recalls use a strict
"error < fraction * diameter" test, and the area-under-curve accuracy
integrates the recall over evenly spaced absolute thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import ObjectModel, Pose

__all__ = [
    "SymmetrySpec",
    "MetricsReport",
    "add_error",
    "adds_error",
    "recall_at",
    "auc",
    "rot_trans_error",
    "evaluate_poses",
]


@dataclass(frozen=True)
class SymmetrySpec:
    """Object symmetry: none, a set of discrete rotations, or an axis.

    ``rotations`` are 3x3 matrices equivalent to the identity for the
    object; a continuous axis is discretized into ``axis_steps`` rotations.
    """

    rotations: tuple[np.ndarray, ...] = ()
    axis: np.ndarray | None = None
    axis_steps: int = 360

    @staticmethod
    def none() -> "SymmetrySpec":
        return SymmetrySpec()

    @staticmethod
    def discrete(rotations) -> "SymmetrySpec":
        return SymmetrySpec(rotations=tuple(np.asarray(r, dtype=np.float64) for r in rotations))

    @staticmethod
    def continuous(axis, steps: int = 360) -> "SymmetrySpec":
        a = np.asarray(axis, dtype=np.float64)
        return SymmetrySpec(axis=a / np.linalg.norm(a), axis_steps=steps)

    def equivalent_rotations(self) -> list[np.ndarray]:
        """Identity plus every symmetry rotation (axis discretized)."""
        out = [np.eye(3)]
        out += [np.asarray(r) for r in self.rotations]
        if self.axis is not None:
            k = self.axis
            kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
            for step in range(1, self.axis_steps):
                ang = 2.0 * np.pi * step / self.axis_steps
                out.append(np.eye(3) + np.sin(ang) * kx + (1 - np.cos(ang)) * (kx @ kx))
        return out


@dataclass(frozen=True)
class MetricsReport:
    """Recall percentages and AUC values for one evaluation run."""

    recall_002d: float
    recall_005d: float
    recall_010d: float
    auc_adds: float
    auc_add_s: float
    deg_cm_recalls: dict = field(default_factory=dict)
    n_samples: int = 0

    def as_dict(self) -> dict:
        out = {
            "adds_0.02d": self.recall_002d,
            "adds_0.05d": self.recall_005d,
            "adds_0.1d": self.recall_010d,
            "auc_add_s": self.auc_adds,
            "auc_add(-s)": self.auc_add_s,
            "n_samples": self.n_samples,
        }
        for (deg, cm), val in self.deg_cm_recalls.items():
            out[f"{deg}deg_{cm}cm"] = val
        return out


def add_error(pred: Pose, gt: Pose, model: ObjectModel) -> float:
    """Mean vertex displacement between the two transformed models."""
    a = model.vertices @ pred.rotation.T + pred.translation
    b = model.vertices @ gt.rotation.T + gt.translation
    return float(np.linalg.norm(a - b, axis=1).mean())


def adds_error(pred: Pose, gt: Pose, model: ObjectModel,
               brute_force: bool = False) -> float:
    """Mean distance from each predicted vertex to the closest gt vertex.

    Uses a KD-tree unless ``brute_force`` forces the exact O(N^2) scan; the
    two agree (the tree is exact), which the test suite checks.
    """
    a = model.vertices @ pred.rotation.T + pred.translation
    b = model.vertices @ gt.rotation.T + gt.translation
    if brute_force or model.vertex_count <= 64:
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
        return float(np.sqrt(d2.min(axis=1)).mean())
    dist, _ = cKDTree(b).query(a, k=1)
    return float(dist.mean())


def recall_at(errors, diameter: float, fraction: float) -> float:
    """Percentage of errors strictly below fraction * diameter."""
    errs = np.asarray(errors, dtype=np.float64)
    if errs.size == 0:
        raise ValueError("recall of an empty error list is undefined")
    if diameter <= 0:
        raise ValueError("diameter must be positive")
    return float(100.0 * np.mean(errs < fraction * diameter))


def auc(errors, max_threshold: float = 0.10, steps: int = 1000) -> float:
    """Mean accuracy over ``steps`` evenly spaced thresholds in (0, max].

    Errors above the maximum threshold contribute zero everywhere.
    """
    errs = np.asarray(errors, dtype=np.float64)
    if errs.size == 0:
        raise ValueError("auc of an empty error list is undefined")
    thresholds = max_threshold * np.arange(1, steps + 1) / steps
    acc = (errs[None, :] < thresholds[:, None]).mean(axis=1)
    return float(100.0 * acc.mean())


def rot_trans_error(pred: Pose, gt: Pose,
                    sym: SymmetrySpec | None = None) -> tuple[float, float]:
    """(rotation error deg, translation error m), minimized over symmetries.

    The geodesic angle of ``R_pred^T (R_gt S)`` is minimized over the
    symmetry rotations S; translation error is plain Euclidean.
    """
    sym = sym or SymmetrySpec.none()
    best = np.inf
    for s in sym.equivalent_rotations():
        rel = pred.rotation.T @ (gt.rotation @ s)
        c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
        best = min(best, float(np.degrees(np.arccos(c))))
    return best, float(np.linalg.norm(pred.translation - gt.translation))


def evaluate_poses(pred_poses: list[Pose | None], gt_poses: list[Pose],
                   model: ObjectModel, sym: SymmetrySpec | None = None,
                   deg_cm: tuple[tuple[float, float], ...] = ((2, 2), (5, 5)),
                   auc_max: float = 0.10) -> MetricsReport:
    """Batch evaluation mirroring the standard reporting columns.

    ``None`` predictions (failed solves) count as infinite error. The
    headline recall uses ADD for asymmetric objects and ADD-S when a
    symmetry is declared; ``auc_adds`` always uses the symmetric metric.
    """
    if len(pred_poses) != len(gt_poses) or not gt_poses:
        raise ValueError("prediction/ground-truth lists must be equal and non-empty")
    sym = sym or SymmetrySpec.none()
    symmetric = bool(sym.rotations) or sym.axis is not None
    e_add, e_adds, rt = [], [], []
    for pred, gt in zip(pred_poses, gt_poses):
        if pred is None:
            e_add.append(np.inf)
            e_adds.append(np.inf)
            rt.append((np.inf, np.inf))
            continue
        e_add.append(add_error(pred, gt, model))
        e_adds.append(adds_error(pred, gt, model))
        rt.append(rot_trans_error(pred, gt, sym))
    headline = np.asarray(e_adds if symmetric else e_add)
    e_adds = np.asarray(e_adds)
    deg_cm_recalls = {}
    for deg, cm in deg_cm:
        ok = [(r < deg) and (t < cm / 100.0) for r, t in rt]
        deg_cm_recalls[(deg, cm)] = float(100.0 * np.mean(ok))
    return MetricsReport(
        recall_002d=recall_at(headline, model.diameter, 0.02),
        recall_005d=recall_at(headline, model.diameter, 0.05),
        recall_010d=recall_at(headline, model.diameter, 0.10),
        auc_adds=auc(e_adds, auc_max),
        auc_add_s=auc(headline, auc_max),
        deg_cm_recalls=deg_cm_recalls,
        n_samples=len(gt_poses),
    )
