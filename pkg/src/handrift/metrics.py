"""Evaluation metrics: joint/vertex errors, acceleration error, constraint
violations in degrees, and F-scores, with similarity Procrustes alignment.

All functions are pure numpy and deterministic. Joint errors default to
root-relative (wrist-subtracted) as is standard for hand benchmarks; the
absolute variant stays behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError
from .physics import MotionState

WRIST = 0


def procrustes_align(pred: np.ndarray, gt: np.ndarray, with_scale: bool = True) -> np.ndarray:
    """Similarity-align ``pred`` onto ``gt`` by least squares.

    Closed-form orthogonal Procrustes with reflection correction (det=+1);
    optional uniform scale. Raises on degenerate targets (fewer than 3
    points, or collinear ground truth).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"procrustes: shapes {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 3:
        raise InputError(f"procrustes needs >= 3 points, got {pred.shape[0]}")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    X = pred - mu_p
    Y = gt - mu_g
    sx = (X * X).sum()
    if sx < 1e-18:
        raise InputError("procrustes: prediction cloud is degenerate (all points equal)")
    sv_gt = np.linalg.svd(Y, compute_uv=False)
    if sv_gt[1] < 1e-9 * max(sv_gt[0], 1e-30):
        raise InputError("procrustes: ground-truth points are collinear")
    H = X.T @ Y
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    scale = float((S * np.diag(D)).sum() / sx) if with_scale else 1.0
    t = mu_g - scale * (R @ mu_p)
    return scale * (R @ pred.T).T + t


def mje(pred_joints: np.ndarray, gt_joints: np.ndarray, root_relative: bool = True) -> float:
    """Mean per-joint Euclidean error in mm over frames and joints."""
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"mje: shapes {pred.shape} vs {gt.shape}")
    if root_relative:
        pred = pred - pred[..., WRIST : WRIST + 1, :]
        gt = gt - gt[..., WRIST : WRIST + 1, :]
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def p_mje(pred_joints: np.ndarray, gt_joints: np.ndarray, with_scale: bool = True) -> float:
    """MJE after per-frame Procrustes alignment."""
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"p_mje: shapes {pred.shape} vs {gt.shape}")
    errs = []
    for f in range(pred.shape[0]):
        aligned = procrustes_align(pred[f], gt[f], with_scale)
        errs.append(np.linalg.norm(aligned - gt[f], axis=-1).mean())
    return float(np.mean(errs))


def accl_error(pred_joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """Mean norm of the discrete-acceleration difference, mm/frame^2."""
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"accl: shapes {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 3:
        raise InputError(f"accl needs T >= 3, got {pred.shape[0]}")
    ap = pred[2:] - 2.0 * pred[1:-1] + pred[:-2]
    ag = gt[2:] - 2.0 * gt[1:-1] + gt[:-2]
    return float(np.linalg.norm(ap - ag, axis=-1).mean())


def _reversal_values(theta: np.ndarray) -> np.ndarray:
    d1 = theta[1:] - theta[:-1]
    return -np.sign(d1[:-1]) * d1[1:]


def kin_metric(theta_seq: np.ndarray, labels) -> float:
    """Mean hinged direction reversal over reaching/releasing windows, degrees."""
    theta = np.asarray(theta_seq, dtype=np.float64)
    lab = labels.labels if hasattr(labels, "labels") else np.asarray(labels, dtype=np.int64)
    if theta.shape[0] < 3:
        return 0.0
    a, b, c = lab[:-2], lab[1:-1], lab[2:]
    reach = (a == MotionState.REACHING) & (b == MotionState.REACHING) & (c == MotionState.REACHING)
    release = (a == MotionState.RELEASING) & (b == MotionState.RELEASING) & (c == MotionState.RELEASING)
    win = reach | release
    if not win.any():
        return 0.0
    phi = _reversal_values(theta)[win]
    return float(np.degrees(np.maximum(phi, 0.0).mean()))


def sta_metric(theta_f_seq: np.ndarray, labels) -> float:
    """Mean absolute finger-angle change over stable-grasp pairs, degrees."""
    theta = np.asarray(theta_f_seq, dtype=np.float64)
    lab = labels.labels if hasattr(labels, "labels") else np.asarray(labels, dtype=np.int64)
    grasp = lab == MotionState.STABLE_GRASPING
    pairs = grasp[:-1] & grasp[1:]
    if not pairs.any():
        return 0.0
    diff = np.abs(theta[1:] - theta[:-1])[pairs]
    return float(np.degrees(diff.mean()))


def f_score(pred_verts: np.ndarray, gt_verts: np.ndarray, threshold_mm: float) -> float:
    """Fraction of per-vertex errors below the threshold, averaged over frames.

    Inputs are expected to be aligned already (see ``p_mve_and_fscores``).
    """
    pred = np.asarray(pred_verts, dtype=np.float64)
    gt = np.asarray(gt_verts, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"f_score: shapes {pred.shape} vs {gt.shape}")
    dist = np.linalg.norm(pred - gt, axis=-1)
    return float((dist < threshold_mm).mean(axis=-1).mean())


def p_mve_and_fscores(pred_verts: np.ndarray, gt_verts: np.ndarray,
                      thresholds=(5.0, 15.0), with_scale: bool = True):
    """Per-frame Procrustes on vertices, then mean error and F@k fractions."""
    pred = np.asarray(pred_verts, dtype=np.float64)
    gt = np.asarray(gt_verts, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"p_mve: shapes {pred.shape} vs {gt.shape}")
    aligned = np.stack([procrustes_align(pred[f], gt[f], with_scale) for f in range(pred.shape[0])])
    mve = float(np.linalg.norm(aligned - gt, axis=-1).mean())
    fracs = tuple(f_score(aligned, gt, thr) for thr in thresholds)
    return mve, fracs


@dataclass
class EvalReport:
    """Aggregate metrics plus the per-sequence breakdown they average."""

    mje: float
    p_mje: float
    p_mve: float
    accl: float
    kin: float
    sta: float
    f5: float
    f15: float
    sequences: list = field(default_factory=list)

    AGGREGATE_KEYS = ("mje", "p_mje", "p_mve", "accl", "kin", "sta", "f5", "f15")

    @classmethod
    def from_rows(cls, rows: list) -> "EvalReport":
        if not rows:
            raise InputError("cannot aggregate an empty evaluation")
        agg = {k: float(np.mean([r[k] for r in rows])) for k in cls.AGGREGATE_KEYS}
        return cls(sequences=list(rows), **agg)

    def to_dict(self) -> dict:
        return {
            "aggregate": {k: getattr(self, k) for k in self.AGGREGATE_KEYS},
            "sequences": self.sequences,
        }

    def table(self) -> str:
        units = {"mje": "mm", "p_mje": "mm", "p_mve": "mm", "accl": "mm/frame^2",
                 "kin": "deg", "sta": "deg", "f5": "fraction", "f15": "fraction"}
        lines = [f"{'metric':<8} {'value':>12}  unit"]
        for k in self.AGGREGATE_KEYS:
            lines.append(f"{k:<8} {getattr(self, k):>12.4f}  {units[k]}")
        return "\n".join(lines)
