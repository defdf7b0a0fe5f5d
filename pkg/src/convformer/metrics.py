"""Evaluation protocols for 3-D pose error.

All functions are pure and operate on millimetre, root-relative (J, 3)
arrays (or (T, J, 3) sequences for the velocity metric).
"""

from __future__ import annotations

import csv

import numpy as np

PCK_THRESHOLD_MM = 150.0
# AUC convention: evenly spaced thresholds 0..150 mm in 5 mm steps.
AUC_THRESHOLDS_MM = np.arange(0.0, 150.0 + 1e-9, 5.0)


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected matching (J, 3) poses, got {p.shape} and {q.shape}")
    return p, q


def mpjpe(p, q):
    """Mean per-joint position error: mean Euclidean distance over joints."""
    p, q = _check_pair(p, q)
    return float(np.linalg.norm(p - q, axis=1).mean())


def rigid_align(p, q, allow_scale=False):
    """Least-squares rigid transform (R, t[, s]) mapping ``q`` onto ``p``.

    Returns the transformed copy of ``q``.  The rotation comes from the SVD of
    the centred cross-covariance with the usual determinant sign correction,
    so det(R) = +1 always.  Scaling is off by default (pure SE(3));
    ``allow_scale=True`` switches to similarity alignment.
    """
    p, q = _check_pair(p, q)
    mu_p = p.mean(axis=0)
    mu_q = q.mean(axis=0)
    pc = p - mu_p
    qc = q - mu_q
    if np.abs(qc).max() < 1e-12:
        # All target points coincide: rotation is undefined, use identity.
        return qc + mu_p
    h = qc.T @ pc
    u, s, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    d = np.diag([1.0, 1.0, sign])
    r = vt.T @ d @ u.T
    scale = 1.0
    if allow_scale:
        denom = (qc * qc).sum()
        scale = (s * np.diag(d)).sum() / denom
    return scale * qc @ r.T + mu_p


def p_mpjpe(p, q, allow_scale=False):
    """MPJPE after optimally rigidly aligning ``q`` to ``p`` (Protocol II)."""
    return mpjpe(p, rigid_align(p, q, allow_scale=allow_scale))


def mpjve(p_seq, q_seq, fps=1.0):
    """Mean per-joint velocity error between first-difference sequences.

    With the default ``fps=1`` the result is mm/frame; pass the capture rate
    to get mm/s.
    """
    p_seq = np.asarray(p_seq, dtype=np.float64)
    q_seq = np.asarray(q_seq, dtype=np.float64)
    if p_seq.shape != q_seq.shape or p_seq.ndim != 3:
        raise ValueError(f"expected matching (T, J, 3) sequences, got {p_seq.shape} and {q_seq.shape}")
    if p_seq.shape[0] < 2:
        raise ValueError("velocity error needs at least 2 frames")
    vp = np.diff(p_seq, axis=0) * fps
    vq = np.diff(q_seq, axis=0) * fps
    return float(np.linalg.norm(vp - vq, axis=2).mean())


def pck(p, q, threshold=PCK_THRESHOLD_MM):
    """Percentage of joints with error within ``threshold`` millimetres."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    p, q = _check_pair(p, q)
    err = np.linalg.norm(p - q, axis=1)
    return float(100.0 * (err <= threshold).mean())


def auc(p, q, thresholds=None):
    """Mean PCK over a threshold sweep (0..150 mm in 5 mm steps by default)."""
    p, q = _check_pair(p, q)
    if thresholds is None:
        thresholds = AUC_THRESHOLDS_MM
    err = np.linalg.norm(p - q, axis=1)
    return float(np.mean([100.0 * (err <= t).mean() for t in thresholds]))


def write_metric_csv(path, rows):
    """Write (action, metric, value) rows; values at full float precision."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["action", "metric", "value"])
        for action, metric, value in rows:
            w.writerow([action, metric, repr(float(value))])
