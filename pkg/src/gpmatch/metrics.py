"""Evaluation metrics for warps, match lists and relative poses.

Conventions: flow errors are measured in support-image pixels (normalized
units scaled by half the support dimensions).  PCK counts errors strictly
below the threshold.  AUC integrates precision-at-threshold (non-strict)
by the trapezoidal rule over the observed error knots, so that an all-zero
error set scores exactly 1.  mAP averages precision over the 5/10/20
degree thresholds.  The warp and confidence losses mirror the training
objectives as pure evaluation quantities, with mean reduction so values
are resolution independent.
"""

import numpy as np

__all__ = [
    "pixel_errors",
    "pck",
    "aepe",
    "precision_curve",
    "auc",
    "map_at",
    "rotation_error",
    "translation_error",
    "pose_error",
    "warp_loss",
    "conf_loss",
    "total_loss",
]


def _as_mask(mask, shape):
    m = np.asarray(mask)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} != field shape {shape}")
    return m > 0.5 if m.dtype != bool else m


def pixel_errors(pred, ref, support_shape=None):
    """Per-pixel end-point error in support-image pixels.

    `support_shape` is the (height, width) of the support image in pixels;
    it defaults to the warp grid shape (warps stored at pixel resolution).
    """
    if (pred.height, pred.width) != (ref.height, ref.width):
        raise ValueError("warp fields have different shapes")
    h, w = support_shape if support_shape is not None else (ref.height, ref.width)
    d = pred.flow - ref.flow
    return np.hypot(d[..., 0] * w / 2.0, d[..., 1] * h / 2.0)


def pck(pred, ref, mask, tau, support_shape=None):
    """Fraction of masked correspondences with error strictly below tau pixels."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    err = pixel_errors(pred, ref, support_shape)
    m = _as_mask(mask, err.shape)
    if not m.any():
        raise ValueError("empty mask: PCK is undefined")
    return float((err[m] < tau).mean())


def aepe(pred, ref, mask, support_shape=None):
    """Mean end-point error in support-image pixels over the masked region."""
    err = pixel_errors(pred, ref, support_shape)
    m = _as_mask(mask, err.shape)
    if not m.any():
        raise ValueError("empty mask: AEPE is undefined")
    return float(err[m].mean())


def precision_curve(errors, thresholds):
    """Precision-at-threshold (non-strict) for ascending thresholds."""
    e = np.asarray(errors, dtype=np.float64).ravel()
    t = np.asarray(thresholds, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("empty error set")
    if t.size > 1 and not (np.diff(t) > 0).all():
        raise ValueError("thresholds must be strictly increasing")
    return (e[None, :] <= t[:, None]).mean(axis=1)


def auc(errors, alpha):
    """Area under the precision curve up to alpha, normalized by alpha.

    Precision is evaluated at 0, at each distinct error value up to alpha
    and at alpha itself, and integrated by the composite trapezoidal rule.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("empty error set")
    knots = np.unique(np.concatenate([[0.0], e[e <= alpha], [alpha]]))
    prec = precision_curve(e, knots)
    return float(np.trapezoid(prec, knots) / alpha)


def map_at(errors, alpha):
    """Mean precision over the degree thresholds {5, 10, 20} up to alpha."""
    if alpha not in (5, 10, 20):
        raise ValueError(f"alpha must be one of 5, 10, 20, got {alpha}")
    ts = [t for t in (5.0, 10.0, 20.0) if t <= alpha]
    return float(precision_curve(errors, ts).mean())


def _check_rotation(R, name):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or np.abs(R.T @ R - np.eye(3)).max() > 1e-6:
        raise ValueError(f"{name} is not orthonormal to 1e-6")
    return R


def rotation_error(R, R_hat):
    """Angular distance |arccos((tr(R^T R_hat) - 1) / 2)| in radians."""
    R = _check_rotation(R, "R")
    R_hat = _check_rotation(R_hat, "R_hat")
    arg = (np.trace(R.T @ R_hat) - 1.0) / 2.0
    return float(abs(np.arccos(np.clip(arg, -1.0, 1.0))))


def translation_error(t, t_hat):
    """Angle between translation directions in radians, sign-invariant.

    Two-view translations are recoverable only up to sign, so the absolute
    cosine similarity is used: t and -t compare as identical.
    """
    t = np.asarray(t, dtype=np.float64).ravel()
    t_hat = np.asarray(t_hat, dtype=np.float64).ravel()
    nt, nh = np.linalg.norm(t), np.linalg.norm(t_hat)
    if nt == 0 or nh == 0:
        raise ValueError("translation vectors must be nonzero")
    cos = abs(np.dot(t, t_hat)) / (nt * nh)
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def pose_error(R, t, R_hat, t_hat):
    """Max of rotation and translation angular errors, in radians."""
    return max(rotation_error(R, R_hat), translation_error(t, t_hat))


def warp_loss(pred_flow, ref_flow, mask):
    """Mean over all pixels of masked L2 flow error (normalized units)."""
    p = np.asarray(pred_flow, dtype=np.float64)
    r = np.asarray(ref_flow, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if p.shape != r.shape:
        raise ValueError(f"flow shapes differ: {p.shape} vs {r.shape}")
    err = np.linalg.norm(p - r, axis=-1)
    if m.shape != err.shape:
        raise ValueError(f"mask shape {m.shape} != {err.shape}")
    return float((m * err).sum() / err.size)


def conf_loss(p_hat, p):
    """Mean binary cross-entropy of predicted confidence against the mask."""
    q = np.clip(np.asarray(p_hat, dtype=np.float64), 1e-7, 1.0 - 1e-7)
    y = np.asarray(p, dtype=np.float64)
    if q.shape != y.shape:
        raise ValueError(f"field shapes differ: {q.shape} vs {y.shape}")
    return float(-(y * np.log(q) + (1.0 - y) * np.log(1.0 - q)).mean())


def total_loss(scales, conf_weight=0.01, coarse_gate=4.0):
    """Sum of per-scale warp and weighted confidence losses.

    `scales` is a coarse-to-fine sequence of (pred_flow, ref_flow, p_hat,
    mask) tuples.  For every scale after the first, the mask is zeroed
    wherever the previous (coarser) scale's warp error exceeds
    `coarse_gate` coarse cells, so fine losses only score regions the
    coarse match already localized.
    """
    total = 0.0
    prev = None
    for pred_flow, ref_flow, p_hat, mask in scales:
        pred_flow = np.asarray(pred_flow, dtype=np.float64)
        ref_flow = np.asarray(ref_flow, dtype=np.float64)
        mask = np.asarray(mask, dtype=np.float64)
        if prev is not None:
            c_pred, c_ref = prev
            ch, cw = c_pred.shape[:2]
            d = c_pred - c_ref
            err_cells = np.hypot(d[..., 0] * cw / 2.0, d[..., 1] * ch / 2.0)
            gate = (err_cells <= coarse_gate).astype(np.float64)
            gate_up = _resize_nearest(gate, mask.shape)
            mask = mask * gate_up
        total += warp_loss(pred_flow, ref_flow, mask)
        total += conf_weight * conf_loss(p_hat, mask)
        prev = (pred_flow, ref_flow)
    return float(total)


def _resize_nearest(field, shape):
    h, w = field.shape
    th, tw = shape
    rows = np.minimum((np.arange(th) * h) // th, h - 1)
    cols = np.minimum((np.arange(tw) * w) // tw, w - 1)
    return field[rows[:, None], cols[None, :]]
