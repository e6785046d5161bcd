"""Decoding predicted coordinate embeddings back to natural coordinates.

Channel decoding correlates each predicted embedding against the embedded
reference grid and reads off peaks.  The correlation is energy-corrected,

    score(c) = <pred, B(c)> - ||B(c)||^2 / 2,

which is, up to a constant, -||B(c) - pred||^2 / 2: the best cell is the
grid point whose embedding is nearest to the prediction.  This keeps the
peak at the true coordinate for any basis dimension (a raw inner product
drifts with the sampled basis, badly so for the sparse bump bases) and
makes the identity embedding decode to the nearest grid point with no
special casing.  Scores are reported on a kernel-like scale,
1 - factor/2 * ||B(c) - pred||^2, which is ~1 at a perfect match and ~0
for an unrelated cell.

The remaining operations enforce local coherence (a confidence-weighted
bilateral average of the flow, bilateral in flow space so that motion
discontinuities survive), estimate confidence, refine matches to sub-pixel
by quadratic fits on feature correlations, filter by forward-backward
consistency, and sparsify to the most confident matches.
"""

from dataclasses import dataclass

import numpy as np

from .embedding import IdentityBasis
from .geometry import WarpField, make_grid

__all__ = [
    "ModeSet",
    "channel_decode",
    "coherence_filter",
    "confidence_estimate",
    "refine_subpixel",
    "mutual_consistency_filter",
    "sparsify_topk",
    "save_matches",
    "load_matches",
]


@dataclass(frozen=True)
class ModeSet:
    """Up to M correlation modes per query point, scores descending.

    `coords` is (N, M, 2), `scores` (N, M) and `counts` (N,); entries past
    a point's count are NaN.  Modes are grid cells separated by at least
    the non-max-suppression radius.
    """

    coords: np.ndarray
    scores: np.ndarray
    counts: np.ndarray
    nms_radius: float


def _score_scale(basis, grid):
    if isinstance(basis, IdentityBasis):
        h = max(2.0 / grid.width, 2.0 / grid.height)
        return 1.0 / (2.0 * h * h)
    return basis.kernel_factor_ / 2.0


def _soft_argmax(profile, grid, flat_idx, window, temperature):
    """Soft-argmax around a peak over a symmetric window of grid cells."""
    h, w = grid.height, grid.width
    v = profile
    lo, hi = v.min(), v.max()
    v = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    r, c = divmod(int(flat_idx), w)
    er = min(window, r, h - 1 - r)
    ec = min(window, c, w - 1 - c)
    win = v.reshape(h, w)[r - er : r + er + 1, c - ec : c + ec + 1]
    weights = np.exp((win - 1.0) / temperature)
    weights /= weights.sum()
    cells = grid.coords[r - er : r + er + 1, c - ec : c + ec + 1]
    return (weights[..., None] * cells).sum(axis=(0, 1))


def _nms_modes(profile, grid_pts, max_modes, radius):
    order = np.argsort(-profile, kind="stable")
    kept = []
    for idx in order:
        p = grid_pts[idx]
        ok = True
        for j in kept:
            d = p - grid_pts[j]
            if d[0] * d[0] + d[1] * d[1] < radius * radius:
                ok = False
                break
        if ok:
            kept.append(int(idx))
            if len(kept) == max_modes:
                break
    return kept


def channel_decode(pred, basis, grid, nms_radius=None, max_modes=4, window=2, temperature=0.05):
    """Decode predicted embeddings into a warp field and per-point mode sets.

    Parameters
    ----------
    pred : RegressorOutput or ndarray
        Predicted embeddings, (N, D) or (H, W, D); a RegressorOutput may
        carry a query grid shape.
    basis : fitted embedding basis
    grid : NormalizedGrid
        Embedded reference grid to correlate against.
    nms_radius : float or None
        Mode separation in normalized units; default three grid cells.
    max_modes : int
        Modes retained per query point.
    window, temperature : soft-argmax half-width (in grid cells) and
        temperature applied to the min-max normalized correlation profile.

    Returns (WarpField, ModeSet).  The warp flow is the soft-argmax refined
    top mode; all-zero predictions decode to the query's own coordinate
    with confidence 0.
    """
    emb = getattr(pred, "embedding", pred)
    query_shape = getattr(pred, "grid_shape", None)
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim == 3:
        query_shape = emb.shape[:2]
        emb = emb.reshape(-1, emb.shape[-1])
    if emb.ndim != 2:
        raise ValueError(f"predictions must be (N, D) or (H, W, D), got shape {emb.shape}")
    n = emb.shape[0]
    if query_shape is None:
        query_shape = (1, n)
    qh, qw = query_shape
    if qh * qw != n:
        raise ValueError(f"grid shape {query_shape} inconsistent with {n} predictions")
    if nms_radius is None:
        nms_radius = 3.0 * max(2.0 / grid.width, 2.0 / grid.height)

    grid_pts = grid.points
    B = basis.transform(grid_pts)
    if emb.shape[1] != B.shape[1]:
        raise ValueError(f"prediction dimension {emb.shape[1]} != basis dimension {B.shape[1]}")
    energy = 0.5 * np.einsum("ij,ij->i", B, B)
    gamma = _score_scale(basis, grid)

    corr = emb @ B.T - energy[None, :]
    pred_energy = 0.5 * np.einsum("ij,ij->i", emb, emb)
    if isinstance(basis, IdentityBasis):
        # a zero 2-vector is the origin coordinate, not a failed prediction
        degenerate = np.zeros(n, dtype=bool)
    else:
        degenerate = np.einsum("ij,ij->i", emb, emb) == 0.0

    flow = np.empty((n, 2))
    conf = np.zeros(n)
    coords = np.full((n, max_modes, 2), np.nan)
    scores = np.full((n, max_modes), np.nan)
    counts = np.zeros(n, dtype=np.int64)
    query_grid = make_grid(qh, qw)
    identity = query_grid.points

    for i in range(n):
        if degenerate[i]:
            flow[i] = identity[i]
            continue
        profile = corr[i]
        kept = _nms_modes(profile, grid_pts, max_modes, nms_radius)
        kappa = np.clip(1.0 + 2.0 * gamma * (profile[kept] - pred_energy[i]), 0.0, 1.0)
        counts[i] = len(kept)
        coords[i, : len(kept)] = grid_pts[kept]
        scores[i, : len(kept)] = kappa
        flow[i] = _soft_argmax(profile, grid, kept[0], window, temperature)
        conf[i] = kappa[0]

    warp = WarpField(qh, qw, flow.reshape(qh, qw, 2), conf.reshape(qh, qw))
    return warp, ModeSet(coords, scores, counts, float(nms_radius))


def coherence_filter(w, radius=2, spatial_scale=None, flow_scale=0.1):
    """Pull each flow vector toward its neighbourhood, respecting edges.

    Weights combine neighbour confidence, spatial proximity and flow
    similarity, so low-confidence outliers are absorbed while genuine
    motion discontinuities (large flow differences) are preserved.
    Confidence is unchanged.
    """
    cell_x, cell_y = 2.0 / w.width, 2.0 / w.height
    if spatial_scale is None:
        spatial_scale = radius * max(cell_x, cell_y)
    k = 2 * radius + 1
    flow_p = np.pad(w.flow, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    conf_p = np.pad(w.confidence, radius, mode="constant")

    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    spatial_w = np.exp(-((dx * cell_x) ** 2 + (dy * cell_y) ** 2) / spatial_scale**2)

    num = np.zeros_like(w.flow)
    den = np.zeros((w.height, w.width))
    for a in range(k):
        for b in range(k):
            nf = flow_p[a : a + w.height, b : b + w.width]
            nc = conf_p[a : a + w.height, b : b + w.width]
            d2 = ((nf - w.flow) ** 2).sum(-1)
            wt = nc * spatial_w[a, b] * np.exp(-d2 / flow_scale**2)
            num += wt[..., None] * nf
            den += wt
    out = np.where(den[..., None] > 0, num / np.where(den[..., None] > 0, den[..., None], 1.0), w.flow)
    return WarpField(w.height, w.width, out, w.confidence)


def confidence_estimate(post_variance, decode_scores, calib=(6.0, 3.0)):
    """Blend decode scores and posterior variance into a [0, 1] confidence.

    Both fields are max-scaled per image and combined by a logistic,
    sigmoid(a * score - b * variance), with calibration (a, b).
    """
    v = np.asarray(post_variance, dtype=np.float64)
    s = np.asarray(decode_scores, dtype=np.float64)
    if v.shape != s.shape:
        raise ValueError(f"field shapes differ: {v.shape} vs {s.shape}")
    a, b = calib
    vmax = v.max() if v.size else 0.0
    smax = s.max() if s.size else 0.0
    vn = v / vmax if vmax > 0 else np.zeros_like(v)
    sn = s / smax if smax > 0 else np.zeros_like(s)
    return np.clip(1.0 / (1.0 + np.exp(-(a * sn - b * vn))), 0.0, 1.0)


def _bilinear(values, rows, cols):
    """Bilinear sampling of an (H, W, C) array at fractional (row, col).

    Returns (sampled, clamped) where `clamped` marks samples outside the
    grid (edge values are used there).
    """
    h, w = values.shape[:2]
    eps = 1e-9
    clamped = (rows < -eps) | (rows > h - 1 + eps) | (cols < -eps) | (cols > w - 1 + eps)
    r = np.clip(rows, 0, h - 1)
    c = np.clip(cols, 0, w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[..., None]
    fc = (c - c0)[..., None]
    v00 = values[r0, c0]
    v01 = values[r0, c1]
    v10 = values[r1, c0]
    v11 = values[r1, c1]
    top = v00 * (1 - fc) + v01 * fc
    bot = v10 * (1 - fc) + v11 * fc
    return top * (1 - fr) + bot * fr, clamped


_QUAD_DESIGN = None


def _quad_pinv():
    global _QUAD_DESIGN
    if _QUAD_DESIGN is None:
        xs, ys = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0])
        x, y = xs.ravel(), ys.ravel()
        X = np.stack([np.ones(9), x, y, x * x, x * y, y * y], axis=1)
        _QUAD_DESIGN = np.linalg.pinv(X)
    return _QUAD_DESIGN


def refine_subpixel(w, query_features, support_features, window=2):
    """Refine matches by correlating features on an offset lattice.

    For each query cell the support features are sampled bilinearly (and
    renormalized, so correlations are cosines; interpolated box-sum
    descriptors only regain sub-cell curvature after renormalization) on a
    (2 window + 1)^2 lattice of cell offsets around the current match.
    The best offset is recentred twice on half-then-quarter-step 3 x 3
    neighbourhoods, and a 2-D quadratic fitted at the final spacing
    supplies the sub-cell peak, used when it falls within one step.  Flat
    (textureless) correlations leave the flow untouched and damp the
    confidence, as do matches that sample outside the support grid; the
    total flow change is bounded by `window` support cells per axis.
    """
    if query_features.stride != support_features.stride:
        raise ValueError(
            f"stride mismatch: query {query_features.stride}, support {support_features.stride}"
        )
    qh, qw = query_features.height_cells, query_features.width_cells
    if (w.height, w.width) != (qh, qw):
        raise ValueError(f"warp {w.height}x{w.width} does not match query cells {qh}x{qw}")
    sh, sw = support_features.height_cells, support_features.width_cells
    fq = query_features.matrix().reshape(qh, qw, -1)
    fs = support_features.values.astype(np.float64)

    # current matches in support cell-index coordinates
    u = (w.flow[..., 0] + 1.0) * sw / 2.0 - 0.5
    v = (w.flow[..., 1] + 1.0) * sh / 2.0 - 0.5
    start_outside = (u < 0) | (u > sw - 1) | (v < 0) | (v > sh - 1)

    def corr_at(dy, dx, mask_clamped=False):
        sampled, clamped = _bilinear(fs, v + dy, u + dx)
        norm = np.linalg.norm(sampled, axis=-1, keepdims=True)
        sampled = sampled / np.where(norm > 0, norm, 1.0)
        c = np.einsum("ijc,ijc->ij", fq, sampled)
        if mask_clamped:
            # an edge-clamped sample duplicates a border cell; it must not
            # outrank genuine offsets in the search
            c = np.where(clamped, -2.0, c)
        return c

    lattice = [(float(dy), float(dx)) for dy in range(-window, window + 1) for dx in range(-window, window + 1)]
    corr = np.stack([corr_at(dy, dx, mask_clamped=True) for dy, dx in lattice], axis=-1)
    in_grid = corr > -2.0
    spread = np.where(in_grid, corr, np.nan)
    with np.errstate(invalid="ignore"):
        spread = np.nanmax(spread, axis=-1) - np.nanmin(spread, axis=-1)
    spread = np.nan_to_num(spread)
    qnorm = np.linalg.norm(fq, axis=-1)
    active = (spread > 1e-9) & (qnorm > 0) & in_grid.any(-1)

    best = corr.argmax(-1)
    off_y = np.array([o[0] for o in lattice])[best]
    off_x = np.array([o[1] for o in lattice])[best]

    # recentre on progressively finer 3x3 neighbourhoods of the peak
    for step in (0.5, 0.25):
        stencil = [(a * step, b * step) for a in (-1, 0, 1) for b in (-1, 0, 1)]
        c9 = np.stack([corr_at(off_y + dy, off_x + dx) for dy, dx in stencil], axis=-1)
        b9 = c9.argmax(-1)
        off_y = off_y + np.array([o[0] for o in stencil])[b9]
        off_x = off_x + np.array([o[1] for o in stencil])[b9]

    step = 0.25
    sten = np.stack(
        [corr_at(off_y + a * step, off_x + b * step) for a in (-1, 0, 1) for b in (-1, 0, 1)], axis=-1
    )
    coef = sten @ _quad_pinv().T  # (qh, qw, 6): 1, x, y, x^2, xy, y^2
    b1, c1, d1, e1, f1 = coef[..., 1], coef[..., 2], coef[..., 3], coef[..., 4], coef[..., 5]
    det = 4.0 * d1 * f1 - e1 * e1
    ok = (d1 < 0) & (det > 0)
    safe_det = np.where(ok, det, 1.0)
    px = np.where(ok, (-2.0 * f1 * b1 + e1 * c1) / safe_det, 0.0)
    py = np.where(ok, (-2.0 * d1 * c1 + e1 * b1) / safe_det, 0.0)
    inside = ok & (np.abs(px) <= 1.0) & (np.abs(py) <= 1.0)

    off_x = off_x + np.where(inside, px * step, 0.0)
    off_y = off_y + np.where(inside, py * step, 0.0)
    off_x = np.clip(np.where(active, off_x, 0.0), -window, window)
    off_y = np.clip(np.where(active, off_y, 0.0), -window, window)

    cell_x, cell_y = 2.0 / sw, 2.0 / sh
    new_flow = w.flow.copy()
    new_flow[..., 0] += off_x * cell_x
    new_flow[..., 1] += off_y * cell_y
    damp = np.where(start_outside | ~active, 0.5, 1.0)
    return WarpField(w.height, w.width, new_flow, w.confidence * damp)


def mutual_consistency_filter(w_qs, w_sq, threshold):
    """Mask of matches surviving the forward-backward cycle check.

    A query pixel survives when following its match into the support warp
    (bilinear lookup) returns within `threshold` normalized units of the
    starting coordinate.
    """
    grid = w_qs.grid()
    u = (w_qs.flow[..., 0] + 1.0) * w_sq.width / 2.0 - 0.5
    v = (w_qs.flow[..., 1] + 1.0) * w_sq.height / 2.0 - 0.5
    back, clamped = _bilinear(w_sq.flow, v, u)
    cycle = np.linalg.norm(back - grid.coords, axis=-1)
    # matches landing outside the support warp grid cannot be verified
    return (cycle < threshold) & ~clamped


def sparsify_topk(w, k):
    """The k most confident matches as rows (qx, qy, sx, sy, conf).

    Ties are broken by row-major query index; if the grid holds fewer than
    k pixels, all matches are returned (sorted by confidence descending).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    conf = w.confidence.ravel()
    order = np.argsort(-conf, kind="stable")[: min(k, conf.size)]
    q = w.grid().points[order]
    s = w.flow.reshape(-1, 2)[order]
    return np.concatenate([q, s, conf[order, None]], axis=1)


def save_matches(matches, path):
    """Write a sparse match list as text, one match per line."""
    with open(path, "w") as f:
        for qx, qy, sx, sy, c in np.asarray(matches, dtype=np.float64):
            f.write(f"{qx:.9g} {qy:.9g} {sx:.9g} {sy:.9g} {c:.9g}\n")


def load_matches(path):
    with open(path) as f:
        rows = [[float(t) for t in line.split()] for line in f if line.strip()]
    out = np.asarray(rows, dtype=np.float64)
    if out.size and out.shape[1] != 5:
        raise ValueError(f"match lines must hold 5 numbers, found {out.shape[1]}")
    return out.reshape(-1, 5)
