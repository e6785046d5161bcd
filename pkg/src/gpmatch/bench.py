"""Synthetic benchmarking: 1-D toy regression, homography pairs, RANSAC.

The toy distribution is a two-branch mixture: with probability 0.8 a
sample follows y = x + noise with x uniform on [0, 0.5], otherwise
y = -x + noise with x uniform on [0.4, 1.0] (noise variance 0.1).  Running
the three regressors over it exposes their behaviour around the branch
discontinuity and under non-uniform support density.

The pair generator warps procedural textures by random homographies with
photometric distortion, yielding image pairs with exact reference warps,
so the full pipeline can be scored end to end with zero external data.
"""

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .decode import sparsify_topk
from .exceptions import EstimationFailure
from .features import Image
from .geometry import Homography, WarpField, apply_homography, clip_to_grid, grid_to_pixels, homography_to_warp, make_grid
from .kernel import KernelSpec
from .metrics import aepe, pck
from .pipeline import match_pair
from .regress import SupportSet, gp_posterior, kernel_smoother, nearest_neighbour
from .rng import substream

__all__ = [
    "ToyConfig",
    "SynthPairConfig",
    "BenchmarkConfig",
    "toy_sample",
    "toy_run",
    "toy_csv",
    "transition_width",
    "value_noise_texture",
    "synth_pair",
    "ransac_homography",
    "run_benchmark",
    "report_csv",
    "report_text",
]


@dataclass(frozen=True)
class ToyConfig:
    n: int = 100
    kernel_length: float = 0.1
    weights: tuple = (0.8, 0.2)
    noise_variance: float = 0.1
    jitter: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")


@dataclass(frozen=True)
class SynthPairConfig:
    rotation_deg: float = 15.0
    scale: tuple = (0.85, 1.2)
    translation: float = 0.15
    perspective: float = 0.15
    brightness: tuple = (-0.1, 0.1)
    contrast: tuple = (0.8, 1.2)
    gamma: tuple = (0.8, 1.25)
    noise_std: float = 0.02
    seed: int = 0


@dataclass(frozen=True)
class BenchmarkConfig:
    n_pairs: int = 20
    size: int = 256
    pck_thresholds: tuple = (1.0, 3.0, 5.0)
    topk: int = 300
    ransac_iterations: int = 200
    ransac_threshold: float = 0.02
    threads: int = 1
    seed: int = 0
    synth: SynthPairConfig = field(default_factory=SynthPairConfig)


def toy_sample(cfg):
    """Draw n (x, y) samples from the two-branch toy mixture."""
    rng = substream(cfg.seed, "toy")
    branch1 = rng.random(cfg.n) < cfg.weights[0]
    u = rng.random(cfg.n)
    x = np.where(branch1, 0.5 * u, 0.4 + 0.6 * u)
    noise = rng.normal(0.0, np.sqrt(cfg.noise_variance), cfg.n)
    y = np.where(branch1, x, -x) + noise
    return x, y


def toy_run(samples, kinds=("gp", "attention", "nn"), n_query=512, cfg=None):
    """Run the requested regressors over the 1-D toy support set.

    Features are the raw x values, targets the raw y values (identity
    embedding of a 1-D coordinate).  Returns a dict with the query grid,
    one prediction curve per regressor, and the GP variance curve.
    """
    cfg = cfg or ToyConfig()
    x, y = samples
    if len(x) == 0:
        raise ValueError("toy run needs at least one support sample")
    support = SupportSet(np.asarray(x)[:, None], np.asarray(y)[:, None])
    xq = np.linspace(0.0, 1.0, n_query)
    query = xq[:, None]
    spec = KernelSpec("squared_exponential", length=cfg.kernel_length)
    out = {"x": xq}
    for kind in kinds:
        if kind == "gp":
            post = gp_posterior(support, query, spec, jitter=cfg.jitter)
            out["gp_mean"] = post.mean[:, 0]
            out["gp_var"] = post.variance
        elif kind == "attention":
            out["attn"] = kernel_smoother(support, query, spec).embedding[:, 0]
        elif kind == "nn":
            out["nn"] = nearest_neighbour(support, query, metric="euclidean").embedding[:, 0]
        else:
            raise ValueError(f"unknown regressor kind {kind!r}")
    return out


def toy_csv(result, samples, path_or_buf):
    """Write the toy curves as CSV with support samples marked by query bin."""
    x, y = samples
    xq = result["x"]
    # mean support y per nearest query bin, blank elsewhere
    bins = np.clip(np.searchsorted(xq, x), 0, len(xq) - 1)
    sup_sum = np.zeros(len(xq))
    sup_cnt = np.zeros(len(xq))
    np.add.at(sup_sum, bins, y)
    np.add.at(sup_cnt, bins, 1.0)

    def fmt(v):
        return f"{v:.9g}"

    close = False
    if isinstance(path_or_buf, (str, bytes)):
        f = open(path_or_buf, "w", newline="")
        close = True
    else:
        f = path_or_buf
    try:
        writer = csv.writer(f)
        writer.writerow(["x", "gp_mean", "gp_var", "attn", "nn", "support"])
        for i, xv in enumerate(xq):
            row = [fmt(xv)]
            for key in ("gp_mean", "gp_var", "attn", "nn"):
                row.append(fmt(result[key][i]) if key in result else "")
            row.append(fmt(sup_sum[i] / sup_cnt[i]) if sup_cnt[i] > 0 else "")
            writer.writerow(row)
    finally:
        if close:
            f.close()


def transition_width(xq, pred, lo=0.3, hi=1.0):
    """Width of the band where a prediction sits between the two branches.

    The branches are y = x and y = -x; a prediction strictly between the
    half-way lines +x/2 and -x/2 is in transition.  Returns the total
    x-extent of such points within [lo, hi].
    """
    xq = np.asarray(xq)
    pred = np.asarray(pred)
    sel = (xq >= lo) & (xq <= hi)
    between = (pred[sel] < 0.5 * xq[sel]) & (pred[sel] > -0.5 * xq[sel])
    if len(xq) < 2:
        return 0.0
    dx = xq[1] - xq[0]
    return float(between.sum() * dx)


def value_noise_texture(size, seed, octaves=4):
    """Multi-frequency value-noise texture in [0, 1], deterministic per seed."""
    rng = substream(seed, "texture")
    total = np.zeros((size, size))
    amp_sum = 0.0
    for k in range(octaves):
        res = 4 * 2**k
        lattice = rng.random((res + 1, res + 1))
        # bilinear upsample of the lattice to the full resolution
        t = np.linspace(0.0, res, size)
        i0 = np.minimum(t.astype(np.int64), res - 1)
        frac = t - i0
        rows = lattice[i0][:, i0] * (1 - frac)[None, :] + lattice[i0][:, i0 + 1] * frac[None, :]
        rows2 = lattice[i0 + 1][:, i0] * (1 - frac)[None, :] + lattice[i0 + 1][:, i0 + 1] * frac[None, :]
        layer = rows * (1 - frac)[:, None] + rows2 * frac[:, None]
        amp = 0.55**k
        total += amp * layer
        amp_sum += amp
    total /= amp_sum
    lo, hi = total.min(), total.max()
    if hi > lo:
        total = (total - lo) / (hi - lo)
    return Image.from_array(total)


def _sample_homography(cfg, rng):
    for _ in range(16):
        theta = np.deg2rad(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
        s = rng.uniform(cfg.scale[0], cfg.scale[1])
        tx, ty = rng.uniform(-cfg.translation, cfg.translation, 2)
        px, py = rng.uniform(-cfg.perspective, cfg.perspective, 2)
        c, si = np.cos(theta), np.sin(theta)
        m = np.array(
            [
                [s * c, -s * si, tx],
                [s * si, s * c, ty],
                [px, py, 1.0],
            ]
        )
        if abs(np.linalg.det(m)) > 1e-6:
            return Homography(m)
    raise EstimationFailure("failed to sample an invertible homography in 16 attempts")


def synth_pair(img, cfg):
    """Warp an image by a random homography with photometric distortion.

    Returns (warped support image, homography, reference warp).  The
    support image satisfies support(H(x)) = query(x); resampling is
    bilinear with edge clamping, and the reference confidence marks query
    pixels whose image lands inside the support frame.
    """
    homo_rng = substream(cfg.seed, "homography")
    noise_rng = substream(cfg.seed, "noise")
    h = _sample_homography(cfg, homo_rng)

    grid = make_grid(img.height, img.width)
    src, _ = apply_homography(h.inverse(), grid.points)
    rows, cols = grid_to_pixels(src, img.height, img.width)
    gray = img.grayscale()
    from .decode import _bilinear

    warped, _ = _bilinear(gray[..., None], rows.reshape(img.height, img.width), cols.reshape(img.height, img.width))
    warped = warped[..., 0]

    gain = noise_rng.uniform(cfg.contrast[0], cfg.contrast[1])
    bias = noise_rng.uniform(cfg.brightness[0], cfg.brightness[1])
    gamma = noise_rng.uniform(cfg.gamma[0], cfg.gamma[1])
    out = np.clip(gain * np.power(warped, gamma) + bias, 0.0, 1.0)
    out = out + noise_rng.normal(0.0, cfg.noise_std, out.shape)
    out = np.clip(out, 0.0, 1.0)  # image values stay in [0, 1]

    reference = homography_to_warp(h, grid)
    return Image.from_array(out), h, reference


def _dlt(q, s):
    n = q.shape[0]
    A = np.zeros((2 * n, 9))
    A[0::2, 0] = -q[:, 0]
    A[0::2, 1] = -q[:, 1]
    A[0::2, 2] = -1.0
    A[0::2, 6] = q[:, 0] * s[:, 0]
    A[0::2, 7] = q[:, 1] * s[:, 0]
    A[0::2, 8] = s[:, 0]
    A[1::2, 3] = -q[:, 0]
    A[1::2, 4] = -q[:, 1]
    A[1::2, 5] = -1.0
    A[1::2, 6] = q[:, 0] * s[:, 1]
    A[1::2, 7] = q[:, 1] * s[:, 1]
    A[1::2, 8] = s[:, 1]
    _, sv, vt = np.linalg.svd(A)
    hvec = vt[-1]
    m = hvec.reshape(3, 3)
    if abs(np.linalg.det(m)) <= 1e-12:
        return None
    return Homography(m)


def _symmetric_errors(h, q, s):
    fwd, _ = apply_homography(h, q)
    bwd, _ = apply_homography(h.inverse(), s)
    return np.maximum(np.linalg.norm(fwd - s, axis=1), np.linalg.norm(bwd - q, axis=1))


def ransac_homography(matches, iterations=200, inlier_threshold=0.02, seed=0):
    """Robust 4-point DLT homography fit, deterministic per seed.

    Hypotheses are scored by inlier count under the symmetric transfer
    error; the best hypothesis is refit by DLT on its inliers.  Raises
    EstimationFailure with fewer than 4 matches or when no hypothesis
    reaches 4 inliers.
    """
    m = np.asarray(matches, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] < 4:
        raise ValueError("matches must be rows of (qx, qy, sx, sy, ...)")
    if m.shape[0] < 4:
        raise EstimationFailure(f"need at least 4 matches, got {m.shape[0]}")
    q, s = m[:, :2], m[:, 2:4]
    rng = substream(seed, "ransac")
    n = m.shape[0]

    best_count = 0
    best_inliers = None
    for _ in range(iterations):
        idx = rng.choice(n, size=4, replace=False)
        try:
            h = _dlt(q[idx], s[idx])
        except np.linalg.LinAlgError:
            continue
        if h is None:
            continue
        err = _symmetric_errors(h, q, s)
        inliers = err < inlier_threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
    if best_inliers is None or best_count < 4:
        raise EstimationFailure("no homography hypothesis reached 4 inliers")

    refit = _dlt(q[best_inliers], s[best_inliers])
    if refit is None:
        raise EstimationFailure("degenerate refit on inlier set")
    final_inliers = _symmetric_errors(refit, q, s) < inlier_threshold
    return refit, final_inliers


def _corner_error_px(h_true, h_est, size):
    corners = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
    a, _ = apply_homography(h_true, corners)
    b, _ = apply_homography(h_est, corners)
    return float(np.linalg.norm((a - b) * size / 2.0, axis=1).max())


def _evaluate_pair(index, texture, bench_cfg, pipe_cfg, matcher=None):
    synth = replace(bench_cfg.synth, seed=bench_cfg.seed * 1_000_003 + index)
    support_img, h_true, reference = synth_pair(texture, synth)
    if matcher is None:
        warp = match_pair(texture, support_img, pipe_cfg).warp
    else:
        warp = matcher(texture, support_img, h_true, reference)
    warp = clip_to_grid(warp)

    ref = homography_to_warp(h_true, make_grid(warp.height, warp.width))
    mask = ref.confidence > 0.5
    support_shape = (bench_cfg.size, bench_cfg.size)
    row = {"pair": index}
    for tau in bench_cfg.pck_thresholds:
        row[f"pck@{tau:g}px"] = pck(warp, ref, mask, tau, support_shape)
    row["aepe"] = aepe(warp, ref, mask, support_shape)

    try:
        matches = sparsify_topk(warp, bench_cfg.topk)
        h_est, inliers = ransac_homography(
            matches,
            iterations=bench_cfg.ransac_iterations,
            inlier_threshold=bench_cfg.ransac_threshold,
            seed=bench_cfg.seed * 7_000_003 + index,
        )
        row["h_corner_err_px"] = _corner_error_px(h_true, h_est, bench_cfg.size)
        row["inlier_frac"] = float(inliers.mean())
    except EstimationFailure as exc:
        row["h_corner_err_px"] = float("nan")
        row["inlier_frac"] = 0.0
        row["error"] = str(exc)
    return row


def run_benchmark(images, bench_cfg, pipe_cfg, matcher=None):
    """Score the pipeline over seeded synthetic homography pairs.

    `images` may be a list of Image objects to cycle through; when None,
    procedural textures are generated per pair.  A `matcher` callable
    (query, support, homography, reference) -> WarpField may replace the
    real pipeline, e.g. to measure oracle or identity baselines.  Per-pair
    failures are recorded in the report without aborting the run.
    """
    rows = []

    def job(i):
        if images:
            texture = images[i % len(images)]
        else:
            texture = value_noise_texture(bench_cfg.size, bench_cfg.seed * 11_000_003 + i)
        try:
            return _evaluate_pair(i, texture, bench_cfg, pipe_cfg, matcher)
        except Exception as exc:  # pragma: no cover - per-pair robustness
            return {"pair": i, "error": f"{type(exc).__name__}: {exc}"}

    if bench_cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=bench_cfg.threads) as pool:
            rows = list(pool.map(job, range(bench_cfg.n_pairs)))
    else:
        rows = [job(i) for i in range(bench_cfg.n_pairs)]

    metric_keys = [k for k in rows[0] if k not in ("pair", "error")] if rows else []
    aggregates = {}
    for key in metric_keys:
        vals = np.array([r[key] for r in rows if key in r and np.isfinite(r.get(key, np.nan))])
        if vals.size:
            aggregates[f"median_{key}"] = float(np.median(vals))
            aggregates[f"mean_{key}"] = float(vals.mean())
    aggregates["n_pairs"] = len(rows)
    aggregates["n_failures"] = sum(1 for r in rows if "error" in r)
    return {"pairs": rows, "aggregates": aggregates}


def report_csv(report, path_or_buf):
    rows = report["pairs"]
    keys = ["pair"] + sorted({k for r in rows for k in r if k != "pair"})
    close = False
    if isinstance(path_or_buf, (str, bytes)):
        f = open(path_or_buf, "w", newline="")
        close = True
    else:
        f = path_or_buf
    try:
        writer = csv.writer(f)
        writer.writerow(keys)
        for r in rows:
            writer.writerow([("" if k not in r else (f"{r[k]:.9g}" if isinstance(r[k], float) else r[k])) for k in keys])
    finally:
        if close:
            f.close()


def report_text(report):
    buf = io.StringIO()
    for key in sorted(report["aggregates"]):
        val = report["aggregates"][key]
        buf.write(f"{key} = {val:.9g}\n" if isinstance(val, float) else f"{key} = {val}\n")
    return buf.getvalue()
