"""End-to-end dense matching pipeline.

The pipeline regresses embedded support coordinates from query features at
each feature scale (coarse to fine), channel-decodes each scale, fuses
scales (the coarse warp initializes, the finer warp overrides wherever it
is at least as confident), enforces local coherence, and finally runs
sub-pixel refinement passes against feature maps at the refinement
strides.
"""

from dataclasses import dataclass

import numpy as np

from . import decode as dec
from .embedding import sample_basis
from .exceptions import ConfigError
from .features import extract_dense_descriptors
from .geometry import WarpField, make_grid
from .kernel import KernelSpec
from .regress import SupportSet, gp_posterior, kernel_smoother, nearest_neighbour

__all__ = ["PipelineConfig", "MatchResult", "match_pair", "match_feature_maps"]

REGRESSOR_KINDS = ("gp", "attention", "nn")
EMBEDDING_KINDS = ("fourier", "se", "cossq", "identity")


@dataclass(frozen=True)
class PipelineConfig:
    """Every runtime knob of the matching pipeline (ablation surface)."""

    regressor: str = "gp"
    embedding: str = "fourier"
    dim: int = 256
    inverse_length: float = 5.0
    tau: float = 0.2
    epsilon: float = 1e-6
    jitter: float = 1e-4
    strides: tuple = (32, 16)
    refine_strides: tuple = (16, 8)
    refine_window: int = 2
    decode_height: int = 64
    decode_width: int = 64
    nms_radius_cells: float = 3.0
    max_modes: int = 4
    softargmax_window: int = 2
    temperature: float = 0.05
    coherence_radius: int = 2
    coherence_flow_scale: float = 0.1
    conf_calib: tuple = (6.0, 3.0)
    seed: int = 0

    def __post_init__(self):
        if self.regressor not in REGRESSOR_KINDS:
            raise ConfigError(f"regressor must be one of {REGRESSOR_KINDS}, got {self.regressor!r}")
        if self.embedding not in EMBEDDING_KINDS:
            raise ConfigError(f"embedding must be one of {EMBEDDING_KINDS}, got {self.embedding!r}")
        if self.dim < 1 or self.inverse_length <= 0 or self.jitter < 0:
            raise ConfigError("dim must be >= 1, inverse_length > 0, jitter >= 0")
        if not self.strides or any(s < 1 for s in self.strides):
            raise ConfigError("strides must be a non-empty list of positive integers")

    def kernel_spec(self):
        return KernelSpec("exp_cos_sim", self.tau, self.epsilon)

    def basis(self):
        return sample_basis(self.embedding, self.dim, self.inverse_length, self.seed)


@dataclass(frozen=True)
class ScaleResult:
    stride: int
    warp: WarpField
    scores: np.ndarray
    variance: np.ndarray | None


@dataclass(frozen=True)
class MatchResult:
    warp: WarpField
    scales: tuple
    basis: object


def _regress(cfg, support, query_features, grid_shape):
    spec = cfg.kernel_spec()
    if cfg.regressor == "gp":
        post = gp_posterior(support, query_features, spec, jitter=cfg.jitter, grid_shape=grid_shape)
        return post.mean, post.variance
    if cfg.regressor == "attention":
        out = kernel_smoother(support, query_features, spec)
        return out.embedding, None
    out = nearest_neighbour(support, query_features, metric="cosine")
    return out.embedding, None


def _decode_scale(cfg, basis, emb, variance, grid_shape):
    decode_grid = make_grid(cfg.decode_height, cfg.decode_width)
    warp, _ = dec.channel_decode(
        emb.reshape(grid_shape + (emb.shape[-1],)),
        basis,
        decode_grid,
        nms_radius=cfg.nms_radius_cells * max(2.0 / cfg.decode_width, 2.0 / cfg.decode_height),
        max_modes=cfg.max_modes,
        window=cfg.softargmax_window,
        temperature=cfg.temperature,
    )
    scores = warp.confidence.copy()
    var_field = variance.reshape(grid_shape) if variance is not None else np.zeros(grid_shape)
    conf = dec.confidence_estimate(var_field, scores, calib=cfg.conf_calib)
    return replace_confidence(warp, conf), scores, (variance.reshape(grid_shape) if variance is not None else None)


def replace_confidence(w, conf):
    return WarpField(w.height, w.width, w.flow, np.clip(conf, 0.0, 1.0))


def _upsample_field(values, target_shape):
    """Bilinear upsampling of an (h, w[, c]) field defined on cell centers."""
    src_h, src_w = values.shape[:2]
    th, tw = target_shape
    tgt = make_grid(th, tw)
    rows = (tgt.coords[..., 1] + 1.0) * src_h / 2.0 - 0.5
    cols = (tgt.coords[..., 0] + 1.0) * src_w / 2.0 - 0.5
    v = values if values.ndim == 3 else values[..., None]
    out, _ = dec._bilinear(v, rows, cols)
    return out if values.ndim == 3 else out[..., 0]


def _fuse(coarse, fine):
    """Fine overrides the upsampled coarse wherever it is at least as confident."""
    up_flow = _upsample_field(coarse.flow, (fine.height, fine.width))
    up_conf = _upsample_field(coarse.confidence, (fine.height, fine.width))
    take_fine = fine.confidence >= up_conf
    flow = np.where(take_fine[..., None], fine.flow, up_flow)
    conf = np.where(take_fine, fine.confidence, up_conf)
    return WarpField(fine.height, fine.width, flow, conf)


def match_feature_maps(pairs, cfg, basis=None):
    """Match pre-extracted feature maps (one (query, support) pair per scale).

    `pairs` is a coarse-to-fine sequence of (query FeatureMap, support
    FeatureMap); all regression scales are fused into a single warp at the
    finest scale.  Returns (fused warp, list of per-scale results, basis).
    """
    if basis is None:
        basis = cfg.basis()
    scales = []
    fused = None
    for qf, sf in pairs:
        if qf.channels != sf.channels:
            raise ConfigError(f"channel mismatch: query {qf.channels}, support {sf.channels}")
        support = SupportSet(
            sf.matrix(),
            basis.transform(sf.grid().points),
            grid_shape=(sf.height_cells, sf.width_cells),
        )
        grid_shape = (qf.height_cells, qf.width_cells)
        emb, variance = _regress(cfg, support, qf.matrix(), grid_shape)
        warp, scores, var_field = _decode_scale(cfg, basis, emb, variance, grid_shape)
        scales.append(ScaleResult(qf.stride, warp, scores, var_field))
        fused = warp if fused is None else _fuse(fused, warp)
    fused = dec.coherence_filter(fused, radius=cfg.coherence_radius, flow_scale=cfg.coherence_flow_scale)
    return fused, scales, basis


def match_pair(query_img, support_img, cfg):
    """Match two images end to end and return the final warp field."""
    pairs = []
    for stride in sorted(cfg.strides, reverse=True):
        pairs.append(
            (
                extract_dense_descriptors(query_img, stride),
                extract_dense_descriptors(support_img, stride),
            )
        )
    warp, scales, basis = match_feature_maps(pairs, cfg)

    for stride in cfg.refine_strides:
        qf = extract_dense_descriptors(query_img, stride)
        sf = extract_dense_descriptors(support_img, stride)
        target = (qf.height_cells, qf.width_cells)
        if (warp.height, warp.width) != target:
            flow = _upsample_field(warp.flow, target)
            conf = _upsample_field(warp.confidence, target)
            warp = WarpField(target[0], target[1], flow, np.clip(conf, 0.0, 1.0))
        warp = dec.refine_subpixel(warp, qf, sf, window=cfg.refine_window)
        warp = dec.coherence_filter(warp, radius=cfg.coherence_radius, flow_scale=cfg.coherence_flow_scale)
    return MatchResult(warp, tuple(scales), basis)
