"""Coordinate grids, warp fields, homographies and camera poses.

Both images share the normalized coordinate system [-1, 1] x [-1, 1].
Pixel (r, c) of an H x W grid maps to the center of its cell,

    x = 2 (c + 0.5) / W - 1,    y = 2 (r + 0.5) / H - 1,

so corner pixels are strictly inside the square.  Warp fields assign each
query pixel a support coordinate; values outside [-1, 1] are kept (they lie
on the extended image plane) until `clip_to_grid` is applied explicitly.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError
from .validation import as_coords

__all__ = [
    "NormalizedGrid",
    "WarpField",
    "Homography",
    "CameraPose",
    "make_grid",
    "grid_to_pixels",
    "apply_homography",
    "clip_to_grid",
    "homography_to_warp",
    "save_warp_file",
    "load_warp_file",
]

WARP_MAGIC = b"DKWF"
WARP_VERSION = 1

# |h22| (and the homogeneous coordinate of a projected point) below this is
# treated as degenerate.
_HOMOGENEOUS_EPS = 1e-12


@dataclass(frozen=True)
class NormalizedGrid:
    """Dense grid of normalized pixel-center coordinates, shape (H, W, 2)."""

    height: int
    width: int
    coords: np.ndarray

    @property
    def points(self):
        """Grid coordinates flattened row-major to (H*W, 2)."""
        return self.coords.reshape(-1, 2)

    @property
    def cell_size(self):
        """Normalized (x, y) extent of one pixel cell."""
        return (2.0 / self.width, 2.0 / self.height)


@dataclass(frozen=True)
class WarpField:
    """Per-pixel predicted support coordinate plus confidence in [0, 1]."""

    height: int
    width: int
    flow: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        flow = np.asarray(self.flow, dtype=np.float64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if flow.shape != (self.height, self.width, 2):
            raise ValueError(f"flow shape {flow.shape} != ({self.height}, {self.width}, 2)")
        if conf.shape != (self.height, self.width):
            raise ValueError(f"confidence shape {conf.shape} != ({self.height}, {self.width})")
        if conf.size and (conf.min() < 0 or conf.max() > 1):
            raise ValueError("confidence values must lie in [0, 1]")
        object.__setattr__(self, "flow", flow)
        object.__setattr__(self, "confidence", conf)

    def grid(self):
        return make_grid(self.height, self.width)


@dataclass(frozen=True)
class Homography:
    """3x3 invertible planar transform, scaled so the bottom-right entry is 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography matrix must be 3x3, got {m.shape}")
        if abs(np.linalg.det(m)) <= _HOMOGENEOUS_EPS:
            raise ValueError("homography is not invertible (|det| <= 1e-12)")
        if abs(m[2, 2]) > _HOMOGENEOUS_EPS:
            m = m / m[2, 2]
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity():
        return Homography(np.eye(3))

    @staticmethod
    def translation(tx, ty):
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return Homography(m)

    @staticmethod
    def rotation(angle_rad):
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        return Homography(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))

    def compose(self, other):
        """Homography applying `other` first, then this one."""
        return Homography(self.matrix @ other.matrix)

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))


@dataclass(frozen=True)
class CameraPose:
    """Rigid pose: proper rotation (det +1, orthonormal) and nonzero translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if t.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal to 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 to 1e-9")
        if np.linalg.norm(t) == 0:
            raise ValueError("translation must be nonzero")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


def make_grid(height, width):
    """Build the normalized pixel-center grid for an H x W image."""
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {height}x{width}")
    xs = 2.0 * (np.arange(width) + 0.5) / width - 1.0
    ys = 2.0 * (np.arange(height) + 0.5) / height - 1.0
    gx, gy = np.meshgrid(xs, ys)
    return NormalizedGrid(int(height), int(width), np.stack([gx, gy], axis=-1))


def grid_to_pixels(coords, height, width):
    """Invert the pixel-center convention: normalized (x, y) -> fractional (r, c)."""
    coords = np.asarray(coords, dtype=np.float64)
    c = (coords[..., 0] + 1.0) * width / 2.0 - 0.5
    r = (coords[..., 1] + 1.0) * height / 2.0 - 0.5
    return r, c


def apply_homography(h, coords):
    """Apply a homography to a set of 2-D points.

    Returns (warped, valid): points whose homogeneous coordinate is nearly
    zero are flagged invalid in the mask (their output is set to 0) rather
    than raising, so dense pipelines never abort mid-image.
    """
    pts = as_coords(coords)
    m = h.matrix
    hom = pts @ m[:2, :2].T + m[:2, 2]
    w = pts @ m[2, :2] + m[2, 2]
    valid = np.abs(w) >= _HOMOGENEOUS_EPS
    safe_w = np.where(valid, w, 1.0)
    out = hom / safe_w[:, None]
    out[~valid] = 0.0
    return out, valid


def clip_to_grid(w):
    """Clamp flow componentwise to [-1, 1]; confidence is unchanged."""
    return WarpField(w.height, w.width, np.clip(w.flow, -1.0, 1.0), w.confidence)


def homography_to_warp(h, grid):
    """Reference warp for a homography: flow = H(grid), confidence = in-frame mask."""
    warped, valid = apply_homography(h, grid.points)
    flow = warped.reshape(grid.height, grid.width, 2)
    in_frame = (np.abs(warped) <= 1.0).all(axis=1) & valid
    conf = in_frame.astype(np.float64).reshape(grid.height, grid.width)
    return WarpField(grid.height, grid.width, flow, conf)


def save_warp_file(w, path):
    """Write a warp field in the DKWF format (x, y, confidence as f32 LE)."""
    payload = np.concatenate([w.flow, w.confidence[..., None]], axis=-1)
    with open(path, "wb") as f:
        f.write(WARP_MAGIC)
        f.write(struct.pack("<III", WARP_VERSION, w.height, w.width))
        f.write(payload.astype("<f4").tobytes())


def load_warp_file(path):
    """Read a DKWF warp field, validating magic, version and payload size."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != WARP_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {WARP_MAGIC!r}", offset=0, path=path)
    if len(data) < 16:
        raise FormatError("truncated header (need 16 bytes)", offset=len(data), path=path)
    version, height, width = struct.unpack_from("<III", data, 4)
    if version != WARP_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    expected = 16 + height * width * 3 * 4
    if len(data) != expected:
        raise FormatError(
            f"payload size mismatch: header implies {expected} bytes, file has {len(data)}",
            offset=16,
            path=path,
        )
    payload = np.frombuffer(data, dtype="<f4", offset=16).reshape(height, width, 3).astype(np.float64)
    conf = np.clip(payload[..., 2], 0.0, 1.0)
    return WarpField(height, width, payload[..., :2], conf)
