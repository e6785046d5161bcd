"""Dense feature maps: hand-crafted descriptors, image and map file I/O.

The descriptor is a deterministic stand-in for a deep backbone: per cell it
concatenates 8-bin unsigned gradient-orientation histograms over the 4 x 4
sub-blocks of a (4 stride)^2 window (128 dims) with a 3-level mean-intensity
pyramid over the same window (1 + 4 + 16 = 21 dims), then L2-normalizes.
Unsigned orientations (mod 180 degrees) keep the histograms stable under
illumination flips.

Feature maps travel through the DKFM binary format; deep backbones can
produce the same format externally and are consumed identically.
"""

import struct
from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .exceptions import FormatError
from .geometry import make_grid

__all__ = [
    "Image",
    "FeatureMap",
    "DescriptorSpec",
    "extract_dense_descriptors",
    "load_image",
    "save_feature_file",
    "load_feature_file",
]

FEATURE_MAGIC = b"DKFM"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class Image:
    """Grayscale or RGB image with values in [0, 1]."""

    height: int
    width: int
    channels: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        expected = (self.height, self.width) if self.channels == 1 else (self.height, self.width, self.channels)
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if v.shape != expected:
            raise ValueError(f"values shape {v.shape} != {expected}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @staticmethod
    def from_array(values):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 2:
            return Image(v.shape[0], v.shape[1], 1, v)
        return Image(v.shape[0], v.shape[1], v.shape[2], v)

    def grayscale(self):
        """Single-channel view (channel mean for RGB)."""
        if self.channels == 1:
            return self.values
        return self.values.mean(axis=2)


@dataclass(frozen=True)
class FeatureMap:
    """Dense per-cell descriptor grid at a fixed stride (values are f32)."""

    height_cells: int
    width_cells: int
    channels: int
    stride: int
    values: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.shape != (self.height_cells, self.width_cells, self.channels):
            raise ValueError(
                f"values shape {v.shape} != ({self.height_cells}, {self.width_cells}, {self.channels})"
            )
        object.__setattr__(self, "values", v)

    def grid(self):
        """Normalized coordinates of the cell centers."""
        return make_grid(self.height_cells, self.width_cells)

    def matrix(self):
        """Features flattened row-major to (H*W, C) float64."""
        return self.values.reshape(-1, self.channels).astype(np.float64)


@dataclass(frozen=True)
class DescriptorSpec:
    """Parameters of the hand-crafted descriptor.

    `smoothing` is the pre-blur sigma in units of the stride; it stabilizes
    gradients under the resampling aliasing of warped images.  `soft_bins`
    splits each gradient vote linearly between the two nearest orientation
    bins.
    """

    orientation_bins: int = 8
    grid_blocks: int = 4
    pyramid_levels: int = 3
    smoothing: float = 0.25
    soft_bins: bool = True

    @property
    def dims(self):
        histo = self.grid_blocks**2 * self.orientation_bins
        pyramid = sum(4**level for level in range(self.pyramid_levels))
        return histo + pyramid


def _integral(img):
    ii = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    np.cumsum(img, axis=0, out=ii[1:, 1:])
    np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
    return ii


def _box_sums(ii, y0, x0, size):
    return ii[y0 + size, x0 + size] - ii[y0, x0 + size] - ii[y0 + size, x0] + ii[y0, x0]


def extract_dense_descriptors(img, stride, spec=None):
    """Extract the dense descriptor map of an image at a given stride.

    The image is edge-padded so every cell sees a full window; trailing
    rows/columns that do not fill a whole cell are dropped.
    """
    spec = spec or DescriptorSpec()
    stride = int(stride)
    if img.height < 2 * stride or img.width < 2 * stride:
        raise ValueError(f"image {img.height}x{img.width} too small for stride {stride} (needs >= 2x stride)")
    gray = img.grayscale()
    if spec.smoothing > 0:
        gray = scipy.ndimage.gaussian_filter(gray, spec.smoothing * stride, mode="nearest")
    hc, wc = img.height // stride, img.width // stride
    nb = spec.grid_blocks
    pad = nb // 2 * stride + stride  # window reach beyond the first cell start
    padded = np.pad(gray, pad, mode="edge")

    gy, gx = np.gradient(padded)
    mag = np.hypot(gx, gy)
    orient = np.mod(np.arctan2(gy, gx), np.pi)
    nbins = spec.orientation_bins
    pos = orient / (np.pi / nbins)
    bins = np.minimum(pos.astype(np.int64), nbins - 1)

    # window start (top-left) of cell (i, j), in padded coordinates
    ws_r = np.arange(hc) * stride + stride // 2 - (nb // 2) * stride + pad
    ws_c = np.arange(wc) * stride + stride // 2 - (nb // 2) * stride + pad

    parts = []
    sub = np.arange(nb) * stride
    y0 = (ws_r[:, None, None, None] + sub[None, None, :, None])  # (hc, 1, nb, 1)
    x0 = (ws_c[None, :, None, None] + sub[None, None, None, :])  # (1, wc, 1, nb)
    if spec.soft_bins:
        frac = pos - bins
        nxt = (bins + 1) % nbins
        for b in range(nbins):
            votes = np.where(bins == b, mag * (1.0 - frac), 0.0) + np.where(nxt == b, mag * frac, 0.0)
            parts.append(_box_sums(_integral(votes), y0, x0, stride))
    else:
        for b in range(nbins):
            parts.append(_box_sums(_integral(np.where(bins == b, mag, 0.0)), y0, x0, stride))
    histo = np.stack(parts, axis=-1).reshape(hc, wc, nb * nb * nbins)

    ii_int = _integral(padded)
    pyramid = []
    window = nb * stride
    for level in range(spec.pyramid_levels):
        blocks = 2**level
        size = window // blocks
        off = np.arange(blocks) * size
        py0 = ws_r[:, None, None, None] + off[None, None, :, None]
        px0 = ws_c[None, :, None, None] + off[None, None, None, :]
        means = _box_sums(ii_int, py0, px0, size) / float(size * size)
        pyramid.append(means.reshape(hc, wc, blocks * blocks))
    desc = np.concatenate([histo] + pyramid, axis=-1)

    norms = np.linalg.norm(desc, axis=-1, keepdims=True)
    desc = np.where(norms > 0, desc / np.where(norms > 0, norms, 1.0), 0.0)
    return FeatureMap(hc, wc, desc.shape[-1], stride, desc.astype(np.float32), normalized=True)


def _read_pnm_header(data, path):
    # header tokens may be separated by whitespace and '#' comments
    pos = 2  # past magic
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header", offset=pos, path=path)
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"non-numeric header fields {tokens}", offset=2, path=path) from None
    return width, height, maxval, pos


def load_image(path):
    """Load a binary PGM (P5) or PPM (P6) image, scaled to [0, 1] by maxval."""
    with open(path, "rb") as f:
        data = f.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported format (magic {magic!r}); only binary PGM/PPM", offset=0, path=path)
    width, height, maxval, pos = _read_pnm_header(data, path)
    if maxval <= 0 or maxval > 65535:
        raise FormatError(f"invalid maxval {maxval}", offset=2, path=path)
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = count * dtype.itemsize
    if len(data) - pos < expected:
        raise FormatError(
            f"payload too short: expected {expected} bytes, found {len(data) - pos}",
            offset=pos,
            path=path,
        )
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64) / maxval
    shape = (height, width) if channels == 1 else (height, width, 3)
    return Image(height, width, channels, raw.reshape(shape))


def save_image_pgm(img, path):
    """Write a grayscale image as 8-bit binary PGM."""
    gray = np.clip(np.round(img.grayscale() * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n255\n".encode())
        f.write(gray.tobytes())


def save_feature_file(fm, path):
    """Write a feature map in the DKFM format."""
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(
            struct.pack(
                "<IIIIIB3x",
                FEATURE_VERSION,
                fm.height_cells,
                fm.width_cells,
                fm.channels,
                fm.stride,
                1 if fm.normalized else 0,
            )
        )
        f.write(np.ascontiguousarray(fm.values, dtype="<f4").tobytes())


def load_feature_file(path):
    """Read a DKFM feature map; rejects any header inconsistent with the file size."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {FEATURE_MAGIC!r}", offset=0, path=path)
    header_size = 4 + struct.calcsize("<IIIIIB3x")
    if len(data) < header_size:
        raise FormatError(f"truncated header (need {header_size} bytes)", offset=len(data), path=path)
    version, hc, wc, ch, stride, norm = struct.unpack_from("<IIIIIB", data, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    count = hc * wc * ch
    if count > 2**31:
        raise FormatError(f"header dimensions overflow ({hc}x{wc}x{ch})", offset=8, path=path)
    expected = header_size + count * 4
    if len(data) != expected:
        raise FormatError(
            f"payload size mismatch: header implies {expected} bytes, file has {len(data)}",
            offset=header_size,
            path=path,
        )
    values = np.frombuffer(data, dtype="<f4", offset=header_size).reshape(hc, wc, ch)
    return FeatureMap(hc, wc, ch, stride, values, normalized=bool(norm))
