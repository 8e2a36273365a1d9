"""Image containers, colour transforms, Gaussian filtering and PNG/PPM I/O."""

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

LOG_EPS = 1e-4

# sRGB <-> linear (IEC 61966-2-1)
_SRGB_A = 0.055
_SRGB_THRESH_ENC = 0.0031308
_SRGB_THRESH_DEC = 0.04045

# linear RGB -> XYZ (D65) and reference white
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_D65 = np.array([0.95047, 1.0, 1.08883])


@dataclass(frozen=True)
class ImageBuffer:
    """Dense float image, (H, W, C) row-major with C in {1, 3}.

    ``domain`` is "linear" for radiometric values (in [0, 1+eps] right
    after loading) or "log" for natural-log values.  Buffers are
    immutable once constructed and safe to share between threads.
    """

    data: np.ndarray
    domain: str = "linear"

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) image data, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must have positive width and height")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains non-finite values")
        if self.domain not in ("linear", "log"):
            raise ValueError(f"unknown domain tag {self.domain!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def luminance(self):
        """Per-pixel mean over channels, shape (H, W)."""
        return self.data.mean(axis=2)


@dataclass(frozen=True)
class ChromaticityField:
    """Per-pixel unit RGB direction; degenerate pixels carry a fallback flag."""

    vectors: np.ndarray      # (H, W, 3), unit L2 norm
    fallback: np.ndarray     # (H, W) bool, True where the pixel norm was ~0

    def __post_init__(self):
        self.vectors.setflags(write=False)
        self.fallback.setflags(write=False)


@dataclass(frozen=True)
class LabField:
    """Channel-normalized CIELab values with the lightness channel damped.

    Each Lab channel is min-max normalized over the image to [0, 1]
    (flat channels collapse to 0.5), then L is multiplied by
    ``suppress``.
    """

    values: np.ndarray       # (H, W, 3)
    suppress: float = 0.25

    def __post_init__(self):
        self.values.setflags(write=False)


def srgb_to_linear(v):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= _SRGB_THRESH_DEC, v / 12.92,
                    ((v + _SRGB_A) / (1 + _SRGB_A)) ** 2.4)


def linear_to_srgb(v):
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= _SRGB_THRESH_ENC, 12.92 * v,
                    (1 + _SRGB_A) * np.power(v, 1 / 2.4) - _SRGB_A)


def load_image(path):
    """Read an 8-bit PNG or binary PPM/PGM and decode sRGB to linear RGB.

    Returns a linear-domain ImageBuffer with values in [0, 1].
    Raises ValueError for unreadable files or unsupported bit depths.
    """
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise ValueError(f"cannot read image {path!r}: {exc}") from exc
    if img.mode in ("I", "I;16", "I;16B", "F"):
        raise ValueError(f"unsupported bit depth for {path!r} (mode {img.mode}); "
                         "only 8-bit images are supported")
    if img.mode == "P":
        img = img.convert("RGB")
    if img.mode == "RGBA":
        img = img.convert("RGB")
    if img.mode not in ("RGB", "L"):
        raise ValueError(f"unsupported image mode {img.mode!r} for {path!r}")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return ImageBuffer(srgb_to_linear(arr), domain="linear")


def save_image(path, img):
    """Clamp to [0, 1], encode to sRGB and write an 8-bit PNG."""
    if isinstance(img, ImageBuffer):
        arr = img.data
    else:
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
    out = np.round(linear_to_srgb(arr) * 255.0).astype(np.uint8)
    if out.shape[2] == 1:
        out = out[:, :, 0]
    Image.fromarray(out).save(path, format="PNG")


def to_log(img, eps=LOG_EPS):
    """Elementwise ln(max(value, eps)); requires a linear-domain buffer."""
    if img.domain != "linear":
        raise ValueError("to_log expects a linear-domain image")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return ImageBuffer(np.log(np.maximum(img.data, eps)), domain="log")


def chromaticity(img, eps=1e-8):
    """Normalize each RGB pixel to unit length.

    Pixels with ``||p|| < eps`` get the neutral direction (1,1,1)/sqrt(3)
    and are flagged as fallbacks.
    """
    if img.channels != 3:
        raise ValueError("chromaticity requires a 3-channel image")
    norms = np.linalg.norm(img.data, axis=2)
    fallback = norms < eps
    safe = np.where(fallback, 1.0, norms)
    vecs = img.data / safe[:, :, None]
    vecs[fallback] = 1.0 / np.sqrt(3.0)
    return ChromaticityField(vectors=vecs, fallback=fallback)


def rgb_to_lab(arr):
    """Linear RGB (H, W, 3) in [0, 1] to CIELab under D65."""
    xyz = arr @ _RGB_TO_XYZ.T
    ratio = xyz / _D65
    thresh = (6.0 / 29.0) ** 3
    f = np.where(ratio > thresh, np.cbrt(ratio),
                 ratio / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_rgb(lab):
    """Exact inverse of rgb_to_lab (output may leave [0, 1])."""
    fy = (lab[..., 0] + 16.0) / 116.0
    f = np.stack([fy + lab[..., 1] / 500.0, fy, fy - lab[..., 2] / 200.0], axis=-1)
    delta = 6.0 / 29.0
    ratio = np.where(f > delta, f**3, 3 * delta**2 * (f - 4.0 / 29.0))
    return (ratio * _D65) @ np.linalg.inv(_RGB_TO_XYZ).T


def to_lab_suppressed(img, suppress=0.25):
    """Per-pixel normalized CIELab with the L channel scaled down.

    Each channel is min-max normalized over the whole image before the
    suppression factor is applied; a flat channel maps to 0.5.
    """
    if img.channels != 3:
        raise ValueError("Lab conversion requires a 3-channel image")
    if not 0.0 < suppress <= 1.0:
        raise ValueError("suppress must lie in (0, 1]")
    lab = rgb_to_lab(np.clip(img.data, 0.0, 1.0))
    out = np.empty_like(lab)
    for c in range(3):
        lo, hi = lab[..., c].min(), lab[..., c].max()
        if hi - lo < 1e-12:
            out[..., c] = 0.5
        else:
            out[..., c] = (lab[..., c] - lo) / (hi - lo)
    out[..., 0] *= suppress
    return LabField(values=out, suppress=suppress)


def gaussian_kernel(sigma):
    """Normalized 1-D Gaussian with radius ceil(3*sigma)."""
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_axis(arr, kernel, axis):
    radius = len(kernel) // 2
    # symmetric (half-sample) extension keeps the operator doubly
    # stochastic, so both constants and the field mean are preserved
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="symmetric")
    out = np.zeros_like(arr)
    sl = [slice(None)] * arr.ndim
    n = arr.shape[axis]
    for t, w in enumerate(kernel):
        sl[axis] = slice(t, t + n)
        out += w * padded[tuple(sl)]
    return out


def gaussian_filter(field, sigma):
    """Separable Gaussian blur with kernel radius ceil(3*sigma).

    sigma = 0 returns the input unchanged.  Accepts an ImageBuffer or a
    bare (H, W[, C]) array and returns the same kind.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    is_buffer = isinstance(field, ImageBuffer)
    arr = field.data if is_buffer else np.asarray(field, dtype=np.float64)
    if sigma == 0:
        return field if is_buffer else arr.copy()
    kernel = gaussian_kernel(sigma)
    out = _filter_axis(arr, kernel, axis=0)
    out = _filter_axis(out, kernel, axis=1)
    if is_buffer:
        return ImageBuffer(out, domain=field.domain)
    return out
