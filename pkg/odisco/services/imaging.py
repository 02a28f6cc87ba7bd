"""
Pixel-level imaging primitives.

This module provides the deterministic kernels shared by both distorters and
the metrics service: intensity clipping, normalized Gaussian kernels and blur,
mosaicking, Canny edge maps, windowed SSIM (optionally restricted to a mask)
and morphological mask dilation.

Frames are numpy arrays of dtype uint8 shaped (H, W) or (H, W, C) with C in
{1, 3}. Videos are (F, H, W, 3) and mask videos (F, H, W) with values in {0, 1}.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
from scipy import ndimage, signal

from odisco.errors import (
    DegenerateRegionError,
    InvalidArithmeticError,
    InvalidBlockError,
    InvalidKernelError,
    InvalidParameterError,
    InvalidThresholdError,
    ShapeMismatchError,
)

# Configure logging
logger = logging.getLogger(__name__)

MIN_SIGMA = 0.1
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
DILATION_KERNELS = (1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21)

DEFAULT_CANNY_LOW = 100.0
DEFAULT_CANNY_HIGH = 200.0
DEFAULT_CANNY_SIGMA = 1.4
DEFAULT_CANNY_SIZE = 5

DEFAULT_SSIM_WINDOW = 11
DEFAULT_SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Kernels at least this long are applied through an FFT convolution.
_FFT_MIN_TAPS = 64

# Gradient sectors for non-maximum suppression: (row, col) step along the gradient.
_NMS_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """Normalized, radially symmetric k x k Gaussian kernel."""

    size: int
    sigma: float
    profile: np.ndarray  # normalized 1D factor; weights = outer(profile, profile)

    @property
    def radius(self) -> int:
        return self.size // 2

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.profile, self.profile)


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------


def ensure_frame(frame: np.ndarray, name: str = "frame") -> np.ndarray:
    """
    Validate a single frame.

    Args:
        frame: uint8 array shaped (H, W) or (H, W, C) with C in {1, 3}
        name: Label used in error messages

    Returns:
        The frame as a numpy array

    Raises:
        InvalidParameterError: If dtype, rank or channel count is wrong
    """
    data = np.asarray(frame)
    if data.dtype != np.uint8:
        raise InvalidParameterError(f"{name} must be uint8, got {data.dtype}")
    if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] not in (1, 3)):
        raise InvalidParameterError(f"{name} must be HxW or HxWxC with C in (1, 3), got {data.shape}")
    if data.shape[0] == 0 or data.shape[1] == 0:
        raise InvalidParameterError(f"{name} is empty")
    return data


def ensure_video(video: np.ndarray, name: str = "video") -> np.ndarray:
    """Validate an F x H x W x 3 uint8 video."""
    data = np.asarray(video)
    if data.dtype != np.uint8:
        raise InvalidParameterError(f"{name} must be uint8, got {data.dtype}")
    if data.ndim != 4 or data.shape[3] != 3:
        raise InvalidParameterError(f"{name} must be FxHxWx3, got {data.shape}")
    if 0 in data.shape:
        raise InvalidParameterError(f"{name} is empty")
    return data


def ensure_mask(mask: np.ndarray, video: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Validate a binary F x H x W mask video, optionally against its video.

    Boolean masks are accepted and returned as uint8.
    """
    data = np.asarray(mask)
    if data.dtype == np.bool_:
        data = data.astype(np.uint8)
    if data.ndim != 3:
        raise InvalidParameterError(f"mask must be FxHxW, got {data.shape}")
    if data.size and int(data.max()) > 1:
        raise InvalidParameterError("mask values must be 0 or 1")
    if video is not None and data.shape != video.shape[:3]:
        raise ShapeMismatchError(
            f"mask shape {data.shape} does not match video shape {video.shape[:3]}"
        )
    return data.astype(np.uint8, copy=False)


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def _require_odd_size(size: int, what: str) -> int:
    if isinstance(size, bool) or int(size) != size:
        raise InvalidKernelError(f"{what} must be an integer, got {size!r}")
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise InvalidKernelError(f"{what} must be odd and >= 1, got {size}", size=size)
    return size


# ---------------------------------------------------------------------------
# Intensity handling
# ---------------------------------------------------------------------------


def clip_u8(value: float) -> int:
    """
    Round a value to the nearest integer and saturate it to [0, 255].

    Raises:
        InvalidArithmeticError: If the value is NaN or infinite
    """
    if not math.isfinite(value):
        raise InvalidArithmeticError(f"Cannot clip non-finite value {value!r}")
    return int(min(255.0, max(0.0, float(np.rint(value)))))


def clip_array(values: np.ndarray) -> np.ndarray:
    """Vectorized clip_u8: round to nearest and saturate, returning uint8."""
    data = np.asarray(values, dtype=np.float64)
    if not np.isfinite(data).all():
        raise InvalidArithmeticError("Cannot clip non-finite values")
    return np.clip(np.rint(data), 0, 255).astype(np.uint8)


def to_luma(frame: np.ndarray) -> np.ndarray:
    """Convert a frame to a single-channel uint8 luma plane."""
    data = ensure_frame(frame)
    if data.ndim == 2:
        return data.copy()
    if data.shape[2] == 1:
        return data[..., 0].copy()
    rgb = data.astype(np.float64)
    luma = (
        LUMA_WEIGHTS[0] * rgb[..., 0]
        + LUMA_WEIGHTS[1] * rgb[..., 1]
        + LUMA_WEIGHTS[2] * rgb[..., 2]
    )
    return clip_array(luma)


# ---------------------------------------------------------------------------
# Gaussian kernels and blur
# ---------------------------------------------------------------------------


def gaussian_kernel(sigma: float, size: int) -> GaussianKernel:
    """
    Build a normalized Gaussian kernel.

    Args:
        sigma: Standard deviation; values below 0.1 are raised to 0.1
        size: Odd kernel width k = 2b + 1

    Returns:
        GaussianKernel whose weights sum to 1

    Raises:
        InvalidKernelError: If size is even or not positive, or sigma is not finite
    """
    size = _require_odd_size(size, "kernel size")
    if not math.isfinite(sigma):
        raise InvalidKernelError(f"sigma must be finite, got {sigma!r}")
    if sigma < MIN_SIGMA:
        logger.debug(f"Clamping sigma {sigma} to {MIN_SIGMA}")
        sigma = MIN_SIGMA

    offsets = np.arange(size, dtype=np.float64) - size // 2
    profile = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    profile /= profile.sum()
    profile.setflags(write=False)
    return GaussianKernel(size=size, sigma=float(sigma), profile=profile)


def _correlate_axis(data: np.ndarray, profile: np.ndarray, axis: int) -> np.ndarray:
    """Correlate along one axis with replicate-edge padding."""
    if profile.size == 1:
        return data * profile[0]
    if profile.size < _FFT_MIN_TAPS:
        return ndimage.correlate1d(data, profile, axis=axis, mode="nearest")

    radius = profile.size // 2
    pad_width = [(0, 0)] * data.ndim
    pad_width[axis] = (radius, radius)
    padded = np.pad(data, pad_width, mode="edge")
    shape = [1] * data.ndim
    shape[axis] = profile.size
    # symmetric kernel: convolution equals correlation
    return signal.fftconvolve(padded, profile.reshape(shape), mode="valid", axes=axis)


def _smooth(data: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    """Separable float smoothing over the two spatial axes."""
    out = _correlate_axis(data, kernel.profile, axis=0)
    return _correlate_axis(out, kernel.profile, axis=1)


def gaussian_blur(frame: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    """
    Blur a frame per channel with replicate-border padding.

    The 2D kernel is applied as two 1D passes; the result is rounded and
    clipped back to uint8.
    """
    data = ensure_frame(frame)
    if kernel.size == 1:
        return data.copy()
    return clip_array(_smooth(data.astype(np.float64), kernel))


# ---------------------------------------------------------------------------
# Mosaicking
# ---------------------------------------------------------------------------


def mosaic(frame: np.ndarray, block: int) -> np.ndarray:
    """
    Average-pool a frame in block x block tiles and upsample by repetition.

    Partial tiles at the right and bottom borders use the mean of the pixels
    they contain.

    Raises:
        InvalidBlockError: If block is not a positive integer
    """
    data = ensure_frame(frame)
    if isinstance(block, bool) or int(block) != block or block < 1:
        raise InvalidBlockError(f"Mosaic block must be a positive integer, got {block!r}")
    block = int(block)
    if block == 1:
        return data.copy()

    height, width = data.shape[:2]
    row_starts = np.arange(0, height, block)
    col_starts = np.arange(0, width, block)
    tile_heights = np.diff(np.append(row_starts, height))
    tile_widths = np.diff(np.append(col_starts, width))

    sums = np.add.reduceat(data.astype(np.float64), row_starts, axis=0)
    sums = np.add.reduceat(sums, col_starts, axis=1)
    counts = np.outer(tile_heights, tile_widths).astype(np.float64)
    if data.ndim == 3:
        counts = counts[..., np.newaxis]

    means = clip_array(sums / counts)
    return np.repeat(np.repeat(means, tile_heights, axis=0), tile_widths, axis=1)


# ---------------------------------------------------------------------------
# Edges
# ---------------------------------------------------------------------------


def _suppress_non_maxima(magnitude: np.ndarray, grad_x: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    angle = np.rad2deg(np.arctan2(grad_y, grad_x)) % 180.0
    sector = np.zeros(magnitude.shape, dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3

    height, width = magnitude.shape
    padded = np.pad(magnitude, 1)
    keep = np.zeros(magnitude.shape, dtype=bool)
    for index, (dy, dx) in enumerate(_NMS_OFFSETS):
        ahead = padded[1 + dy : 1 + dy + height, 1 + dx : 1 + dx + width]
        behind = padded[1 - dy : 1 - dy + height, 1 - dx : 1 - dx + width]
        # strict on one side only, so a plateau two pixels wide keeps one pixel
        keep |= (sector == index) & (magnitude > behind) & (magnitude >= ahead)
    return np.where(keep, magnitude, 0.0)


def canny(
    frame: np.ndarray,
    low: float = DEFAULT_CANNY_LOW,
    high: float = DEFAULT_CANNY_HIGH,
    smoothing_sigma: float = DEFAULT_CANNY_SIGMA,
    smoothing_size: int = DEFAULT_CANNY_SIZE,
) -> np.ndarray:
    """
    Compute a binary Canny edge map.

    Colour frames are converted to luma first. The pipeline is Gaussian
    smoothing, Sobel gradients, non-maximum suppression and double-threshold
    hysteresis over 8-connected components.

    Args:
        frame: uint8 frame
        low: Lower hysteresis threshold on the gradient magnitude
        high: Upper hysteresis threshold
        smoothing_sigma: Sigma of the pre-smoothing Gaussian
        smoothing_size: Width of the pre-smoothing Gaussian

    Returns:
        uint8 edge map with values 0 or 255

    Raises:
        InvalidThresholdError: If low > high
    """
    if low > high:
        raise InvalidThresholdError(f"Canny low threshold {low} exceeds high threshold {high}")

    gray = to_luma(frame).astype(np.float64)
    smoothed = _smooth(gray, gaussian_kernel(smoothing_sigma, smoothing_size))

    grad_x = ndimage.sobel(smoothed, axis=1, mode="nearest")
    grad_y = ndimage.sobel(smoothed, axis=0, mode="nearest")
    magnitude = np.hypot(grad_x, grad_y)
    thinned = _suppress_non_maxima(magnitude, grad_x, grad_y)

    strong = thinned > high
    weak = thinned > low
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return np.zeros(gray.shape, dtype=np.uint8)
    seeded = np.unique(labels[strong])
    edges = np.isin(labels, seeded[seeded > 0])
    return edges.astype(np.uint8) * 255


# ---------------------------------------------------------------------------
# Structural similarity
# ---------------------------------------------------------------------------


def ssim_map(
    a: np.ndarray,
    b: np.ndarray,
    window_size: int = DEFAULT_SSIM_WINDOW,
    window_sigma: float = DEFAULT_SSIM_SIGMA,
    data_range: float = 255.0,
) -> np.ndarray:
    """
    Per-pixel SSIM map with a Gaussian window, averaged over channels.

    Returns:
        float64 array shaped (H, W)
    """
    first = ensure_frame(a, "first frame")
    second = ensure_frame(b, "second frame")
    require_same_shape(first, second, "SSIM inputs")

    x = first.astype(np.float64)
    y = second.astype(np.float64)
    if x.ndim == 2:
        x = x[..., np.newaxis]
        y = y[..., np.newaxis]

    window = gaussian_kernel(window_sigma, window_size)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    mu_x = _smooth(x, window)
    mu_y = _smooth(y, window)
    var_x = _smooth(x * x, window) - mu_x * mu_x
    var_y = _smooth(y * y, window) - mu_y * mu_y
    cov = _smooth(x * y, window) - mu_x * mu_y

    numerator = (2.0 * (mu_x * mu_y) + c1) * (2.0 * cov + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return (numerator / denominator).mean(axis=-1)


def ssim_masked(
    a: np.ndarray,
    b: np.ndarray,
    mask: Optional[np.ndarray] = None,
    window_size: int = DEFAULT_SSIM_WINDOW,
    window_sigma: float = DEFAULT_SSIM_SIGMA,
) -> float:
    """
    Mean SSIM over the nonzero pixels of a mask, or over the whole frame.

    Raises:
        DegenerateRegionError: If the mask selects no pixel
        ShapeMismatchError: If the mask does not match the frames spatially
    """
    smap = ssim_map(a, b, window_size=window_size, window_sigma=window_sigma)
    if mask is None:
        return float(smap.mean())

    region = np.asarray(mask)
    if region.ndim == 3 and region.shape[2] == 1:
        region = region[..., 0]
    if region.shape != smap.shape:
        raise ShapeMismatchError(f"mask shape {region.shape} does not match frame shape {smap.shape}")
    selected = region != 0
    if not selected.any():
        raise DegenerateRegionError("SSIM mask selects no pixels")
    return float(smap[selected].mean())


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


def dilate_mask(mask: np.ndarray, kernel: int) -> np.ndarray:
    """
    Dilate each mask frame with a kernel x kernel max filter.

    Borders are replicated. A 2D array is treated as a single frame.

    Raises:
        InvalidKernelError: If kernel is even or not positive
    """
    kernel = _require_odd_size(kernel, "dilation kernel")
    data = np.asarray(mask)
    if data.ndim not in (2, 3):
        raise InvalidParameterError(f"mask must be HxW or FxHxW, got {data.shape}")
    if kernel == 1:
        return data.copy()
    size = (kernel, kernel) if data.ndim == 2 else (1, kernel, kernel)
    return ndimage.maximum_filter(data, size=size, mode="nearest")


def sample_dilation_kernel(rng: np.random.Generator) -> int:
    """Draw a training-time dilation kernel uniformly from DILATION_KERNELS."""
    return int(rng.choice(DILATION_KERNELS))


# ---------------------------------------------------------------------------
# Frame-level parallelism
# ---------------------------------------------------------------------------


def map_frames(fn: Callable[[T], R], frames: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """
    Apply fn to every frame, preserving order.

    A thread pool is used when more than one worker is requested; numpy and
    scipy release the GIL inside the heavy kernels.
    """
    items: Sequence[T] = list(frames)
    if not workers or workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
