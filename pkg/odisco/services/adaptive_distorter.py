"""
Adaptive object distortion for inference-time conditioning.

The adaptive distorter works in two passes. The first measures how similar
the edited region's edge maps are between the reference image and the first
video frame (sim_i) and between consecutive video frames (sim_v). Quadratic
fits of those similarities give a contrast factor alpha, a blur sigma and an
odd kernel size k. The second pass scales, clips and blurs the reference
video and keeps the result only inside the mask.

Object removal and outpainting use an all-zero signal instead.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np

from odisco.errors import (
    DegenerateRegionError,
    InsufficientFramesError,
    InvalidParameterError,
    ShapeMismatchError,
)
from odisco.models.task import TaskKind
from odisco.services.imaging import (
    DEFAULT_CANNY_HIGH,
    DEFAULT_CANNY_LOW,
    DEFAULT_CANNY_SIGMA,
    DEFAULT_CANNY_SIZE,
    MIN_SIGMA,
    canny,
    clip_array,
    ensure_frame,
    ensure_mask,
    ensure_video,
    gaussian_blur,
    gaussian_kernel,
    map_frames,
    ssim_masked,
)

# Configure logging
logger = logging.getLogger(__name__)

SIGMA_SCALE = 0.2
VIDEO_WEIGHT = 1.2

ADAPTIVE_FIELDS = ("alpha", "sigma", "k")


def validate_adaptive_overrides(values: Mapping[str, Any]) -> None:
    """
    Check explicitly given alpha, sigma and k values; absent or None fields are skipped.

    Raises:
        InvalidParameterError: If alpha or sigma is not finite, sigma is not
            positive, or k is not an odd positive integer
    """
    alpha, sigma, k = (values.get(name) for name in ADAPTIVE_FIELDS)
    if alpha is not None and not math.isfinite(alpha):
        raise InvalidParameterError(f"alpha must be finite, got {alpha}", field="alpha")
    if sigma is not None and (not math.isfinite(sigma) or sigma <= 0):
        raise InvalidParameterError(f"sigma must be a positive finite number, got {sigma}", field="sigma")
    if k is not None and (isinstance(k, bool) or int(k) != k or k < 1 or k % 2 == 0):
        raise InvalidParameterError(f"kernel size must be an odd integer >= 1, got {k}", field="k")


@dataclass(frozen=True)
class SimilarityPair:
    """Edge-map similarities of the edited region."""

    sim_i: float
    sim_v: float


@dataclass(frozen=True)
class AdaptiveParams:
    """Contrast, blur sigma and kernel size of the adaptive signal."""

    alpha: float
    sigma: float
    k: int

    def validate(self) -> "AdaptiveParams":
        """Raises InvalidParameterError if any field is out of range."""
        validate_adaptive_overrides(vars(self))
        return self


@dataclass
class AdaptiveResult:
    """Output of one adaptive distortion run plus everything needed to replay it."""

    video: np.ndarray
    task: TaskKind
    branch: str  # "zero" or "adaptive"
    similarities: Optional[SimilarityPair] = None
    fitted: Optional[AdaptiveParams] = None
    params: Optional[AdaptiveParams] = None
    effective_kernel: Optional[int] = None
    overridden: List[str] = field(default_factory=list)

    def to_sidecar(self) -> Dict[str, Any]:
        sims = self.similarities
        return {
            "task": self.task.value,
            "branch": self.branch,
            "sim_i": sims.sim_i if sims else None,
            "sim_v": sims.sim_v if sims else None,
            "fitted": vars(self.fitted).copy() if self.fitted else None,
            "alpha": self.params.alpha if self.params else None,
            "sigma": self.params.sigma if self.params else None,
            "k": self.params.k if self.params else None,
            "effective_kernel": self.effective_kernel,
            "overridden": list(self.overridden),
        }


def f1(sim_i: float) -> float:
    return 3000.0 * sim_i**2 + 6000.0 * sim_i + 300.0


def f2(sim_v: float) -> float:
    return 4622.64 * sim_v**2 + 92453.28 * sim_v + 4623.64


def f3(sim_v: float) -> float:
    return -36.0 * sim_v**2 + 72.0 * sim_v - 35.0


def odd_nearest(value: float) -> int:
    """Nearest odd integer (ties go up), never below 1."""
    odd = 2 * math.floor((value - 1.0) / 2.0 + 0.5) + 1
    return max(1, int(odd))


def cap_kernel(k: int, height: int, width: int) -> int:
    """Limit a kernel size to 2 * min(height, width) - 1."""
    limit = 2 * min(height, width) - 1
    if k > limit:
        logger.info(f"Capping blur kernel {k} to {limit} for a {height}x{width} frame")
        return limit
    return k


def fit_params(sims: SimilarityPair) -> AdaptiveParams:
    """
    Fit (alpha, sigma, k) from the two similarities.

    raw = f1(sim_i) + 1.2 * f2(sim_v); sigma = max(0.1, 0.2 * raw);
    k = nearest odd integer to 0.2 * raw; alpha = f3(sim_v).
    """
    raw = f1(sims.sim_i) + VIDEO_WEIGHT * f2(sims.sim_v)
    scaled = SIGMA_SCALE * raw
    return AdaptiveParams(alpha=f3(sims.sim_v), sigma=max(MIN_SIGMA, scaled), k=odd_nearest(scaled))


def _masked_or_global(a: np.ndarray, b: np.ndarray, mask: np.ndarray, label: str) -> float:
    try:
        return ssim_masked(a, b, mask)
    except DegenerateRegionError:
        logger.warning(f"Empty mask for {label}; using global SSIM instead")
        return ssim_masked(a, b)


def compute_similarities(
    video: np.ndarray,
    mask: np.ndarray,
    ref_image: np.ndarray,
    canny_low: float = DEFAULT_CANNY_LOW,
    canny_high: float = DEFAULT_CANNY_HIGH,
    canny_sigma: float = DEFAULT_CANNY_SIGMA,
    canny_size: int = DEFAULT_CANNY_SIZE,
    workers: Optional[int] = None,
) -> SimilarityPair:
    """
    Measure edge-map similarity inside the edited region.

    Args:
        video: F x H x W x 3 reference video, F >= 2
        mask: F x H x W binary mask
        ref_image: H x W x 3 reference image
        canny_low: Lower Canny threshold
        canny_high: Upper Canny threshold
        canny_sigma: Sigma of the Canny pre-smoothing
        canny_size: Width of the Canny pre-smoothing kernel
        workers: Frame-level thread count

    Returns:
        SimilarityPair with sim_i from frame 0 and sim_v averaged over the
        F - 1 consecutive pairs
    """
    video = ensure_video(video)
    mask = ensure_mask(mask, video)
    image = ensure_frame(ref_image, "reference image")
    if video.shape[0] < 2:
        raise InsufficientFramesError(f"Similarity needs at least 2 frames, got {video.shape[0]}")
    if image.shape != video.shape[1:]:
        raise ShapeMismatchError(
            f"reference image shape {image.shape} does not match frame shape {video.shape[1:]}"
        )

    def edges(frame: np.ndarray) -> np.ndarray:
        return canny(frame, canny_low, canny_high, canny_sigma, canny_size)

    edge_maps = map_frames(edges, list(video), workers)
    sim_i = _masked_or_global(edge_maps[0], edges(image), mask[0], "reference image")

    def pair_similarity(t: int) -> float:
        return _masked_or_global(edge_maps[t], edge_maps[t - 1], mask[t], f"frame {t}")

    pair_values = map_frames(pair_similarity, range(1, video.shape[0]), workers)
    sim_v = float(np.mean(pair_values))
    logger.debug(f"Similarities: sim_i={sim_i:.6f}, sim_v={sim_v:.6f}")
    return SimilarityPair(sim_i=sim_i, sim_v=sim_v)


def apply_adaptive_distorter(
    video: np.ndarray,
    mask: np.ndarray,
    params: AdaptiveParams,
    workers: Optional[int] = None,
) -> np.ndarray:
    """
    Scale, clip and blur the video inside the mask.

    The kernel is capped to the frame size before blurring. Pixels outside
    the mask are copied from the input unchanged.
    """
    video = ensure_video(video)
    mask = ensure_mask(mask, video)
    params.validate()

    height, width = video.shape[1:3]
    kernel = gaussian_kernel(params.sigma, cap_kernel(int(params.k), height, width))

    def distort(index: int) -> np.ndarray:
        frame = video[index]
        region = mask[index].astype(bool)
        if not region.any():
            return frame.copy()
        scaled = clip_array(params.alpha * frame.astype(np.float64))
        blurred = gaussian_blur(scaled, kernel)
        return np.where(region[..., np.newaxis], blurred, frame)

    return np.stack(map_frames(distort, range(video.shape[0]), workers))


def run_adaptive_distorter(
    task: Union[str, TaskKind],
    video: np.ndarray,
    mask: np.ndarray,
    ref_image: np.ndarray,
    overrides: Optional[Mapping[str, Any]] = None,
    canny_low: float = DEFAULT_CANNY_LOW,
    canny_high: float = DEFAULT_CANNY_HIGH,
    canny_sigma: float = DEFAULT_CANNY_SIGMA,
    canny_size: int = DEFAULT_CANNY_SIZE,
    workers: Optional[int] = None,
) -> AdaptiveResult:
    """
    Build the adaptive control signal for a task.

    Explicit alpha, sigma or k values replace the fitted ones one by one; when
    all three are given the similarity pass is skipped.

    Returns:
        AdaptiveResult with the control video and its parameters
    """
    kind = TaskKind.parse(task)
    video = ensure_video(video)
    mask = ensure_mask(mask, video)

    if kind.zeroes_control_signal:
        logger.info(f"Task {kind.value} uses an all-zero control signal")
        return AdaptiveResult(video=np.zeros_like(video), task=kind, branch="zero")

    given = {
        name: value
        for name, value in (overrides or {}).items()
        if name in ADAPTIVE_FIELDS and value is not None
    }

    sims: Optional[SimilarityPair] = None
    fitted: Optional[AdaptiveParams] = None
    if len(given) < len(ADAPTIVE_FIELDS):
        sims = compute_similarities(
            video, mask, ref_image, canny_low, canny_high, canny_sigma, canny_size, workers
        )
        fitted = fit_params(sims)
        values: Dict[str, Any] = {"alpha": fitted.alpha, "sigma": fitted.sigma, "k": fitted.k}
    else:
        values = {}
    values.update(given)

    # sigma overrides get the same floor as fitted values
    params = AdaptiveParams(
        alpha=float(values["alpha"]),
        sigma=max(MIN_SIGMA, float(values["sigma"])),
        k=int(values["k"]),
    ).validate()
    effective = cap_kernel(params.k, video.shape[1], video.shape[2])
    control = apply_adaptive_distorter(video, mask, params, workers=workers)
    return AdaptiveResult(
        video=control,
        task=kind,
        branch="adaptive",
        similarities=sims,
        fitted=fitted,
        params=params,
        effective_kernel=effective,
        overridden=[name for name in ADAPTIVE_FIELDS if name in given],
    )


def make_aodc(
    task: Union[str, TaskKind],
    video: np.ndarray,
    mask: np.ndarray,
    ref_image: np.ndarray,
    **options: Any,
) -> np.ndarray:
    """Return only the control video of run_adaptive_distorter."""
    return run_adaptive_distorter(task, video, mask, ref_image, **options).video
