"""
Random object distortion for training-time conditioning.

One parameter draw is made per clip: a scaling factor applied to one target
channel, a colour offset added to channel 0 or subtracted from the others, and
a mosaic block size. The distorted, mosaicked video is inserted into the
reference video only where the mask is set.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from odisco.errors import InvalidParameterError
from odisco.services.imaging import (
    clip_array,
    dilate_mask,
    ensure_mask,
    ensure_video,
    map_frames,
    mosaic,
    sample_dilation_kernel,
)

# Configure logging
logger = logging.getLogger(__name__)

THETA_RANGE = (1.5, 3.0)
TARGET_CHANNELS = (0, 1, 2)
COLOR_OFFSETS = (-100, -50, 50, 100)
BLOCK_SIZES = (8, 10, 12, 15, 16, 20, 24)
SCALING_MODES = (0, 1)  # 0: multiply by theta, 1: divide by theta

PARAM_FIELDS = ("theta", "target_channel", "delta", "block", "mode")

SeedLike = Union[int, np.random.Generator, None]


def validate_random_overrides(values: Mapping[str, Any]) -> None:
    """
    Check explicitly given parameter values against their sampling domains.

    Fields that are absent or None are skipped.

    Raises:
        InvalidParameterError: If a given value is outside its domain
    """
    theta = values.get("theta")
    if theta is not None and not THETA_RANGE[0] <= theta <= THETA_RANGE[1]:
        raise InvalidParameterError(
            f"theta must lie in [{THETA_RANGE[0]}, {THETA_RANGE[1]}], got {theta}", field="theta"
        )
    for name, domain in (
        ("target_channel", TARGET_CHANNELS),
        ("delta", COLOR_OFFSETS),
        ("block", BLOCK_SIZES),
        ("mode", SCALING_MODES),
    ):
        value = values.get(name)
        if value is not None and (isinstance(value, bool) or value not in domain):
            raise InvalidParameterError(f"{name} must be one of {domain}, got {value}", field=name)


@dataclass(frozen=True)
class RandomDistortionParams:
    """Parameters of one random distortion draw."""

    theta: float
    target_channel: int
    delta: int
    block: int
    mode: int

    def validate(self) -> "RandomDistortionParams":
        """
        Check every field against its sampling domain.

        Raises:
            InvalidParameterError: If any field is outside its domain
        """
        validate_random_overrides(self.to_dict())
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainingSample:
    """Conditioning inputs for one training clip."""

    control: np.ndarray
    params: RandomDistortionParams
    dilation_kernel: int
    dilated_mask: np.ndarray


def as_generator(seed: SeedLike) -> np.random.Generator:
    """Return a numpy Generator for an integer seed, passing generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_random_params(seed: SeedLike) -> RandomDistortionParams:
    """
    Draw distortion parameters.

    The draw order is fixed (theta, channel, delta, block, mode) so identical
    seeds always yield identical parameters.
    """
    rng = as_generator(seed)
    theta = float(rng.uniform(*THETA_RANGE))
    target_channel = int(rng.integers(0, len(TARGET_CHANNELS)))
    delta = int(rng.choice(COLOR_OFFSETS))
    block = int(rng.choice(BLOCK_SIZES))
    mode = int(rng.integers(0, len(SCALING_MODES)))
    return RandomDistortionParams(theta, target_channel, delta, block, mode)


def resolve_random_params(
    seed: SeedLike, overrides: Optional[Mapping[str, Any]] = None
) -> Tuple[RandomDistortionParams, List[str]]:
    """
    Combine a seeded draw with explicit parameter values.

    Sampling is skipped when all five fields are given.

    Returns:
        Tuple of (params, names_of_overridden_fields)
    """
    given = {
        name: value
        for name, value in (overrides or {}).items()
        if name in PARAM_FIELDS and value is not None
    }
    if len(given) == len(PARAM_FIELDS):
        params = RandomDistortionParams(
            theta=float(given["theta"]),
            target_channel=int(given["target_channel"]),
            delta=int(given["delta"]),
            block=int(given["block"]),
            mode=int(given["mode"]),
        )
    else:
        sampled = sample_random_params(seed).to_dict()
        sampled.update(given)
        params = RandomDistortionParams(**sampled)

    overridden = [name for name in PARAM_FIELDS if name in given]
    if overridden:
        logger.info(f"Random distortion overrides: {', '.join(overridden)}")
    return params.validate(), overridden


def color_distort(video: np.ndarray, params: RandomDistortionParams) -> np.ndarray:
    """
    Apply the per-channel colour distortion to a frame or a whole video.

    The target channel is multiplied (mode 0) or divided (mode 1) by theta;
    channel 0 otherwise gets +delta and the remaining channels -delta. Results
    are rounded to nearest and clipped to [0, 255].
    """
    data = np.asarray(video)
    if data.dtype != np.uint8 or data.shape[-1] != 3:
        raise InvalidParameterError(f"color distortion needs 3-channel uint8 input, got {data.shape}")

    values = data.astype(np.float64)
    out = np.empty_like(data)
    for channel in TARGET_CHANNELS:
        plane = values[..., channel]
        if channel == params.target_channel:
            plane = plane * params.theta if params.mode == 0 else plane / params.theta
        elif channel == 0:
            plane = plane + params.delta
        else:
            plane = plane - params.delta
        out[..., channel] = clip_array(plane)
    return out


def apply_random_distorter(
    video: np.ndarray,
    mask: np.ndarray,
    params: RandomDistortionParams,
    workers: Optional[int] = None,
) -> np.ndarray:
    """
    Produce the random distortion control signal.

    Args:
        video: F x H x W x 3 reference video
        mask: F x H x W binary mask of the edited region
        params: Distortion parameters
        workers: Frame-level thread count

    Returns:
        Video equal to the input outside the mask and to the mosaicked,
        colour-distorted input inside it
    """
    video = ensure_video(video)
    mask = ensure_mask(mask, video)
    params.validate()

    def distort(index: int) -> np.ndarray:
        frame = video[index]
        region = mask[index].astype(bool)
        if not region.any():
            return frame.copy()
        distorted = mosaic(color_distort(frame, params), params.block)
        return np.where(region[..., np.newaxis], distorted, frame)

    frames = map_frames(distort, range(video.shape[0]), workers)
    return np.stack(frames)


def make_training_sample(
    video: np.ndarray,
    mask: np.ndarray,
    seed: SeedLike,
    workers: Optional[int] = None,
) -> TrainingSample:
    """
    Build the full training-time conditioning for one clip.

    Parameters and the mask dilation kernel come from the same generator, in
    that order.
    """
    rng = as_generator(seed)
    params = sample_random_params(rng)
    kernel = sample_dilation_kernel(rng)
    control = apply_random_distorter(video, mask, params, workers=workers)
    dilated = dilate_mask(ensure_mask(mask, video), kernel)
    logger.debug(f"Training sample drawn with {params} and dilation kernel {kernel}")
    return TrainingSample(control=control, params=params, dilation_kernel=kernel, dilated_mask=dilated)
