"""
Copy-form preservation (CFP) composition in latent space.

The reference image latent takes temporal slot 0. The remaining slots carry
the video latent with every cell touched by the edit mask zeroed, so the
denoiser sees the preserved region instead of zero padding. Style transfer
zeroes those slots entirely.

Encoding goes through a ``LatentProvider``. ``MockLatentProvider`` is a
deterministic pooling stand-in with the usual image-to-video layout: frame 0
gets its own slot and the following frames are grouped by the temporal factor.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from odisco.errors import InvalidArithmeticError, InvalidParameterError, ShapeMismatchError
from odisco.models.task import TaskKind
from odisco.services.imaging import dilate_mask, ensure_frame, ensure_mask, ensure_video

# Configure logging
logger = logging.getLogger(__name__)


class LatentProvider(Protocol):
    """Deterministic encoder from pixel space to latent space."""

    spatial_factor: int
    temporal_factor: int
    channels: int

    def encode_video(self, video: np.ndarray) -> np.ndarray: ...

    def encode_image(self, image: np.ndarray) -> np.ndarray: ...


def latent_frames(frames: int, temporal_factor: int) -> int:
    """Number of latent slots for a clip: 1 + ceil((F - 1) / temporal_factor)."""
    return 1 + math.ceil((frames - 1) / temporal_factor)


def _temporal_starts(frames: int, temporal_factor: int) -> Sequence[int]:
    return [0] + list(range(1, frames, temporal_factor))


def _reduce(data: np.ndarray, starts: Sequence[int], axis: int, how: str) -> np.ndarray:
    """Reduce consecutive segments beginning at ``starts`` along ``axis``."""
    indices = np.asarray(starts, dtype=np.intp)
    if how == "max":
        return np.maximum.reduceat(data, indices, axis=axis)

    sums = np.add.reduceat(data, indices, axis=axis)
    counts = np.diff(np.append(indices, data.shape[axis])).astype(np.float64)
    shape = [1] * data.ndim
    shape[axis] = len(counts)
    return sums / counts.reshape(shape)


def _pool_layout(data: np.ndarray, spatial: int, temporal: int, how: str) -> np.ndarray:
    """Pool an F x H x W (x C) array into the latent temporal/spatial layout."""
    frames, height, width = data.shape[:3]
    pooled = _reduce(data, _temporal_starts(frames, temporal), 0, how)
    pooled = _reduce(pooled, range(0, height, spatial), 1, how)
    return _reduce(pooled, range(0, width, spatial), 2, how)


@dataclass(frozen=True)
class MockLatentProvider:
    """
    Pooling stand-in for a video VAE.

    Intensities are scaled to [0, 1], averaged over ceil-sized spatial tiles
    and temporal groups, and the three colour channels are repeated
    cyclically up to ``channels``.
    """

    spatial_factor: int = 8
    temporal_factor: int = 4
    channels: int = 16

    def __post_init__(self) -> None:
        for name in ("spatial_factor", "temporal_factor", "channels"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise InvalidParameterError(f"{name} must be an integer >= 1, got {value}")

    def latent_shape(self, frames: int, height: int, width: int) -> Tuple[int, int, int, int]:
        return (
            latent_frames(frames, self.temporal_factor),
            math.ceil(height / self.spatial_factor),
            math.ceil(width / self.spatial_factor),
            self.channels,
        )

    def encode_video(self, video: np.ndarray) -> np.ndarray:
        data = ensure_video(video).astype(np.float64) / 255.0
        pooled = _pool_layout(data, self.spatial_factor, self.temporal_factor, "mean")
        projection = [index % pooled.shape[3] for index in range(self.channels)]
        return pooled[..., projection].astype(np.float32)

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        frame = ensure_frame(image, "reference image")
        if frame.ndim != 3 or frame.shape[2] != 3:
            raise InvalidParameterError(f"reference image must be HxWx3, got {frame.shape}")
        return self.encode_video(frame[np.newaxis])


def mock_latent_provider(spatial_factor: int = 8, temporal_factor: int = 4, channels: int = 16) -> MockLatentProvider:
    return MockLatentProvider(spatial_factor, temporal_factor, channels)


def downsample_mask(mask: np.ndarray, provider: LatentProvider) -> np.ndarray:
    """
    Reduce a pixel mask to the provider's latent grid.

    A latent cell is set when any pixel it covers is set. The result is
    broadcast across the provider's channels.

    Returns:
        uint8 array shaped like the provider's video latent
    """
    data = ensure_mask(mask)
    pooled = _pool_layout(data, provider.spatial_factor, provider.temporal_factor, "max")
    latent = np.repeat(pooled[..., np.newaxis], provider.channels, axis=3)
    return latent.astype(np.uint8)


def _require_finite(latent: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(latent)):
        raise InvalidArithmeticError(f"{name} contains non-finite values")


def compose_cfp(
    z_video: np.ndarray,
    z_image: np.ndarray,
    z_mask: np.ndarray,
    task: Union[str, TaskKind],
) -> np.ndarray:
    """
    Concatenate the image latent with the mask-preserved video latent.

    Args:
        z_video: F_l x H_l x W_l x C_l video latent
        z_image: 1 x H_l x W_l x C_l reference image latent
        z_mask: Binary latent mask shaped like z_video
        task: Editing task; style transfer zeroes the video slots

    Returns:
        F_l x H_l x W_l x C_l latent whose slot 0 is z_image

    Raises:
        ShapeMismatchError: If the latents do not line up or differ in dtype
    """
    kind = TaskKind.parse(task)
    z_video = np.asarray(z_video)
    z_image = np.asarray(z_image)
    z_mask = np.asarray(z_mask)

    if z_video.ndim != 4:
        raise ShapeMismatchError(f"video latent must be 4-dimensional, got {z_video.shape}")
    if z_image.ndim != 4 or z_image.shape[0] != 1:
        raise ShapeMismatchError(f"image latent must have exactly one temporal slot, got {z_image.shape}")
    if z_mask.shape != z_video.shape:
        raise ShapeMismatchError(f"latent mask shape {z_mask.shape} differs from video latent {z_video.shape}")
    if z_image.shape[1:] != z_video.shape[1:]:
        raise ShapeMismatchError(
            f"image latent {z_image.shape[1:]} does not match video latent {z_video.shape[1:]}"
        )
    if z_image.dtype != z_video.dtype:
        raise ShapeMismatchError(
            f"image latent dtype {z_image.dtype} differs from video latent dtype {z_video.dtype}"
        )
    if z_mask.size and not np.isin(z_mask, (0, 1)).all():
        raise InvalidParameterError("latent mask values must be 0 or 1")
    _require_finite(z_video, "video latent")
    _require_finite(z_image, "image latent")

    tail = z_video[1:]
    if kind.zeroes_video_latent:
        preserved = np.zeros_like(tail)
    else:
        preserved = np.where(z_mask[1:].astype(bool), 0, tail).astype(z_video.dtype)
    return np.concatenate([z_image, preserved], axis=0)


@dataclass
class CfpLatents:
    """Composed conditioning latents for one clip."""

    z_images: np.ndarray
    z_mask: np.ndarray
    task: TaskKind
    dilation_kernel: Optional[int] = None

    def to_sidecar(self) -> Dict[str, Any]:
        return {
            "task": self.task.value,
            "dilation_kernel": self.dilation_kernel,
            "z_images_shape": list(self.z_images.shape),
            "z_mask_shape": list(self.z_mask.shape),
        }


def prepare_cfp(
    video: np.ndarray,
    mask: np.ndarray,
    ref_image: np.ndarray,
    task: Union[str, TaskKind],
    provider: Optional[LatentProvider] = None,
    dilate: Optional[int] = None,
) -> CfpLatents:
    """
    Encode a clip and build its CFP latents.

    When ``dilate`` is given the pixel mask is dilated with that kernel
    before it is reduced to the latent grid.
    """
    kind = TaskKind.parse(task)
    provider = provider or MockLatentProvider()
    video = ensure_video(video)
    mask = ensure_mask(mask, video)
    image = ensure_frame(ref_image, "reference image")
    if image.shape != video.shape[1:]:
        raise ShapeMismatchError(
            f"reference image shape {image.shape} does not match frame shape {video.shape[1:]}"
        )

    if dilate is not None:
        mask = dilate_mask(mask, dilate)
        logger.debug(f"Mask dilated with a {dilate}x{dilate} kernel")

    z_video = provider.encode_video(video)
    z_image = provider.encode_image(image)
    z_mask = downsample_mask(mask, provider)
    z_images = compose_cfp(z_video, z_image, z_mask, kind)
    logger.info(f"Composed CFP latents {z_images.shape} for task {kind.value}")
    return CfpLatents(z_images=z_images, z_mask=z_mask, task=kind, dilation_kernel=dilate)
