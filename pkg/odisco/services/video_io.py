"""
Deterministic ingestion and serialization of clips, latents and manifests.

Videos and masks are directories of zero-padded, numerically named lossless
frames (PNG by default). Latents use a small raw tensor format:

    b"ODSC" | version (u8) | dtype code (u8) | ndim (u8) | dims (u32 LE each) | payload

with dtype code 1 for uint8 and 2 for little-endian float32, payload
row-major.
"""

import json
import logging
import os
import shutil
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from odisco.errors import (
    FrameDimensionError,
    LossySourceError,
    ManifestError,
    MissingFrameError,
    TensorFormatError,
)
from odisco.models.task import TaskKind
from odisco.services.imaging import map_frames

# Configure logging
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

LOSSLESS_SUFFIXES = frozenset({".png", ".bmp", ".tif", ".tiff"})
LOSSY_SUFFIXES = frozenset({".jpg", ".jpeg", ".webp"})
FRAME_NAME = "{index:05d}.png"
DEFAULT_MASK_THRESHOLD = 128

TENSOR_MAGIC = b"ODSC"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sBBB")
_DTYPE_CODES: Dict[int, np.dtype] = {1: np.dtype(np.uint8), 2: np.dtype("<f4")}


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


def _frame_files(directory: Path) -> Dict[int, Path]:
    if not directory.is_dir():
        raise MissingFrameError(f"Frame directory {directory} does not exist", directory=directory)

    found: Dict[int, Path] = {}
    for entry in directory.iterdir():
        if not entry.is_file() or not entry.stem.isdigit():
            continue
        suffix = entry.suffix.lower()
        if suffix in LOSSY_SUFFIXES:
            raise LossySourceError(f"Frame {entry.name} uses a lossy format", path=entry)
        if suffix not in LOSSLESS_SUFFIXES:
            continue
        index = int(entry.stem)
        if index in found:
            raise ManifestError(
                f"Frame index {index} appears twice in {directory}", index=index, directory=directory
            )
        found[index] = entry
    return found


def _decode(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert(mode), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise ManifestError(f"Cannot decode image {path}: {e}", path=path) from e


def _check_dims(frame: np.ndarray, height: Optional[int], width: Optional[int], label: str) -> None:
    if (height is not None and frame.shape[0] != height) or (width is not None and frame.shape[1] != width):
        raise FrameDimensionError(
            f"{label} is {frame.shape[0]}x{frame.shape[1]}, expected {height}x{width}",
            expected=(height, width),
            actual=frame.shape[:2],
        )


def _load_directory(
    directory: PathLike,
    mode: str,
    frames: Optional[int],
    height: Optional[int],
    width: Optional[int],
    workers: Optional[int],
) -> np.ndarray:
    directory = Path(directory)
    files = _frame_files(directory)
    count = frames if frames is not None else (max(files) + 1 if files else 0)
    if count == 0:
        raise MissingFrameError(f"No frames found in {directory}", index=0, directory=directory)

    for index in range(count):
        if index not in files:
            raise MissingFrameError(
                f"Frame {index} is missing from {directory}", index=index, directory=directory
            )
    extra = sorted(index for index in files if index >= count)
    if extra:
        raise FrameDimensionError(
            f"{directory} holds {len(files)} frames, expected {count}", expected=count, actual=len(files)
        )

    decoded = map_frames(lambda index: _decode(files[index], mode), range(count), workers)
    first = decoded[0]
    _check_dims(first, height, width, f"{directory} frame 0")
    for index, frame in enumerate(decoded[1:], start=1):
        _check_dims(frame, first.shape[0], first.shape[1], f"{directory} frame {index}")
    return np.stack(decoded)


def load_frames(
    directory: PathLike,
    frames: Optional[int] = None,
    height: Optional[int] = None,
    width: Optional[int] = None,
    workers: Optional[int] = None,
) -> np.ndarray:
    """
    Load an RGB frame directory as an F x H x W x 3 uint8 video.

    Frames are ordered by their numeric file name, whatever order the
    filesystem lists them in.

    Raises:
        MissingFrameError: If the directory is absent or an index is missing
        FrameDimensionError: If the frame count or any frame size is wrong
        LossySourceError: If any frame is JPEG or WebP
    """
    video = _load_directory(directory, "RGB", frames, height, width, workers)
    logger.debug(f"Loaded {video.shape[0]} frames of {video.shape[1]}x{video.shape[2]} from {directory}")
    return video


def load_mask_video(
    directory: PathLike,
    frames: Optional[int] = None,
    height: Optional[int] = None,
    width: Optional[int] = None,
    threshold: int = DEFAULT_MASK_THRESHOLD,
    workers: Optional[int] = None,
) -> np.ndarray:
    """Load grayscale mask frames binarized at ``threshold`` (>= threshold is 1)."""
    gray = _load_directory(directory, "L", frames, height, width, workers)
    return (gray >= threshold).astype(np.uint8)


def load_image(path: PathLike, height: Optional[int] = None, width: Optional[int] = None) -> np.ndarray:
    """Load a lossless reference image as H x W x 3 uint8."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"Reference image {path} does not exist", path=path)
    if path.suffix.lower() in LOSSY_SUFFIXES:
        raise LossySourceError(f"Reference image {path.name} uses a lossy format", path=path)
    image = _decode(path, "RGB")
    _check_dims(image, height, width, f"reference image {path.name}")
    return image


def save_frames(video: np.ndarray, directory: PathLike) -> List[Path]:
    """
    Write frames as zero-padded PNG files.

    Accepts F x H x W x 3 colour or F x H x W grayscale uint8 arrays.
    """
    data = np.asarray(video)
    if data.dtype != np.uint8 or data.ndim not in (3, 4):
        raise FrameDimensionError(f"Cannot save array of shape {data.shape} and dtype {data.dtype} as frames")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    paths = []
    for index, frame in enumerate(data):
        path = directory / FRAME_NAME.format(index=index)
        Image.fromarray(np.ascontiguousarray(frame)).save(path, format="PNG")
        paths.append(path)
    return paths


def save_image(image: np.ndarray, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PNG")
    return path


# ---------------------------------------------------------------------------
# Raw tensors
# ---------------------------------------------------------------------------


def encode_tensor(array: np.ndarray) -> bytes:
    data = np.asarray(array)
    if data.dtype == np.uint8:
        code = 1
    elif data.dtype.kind == "f" and data.dtype.itemsize == 4:
        code = 2
    else:
        raise TensorFormatError(f"Unsupported tensor dtype {data.dtype}", code="bad_dtype")
    if data.ndim > 255:
        raise TensorFormatError(f"Too many dimensions: {data.ndim}", code="bad_dtype")

    header = _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, code, data.ndim)
    dims = struct.pack(f"<{data.ndim}I", *data.shape)
    payload = np.ascontiguousarray(data, dtype=_DTYPE_CODES[code]).tobytes(order="C")
    return header + dims + payload


def decode_tensor(blob: bytes) -> np.ndarray:
    """
    Raises:
        TensorFormatError: With code bad_magic, bad_version, bad_dtype or
            length_mismatch
    """
    if blob[:4] != TENSOR_MAGIC:
        raise TensorFormatError("Not a raw tensor file", code="bad_magic")
    if len(blob) < _HEADER.size:
        raise TensorFormatError("Truncated tensor header", code="length_mismatch")
    _, version, code, ndim = _HEADER.unpack_from(blob)
    if version != TENSOR_VERSION:
        raise TensorFormatError(f"Unsupported tensor version {version}", code="bad_version", version=version)
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"Unknown dtype code {code}", code="bad_dtype", dtype_code=code)

    offset = _HEADER.size + 4 * ndim
    if len(blob) < offset:
        raise TensorFormatError("Truncated tensor dimensions", code="length_mismatch")
    shape = struct.unpack_from(f"<{ndim}I", blob, _HEADER.size)
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise TensorFormatError(
            f"Payload holds {len(blob) - offset} bytes, expected {expected}",
            code="length_mismatch",
            expected=expected,
            actual=len(blob) - offset,
        )
    return np.frombuffer(blob, dtype=dtype, offset=offset).reshape(shape).copy()


def save_tensor(array: np.ndarray, path: PathLike) -> Path:
    path = Path(path)
    path.write_bytes(encode_tensor(array))
    return path


def load_tensor(path: PathLike) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Manifests and sidecars
# ---------------------------------------------------------------------------


def _read_manifest(path: PathLike) -> Tuple[Path, Dict[str, Any]]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"Manifest {path} does not exist", path=path) from None
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"Cannot read manifest {path}: {e}", path=path) from e
    if not isinstance(raw, dict):
        raise ManifestError(f"Manifest {path} must be a JSON object", path=path)
    return path.parent, raw


def _require(raw: Mapping[str, Any], key: str, kind: type) -> Any:
    if key not in raw:
        raise ManifestError(f"Manifest is missing '{key}'", key=key)
    value = raw[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int) or value < 1):
        raise ManifestError(f"Manifest '{key}' must be a positive integer, got {value!r}", key=key)
    if kind is str and not isinstance(value, str):
        raise ManifestError(f"Manifest '{key}' must be a string, got {value!r}", key=key)
    return value


@dataclass
class ClipManifest:
    """One reference video, its mask video and the reference image."""

    video_dir: Path
    mask_dir: Path
    image_path: Path
    task: TaskKind
    frames: int
    height: int
    width: int
    seed: Optional[int] = None
    params: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(cls, path: PathLike) -> "ClipManifest":
        """
        Read a clip manifest. Relative paths resolve against the manifest's directory.

        Raises:
            ManifestError: If a required key is missing or malformed
            UnknownTaskError: If the task is not in the catalogue
        """
        base, raw = _read_manifest(path)
        seed = raw.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
            raise ManifestError(f"Manifest 'seed' must be a non-negative integer, got {seed!r}", key="seed")
        params = raw.get("params") or {}
        if not isinstance(params, dict):
            raise ManifestError("Manifest 'params' must be an object", key="params")
        return cls(
            video_dir=base / _require(raw, "video", str),
            mask_dir=base / _require(raw, "mask", str),
            image_path=base / _require(raw, "image", str),
            task=TaskKind.parse(_require(raw, "task", str)),
            frames=_require(raw, "frames", int),
            height=_require(raw, "height", int),
            width=_require(raw, "width", int),
            seed=seed,
            params=dict(params),
        )

    def load_video(self, workers: Optional[int] = None) -> np.ndarray:
        return load_frames(self.video_dir, self.frames, self.height, self.width, workers)

    def load_mask(self, threshold: int = DEFAULT_MASK_THRESHOLD, workers: Optional[int] = None) -> np.ndarray:
        return load_mask_video(self.mask_dir, self.frames, self.height, self.width, threshold, workers)

    def load_image(self) -> np.ndarray:
        return load_image(self.image_path, self.height, self.width)


@dataclass
class EvaluationManifest:
    """Reference clip, mask, optional background and per-method outputs."""

    reference_dir: Path
    mask_dir: Path
    outputs: Dict[str, Path]
    task: TaskKind
    frames: int
    height: int
    width: int
    background_dir: Optional[Path] = None

    @classmethod
    def load(cls, path: PathLike) -> "EvaluationManifest":
        base, raw = _read_manifest(path)
        outputs = raw.get("outputs")
        if not isinstance(outputs, dict) or not outputs:
            raise ManifestError("Manifest 'outputs' must map method names to frame directories", key="outputs")
        background = raw.get("background")
        return cls(
            reference_dir=base / _require(raw, "reference", str),
            mask_dir=base / _require(raw, "mask", str),
            outputs={str(method): base / str(directory) for method, directory in outputs.items()},
            task=TaskKind.parse(_require(raw, "task", str)),
            frames=_require(raw, "frames", int),
            height=_require(raw, "height", int),
            width=_require(raw, "width", int),
            background_dir=base / background if background else None,
        )

    def load_reference(self, workers: Optional[int] = None) -> np.ndarray:
        return load_frames(self.reference_dir, self.frames, self.height, self.width, workers)

    def load_mask(self, threshold: int = DEFAULT_MASK_THRESHOLD, workers: Optional[int] = None) -> np.ndarray:
        return load_mask_video(self.mask_dir, self.frames, self.height, self.width, threshold, workers)

    def load_background(self, workers: Optional[int] = None) -> Optional[np.ndarray]:
        if self.background_dir is None:
            return None
        return load_frames(self.background_dir, self.frames, self.height, self.width, workers)

    def load_outputs(self, workers: Optional[int] = None) -> Dict[str, np.ndarray]:
        return {
            method: load_frames(directory, self.frames, self.height, self.width, workers)
            for method, directory in self.outputs.items()
        }


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Enum):
        return value.value
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_sidecar(path: PathLike, record: Mapping[str, Any]) -> Path:
    """Write a sorted-key JSON record next to an artifact."""
    path = Path(path)
    path.write_text(
        json.dumps(dict(record), indent=2, sort_keys=True, default=_json_default) + "\n",
        encoding="utf-8",
    )
    return path


def read_sidecar(path: PathLike) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


@contextmanager
def staged_output(target: PathLike) -> Iterator[Path]:
    """
    Yield a temporary sibling directory that replaces ``target`` on success.

    On any exception the staging directory is removed and ``target`` is left
    as it was.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    os.chmod(staging, 0o755)
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    if target.is_dir() and not target.is_symlink():
        shutil.rmtree(target)
    elif target.exists():
        target.unlink()
    os.replace(staging, target)
    logger.debug(f"Published {target}")
