"""
Tests for frame directories, raw tensors and manifests.
"""

import json
import os
import random

import numpy as np
import pytest
from PIL import Image

from odisco.errors import (
    FrameDimensionError,
    LossySourceError,
    ManifestError,
    MissingFrameError,
    TensorFormatError,
    UnknownTaskError,
)
from odisco.models.task import TaskKind
from odisco.services.video_io import (
    ClipManifest,
    EvaluationManifest,
    decode_tensor,
    encode_tensor,
    load_frames,
    load_image,
    load_mask_video,
    load_tensor,
    read_sidecar,
    save_frames,
    save_image,
    save_tensor,
    staged_output,
    write_sidecar,
)


def indexed_video(frames=4, height=8, width=12):
    """Video whose frame t is filled with the value t."""
    video = np.zeros((frames, height, width, 3), dtype=np.uint8)
    for index in range(frames):
        video[index] = index
    return video


def write_clip(root, frames=3, height=8, width=12):
    video = indexed_video(frames, height, width)
    mask = np.zeros(video.shape[:3], dtype=np.uint8)
    mask[:, 2:6, 3:9] = 255
    save_frames(video, root / "video")
    save_frames(mask, root / "mask")
    save_image(video[0], root / "ref.png")
    return video, mask // 255


class TestFrameDirectories:
    """Loading ordered lossless frame sequences."""

    def test_full_length_clip_keeps_numeric_order(self, tmp_path):
        video = indexed_video(frames=49)
        save_frames(video, tmp_path / "frames")
        loaded = load_frames(tmp_path / "frames", frames=49, height=8, width=12)
        assert loaded.shape == (49, 8, 12, 3)
        assert np.array_equal(loaded, video)

    def test_files_written_out_of_order(self, tmp_path):
        directory = tmp_path / "frames"
        directory.mkdir()
        indices = list(range(12))
        random.Random(3).shuffle(indices)
        for index in indices:
            Image.fromarray(np.full((4, 4, 3), index, dtype=np.uint8)).save(directory / f"{index}.png")
        loaded = load_frames(directory)
        assert [int(frame[0, 0, 0]) for frame in loaded] == list(range(12))

    def test_missing_last_frame_is_named(self, tmp_path):
        save_frames(indexed_video(frames=49), tmp_path / "frames")
        os.remove(tmp_path / "frames" / "00048.png")
        with pytest.raises(MissingFrameError) as excinfo:
            load_frames(tmp_path / "frames", frames=49)
        assert excinfo.value.details["index"] == 48

    def test_missing_directory(self, tmp_path):
        with pytest.raises(MissingFrameError):
            load_frames(tmp_path / "absent")

    def test_extra_frames_are_rejected(self, tmp_path):
        save_frames(indexed_video(frames=5), tmp_path / "frames")
        with pytest.raises(FrameDimensionError):
            load_frames(tmp_path / "frames", frames=4)

    def test_lossy_frame_is_rejected(self, tmp_path):
        save_frames(indexed_video(frames=2), tmp_path / "frames")
        Image.fromarray(np.zeros((8, 12, 3), dtype=np.uint8)).save(tmp_path / "frames" / "00002.jpg")
        with pytest.raises(LossySourceError):
            load_frames(tmp_path / "frames")

    def test_frame_of_another_size_is_rejected(self, tmp_path):
        save_frames(indexed_video(frames=3), tmp_path / "frames")
        Image.fromarray(np.zeros((8, 10, 3), dtype=np.uint8)).save(tmp_path / "frames" / "00001.png")
        with pytest.raises(FrameDimensionError):
            load_frames(tmp_path / "frames")

    def test_declared_size_is_enforced(self, tmp_path):
        save_frames(indexed_video(frames=2), tmp_path / "frames")
        with pytest.raises(FrameDimensionError):
            load_frames(tmp_path / "frames", height=480, width=720)

    def test_mask_threshold(self, tmp_path):
        gray = np.array([[[0, 127, 128, 255]]], dtype=np.uint8)
        save_frames(gray, tmp_path / "mask")
        assert load_mask_video(tmp_path / "mask").ravel().tolist() == [0, 0, 1, 1]
        assert load_mask_video(tmp_path / "mask", threshold=1).ravel().tolist() == [0, 1, 1, 1]

    def test_reference_image(self, tmp_path):
        image = np.arange(8 * 12 * 3, dtype=np.uint8).reshape(8, 12, 3)
        save_image(image, tmp_path / "ref.png")
        assert np.array_equal(load_image(tmp_path / "ref.png", 8, 12), image)
        with pytest.raises(FrameDimensionError):
            load_image(tmp_path / "ref.png", 16, 12)
        with pytest.raises(ManifestError):
            load_image(tmp_path / "absent.png")


class TestRawTensors:
    """The ODSC raw tensor format."""

    def test_uint8_round_trip(self, tmp_path):
        mask = (np.arange(2 * 3 * 4 * 5) % 2).astype(np.uint8).reshape(2, 3, 4, 5)
        loaded = load_tensor(save_tensor(mask, tmp_path / "mask.odsc"))
        assert loaded.dtype == np.uint8
        assert np.array_equal(loaded, mask)

    def test_float32_layout(self):
        latent = np.array([[1.5, -2.0]], dtype=">f4")
        blob = encode_tensor(latent)
        assert blob[:7] == b"ODSC\x01\x02\x02"
        assert blob[7:15] == b"\x01\x00\x00\x00\x02\x00\x00\x00"
        assert blob[15:] == np.array([1.5, -2.0], dtype="<f4").tobytes()
        assert decode_tensor(blob).tolist() == [[1.5, -2.0]]

    def test_unsupported_dtype(self):
        with pytest.raises(TensorFormatError) as excinfo:
            encode_tensor(np.zeros(3, dtype=np.float64))
        assert excinfo.value.code == "bad_dtype"

    @pytest.mark.parametrize(
        "corrupt, code",
        [
            (lambda blob: b"XXXX" + blob[4:], "bad_magic"),
            (lambda blob: blob[:4] + b"\x02" + blob[5:], "bad_version"),
            (lambda blob: blob[:5] + b"\x07" + blob[6:], "bad_dtype"),
            (lambda blob: blob[:-1], "length_mismatch"),
            (lambda blob: blob + b"\x00", "length_mismatch"),
            (lambda blob: blob[:9], "length_mismatch"),
        ],
    )
    def test_corrupted_blobs(self, corrupt, code):
        blob = encode_tensor(np.ones((2, 3), dtype=np.float32))
        with pytest.raises(TensorFormatError) as excinfo:
            decode_tensor(corrupt(blob))
        assert excinfo.value.code == code


class TestManifests:
    """Clip and evaluation manifests."""

    def test_clip_manifest_resolves_relative_paths(self, tmp_path):
        video, mask = write_clip(tmp_path)
        (tmp_path / "clip.json").write_text(
            json.dumps(
                {
                    "video": "video",
                    "mask": "mask",
                    "image": "ref.png",
                    "task": "Swap",
                    "frames": 3,
                    "height": 8,
                    "width": 12,
                    "seed": 11,
                }
            )
        )
        manifest = ClipManifest.load(tmp_path / "clip.json")
        assert manifest.task is TaskKind.SWAP
        assert manifest.seed == 11
        assert np.array_equal(manifest.load_video(), video)
        assert np.array_equal(manifest.load_mask(), mask)
        assert np.array_equal(manifest.load_image(), video[0])

    @pytest.mark.parametrize(
        "patch, error",
        [
            ({"frames": 0}, ManifestError),
            ({"frames": "3"}, ManifestError),
            ({"seed": -1}, ManifestError),
            ({"task": "colorize"}, UnknownTaskError),
            ({"video": None}, ManifestError),
        ],
    )
    def test_malformed_clip_manifest(self, tmp_path, patch, error):
        raw = {"video": "v", "mask": "m", "image": "i.png", "task": "swap", "frames": 3, "height": 8, "width": 12}
        raw.update(patch)
        (tmp_path / "clip.json").write_text(json.dumps(raw))
        with pytest.raises(error):
            ClipManifest.load(tmp_path / "clip.json")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            ClipManifest.load(tmp_path / "absent.json")

    def test_evaluation_manifest(self, tmp_path):
        video, mask = write_clip(tmp_path)
        save_frames(255 - video, tmp_path / "out_a")
        (tmp_path / "eval.json").write_text(
            json.dumps(
                {
                    "reference": "video",
                    "mask": "mask",
                    "outputs": {"a": "out_a", "b": "video"},
                    "task": "swap",
                    "frames": 3,
                    "height": 8,
                    "width": 12,
                }
            )
        )
        manifest = EvaluationManifest.load(tmp_path / "eval.json")
        outputs = manifest.load_outputs()
        assert list(outputs) == ["a", "b"]
        assert np.array_equal(outputs["a"], 255 - video)
        assert manifest.load_background() is None

    def test_evaluation_manifest_needs_outputs(self, tmp_path):
        (tmp_path / "eval.json").write_text(json.dumps({"reference": "v", "mask": "m", "outputs": {}}))
        with pytest.raises(ManifestError):
            EvaluationManifest.load(tmp_path / "eval.json")


class TestOutputs:
    """Sidecars and atomic output directories."""

    def test_sidecar_serializes_numpy_values(self, tmp_path):
        path = write_sidecar(
            tmp_path / "sidecar.json",
            {"seed": np.int64(4), "theta": np.float32(2.5), "task": TaskKind.SWAP, "shape": np.array([1, 2])},
        )
        assert read_sidecar(path) == {"seed": 4, "theta": 2.5, "task": "swap", "shape": [1, 2]}
        assert path.read_text().index('"seed"') < path.read_text().index('"task"')

    def test_staged_output_replaces_target(self, tmp_path):
        target = tmp_path / "out"
        target.mkdir()
        (target / "stale.txt").write_text("old")
        with staged_output(target) as staging:
            (staging / "fresh.txt").write_text("new")
        assert sorted(p.name for p in target.iterdir()) == ["fresh.txt"]
        assert sorted(p.name for p in tmp_path.iterdir()) == ["out"]

    def test_failed_stage_leaves_target_untouched(self, tmp_path):
        target = tmp_path / "out"
        target.mkdir()
        (target / "kept.txt").write_text("old")
        with pytest.raises(RuntimeError):
            with staged_output(target) as staging:
                (staging / "partial.txt").write_text("half")
                raise RuntimeError("interrupted")
        assert sorted(p.name for p in target.iterdir()) == ["kept.txt"]
        assert sorted(p.name for p in tmp_path.iterdir()) == ["out"]

    def test_failed_stage_creates_nothing(self, tmp_path):
        with pytest.raises(ValueError):
            with staged_output(tmp_path / "new"):
                raise ValueError("boom")
        assert list(tmp_path.iterdir()) == []
