"""
Tests for region metrics and the Normalized Average Score.
"""

import json
import logging
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import assume, given, settings, strategies as st

from odisco.errors import (
    DegenerateColumnError,
    DegenerateRegionError,
    InsufficientFramesError,
    ManifestError,
    MissingCellError,
)
from odisco.services.imaging import ssim_masked
from odisco.services.metrics import (
    Direction,
    MetricsConfig,
    MetricsTable,
    Region,
    evaluate_methods,
    load_metrics_config,
    load_metrics_csv,
    merge_tables,
    normalize_table,
    normalized_avg_score,
    parse_metrics_csv,
    psnr_region,
    score_report,
    select_task_columns,
    ssim_region,
    temporal_consistency_pixel,
)

FIXTURES = Path(__file__).parent / "fixtures"

REMOVAL_SCORES = {
    "VACE1.3B": 0.4233,
    "VACE14B": 0.1316,
    "Senorita": 0.7058,
    "VideoPainter": 0.0072,
    "ours": 1.000,
}
OUTPAINTING_SCORES = {
    "VACE1.3B": 0.6801,
    "VACE14B": 0.4972,
    "Senorita": 0.4784,
    "VideoPainter": 0.3384,
    "ours": 1.000,
}
SWAP_SCORES = {
    "VACE1.3B": 0.7068,
    "VACE14B": 0.6959,
    "Senorita": 0.4000,
    "VideoPainter": 0.4899,
    "ours": 0.6950,
}
LIGHTING_SCORES = {
    "VACE1.3B": 0.7700,
    "VACE14B": 0.5489,
    "Senorita": 0.4000,
    "VideoPainter": 0.4160,
    "ours": 0.8157,
}


def random_clip(frames=3, height=16, width=16, seed=0):
    rng = np.random.default_rng(seed)
    video = rng.integers(0, 256, size=(frames, height, width, 3), dtype=np.uint8)
    mask = np.zeros((frames, height, width), dtype=np.uint8)
    mask[:, 4:12, 4:12] = 1
    return video, mask


class TestPublishedScores:
    """Reproduction of published benchmark score columns."""

    @pytest.mark.parametrize(
        "fixture, task, expected",
        [
            ("removal_33.csv", "object-removal", REMOVAL_SCORES),
            ("outpainting.csv", "outpainting", OUTPAINTING_SCORES),
            ("swap.csv", "swap", SWAP_SCORES),
            ("lighting.csv", "lighting-transfer", LIGHTING_SCORES),
        ],
    )
    def test_scores_match_within_tolerance(self, fixture, task, expected):
        started = time.perf_counter()
        table = select_task_columns(load_metrics_csv(FIXTURES / fixture), task)
        scores = normalized_avg_score(table)
        elapsed = time.perf_counter() - started

        assert set(scores) == set(expected)
        for method, score in expected.items():
            assert scores[method] == pytest.approx(score, abs=0.002)
        assert elapsed < 1.0

    def test_clip_text_score_never_enters_the_average(self):
        report = score_report(select_task_columns(load_metrics_csv(FIXTURES / "outpainting.csv"), "outpainting"))
        assert "CLIP-T" not in report.normalized.columns
        assert np.isnan(report.table.values.loc["Senorita", "CLIP-T"])

    def test_lower_better_artfid_flips_in_lighting_transfer(self):
        report = score_report(select_task_columns(load_metrics_csv(FIXTURES / "lighting.csv"), "lighting-transfer"))
        artfid = report.normalized["ArtFID"]
        assert artfid["VACE1.3B"] == 1.0
        assert artfid["Senorita"] == 0.0
        assert artfid["ours"] == pytest.approx(0.435 / 0.487, abs=1e-9)

    def test_style_transfer_table(self, caplog):
        with caplog.at_level(logging.WARNING, logger="odisco.services.metrics"):
            table = select_task_columns(load_metrics_csv(FIXTURES / "style_transfer.csv"), "style-transfer")
        assert list(table.values.columns) == ["TC", "ArtFID", "CFSD"]
        assert "CLIP-T" in caplog.text

        report = score_report(table)
        assert report.normalized.loc["ours"].tolist() == [0.0, 1.0, 0.0]
        assert report.normalized.loc["Senorita2m"].tolist() == [1.0, 0.0, 1.0]
        assert report.scores["Senorita2m"] == pytest.approx(2 / 3)
        assert report.scores["ours"] == pytest.approx(1 / 3)

    def test_user_study_columns_stay_out_of_the_average(self):
        report = score_report(load_metrics_csv(FIXTURES / "style_transfer.csv"))
        assert list(report.normalized.columns) == ["TC", "ArtFID", "CFSD"]
        assert report.table.values.loc["ours", "EC"] == 4.322

    def test_dominating_method_scores_one_and_zero(self):
        scores = normalized_avg_score(load_metrics_csv(FIXTURES / "dominance.csv"))
        assert scores == {"best": 1.0, "worst": 0.0}


class TestNormalization:
    """Min-Max normalization of metric tables."""

    @given(
        values=st.lists(
            st.floats(min_value=-1e3, max_value=1e3, allow_nan=False), min_size=3, max_size=6, unique=True
        ),
        scale=st.floats(min_value=0.01, max_value=100.0),
        offset=st.floats(min_value=-100.0, max_value=100.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_scores_ignore_affine_rescaling(self, values, scale, offset):
        """
        **Property: Scale invariance**
        *For any* column and positive affine map, normalized scores are
        unchanged.
        """
        assume(max(values) - min(values) > 1.0)
        methods = [f"m{index}" for index in range(len(values))]
        original = MetricsTable.from_rows({m: {"PSNR": v} for m, v in zip(methods, values)})
        rescaled = MetricsTable.from_rows({m: {"PSNR": scale * v + offset} for m, v in zip(methods, values)})

        first = normalized_avg_score(original)
        second = normalized_avg_score(rescaled)
        for method in methods:
            assert second[method] == pytest.approx(first[method], abs=1e-6)
            assert 0.0 <= first[method] <= 1.0

    def test_lower_better_columns_are_flipped(self):
        table = MetricsTable.from_rows({"a": {"FVD": 100.0}, "b": {"FVD": 300.0}, "c": {"FVD": 200.0}})
        assert normalized_avg_score(table) == {"a": 1.0, "b": 0.0, "c": 0.5}

    def test_constant_column_is_dropped(self, caplog):
        table = MetricsTable.from_rows({"a": {"TC": 0.9, "PSNR": 20.0}, "b": {"TC": 0.9, "PSNR": 30.0}})
        with caplog.at_level(logging.WARNING, logger="odisco.services.metrics"):
            report = score_report(table)
        assert report.dropped == ["TC"]
        assert report.scores == {"a": 0.0, "b": 1.0}
        assert "constant" in caplog.text

    def test_all_constant_columns_are_rejected(self):
        table = MetricsTable.from_rows({"a": {"TC": 0.9}, "b": {"TC": 0.9}})
        with pytest.raises(DegenerateColumnError):
            normalize_table(table)

    def test_missing_averaged_cell_is_rejected(self):
        table = parse_metrics_csv("method,PSNR,SSIM\na,20,0.8\nb,-,0.9\n")
        with pytest.raises(MissingCellError) as excinfo:
            normalize_table(table)
        assert excinfo.value.details["metric"] == "PSNR"
        assert excinfo.value.details["method"] == "b"

    def test_single_method_is_rejected(self):
        with pytest.raises(DegenerateColumnError):
            normalize_table(MetricsTable.from_rows({"only": {"PSNR": 20.0}}))

    def test_unknown_metric_defaults_to_higher_better(self, caplog):
        with caplog.at_level(logging.WARNING, logger="odisco.services.metrics"):
            table = MetricsTable.from_rows({"a": {"Novel": 1.0}, "b": {"Novel": 2.0}})
        assert table.specs["Novel"].direction is Direction.HIGHER
        assert normalized_avg_score(table) == {"a": 0.0, "b": 1.0}
        assert "Novel" in caplog.text

    def test_report_serialization(self, tmp_path):
        report = score_report(load_metrics_csv(FIXTURES / "dominance.csv"))
        report.write_csv(tmp_path / "scores.csv")
        report.write_json(tmp_path / "scores.json")

        frame = pd.read_csv(tmp_path / "scores.csv", index_col="method")
        assert frame.loc["best", "score"] == 1.0
        payload = json.loads((tmp_path / "scores.json").read_text())
        assert payload["scores"] == {"best": 1.0, "worst": 0.0}
        assert payload["dropped_columns"] == []


class TestTables:
    """CSV ingestion, task column selection and merging."""

    @pytest.mark.parametrize("marker", ["", "-", "\\"])
    def test_missing_markers(self, marker):
        table = parse_metrics_csv(f"method,PSNR,SSIM\na,{marker},0.8\nb,21,0.9\n")
        assert np.isnan(table.values.loc["a", "PSNR"])
        assert table.values.loc["b", "PSNR"] == 21.0

    def test_non_numeric_cell_is_rejected(self):
        with pytest.raises(ManifestError):
            parse_metrics_csv("method,PSNR\na,high\nb,20\n")

    def test_unreadable_file_is_rejected(self, tmp_path):
        with pytest.raises(ManifestError):
            load_metrics_csv(tmp_path / "absent.csv")

    def test_task_columns_keep_configured_order(self, caplog):
        table = parse_metrics_csv("method,PSNR_P,TC,SSIM_P\na,30,0.9,0.9\nb,20,0.8,0.8\n")
        with caplog.at_level(logging.WARNING, logger="odisco.services.metrics"):
            selected = select_task_columns(table, "swap")
        assert list(selected.values.columns) == ["TC", "PSNR_P", "SSIM_P"]
        assert "FVD" in caplog.text

    def test_task_without_any_column_is_rejected(self):
        table = parse_metrics_csv("method,VQ\na,1\nb,2\n")
        with pytest.raises(ManifestError):
            select_task_columns(table, "object-removal")

    def test_ingested_values_win_on_merge(self):
        pixel = MetricsTable.from_rows({"a": {"PSNR_P": 30.0, "TC_pixel": 0.9}, "b": {"PSNR_P": 20.0, "TC_pixel": 0.8}})
        ingested = MetricsTable.from_rows({"a": {"PSNR_P": 31.0, "FVD": 100.0}, "c": {"PSNR_P": 25.0, "FVD": 200.0}})
        merged = merge_tables(pixel, ingested)

        assert merged.methods == ["a", "b", "c"]
        assert list(merged.values.columns) == ["PSNR_P", "TC_pixel", "FVD"]
        assert merged.values.loc["a", "PSNR_P"] == 31.0
        assert merged.values.loc["b", "PSNR_P"] == 20.0
        assert np.isnan(merged.values.loc["b", "FVD"])

    def test_config_overrides(self, tmp_path):
        path = tmp_path / "metrics.json"
        path.write_text(
            json.dumps(
                {
                    "metrics": {"Latency": {"direction": "lower-better"}},
                    "tasks": {"swap": ["PSNR_P", "Latency"]},
                }
            )
        )
        config = load_metrics_config(path)
        assert config.specs["Latency"].direction is Direction.LOWER
        assert config.task_columns["swap"] == ["PSNR_P", "Latency"]
        assert MetricsConfig().task_columns["swap"][0] == "TC"

    def test_config_with_unknown_direction_is_rejected(self):
        with pytest.raises(ManifestError):
            MetricsConfig().updated({"X": {"direction": "sideways"}})

    def test_app_settings_are_applied(self):
        config = MetricsConfig.from_app_config({"METRIC_SPECS": {"TC_pixel": {"include_in_avg": True}}})
        assert config.specs["TC_pixel"].include_in_avg
        assert not MetricsConfig().specs["TC_pixel"].include_in_avg


class TestRegionMetrics:
    """PSNR, SSIM and temporal consistency in pixel space."""

    def test_identical_clips_hit_the_psnr_cap(self):
        video, mask = random_clip()
        assert psnr_region(video, video, mask, Region.PRESERVED) == 100.0
        assert psnr_region(video, video, mask, "edited", cap=60.0) == 60.0

    def test_unit_offset_psnr(self):
        video = np.full((2, 8, 8, 3), 100, dtype=np.uint8)
        mask = np.zeros((2, 8, 8), dtype=np.uint8)
        assert psnr_region(video + 1, video, mask, Region.PRESERVED) == pytest.approx(48.1308, abs=1e-4)

    def test_full_frame_region_equals_global_psnr(self):
        first, mask = random_clip(seed=1)
        second, _ = random_clip(seed=2)
        mask[:] = 1
        diff = first.astype(np.float64) - second.astype(np.float64)
        expected = 10.0 * np.log10(255.0**2 / np.mean(diff * diff))
        assert psnr_region(first, second, mask, Region.EDITED) == pytest.approx(expected, abs=1e-9)

    def test_edited_psnr_ignores_the_preserved_region(self):
        video, mask = random_clip()
        changed = video.copy()
        changed[mask == 0] = 255 - changed[mask == 0]
        assert psnr_region(changed, video, mask, Region.EDITED) == 100.0
        assert psnr_region(changed, video, mask, Region.PRESERVED) < 20.0

    def test_empty_region_is_rejected(self):
        video, mask = random_clip()
        mask[:] = 0
        with pytest.raises(DegenerateRegionError):
            psnr_region(video, video, mask, Region.EDITED)
        with pytest.raises(DegenerateRegionError):
            ssim_region(video, video, mask, Region.EDITED)

    @given(seed=st.integers(min_value=0, max_value=2**16))
    @settings(max_examples=20, deadline=None)
    def test_region_ssim_is_symmetric(self, seed):
        """
        **Property: Symmetry**
        *For any* two clips and mask, SSIM over a region does not depend on
        argument order and equals 1 when the clips are identical.
        """
        first, mask = random_clip(seed=seed)
        second, _ = random_clip(seed=seed + 1)
        forward = ssim_region(first, second, mask, Region.PRESERVED)
        backward = ssim_region(second, first, mask, Region.PRESERVED)
        assert forward == pytest.approx(backward, abs=1e-12)
        assert ssim_region(first, first, mask, Region.PRESERVED) == 1.0

    def test_full_region_ssim_equals_global_mean(self):
        first, mask = random_clip(seed=3)
        second, _ = random_clip(seed=4)
        mask[:] = 1
        expected = np.mean([ssim_masked(first[t], second[t]) for t in range(3)])
        assert ssim_region(first, second, mask, Region.EDITED) == pytest.approx(expected, abs=1e-12)

    def test_region_ssim_skips_frames_without_region(self):
        first, mask = random_clip(seed=5)
        second, _ = random_clip(seed=6)
        mask[1:] = 0
        expected = ssim_masked(first[0], second[0], mask[0])
        assert ssim_region(first, second, mask, Region.EDITED) == pytest.approx(expected, abs=1e-12)

    def test_temporal_consistency(self):
        still = np.repeat(random_clip(frames=1)[0], 4, axis=0)
        assert temporal_consistency_pixel(still) == 1.0

        noisy = still.copy()
        noisy[2] = np.random.default_rng(9).integers(0, 256, size=noisy[2].shape, dtype=np.uint8)
        assert temporal_consistency_pixel(noisy) < 1.0

        with pytest.raises(InsufficientFramesError):
            temporal_consistency_pixel(still[:1])

    def test_self_comparison_table(self):
        video, mask = random_clip()
        table = evaluate_methods(video, mask, {"self": video}, background=video)
        row = table.values.loc["self"]
        assert row["PSNR_P"] == 100.0
        assert row["SSIM_P"] == 1.0
        assert row["PSNR_E"] == 100.0
        assert row["SSIM_E"] == 1.0

    def test_full_mask_skips_preserved_metrics(self, caplog):
        video, mask = random_clip()
        mask[:] = 1
        with caplog.at_level(logging.WARNING, logger="odisco.services.metrics"):
            table = evaluate_methods(video, mask, {"a": video, "b": 255 - video})
        assert "PSNR_P" not in table.values.columns
        assert "TC_pixel" in table.values.columns
        assert "preserved" in caplog.text
