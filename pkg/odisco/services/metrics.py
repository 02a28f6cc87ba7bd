"""
Region-restricted fidelity metrics and Min-Max score aggregation.

Pixel metrics (PSNR and SSIM over the edited or preserved region, plus a
pixel-space temporal consistency) are computed here. Neural metrics such as
FVD or CLIP scores are never computed; they are ingested from CSV files and
aggregated together with the pixel metrics into a Normalized Average Score.
"""

import io
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, IO, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from odisco.errors import (
    DegenerateColumnError,
    DegenerateRegionError,
    InsufficientFramesError,
    ManifestError,
    MissingCellError,
)
from odisco.models.task import TaskKind
from odisco.services.imaging import (
    DEFAULT_SSIM_SIGMA,
    DEFAULT_SSIM_WINDOW,
    ensure_mask,
    ensure_video,
    map_frames,
    require_same_shape,
    ssim_masked,
)

# Configure logging
logger = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0
MISSING_MARKERS = ["", "-", "\\"]


class Direction(Enum):
    """Which way a metric improves."""

    HIGHER = "higher-better"
    LOWER = "lower-better"


class Region(Enum):
    """Part of the frame a region metric looks at."""

    EDITED = "edited"
    PRESERVED = "preserved"


@dataclass(frozen=True)
class MetricSpec:
    name: str
    direction: Direction = Direction.HIGHER
    include_in_avg: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {"direction": self.direction.value, "include_in_avg": self.include_in_avg}


def _spec(name: str, direction: Direction = Direction.HIGHER, include: bool = True) -> MetricSpec:
    return MetricSpec(name, direction, include)


DEFAULT_METRIC_SPECS: Dict[str, MetricSpec] = {
    spec.name: spec
    for spec in (
        _spec("TC"),
        _spec("FVD", Direction.LOWER),
        _spec("PSNR"),
        _spec("SSIM"),
        _spec("PSNR_E"),
        _spec("SSIM_E"),
        _spec("CLIP-T", include=False),
        _spec("CLIP-I_E"),
        _spec("PSNR_P"),
        _spec("SSIM_P"),
        _spec("ArtFID", Direction.LOWER),
        _spec("CFSD", Direction.LOWER),
        _spec("TC_pixel", include=False),
        _spec("EC", include=False),
        _spec("VQ", include=False),
    )
}

_APPEARANCE_COLUMNS = ["TC", "ArtFID", "CLIP-T", "CLIP-I_E", "PSNR_P", "SSIM_P"]
_SUBJECT_COLUMNS = ["TC", "FVD", "CLIP-T", "CLIP-I_E", "PSNR_P", "SSIM_P"]

DEFAULT_TASK_COLUMNS: Dict[str, List[str]] = {
    TaskKind.OBJECT_REMOVAL.value: ["TC", "FVD", "PSNR", "SSIM", "SSIM_E", "PSNR_E"],
    TaskKind.OUTPAINTING.value: ["TC", "FVD", "PSNR", "CLIP-T", "PSNR_P", "SSIM_P"],
    TaskKind.MOTION_TRANSFER.value: list(_APPEARANCE_COLUMNS),
    TaskKind.LIGHTING_TRANSFER.value: list(_APPEARANCE_COLUMNS),
    TaskKind.COLOR_CHANGE.value: list(_APPEARANCE_COLUMNS),
    TaskKind.SWAP.value: list(_SUBJECT_COLUMNS),
    TaskKind.ADDITION.value: list(_SUBJECT_COLUMNS),
    TaskKind.STYLE_TRANSFER.value: ["TC", "ArtFID", "CLIP-T", "CFSD", "PSNR_P", "SSIM_P"],
}


def parse_metric_specs(entries: Mapping[str, Any]) -> Dict[str, MetricSpec]:
    """
    Build MetricSpecs from a ``{name: {"direction": ..., "include_in_avg": ...}}`` mapping.

    Raises:
        ManifestError: If a direction is not recognised
    """
    specs = {}
    for name, entry in entries.items():
        entry = entry or {}
        try:
            direction = Direction(entry.get("direction", Direction.HIGHER.value))
        except ValueError:
            raise ManifestError(
                f"Unknown direction '{entry.get('direction')}' for metric {name}", metric=name
            ) from None
        specs[name] = MetricSpec(name, direction, bool(entry.get("include_in_avg", True)))
    return specs


@dataclass
class MetricsConfig:
    """Metric directions and per-task column sets in effect for one run."""

    specs: Dict[str, MetricSpec] = field(default_factory=lambda: dict(DEFAULT_METRIC_SPECS))
    task_columns: Dict[str, List[str]] = field(
        default_factory=lambda: {task: list(cols) for task, cols in DEFAULT_TASK_COLUMNS.items()}
    )

    def updated(
        self,
        specs: Optional[Mapping[str, Any]] = None,
        task_columns: Optional[Mapping[str, Sequence[str]]] = None,
    ) -> "MetricsConfig":
        """Return a copy with the given entries added or replaced."""
        merged = MetricsConfig(dict(self.specs), {k: list(v) for k, v in self.task_columns.items()})
        if specs:
            merged.specs.update(parse_metric_specs(specs))
        for task, columns in (task_columns or {}).items():
            merged.task_columns[TaskKind.parse(task).value] = list(columns)
        return merged

    @classmethod
    def from_app_config(cls, settings: Mapping[str, Any]) -> "MetricsConfig":
        """Defaults updated with the METRIC_SPECS and TASK_METRIC_COLUMNS settings."""
        return cls().updated(settings.get("METRIC_SPECS"), settings.get("TASK_METRIC_COLUMNS"))

    def spec_for(self, name: str) -> MetricSpec:
        if name not in self.specs:
            logger.warning(f"No spec for metric column '{name}'; treating it as higher-better")
            return MetricSpec(name)
        return self.specs[name]


def load_metrics_config(path: Union[str, Path], base: Optional[MetricsConfig] = None) -> MetricsConfig:
    """
    Load a JSON metrics config with optional ``metrics`` and ``tasks`` sections.

    Raises:
        ManifestError: If the file cannot be read or parsed
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"Cannot read metrics config {path}: {e}", path=path) from e
    if not isinstance(raw, dict):
        raise ManifestError(f"Metrics config {path} must be a JSON object", path=path)
    return (base or MetricsConfig()).updated(raw.get("metrics"), raw.get("tasks"))


@dataclass
class MetricsTable:
    """Methods x metrics matrix; missing cells are NaN."""

    values: pd.DataFrame
    specs: Dict[str, MetricSpec]

    def __post_init__(self) -> None:
        unknown = [name for name in self.values.columns if name not in self.specs]
        if unknown:
            raise ManifestError(f"Metric columns without a spec: {', '.join(map(str, unknown))}")
        self.values = self.values.astype(float)
        self.values.index.name = "method"

    @property
    def methods(self) -> List[str]:
        return [str(name) for name in self.values.index]

    @property
    def columns(self) -> List[MetricSpec]:
        return [self.specs[name] for name in self.values.columns]

    @classmethod
    def from_rows(
        cls,
        rows: Mapping[str, Mapping[str, Optional[float]]],
        config: Optional[MetricsConfig] = None,
    ) -> "MetricsTable":
        """Build a table from ``{method: {metric: value}}``; None marks a missing cell."""
        config = config or MetricsConfig()
        frame = pd.DataFrame.from_dict(
            {method: dict(cells) for method, cells in rows.items()}, orient="index"
        )
        frame = frame.apply(pd.to_numeric, errors="raise")
        return cls(frame, {name: config.spec_for(name) for name in frame.columns})


# ---------------------------------------------------------------------------
# Pixel metrics
# ---------------------------------------------------------------------------


def region_mask(mask: np.ndarray, region: Union[str, Region]) -> np.ndarray:
    """Boolean selection of the edited (mask = 1) or preserved (mask = 0) pixels."""
    selected = np.asarray(mask).astype(bool)
    return selected if Region(region) is Region.EDITED else ~selected


def psnr_region(
    a: np.ndarray,
    b: np.ndarray,
    mask: np.ndarray,
    region: Union[str, Region],
    cap: float = PSNR_CAP_DB,
) -> float:
    """
    PSNR over the pixels of one region, across all frames and channels.

    Identical content returns ``cap``.

    Raises:
        DegenerateRegionError: If the region selects no pixel
    """
    first = ensure_video(a)
    second = ensure_video(b)
    require_same_shape(first, second, "videos")
    selected = region_mask(ensure_mask(mask, first), region)
    if not selected.any():
        raise DegenerateRegionError(f"The {Region(region).value} region is empty")

    diff = first[selected].astype(np.float64) - second[selected].astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(255.0**2 / mse))


def ssim_region(
    a: np.ndarray,
    b: np.ndarray,
    mask: np.ndarray,
    region: Union[str, Region],
    window_size: int = DEFAULT_SSIM_WINDOW,
    window_sigma: float = DEFAULT_SSIM_SIGMA,
    workers: Optional[int] = None,
) -> float:
    """
    Mean masked SSIM over the frames in which the region is not empty.

    Raises:
        DegenerateRegionError: If the region is empty in every frame
    """
    first = ensure_video(a)
    second = ensure_video(b)
    require_same_shape(first, second, "videos")
    selected = region_mask(ensure_mask(mask, first), region)
    frames = [t for t in range(first.shape[0]) if selected[t].any()]
    if not frames:
        raise DegenerateRegionError(f"The {Region(region).value} region is empty")

    def frame_ssim(t: int) -> float:
        return ssim_masked(first[t], second[t], selected[t], window_size, window_sigma)

    return float(np.mean(map_frames(frame_ssim, frames, workers)))


def temporal_consistency_pixel(
    video: np.ndarray,
    window_size: int = DEFAULT_SSIM_WINDOW,
    window_sigma: float = DEFAULT_SSIM_SIGMA,
    workers: Optional[int] = None,
) -> float:
    """Mean global SSIM between consecutive frames."""
    frames = ensure_video(video)
    if frames.shape[0] < 2:
        raise InsufficientFramesError(
            f"Temporal consistency needs at least 2 frames, got {frames.shape[0]}"
        )

    def pair(t: int) -> float:
        return ssim_masked(frames[t - 1], frames[t], None, window_size, window_sigma)

    return float(np.mean(map_frames(pair, range(1, frames.shape[0]), workers)))


def evaluate_methods(
    reference: np.ndarray,
    mask: np.ndarray,
    outputs: Mapping[str, np.ndarray],
    background: Optional[np.ndarray] = None,
    config: Optional[MetricsConfig] = None,
    psnr_cap: float = PSNR_CAP_DB,
    window_size: int = DEFAULT_SSIM_WINDOW,
    window_sigma: float = DEFAULT_SSIM_SIGMA,
    workers: Optional[int] = None,
) -> MetricsTable:
    """
    Compute pixel metrics for each method's output video.

    PSNR_P and SSIM_P compare the output with the reference over the
    preserved region, TC_pixel scores the output alone, and PSNR_E / SSIM_E
    compare the edited region with a background video when one is given.
    """
    reference = ensure_video(reference, "reference video")
    mask = ensure_mask(mask, reference)
    if background is not None:
        background = ensure_video(background, "background video")
        require_same_shape(reference, background, "reference and background videos")
    has_preserved = bool((mask == 0).any())
    if not has_preserved:
        logger.warning("Mask covers every pixel; skipping preserved-region metrics")

    rows: Dict[str, Dict[str, Optional[float]]] = {}
    for method, output in outputs.items():
        output = ensure_video(output, f"output of {method}")
        require_same_shape(reference, output, f"reference and {method} output")
        row: Dict[str, Optional[float]] = {}
        if has_preserved:
            row["PSNR_P"] = psnr_region(output, reference, mask, Region.PRESERVED, psnr_cap)
            row["SSIM_P"] = ssim_region(
                output, reference, mask, Region.PRESERVED, window_size, window_sigma, workers
            )
        row["TC_pixel"] = (
            temporal_consistency_pixel(output, window_size, window_sigma, workers)
            if output.shape[0] >= 2
            else None
        )
        if background is not None:
            row["PSNR_E"] = psnr_region(output, background, mask, Region.EDITED, psnr_cap)
            row["SSIM_E"] = ssim_region(
                output, background, mask, Region.EDITED, window_size, window_sigma, workers
            )
        rows[method] = row
        logger.debug(f"Pixel metrics for {method}: {row}")

    return MetricsTable.from_rows(rows, config)


# ---------------------------------------------------------------------------
# Tables and aggregation
# ---------------------------------------------------------------------------


def load_metrics_csv(
    source: Union[str, Path, IO[str]], config: Optional[MetricsConfig] = None
) -> MetricsTable:
    """
    Read a metrics CSV: first column is the method name, header row names the
    metrics. Empty, "-" and "\\" cells are missing.

    Raises:
        ManifestError: If the file cannot be parsed or holds non-numeric cells
    """
    try:
        frame = pd.read_csv(
            source,
            index_col=0,
            na_values=MISSING_MARKERS,
            keep_default_na=False,
            skipinitialspace=True,
        )
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise ManifestError(f"Cannot read metrics CSV: {e}") from e

    frame.columns = [str(name).strip() for name in frame.columns]
    frame.index = [str(name).strip() for name in frame.index]
    try:
        frame = frame.apply(pd.to_numeric, errors="raise")
    except (ValueError, TypeError) as e:
        raise ManifestError(f"Metrics CSV holds a non-numeric cell: {e}") from e

    config = config or MetricsConfig()
    return MetricsTable(frame, {name: config.spec_for(name) for name in frame.columns})


def parse_metrics_csv(text: str, config: Optional[MetricsConfig] = None) -> MetricsTable:
    return load_metrics_csv(io.StringIO(text), config)


def select_task_columns(
    table: MetricsTable, task: Union[str, TaskKind], config: Optional[MetricsConfig] = None
) -> MetricsTable:
    """
    Keep the columns configured for a task, in configured order.

    Columns absent from the table are skipped with a warning.
    """
    kind = TaskKind.parse(task)
    wanted = (config or MetricsConfig()).task_columns.get(kind.value)
    if not wanted:
        raise ManifestError(f"No metric columns configured for task {kind.value}", task=kind.value)

    present = [name for name in wanted if name in table.values.columns]
    absent = [name for name in wanted if name not in table.values.columns]
    if absent:
        logger.warning(f"Task {kind.value}: metric columns not in table: {', '.join(absent)}")
    if not present:
        raise ManifestError(f"None of the {kind.value} metric columns are in the table", task=kind.value)
    return MetricsTable(table.values[present].copy(), {name: table.specs[name] for name in present})


def merge_tables(pixel: MetricsTable, ingested: MetricsTable) -> MetricsTable:
    """
    Outer-join two tables on method name.

    Where both tables have a value for the same cell the ingested one wins.
    """
    overlap = [name for name in pixel.values.columns if name in ingested.values.columns]
    if overlap:
        logger.info(f"Ingested values take precedence for columns: {', '.join(overlap)}")
    merged = ingested.values.combine_first(pixel.values)
    order = list(pixel.values.columns) + [c for c in ingested.values.columns if c not in pixel.values.columns]
    methods = list(pixel.values.index) + [m for m in ingested.values.index if m not in pixel.values.index]
    specs = {**pixel.specs, **ingested.specs}
    return MetricsTable(merged.loc[methods, order], {name: specs[name] for name in order})


def normalize_table(table: MetricsTable) -> Tuple[pd.DataFrame, List[str]]:
    """
    Min-Max normalize every averaged column so the best method gets 1.

    Returns:
        Tuple of (normalized frame, names of constant columns that were dropped)

    Raises:
        DegenerateColumnError: With fewer than two methods or no usable column
        MissingCellError: If an averaged column has a missing cell
    """
    if len(table.methods) < 2:
        raise DegenerateColumnError(
            f"Min-Max normalization needs at least two methods, got {len(table.methods)}"
        )

    included = [spec for spec in table.columns if spec.include_in_avg]
    normalized: Dict[str, pd.Series] = {}
    dropped: List[str] = []
    for spec in included:
        column = table.values[spec.name]
        missing = column[column.isna()]
        if not missing.empty:
            raise MissingCellError(
                f"Missing value for {spec.name} (method {missing.index[0]})",
                metric=spec.name,
                method=missing.index[0],
            )
        lo, hi = float(column.min()), float(column.max())
        if hi == lo:
            logger.warning(f"Column {spec.name} is constant; dropping it from the average")
            dropped.append(spec.name)
            continue
        if spec.direction is Direction.HIGHER:
            normalized[spec.name] = (column - lo) / (hi - lo)
        else:
            normalized[spec.name] = (hi - column) / (hi - lo)

    if not normalized:
        raise DegenerateColumnError("No metric column is left to average")
    return pd.DataFrame(normalized, index=table.values.index), dropped


def normalized_avg_score(table: MetricsTable) -> Dict[str, float]:
    """Mean of the normalized averaged columns, per method."""
    normalized, _ = normalize_table(table)
    return {str(method): float(score) for method, score in normalized.mean(axis=1).items()}


@dataclass
class ScoreReport:
    """Normalized scores plus the table they came from."""

    table: MetricsTable
    normalized: pd.DataFrame
    scores: Dict[str, float]
    dropped: List[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        frame = self.table.values.copy()
        frame["score"] = pd.Series(self.scores)
        return frame

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scores": dict(self.scores),
            "columns": [name for name in self.normalized.columns],
            "dropped_columns": list(self.dropped),
            "normalized": {
                str(method): {name: float(value) for name, value in row.items()}
                for method, row in self.normalized.iterrows()
            },
        }

    def write_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index_label="method")

    def write_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def score_report(table: MetricsTable) -> ScoreReport:
    normalized, dropped = normalize_table(table)
    scores = {str(method): float(score) for method, score in normalized.mean(axis=1).items()}
    return ScoreReport(table=table, normalized=normalized, scores=scores, dropped=dropped)

