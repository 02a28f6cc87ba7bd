"""
Command line interface.

``python run.py <subcommand>`` (or ``python -m odisco``) runs one pipeline
step per invocation. Every subcommand stages its output next to ``--out`` and
only replaces ``--out`` once everything was written, so a failed run leaves
no partial output. Failures print a one-line JSON error report on stderr and
exit with 2 (input error), 3 (invariant violation) or 4 (internal error).
"""

import functools
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click
from flask import current_app
from flask.cli import FlaskGroup, with_appcontext

from odisco.errors import (
    DegenerateColumnError,
    InvalidKernelError,
    InvalidParameterError,
    ManifestError,
    build_error_report,
)
from odisco.models.task import TaskKind
from odisco.services.adaptive_distorter import (
    ADAPTIVE_FIELDS,
    run_adaptive_distorter,
    validate_adaptive_overrides,
)
from odisco.services.cfp import MockLatentProvider, prepare_cfp
from odisco.services.imaging import sample_dilation_kernel
from odisco.services.metrics import (
    MetricsConfig,
    MetricsTable,
    ScoreReport,
    evaluate_methods,
    load_metrics_config,
    load_metrics_csv,
    merge_tables,
    score_report,
    select_task_columns,
)
from odisco.services.random_distorter import (
    PARAM_FIELDS,
    apply_random_distorter,
    as_generator,
    resolve_random_params,
    validate_random_overrides,
)
from odisco.services.run_registry import list_runs, record_run
from odisco.services.video_io import (
    ClipManifest,
    EvaluationManifest,
    save_frames,
    save_tensor,
    staged_output,
    write_sidecar,
)

logger = logging.getLogger(__name__)

SIDECAR_NAME = "sidecar.json"


@dataclass
class RunConfig:
    """Settings of one subcommand invocation."""

    subcommand: str
    out: Path
    manifest: Optional[Path] = None
    seed: Optional[int] = None
    task: Optional[str] = None
    random_overrides: Dict[str, Any] = field(default_factory=dict)
    adaptive_overrides: Dict[str, Any] = field(default_factory=dict)
    dilate: Optional[int] = None
    random_dilate: bool = False
    metrics_config: Optional[Path] = None
    ingest_csv: Optional[Path] = None
    threads: Optional[int] = None
    verbose: int = 0

    def validate(self) -> "RunConfig":
        """
        Check overrides against the invariants of the module that owns them.

        Raises:
            InvalidParameterError: For out-of-range overrides or thread counts
            InvalidKernelError: For an even or non-positive dilation kernel
            UnknownTaskError: For a task outside the catalogue
        """
        validate_random_overrides(self.random_overrides)
        validate_adaptive_overrides(self.adaptive_overrides)
        if self.dilate is not None and (self.dilate < 1 or self.dilate % 2 == 0):
            raise InvalidKernelError(f"dilation kernel must be an odd integer >= 1, got {self.dilate}")
        if self.dilate is not None and self.random_dilate:
            raise InvalidParameterError("--dilate and --random-dilate are mutually exclusive")
        if self.threads is not None and self.threads < 1:
            raise InvalidParameterError(f"--threads must be >= 1, got {self.threads}")
        if self.seed is not None and self.seed < 0:
            raise InvalidParameterError(f"--seed must be >= 0, got {self.seed}")
        if self.task is not None:
            TaskKind.parse(self.task)
        return self

    @property
    def workers(self) -> int:
        return self.threads or current_app.config.get("MAX_WORKERS") or 1

    def resolve_seed(self, manifest_seed: Optional[int] = None) -> int:
        if self.seed is not None:
            return self.seed
        if manifest_seed is not None:
            return manifest_seed
        return int(current_app.config.get("DEFAULT_SEED", 0))

    def resolve_task(self, manifest_task: Optional[TaskKind] = None) -> Optional[TaskKind]:
        if self.task is not None:
            return TaskKind.parse(self.task)
        return manifest_task


def _given(values: Dict[str, Any]) -> Dict[str, Any]:
    return {name: value for name, value in values.items() if value is not None}


def reported(command: Callable[..., None]) -> Callable[..., None]:
    """Turn any failure into a JSON error report on stderr and its exit status."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            command(*args, **kwargs)
        except (click.exceptions.Exit, click.ClickException, click.Abort):
            raise
        except Exception as e:
            report = build_error_report(e, context=command.__name__.replace("_", "-"))
            if report.exit_code == 4:
                logger.error(f"{command.__name__} failed: {e}", exc_info=True)
            else:
                logger.warning(f"{command.__name__} failed: {report.code}: {report.message}")
            click.echo(json.dumps(report.to_dict(), sort_keys=True), err=True)
            raise SystemExit(report.exit_code)

    return wrapper


def _prepare(config: RunConfig) -> RunConfig:
    from odisco import set_verbosity

    set_verbosity(current_app, config.verbose)
    return config.validate()


def _load_clip(config: RunConfig):
    if config.manifest is None:
        raise ManifestError("--manifest is required")
    manifest = ClipManifest.load(config.manifest)
    threshold = current_app.config.get("MASK_THRESHOLD", 128)
    video = manifest.load_video(config.workers)
    mask = manifest.load_mask(threshold, config.workers)
    return manifest, video, mask


def _finish(config: RunConfig, task: Optional[TaskKind], seed: Optional[int], parameters: Dict[str, Any]) -> None:
    record_run(
        config.subcommand,
        str(config.out),
        task=task.value if task else None,
        seed=seed,
        parameters=parameters,
    )
    logger.info(f"{config.subcommand} wrote {config.out}")
    click.echo(str(config.out))


manifest_option = click.option(
    "--manifest", type=click.Path(path_type=Path), help="Clip manifest (JSON)."
)
out_option = click.option(
    "--out", required=True, type=click.Path(path_type=Path), help="Output directory."
)
seed_option = click.option("--seed", type=int, default=None, help="Random seed.")
task_option = click.option("--task", default=None, help="Editing task (overrides the manifest).")
threads_option = click.option("--threads", type=int, default=None, help="Frame-level worker threads.")
verbose_option = click.option("-v", "--verbose", count=True, help="Repeat for more log output.")


@click.command("distort-random")
@manifest_option
@out_option
@seed_option
@click.option("--theta", type=float, default=None, help="Scaling factor in [1.5, 3].")
@click.option("--channel", "target_channel", type=int, default=None, help="Target channel 0, 1 or 2.")
@click.option("--delta", type=int, default=None, help="Colour offset: -100, -50, 50 or 100.")
@click.option("--block", type=int, default=None, help="Mosaic block size.")
@click.option("--mode", type=int, default=None, help="0 multiplies by theta, 1 divides.")
@threads_option
@verbose_option
@with_appcontext
@reported
def distort_random(manifest, out, seed, theta, target_channel, delta, block, mode, threads, verbose):
    """Write the random distortion control signal for a clip."""
    config = _prepare(
        RunConfig(
            "distort-random",
            out,
            manifest=manifest,
            seed=seed,
            random_overrides=_given(
                dict(theta=theta, target_channel=target_channel, delta=delta, block=block, mode=mode)
            ),
            threads=threads,
            verbose=verbose,
        )
    )
    clip, video, mask = _load_clip(config)
    seed = config.resolve_seed(clip.seed)
    overrides = {name: clip.params[name] for name in PARAM_FIELDS if clip.params.get(name) is not None}
    overrides.update(config.random_overrides)

    params, overridden = resolve_random_params(seed, overrides)
    control = apply_random_distorter(video, mask, params, workers=config.workers)

    sidecar = {"seed": seed, "params": params.to_dict(), "overridden": overridden, "frames": video.shape[0]}
    with staged_output(config.out) as stage:
        save_frames(control, stage / "frames")
        write_sidecar(stage / SIDECAR_NAME, sidecar)
    _finish(config, clip.task, seed, sidecar)


@click.command("distort-adaptive")
@manifest_option
@out_option
@task_option
@click.option("--alpha", type=float, default=None, help="Contrast factor.")
@click.option("--sigma", type=float, default=None, help="Blur sigma.")
@click.option("--kernel", "k", type=int, default=None, help="Odd blur kernel size.")
@threads_option
@verbose_option
@with_appcontext
@reported
def distort_adaptive(manifest, out, task, alpha, sigma, k, threads, verbose):
    """Write the adaptive distortion control signal for a clip."""
    config = _prepare(
        RunConfig(
            "distort-adaptive",
            out,
            manifest=manifest,
            task=task,
            adaptive_overrides=_given(dict(alpha=alpha, sigma=sigma, k=k)),
            threads=threads,
            verbose=verbose,
        )
    )
    clip, video, mask = _load_clip(config)
    image = clip.load_image()
    kind = config.resolve_task(clip.task)
    overrides = {name: clip.params[name] for name in ADAPTIVE_FIELDS if clip.params.get(name) is not None}
    overrides.update(config.adaptive_overrides)

    result = run_adaptive_distorter(
        kind,
        video,
        mask,
        image,
        overrides=overrides,
        canny_low=current_app.config.get("CANNY_LOW_THRESHOLD", 100.0),
        canny_high=current_app.config.get("CANNY_HIGH_THRESHOLD", 200.0),
        canny_sigma=current_app.config.get("CANNY_SMOOTHING_SIGMA", 1.4),
        canny_size=current_app.config.get("CANNY_SMOOTHING_SIZE", 5),
        workers=config.workers,
    )

    sidecar = result.to_sidecar()
    with staged_output(config.out) as stage:
        save_frames(result.video, stage / "frames")
        write_sidecar(stage / SIDECAR_NAME, sidecar)
    _finish(config, kind, None, sidecar)


@click.command("cfp")
@manifest_option
@out_option
@task_option
@seed_option
@click.option("--dilate", type=int, default=None, help="Odd pixel dilation kernel for the mask.")
@click.option("--random-dilate", is_flag=True, help="Sample the dilation kernel with --seed.")
@threads_option
@verbose_option
@with_appcontext
@reported
def cfp(manifest, out, task, seed, dilate, random_dilate, threads, verbose):
    """Write the copy-form preservation latents for a clip."""
    config = _prepare(
        RunConfig(
            "cfp",
            out,
            manifest=manifest,
            task=task,
            seed=seed,
            dilate=dilate,
            random_dilate=random_dilate,
            threads=threads,
            verbose=verbose,
        )
    )
    clip, video, mask = _load_clip(config)
    image = clip.load_image()
    kind = config.resolve_task(clip.task)

    seed_used = None
    kernel = config.dilate
    if config.random_dilate:
        seed_used = config.resolve_seed(clip.seed)
        kernel = sample_dilation_kernel(as_generator(seed_used))

    settings = current_app.config
    provider = MockLatentProvider(
        settings.get("LATENT_SPATIAL_FACTOR", 8),
        settings.get("LATENT_TEMPORAL_FACTOR", 4),
        settings.get("LATENT_CHANNELS", 16),
    )
    latents = prepare_cfp(video, mask, image, kind, provider=provider, dilate=kernel)

    sidecar = latents.to_sidecar()
    sidecar.update(seed=seed_used, provider=asdict(provider))
    with staged_output(config.out) as stage:
        save_tensor(latents.z_images, stage / "z_images.odsc")
        save_tensor(latents.z_mask, stage / "z_mask.odsc")
        write_sidecar(stage / SIDECAR_NAME, sidecar)
    _finish(config, kind, seed_used, sidecar)


def _score(table: MetricsTable, kind: Optional[TaskKind], metrics: MetricsConfig) -> Optional[ScoreReport]:
    """Score report for the table, or None when it cannot be normalized."""
    try:
        scored = select_task_columns(table, kind, metrics) if kind else table
    except ManifestError as e:
        logger.warning(f"{e.message}; skipping normalized scores")
        return None
    if len(scored.methods) < 2:
        logger.warning("Fewer than two methods; skipping normalized scores")
        return None
    try:
        return score_report(scored)
    except DegenerateColumnError as e:
        logger.warning(f"{e.message}; skipping normalized scores")
        return None


@click.command("evaluate")
@manifest_option
@out_option
@task_option
@click.option("--ingest-csv", type=click.Path(path_type=Path), default=None, help="Externally computed metrics.")
@click.option("--metrics-config", type=click.Path(path_type=Path), default=None, help="Metric directions and task columns (JSON).")
@threads_option
@verbose_option
@with_appcontext
@reported
def evaluate(manifest, out, task, ingest_csv, metrics_config, threads, verbose):
    """Compute pixel metrics, merge ingested metrics and score every method."""
    config = _prepare(
        RunConfig(
            "evaluate",
            out,
            manifest=manifest,
            task=task,
            ingest_csv=ingest_csv,
            metrics_config=metrics_config,
            threads=threads,
            verbose=verbose,
        )
    )
    if config.manifest is None and config.ingest_csv is None:
        raise ManifestError("evaluate needs --manifest, --ingest-csv or both")

    settings = current_app.config
    metrics = MetricsConfig.from_app_config(settings)
    if config.metrics_config is not None:
        metrics = load_metrics_config(config.metrics_config, base=metrics)

    table = None
    manifest_task = None
    if config.manifest is not None:
        plan = EvaluationManifest.load(config.manifest)
        manifest_task = plan.task
        table = evaluate_methods(
            plan.load_reference(config.workers),
            plan.load_mask(settings.get("MASK_THRESHOLD", 128), config.workers),
            plan.load_outputs(config.workers),
            background=plan.load_background(config.workers),
            config=metrics,
            psnr_cap=settings.get("PSNR_CAP_DB", 100.0),
            window_size=settings.get("SSIM_WINDOW_SIZE", 11),
            window_sigma=settings.get("SSIM_WINDOW_SIGMA", 1.5),
            workers=config.workers,
        )
    if config.ingest_csv is not None:
        ingested = load_metrics_csv(config.ingest_csv, metrics)
        table = ingested if table is None else merge_tables(table, ingested)

    kind = config.resolve_task(manifest_task)
    report = _score(table, kind, metrics)

    with staged_output(config.out) as stage:
        table.values.to_csv(stage / "metrics.csv", index_label="method")
        if report is not None:
            report.write_csv(stage / "scores.csv")
            report.write_json(stage / "scores.json")

    parameters = {"methods": table.methods, "scores": report.scores if report else None}
    _finish(config, kind, None, parameters)


@click.command("runs")
@click.option("--limit", type=int, default=20, help="Number of runs to list.")
@click.option("--subcommand", default=None, help="Only list runs of this subcommand.")
@with_appcontext
def runs(limit, subcommand):
    """List recent runs from the run registry, one JSON object per line."""
    for run in list_runs(limit=limit, subcommand=subcommand):
        click.echo(json.dumps(run.to_dict(), sort_keys=True))


COMMANDS = (distort_random, distort_adaptive, cfp, evaluate, runs)


def register_commands(app):
    """Attach the toolkit subcommands to the application's CLI group."""
    for command in COMMANDS:
        app.cli.add_command(command)


def _create_app():
    from odisco import create_app

    return create_app(os.environ.get("ODISCO_ENV", "production"))


@click.group(cls=FlaskGroup, create_app=_create_app, add_version_option=False)
def cli():
    """O-DisCo conditioning and evaluation toolkit."""


def main():
    cli(prog_name="odisco")
