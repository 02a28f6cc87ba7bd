"""
Score aggregation routes blueprint.
"""

from flask import Blueprint, current_app, jsonify, request

from odisco.errors import ManifestError
from odisco.services.metrics import (
    MetricsConfig,
    parse_metrics_csv,
    score_report,
    select_task_columns,
)

# Create blueprint for score routes
scores_bp = Blueprint("scores", __name__)


@scores_bp.route("/scores", methods=["POST"])
def normalized_scores():
    """
    Compute Normalized Average Scores for a metrics CSV.

    The CSV comes either as a ``file`` upload or as the raw request body. An
    optional ``task`` query parameter restricts the table to that task's
    columns.
    """
    upload = request.files.get("file")
    if upload is not None:
        text = upload.read().decode("utf-8")
    else:
        text = request.get_data(as_text=True)
    if not text.strip():
        raise ManifestError("Request carries no metrics CSV")

    config = MetricsConfig.from_app_config(current_app.config)
    table = parse_metrics_csv(text, config)
    task = request.args.get("task")
    if task:
        table = select_task_columns(table, task, config)

    report = score_report(table)
    current_app.logger.info(f"Scored {len(report.scores)} methods over {len(report.normalized.columns)} columns")
    return jsonify(report.to_dict())
