"""
Run registry routes blueprint.
"""

from flask import Blueprint, jsonify, request

from odisco.services.run_registry import list_runs

# Create blueprint for run registry routes
runs_bp = Blueprint("runs", __name__)


@runs_bp.route("/runs")
def recent_runs():
    """List recent runs, newest first."""
    limit = request.args.get("limit", default=20, type=int)
    subcommand = request.args.get("subcommand")
    runs = list_runs(limit=max(1, min(limit, 500)), subcommand=subcommand)
    return jsonify({"runs": [run.to_dict() for run in runs]})
