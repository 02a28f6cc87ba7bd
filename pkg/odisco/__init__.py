import logging
import os
from pathlib import Path

from flask import Flask, jsonify
from flask_sqlalchemy import SQLAlchemy
from werkzeug.exceptions import HTTPException

from config import config

# Initialize extensions
db = SQLAlchemy()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def create_app(config_name=None):
    """Application factory pattern."""
    config_name = config_name or os.environ.get("ODISCO_ENV", "default")
    app = Flask(__name__, instance_relative_config=True)

    # Load configuration
    app.config.from_object(config[config_name])

    # The run registry database lives in the instance folder
    Path(app.instance_path).mkdir(exist_ok=True)

    # Load instance configuration if it exists
    try:
        app.config.from_pyfile("config.py")
    except FileNotFoundError:
        # Instance config is optional
        pass

    # Configure logging
    configure_logging(app)

    # Initialize extensions with app
    db.init_app(app)

    # Import models to ensure they are registered with SQLAlchemy
    from odisco.models import RunRecord  # noqa: F401

    # Register error handlers
    register_error_handlers(app)

    # Register blueprints
    from odisco.routes import health_bp, runs_bp, scores_bp

    app.register_blueprint(health_bp)
    app.register_blueprint(scores_bp)
    app.register_blueprint(runs_bp)

    # Register command line subcommands
    from odisco.cli import register_commands

    register_commands(app)

    return app


def _replace_handler(logger, handler):
    for existing in [h for h in logger.handlers if getattr(h, "_odisco", False)]:
        if type(existing) is type(handler):
            logger.removeHandler(existing)
            existing.close()
    handler._odisco = True
    logger.addHandler(handler)


def configure_logging(app):
    """
    Configure logging on the application logger.

    Service modules log under ``odisco.*`` and propagate here.
    """
    if app.testing:
        return

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    if app.debug:
        # Console logging for development
        console_handler.setLevel(logging.DEBUG)
        _replace_handler(app.logger, console_handler)
        app.logger.setLevel(logging.DEBUG)
        return

    console_handler.setLevel(logging.WARNING)
    _replace_handler(app.logger, console_handler)
    app.logger.setLevel(logging.INFO)

    log_file = app.config.get("LOG_FILE")
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(
            logging.Formatter(
                "%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]"
            )
        )
        file_handler.setLevel(logging.INFO)
        _replace_handler(app.logger, file_handler)


def set_verbosity(app, verbose):
    """Lower the console threshold: -v shows INFO, -vv shows DEBUG."""
    if verbose <= 0:
        return
    level = logging.INFO if verbose == 1 else logging.DEBUG
    for handler in app.logger.handlers:
        if isinstance(handler, logging.FileHandler) or not getattr(handler, "_odisco", False):
            continue
        handler.setLevel(min(handler.level, level))
    app.logger.setLevel(min(app.logger.level or logging.WARNING, level))


def register_error_handlers(app):
    """Register global error handlers returning JSON error reports."""
    from flask import request

    from odisco.errors import ErrorCategory, ODiscoError, build_error_report

    @app.errorhandler(ODiscoError)
    def toolkit_error(error):
        """Handle toolkit errors raised while serving a request."""
        app.logger.warning(f"{error.code} on {request.path}: {error.message}")
        status = 422 if error.category is ErrorCategory.INVARIANT else 400
        return jsonify(build_error_report(error).to_dict()), status

    @app.errorhandler(HTTPException)
    def http_error(error):
        """Handle 4xx/5xx raised by Flask itself."""
        app.logger.warning(f"{error.code} error: {request.url}")
        return jsonify({"error_code": error.name.lower().replace(" ", "_"), "message": error.description}), error.code

    @app.errorhandler(Exception)
    def handle_exception(error):
        """Handle all other unhandled exceptions."""
        app.logger.error(f"Unhandled exception: {str(error)}", exc_info=True)

        # Rollback any pending database transactions
        db.session.rollback()

        return jsonify(build_error_report(error).to_dict()), 500
