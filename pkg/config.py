import os
from pathlib import Path


def _env_int(name, default):
    value = os.environ.get(name)
    return int(value) if value else default


def _env_float(name, default):
    value = os.environ.get(name)
    return float(value) if value else default


class Config:
    """Base configuration class."""

    SECRET_KEY = os.environ.get("SECRET_KEY") or "dev-secret-key-change-in-production"

    # Run registry - use instance folder for database
    BASE_DIR = Path(__file__).parent
    INSTANCE_DIR = BASE_DIR / "instance"
    SQLALCHEMY_DATABASE_URI = (
        os.environ.get("DATABASE_URL") or f"sqlite:///{INSTANCE_DIR}/runs.db"
    )
    SQLALCHEMY_TRACK_MODIFICATIONS = False

    # Log file for production runs (unset: console only)
    LOG_FILE = os.environ.get("LOG_FILE")

    # Edge detection
    CANNY_LOW_THRESHOLD = _env_float("CANNY_LOW_THRESHOLD", 100.0)
    CANNY_HIGH_THRESHOLD = _env_float("CANNY_HIGH_THRESHOLD", 200.0)
    CANNY_SMOOTHING_SIGMA = 1.4
    CANNY_SMOOTHING_SIZE = 5

    # Structural similarity and PSNR
    SSIM_WINDOW_SIZE = 11
    SSIM_WINDOW_SIGMA = 1.5
    PSNR_CAP_DB = 100.0

    # Mask frames are binarized at this gray level
    MASK_THRESHOLD = _env_int("MASK_THRESHOLD", 128)

    # Mock latent provider
    LATENT_SPATIAL_FACTOR = _env_int("LATENT_SPATIAL_FACTOR", 8)
    LATENT_TEMPORAL_FACTOR = _env_int("LATENT_TEMPORAL_FACTOR", 4)
    LATENT_CHANNELS = _env_int("LATENT_CHANNELS", 16)

    DEFAULT_SEED = _env_int("DEFAULT_SEED", 0)
    MAX_WORKERS = _env_int("MAX_WORKERS", os.cpu_count() or 1)

    # Entries added to or replacing the built-in metric specs and task columns,
    # e.g. {"MyMetric": {"direction": "lower-better", "include_in_avg": True}}
    METRIC_SPECS: dict = {}
    TASK_METRIC_COLUMNS: dict = {}

    JSON_AS_ASCII = False


class DevelopmentConfig(Config):
    """Development configuration."""

    DEBUG = True


class ProductionConfig(Config):
    """Production configuration."""

    DEBUG = False


class TestingConfig(Config):
    """Testing configuration."""

    TESTING = True
    SQLALCHEMY_DATABASE_URI = "sqlite:///:memory:"
    MAX_WORKERS = 1


# Configuration mapping
config = {
    "development": DevelopmentConfig,
    "production": ProductionConfig,
    "testing": TestingConfig,
    "default": ProductionConfig,
}
