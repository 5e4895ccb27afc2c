"""Configuration and constants for continuous-dropout."""

import json
import logging
import os

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

APP_NAME = "continuous-dropout"
THREADS_ENV = "CONTINUOUS_DROPOUT_THREADS"
OUT_DIR_ENV = "CONTINUOUS_DROPOUT_OUT_DIR"
MNIST_DIR_ENV = "CONTINUOUS_DROPOUT_MNIST_DIR"

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
LOG_FILE_NAME = "continuous_dropout.log"

# --- Desk-scale training defaults ---
DESK_LAYER_SIZES = (784, 128, 128, 10)
FULL_LAYER_SIZES = (784, 800, 800, 10)
DEFAULT_EPOCHS = 20
DEFAULT_BATCH_SIZE = 100
DEFAULT_LR_INITIAL = 0.1
DEFAULT_LR_DECAY = 0.998
DEFAULT_MOMENTUM_START = 0.5
DEFAULT_MOMENTUM_END = 0.95
DEFAULT_MOMENTUM_RAMP_EPOCHS = 10
DEFAULT_MAXNORM_C = 3.5
DEFAULT_INIT_STD = 0.01
DEFAULT_TRAIN_COUNT = 50_000
DEFAULT_SIGMA_SQ_GRID = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

# --- Monte-Carlo defaults ---
MC_CHUNK_SIZE = 65_536
MIN_MOMENT_SAMPLES = 10_000
MIN_ERROR_SAMPLES = 100_000
DEFAULT_MC_SAMPLES = 1_000_000
N_SIGMA = 4.0

# --- Co-adaptation defaults ---
DEFAULT_COV_INPUTS = 10
DEFAULT_COV_REPEATS = 1000
DEFAULT_COV_BINS = 41
COV_CLIP_PERCENTILE = 99.9


# --- File paths and configuration ---
def get_config_dir():
    """Get the configuration directory."""
    # Use standard XDG_CONFIG_HOME or fallback to ~/.config
    config_dir = os.environ.get("XDG_CONFIG_HOME", os.path.expanduser("~/.config"))
    app_config_dir = os.path.join(config_dir, APP_NAME)
    if not os.path.exists(app_config_dir):
        os.makedirs(app_config_dir)
    return app_config_dir


def get_config_path():
    """Get the path to the config file."""
    return os.path.join(get_config_dir(), "config.json")


def load_env() -> None:
    """Load ``.env`` from the config directory without overriding the shell."""
    env_path = os.path.join(get_config_dir(), ".env")
    if os.path.exists(env_path):
        load_dotenv(env_path, override=False)


def get_out_dir(path: str | None = None) -> str:
    """Return the output directory, creating it if needed."""
    path = path or os.environ.get(OUT_DIR_ENV, "results")
    if path.startswith("~"):
        path = os.path.expanduser(path)
    if not os.path.exists(path):
        os.makedirs(path)
    return path


def get_thread_count() -> int:
    """Worker threads for Monte-Carlo oracles and multi-run experiments."""
    default = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV}={raw!r}")
        return default
    if value < 1:
        logger.warning(f"Ignoring {THREADS_ENV}={value}; must be >= 1")
        return default
    return value


def get_mnist_dir() -> str | None:
    return os.environ.get(MNIST_DIR_ENV)


def load_config() -> dict:
    """Load JSON configuration."""
    path = get_config_path()
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except Exception:
            return {}
    return {}


def save_config(data: dict) -> None:
    """Merge and save configuration to disk."""
    cfg = load_config()
    cfg.update(data)
    with open(get_config_path(), "w", encoding="utf-8") as f:
        json.dump(cfg, f)

