# config.py - environment-backed defaults and the experiment configuration
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

from dotenv import load_dotenv

from navattack.errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning("Ignoring %s=%r (not an integer), using %s", name, raw, default)
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        logger.warning("Ignoring %s=%r (not a number), using %s", name, raw, default)
        return default


# ---- Environment defaults ----
LOG_LEVEL = (os.getenv("NAVATTACK_LOG_LEVEL") or "INFO").upper()
WORKERS = max(1, _env_int("NAVATTACK_WORKERS", 4))
ALPHA = _env_float("NAVATTACK_ALPHA", 0.3)
TEMPERATURE = _env_float("NAVATTACK_TEMPERATURE", 0.07)
BOOST_LR = _env_float("NAVATTACK_BOOST_LR", 0.05)
SUPPRESS_LR = _env_float("NAVATTACK_SUPPRESS_LR", 0.05)
MAX_STEPS = _env_int("NAVATTACK_MAX_STEPS", 3000)
DETECT_TRIALS = _env_int("NAVATTACK_DETECT_TRIALS", 16)

# ---- Fixed defaults ----
COS_THRESHOLD = 0.95
L2_FRACTION = 0.05
SUPPRESS_MARGIN = 0.01
SMALL_NODES = 40
LARGE_NODES = 80
REFERENCE_SIGMA = 1e-5
REFERENCE_THRESHOLD = 0.203
FORMAT_VERSION = 1

# log-spaced from 1e-7 to 0.9
DEFAULT_SIGMAS: Tuple[float, ...] = tuple(1e-7 * (0.9 / 1e-7) ** (i / 12) for i in range(13))


def parse_sigmas(text: str) -> Tuple[float, ...]:
    """Parse a comma-separated sigma grid and check it is positive and strictly increasing."""
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad sigma grid {text!r}: {exc}") from exc
    if not values:
        raise ConfigError("sigma grid is empty")
    if any(v <= 0 for v in values):
        raise ConfigError("sigma values must be > 0")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("sigma grid must be strictly increasing")
    return values


@dataclass
class ExperimentConfig:
    """Everything one CLI experiment depends on.

    Flags override the environment, the environment overrides the defaults above.
    """
    seed: int = 0
    node_count: int = SMALL_NODES
    landmark_count: int = 4
    noise_amplitude: float = 0.05
    encoder_seed: int = 0
    hidden_dim: int = 256
    output_dim: int = 64
    alpha: float = ALPHA
    temperature: float = TEMPERATURE
    boost_lr: float = BOOST_LR
    suppress_lr: float = SUPPRESS_LR
    max_steps: int = MAX_STEPS
    cos_threshold: float = COS_THRESHOLD
    l2_fraction: float = L2_FRACTION
    suppress_margin: float = SUPPRESS_MARGIN
    sigmas: Tuple[float, ...] = field(default_factory=lambda: DEFAULT_SIGMAS)
    trials: int = DETECT_TRIALS
    workers: int = WORKERS
    output_dir: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        if self.landmark_count < 1:
            raise ConfigError("landmark_count must be >= 1")
        if self.node_count < self.landmark_count + 2:
            raise ConfigError(
                f"node_count={self.node_count} cannot host {self.landmark_count} landmarks "
                f"(need at least landmark_count + 2 nodes)"
            )
        if not 0.0 <= self.noise_amplitude <= 0.5:
            raise ConfigError("noise_amplitude must be in [0, 0.5]")
        if self.hidden_dim < 1 or self.output_dim < 1:
            raise ConfigError("encoder dimensions must be >= 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.boost_lr <= 0 or self.suppress_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.cos_threshold > 1:
            raise ConfigError("cos_threshold must be <= 1")
        if not 0 < self.l2_fraction <= 1:
            raise ConfigError("l2_fraction must be in (0, 1]")
        if self.suppress_margin < 0:
            raise ConfigError("suppress_margin must be >= 0")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.sigmas or any(v <= 0 for v in self.sigmas) or any(
            b <= a for a, b in zip(self.sigmas, self.sigmas[1:])
        ):
            raise ConfigError("sigma grid must be positive and strictly increasing")
        return self
