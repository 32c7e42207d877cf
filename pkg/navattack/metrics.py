# metrics.py - image quality (PSNR, SSIM) and route-level evaluation metrics
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import convolve2d

from navattack.errors import InputError

logger = logging.getLogger(__name__)

PEAK = 1.0
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = (0.01 * PEAK) ** 2
C2 = (0.03 * PEAK) ** 2

METRIC_NAMES = (
    "route_modification_success",
    "landmark_matching_rate",
    "path_efficiency",
    "arrival_success",
)


def _pixels(img) -> np.ndarray:
    arr = img.pixels if hasattr(img, "pixels") else np.asarray(img)
    arr = arr.astype(np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _pair(a, b) -> Tuple[np.ndarray, np.ndarray]:
    x, y = _pixels(a), _pixels(b)
    if x.shape != y.shape:
        raise InputError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0; math.inf for identical images.

    The MSE is rounded to 12 significant digits first, so a uniform 0.1 shift
    gives exactly 20.0 rather than 19.999999999999996.
    """
    x, y = _pair(a, b)
    mse = float(f"{np.mean((x - y) ** 2):.12g}")
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK ** 2 / mse)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b) -> float:
    """Mean structural similarity in [-1, 1], 11x11 Gaussian window, per channel then averaged.

    Only fully covered window positions count (valid convolution).
    """
    x, y = _pair(a, b)
    if min(x.shape[0], x.shape[1]) < WINDOW_SIZE:
        raise InputError(f"images must be at least {WINDOW_SIZE}x{WINDOW_SIZE} for SSIM")
    window = gaussian_window()

    def filt(z):
        return convolve2d(z, window, mode="valid")

    scores = []
    for c in range(x.shape[2]):
        xc, yc = x[:, :, c], y[:, :, c]
        mu_x, mu_y = filt(xc), filt(yc)
        var_x = filt(xc * xc) - mu_x ** 2
        var_y = filt(yc * yc) - mu_y ** 2
        cov = filt(xc * yc) - mu_x * mu_y
        num = (2 * mu_x * mu_y + C1) * (2 * cov + C2)
        den = (mu_x ** 2 + mu_y ** 2 + C1) * (var_x + var_y + C2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def mean_psnr(values: Sequence[float]) -> Tuple[Optional[float], int]:
    """Mean of the finite PSNR values and the number of infinite ones left out."""
    finite = [v for v in values if not math.isinf(v)]
    skipped = len(values) - len(finite)
    if skipped:
        logger.warning("Skipped %d identical-image PSNR values in the mean", skipped)
    if not finite:
        return None, skipped
    return float(np.mean(finite)), skipped


# ---- Route metrics ----
@dataclass
class RouteEvalInput:
    clean_traversal: List[int]
    attacked_traversal: List[int]
    attacked_assignments: List[int]
    selected: List[int]
    attack_path: List[int]
    target: int
    ground_truth_nodes: List[int] = field(default_factory=list)


@dataclass
class RouteEvalReport:
    route_modification_success: bool
    landmark_matching_rate: float
    path_efficiency: float
    arrival_success: bool
    arrival_diagnosis: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "route_modification_success": self.route_modification_success,
            "landmark_matching_rate": self.landmark_matching_rate,
            "path_efficiency": self.path_efficiency,
            "arrival_success": self.arrival_success,
            "arrival_diagnosis": self.arrival_diagnosis,
        }


def route_modification_success(inp: RouteEvalInput) -> bool:
    return inp.attacked_traversal[-1] != inp.clean_traversal[-1]


def landmark_matching_rate(inp: RouteEvalInput) -> float:
    """Share of landmarks the attacked planner assigned to the attacker's chosen node."""
    if not inp.selected:
        return 0.0
    hits = sum(1 for a, v in zip(inp.attacked_assignments, inp.selected) if a == v)
    return hits / len(inp.selected)


def path_efficiency(inp: RouteEvalInput) -> float:
    """Share of the attacker's shortest-path nodes that the attacked route visits."""
    intended = set(inp.attack_path)
    if not intended:
        return 0.0
    return len(intended & set(inp.attacked_traversal)) / len(intended)


def arrival_success(inp: RouteEvalInput) -> bool:
    return inp.attacked_traversal[-1] == inp.target


def evaluate_route(inp: RouteEvalInput, diagnosis: Optional[str] = None) -> RouteEvalReport:
    return RouteEvalReport(
        route_modification_success=route_modification_success(inp),
        landmark_matching_rate=landmark_matching_rate(inp),
        path_efficiency=path_efficiency(inp),
        arrival_success=arrival_success(inp),
        arrival_diagnosis=diagnosis,
    )


def aggregate_reports(reports: Sequence[RouteEvalReport]) -> Dict[str, float]:
    """Per-metric means over a batch of scenarios (flags count as 0/1)."""
    if not reports:
        return {name: 0.0 for name in METRIC_NAMES}
    return {name: float(np.mean([float(getattr(r, name)) for r in reports])) for name in METRIC_NAMES}
