# detector.py - noise-sensitivity detection of modified images
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from sklearn.metrics import balanced_accuracy_score, f1_score, precision_score, recall_score

from navattack import config
from navattack.embedding import ImageTensor, ToyEncoder, noise_response
from navattack.errors import ConfigError, InputError
from navattack.navgraph import SLOTS, NavGraph
from navattack.seeding import image_seed

logger = logging.getLogger(__name__)

CLEAN = "clean"
MODIFIED = "modified"

ImageKey = Tuple[int, str]


@dataclass(frozen=True)
class DetectionConfig:
    sigma: float = config.REFERENCE_SIGMA
    trials: int = config.DETECT_TRIALS
    threshold: float = config.REFERENCE_THRESHOLD
    seed: int = 0
    workers: int = config.WORKERS

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.threshold > 0:
            raise ConfigError("threshold must be > 0")


@dataclass
class ImageVerdict:
    node_id: int
    slot: str
    score: float
    verdict: str
    truth: Optional[bool] = None

    def to_json(self) -> dict:
        data = {"node_id": self.node_id, "slot": self.slot, "score": self.score, "verdict": self.verdict}
        if self.truth is not None:
            data["truly_modified"] = self.truth
        return data


@dataclass
class DetectionReport:
    sigma: float
    threshold: float
    verdicts: List[ImageVerdict]
    metrics: Optional[Dict[str, float]] = None
    path: Optional[List[int]] = None
    path_flagged: Optional[bool] = None
    node_scores: Dict[int, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "operating_point": {"sigma": self.sigma, "threshold": self.threshold},
            "reference_operating_point": {"sigma": config.REFERENCE_SIGMA,
                                          "threshold": config.REFERENCE_THRESHOLD},
            "images": [v.to_json() for v in self.verdicts],
            "node_scores": {str(k): v for k, v in sorted(self.node_scores.items())},
            "metrics": self.metrics,
            "path": self.path,
            "path_flagged": self.path_flagged,
        }


@dataclass
class SweepResult:
    sigmas: List[float]
    clean_means: List[float]
    modified_means: List[float]
    thresholds: List[float]
    accuracies: List[float]
    f1_scores: List[float]
    population: int = 0

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise InputError("sigma grid must be strictly increasing")

    @property
    def best_index(self) -> int:
        """Highest balanced accuracy; the smaller sigma wins ties."""
        return max(range(len(self.sigmas)), key=lambda k: (self.accuracies[k], -k))

    def rows(self) -> List[List[float]]:
        return [[s, c, m, a] for s, c, m, a in
                zip(self.sigmas, self.clean_means, self.modified_means, self.accuracies)]

    def to_json(self) -> dict:
        return {
            "sigmas": self.sigmas,
            "mean_clean": self.clean_means,
            "mean_modified": self.modified_means,
            "best_thresholds": self.thresholds,
            "best_accuracies": self.accuracies,
            "best_f1": self.f1_scores,
            "population": self.population,
        }


def sensitivity_score(enc: ToyEncoder, img: ImageTensor, cfg: DetectionConfig) -> float:
    return noise_response(enc, img, cfg.sigma, cfg.trials, cfg.seed)


def classify(score: float, threshold: float) -> str:
    return MODIFIED if score > threshold else CLEAN


def score_images(enc: ToyEncoder, g: NavGraph, keys: Iterable[ImageKey],
                 cfg: DetectionConfig) -> Dict[ImageKey, float]:
    """Scores keyed by (node id, slot); each image draws noise from its own seed."""
    keys = sorted(set(keys))

    def score(key: ImageKey) -> float:
        nid, slot = key
        item_cfg = replace(cfg, seed=image_seed(cfg.seed, nid, slot))
        return sensitivity_score(enc, g.node(nid).image(slot), item_cfg)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        values = list(pool.map(score, keys))
    return dict(zip(keys, values))


def _candidate_thresholds(values: np.ndarray) -> List[float]:
    unique = np.unique(values)
    mids = ((unique[:-1] + unique[1:]) / 2.0).tolist()
    return mids + [float(unique[-1])]


def calibrate_threshold(scores_clean: Sequence[float], scores_modified: Sequence[float]
                        ) -> Tuple[float, float, float]:
    """Threshold with the best balanced accuracy over population-score midpoints.

    Returns (threshold, balanced accuracy, F1 of the modified class); ties go
    to the smallest threshold.
    """
    if len(scores_clean) == 0 or len(scores_modified) == 0:
        raise InputError("both score populations must be non-empty")
    scores = np.concatenate([np.asarray(scores_clean, float), np.asarray(scores_modified, float)])
    truth = np.array([0] * len(scores_clean) + [1] * len(scores_modified))
    best = None
    for threshold in _candidate_thresholds(scores):
        predicted = (scores > threshold).astype(int)
        accuracy = balanced_accuracy_score(truth, predicted)
        if best is None or accuracy > best[1]:
            best = (threshold, accuracy, predicted)
    threshold, accuracy, predicted = best
    f1 = f1_score(truth, predicted, zero_division=0)
    return float(threshold), float(accuracy), float(f1)


def _check_pair(clean: NavGraph, modified: NavGraph):
    if clean.node_ids != modified.node_ids:
        raise InputError("clean and modified graphs have different node ids")
    if clean.image_shape != modified.image_shape:
        raise InputError("clean and modified graphs hold images of different shapes")


def touched_images(report_json: Optional[Mapping]) -> Optional[Set[ImageKey]]:
    """(node, slot) pairs an attack report says were modified, or None without a report."""
    if not report_json:
        return None
    if "touched_images" in report_json:
        return {(int(nid), str(slot)) for nid, slot in report_json["touched_images"]}
    return {(int(r["node_id"]), str(r["slot"])) for r in report_json.get("modifications", [])}


def sweep(enc: ToyEncoder, clean: NavGraph, modified: NavGraph, sigmas: Sequence[float],
          cfg: DetectionConfig, keys: Optional[Iterable[ImageKey]] = None) -> SweepResult:
    """Mean sensitivity of both populations and the best threshold at each sigma.

    The populations are the same (node, slot) images read from each graph:
    the attack's touched images when keys is given, otherwise every image.
    """
    _check_pair(clean, modified)
    keys = sorted(set(keys)) if keys else clean.image_keys()
    if not keys:
        raise InputError("no images to score")
    columns = {name: [] for name in
               ("sigmas", "clean_means", "modified_means", "thresholds", "accuracies", "f1_scores")}
    for sigma in sigmas:
        at_sigma = replace(cfg, sigma=float(sigma))
        clean_scores = list(score_images(enc, clean, keys, at_sigma).values())
        modified_scores = list(score_images(enc, modified, keys, at_sigma).values())
        threshold, accuracy, f1 = calibrate_threshold(clean_scores, modified_scores)
        columns["sigmas"].append(float(sigma))
        columns["clean_means"].append(float(np.mean(clean_scores)))
        columns["modified_means"].append(float(np.mean(modified_scores)))
        columns["thresholds"].append(threshold)
        columns["accuracies"].append(accuracy)
        columns["f1_scores"].append(f1)
        logger.debug("sigma=%.3g clean=%.6g modified=%.6g acc=%.3f",
                     sigma, columns["clean_means"][-1], columns["modified_means"][-1], accuracy)
    result = SweepResult(population=len(keys), **columns)
    best = result.best_index
    logger.info("Best detection point sigma=%.3g threshold=%.6g balanced accuracy=%.3f",
                result.sigmas[best], result.thresholds[best], result.accuracies[best])
    return result


def detect_graph(enc: ToyEncoder, g: NavGraph, cfg: DetectionConfig, path: Optional[Sequence[int]] = None,
                 ground_truth: Optional[Set[ImageKey]] = None) -> DetectionReport:
    """Verdict for every image of g, per-node scores (max of both images) and an optional path flag."""
    scores = score_images(enc, g, g.image_keys(), cfg)
    verdicts = [
        ImageVerdict(nid, slot, score, classify(score, cfg.threshold),
                     None if ground_truth is None else (nid, slot) in ground_truth)
        for (nid, slot), score in scores.items()
    ]
    node_scores = {nid: max(scores[(nid, s)] for s in SLOTS) for nid in g.node_ids}
    report = DetectionReport(cfg.sigma, cfg.threshold, verdicts, node_scores=node_scores)

    if ground_truth is not None:
        truth = [int(v.truth) for v in verdicts]
        predicted = [int(v.verdict == MODIFIED) for v in verdicts]
        report.metrics = {
            "accuracy": float(np.mean([t == p for t, p in zip(truth, predicted)])),
            "balanced_accuracy": float(balanced_accuracy_score(truth, predicted)) if 0 < sum(truth) < len(truth) else None,
            "precision": float(precision_score(truth, predicted, zero_division=0)),
            "recall": float(recall_score(truth, predicted, zero_division=0)),
            "f1": float(f1_score(truth, predicted, zero_division=0)),
        }
    if path is not None:
        for nid in path:
            g.node(nid)
        report.path = list(path)
        report.path_flagged = any(classify(node_scores[nid], cfg.threshold) == MODIFIED for nid in path)
    return report
