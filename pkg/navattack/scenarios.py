# scenarios.py - seeded end-to-end attack scenarios and the batch table runner
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from navattack import config
from navattack.attack import AttackPlan, AttackReport, modify_graph, select_nodes
from navattack.config import ExperimentConfig
from navattack.embedding import AlignmentConfig, ToyEncoder, calibrate_l2_threshold
from navattack.errors import InputError
from navattack.metrics import (
    METRIC_NAMES,
    RouteEvalInput,
    RouteEvalReport,
    aggregate_reports,
    evaluate_route,
    mean_psnr,
)
from navattack.navgraph import LandmarkSeq, NavGraph, shortest_path
from navattack.planner import (
    PlanConfig,
    PlanResult,
    diagnose_arrival,
    landmark_probabilities,
    plan_route,
    simulate_traversal,
)
from navattack.seeding import derive_seed
from navattack.worldgen import WorldModel, WorldParams, landmark_node, make_world

logger = logging.getLogger(__name__)

DEFAULT_SIZES: Tuple[Tuple[str, int], ...] = (("small", config.SMALL_NODES), ("large", config.LARGE_NODES))


@dataclass
class Scenario:
    world: WorldModel
    start: int
    target: int
    landmarks: LandmarkSeq
    clean_plan: PlanResult
    ground_truth_nodes: List[int]

    @property
    def graph(self) -> NavGraph:
        return self.world.graph


@dataclass
class ScenarioResult:
    scenario: Scenario
    attack_plan: AttackPlan
    attacked_graph: NavGraph
    report: AttackReport
    attacked_plan: PlanResult
    clean_traversal: List[int]
    attacked_traversal: List[int]
    evaluation: RouteEvalReport

    def to_json(self) -> dict:
        records = self.report.modifications
        return {
            "world_seed": self.scenario.world.seed,
            "nodes": len(self.scenario.graph),
            "start": self.scenario.start,
            "target": self.scenario.target,
            "landmarks": list(self.scenario.landmarks.texts),
            "ground_truth_nodes": self.scenario.ground_truth_nodes,
            "clean_plan": self.scenario.clean_plan.to_json(),
            "attacked_plan": self.attacked_plan.to_json(),
            "attack_plan": self.attack_plan.to_json(),
            "evaluation": self.evaluation.to_json(),
            "modifications": len(records),
            "suppressions": sum(1 for r in records if r.kind == "suppress"),
            "min_ssim": min(r.ssim for r in records) if records else None,
            "competitors_without_boost": self.report.competitors_without_boost,
            "competitors_after_boost": self.report.competitors_after_boost,
            "landmark_matches": self.report.landmark_matches,
            "warnings": self.report.warnings,
        }


def build_scenario(world: WorldModel, enc: ToyEncoder, rng: np.random.Generator,
                   landmark_count: Optional[int] = None, alpha: float = config.ALPHA,
                   temperature: float = config.TEMPERATURE) -> Scenario:
    """Random instruction and malicious target for one world.

    The start is a non-landmark node; the target is a non-landmark node other
    than the clean destination whose shortest path from the start has at least
    n + 1 nodes.
    """
    labels = world.landmark_labels
    count = landmark_count or len(labels)
    if count > len(labels):
        raise InputError(f"world has {len(labels)} landmarks, {count} requested")
    texts = [labels[int(k)] for k in rng.permutation(len(labels))[:count]]
    landmarks = LandmarkSeq.from_texts(enc, world, texts)
    gt_nodes = [landmark_node(world, t) for t in texts]
    placed = {landmark_node(world, label) for label in labels}

    g = world.graph
    free = [nid for nid in g.node_ids if nid not in placed]
    for start in [free[int(k)] for k in rng.permutation(len(free))]:
        clean_plan = plan_route(enc, g, landmarks, PlanConfig(start, alpha, temperature))
        eligible = [
            nid for nid in free
            if nid != start and nid != clean_plan.destination
            and len(shortest_path(g, start, nid)) >= count + 1
        ]
        if eligible:
            target = eligible[int(rng.integers(len(eligible)))]
            return Scenario(world, start, target, landmarks, clean_plan, gt_nodes)
    raise InputError(f"world {world.seed} has no start/target pair for {count} landmarks")


def alignment_configs(enc: ToyEncoder, g: NavGraph, cfg: ExperimentConfig) -> Tuple[AlignmentConfig, AlignmentConfig]:
    """Boost and suppress settings with the L2 threshold calibrated on g's images."""
    l2 = calibrate_l2_threshold(enc, g.images(), cfg.l2_fraction)
    boost = AlignmentConfig.boost_defaults(l2, learning_rate=cfg.boost_lr, max_steps=cfg.max_steps,
                                           cos_threshold=cfg.cos_threshold)
    suppress = AlignmentConfig.suppress_defaults(l2, learning_rate=cfg.suppress_lr, max_steps=cfg.max_steps,
                                                 cos_threshold=cfg.cos_threshold)
    return boost, suppress


def run_scenario(enc: ToyEncoder, scenario: Scenario, cfg: ExperimentConfig) -> ScenarioResult:
    g = scenario.graph
    plan_cfg = PlanConfig(scenario.start, cfg.alpha, cfg.temperature)
    boost, suppress = alignment_configs(enc, g, cfg)

    attack_plan = select_nodes(enc, g, scenario.start, scenario.target, scenario.landmarks)
    attacked, report = modify_graph(enc, g, attack_plan, scenario.landmarks, boost, suppress,
                                    margin=cfg.suppress_margin, workers=cfg.workers)

    probs = landmark_probabilities(enc, attacked, scenario.landmarks, cfg.temperature)
    attacked_plan = plan_route(enc, attacked, scenario.landmarks, plan_cfg)
    clean_traversal = simulate_traversal(g, scenario.clean_plan)
    attacked_traversal = simulate_traversal(attacked, attacked_plan)
    inp = RouteEvalInput(
        clean_traversal=clean_traversal,
        attacked_traversal=attacked_traversal,
        attacked_assignments=attacked_plan.assignments,
        selected=attack_plan.selected,
        attack_path=attack_plan.path,
        target=attack_plan.target,
        ground_truth_nodes=scenario.ground_truth_nodes,
    )
    evaluation = evaluate_route(inp, diagnose_arrival(attacked_plan, probs, attack_plan.target))
    logger.info("Scenario world=%d %d->%d: diverted=%s arrived=%s matching=%.2f",
                scenario.world.seed, scenario.start, scenario.target,
                evaluation.route_modification_success, evaluation.arrival_success,
                evaluation.landmark_matching_rate)
    return ScenarioResult(scenario, attack_plan, attacked, report, attacked_plan,
                          clean_traversal, attacked_traversal, evaluation)


def run_table(seed: int, count: int, cfg: ExperimentConfig,
              sizes: Sequence[Tuple[str, int]] = DEFAULT_SIZES) -> Tuple[List[List], Dict[str, List[ScenarioResult]]]:
    """count seeded scenarios per environment size.

    Returns table rows (one per route metric, one column per environment) and
    the scenario results grouped by environment. Scenarios cycle through 3, 4
    and 5 landmarks.
    """
    if count < 1:
        raise InputError("batch size must be >= 1")
    results: Dict[str, List[ScenarioResult]] = {}
    for env, nodes in sizes:
        results[env] = []
        for k in range(count):
            landmarks = 3 + k % 3
            params = WorldParams(noise_amplitude=cfg.noise_amplitude, encoder_seed=cfg.encoder_seed,
                                 hidden_dim=cfg.hidden_dim, output_dim=cfg.output_dim)
            world_seed = derive_seed("table", seed, env, k) % (2 ** 31)
            world = make_world(world_seed, nodes, landmarks, params)
            enc = world.params.encoder()
            rng = np.random.default_rng(derive_seed("scenario", seed, env, k))
            scenario = build_scenario(world, enc, rng, landmarks, cfg.alpha, cfg.temperature)
            results[env].append(run_scenario(enc, scenario, cfg))

    aggregates = {env: aggregate_reports([r.evaluation for r in rs]) for env, rs in results.items()}
    rows = [[name] + [aggregates[env][name] for env, _ in sizes] for name in METRIC_NAMES]
    return rows, results


def imperceptibility_summary(results: Sequence[ScenarioResult]) -> dict:
    records = [r for res in results for r in res.report.modifications]
    if not records:
        return {"records": 0, "mean_ssim": None, "min_ssim": None, "mean_psnr": None,
                "min_psnr": None, "infinite_psnr": 0}
    psnr_mean, skipped = mean_psnr([r.psnr for r in records])
    finite = [r.psnr for r in records if r.psnr != float("inf")]
    return {
        "records": len(records),
        "mean_ssim": float(np.mean([r.ssim for r in records])),
        "min_ssim": float(min(r.ssim for r in records)),
        "mean_psnr": psnr_mean,
        "min_psnr": float(min(finite)) if finite else None,
        "infinite_psnr": skipped,
    }
