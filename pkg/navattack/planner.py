# planner.py - landmark-conditioned route planner (Q-table graph search)
import heapq
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import softmax

from navattack import config
from navattack.embedding import ToyEncoder
from navattack.errors import ConfigError, InputError
from navattack.navgraph import LandmarkSeq, NavGraph, image_similarities, shortest_path_tree

logger = logging.getLogger(__name__)

CUMULATIVE_SCORE = "cumulative_score"
OTHER = "other"
ARRIVED = "arrived"


@dataclass(frozen=True)
class PlanConfig:
    start: int
    alpha: float = config.ALPHA
    temperature: float = config.TEMPERATURE

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")


@dataclass
class PlanResult:
    waypoints: List[int]
    assignments: List[int]
    score: float
    node_ids: List[int]
    q_table: np.ndarray
    landmarks: List[str] = field(default_factory=list)

    @property
    def destination(self) -> int:
        return self.waypoints[-1]

    def to_json(self) -> dict:
        return {
            "waypoints": list(self.waypoints),
            "assignments": list(self.assignments),
            "landmarks": list(self.landmarks),
            "destination": self.destination,
            "score": self.score,
        }


def landmark_probabilities(enc: ToyEncoder, g: NavGraph, landmarks: LandmarkSeq,
                           temperature: float = config.TEMPERATURE) -> np.ndarray:
    """P(v | l_i) for every landmark (rows) and node (columns, ascending id)."""
    sims = image_similarities(enc, g.nodes, landmarks.embeddings).max(axis=1).T
    return softmax(sims / temperature, axis=1)


def landmark_probability(enc: ToyEncoder, g: NavGraph, l,
                         temperature: float = config.TEMPERATURE) -> np.ndarray:
    sims = image_similarities(enc, g.nodes, l)[:, :, 0].max(axis=1)
    return softmax(sims / temperature)


def _relax_layer(g: NavGraph, index: Dict[int, int], base: np.ndarray, alpha: float):
    """Fixed point of value[v] = max(base[v], max_w value[w] - alpha * D(w, v)).

    Max-propagation in Dijkstra order. parent[v] is -1 when v keeps its carried
    value, otherwise the neighbor it was reached from; equal values never move.
    """
    ids = g.node_ids
    value = base.copy()
    parent = np.full(len(ids), -1, dtype=np.int64)
    done = np.zeros(len(ids), dtype=bool)
    heap = [(-value[i], ids[i]) for i in range(len(ids))]
    heapq.heapify(heap)
    while heap:
        neg, v = heapq.heappop(heap)
        iv = index[v]
        if done[iv] or -neg != value[iv]:
            continue
        done[iv] = True
        for w, cost in g.neighbors(v):
            iw = index[w]
            if done[iw]:
                continue
            cand = value[iv] - alpha * cost
            if cand > value[iw]:
                value[iw] = cand
                parent[iw] = v
                heapq.heappush(heap, (-cand, w))
    return value, parent


def plan_from_probabilities(g: NavGraph, probs, cfg: PlanConfig,
                            landmarks: Optional[Sequence[str]] = None) -> PlanResult:
    """Q-table search over given per-landmark node probabilities.

    Q(0, v) = -alpha * dist(start, v); layer i carries Q(i-1, v) + P(v | l_i)
    and relaxes along edges at cost alpha * D. The destination maximizes
    Q(n, .); among equal maxima a node holding its carried value wins, then
    the lower id.
    """
    g.node(cfg.start)
    ids = g.node_ids
    index = {nid: i for i, nid in enumerate(ids)}
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != len(ids) or probs.shape[0] < 1:
        raise InputError(f"probabilities must be (landmarks, {len(ids)}), got {probs.shape}")
    n = probs.shape[0]

    dist, pred = shortest_path_tree(g, cfg.start)
    q = np.empty((n + 1, len(ids)))
    q[0] = [-cfg.alpha * dist[nid] for nid in ids]
    parents = []
    for i in range(1, n + 1):
        q[i], parent = _relax_layer(g, index, q[i - 1] + probs[i - 1], cfg.alpha)
        parents.append(parent)

    best = max(range(len(ids)), key=lambda k: (q[n, k], parents[-1][k] == -1, -ids[k]))
    v = ids[best]
    layer = n
    visited = [v]
    assignments = [0] * n
    while layer > 0:
        p = parents[layer - 1][index[v]]
        if p == -1:
            assignments[layer - 1] = v
            layer -= 1
        else:
            v = int(p)
            visited.append(v)
    while v != cfg.start:
        v = pred[v]
        visited.append(v)

    waypoints = []
    for nid in reversed(visited):
        if not waypoints or waypoints[-1] != nid:
            waypoints.append(nid)
    return PlanResult(
        waypoints=waypoints,
        assignments=assignments,
        score=float(q[n, best]),
        node_ids=ids,
        q_table=q,
        landmarks=list(landmarks or []),
    )


def plan_route(enc: ToyEncoder, g: NavGraph, landmarks: LandmarkSeq, cfg: PlanConfig) -> PlanResult:
    probs = landmark_probabilities(enc, g, landmarks, cfg.temperature)
    plan = plan_from_probabilities(g, probs, cfg, landmarks.texts)
    logger.info("Planned %d landmarks from %d: destination %d via %d waypoints",
                len(landmarks), cfg.start, plan.destination, len(plan.waypoints))
    return plan


def simulate_traversal(g: NavGraph, plan: PlanResult) -> List[int]:
    """Perfect execution: the robot visits exactly the planned waypoints."""
    for u, v in zip(plan.waypoints, plan.waypoints[1:]):
        g.edge_cost(u, v)
    return list(plan.waypoints)


def diagnose_arrival(plan: PlanResult, probs, target: int) -> str:
    """Why a plan missed the target.

    cumulative_score when the node chosen for the last landmark is an earlier
    landmark's node revisited, or scores lower P(v | l_n) than the target.
    """
    if plan.destination == target:
        return ARRIVED
    probs = np.asarray(probs, dtype=np.float64)
    index = {nid: i for i, nid in enumerate(plan.node_ids)}
    last = plan.assignments[-1]
    if last in plan.assignments[:-1]:
        return CUMULATIVE_SCORE
    if probs[-1, index[last]] < probs[-1, index[target]]:
        return CUMULATIVE_SCORE
    return OTHER
