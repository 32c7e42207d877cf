# attack.py - landmark-node selection and adversarial graph modification
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from navattack import config
from navattack.embedding import (
    AlignmentConfig,
    ImageTensor,
    ToyEncoder,
    align_to_embedding,
    encode_image,
    encode_images,
)
from navattack.errors import InfeasibleAssignmentError, InputError, OptimizationFailure
from navattack.metrics import psnr, ssim
from navattack.navgraph import (
    SLOTS,
    LandmarkSeq,
    NavGraph,
    NavNode,
    image_similarities,
    node_landmark_similarity,
    node_similarities,
    path_cost,
    replace_images,
    save_graph,
    shortest_path,
    similarity_matrix,
)
from navattack.seeding import derive_seed

logger = logging.getLogger(__name__)

BOOST = "boost"
SUPPRESS = "suppress"
REPORT_FILE = "attack_report.json"


@dataclass
class AttackPlan:
    start: int
    target: int
    path: List[int]
    selected: List[int]
    positions: List[int]
    landmarks: List[str]
    total_similarity: float = 0.0
    dp_table: Optional[np.ndarray] = None
    parent_table: Optional[np.ndarray] = None
    path_cost: Optional[float] = None

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            raise InputError(f"selected positions {self.positions} are not strictly increasing")
        if not self.selected or self.selected[-1] != self.target:
            raise InputError("the last selected node must be the target")

    def to_json(self) -> dict:
        return {
            "start": self.start,
            "target": self.target,
            "path": list(self.path),
            "selected": list(self.selected),
            "positions": list(self.positions),
            "landmarks": list(self.landmarks),
            "total_similarity": self.total_similarity,
            "path_cost": self.path_cost,
        }


@dataclass
class ModificationRecord:
    node_id: int
    slot: str
    kind: str
    landmark_index: int
    trace: dict
    similarity_before: float
    similarity_after: float
    ssim: float
    psnr: float
    warning: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "slot": self.slot,
            "kind": self.kind,
            "landmark_index": self.landmark_index,
            "trace": self.trace,
            "similarity_before": self.similarity_before,
            "similarity_after": self.similarity_after,
            "ssim": self.ssim,
            "psnr": "inf" if math.isinf(self.psnr) else self.psnr,
            "warning": self.warning,
        }


@dataclass
class AttackReport:
    plan: Optional[AttackPlan]
    modifications: List[ModificationRecord] = field(default_factory=list)
    rankings: List[List[dict]] = field(default_factory=list)
    competitors_without_boost: List[int] = field(default_factory=list)
    competitors_after_boost: List[int] = field(default_factory=list)
    landmark_matches: List[int] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    output_dir: Optional[str] = None

    def touched(self) -> List[Tuple[int, str]]:
        return sorted({(r.node_id, r.slot) for r in self.modifications})

    def to_json(self) -> dict:
        return {
            "plan": self.plan.to_json() if self.plan else None,
            "modifications": [r.to_json() for r in self.modifications],
            "touched_images": [[nid, slot] for nid, slot in self.touched()],
            "rankings": self.rankings,
            "competitors_without_boost": self.competitors_without_boost,
            "competitors_after_boost": self.competitors_after_boost,
            "landmark_matches": self.landmark_matches,
            "warnings": self.warnings,
            "output_dir": self.output_dir,
        }


# ---- Node selection ----
def assign_landmarks(S) -> Tuple[List[int], float, np.ndarray, np.ndarray]:
    """Order-preserving assignment of q landmarks to k >= q positions.

    D[i][j] is the best total with the first j landmarks placed within the
    first i positions; D[0][0] = 0 and every other cell starts at -inf. A tie
    between placing and skipping skips, which keeps the earlier position.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise InputError("similarity matrix must be 2-D")
    k, q = S.shape
    if k < q:
        raise InfeasibleAssignmentError(f"{q} landmarks cannot be placed on {k} path positions")
    D = np.full((k + 1, q + 1), -np.inf)
    D[0, 0] = 0.0
    parents = np.zeros((k + 1, q + 1), dtype=np.int8)
    for i in range(1, k + 1):
        D[i, 0] = 0.0
        for j in range(1, min(i, q) + 1):
            take = D[i - 1, j - 1] + S[i - 1, j - 1]
            skip = D[i - 1, j]
            if take > skip:
                D[i, j] = take
                parents[i, j] = 1
            else:
                D[i, j] = skip

    positions = [0] * q
    i, j = k, q
    while j > 0:
        if parents[i, j] == 1:
            positions[j - 1] = i - 1
            j -= 1
        i -= 1
    return positions, float(D[k, q]), D, parents


def select_nodes(enc: ToyEncoder, g: NavGraph, s: int, t: int, landmarks: LandmarkSeq) -> AttackPlan:
    """Choose one node per landmark along the shortest start-target path.

    Landmarks 1..n-1 go to distinct positions strictly before t, in order,
    maximizing their summed similarity; landmark n is the target itself.
    """
    if s == t:
        raise InputError("start and target must differ")
    path = shortest_path(g, s, t)
    m, n = len(path), len(landmarks)
    if m < n:
        raise InfeasibleAssignmentError(
            f"shortest path from {s} to {t} has {m} nodes but {n} landmarks need at least {n}"
        )
    if n == 1:
        return AttackPlan(s, t, path, [t], [m - 1], list(landmarks.texts), path_cost=path_cost(g, path))

    candidates = [g.node(v) for v in path[:-1]]
    S = similarity_matrix(enc, candidates, landmarks.head(n - 1)).values
    positions, total, D, parents = assign_landmarks(S)
    selected = [path[p] for p in positions] + [t]
    logger.info("Selected nodes %s on a %d-node path from %d to %d", selected, m, s, t)
    return AttackPlan(s, t, path, selected, positions + [m - 1], list(landmarks.texts),
                      total, D, parents, path_cost(g, path))


# ---- Single-image moves ----
def best_slot(enc: ToyEncoder, n: NavNode, l) -> str:
    sims = image_similarities(enc, [n], l)[0, :, 0]
    return SLOTS[int(np.argmax(sims))]


def _record(enc, before_node, after_node, slot, kind, index, l, trace, original=None):
    original = original if original is not None else before_node.image(slot)
    return ModificationRecord(
        node_id=before_node.id,
        slot=slot,
        kind=kind,
        landmark_index=index,
        trace=trace.summary(),
        similarity_before=node_landmark_similarity(enc, before_node, l),
        similarity_after=node_landmark_similarity(enc, after_node, l),
        ssim=ssim(original, after_node.image(slot)),
        psnr=psnr(original, after_node.image(slot)),
    )


def modify_node_with_text(enc: ToyEncoder, n: NavNode, slot: str, l, cfg: AlignmentConfig,
                          landmark_index: int = 0) -> Tuple[NavNode, ModificationRecord]:
    """Align one image of n to the landmark embedding l.

    Raises OptimizationFailure when the node's similarity to l does not rise.
    """
    new_img, trace = align_to_embedding(enc, n.image(slot), l, cfg)
    modified = n.with_image(slot, new_img)
    record = _record(enc, n, modified, slot, BOOST, landmark_index, l, trace)
    if not record.similarity_after > record.similarity_before:
        raise OptimizationFailure(
            f"boost of node {n.id} ({slot}) did not raise its similarity to landmark {landmark_index} "
            f"({record.similarity_before:.6f} -> {record.similarity_after:.6f})",
            trace,
        )
    return modified, record


def find_target_image(enc: ToyEncoder, g: NavGraph, l) -> Tuple[int, str]:
    """The image anywhere in g least similar to l; ties go to the lower (id, slot)."""
    sims = image_similarities(enc, g.nodes, l)[:, :, 0].ravel()
    k = int(np.argmin(sims))
    return g.node_ids[k // 2], SLOTS[k % 2]


def _cosine_test(l, accept: Callable[[float], bool]) -> Callable[[np.ndarray], bool]:
    l_norm = l / np.linalg.norm(l)

    def check(emb: np.ndarray) -> bool:
        norm = np.linalg.norm(emb)
        return norm > 0 and accept(float(emb @ l_norm) / norm)

    return check


def _suppress_node(enc: ToyEncoder, n: NavNode, origin: NavNode, l, target_emb: np.ndarray,
                   ceiling: float, cfg: AlignmentConfig, index: int) -> Tuple[NavNode, List[ModificationRecord]]:
    """Push every image of n above ceiling toward target_emb until it drops below.

    Records compare against origin, the node as it was in the clean graph.
    """
    below_ceiling = _cosine_test(l, lambda c: c < ceiling)
    current = n
    records = []
    for _ in SLOTS:
        sims = image_similarities(enc, [current], l)[0, :, 0]
        k = int(np.argmax(sims))
        if sims[k] < ceiling:
            break
        slot = SLOTS[k]
        new_img, trace = align_to_embedding(enc, current.image(slot), target_emb, cfg, stop_when=below_ceiling)
        modified = current.with_image(slot, new_img)
        records.append(_record(enc, current, modified, slot, SUPPRESS, index, l, trace,
                               original=origin.image(slot)))
        current = modified
    if node_landmark_similarity(enc, current, l) >= ceiling:
        message = f"suppression of node {n.id} for landmark {index} stayed above {ceiling:.4f}"
        if records:
            records[-1].warning = message
        logger.warning(message)
    return current, records


def _ranking(sims: Dict[int, float], top: int = 5) -> List[dict]:
    ordered = sorted(sims.items(), key=lambda kv: (-kv[1], kv[0]))[:top]
    return [{"node_id": nid, "similarity": value} for nid, value in ordered]


def _outrankers(sims: Dict[int, float], v: int, exclude=()) -> List[int]:
    return sorted(u for u, s in sims.items() if u != v and u not in exclude and s > sims[v])


def _top_node(sims: Dict[int, float]) -> int:
    return min(sims.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def _suppress_all(enc: ToyEncoder, g: NavGraph, current: NavGraph, nodes: Sequence[int], l,
                  floor: float, cfg: AlignmentConfig, margin: float, index: int, workers: int,
                  report: AttackReport) -> NavGraph:
    """Suppress nodes in a thread pool toward the image of g least similar to l."""
    tid, tslot = find_target_image(enc, g, l)
    target_emb = encode_image(enc, g.node(tid).image(tslot))
    ceiling = floor - margin
    logger.info("Landmark %d: suppressing %d nodes toward image %d/%s", index, len(nodes), tid, tslot)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(
            lambda u: _suppress_node(enc, current.node(u), g.node(u), l, target_emb, ceiling, cfg, index),
            nodes,
        ))
    updates = {}
    for suppressed, records in results:
        for r in records:
            updates[(suppressed.id, r.slot)] = suppressed.image(r.slot)
            report.modifications.append(r)
            if r.warning:
                report.warnings.append(r.warning)
    return replace_images(current, updates)


def _reboost(enc: ToyEncoder, g: NavGraph, current: NavGraph, v: int, l, above: float,
             cfg: AlignmentConfig, index: int, report: AttackReport) -> NavGraph:
    """Boost v's best image for l until its similarity passes above."""
    slot = best_slot(enc, current.node(v), l)
    node = current.node(v)
    new_img, trace = align_to_embedding(enc, node.image(slot), l, cfg,
                                        stop_when=_cosine_test(l, lambda c: c > above))
    modified = node.with_image(slot, new_img)
    report.modifications.append(_record(enc, node, modified, slot, BOOST, index, l, trace,
                                        original=g.node(v).image(slot)))
    return replace_images(current, {(v, slot): new_img})


def _restore_landmarks(enc: ToyEncoder, g: NavGraph, current: NavGraph, plan: AttackPlan,
                       landmarks: LandmarkSeq, boost_cfg: AlignmentConfig, suppress_cfg: AlignmentConfig,
                       margin: float, workers: int, report: AttackReport) -> NavGraph:
    """Put each selected node back on top of its landmark after all boosts ran.

    A selected node outranked by another selected node is boosted again; any
    other node that outranks it is suppressed. Selected nodes are never
    suppressed.
    """
    protected = set(plan.selected)
    reboost_cfg = replace(suppress_cfg, l2_threshold=boost_cfg.l2_threshold,
                          cos_threshold=boost_cfg.cos_threshold)
    for i, v in enumerate(plan.selected):
        _, l = landmarks[i]
        sims = node_similarities(enc, current, l)
        if not _outrankers(sims, v):
            continue
        rivals = [u for u in _outrankers(sims, v) if u in protected]
        if rivals:
            top = max(sims[u] for u in rivals)
            logger.info("Landmark %d: node %d is outranked by selected nodes %s, boosting again", i, v, rivals)
            current = _reboost(enc, g, current, v, l, top + margin, reboost_cfg, i, report)
            sims = node_similarities(enc, current, l)
        others = _outrankers(sims, v, exclude=protected)
        if others:
            current = _suppress_all(enc, g, current, others, l, sims[v], suppress_cfg, margin, i,
                                    workers, report)

    for i, v in enumerate(plan.selected):
        text, l = landmarks[i]
        sims = node_similarities(enc, current, l)
        top = v if not _outrankers(sims, v) else _top_node(sims)
        report.landmark_matches.append(top)
        report.rankings[i] = _ranking(sims)
        if top != v:
            message = f"landmark {i} ({text!r}) is matched by node {top}, not selected node {v}"
            report.warnings.append(message)
            logger.warning(message)
    return current


def modify_graph(enc: ToyEncoder, g: NavGraph, plan: AttackPlan, landmarks: LandmarkSeq,
                 boost_cfg: AlignmentConfig, suppress_cfg: Optional[AlignmentConfig] = None,
                 margin: float = config.SUPPRESS_MARGIN,
                 workers: int = config.WORKERS) -> Tuple[NavGraph, AttackReport]:
    """Boost each selected node for its landmark, then suppress every node that still outranks it.

    Boosts run in landmark order; suppressions for one landmark run in a thread
    pool and merge in node-id order. Selected nodes are never suppressed; a
    final pass re-checks every landmark and boosts or suppresses again where a
    later step displaced its node. g is never mutated.
    """
    if len(plan.selected) != len(landmarks):
        raise InputError(f"plan has {len(plan.selected)} nodes for {len(landmarks)} landmarks")
    for v in plan.selected:
        g.node(v)
    suppress_cfg = suppress_cfg or boost_cfg
    protected = set(plan.selected)
    report = AttackReport(plan=plan)
    current = g

    for i, v in enumerate(plan.selected):
        text, l = landmarks[i]
        before = node_similarities(enc, current, l)
        report.competitors_without_boost.append(len(_outrankers(before, v)))

        slot = best_slot(enc, current.node(v), l)
        boosted, record = modify_node_with_text(enc, current.node(v), slot, l, boost_cfg, i)
        report.modifications.append(record)
        current = replace_images(current, {(v, slot): boosted.image(slot)})

        after = node_similarities(enc, current, l)
        report.competitors_after_boost.append(len(_outrankers(after, v)))
        competitors = _outrankers(after, v, exclude=protected)
        if competitors:
            logger.info("Landmark %d (%r): %d nodes outrank node %d", i, text, len(competitors), v)
            current = _suppress_all(enc, g, current, competitors, l, after[v], suppress_cfg, margin, i,
                                    workers, report)
            after = node_similarities(enc, current, l)
        report.rankings.append(_ranking(after))

    current = _restore_landmarks(enc, g, current, plan, landmarks, boost_cfg, suppress_cfg, margin,
                                 workers, report)
    logger.info("Attack %d -> %d: %d images modified, %d warnings",
                plan.start, plan.target, len(report.touched()), len(report.warnings))
    return current, report


# ---- Whole-graph variants ----
def modify_all_images(enc: ToyEncoder, world, g: NavGraph, cfg: AlignmentConfig, seed: int,
                      workers: int = config.WORKERS) -> Tuple[NavGraph, List[ModificationRecord]]:
    """Align every image of g to a landmark that is not originally at that node."""
    labels = world.landmark_labels
    if not labels:
        raise InputError("world has no landmarks to align toward")
    embeddings = encode_images(enc, [world.prototype(label) for label in labels])

    def modify(nid: int) -> Tuple[NavNode, List[ModificationRecord]]:
        present = {world.ground_truth.get(nid), world.back_labels.get(nid)}
        choices = [j for j, label in enumerate(labels) if label not in present] or list(range(len(labels)))
        j = choices[int(np.random.default_rng(derive_seed("modify-all", seed, nid)).integers(len(choices)))]
        n = g.node(nid)
        current, records = n, []
        for slot in SLOTS:
            new_img, trace = align_to_embedding(enc, n.image(slot), embeddings[j], cfg)
            modified = current.with_image(slot, new_img)
            records.append(_record(enc, current, modified, slot, BOOST, j, embeddings[j], trace))
            current = modified
        return current, records

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(modify, g.node_ids))
    updates, all_records = {}, []
    for n, records in results:
        for r in records:
            updates[(n.id, r.slot)] = n.image(r.slot)
            all_records.append(r)
    logger.info("Aligned all %d images of the graph to foreign landmarks", len(updates))
    return replace_images(g, updates), all_records


def sharpen_landmarks(enc: ToyEncoder, g: NavGraph, nodes: Sequence[int], landmarks: LandmarkSeq,
                      cfg: AlignmentConfig) -> Tuple[NavGraph, List[ModificationRecord]]:
    """Boost the given nodes toward their landmarks so clean routes match them more reliably."""
    if len(nodes) != len(landmarks):
        raise InputError("need one node per landmark")
    current, records = g, []
    for i, v in enumerate(nodes):
        _, l = landmarks[i]
        slot = best_slot(enc, current.node(v), l)
        boosted, record = modify_node_with_text(enc, current.node(v), slot, l, cfg, i)
        current = replace_images(current, {(v, slot): boosted.image(slot)})
        records.append(record)
    return current, records


def save_attack(directory: str, g: NavGraph, world, payload: dict):
    """Write the modified graph plus attack_report.json holding payload."""
    save_graph(g, world, directory)
    with open(os.path.join(directory, REPORT_FILE), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
