# worldgen.py - synthetic concept-grounded navigation environments
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import pdist, squareform

from navattack.embedding import IMAGE_SHAPE, ImageTensor, ToyEncoder, encode_images
from navattack.errors import InputError, ManifestError, NavAttackError
from navattack.navgraph import (
    Edge,
    NavGraph,
    NavNode,
    SLOTS,
    image_similarities,
    is_connected,
    load_graph,
    save_graph,
)
from navattack.seeding import derive_seed, text_seed

logger = logging.getLogger(__name__)

WORLD_FILE = "world.json"

LANDMARK_VOCABULARY = (
    "a fire hydrant",
    "a stop sign",
    "a white truck",
    "a blue dumpster",
    "a picnic table",
    "a red brick gate",
    "a parked bicycle",
    "a yellow bench",
    "a tall pine tree",
    "a bus shelter",
    "a mailbox",
    "a traffic cone",
)

BACKGROUND_VOCABULARY = (
    "asphalt road",
    "grass verge",
    "gravel path",
    "concrete sidewalk",
    "parking lot",
    "hedge row",
    "chain-link fence",
    "open field",
    "brick wall",
    "dirt track",
)


@dataclass(frozen=True)
class WorldParams:
    node_count: int = 40
    landmark_count: int = 4
    background_count: int = 8
    concept_dim: int = 16
    noise_amplitude: float = 0.05
    contrast: float = 0.19
    clipped_fraction: float = 0.6
    step_length: float = 0.1
    arena_size: float = 1.0
    link_radius: float = 0.15
    image_shape: Tuple[int, int, int] = IMAGE_SHAPE
    encoder_seed: int = 0
    hidden_dim: int = 256
    output_dim: int = 64
    max_attempts: int = 5

    def validate(self) -> "WorldParams":
        if self.landmark_count < 1:
            raise InputError("landmark_count must be >= 1")
        if self.node_count < self.landmark_count + 2:
            raise InputError(
                f"infeasible world: {self.node_count} nodes cannot host {self.landmark_count} "
                f"landmarks (need node_count >= landmark_count + 2)"
            )
        if self.landmark_count > len(LANDMARK_VOCABULARY):
            raise InputError(f"at most {len(LANDMARK_VOCABULARY)} landmarks are available")
        if not 1 <= self.background_count <= len(BACKGROUND_VOCABULARY):
            raise InputError(f"background_count must be in [1, {len(BACKGROUND_VOCABULARY)}]")
        if self.concept_dim < 1:
            raise InputError("concept_dim must be >= 1")
        if not 0.0 <= self.noise_amplitude <= 0.5:
            raise InputError("noise_amplitude must be in [0, 0.5]")
        if not 0.0 <= self.clipped_fraction < 1.0:
            raise InputError("clipped_fraction must be in [0, 1)")
        if self.step_length <= 0 or self.arena_size <= 0 or self.link_radius <= 0:
            raise InputError("step_length, arena_size and link_radius must be > 0")
        if self.max_attempts < 1:
            raise InputError("max_attempts must be >= 1")
        return self

    def encoder(self) -> ToyEncoder:
        return ToyEncoder(seed=self.encoder_seed, image_shape=self.image_shape,
                          hidden_dim=self.hidden_dim, output_dim=self.output_dim)

    def scene_rows(self) -> Tuple[int, int]:
        """Rows of the clipped band at the top and at the bottom of every image."""
        rows = int(round(self.clipped_fraction * self.image_shape[0]))
        top = (rows + 1) // 2
        return top, rows - top

    def to_json(self) -> dict:
        data = asdict(self)
        data["image_shape"] = list(self.image_shape)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "WorldParams":
        data = dict(data)
        data["image_shape"] = tuple(data["image_shape"])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ConceptVec:
    label: str
    values: np.ndarray
    landmark: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).ravel()
        norm = np.linalg.norm(v)
        if norm == 0:
            raise InputError(f"concept {self.label!r} has a zero vector")
        if abs(norm - 1.0) > 1e-9:
            v = v / norm
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(eq=False)
class WorldModel:
    seed: int
    requested_seed: int
    params: WorldParams
    concepts: List[ConceptVec]
    projection: np.ndarray
    graph: NavGraph
    ground_truth: Dict[int, str]
    back_labels: Dict[int, str] = field(default_factory=dict)
    scene: Optional[np.ndarray] = None

    @property
    def noise_amplitude(self) -> float:
        return self.params.noise_amplitude

    @property
    def landmark_labels(self) -> List[str]:
        return [c.label for c in self.concepts if c.landmark]

    def concept(self, label: str) -> ConceptVec:
        for c in self.concepts:
            if c.label == label:
                return c
        raise InputError(f"unknown concept {label!r}")

    def has_concept(self, label: str) -> bool:
        return any(c.label == label for c in self.concepts)

    def prototype(self, label: str) -> ImageTensor:
        return render_concept(self, self.concept(label), None)

    def prototype_for_text(self, text: str) -> ImageTensor:
        """Noise-free rendering for a landmark text; unknown texts get a hash-seeded concept."""
        text = text.strip()
        if self.has_concept(text):
            return self.prototype(text)
        rng = np.random.default_rng(text_seed(text))
        return render_concept(self, ConceptVec(text, rng.standard_normal(self.params.concept_dim)), None)

    def with_graph(self, graph: NavGraph) -> "WorldModel":
        return replace(self, graph=graph)

    def encoder_description(self) -> Dict[str, int]:
        p = self.params
        return {"seed": p.encoder_seed, "m": int(np.prod(p.image_shape)),
                "h": p.hidden_dim, "n": p.output_dim}

    def sidecar(self) -> dict:
        return {
            "format_version": 1,
            "seed": self.seed,
            "requested_seed": self.requested_seed,
            "params": self.params.to_json(),
            "concepts": [
                {"label": c.label, "landmark": c.landmark, "values": [float(x) for x in c.values]}
                for c in self.concepts
            ],
            "ground_truth": {str(k): v for k, v in sorted(self.ground_truth.items())},
            "back_labels": {str(k): v for k, v in sorted(self.back_labels.items())},
            "scene": None if self.scene is None else [float(x) for x in self.scene],
        }

    def write_sidecar(self, directory: str):
        with open(os.path.join(directory, WORLD_FILE), "w", encoding="utf-8") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _projection(seed: int, params: WorldParams) -> np.ndarray:
    m = int(np.prod(params.image_shape))
    rng = np.random.default_rng(derive_seed("projection", seed))
    return params.contrast * rng.standard_normal((m, params.concept_dim))


def band_mask(image_shape: Tuple[int, int, int], top: int, bottom: int) -> np.ndarray:
    """Flat boolean mask of the first top and last bottom image rows."""
    mask = np.zeros(image_shape, dtype=bool)
    mask[:top] = True
    if bottom:
        mask[image_shape[0] - bottom:] = True
    return mask.ravel()


@lru_cache(maxsize=8)
def _solve_scene(encoder_seed: int, image_shape: Tuple[int, int, int], hidden_dim: int,
                 output_dim: int, top: int, bottom: int) -> np.ndarray:
    """Offsets u in [-0.5, 0.5] on the band rows with W1 . u = 0, most of them at a bound.

    A basic solution of the linear program leaves at most hidden_dim offsets
    strictly inside the box, so the band is mostly pure black or white while
    contributing nothing to any pre-activation of the encoder.
    """
    enc = ToyEncoder(seed=encoder_seed, image_shape=image_shape, hidden_dim=hidden_dim, output_dim=output_dim)
    band = np.flatnonzero(band_mask(image_shape, top, bottom))
    scene = np.zeros(enc.input_dim)
    if band.size:
        rng = np.random.default_rng(derive_seed("scene", encoder_seed))
        direction = rng.choice([-1.0, 1.0], size=band.size)
        result = linprog(-direction, A_eq=enc.w1[:, band], b_eq=np.zeros(enc.hidden_dim),
                         bounds=(-0.5, 0.5), method="highs-ds")
        if result.status != 0:
            raise NavAttackError(f"cannot lay out the clipped scene band: {result.message}")
        u = np.clip(result.x, -0.5, 0.5)
        at_bound = np.abs(np.abs(u) - 0.5) < 1e-9
        u[at_bound] = 0.5 * np.sign(u[at_bound])
        scene[band] = u
        logger.info("Scene band: %d of %d pixels clipped", int(at_bound.sum()), enc.input_dim)
    scene.setflags(write=False)
    return scene


def scene_layout(params: WorldParams) -> np.ndarray:
    """Flat per-pixel offsets from 0.5 for the clipped band shared by every image of a world.

    The band models blown-out sky and crushed shadow; it is invisible to the
    world's encoder, so embeddings depend on the concept rows only.
    """
    top, bottom = params.scene_rows()
    return _solve_scene(params.encoder_seed, tuple(params.image_shape), params.hidden_dim,
                        params.output_dim, top, bottom)


def render_concept(world: WorldModel, c: ConceptVec, noise_seed: Optional[int]) -> ImageTensor:
    """0.5 + 0.5 * P.c, plus uniform pixel noise when noise_seed is given, clamped to [0, 1].

    Pixels of the clipped scene band take 0.5 + scene instead and carry no noise.
    """
    signal = 0.5 + 0.5 * (world.projection @ c.values)
    amp = world.params.noise_amplitude
    if noise_seed is not None and amp > 0:
        rng = np.random.default_rng(noise_seed)
        signal = signal + rng.uniform(-amp, amp, size=signal.shape)
    scene = world.scene if world.scene is not None else scene_layout(world.params)
    top, bottom = world.params.scene_rows()
    if top or bottom:
        signal = np.where(band_mask(world.params.image_shape, top, bottom), 0.5 + scene, signal)
    return ImageTensor.from_array(signal.reshape(world.params.image_shape), clamp=True)


def _concepts(seed: int, params: WorldParams) -> List[ConceptVec]:
    labels = list(LANDMARK_VOCABULARY[:params.landmark_count])
    backgrounds = list(BACKGROUND_VOCABULARY[:params.background_count])
    total = len(labels) + len(backgrounds)
    rng = np.random.default_rng(derive_seed("concepts", seed))
    raw = rng.standard_normal((total, params.concept_dim))
    if total <= params.concept_dim:
        q, _ = np.linalg.qr(raw.T)
        raw = q.T[:total]
    return ([ConceptVec(label, raw[i], True) for i, label in enumerate(labels)]
            + [ConceptVec(label, raw[len(labels) + i], False) for i, label in enumerate(backgrounds)])


def _trajectory(seed: int, params: WorldParams) -> np.ndarray:
    """Random-walk positions inside the square arena, reflecting at the walls."""
    rng = np.random.default_rng(derive_seed("trajectory", seed))
    size = params.arena_size
    pos = np.array([size / 2, size / 2])
    heading = rng.uniform(0, 2 * math.pi)
    points = [pos.copy()]
    for _ in range(params.node_count - 1):
        heading += rng.normal(0.0, 0.6)
        pos = pos + params.step_length * np.array([math.cos(heading), math.sin(heading)])
        for axis in range(2):
            if pos[axis] < 0:
                pos[axis] = -pos[axis]
                heading = math.pi - heading if axis == 0 else -heading
            elif pos[axis] > size:
                pos[axis] = 2 * size - pos[axis]
                heading = math.pi - heading if axis == 0 else -heading
        points.append(pos.copy())
    return np.array(points)


def _edges(points: np.ndarray, radius: float) -> List[Edge]:
    dist = squareform(pdist(points))
    pairs = {(i, i + 1) for i in range(len(points) - 1)}
    rows, cols = np.nonzero(np.triu(dist <= radius, k=1))
    pairs.update(zip(rows.tolist(), cols.tolist()))
    return [Edge(i, j, max(float(dist[i, j]), 1e-6)) for i, j in sorted(pairs)]


def _build(seed: int, requested_seed: int, params: WorldParams) -> WorldModel:
    concepts = _concepts(seed, params)
    landmarks = [c for c in concepts if c.landmark]
    backgrounds = [c for c in concepts if not c.landmark]
    points = _trajectory(seed, params)

    radius = params.link_radius
    edges = _edges(points, radius)
    # consecutive links already make the walk connected; widening covers corrupted params
    for _ in range(5):
        if is_connected(range(params.node_count), edges):
            break
        radius *= 1.5
        edges = _edges(points, radius)
    else:
        raise NavAttackError(f"world {seed} stayed disconnected after widening the link radius")

    rng = np.random.default_rng(derive_seed("assignment", seed))
    landmark_nodes = rng.choice(params.node_count, size=len(landmarks), replace=False)
    front = {i: backgrounds[int(rng.integers(len(backgrounds)))] for i in range(params.node_count)}
    for c, nid in zip(landmarks, landmark_nodes):
        front[int(nid)] = c
    back = {i: backgrounds[int(rng.integers(len(backgrounds)))] for i in range(params.node_count)}

    world = WorldModel(
        seed=seed, requested_seed=requested_seed, params=params, concepts=concepts,
        projection=_projection(seed, params), graph=None,
        ground_truth={i: front[i].label for i in range(params.node_count)},
        back_labels={i: back[i].label for i in range(params.node_count)},
        scene=scene_layout(params),
    )
    nodes = []
    for i in range(params.node_count):
        images = (
            render_concept(world, front[i], derive_seed("render", seed, i, SLOTS[0])),
            render_concept(world, back[i], derive_seed("render", seed, i, SLOTS[1])),
        )
        nodes.append(NavNode(i, (float(points[i, 0]), float(points[i, 1])), images))
    world.graph = NavGraph(nodes, edges, encoder=world.encoder_description())
    return world


def landmark_node(world: WorldModel, label: str) -> int:
    """The node whose front image renders the landmark's concept."""
    for nid, gt in sorted(world.ground_truth.items()):
        if gt == label:
            return nid
    raise InputError(f"landmark {label!r} is not placed in this world")


def check_groundability(enc: ToyEncoder, world: WorldModel) -> List[str]:
    """Landmark labels whose own node is not the most similar node of the graph."""
    labels = world.landmark_labels
    text_embeddings = encode_images(enc, [world.prototype(label) for label in labels])
    sims = image_similarities(enc, world.graph.nodes, text_embeddings).max(axis=1)
    ids = world.graph.node_ids
    failing = []
    for j, label in enumerate(labels):
        if ids[int(np.argmax(sims[:, j]))] != landmark_node(world, label):
            failing.append(label)
    return failing


def make_world(seed: int, node_count: int, landmark_count: int,
               params: Optional[WorldParams] = None) -> WorldModel:
    """Seeded world with node_count nodes and landmark_count grounded landmarks.

    A world whose landmarks are not each best matched by their own node is
    regenerated with the next seed, up to params.max_attempts times.
    """
    params = replace(params or WorldParams(), node_count=node_count,
                     landmark_count=landmark_count).validate()
    enc = params.encoder()
    world = None
    for attempt in range(params.max_attempts):
        world = _build(seed + attempt, seed, params)
        failing = check_groundability(enc, world)
        if not failing:
            break
        logger.warning("World seed %d fails groundability for %s, regenerating", seed + attempt, failing)
    else:
        logger.warning("Keeping world seed %d despite groundability failures", world.seed)
    logger.info("Generated world seed=%d nodes=%d edges=%d landmarks=%s",
                world.seed, len(world.graph), len(world.graph.edges), world.landmark_labels)
    return world


def save_world(world: WorldModel, directory: str):
    save_graph(world.graph, world, directory)


def _stored_scene(values, params: WorldParams) -> np.ndarray:
    if values is None:
        return scene_layout(params)
    scene = np.asarray(values, dtype=np.float64)
    if scene.shape != (int(np.prod(params.image_shape)),):
        raise ValueError(f"scene holds {scene.size} values for images of shape {params.image_shape}")
    scene.setflags(write=False)
    return scene


def load_world(directory: str) -> WorldModel:
    graph = load_graph(directory)
    path = os.path.join(directory, WORLD_FILE)
    if not os.path.isfile(path):
        raise ManifestError(f"{path} not found; text landmarks need the world sidecar")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        params = WorldParams.from_json(data["params"])
        concepts = [ConceptVec(c["label"], c["values"], bool(c["landmark"])) for c in data["concepts"]]
        world = WorldModel(
            seed=int(data["seed"]),
            requested_seed=int(data["requested_seed"]),
            params=params,
            concepts=concepts,
            projection=_projection(int(data["seed"]), params),
            graph=graph,
            ground_truth={int(k): v for k, v in data["ground_truth"].items()},
            back_labels={int(k): v for k, v in data.get("back_labels", {}).items()},
            scene=_stored_scene(data.get("scene"), params),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"cannot read {path}: {exc!r}") from exc
    if tuple(graph.image_shape) != tuple(params.image_shape):
        raise ManifestError(f"{path} describes images of shape {params.image_shape}, "
                            f"graph holds {graph.image_shape}")
    return world
