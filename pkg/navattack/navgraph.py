# navgraph.py - topological graph model, on-disk format and similarity primitives
import heapq
import json
import logging
import os
import struct
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from navattack import config
from navattack.embedding import (
    ImageTensor,
    ToyEncoder,
    cosine_similarity,
    encode_images,
    encode_text,
    encoder_spec,
)
from navattack.errors import (
    BlobFormatError,
    GraphDimensionError,
    GraphValidationError,
    InputError,
    ManifestError,
    MissingBlobError,
    NoPathError,
)

logger = logging.getLogger(__name__)

SLOTS = ("front", "back")
VIMG_MAGIC = b"VLNIMG1\n"
_VIMG_HEADER = struct.Struct("<III")
MANIFEST = "manifest.json"
IMAGE_DIR = "imgs"


def slot_index(slot: str) -> int:
    try:
        return SLOTS.index(slot)
    except ValueError:
        raise InputError(f"unknown image slot {slot!r}, expected one of {SLOTS}") from None


# ---- Data model ----
@dataclass(frozen=True, eq=False)
class NavNode:
    id: int
    position: Tuple[float, float]
    images: Tuple[ImageTensor, ImageTensor]

    def __post_init__(self):
        if len(self.images) != 2:
            raise GraphValidationError(f"node {self.id} must hold exactly two images")
        if self.images[0].shape != self.images[1].shape:
            raise GraphDimensionError(f"node {self.id} has front/back images of different shapes")

    def image(self, slot: str) -> ImageTensor:
        return self.images[slot_index(slot)]

    def with_image(self, slot: str, img: ImageTensor) -> "NavNode":
        images = list(self.images)
        images[slot_index(slot)] = img
        return replace(self, images=tuple(images))


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    cost: float


def is_connected(node_ids: Sequence[int], edges: Iterable[Edge]) -> bool:
    ids = list(node_ids)
    if len(ids) <= 1:
        return True
    index = {nid: i for i, nid in enumerate(ids)}
    rows, cols = [], []
    for e in edges:
        rows.append(index[e.u])
        cols.append(index[e.v])
    adjacency = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids), len(ids)))
    count, _ = connected_components(adjacency, directed=False)
    return count == 1


class NavGraph:
    """Immutable undirected graph of two-image nodes.

    Node ids are kept sorted ascending; neighbor lists are sorted by id.
    encoder optionally records the {seed, m, h, n} description of the encoder
    the graph was built for.
    """

    def __init__(self, nodes: Iterable[NavNode], edges: Iterable[Edge],
                 encoder: Optional[Dict[str, int]] = None):
        node_list = sorted(nodes, key=lambda n: n.id)
        if not node_list:
            raise GraphValidationError("graph has no nodes")
        self._nodes: Dict[int, NavNode] = {}
        for n in node_list:
            if n.id in self._nodes:
                raise GraphValidationError(f"duplicate node id {n.id}")
            self._nodes[n.id] = n
        shape = node_list[0].images[0].shape
        for n in node_list:
            if n.images[0].shape != shape:
                raise GraphDimensionError(
                    f"node {n.id} images have shape {n.images[0].shape}, graph uses {shape}"
                )

        self._edges: List[Edge] = []
        adjacency: Dict[int, Dict[int, float]] = {nid: {} for nid in self._nodes}
        for e in edges:
            if e.u not in self._nodes or e.v not in self._nodes:
                raise GraphValidationError(f"edge ({e.u}, {e.v}) references a missing node")
            if e.u == e.v:
                raise GraphValidationError(f"self-loop on node {e.u}")
            if not (e.cost > 0 and np.isfinite(e.cost)):
                raise GraphValidationError(f"edge ({e.u}, {e.v}) has non-positive cost {e.cost}")
            if e.v in adjacency[e.u]:
                raise GraphValidationError(f"duplicate edge ({e.u}, {e.v})")
            edge = Edge(int(e.u), int(e.v), float(e.cost))
            self._edges.append(edge)
            adjacency[e.u][e.v] = edge.cost
            adjacency[e.v][e.u] = edge.cost
        self._adjacency = {nid: sorted(nbrs.items()) for nid, nbrs in adjacency.items()}

        if not is_connected(list(self._nodes), self._edges):
            raise GraphValidationError("graph is not connected")
        self.encoder = dict(encoder) if encoder else None

    def __len__(self):
        return len(self._nodes)

    def __contains__(self, node_id) -> bool:
        return node_id in self._nodes

    def __repr__(self):
        return f"NavGraph(nodes={len(self._nodes)}, edges={len(self._edges)})"

    @property
    def node_ids(self) -> List[int]:
        return list(self._nodes)

    @property
    def nodes(self) -> List[NavNode]:
        return list(self._nodes.values())

    @property
    def edges(self) -> List[Edge]:
        return list(self._edges)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return next(iter(self._nodes.values())).images[0].shape

    def node(self, node_id: int) -> NavNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise InputError(f"unknown node id {node_id}") from None

    def neighbors(self, node_id: int) -> List[Tuple[int, float]]:
        self.node(node_id)
        return list(self._adjacency[node_id])

    def edge_cost(self, u: int, v: int) -> float:
        for w, cost in self._adjacency[u]:
            if w == v:
                return cost
        raise InputError(f"nodes {u} and {v} are not adjacent")

    def image_keys(self) -> List[Tuple[int, str]]:
        return [(nid, slot) for nid in self._nodes for slot in SLOTS]

    def images(self) -> List[ImageTensor]:
        return [img for n in self._nodes.values() for img in n.images]


def node(g: NavGraph, node_id: int) -> NavNode:
    return g.node(node_id)


def neighbors(g: NavGraph, node_id: int) -> List[Tuple[int, float]]:
    return g.neighbors(node_id)


def replace_images(g: NavGraph, updates: Mapping[Tuple[int, str], ImageTensor]) -> NavGraph:
    """New graph with the given (node id, slot) images swapped in; g is left untouched."""
    if not updates:
        return g
    nodes = {nid: g.node(nid) for nid in g.node_ids}
    for (nid, slot), img in sorted(updates.items()):
        if nid not in nodes:
            raise InputError(f"unknown node id {nid}")
        nodes[nid] = nodes[nid].with_image(slot, img)
    return NavGraph(nodes.values(), g.edges, encoder=g.encoder)


def same_graph(a: NavGraph, b: NavGraph) -> bool:
    """Equality on ids, positions, edges and every pixel bit."""
    if a.node_ids != b.node_ids:
        return False
    if sorted((e.u, e.v, e.cost) for e in a.edges) != sorted((e.u, e.v, e.cost) for e in b.edges):
        return False
    for na, nb in zip(a.nodes, b.nodes):
        if na.position != nb.position:
            return False
        if not all(ia.same_bits(ib) for ia, ib in zip(na.images, nb.images)):
            return False
    return True


# ---- Landmarks and similarity ----
@dataclass(frozen=True, eq=False)
class LandmarkSeq:
    texts: Tuple[str, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64, ndmin=2)
        if not self.texts:
            raise InputError("landmark list is empty")
        if emb.shape[0] != len(self.texts):
            raise InputError("every landmark needs exactly one embedding")
        emb.setflags(write=False)
        object.__setattr__(self, "texts", tuple(self.texts))
        object.__setattr__(self, "embeddings", emb)

    @classmethod
    def from_texts(cls, enc: ToyEncoder, world, texts: Sequence[str]) -> "LandmarkSeq":
        cleaned = [t.strip() for t in texts if t and t.strip()]
        if not cleaned:
            raise InputError("landmark list is empty")
        return cls(tuple(cleaned), np.stack([encode_text(enc, world, t) for t in cleaned]))

    def __len__(self):
        return len(self.texts)

    def __getitem__(self, i: int) -> Tuple[str, np.ndarray]:
        return self.texts[i], self.embeddings[i]

    def head(self, count: int) -> "LandmarkSeq":
        return LandmarkSeq(self.texts[:count], self.embeddings[:count])


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    node_ids: Tuple[int, ...]
    texts: Tuple[str, ...]
    values: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def node_landmark_similarity(enc: ToyEncoder, n: NavNode, l) -> float:
    """Best cosine between the landmark embedding and either of the node's images."""
    embeddings = encode_images(enc, n.images)
    return max(cosine_similarity(e, l) for e in embeddings)


def _cosine_rows(embeddings: np.ndarray, targets: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    tnorms = np.linalg.norm(targets, axis=1, keepdims=True)
    if np.any(norms == 0) or np.any(tnorms == 0):
        # fall back to the scalar path so the zero-vector error is raised
        return np.array([[cosine_similarity(e, t) for t in targets] for e in embeddings])
    return np.clip((embeddings / norms) @ (targets / tnorms).T, -1.0, 1.0)


def image_similarities(enc: ToyEncoder, nodes: Sequence[NavNode], embeddings) -> np.ndarray:
    """Per-image cosines, shape (len(nodes), 2, k) for k target embeddings."""
    targets = np.array(embeddings, dtype=np.float64, ndmin=2)
    flat = encode_images(enc, [img for n in nodes for img in n.images])
    return _cosine_rows(flat, targets).reshape(len(nodes), 2, targets.shape[0])


def similarity_matrix(enc: ToyEncoder, nodes: Sequence[NavNode], landmarks: LandmarkSeq) -> SimilarityMatrix:
    values = image_similarities(enc, nodes, landmarks.embeddings).max(axis=1)
    return SimilarityMatrix(tuple(n.id for n in nodes), landmarks.texts, values)


def node_similarities(enc: ToyEncoder, g: NavGraph, l) -> Dict[int, float]:
    """node id -> node_landmark_similarity for every node of g."""
    values = image_similarities(enc, g.nodes, l)[:, :, 0].max(axis=1)
    return {nid: float(v) for nid, v in zip(g.node_ids, values)}


# ---- Shortest paths ----
def shortest_path_tree(g: NavGraph, s: int) -> Tuple[Dict[int, float], Dict[int, Optional[int]]]:
    """Dijkstra from s. Equal-cost ties go to the lower node id, both when
    popping and when choosing a predecessor."""
    g.node(s)
    dist: Dict[int, float] = {s: 0.0}
    pred: Dict[int, Optional[int]] = {s: None}
    done = set()
    heap = [(0.0, s)]
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for w, cost in g.neighbors(v):
            if w in done:
                continue
            nd = d + cost
            if w not in dist or nd < dist[w] or (nd == dist[w] and v < pred[w]):
                dist[w] = nd
                pred[w] = v
                heapq.heappush(heap, (nd, w))
    return dist, pred


def shortest_path(g: NavGraph, s: int, t: int) -> List[int]:
    g.node(t)
    dist, pred = shortest_path_tree(g, s)
    if t not in dist:
        raise NoPathError(f"node {t} is unreachable from {s}")
    path = [t]
    while path[-1] != s:
        path.append(pred[path[-1]])
    return path[::-1]


def path_cost(g: NavGraph, path: Sequence[int]) -> float:
    return float(sum(g.edge_cost(u, v) for u, v in zip(path, path[1:]) if u != v))


# ---- Persistence ----
def _blob_name(node_id: int, slot: str) -> str:
    return f"{IMAGE_DIR}/{node_id}_{slot[0]}.vimg"


def write_vimg(path: str, img: ImageTensor):
    h, w, c = img.shape
    with open(path, "wb") as fh:
        fh.write(VIMG_MAGIC)
        fh.write(_VIMG_HEADER.pack(h, w, c))
        fh.write(img.pixels.astype("<f4").tobytes(order="C"))


def read_vimg(path: str, node_id: int) -> ImageTensor:
    if not os.path.isfile(path):
        raise MissingBlobError(f"image blob {path} for node {node_id} is missing")
    with open(path, "rb") as fh:
        data = fh.read()
    header_len = len(VIMG_MAGIC) + _VIMG_HEADER.size
    if data[:len(VIMG_MAGIC)] != VIMG_MAGIC:
        raise BlobFormatError(f"image blob for node {node_id} has a bad magic header")
    if len(data) < header_len:
        raise BlobFormatError(f"image blob for node {node_id} is truncated")
    h, w, c = _VIMG_HEADER.unpack_from(data, len(VIMG_MAGIC))
    expected = 4 * h * w * c
    payload = data[header_len:]
    if len(payload) != expected:
        kind = "truncated" if len(payload) < expected else "oversized"
        raise BlobFormatError(
            f"image blob for node {node_id} is {kind}: {len(payload)} bytes, expected {expected}"
        )
    pixels = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    try:
        return ImageTensor(pixels)
    except InputError as exc:
        raise BlobFormatError(f"image blob for node {node_id}: {exc}") from exc


def save_graph(g: NavGraph, world, directory: str, encoder: Optional[ToyEncoder] = None):
    """Write manifest.json, one .vimg blob per image and, when world is given, world.json."""
    os.makedirs(os.path.join(directory, IMAGE_DIR), exist_ok=True)
    if encoder is not None:
        enc_desc = encoder_spec(encoder)
    elif world is not None:
        enc_desc = world.encoder_description()
    else:
        enc_desc = g.encoder

    manifest = {"format_version": config.FORMAT_VERSION, "encoder": enc_desc, "nodes": [], "edges": []}
    for n in g.nodes:
        entry = {"id": n.id, "x": float(n.position[0]), "y": float(n.position[1])}
        for slot, img in zip(SLOTS, n.images):
            entry[slot] = _blob_name(n.id, slot)
            write_vimg(os.path.join(directory, entry[slot]), img)
        manifest["nodes"].append(entry)
    manifest["edges"] = [{"u": e.u, "v": e.v, "cost": e.cost} for e in g.edges]

    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if world is not None:
        world.write_sidecar(directory)
    logger.info("Saved graph with %d nodes to %s", len(g), directory)


def load_graph(directory: str) -> NavGraph:
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise ManifestError(f"{path} not found")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ManifestError(f"{path} does not hold a JSON object")
    if manifest.get("format_version") != config.FORMAT_VERSION:
        raise ManifestError(f"unsupported manifest format_version {manifest.get('format_version')!r}")

    try:
        nodes = []
        shape = None
        for entry in manifest["nodes"]:
            nid = int(entry["id"])
            images = tuple(read_vimg(os.path.join(directory, entry[slot]), nid) for slot in SLOTS)
            for img in images:
                if shape is None:
                    shape = img.shape
                elif img.shape != shape:
                    raise GraphDimensionError(f"node {nid} image shape {img.shape} differs from {shape}")
            nodes.append(NavNode(nid, (float(entry["x"]), float(entry["y"])), images))
        edges = [Edge(int(e["u"]), int(e["v"]), float(e["cost"])) for e in manifest["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest {path}: {exc!r}") from exc
    return NavGraph(nodes, edges, encoder=manifest.get("encoder"))
