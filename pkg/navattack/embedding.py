# embedding.py - toy vision-language encoder, embedding alignment and the noise response
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist

from navattack import config
from navattack.errors import ConfigError, InputError, OptimizationFailure, UndefinedSimilarityError

if TYPE_CHECKING:
    from navattack.worldgen import WorldModel

logger = logging.getLogger(__name__)

IMAGE_SHAPE: Tuple[int, int, int] = (32, 32, 3)

CONVERGED = "converged"
MAX_STEPS_REACHED = "max_steps_reached"


# ---- Image tensors ----
@dataclass(frozen=True, eq=False)
class ImageTensor:
    """H x W x C pixels in [0, 1], stored as float32 so disk round trips are exact."""
    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float32, copy=True)
        if arr.ndim != 3 or 0 in arr.shape:
            raise InputError(f"image must be a non-empty H x W x C array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("image contains non-finite pixels")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InputError("image pixels must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_array(cls, values, clamp: bool = False) -> "ImageTensor":
        arr = np.asarray(values, dtype=np.float64)
        if clamp:
            arr = np.clip(arr, 0.0, 1.0)
        return cls(arr.astype(np.float32))

    @classmethod
    def filled(cls, value: float, shape: Tuple[int, int, int] = IMAGE_SHAPE) -> "ImageTensor":
        return cls(np.full(shape, value, dtype=np.float32))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.pixels.shape)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def size(self) -> int:
        return int(self.pixels.size)

    def as_float64(self) -> np.ndarray:
        return self.pixels.astype(np.float64)

    def same_bits(self, other: "ImageTensor") -> bool:
        """Bit-for-bit equality of shape and pixel data."""
        return self.shape == other.shape and np.array_equal(
            self.pixels.view(np.uint32), other.pixels.view(np.uint32)
        )


ImageLike = Union[ImageTensor, np.ndarray]


# ---- Encoder ----
class ToyEncoder:
    """Seeded two-layer tanh network f(x) = W2 . tanh(W1 . (x - 0.5)).

    Any object exposing image_shape, input_dim, output_dim, forward(x) and
    backward(x, cotangent) can stand in for it; forward and backward take
    flattened float64 pixels, either one image (m,) or a batch (k, m).
    """

    def __init__(self, seed: int = 0, image_shape: Tuple[int, int, int] = IMAGE_SHAPE,
                 hidden_dim: int = 256, output_dim: int = 64):
        if hidden_dim < 1 or output_dim < 1:
            raise ConfigError("encoder dimensions must be >= 1")
        self.seed = int(seed)
        self.image_shape = tuple(int(d) for d in image_shape)
        self.input_dim = int(np.prod(self.image_shape))
        self.hidden_dim = int(hidden_dim)
        self.output_dim = int(output_dim)
        rng = np.random.default_rng(self.seed)
        self.w1 = rng.standard_normal((self.hidden_dim, self.input_dim)) / math.sqrt(self.input_dim)
        self.w2 = rng.standard_normal((self.output_dim, self.hidden_dim)) / math.sqrt(self.hidden_dim)
        self.w1.setflags(write=False)
        self.w2.setflags(write=False)

    def __repr__(self):
        return (f"ToyEncoder(seed={self.seed}, m={self.input_dim}, "
                f"h={self.hidden_dim}, n={self.output_dim})")

    def hidden(self, x: np.ndarray) -> np.ndarray:
        return np.tanh((x - 0.5) @ self.w1.T)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.hidden(x) @ self.w2.T

    def backward(self, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product: W1^T [(1 - tanh^2(W1(x - 0.5))) * (W2^T cotangent)]."""
        a = self.hidden(x)
        return ((1.0 - a * a) * (cotangent @ self.w2)) @ self.w1


def encoder_spec(enc: ToyEncoder) -> Dict[str, int]:
    return {"seed": enc.seed, "m": enc.input_dim, "h": enc.hidden_dim, "n": enc.output_dim}


def encoder_from_spec(spec: Dict[str, int], image_shape: Tuple[int, int, int]) -> ToyEncoder:
    try:
        seed, m, h, n = int(spec["seed"]), int(spec["m"]), int(spec["h"]), int(spec["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad encoder description {spec!r}") from exc
    if int(np.prod(image_shape)) != m:
        raise InputError(f"encoder expects {m} inputs but images have shape {tuple(image_shape)}")
    return ToyEncoder(seed=seed, image_shape=image_shape, hidden_dim=h, output_dim=n)


# ---- Helpers ----
def _flat(enc: ToyEncoder, img: ImageLike) -> np.ndarray:
    arr = img.pixels if isinstance(img, ImageTensor) else np.asarray(img)
    if arr.size != enc.input_dim:
        raise InputError(f"image has {arr.size} values, encoder expects {enc.input_dim}")
    return arr.astype(np.float64).ravel()


def _embedding(enc: ToyEncoder, vec) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64).ravel()
    if arr.size != enc.output_dim:
        raise InputError(f"embedding has {arr.size} values, encoder outputs {enc.output_dim}")
    if not np.all(np.isfinite(arr)):
        raise InputError("embedding contains non-finite values")
    return arr


def _safe_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# ---- Encoding ----
def encode_image(enc: ToyEncoder, img: ImageLike) -> np.ndarray:
    return enc.forward(_flat(enc, img))


def encode_images(enc: ToyEncoder, images: Sequence[ImageLike]) -> np.ndarray:
    """Embeddings of many images in one batched forward pass, one row per image."""
    if not images:
        return np.zeros((0, enc.output_dim))
    return enc.forward(np.stack([_flat(enc, img) for img in images]))


def encode_text(enc: ToyEncoder, world: "WorldModel", text: str) -> np.ndarray:
    """Text embedding: the encoder's view of the text's noise-free prototype rendering."""
    return encode_image(enc, world.prototype_for_text(text))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise InputError(f"cannot compare embeddings of size {a.size} and {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def alignment_loss(enc: ToyEncoder, x: ImageLike, target) -> float:
    residual = encode_image(enc, x) - _embedding(enc, target)
    return 0.5 * float(residual @ residual)


def alignment_gradient(enc: ToyEncoder, x: ImageLike, target) -> np.ndarray:
    """Exact gradient of alignment_loss with respect to the pixels, image-shaped."""
    flat = _flat(enc, x)
    residual = enc.forward(flat) - _embedding(enc, target)
    return enc.backward(flat, residual).reshape(enc.image_shape)


# ---- Alignment ----
@dataclass(frozen=True)
class AlignmentConfig:
    learning_rate: float = config.BOOST_LR
    max_steps: int = config.MAX_STEPS
    l2_threshold: float = 0.0
    cos_threshold: float = config.COS_THRESHOLD
    clamp_pixels: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.cos_threshold > 1:
            raise ConfigError("cos_threshold must be <= 1")
        if self.l2_threshold < 0:
            raise ConfigError("l2_threshold must be >= 0")

    @classmethod
    def boost_defaults(cls, l2_threshold: float, **overrides) -> "AlignmentConfig":
        """Image-to-text preset."""
        params = dict(learning_rate=config.BOOST_LR, max_steps=config.MAX_STEPS,
                      l2_threshold=l2_threshold, cos_threshold=config.COS_THRESHOLD)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def suppress_defaults(cls, l2_threshold: float, **overrides) -> "AlignmentConfig":
        """Image-to-image preset."""
        params = dict(learning_rate=config.SUPPRESS_LR, max_steps=config.MAX_STEPS,
                      l2_threshold=l2_threshold, cos_threshold=config.COS_THRESHOLD)
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    cosine: float
    distance: float


@dataclass
class AlignmentTrace:
    """One record per state of x; records[-1] always describes the returned image."""
    records: List[StepRecord] = field(default_factory=list)
    status: str = MAX_STEPS_REACHED
    initial: Optional[StepRecord] = None

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def final(self) -> Optional[StepRecord]:
        return self.records[-1] if self.records else None

    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    def summary(self) -> dict:
        last = self.final
        return {
            "status": self.status,
            "steps": self.steps,
            "initial_loss": self.initial.loss if self.initial else None,
            "final_loss": last.loss if last else None,
            "final_cosine": last.cosine if last else None,
            "final_distance": last.distance if last else None,
        }


def align_to_embedding(enc: ToyEncoder, x0: ImageLike, target, cfg: AlignmentConfig,
                       stop_when: Optional[Callable[[np.ndarray], bool]] = None
                       ) -> Tuple[ImageTensor, AlignmentTrace]:
    """Gradient descent on the pixels until f(x) sits close to target.

    Stops when the embedding is within cfg.l2_threshold and cfg.cos_threshold of
    the target, when stop_when(f(x)) is true, or after cfg.max_steps updates.
    An input that already satisfies the stop rule comes back unchanged with a
    single step-0 record; otherwise record k describes x after update k.
    """
    x = _flat(enc, x0)
    target = _embedding(enc, target)
    trace = AlignmentTrace()

    def measure(step: int, emb: np.ndarray) -> Tuple[StepRecord, np.ndarray]:
        residual = emb - target
        loss = 0.5 * float(residual @ residual)
        if not math.isfinite(loss):
            raise OptimizationFailure(f"alignment loss became non-finite at step {step}", trace)
        return StepRecord(step, loss, _safe_cosine(emb, target), math.sqrt(2.0 * loss)), residual

    def done(record: StepRecord, emb: np.ndarray) -> bool:
        if record.distance == 0.0 or (record.distance <= cfg.l2_threshold
                                      and record.cosine >= cfg.cos_threshold):
            return True
        return stop_when is not None and bool(stop_when(emb))

    emb = enc.forward(x)
    trace.initial, residual = measure(0, emb)
    if done(trace.initial, emb):
        trace.records.append(trace.initial)
        trace.status = CONVERGED
        if isinstance(x0, ImageTensor):
            return x0, trace
        return ImageTensor(x.reshape(enc.image_shape).astype(np.float32)), trace

    for step in range(1, cfg.max_steps + 1):
        x = x - cfg.learning_rate * enc.backward(x, residual)
        if cfg.clamp_pixels:
            np.clip(x, 0.0, 1.0, out=x)
        emb = enc.forward(x)
        record, residual = measure(step, emb)
        trace.records.append(record)
        if done(record, emb):
            trace.status = CONVERGED
            break
        if step % 500 == 0:
            logger.debug("alignment step %d loss=%.6g cos=%.4f", step, record.loss, record.cosine)

    if not cfg.clamp_pixels and (x.min() < 0.0 or x.max() > 1.0):
        raise OptimizationFailure("unclamped alignment left the [0, 1] pixel range", trace)
    logger.debug("alignment %s after %d steps (loss %.6g)", trace.status, trace.steps, trace.final.loss)
    return ImageTensor(x.reshape(enc.image_shape).astype(np.float32)), trace


def calibrate_l2_threshold(enc: ToyEncoder, images: Sequence[ImageLike],
                           fraction: float = config.L2_FRACTION) -> float:
    """Median pairwise embedding distance over images, scaled by fraction."""
    if len(images) < 2:
        raise InputError("need at least two images to calibrate an L2 threshold")
    if not 0 < fraction <= 1:
        raise ConfigError("fraction must be in (0, 1]")
    distances = pdist(encode_images(enc, images))
    threshold = float(np.median(distances)) * fraction
    logger.info("Calibrated alignment L2 threshold %.5f from %d images", threshold, len(images))
    return threshold


# ---- Noise response ----
def noise_response(enc: ToyEncoder, x: ImageLike, sigma: float, trials: int, seed: int) -> float:
    """Mean embedding shift ||f(x) - f(clamp(x + eps))|| over Gaussian draws eps ~ N(0, sigma^2)."""
    if trials < 1:
        raise InputError("trials must be >= 1")
    if not sigma > 0:
        raise InputError("sigma must be > 0")
    base = _flat(enc, x)
    rng = np.random.default_rng(seed)
    noisy = np.clip(base + sigma * rng.standard_normal((trials, base.size)), 0.0, 1.0)
    shifts = np.linalg.norm(enc.forward(noisy) - enc.forward(base), axis=1)
    return float(shifts.mean())
