# seeding.py - deterministic seed derivation
import hashlib


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from any sequence of printable parts.

    Python's built-in hash() is salted per process, so sha256 is used instead.
    """
    key = "/".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def text_seed(text: str) -> int:
    return derive_seed("text", text)


def image_seed(seed: int, node_id: int, slot: str) -> int:
    return derive_seed("image", seed, node_id, slot)
