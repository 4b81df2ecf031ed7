"""Seed derivation, canonical hashing, and small formatting helpers."""

import hashlib
import json

import numpy as np


def derive_seed(root_seed: int, label: str) -> int:
    """Derive a labeled 63-bit sub-seed from a root seed.

    Every consumer of randomness (dataset sampling, weight init, per-epoch
    shuffles) draws its own stream from the one root seed, so two runs with
    the same root seed replay bit-identically while distinct labels stay
    statistically independent.
    """
    digest = hashlib.sha256(f"{root_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(root_seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, label)))


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, compact separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_hash(obj) -> str:
    """Stable hash of a JSON-serializable config document."""
    return sha256_hex(canonical_json(obj).encode())


def fmt(x) -> str:
    """Shortest round-trip decimal for floats; plain str otherwise.

    Used for every CSV cell so that reruns of a deterministic pipeline
    produce byte-identical files.
    """
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)
