"""Small shared helpers: stable hashing and seed derivation."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np


def stable_key(text: str) -> int:
    """64-bit integer derived from ``text``; stable across processes and platforms."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Independent generator for (seed, *keys).

    String keys are folded through :func:`stable_key`, so the stream depends only on
    the key values and never on call order.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        entropy.append(stable_key(k) if isinstance(k, str) else int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_json(obj: Any) -> str:
    return sha256_bytes(canonical_json(obj).encode("utf-8"))


def fmt_float(x: float) -> str:
    """Shortest round-trip text for a float (``repr`` semantics)."""
    return repr(float(x))


def derive_seed(seed: int, *keys: int | str) -> int:
    """63-bit child seed for (seed, *keys)."""
    return int(derive_rng(seed, *keys).integers(0, 2**63 - 1))
