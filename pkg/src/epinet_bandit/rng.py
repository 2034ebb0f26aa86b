"""Seeded random streams with split-by-label derivation.

Every consumer (weight init, index sampling, environment dynamics, ...)
gets its own stream derived from a root seed and a string label, so adding
a new consumer never perturbs the draws of existing ones. Streams are
backed by Philox, a counter-based generator: the same (seed, label path)
always reproduces the same draw sequence bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["SeedStream", "label_words", "generator_state", "restore_generator"]


def label_words(label: str) -> tuple[int, int]:
    """Map a label to two stable 32-bit words via blake2b."""
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return (
        int.from_bytes(digest[:4], "little"),
        int.from_bytes(digest[4:], "little"),
    )


class SeedStream:
    """A node in a seed-derivation tree.

    ``child(label)`` derives an independent subtree; ``generator()`` makes
    a fresh Philox generator for this node. Both are pure functions of
    (seed, path), so construction order of siblings does not matter.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(w) for w in path)

    def child(self, label: str) -> "SeedStream":
        return SeedStream(self.seed, self.path + label_words(label))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))

    def root_description(self) -> str:
        """Stable textual identity of this stream, for run manifests."""
        return f"seed={self.seed} path={list(self.path)}"

    def __repr__(self) -> str:  # pragma: no cover
        return f"SeedStream({self.root_description()})"


def generator_state(gen: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's state."""

    def _plain(obj):
        if isinstance(obj, dict):
            return {k: _plain(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray):
            return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
        if isinstance(obj, (np.integer,)):
            return int(obj)
        return obj

    return _plain(gen.bit_generator.state)


def restore_generator(state: dict) -> np.random.Generator:
    """Rebuild a generator from :func:`generator_state` output."""

    def _revive(obj):
        if isinstance(obj, dict):
            if "__ndarray__" in obj:
                return np.array(obj["__ndarray__"], dtype=obj["dtype"])
            return {k: _revive(v) for k, v in obj.items()}
        return obj

    revived = _revive(state)
    bitgen_name = revived["bit_generator"]
    bitgen_cls = getattr(np.random, bitgen_name)
    gen = np.random.Generator(bitgen_cls())
    gen.bit_generator.state = revived
    return gen
