"""Deterministic sub-seed derivation.

Every sampling site in the toolkit draws from its own child generator keyed
by (root seed, operation label, ...). Keeping streams independent of call
order means adding one sampling site never perturbs another, which is what
makes rerun-for-rerun byte determinism hold.
"""

import hashlib
import random


def subseed(seed: int, *labels: object) -> int:
    """Derive a 64-bit child seed from a root seed and a label path."""
    material = repr((int(seed),) + tuple(labels)).encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return int.from_bytes(digest, "big")


def rng_for(seed: int, *labels: object) -> random.Random:
    """A private random.Random for one operation, derived via subseed."""
    return random.Random(subseed(seed, *labels))
