"""Named sub-stream seed derivation so one master seed drives the pipeline."""

import hashlib


def child_seed(seed: int, name: str) -> int:
    """Derive a stable 63-bit seed for the sub-stream `name` of `seed`."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
