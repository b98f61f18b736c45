"""Derivation of all run randomness from a single root seed.

Every random decision in a run draws from a generator seeded by
``derive_seed(root, label, ...)`` with a fixed label tree:

    ("init",)                  controller parameter initialization
    ("family",)                synthetic task-family construction
    ("task", i)                task choice for dispatch i (multitask)
    ("rollout", i)             action sampling for dispatch i
    ("eval", task_name, i)     evaluation noise for dispatch i
    ("task_embedding",)        fresh embedding row added at transfer

This makes runs replayable and lets paired experiments share random task
instances while varying only the controller.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *parts: object) -> int:
    """Stable 64-bit seed from the root seed and a label path."""
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little")
