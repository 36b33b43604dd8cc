"""Seeded random streams.

Every random quantity in the package is drawn from a Philox generator keyed
by a :class:`numpy.random.SeedSequence` whose spawn key names the task, e.g.
``(cell, replicate)`` in a simulation sweep. Streams never depend on how
work is scheduled.

Record-level PRAM draws use fixed blocks: record ``i`` takes uniform number
``i % RECORD_BLOCK`` of the stream keyed ``(seed, PERTURB_TAG, i // RECORD_BLOCK)``.
Any split of the records into blocks therefore reproduces the serial result.
"""

from __future__ import annotations

import os

import numpy as np

RECORD_BLOCK = 4096
PERTURB_TAG = 0x5052414D  # "PRAM"
RESAMPLE_TAG = 0x52455331
REPLICATE_TAG = 0x52455032


def seed_from_env(seed: int | None, default: int | None = None) -> int | None:
    if seed is not None:
        return int(seed)
    env = os.environ.get("PRAM_SEED")
    if env is not None and env.strip():
        return int(env)
    return default


def generator(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *key: int) -> int:
    """Derive a 64-bit integer seed for a sub-task."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def record_uniforms(seed: int, start: int, stop: int) -> np.ndarray:
    """Uniforms in [0, 1) for records ``start..stop-1`` of the PRAM stream."""
    out = np.empty(stop - start)
    pos = start
    while pos < stop:
        block, offset = divmod(pos, RECORD_BLOCK)
        take = min(RECORD_BLOCK - offset, stop - pos)
        u = generator(seed, PERTURB_TAG, block).random(offset + take)
        out[pos - start:pos - start + take] = u[offset:]
        pos += take
    return out
