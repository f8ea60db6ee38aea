"""Deterministic random number generation.

Every stochastic operation in the package takes an explicit generator, so
identical seeds give identical streams across runs and platforms. PCG64 is
the named algorithm; its state serializes to JSON for checkpoint resume.
"""

import numpy as np

ALGORITHM = "pcg64"


def make_rng(seed: int) -> np.random.Generator:
    """Generator for a 64-bit seed. Same seed, same stream."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent substream identified by (seed, *keys).

    Used to give each purpose (sampling, shuffling, jitter, dropout) and
    each instance its own reproducible stream.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of the generator state."""
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
