"""Reproducible random streams.

Every stream is a numpy ``Generator`` over the PCG64 bit generator, seeded by
``SeedSequence(master_seed, spawn_key=(purpose, *indices))``. Both algorithms
are specified by numpy and give the same numbers on every platform, so a
(master seed, purpose, index) triple always names the same stream.
"""
import numpy as np

PURPOSES = {
    "init": 0,     # network initialisation, per agent
    "env": 1,      # episode seeds, per environment
    "act": 2,      # action and opponent-sample draws, per agent
    "eval": 3,     # evaluation episodes
    "selftest": 4,
}


def make_stream(master_seed, purpose, *indices):
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(PURPOSES[purpose], *map(int, indices)))
    return np.random.Generator(np.random.PCG64(seq))


def get_state(rng):
    return rng.bit_generator.state


def set_state(rng, state):
    rng.bit_generator.state = state
    return rng


def draw_seed(rng):
    return int(rng.integers(0, 2**63 - 1))
