"""Deterministic random-stream derivation.

Every random draw in the package flows through a named stream derived from
the experiment seed, so independent components (model init, batch shuffling,
client selection, data splitting) never share generator state and results are
reproducible bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

# Stream tags. Distinct tags keep derived generators independent even when
# the same base seed is reused across components.
ENCODER_INIT = 1
DECODER_INIT = 2
BATCHES = 3
SELECTION = 4
SPLIT = 5
PARTITION = 6
SYNTHETIC = 7


def derive_rng(seed: int, stream: int, *ids: int) -> np.random.Generator:
    """Return a generator for (seed, stream, ids...), e.g. one per client."""
    entropy = (int(seed), int(stream), *(int(i) for i in ids))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def num_selected(num_clients: int, participation: float) -> int:
    """Clients picked per round: max(ceil(C * M), 1)."""
    return max(math.ceil(participation * num_clients), 1)


def sample_selections(
    num_clients: int, participation: float, rounds: int, seed: int
) -> list[np.ndarray]:
    """Replay the per-round client selections a training run would make.

    Draws from the same stream as the training loop, so cost accounting can
    predict exactly which clients participate without running any training.
    """
    rng = derive_rng(seed, SELECTION)
    size = num_selected(num_clients, participation)
    return [
        np.sort(rng.choice(num_clients, size=size, replace=False))
        for _ in range(rounds)
    ]
