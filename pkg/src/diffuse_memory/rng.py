"""Deterministic random streams derived from one master seed.

Every consumer gets its own named sub-stream; Monte-Carlo trajectories get one
stream per trajectory index, so results do not depend on how work is split
across processes.
"""
from __future__ import annotations

import numpy as np

STREAMS = {
    "transport": 0,
    "hologram": 1,
    "readout": 2,
    "protocol": 3,
    "chsh": 4,
}


def _stream_id(stream: str | int) -> int:
    if isinstance(stream, str):
        try:
            return STREAMS[stream]
        except KeyError:
            raise ValueError(f"unknown stream {stream!r}; known: {sorted(STREAMS)}") from None
    return int(stream)


def stream_generator(seed: int, stream: str | int, index: int | None = None) -> np.random.Generator:
    key = (_stream_id(stream),) if index is None else (_stream_id(stream), int(index))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def trajectory_generator(seed: int, index: int) -> np.random.Generator:
    return stream_generator(seed, "transport", index)
