"""
Counter-based Gaussian streams.

Every path owns its draws: normals for absolute grid steps of block
b = k // STEPS_PER_BLOCK come from a Philox generator keyed by
(seed, tag, path index, b). A window of a long run is therefore bitwise the
same as simulating that window alone, and no draw depends on how paths are
grouped into streams or which worker produced them.
"""

from typing import Tuple

import numpy as np

from config.settings import PATHS_PER_STREAM, STEPS_PER_BLOCK
from shared.errors import DomainError

# independent families of draws sharing one seed
TAG_INCREMENTS = 0
TAG_INITIAL = 1


def _zigzag(value: int) -> int:
    """Maps ..., -2, -1, 0, 1, 2, ... onto 3, 1, 0, 2, 4, ...; SeedSequence takes non-negative words."""
    return 2 * value if value >= 0 else -2 * value - 1


def generator(seed: int, tag: int, path_index: int, block: int = 0) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF, tag, path_index, _zigzag(block)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


class NormalStream:
    """
    Standard normals for the paths of one stream, addressed by absolute grid step.
    Stream s covers paths s * paths_per_stream .. (s + 1) * paths_per_stream - 1.
    """

    def __init__(self, seed: int, stream_id: int, dim: int,
                 paths_per_stream: int = PATHS_PER_STREAM,
                 steps_per_block: int = STEPS_PER_BLOCK, used: int | None = None):
        self.seed = seed
        self.stream_id = stream_id
        self.dim = dim
        self.steps_per_block = steps_per_block

        first = stream_id * paths_per_stream
        self.paths = range(first, first + (paths_per_stream if used is None else used))

    def block(self, block: int) -> np.ndarray:
        return np.stack([
            generator(self.seed, TAG_INCREMENTS, path, block).standard_normal(
                (self.steps_per_block, self.dim)
            )
            for path in self.paths
        ])

    def normals(self, k_start: int, k_end: int) -> np.ndarray:
        """Draws for grid steps k_start..k_end-1, shape (paths, k_end - k_start, dim)."""
        if k_end <= k_start:
            return np.zeros((len(self.paths), 0, self.dim))

        size = self.steps_per_block
        first, last = k_start // size, (k_end - 1) // size
        chunk = np.concatenate([self.block(b) for b in range(first, last + 1)], axis=1)

        offset = k_start - first * size
        return chunk[:, offset:offset + (k_end - k_start), :]

    def initial(self) -> np.ndarray:
        """One normal vector per path, independent from the increments."""
        return np.stack([
            generator(self.seed, TAG_INITIAL, path).standard_normal(self.dim)
            for path in self.paths
        ])


def stream_layout(n_paths: int, paths_per_stream: int = PATHS_PER_STREAM) -> Tuple[int, int]:
    """(number of streams, paths used from the last stream)."""
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")
    streams = -(-n_paths // paths_per_stream)
    return streams, n_paths - (streams - 1) * paths_per_stream
