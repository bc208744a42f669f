"""Counter-based random streams.

Every Monte Carlo trial owns a fixed slice of Philox counter space under a
key derived from ``(seed, *path)``.  Trial ``i`` of a stream therefore sees
the same random numbers whether the trials are generated in one call, in
chunks, or out of order, which is what makes the simulations reproducible
under arbitrary partitioning.
"""
from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def _key(seed: int, path: tuple[int, ...]) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return ss.generate_state(2, dtype=np.uint64)


def _raw_blocks(key: np.ndarray, start: int, count: int) -> np.ndarray:
    """Philox output blocks for counters ``start .. start+count-1``, shape (count, 4)."""
    if count == 0:
        return np.empty((0, 4), dtype=np.uint64)
    # numpy's Philox increments before producing a block, so block k comes from counter k-1.
    bg = np.random.Philox(key=key, counter=int(start))
    return bg.random_raw(4 * count).reshape(count, 4)


def raw_to_uniform(raw: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles strictly inside (0, 1)."""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def box_muller(u: np.ndarray) -> np.ndarray:
    """Turn uniforms of shape (..., 2k) into standard normals of the same shape."""
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    out = np.empty_like(u)
    out[..., 0::2] = radius * np.cos(_TWO_PI * u2)
    out[..., 1::2] = radius * np.sin(_TWO_PI * u2)
    return out


class CounterStream:
    """A keyed family of per-row random draws.

    ``uniform_rows(start, count, k)`` returns ``count`` rows of ``k`` uniforms;
    row ``i`` always comes from the same counters ``i*m .. i*m+m-1`` with
    ``m = ceil(k/4)``, independent of ``start``/``count`` chunking.

    The stream also keeps a cursor so it can be used sequentially, one row at a
    time, through :meth:`next_uniforms` / :meth:`next_normals`.
    """

    def __init__(self, seed: int, *path: int):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._key = _key(self.seed, self.path)
        self.position = 0

    def child(self, *path: int) -> "CounterStream":
        return CounterStream(self.seed, *(self.path + tuple(path)))

    def uniform_rows(self, start: int, count: int, k: int) -> np.ndarray:
        m = -(-k // 4)
        raw = _raw_blocks(self._key, start * m, count * m)
        return raw_to_uniform(raw.reshape(count, 4 * m)[:, :k])

    def normal_rows(self, start: int, count: int, k: int) -> np.ndarray:
        m = -(-k // 4)
        raw = _raw_blocks(self._key, start * m, count * m)
        return box_muller(raw_to_uniform(raw.reshape(count, 4 * m)))[:, :k]

    def next_uniforms(self, k: int) -> np.ndarray:
        row = self.uniform_rows(self.position, 1, k)[0]
        self.position += 1
        return row

    def next_normals(self, k: int) -> np.ndarray:
        row = self.normal_rows(self.position, 1, k)[0]
        self.position += 1
        return row
