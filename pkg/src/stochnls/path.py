"""Discretized Brownian driving paths.

Increments are generated from a counter-based Philox stream keyed by
``(seed, sample_index)``; the n-th raw 64-bit word of that stream produces the
n-th increment.  Gaussian draws use the inverse normal CDF applied to the
open-interval uniform ``((raw >> 11) + 0.5) * 2**-53``.

Sampled increments are rounded to integer multiples of ``QUANTUM`` (2**-40).
With ``|W| < 2**12`` every partial sum of such numbers is exact in double
precision, so block sums, nested subsampling and cumulative sums agree
bitwise regardless of summation order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

__all__ = [
    "QUANTUM",
    "BrownianPath",
    "sample_path",
    "subsample",
    "dump_path",
    "load_path",
]

QUANTUM = 2.0**-40
_EXACT_BOUND = 2.0**12
_HEADER = struct.Struct("<QdQ")


@dataclass(frozen=True)
class BrownianPath:
    """Brownian increments on an equidistant grid of ``[0, T]``."""

    T: float
    increments: np.ndarray
    seed: int = 0
    sample_index: int = 0
    level: int = 0
    _W: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.ndim != 1 or inc.size == 0:
            raise ValueError("increments must be a non-empty 1-D array")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        inc = inc.copy()
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)
        W = np.empty(inc.size + 1)
        W[0] = 0.0
        np.cumsum(inc, out=W[1:])
        W.flags.writeable = False
        object.__setattr__(self, "_W", W)

    @property
    def n_steps(self) -> int:
        return int(self.increments.size)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def t_grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def W(self) -> np.ndarray:
        """Path values ``W(t_n)``, ``W(0) = 0``, by left-to-right summation."""
        return self._W

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BrownianPath):
            return NotImplemented
        return (
            self.T == other.T
            and self.seed == other.seed
            and self.sample_index == other.sample_index
            and self.level == other.level
            and np.array_equal(self.increments, other.increments)
        )

    __hash__ = None  # type: ignore[assignment]


def _normal_draws(seed: int, sample_index: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(sample_index),))
    key = ss.generate_state(2, dtype=np.uint64)
    bitgen = np.random.Philox(key=key, counter=0)
    raw = bitgen.random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def sample_path(seed: int, T: float, N: int, sample_index: int = 0) -> BrownianPath:
    """Draw ``N`` i.i.d. Normal(0, T/N) increments for ``(seed, sample_index)``."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if not (np.isfinite(T) and T > 0):
        raise ValueError(f"T must be positive and finite, got {T}")
    N = int(N)
    z = _normal_draws(seed, sample_index, N)
    inc = np.round(z * np.sqrt(T / N) / QUANTUM) * QUANTUM
    if np.max(np.abs(np.cumsum(inc))) >= _EXACT_BOUND:
        raise ValueError("path leaves the exactly-summable range; reduce T")
    return BrownianPath(T=float(T), increments=inc, seed=int(seed),
                        sample_index=int(sample_index))


def subsample(path: BrownianPath, factor: int) -> BrownianPath:
    """Coarsen ``path`` by summing ``factor`` consecutive increments in order."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if path.n_steps % factor:
        raise ValueError(f"factor {factor} does not divide N={path.n_steps}")
    blocks = path.increments.reshape(-1, factor)
    coarse = blocks[:, 0].copy()
    for k in range(1, factor):
        coarse += blocks[:, k]
    return BrownianPath(T=path.T, increments=coarse, seed=path.seed,
                        sample_index=path.sample_index, level=path.level)


def dump_path(path: BrownianPath, target: str | Path) -> None:
    """Write header ``(seed, T, N)`` then the increments as little-endian f64."""
    with open(target, "wb") as fh:
        fh.write(_HEADER.pack(path.seed, path.T, path.n_steps))
        fh.write(path.increments.astype("<f8").tobytes())


def load_path(source: str | Path) -> BrownianPath:
    data = Path(source).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated path file")
    seed, T, N = _HEADER.unpack_from(data)
    body = data[_HEADER.size:]
    if len(body) != 8 * N:
        raise ValueError(f"expected {N} increments, found {len(body) // 8}")
    inc = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return BrownianPath(T=T, increments=inc, seed=seed)
