"""Two-sided Wiener paths built from a counter-based generator.

The increment of coordinate ``c`` over the unit interval ``[n, n+1]`` is a
standard normal keyed by ``(seed, n, level=0, offset=0, c)``.  Finer
resolutions come from repeated Brownian-bridge midpoint splits: the piece
``j`` at level ``l`` is divided using the normal keyed by
``(seed, n, l+1, j, c)``.  Any sub-interval at any dyadic resolution is
therefore reproducible without generating the rest of the path, and a coarse
increment is the sum of its refined pieces up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numba as nb
import numpy as np

from .seeding import mix64

MAX_LEVEL = 30
_NOISE_SALT = 0x5851F42D4C957F2D

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_U48 = np.uint64(48)
_U56 = np.uint64(56)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_ALT = np.uint64(0xD6E8FEB86659FD93)
_TWO_M53 = 2.0 ** -53


class NoisePathError(ValueError):
    pass


@nb.njit(cache=True)
def _mix(z):
    z = (z ^ (z >> _U30)) * _M1
    z = (z ^ (z >> _U27)) * _M2
    return z ^ (z >> _U31)


@nb.njit(cache=True)
def _gauss(key, interval, level, offset, coord):
    c = (np.uint64(level) << _U56) ^ (np.uint64(coord) << _U48) ^ np.uint64(offset)
    h = _mix(_mix(key + np.uint64(interval) * _GOLD) ^ c)
    u1 = (np.float64(_mix(h) >> _U11) + 0.5) * _TWO_M53
    u2 = np.float64(_mix(h ^ _ALT) >> _U11) * _TWO_M53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True)
def _fill_unit_block(keys, interval, level, dim, out):
    # out has shape (2**level, len(keys), dim)
    for s in range(keys.shape[0]):
        key = keys[s]
        for c in range(dim):
            out[0, s, c] = _gauss(key, interval, 0, 0, c)
            for lev in range(level):
                sd = 0.5 * math.sqrt(2.0 ** (-lev))
                for j in range((1 << lev) - 1, -1, -1):
                    delta = out[j, s, c]
                    left = 0.5 * delta + sd * _gauss(key, interval, lev + 1, j, c)
                    out[2 * j, s, c] = left
                    out[2 * j + 1, s, c] = delta - left


def dyadic_level(t: float) -> int:
    """Smallest ``k`` with ``t * 2**k`` an integer; error beyond ``MAX_LEVEL``."""
    for k in range(MAX_LEVEL + 1):
        if float(t * 2**k).is_integer():
            return k
    raise NoisePathError(f"time {t!r} is not on a dyadic grid of level <= {MAX_LEVEL}")


def step_level(step: float) -> int:
    mant, exp = math.frexp(step)
    if step <= 0 or mant != 0.5 or step > 1.0:
        raise NoisePathError(f"step {step!r} is not of the form 2**-k with k >= 0")
    return 1 - exp


def _unit_block(keys: np.ndarray, dim: int, interval: int, level: int) -> np.ndarray:
    out = np.empty((1 << level, keys.shape[0], dim))
    _fill_unit_block(keys, np.int64(interval), level, dim, out)
    return out


def _base_increments(keys: np.ndarray, dim: int, a: float, b: float, level: int) -> np.ndarray:
    """Increments over the base-time range [a, b] at resolution 2**-level."""
    scale = 1 << level
    ia, ib = round(a * scale), round(b * scale)
    first, last = ia // scale, -(-ib // scale)
    pieces = []
    for n in range(first, last):
        block = _unit_block(keys, dim, n, level)
        lo = max(ia - n * scale, 0)
        hi = min(ib - n * scale, scale)
        pieces.append(block[lo:hi])
    return np.concatenate(pieces, axis=0)


@dataclass(frozen=True)
class PathEnsemble:
    """Independent two-sided Wiener paths, one per seed, evaluated together.

    ``offset`` and ``reversed`` describe a view of the underlying paths: the
    increment over ``[a, b]`` is the base increment over ``[a+offset,
    b+offset]``, or, for a reversed view, the base increments over
    ``[-(b+offset), -(a+offset)]`` listed in reverse order.
    """

    seeds: tuple[int, ...]
    dim: int = 1
    offset: float = 0.0
    reversed: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise NoisePathError("dimension must be positive")
        if len(self.seeds) == 0:
            raise NoisePathError("ensemble needs at least one seed")
        object.__setattr__(self, "seeds", tuple(int(s) & ((1 << 64) - 1) for s in self.seeds))
        object.__setattr__(self, "offset", float(self.offset))
        dyadic_level(self.offset)

    @property
    def size(self) -> int:
        return len(self.seeds)

    @property
    def keys(self) -> np.ndarray:
        return np.array([mix64(s ^ _NOISE_SALT) for s in self.seeds], dtype=np.uint64)

    def shift(self, s: float) -> "PathEnsemble":
        """The Wiener shift: increments over [a, b] become those over [a+s, b+s]."""
        try:
            dyadic_level(s)
        except NoisePathError as exc:
            raise NoisePathError(f"shift {s!r} is not a grid multiple") from exc
        return replace(self, offset=self.offset + s)

    def time_reversed(self) -> "PathEnsemble":
        """The path ``s -> -W(-s)``: increments over [a, b] are those over [-b, -a]."""
        return replace(self, offset=-self.offset, reversed=not self.reversed)

    def subset(self, index: Sequence[int] | np.ndarray) -> "PathEnsemble":
        return replace(self, seeds=tuple(self.seeds[i] for i in np.asarray(index, dtype=int)))

    def increments(self, t0: float, t1: float, step: float) -> np.ndarray:
        """Increments on the grid ``t0, t0+step, ..., t1``; shape ``(n, size, dim)``."""
        if not t0 < t1:
            raise NoisePathError("need t0 < t1")
        k = step_level(step)
        n = (t1 - t0) / step
        if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)):
            raise NoisePathError("step does not divide t1 - t0")
        if self.reversed:
            a, b = -(t1 + self.offset), -(t0 + self.offset)
        else:
            a, b = t0 + self.offset, t1 + self.offset
        fine = max(k, dyadic_level(a), dyadic_level(b))
        if fine > MAX_LEVEL:
            raise NoisePathError("required resolution exceeds MAX_LEVEL")
        inc = _base_increments(self.keys, self.dim, a, b, fine)
        if fine > k:
            inc = inc.reshape(-1, 1 << (fine - k), self.size, self.dim).sum(axis=1)
        if self.reversed:
            inc = inc[::-1]
        return np.ascontiguousarray(inc)

    def iter_increments(self, t0: float, t1: float, step: float,
                        chunk: float = 1.0) -> Iterator[tuple[float, np.ndarray]]:
        """Yield ``(chunk_end, increments)`` over consecutive pieces of [t0, t1]."""
        t = t0
        while t < t1:
            nxt = min((math.floor(t / chunk) + 1) * chunk, t1)
            yield nxt, self.increments(t, nxt, step)
            t = nxt

    def value(self, t: float, step: float = 1.0) -> np.ndarray:
        """W(t) for every seed, with W(0) = 0; shape ``(size, dim)``."""
        if t == 0:
            return np.zeros((self.size, self.dim))
        if t > 0:
            return self.increments(0.0, t, step).sum(axis=0)
        return -self.increments(t, 0.0, step).sum(axis=0)


@dataclass(frozen=True)
class WienerPath2S:
    """A single seed-deterministic two-sided Wiener path in ``dim`` dimensions."""

    seed: int
    dim: int = 1
    offset: float = 0.0
    reversed: bool = False

    def as_ensemble(self) -> PathEnsemble:
        return PathEnsemble((self.seed,), self.dim, self.offset, self.reversed)

    def shift(self, s: float) -> "WienerPath2S":
        e = self.as_ensemble().shift(s)
        return replace(self, offset=e.offset)

    def time_reversed(self) -> "WienerPath2S":
        e = self.as_ensemble().time_reversed()
        return replace(self, offset=e.offset, reversed=e.reversed)

    def increments(self, t0: float, t1: float, step: float) -> np.ndarray:
        """Increments on the grid from ``t0`` to ``t1``; shape ``(n, dim)``."""
        return self.as_ensemble().increments(t0, t1, step)[:, 0, :]

    def value(self, t: float, step: float = 1.0) -> np.ndarray:
        return self.as_ensemble().value(t, step)[0]


def ensemble(seeds: Sequence[int] | np.ndarray, dim: int = 1) -> PathEnsemble:
    return PathEnsemble(tuple(int(s) for s in seeds), dim)
