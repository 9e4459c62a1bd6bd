"""Set-associative branch target buffer simulator.

Models the BTB the way the probe methodology assumes it is organized:
PC bits [index_lo .. index_hi] select one of 2^(index_hi-index_lo+1) sets
and the remaining bits identify the entry within the set. Bit numbering is
0-based (LSB = bit 0) everywhere; reports echo the 1-based convention too.

Entries are keyed by every PC bit outside the index range (the low bits
below index_lo plus the tag bits above index_hi, up to tag_hi). Keeping the
low bits in the key gives full disambiguation: two distinct branch PCs
never collapse into one entry, which is what the probe analysis requires.
A tag_hi below 47 models truncated tags that alias high address bits.

Replacement is true per-set LRU by default, with FIFO and seeded random
available for sensitivity runs. LRU is a simulator assumption only; the
probe data cannot identify the policy of any real core.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

VADDR_BITS = 48
DEFAULT_WARMUP_ROUNDS = 10
DEFAULT_MEASURE_ROUNDS = 1


class Replacement(str, Enum):
    LRU = "lru"
    FIFO = "fifo"
    RANDOM = "random"


class Access(Enum):
    HIT = "hit"
    MISS = "miss"


@dataclass(frozen=True)
class BtbGeometry:
    """One hypothesis for the BTB organization.

    ways        entries per set (W)
    index_lo    lowest PC bit of the set index (0-based)
    index_hi    highest PC bit of the set index; sets = 2^(index_hi-index_lo+1)
    replacement eviction policy; `seed` feeds RANDOM only
    tag_hi      highest PC bit kept in the entry key (47 = no truncation)

    Capacity is always derived as sets * ways, never stored.
    """

    ways: int
    index_lo: int
    index_hi: int
    replacement: Replacement = Replacement.LRU
    seed: int = 0
    tag_hi: int = VADDR_BITS - 1

    def __post_init__(self):
        if self.ways < 1:
            raise ValueError("ways must be >= 1")
        if not 0 <= self.index_lo <= self.index_hi:
            raise ValueError("need 0 <= index_lo <= index_hi")
        if self.index_hi >= VADDR_BITS:
            raise ValueError(f"index_hi must stay below {VADDR_BITS}")
        if not self.index_hi <= self.tag_hi < VADDR_BITS:
            raise ValueError("tag_hi must lie in [index_hi, 47]")

    @property
    def index_bits(self) -> int:
        return self.index_hi - self.index_lo + 1

    @property
    def sets(self) -> int:
        return 1 << self.index_bits

    @property
    def capacity(self) -> int:
        return self.sets * self.ways

    @classmethod
    def from_sets(cls, sets: int, ways: int, index_lo: int, **kwargs) -> "BtbGeometry":
        """Build a geometry from a set count (power of two >= 2)."""
        if sets < 2 or sets & (sets - 1):
            raise ValueError("sets must be a power of two >= 2")
        index_hi = index_lo + sets.bit_length() - 2
        return cls(ways=ways, index_lo=index_lo, index_hi=index_hi, **kwargs)

    def describe(self) -> dict:
        return {
            "sets": self.sets,
            "ways": self.ways,
            "index_lo": self.index_lo,
            "index_hi": self.index_hi,
            "replacement": self.replacement.value,
            "seed": self.seed,
            "tag_hi": self.tag_hi,
        }


@dataclass(frozen=True)
class AddressDecomposition:
    """PC split into the three bit fields the BTB cares about."""

    unused_low: int
    index: int
    tag: int


def decompose(geometry: BtbGeometry, pc: int) -> AddressDecomposition:
    g = geometry
    return AddressDecomposition(
        unused_low=pc & ((1 << g.index_lo) - 1),
        index=(pc >> g.index_lo) & (g.sets - 1),
        tag=(pc >> (g.index_hi + 1)) & ((1 << (g.tag_hi - g.index_hi)) - 1),
    )


def recompose(geometry: BtbGeometry, parts: AddressDecomposition) -> int:
    """Inverse of decompose for the PC bits at or below tag_hi."""
    g = geometry
    return parts.unused_low | (parts.index << g.index_lo) | (parts.tag << (g.index_hi + 1))


def entry_key(geometry: BtbGeometry, pc: int) -> int:
    """Within-set identity of a PC: all non-index bits up to tag_hi."""
    d = decompose(geometry, pc)
    return (d.tag << geometry.index_lo) | d.unused_low


def _index_key_pairs(geometry: BtbGeometry, trace) -> list:
    """Vectorized decompose of a whole trace into (set index, entry key)."""
    a = np.asarray(trace, dtype=np.int64)
    if a.size == 0:
        return []
    if int(a.min()) < 0 or int(a.max()) >> VADDR_BITS:
        raise ValueError(f"trace addresses must fit {VADDR_BITS}-bit virtual space")
    g = geometry
    idx = ((a >> g.index_lo) & (g.sets - 1)).tolist()
    tag_mask = (1 << (g.tag_hi - g.index_hi)) - 1
    keys = ((((a >> (g.index_hi + 1)) & tag_mask) << g.index_lo)
            | (a & ((1 << g.index_lo) - 1))).tolist()
    return list(zip(idx, keys))


def _pass_lru(pairs, sets, ways):
    misses = 0
    for i, k in pairs:
        s = sets[i]
        if k in s:
            del s[k]  # reinsertion moves the key to most-recent position
            s[k] = None
        else:
            misses += 1
            if len(s) == ways:
                s.pop(next(iter(s)))
            s[k] = None
            assert len(s) <= ways
    return misses


def _pass_fifo(pairs, sets, ways):
    misses = 0
    for i, k in pairs:
        s = sets[i]
        if k not in s:
            misses += 1
            if len(s) == ways:
                s.pop(next(iter(s)))
            s[k] = None
            assert len(s) <= ways
    return misses


def _pass_random(pairs, sets, ways, rng):
    misses = 0
    for i, k in pairs:
        s = sets[i]
        if k not in s:
            misses += 1
            if len(s) == ways:
                victims = tuple(s)
                del s[victims[rng.randrange(len(victims))]]
            s[k] = None
            assert len(s) <= ways
    return misses


class BtbState:
    """Mutable BTB contents for one geometry.

    Each set is an insertion-ordered dict of entry keys; the order doubles
    as replacement metadata (front of the dict is the next victim for
    LRU/FIFO). Single owner, not thread-safe; replays on separate states
    are independent.
    """

    def __init__(self, geometry: BtbGeometry):
        self.geometry = geometry
        self.sets = [dict() for _ in range(geometry.sets)]
        self.miss_counter = 0
        self.access_counter = 0
        self._rng = random.Random(geometry.seed)

    def access(self, pc: int) -> Access:
        """Look up one PC, inserting (and evicting) on a miss."""
        g = self.geometry
        pair = [(decompose(g, pc).index, entry_key(g, pc))]
        misses = self.run_pairs(pair)
        return Access.MISS if misses else Access.HIT

    def run_pairs(self, pairs) -> int:
        """Replay pre-decomposed (index, key) pairs once; returns misses."""
        g = self.geometry
        if g.replacement is Replacement.LRU:
            misses = _pass_lru(pairs, self.sets, g.ways)
        elif g.replacement is Replacement.FIFO:
            misses = _pass_fifo(pairs, self.sets, g.ways)
        else:
            misses = _pass_random(pairs, self.sets, g.ways, self._rng)
        self.access_counter += len(pairs)
        self.miss_counter += misses
        return misses

    def run_trace(self, trace) -> int:
        return self.run_pairs(_index_key_pairs(self.geometry, trace))


@dataclass(frozen=True)
class MeasurementRecord:
    """One (B, N) observation: misprediction count and the derived rate.

    miss_rate = mispredictions / (branch_count * measure_rounds); hardware
    records may exceed 1.0 (interrupt-induced extra mispredictions).
    """

    branch_count: int
    stride: int | None
    mispredictions: int
    miss_rate: float
    backend: str = "sim"
    measure_rounds: int = 1

    @property
    def rate_above_one(self) -> bool:
        return self.miss_rate > 1.0


def replay(geometry: BtbGeometry, trace, warmup_rounds: int = DEFAULT_WARMUP_ROUNDS,
           measure_rounds: int = DEFAULT_MEASURE_ROUNDS, stride: int | None = None,
           backend: str = "sim") -> MeasurementRecord:
    """Run `trace` warmup_rounds times (misses discarded), then count misses
    over measure_rounds further passes.

    Deterministic: identical (geometry, trace, rounds, seed) gives an
    identical record.
    """
    if len(trace) == 0:
        raise ValueError("empty gadget")
    if warmup_rounds < 0:
        raise ValueError("warmup_rounds must be >= 0")
    if measure_rounds < 1:
        raise ValueError("measure_rounds must be >= 1")
    state = BtbState(geometry)
    pairs = _index_key_pairs(geometry, trace)
    for _ in range(warmup_rounds):
        state.run_pairs(pairs)
    measured = 0
    for _ in range(measure_rounds):
        measured += state.run_pairs(pairs)
    rate = measured / (len(trace) * measure_rounds)
    return MeasurementRecord(branch_count=len(trace), stride=stride,
                             mispredictions=measured, miss_rate=rate,
                             backend=backend, measure_rounds=measure_rounds)


@dataclass(frozen=True)
class NoiseModel:
    """Poisson extra-miss model for interrupt-style disturbance.

    lam = 0 turns the model off. A nonzero rate adds Poisson(lam * B)
    mispredictions to a record, so noisy rates can exceed 1.0 just like
    hardware measurements do.
    """

    lam: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("noise rate must be >= 0")
        if self.seed < 0:
            raise ValueError("noise seed must be >= 0")

    def describe(self) -> dict:
        return {"lam": self.lam, "seed": self.seed}


def inject_noise(record: MeasurementRecord, model: NoiseModel | None) -> MeasurementRecord:
    """Add seeded Poisson noise to a record; identity when the model is off.

    The draw is keyed on (seed, B, N) so a sweep gets the same noise for a
    cell no matter what order cells are computed in.
    """
    if model is None or model.lam == 0.0:
        return record
    rng = np.random.default_rng([model.seed, record.branch_count, record.stride or 0])
    extra = int(rng.poisson(model.lam * record.branch_count))
    if extra == 0:
        return record
    misses = record.mispredictions + extra
    denom = record.branch_count * record.measure_rounds
    return replace(record, mispredictions=misses, miss_rate=misses / denom)
