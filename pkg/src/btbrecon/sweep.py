"""Grid sweeps over (branch count, stride) and the miss-rate matrix.

A sweep evaluates every (B, N) cell of a grid against a backend: either
the simulator (which builds the probe trace per cell and replays it) or a
dataset of ingested hardware measurements. Cells hold miss rates, which
are kept verbatim even above 1.0; inference clamps on read instead.
Missing cells stay missing; they are never conflated with a 0.0 rate.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .gadget import DEFAULT_BASE, MIN_SIM_STRIDE, branch_addresses
from .sim import (
    DEFAULT_MEASURE_ROUNDS,
    DEFAULT_WARMUP_ROUNDS,
    BtbGeometry,
    MeasurementRecord,
    NoiseModel,
    inject_noise,
    replay,
)

MATRIX_FORMAT = "btbrecon-matrix-v1"

PRESET_NAMES = ("capacity", "set-index", "both")


@dataclass(frozen=True)
class SweepGrid:
    """Axes and measurement protocol of one sweep.

    Strides must be powers of two. The floor is 4 rather than the 8-byte
    gadget minimum: a 4-byte stride is a simulator-only probe (no emittable
    gadget exists for it) but it is the only way to exercise index bit 2.
    """

    b_values: tuple
    n_values: tuple
    warmup_rounds: int = DEFAULT_WARMUP_ROUNDS
    measure_rounds: int = DEFAULT_MEASURE_ROUNDS

    def __post_init__(self):
        object.__setattr__(self, "b_values", tuple(self.b_values))
        object.__setattr__(self, "n_values", tuple(self.n_values))
        if not self.b_values or not self.n_values:
            raise ValueError("grid axes must be non-empty")
        if list(self.b_values) != sorted(set(self.b_values)):
            raise ValueError("b_values must be strictly ascending")
        if list(self.n_values) != sorted(set(self.n_values)):
            raise ValueError("n_values must be strictly ascending")
        if any(b < 1 for b in self.b_values):
            raise ValueError("branch counts must be >= 1")
        for n in self.n_values:
            if n < MIN_SIM_STRIDE or n & (n - 1):
                raise ValueError(f"stride {n} is not a power of two >= {MIN_SIM_STRIDE}")

    @property
    def cell_count(self) -> int:
        return len(self.b_values) * len(self.n_values)


def preset_grid(name: str) -> SweepGrid:
    """Named grids: 'capacity' (B=1K..8K step 1K, N=8..1024) and
    'set-index' (B=1..512 powers of two, N=2^5..2^19)."""
    if name == "capacity":
        return SweepGrid(tuple(range(1024, 8192 + 1, 1024)),
                         tuple(1 << j for j in range(3, 11)))
    if name == "set-index":
        return SweepGrid(tuple(1 << i for i in range(10)),
                         tuple(1 << j for j in range(5, 20)))
    raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


def hypothesis_grids(geometry: BtbGeometry) -> list[SweepGrid]:
    """Two-part grid derived from a geometry hypothesis, sufficient for an
    exact inference round trip.

    capacity part: B = 1..2*capacity (powers of two), N = 2^min(3,lo)..2^(lo+2)
    set part:      B = 1..capacity/4, N = 2^(lo+2)..2^(hi+3)

    One warm-up round is used: deterministic replacement reaches steady
    state after a single pass over a cyclic trace, so the measured rates
    match any longer warm-up at a fraction of the cost.
    """
    lo, hi, cap = geometry.index_lo, geometry.index_hi, geometry.capacity
    cap_rows = tuple(1 << i for i in range((2 * cap).bit_length()))
    cap_cols = tuple(1 << j for j in range(min(3, lo), lo + 3))
    set_rows = tuple(1 << i for i in range(max(1, (cap // 4).bit_length())))
    set_cols = tuple(1 << j for j in range(lo + 2, hi + 4))
    return [SweepGrid(cap_rows, cap_cols, warmup_rounds=1),
            SweepGrid(set_rows, set_cols, warmup_rounds=1)]


class SimulatorBackend:
    """Per-cell gadget construction and replay against one geometry."""

    label = "sim"

    def __init__(self, geometry: BtbGeometry, noise: NoiseModel | None = None,
                 base_address: int = DEFAULT_BASE):
        self.geometry = geometry
        self.noise = noise
        self.base_address = base_address

    def measure(self, b: int, n: int, warmup_rounds: int, measure_rounds: int) -> MeasurementRecord:
        trace = branch_addresses(b, n, self.base_address)
        record = replay(self.geometry, trace, warmup_rounds, measure_rounds, stride=n)
        return inject_noise(record, self.noise)

    def metadata(self) -> dict:
        meta = {"backend": self.label,
                "geometry": self.geometry.describe(),
                "base_address": self.base_address}
        if self.noise is not None and self.noise.lam > 0:
            meta["noise"] = self.noise.describe()
        return meta


class DatasetBackend:
    """Cell lookup over ingested measurement records."""

    label = "dataset"

    def __init__(self, records):
        self._by_cell = {(r.branch_count, r.stride): r for r in records}

    def measure(self, b: int, n: int, warmup_rounds: int, measure_rounds: int) -> MeasurementRecord:
        try:
            return self._by_cell[(b, n)]
        except KeyError:
            raise ValueError(f"dataset has no record for (B={b}, N={n})") from None

    def metadata(self) -> dict:
        return {"backend": self.label}


@dataclass
class MissMatrix:
    """Miss rates indexed by (B, N), plus raw misprediction counts where known.

    cells maps (b, n) -> rate; absent keys are unmeasured cells. Rates above
    1.0 are preserved. counts maps (b, n) -> int or None.
    """

    b_values: tuple
    n_values: tuple
    cells: dict
    counts: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.b_values = tuple(self.b_values)
        self.n_values = tuple(self.n_values)

    @classmethod
    def empty(cls) -> "MissMatrix":
        return cls((), (), {}, {}, {})

    def rate(self, b: int, n: int, clamp: bool = False):
        r = self.cells.get((b, n))
        if r is None:
            return None
        return min(r, 1.0) if clamp else r

    def count(self, b: int, n: int):
        return self.counts.get((b, n))

    @property
    def warmup_rounds(self):
        return self.metadata.get("warmup_rounds")

    @property
    def measure_rounds(self):
        return self.metadata.get("measure_rounds", 1)

    @property
    def has_rates_above_one(self) -> bool:
        return any(r > 1.0 for r in self.cells.values())

    def to_dict(self) -> dict:
        cells = [[self.cells.get((b, n)) for n in self.n_values] for b in self.b_values]
        counts = [[self.counts.get((b, n)) for n in self.n_values] for b in self.b_values]
        return {"format": MATRIX_FORMAT, "metadata": self.metadata,
                "b_values": list(self.b_values), "n_values": list(self.n_values),
                "cells": cells, "counts": counts}

    @classmethod
    def from_dict(cls, data: dict) -> "MissMatrix":
        if data.get("format") != MATRIX_FORMAT:
            raise ValueError(f"not a {MATRIX_FORMAT} document")
        b_values = tuple(data["b_values"])
        n_values = tuple(data["n_values"])
        rows = data["cells"]
        count_rows = data.get("counts") or [[None] * len(n_values)] * len(b_values)
        if len(rows) != len(b_values) or any(len(r) != len(n_values) for r in rows):
            raise ValueError("cells array does not match the grid axes")
        cells, counts = {}, {}
        for i, b in enumerate(b_values):
            for j, n in enumerate(n_values):
                if rows[i][j] is not None:
                    cells[(b, n)] = float(rows[i][j])
                    c = count_rows[i][j]
                    if c is not None:
                        counts[(b, n)] = int(c)
        return cls(b_values, n_values, cells, counts, data.get("metadata", {}))

    def to_json_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), indent=1).encode()

    @classmethod
    def from_json_bytes(cls, data: bytes) -> "MissMatrix":
        return cls.from_dict(json.loads(data))


def run_sweep(backend, grid: SweepGrid) -> MissMatrix:
    """Fill every grid cell from the backend.

    Cells are independent (each one owns its private simulator state), so
    evaluation order cannot change the result. A dataset backend that lacks
    a cell raises an error naming the (B, N) pair.
    """
    cells, counts = {}, {}
    for b in grid.b_values:
        for n in grid.n_values:
            record = backend.measure(b, n, grid.warmup_rounds, grid.measure_rounds)
            cells[(b, n)] = record.miss_rate
            counts[(b, n)] = record.mispredictions
    metadata = {"warmup_rounds": grid.warmup_rounds,
                "measure_rounds": grid.measure_rounds}
    metadata.update(backend.metadata())
    return MissMatrix(grid.b_values, grid.n_values, cells, counts, metadata)


def sweep_simulator(geometry: BtbGeometry, grids, noise: NoiseModel | None = None,
                    base_address: int = DEFAULT_BASE) -> MissMatrix:
    """Run one or more grids against a simulated geometry and merge them."""
    if isinstance(grids, SweepGrid):
        grids = [grids]
    backend = SimulatorBackend(geometry, noise=noise, base_address=base_address)
    return merge([run_sweep(backend, g) for g in grids])


def matrix_from_records(records) -> MissMatrix:
    """Matrix spanning exactly the cells present in `records`."""
    if not records:
        return MissMatrix.empty()
    rounds = {r.measure_rounds for r in records}
    if len(rounds) > 1:
        raise ValueError("records mix different measure_rounds settings")
    b_values = tuple(sorted({r.branch_count for r in records}))
    n_values = tuple(sorted({r.stride for r in records}))
    cells = {(r.branch_count, r.stride): r.miss_rate for r in records}
    counts = {(r.branch_count, r.stride): r.mispredictions for r in records}
    metadata = {"backend": "dataset", "warmup_rounds": None,
                "measure_rounds": rounds.pop()}
    return MissMatrix(b_values, n_values, cells, counts, metadata)


def merge(matrices) -> MissMatrix:
    """Union of matrices with identical round settings.

    Cells present in several inputs with the same rate are kept; genuine
    conflicts are resolved by the mean and listed in metadata["conflicts"].
    Merging a single matrix (or a matrix with empties) returns it as-is.
    """
    present = [m for m in matrices if m.b_values]
    if not present:
        return MissMatrix.empty()
    if len(present) == 1:
        return present[0]
    settings = {(m.warmup_rounds, m.measure_rounds) for m in present}
    if len(settings) > 1:
        raise ValueError(f"cannot merge: mismatched warm-up/measure settings {sorted(settings, key=str)}")
    b_values = tuple(sorted({b for m in present for b in m.b_values}))
    n_values = tuple(sorted({n for m in present for n in m.n_values}))
    cells, counts, conflicts = {}, {}, []
    conflicted = set()
    for m in present:
        for key, rate in m.cells.items():
            if key in cells and cells[key] != rate:
                conflicts.append({"b": key[0], "n": key[1],
                                  "rates": [cells[key], rate]})
                conflicted.add(key)
                cells[key] = (cells[key] + rate) / 2
                counts.pop(key, None)
                continue
            cells[key] = rate
            c = m.counts.get(key)
            if c is not None and key not in conflicted:
                counts[key] = c
    warmup, rounds = settings.pop()
    metadata = {"backend": "merge",
                "sources": [m.metadata.get("backend", "?") for m in present],
                "warmup_rounds": warmup, "measure_rounds": rounds}
    for m in present:
        if "geometry" in m.metadata:
            metadata.setdefault("geometry", m.metadata["geometry"])
        if "noise" in m.metadata:
            metadata.setdefault("noise", m.metadata["noise"])
    if conflicts:
        metadata["conflicts"] = conflicts
    return MissMatrix(b_values, n_values, cells, counts, metadata)


_DIRECTIVE_RE = re.compile(r"#\s*measure_rounds\s*=\s*(\d+)\s*$")


def ingest_csv(source) -> list[MeasurementRecord]:
    """Parse the `B,N,C` line protocol.

    `#` lines are comments; `# measure_rounds=k` applies to the records
    that follow; one optional `B,N,C` header line is tolerated. Malformed
    lines raise with their line number. A stride that is not a power of
    two is kept but warned about.
    """
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    elif isinstance(source, (str, Path)):
        lines = Path(source).read_text().splitlines()
    else:
        lines = [str(x) for x in source]

    records = []
    measure_rounds = 1
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _DIRECTIVE_RE.match(line)
            if m:
                measure_rounds = int(m.group(1))
                if measure_rounds < 1:
                    raise ValueError(f"line {lineno}: measure_rounds must be >= 1")
            continue
        parts = [p.strip() for p in line.split(",")]
        if [p.upper() for p in parts] == ["B", "N", "C"]:
            continue
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'B,N,C', got {raw!r}")
        try:
            b, n, c = (int(p) for p in parts)
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer field in {raw!r}") from None
        if b < 1 or n < 1 or c < 0:
            raise ValueError(f"line {lineno}: need B >= 1, N >= 1, C >= 0, got {raw!r}")
        if n & (n - 1):
            warnings.warn(f"line {lineno}: stride {n} is not a power of two; record kept")
        records.append(MeasurementRecord(
            branch_count=b, stride=n, mispredictions=c,
            miss_rate=c / (b * measure_rounds), backend="csv",
            measure_rounds=measure_rounds))
    return records


def records_to_csv(records) -> str:
    """Serialize records back to the `B,N,C` protocol, losslessly."""
    rounds = {r.measure_rounds for r in records}
    if len(rounds) > 1:
        raise ValueError("cannot serialize records with mixed measure_rounds")
    lines = ["# B,N,C"]
    if records:
        mr = rounds.pop()
        if mr != 1:
            lines.append(f"# measure_rounds={mr}")
        for r in records:
            if r.stride is None:
                raise ValueError("record without a stride cannot be serialized")
            lines.append(f"{r.branch_count},{r.stride},{r.mispredictions}")
    return "\n".join(lines) + "\n"


def load_matrix(path) -> MissMatrix:
    return MissMatrix.from_json_bytes(Path(path).read_bytes())


def save_matrix(matrix: MissMatrix, path):
    Path(path).write_bytes(matrix.to_json_bytes())
