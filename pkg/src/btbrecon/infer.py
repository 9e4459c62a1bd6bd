"""Geometry recovery from a miss-rate matrix.

Four deductions, each with an explicit evidence trail:

  index_lo  - smallest stride exponent j where the large-B miss rate jumps
              going from N=2^j to N=2^(j+1); fixing bit j halved the sets,
              so bit j is the lowest index bit.
  capacity  - largest B whose rate at the reference stride 2^index_lo
              (every index bit still varying) stays below theta_low.
  index_hi  - strides stop mattering once they fix every index bit; the
              plateau of mutually similar columns starts at 2^(index_hi+1).
  ways      - in the single-set regime (N beyond the index range) the rate
              is 0 up to B=W and 1.0 past it; columns vote, dissent is
              reported rather than dropped.

Inference reads rates clamped to 1.0. Raw rates above 1.0 (interrupt noise
on hardware) stay untouched in the matrix; the report notes the clamping.

Column similarity for index_hi is judged by a full-swing test rather than
a bare epsilon on every cell: two columns differ materially only where one
shows at most one stray miss while the other shows genuine thrash (rate
near 1.0 backed by at least two misses). Small-B cells flip between 0 and
1 on a single interrupt-induced event, and real measurements are known to
disagree at B=2 across single-set strides, so a strict per-cell epsilon
would tear the plateau apart on data the method is expected to handle.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .sweep import MissMatrix

REPORT_FORMAT = "btbrecon-report-v1"

ASSUMPTIONS = (
    "BTB keyed by the branch instruction's own PC (block offset +4), not the fetch-block base",
    "replacement treated as LRU by the simulator only; probe data cannot identify the hardware policy",
    "PC bits 0..2 cannot be probed by emittable gadgets (minimum stride 8, 4-byte instructions)",
    "rates above 1.0 are clamped to 1.0 on read; raw values preserved in the matrix",
)


@dataclass(frozen=True)
class InferenceConfig:
    """Thresholds that quantify the qualitative reading of the heatmaps."""

    theta_low: float = 0.25        # "still buffered" ceiling for the capacity scan
    delta_jump: float = 0.20       # band-mean increase that flags an index bit
    epsilon_similar: float = 0.05  # minimum swing gap for a material column difference
    theta_zero: float = 0.05       # "effectively zero" ceiling (single-set regime)
    capacity_band: float = 0.5     # large-B band: rows with B >= fraction * max(B)

    def __post_init__(self):
        for name in ("theta_low", "delta_jump", "epsilon_similar", "theta_zero", "capacity_band"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.delta_jump <= self.epsilon_similar:
            raise ValueError("delta_jump must exceed epsilon_similar")

    def to_dict(self) -> dict:
        return {"theta_low": self.theta_low, "delta_jump": self.delta_jump,
                "epsilon_similar": self.epsilon_similar, "theta_zero": self.theta_zero,
                "capacity_band": self.capacity_band}

    @classmethod
    def from_dict(cls, data: dict) -> "InferenceConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown inference config keys: {sorted(unknown)}")
        return cls(**known)


@dataclass
class Evidence:
    """Cells and comparisons one conclusion rests on."""

    parameter: str
    conclusion: object
    cells: list                 # (b, n, clamped rate) triples examined
    note: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"parameter": self.parameter, "conclusion": self.conclusion,
                "cells": [list(c) for c in self.cells], "note": self.note,
                "details": self.details}


class Indeterminate(Exception):
    """A deduction that the matrix cannot support."""

    def __init__(self, reason: str, evidence: Evidence | None = None):
        super().__init__(reason)
        self.reason = reason
        self.evidence = evidence


@dataclass(frozen=True)
class CapacityEstimate:
    raw: int          # grid-granularity value
    rounded: int      # nearest power of two
    flag: str | None = None

    def to_dict(self) -> dict:
        return {"raw": self.raw, "rounded": self.rounded, "flag": self.flag}


def _power_columns(matrix: MissMatrix) -> dict:
    """exponent -> stride, for power-of-two strides that have any cell."""
    cols = {}
    for n in matrix.n_values:
        if n >= 1 and n & (n - 1) == 0:
            if any((b, n) in matrix.cells for b in matrix.b_values):
                cols[n.bit_length() - 1] = n
    return dict(sorted(cols.items()))


def _column(matrix: MissMatrix, n: int, rows=None) -> list:
    """(b, clamped rate) pairs present in column n, ascending b."""
    rows = matrix.b_values if rows is None else rows
    out = []
    for b in rows:
        r = matrix.rate(b, n, clamp=True)
        if r is not None:
            out.append((b, r))
    return out


def infer_index_lo(matrix: MissMatrix, cfg: InferenceConfig = InferenceConfig()):
    """Lowest set-index bit from the first stride-doubling jump in the
    large-B band. Returns (bit, Evidence); raises Indeterminate without a jump."""
    if not matrix.b_values:
        raise Indeterminate("empty matrix")
    bmax = max(matrix.b_values)
    band = [b for b in matrix.b_values if b >= cfg.capacity_band * bmax]
    exps = _power_columns(matrix)

    means, band_cells = {}, {}
    for j, n in exps.items():
        col = _column(matrix, n, band)
        if len(col) >= 1:
            means[j] = sum(r for _, r in col) / len(col)
            band_cells[j] = [(b, n, r) for b, r in col]

    deltas, skipped = {}, []
    for j in sorted(exps):
        if j in means and (j + 1) in means:
            if len(band_cells[j]) + len(band_cells[j + 1]) >= 2:
                deltas[j] = means[j + 1] - means[j]
            else:
                skipped.append(j)
        elif (j + 1) in exps:
            skipped.append(j)

    hits = [j for j, d in sorted(deltas.items()) if d > cfg.delta_jump]
    if not hits:
        raise Indeterminate("no index-lo signature; extend N or B range",
                            Evidence("index_lo", None, [], "no band-mean jump found",
                                     {"band": band, "means": means, "deltas": deltas}))
    lo = hits[0]
    notes = [f"band mean rose {deltas[lo]:.3f} from N=2^{lo} to N=2^{lo + 1}"]
    earlier_skipped = [j for j in skipped if j < lo]
    if earlier_skipped:
        notes.append(f"ambiguous: stride pairs at exponents {earlier_skipped} lacked band cells")
    min_exp = min(exps)
    if min_exp > 2:
        notes.append(f"bits below {min_exp} unprobed (smallest stride 2^{min_exp})")
    evidence = Evidence("index_lo", lo, band_cells[lo] + band_cells[lo + 1],
                        "; ".join(notes),
                        {"band": band, "means": {str(k): v for k, v in means.items()},
                         "deltas": {str(k): v for k, v in deltas.items()},
                         "one_based": lo + 1})
    return lo, evidence


def infer_capacity(matrix: MissMatrix, index_lo: int,
                   cfg: InferenceConfig = InferenceConfig()):
    """Capacity from the reference stride column N = 2^index_lo (all index
    bits varying). Returns (CapacityEstimate, Evidence)."""
    exps = _power_columns(matrix)
    n_ref = 1 << index_lo
    note = ""
    if index_lo not in exps:
        usable = [j for j in exps if j > index_lo]
        if not usable:
            raise Indeterminate(f"no stride column at or above the 2^{index_lo} reference")
        n_ref = exps[min(usable)]
        note = (f"reference stride 2^{index_lo} not measured; "
                f"using N={n_ref} (some index bits already fixed)")

    col = _column(matrix, n_ref)
    if len(col) < 2:
        raise Indeterminate(f"reference column N={n_ref} holds fewer than 2 cells")
    below = [b for b, r in col if r < cfg.theta_low]
    if not below:
        raise Indeterminate(
            f"capacity below grid minimum: every rate at N={n_ref} is >= theta_low")
    raw = max(below)
    flag = None
    if raw == col[-1][0]:
        flag = f"capacity at or beyond grid maximum (>= {raw})"
    rounded = 1 << round(math.log2(raw))

    idx = [b for b, _ in col].index(raw)
    straddle = [(b, n_ref, r) for b, r in col[idx:idx + 2]]
    if idx > 0:
        straddle.insert(0, (col[idx - 1][0], n_ref, col[idx - 1][1]))
    evidence = Evidence(
        "capacity", rounded, straddle,
        note or f"rate stays below theta_low={cfg.theta_low} through B={raw}",
        {"raw": raw, "flag": flag, "reference_stride": n_ref})
    return CapacityEstimate(raw, rounded, flag), evidence


def _material_difference(cfg: InferenceConfig, b: int, ra: float, rb: float) -> bool:
    """Full-swing test: one cell at noise level, the other at genuine thrash."""
    low, high = (ra, rb) if ra <= rb else (rb, ra)
    return (low <= max(cfg.theta_zero, 1.0 / b)
            and high >= max(1.0 - cfg.theta_zero, 2.0 / b)
            and high - low > cfg.epsilon_similar)


def infer_index_hi(matrix: MissMatrix, cfg: InferenceConfig = InferenceConfig()):
    """Highest set-index bit from the start of the stride plateau.

    Finds the smallest exponent j* such that no pair of columns at or above
    2^j* differs materially in any shared row, and the column just below
    does differ (the boundary must be observed). Returns (j* - 1, Evidence)."""
    exps = _power_columns(matrix)
    order = sorted(exps)
    if len(order) < 2:
        raise Indeterminate("need at least two stride columns to bound the index range")

    columns = {j: dict(_column(matrix, exps[j])) for j in order}

    def first_material(ja, jb):
        ca, cb = columns[ja], columns[jb]
        for b in sorted(set(ca) & set(cb)):
            if _material_difference(cfg, b, ca[b], cb[b]):
                return b
        return None

    for pos, j_star in enumerate(order):
        tail = order[pos:]
        if len(tail) < 2:
            break
        conflict = None
        for x in range(len(tail)):
            for y in range(x + 1, len(tail)):
                b = first_material(tail[x], tail[y])
                if b is not None:
                    conflict = (tail[x], tail[y], b)
                    break
            if conflict:
                break
        if conflict:
            continue
        if pos == 0:
            raise Indeterminate(
                "stride columns never change; index upper bound below the probed range",
                Evidence("index_hi", None, [], "plateau covers the whole grid",
                         {"columns": [exps[j] for j in order]}))
        j_prev = order[pos - 1]
        boundary_b = None
        for t in tail:
            boundary_b = first_material(j_prev, t)
            if boundary_b is not None:
                boundary_pair = (j_prev, t)
                break
        hi = j_star - 1
        cells = []
        if boundary_b is not None:
            for j in boundary_pair:
                cells.append((boundary_b, exps[j], columns[j][boundary_b]))
        note = (f"columns from N=2^{j_star} mutually similar; "
                f"N=2^{j_prev} differs at B={boundary_b}")
        if j_prev != j_star - 1:
            note += f"; stride exponents {j_prev + 1}..{j_star - 1} unmeasured"
        evidence = Evidence("index_hi", hi, cells, note,
                            {"plateau": [exps[j] for j in tail], "one_based": hi + 1})
        return hi, evidence
    raise Indeterminate("no stable stride plateau of >= 2 columns; extend N range")


def infer_ways(matrix: MissMatrix, index_hi: int,
               cfg: InferenceConfig = InferenceConfig()):
    """Associativity from single-set columns (N >= 2^(index_hi+1)).

    Each column votes with the largest B whose rate stays at the zero
    threshold; majority wins, ties resolve to the maximum and are flagged.
    Returns (ways, Evidence)."""
    exps = _power_columns(matrix)
    single = [exps[j] for j in sorted(exps) if j >= index_hi + 1]
    if not single:
        raise Indeterminate("no single-set stride column (need N >= 2^(index_hi+1))")

    votes, cells = {}, []
    for n in single:
        col = _column(matrix, n)
        zeros = [b for b, r in col if r <= cfg.theta_zero]
        w = max(zeros) if zeros else 0
        votes[n] = w
        rates = dict(col)
        if w in rates:
            cells.append((w, n, rates[w]))
        over = next((b for b, _ in col if b > w), None)
        if over is not None:
            cells.append((over, n, rates[over]))

    tally = Counter(votes.values())
    top_count = max(tally.values())
    winners = sorted(w for w, c in tally.items() if c == top_count)
    ways = winners[-1]
    tie = len(winners) > 1
    if ways == 0:
        raise Indeterminate("even B=1 misses in every single-set column; ways not recoverable")
    dissent = {n: w for n, w in votes.items() if w != ways}
    notes = [f"{tally[ways]}/{len(single)} single-set columns vote ways={ways}"]
    if tie:
        notes.append(f"tie between {winners}; kept the maximum")
    if dissent:
        notes.append("dissent: " + ", ".join(f"N={n} says {w}" for n, w in sorted(dissent.items())))
    evidence = Evidence("ways", ways, cells, "; ".join(notes),
                        {"votes": {str(n): w for n, w in votes.items()}, "tie": tie})
    return ways, evidence


def cross_check(capacity: int, index_lo: int, index_hi: int, ways: int):
    """Consistency of the four conclusions: 2^(hi-lo+1) * ways == capacity.

    Returns (consistent, note); an inconsistent result names the single
    relaxations that would reconcile the numbers."""
    bits = index_hi - index_lo + 1
    sets = 1 << bits
    if sets * ways == capacity:
        return True, f"2^{bits} sets x {ways} ways = {capacity}"
    suggestions = []
    if capacity % sets == 0 and capacity // sets >= 1:
        suggestions.append(f"ways={capacity // sets}")
    suggestions.append(f"capacity={sets * ways}")
    return False, (f"2^{bits} sets x {ways} ways = {sets * ways} != {capacity}; "
                   "reconcilable with " + " or ".join(suggestions))


def _one_based(bit):
    return None if bit is None else bit + 1


def _ordinal(n: int) -> str:
    if n % 100 in (11, 12, 13):
        return f"{n}th"
    return f"{n}{ {1: 'st', 2: 'nd', 3: 'rd'}.get(n % 10, 'th') }"


@dataclass
class InferenceReport:
    """Recovered geometry with the evidence trail and per-field failure reasons."""

    capacity: CapacityEstimate | None
    index_lo: int | None
    index_hi: int | None
    ways: int | None
    consistent: bool | None
    consistency_note: str
    evidence: list
    indeterminate: dict
    config: InferenceConfig
    clamped_inputs: bool

    @property
    def sets(self):
        if self.index_lo is None or self.index_hi is None:
            return None
        return 1 << (self.index_hi - self.index_lo + 1)

    @property
    def complete(self) -> bool:
        return (self.capacity is not None and self.index_lo is not None
                and self.index_hi is not None and self.ways is not None)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "capacity": self.capacity.to_dict() if self.capacity else None,
            "index_lo": {"zero_based": self.index_lo, "one_based": _one_based(self.index_lo)},
            "index_hi": {"zero_based": self.index_hi, "one_based": _one_based(self.index_hi)},
            "sets": self.sets,
            "ways": self.ways,
            "consistent": self.consistent,
            "consistency_note": self.consistency_note,
            "complete": self.complete,
            "indeterminate": self.indeterminate,
            "clamped_inputs": self.clamped_inputs,
            "config": self.config.to_dict(),
            "assumptions": list(ASSUMPTIONS),
            "evidence": [e.to_dict() for e in self.evidence],
        }

    def to_json_bytes(self) -> bytes:
        import json
        return json.dumps(self.to_dict(), indent=1).encode()

    def to_text(self) -> str:
        def bits(v):
            return "indeterminate" if v is None else f"bit {v} (0-based) = {_ordinal(v + 1)} bit (1-based)"

        lines = ["BTB inference report"]
        if self.capacity:
            lines.append(f"  capacity  : {self.capacity.rounded} entries"
                         f" (raw grid value {self.capacity.raw})")
            if self.capacity.flag:
                lines.append(f"              flag: {self.capacity.flag}")
        else:
            lines.append("  capacity  : indeterminate")
        lines.append(f"  index low : {bits(self.index_lo)}")
        lines.append(f"  index high: {bits(self.index_hi)}")
        lines.append(f"  sets      : {self.sets if self.sets is not None else 'indeterminate'}")
        lines.append(f"  ways      : {self.ways if self.ways is not None else 'indeterminate'}")
        if self.consistent is None:
            lines.append("  consistent: not checkable (missing fields)")
        else:
            lines.append(f"  consistent: {'yes' if self.consistent else 'NO'} ({self.consistency_note})")
        if self.clamped_inputs:
            lines.append("  note      : rates above 1.0 were clamped to 1.0 for inference")
        for field_name, reason in self.indeterminate.items():
            lines.append(f"  {field_name}: indeterminate ({reason})")
        cfg = self.config.to_dict()
        lines.append("  thresholds: " + " ".join(f"{k}={v}" for k, v in cfg.items()))
        lines.append("  assumptions:")
        for a in ASSUMPTIONS:
            lines.append(f"    - {a}")
        lines.append("  evidence:")
        for e in self.evidence:
            cells = ", ".join(f"(B={b}, N={n}, rate={r:.4g})" for b, n, r in e.cells[:6])
            more = "" if len(e.cells) <= 6 else f" (+{len(e.cells) - 6} more)"
            lines.append(f"    - {e.parameter} = {e.conclusion}: {e.note}")
            lines.append(f"      cells: {cells}{more}")
        return "\n".join(lines) + "\n"


def infer_all(matrix: MissMatrix, cfg: InferenceConfig | None = None) -> InferenceReport:
    """Chain the four deductions, tolerating per-step indeterminacy.

    Steps whose inputs are available still run when an earlier step failed;
    the report carries a reason per missing field."""
    cfg = cfg or InferenceConfig()
    evidence, indeterminate = [], {}
    index_lo = index_hi = ways = capacity = None

    try:
        index_lo, ev = infer_index_lo(matrix, cfg)
        evidence.append(ev)
    except Indeterminate as exc:
        indeterminate["index_lo"] = exc.reason

    if index_lo is not None:
        try:
            capacity, ev = infer_capacity(matrix, index_lo, cfg)
            evidence.append(ev)
        except Indeterminate as exc:
            indeterminate["capacity"] = exc.reason
    else:
        indeterminate["capacity"] = "requires index_lo"

    try:
        index_hi, ev = infer_index_hi(matrix, cfg)
        evidence.append(ev)
    except Indeterminate as exc:
        indeterminate["index_hi"] = exc.reason

    if index_hi is not None:
        try:
            ways, ev = infer_ways(matrix, index_hi, cfg)
            evidence.append(ev)
        except Indeterminate as exc:
            indeterminate["ways"] = exc.reason
    else:
        indeterminate["ways"] = "requires index_hi"

    consistent, note = None, "not checkable"
    if None not in (capacity, index_lo, index_hi, ways):
        consistent, note = cross_check(capacity.rounded, index_lo, index_hi, ways)

    return InferenceReport(
        capacity=capacity, index_lo=index_lo, index_hi=index_hi, ways=ways,
        consistent=consistent, consistency_note=note, evidence=evidence,
        indeterminate=indeterminate, config=cfg,
        clamped_inputs=matrix.has_rates_above_one)
