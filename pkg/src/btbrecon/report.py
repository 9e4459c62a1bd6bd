"""Matrix export and terminal rendering.

JSON export is lossless (cells round-trip bit-identically). CSV export
writes the grid with B in the first column and strides across the header;
floats use Python's shortest round-trip repr, so parsing the CSV back
reproduces the rates exactly. The ASCII heatmap is the terminal analogue
of the miss-rate figures: one glyph per bucket, a distinct glyph for rates
above 1.0, blank for unmeasured cells.
"""

from __future__ import annotations

from .sweep import MissMatrix

DEFAULT_BUCKETS = (0.05, 0.25, 0.5, 0.9)
BUCKET_GLYPHS = ".:+#@"   # len(buckets) glyphs plus one for the (last, 1.0] bucket
OVERFLOW_GLYPH = "!"
MISSING_GLYPH = " "


def export_matrix(matrix: MissMatrix, format: str = "json") -> bytes:
    if format == "json":
        return matrix.to_json_bytes()
    if format == "csv":
        return matrix_to_csv(matrix).encode()
    raise ValueError(f"unknown export format {format!r}")


def _fmt(rate) -> str:
    return "" if rate is None else repr(rate)


def matrix_to_csv(matrix: MissMatrix) -> str:
    lines = ["B," + ",".join(str(n) for n in matrix.n_values)]
    for b in matrix.b_values:
        lines.append(str(b) + "," + ",".join(_fmt(matrix.rate(b, n)) for n in matrix.n_values))
    return "\n".join(lines) + "\n"


def matrix_from_csv(text: str) -> MissMatrix:
    """Parse the grid CSV produced by matrix_to_csv (counts are unknown)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("B,"):
        raise ValueError("matrix CSV must start with a 'B,<strides>' header")
    n_values = tuple(int(x) for x in lines[0].split(",")[1:])
    b_values, cells = [], {}
    for ln in lines[1:]:
        parts = ln.split(",")
        b = int(parts[0])
        b_values.append(b)
        for n, cell in zip(n_values, parts[1:]):
            if cell != "":
                cells[(b, n)] = float(cell)
    return MissMatrix(tuple(b_values), n_values, cells, {}, {"backend": "csv-matrix"})


def bucket_glyph(rate, buckets=DEFAULT_BUCKETS) -> str:
    if rate is None:
        return MISSING_GLYPH
    if rate > 1.0:
        return OVERFLOW_GLYPH
    for bound, glyph in zip(buckets, BUCKET_GLYPHS):
        if rate <= bound:
            return glyph
    return BUCKET_GLYPHS[len(buckets)]


def _check_buckets(buckets):
    if len(buckets) + 1 > len(BUCKET_GLYPHS):
        raise ValueError(f"at most {len(BUCKET_GLYPHS) - 1} bucket boundaries supported")
    if list(buckets) != sorted(set(buckets)) or any(not 0 <= x <= 1 for x in buckets):
        raise ValueError("bucket boundaries must be strictly ascending within [0, 1]")


def render_ascii(matrix: MissMatrix, buckets=None) -> str:
    """Glyph heatmap: fixed 3 non-data lines (title, stride header, legend)
    plus one line per branch-count row."""
    buckets = tuple(buckets) if buckets is not None else DEFAULT_BUCKETS
    _check_buckets(buckets)
    label_w = max([len(f"B={b}") for b in matrix.b_values] or [3])
    lines = ["miss-rate heatmap (rows B, cols N)"]
    header = " " * (label_w + 1) + " ".join(f"2^{n.bit_length() - 1:<2d}" for n in matrix.n_values)
    lines.append(header)
    for b in matrix.b_values:
        row = "".join(f"{bucket_glyph(matrix.rate(b, n), buckets):<5}" for n in matrix.n_values)
        lines.append(f"{f'B={b}':<{label_w}} {row.rstrip()}")
    legend = ["legend:"]
    for bound, glyph in zip(buckets, BUCKET_GLYPHS):
        legend.append(f"'{glyph}'<={bound}")
    legend.append(f"'{BUCKET_GLYPHS[len(buckets)]}'<=1.0")
    legend.append(f"'{OVERFLOW_GLYPH}'>1.0")
    legend.append("' '=missing")
    lines.append(" ".join(legend))
    return "\n".join(lines) + "\n"


def plot_table(matrix: MissMatrix) -> str:
    """Long-form table (b,n,miss_rate) consumable by gnuplot or vega."""
    lines = ["b,n,miss_rate"]
    for b in matrix.b_values:
        for n in matrix.n_values:
            r = matrix.rate(b, n)
            if r is not None:
                lines.append(f"{b},{n},{_fmt(r)}")
    return "\n".join(lines) + "\n"
