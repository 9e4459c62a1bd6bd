"""Command-line pipeline driver.

Exit codes: 0 on success (for `infer`: a fully determined report),
2 for usage errors and partial/indeterminate inference, 1 for unreadable
or corrupt inputs. Nothing is written outside paths named by flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .gadget import DEFAULT_BASE, GadgetSpec, emit_asm, validate_spec
from .infer import InferenceConfig, infer_all
from .report import export_matrix, matrix_to_csv, plot_table, render_ascii
from .sim import BtbGeometry, NoiseModel, Replacement
from .sweep import (
    DatasetBackend,
    SimulatorBackend,
    ingest_csv,
    load_matrix,
    matrix_from_records,
    merge,
    preset_grid,
    run_sweep,
    save_matrix,
)


def _geometry_from_args(parser, args) -> BtbGeometry:
    if args.sets is None or args.ways is None or args.index_lo is None:
        parser.error("sim backend requires --sets, --ways and --index-lo")
    try:
        return BtbGeometry.from_sets(args.sets, args.ways, args.index_lo,
                                     replacement=Replacement(args.repl), seed=args.seed)
    except ValueError as exc:
        parser.error(str(exc))


def cmd_sweep(parser, args) -> int:
    if args.backend == "sim":
        geometry = _geometry_from_args(parser, args)
        noise = NoiseModel(lam=args.noise_lambda, seed=args.seed) if args.noise_lambda else None
        backend = SimulatorBackend(geometry, noise=noise, base_address=args.base)
        names = ["capacity", "set-index"] if args.preset == "both" else [args.preset]
        matrices = []
        for name in names:
            grid = preset_grid(name)
            if args.warmup is not None:
                grid = type(grid)(grid.b_values, grid.n_values, args.warmup, grid.measure_rounds)
            if args.measure is not None:
                grid = type(grid)(grid.b_values, grid.n_values, grid.warmup_rounds, args.measure)
            matrices.append(run_sweep(backend, grid))
        matrix = merge(matrices)
    else:
        if args.infile is None:
            parser.error("csv backend requires --in")
        try:
            records = ingest_csv(args.infile)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if args.preset and args.preset != "both":
            try:
                matrix = run_sweep(DatasetBackend(records), preset_grid(args.preset))
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 1
        else:
            matrix = matrix_from_records(records)
    save_matrix(matrix, args.out)
    print(f"wrote {len(matrix.cells)} cells to {args.out}")
    return 0


def _load_config(parser, args) -> InferenceConfig:
    values = {}
    if args.config:
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
    for name in ("theta_low", "delta_jump", "epsilon_similar", "theta_zero", "capacity_band"):
        flag = getattr(args, name)
        if flag is not None:
            values[name] = flag
    try:
        return InferenceConfig.from_dict(values)
    except ValueError as exc:
        parser.error(str(exc))


def cmd_infer(parser, args) -> int:
    cfg = _load_config(parser, args)
    try:
        matrix = load_matrix(args.matrix)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load matrix {args.matrix}: {exc}", file=sys.stderr)
        return 1
    report = infer_all(matrix, cfg)
    if args.out:
        Path(args.out).write_bytes(report.to_json_bytes())
    print(report.to_text(), end="")
    return 0 if report.complete else 2


def cmd_emit(parser, args) -> int:
    if args.preset:
        if not args.out_dir:
            parser.error("--preset emission requires --out-dir")
        grid = preset_grid(args.preset)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = []
        for b in grid.b_values:
            for n in grid.n_values:
                spec = GadgetSpec(b, n, args.base)
                name = f"gadget_b{b}_n{n}.S"
                (out_dir / name).write_text(emit_asm(spec))
                manifest.append({"file": name, "b": b, "n": n})
        (out_dir / "manifest.json").write_text(json.dumps({"gadgets": manifest}, indent=1))
        print(f"wrote {len(manifest)} gadgets + manifest.json to {out_dir}")
        return 0
    if args.b is None or args.n is None or args.out is None:
        parser.error("single emission requires --b, --n and --out")
    spec = GadgetSpec(args.b, args.n, args.base)
    problems = validate_spec(spec)
    if problems:
        parser.error("; ".join(problems))
    Path(args.out).write_text(emit_asm(spec))
    print(f"wrote {args.out} ({spec.footprint()} bytes of text+ret)")
    return 0


def cmd_render(parser, args) -> int:
    try:
        matrix = load_matrix(args.matrix)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load matrix {args.matrix}: {exc}", file=sys.stderr)
        return 1
    if args.format == "ascii":
        text = render_ascii(matrix)
    elif args.format == "csv":
        text = matrix_to_csv(matrix)
    elif args.format == "plot":
        text = plot_table(matrix)
    else:
        text = export_matrix(matrix, "json").decode()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="btbrecon",
        description="Probe-driven branch target buffer geometry recovery")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run a (B, N) grid and write a miss-rate matrix")
    p_sweep.add_argument("--backend", choices=["sim", "csv"], required=True)
    p_sweep.add_argument("--preset", choices=["capacity", "set-index", "both"])
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--sets", type=int)
    p_sweep.add_argument("--ways", type=int)
    p_sweep.add_argument("--index-lo", type=int, dest="index_lo")
    p_sweep.add_argument("--repl", choices=[r.value for r in Replacement], default="lru")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--noise-lambda", type=float, default=0.0, dest="noise_lambda")
    p_sweep.add_argument("--base", type=lambda x: int(x, 0), default=DEFAULT_BASE)
    p_sweep.add_argument("--warmup", type=int)
    p_sweep.add_argument("--measure", type=int)
    p_sweep.add_argument("--in", dest="infile")
    p_sweep.set_defaults(func=cmd_sweep)

    p_infer = sub.add_parser("infer", help="recover geometry from a matrix file")
    p_infer.add_argument("--matrix", required=True)
    p_infer.add_argument("--out")
    p_infer.add_argument("--config")
    p_infer.add_argument("--theta-low", type=float, dest="theta_low")
    p_infer.add_argument("--delta-jump", type=float, dest="delta_jump")
    p_infer.add_argument("--epsilon-similar", type=float, dest="epsilon_similar")
    p_infer.add_argument("--theta-zero", type=float, dest="theta_zero")
    p_infer.add_argument("--capacity-band", type=float, dest="capacity_band")
    p_infer.set_defaults(func=cmd_infer)

    p_emit = sub.add_parser("emit", help="emit aarch64 gadget assembly")
    p_emit.add_argument("--b", type=int)
    p_emit.add_argument("--n", type=int)
    p_emit.add_argument("--out")
    p_emit.add_argument("--preset", choices=["capacity", "set-index"])
    p_emit.add_argument("--out-dir", dest="out_dir")
    p_emit.add_argument("--base", type=lambda x: int(x, 0), default=DEFAULT_BASE)
    p_emit.set_defaults(func=cmd_emit)

    p_render = sub.add_parser("render", help="render a matrix file")
    p_render.add_argument("--matrix", required=True)
    p_render.add_argument("--format", choices=["ascii", "csv", "plot", "json"], default="ascii")
    p_render.add_argument("--out")
    p_render.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(parser, args)


if __name__ == "__main__":
    sys.exit(main())
