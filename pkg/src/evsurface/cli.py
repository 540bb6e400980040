"""Command-line entry point.

Subcommands: ``validate``, ``reconstruct``, ``grad-check``, ``equiv-check``,
``train-toy``, ``bench``.  Exit codes: 0 on success, 1 when a check or
validation fails, 2 on usage errors.  BLAS worker count comes from
``--threads``, falling back to the ``EVSURFACE_THREADS`` environment
variable and then to 1 (single-threaded runs time more stably).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bench as bench_mod
from .checks import (
    EQUIV_TOL_DENSE,
    EQUIV_TOL_SCALAR,
    GRAD_TOL,
    run_equivalence_check,
    run_gradient_check,
)
from .errors import ConfigError, EventFormatError, StreamValidationError, TrainingDivergedError
from .events import parse_event_file, validate_stream
from .features import parse_feature_spec
from .layer import LayerConfig, init_se_params, layer_forward, write_surface, write_surface_pgm
from .lstm import init_lstm_params, load_checkpoint, save_checkpoint
from .toytask import ToyTaskSpec, train_toy_classifier


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evsurface",
        description="Event streams to dense learned surfaces: tools and self-checks.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="BLAS worker count (default: EVSURFACE_THREADS env var, then 1)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check an event file against the stream contract")
    p_val.add_argument("events", type=Path)
    p_val.add_argument("--format", choices=("auto", "binary", "csv"), default="auto")
    p_val.add_argument("--width", type=int, help="sensor width (csv input)")
    p_val.add_argument("--height", type=int, help="sensor height (csv input)")

    p_rec = sub.add_parser("reconstruct", help="reconstruct a surface from an event file")
    p_rec.add_argument("events", type=Path)
    p_rec.add_argument("--format", choices=("auto", "binary", "csv"), default="auto")
    p_rec.add_argument("--width", type=int)
    p_rec.add_argument("--height", type=int)
    p_rec.add_argument("--channels", type=int, default=8)
    p_rec.add_argument("--bins", type=int, default=1)
    p_rec.add_argument(
        "--features",
        default="polarity,ts_absolute",
        help="comma-separated tokens, e.g. polarity,ts_abs,ts_rel,delay_rel,"
        "ts_global,ts_local,coords",
    )
    p_rec.add_argument("--kernel", type=int, default=1, help="odd receptive-field side")
    p_rec.add_argument("--stride", type=int, default=1)
    p_rec.add_argument("--se", action="store_true", help="enable squeeze-excitation rescaling")
    p_rec.add_argument("--params", type=Path, help="checkpoint; omitted = seeded init")
    p_rec.add_argument("--seed", type=int, default=0)
    p_rec.add_argument("-o", "--output", type=Path, required=True,
                       help=".pgm writes an 8-bit preview, anything else the binary surface")

    p_grad = sub.add_parser("grad-check", help="finite-difference gradient check")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--instances", type=int, default=20)

    p_eq = sub.add_parser("equiv-check", help="compare the layer against the dense references")
    p_eq.add_argument("--seed", type=int, default=0)
    p_eq.add_argument("--instances", type=int, default=100)

    p_toy = sub.add_parser("train-toy", help="train the moving-bar toy classifier")
    p_toy.add_argument("--epochs", type=int, default=30)
    p_toy.add_argument("--lr", type=float, default=1e-3)
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--data-seed", type=int, default=0)
    p_toy.add_argument("--batch-size", type=int, default=32)
    p_toy.add_argument("-o", "--output", type=Path, help="checkpoint for the trained LSTM")

    p_bench = sub.add_parser("bench", help="grouped-vs-dense benchmark sweep")
    p_bench.add_argument("--densities", type=_float_list, default=[0.1, 1.0])
    p_bench.add_argument("--batches", type=_int_list, default=[1, 8, 64])
    p_bench.add_argument("--channels", type=_int_list, default=[8])
    p_bench.add_argument("--events-per-pixel", type=_int_list, default=[4])
    p_bench.add_argument("--passes", default="forward,backward")
    p_bench.add_argument("--height", type=int, default=64)
    p_bench.add_argument("--width", type=int, default=64)
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("-o", "--output", type=Path, required=True, help="CSV output path")
    p_bench.add_argument("--svg", type=Path, help="optional SVG plot path")
    return parser


def _cmd_validate(args) -> int:
    stream = parse_event_file(
        args.events, fmt=args.format, width=args.width, height=args.height, validate=False
    )
    report = validate_stream(stream)
    print(f"{report.count()} violations")
    for v in report.violations:
        print(f"  {v.kind}: {v.message}")
    return 0 if report.ok else 1


def _cmd_reconstruct(args) -> int:
    stream = parse_event_file(args.events, fmt=args.format, width=args.width, height=args.height)
    features = parse_feature_spec(args.features)
    config = LayerConfig(
        channels=args.channels,
        n_bins=args.bins,
        features=features,
        kernel=(args.kernel, args.kernel),
        stride=(args.stride, args.stride),
        se_enabled=args.se,
    )
    if args.params:
        lstm = load_checkpoint(args.params)
    else:
        lstm = init_lstm_params(features.width, args.channels, seed=args.seed)
    se = init_se_params(config.surface_channels, seed=args.seed + 1) if args.se else None
    from .events import EventBatch

    surface, _ = layer_forward(EventBatch((stream,)), config, lstm, se)
    out = args.output
    if out.suffix.lower() == ".pgm":
        write_surface_pgm(out, surface[0])
    else:
        write_surface(out, surface[0])
    active = int(np.count_nonzero(np.any(surface[0] != 0.0, axis=2)))
    print(
        f"wrote {out}: {surface.shape[1]}x{surface.shape[2]} surface, "
        f"{surface.shape[3]} channels, {active} active cells"
    )
    return 0


def _cmd_grad_check(args) -> int:
    report = run_gradient_check(seed=args.seed, n_instances=args.instances)
    ok = report.ok()
    print(
        f"checked {report.n_scalars} gradient scalars over {report.n_instances} instances: "
        f"max relative error {report.max_rel_err:.3e} (worst: {report.worst_block or 'n/a'})"
    )
    print(f"{'PASS' if ok else 'FAIL'} (tolerance {GRAD_TOL:g})")
    return 0 if ok else 1


def _cmd_equiv_check(args) -> int:
    report = run_equivalence_check(seed=args.seed, n_instances=args.instances)
    ok = report.ok()
    print(
        f"{report.n_instances} instances: dense reference max |diff| "
        f"{report.max_diff_dense:.3e} (tol {EQUIV_TOL_DENSE:g}), scalar reference "
        f"max |diff| {report.max_diff_scalar:.3e} (tol {EQUIV_TOL_SCALAR:g})"
    )
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_train_toy(args) -> int:
    spec = ToyTaskSpec(seed=args.data_seed)
    try:
        model, history = train_toy_classifier(
            spec, epochs=args.epochs, lr=args.lr, seed=args.seed, batch_size=args.batch_size
        )
    except TrainingDivergedError as exc:
        print(f"FAIL: {exc}")
        return 1
    for st in history:
        print(
            f"epoch {st.epoch:3d}  loss {st.mean_loss:.4f}  "
            f"train acc {st.train_accuracy:.3f}  test acc {st.test_accuracy:.3f}"
        )
    if args.output:
        save_checkpoint(args.output, model.lstm)
        print(f"saved LSTM checkpoint to {args.output}")
    print(f"final held-out accuracy: {history[-1].test_accuracy:.3f}")
    return 0


def _cmd_bench(args) -> int:
    records = bench_mod.run_benchmark(
        densities=args.densities,
        batches=args.batches,
        channels=args.channels,
        events_per_pixel=args.events_per_pixel,
        passes=[p.strip() for p in args.passes.split(",") if p.strip()],
        height=args.height,
        width=args.width,
        repeats=args.repeats,
        seed=args.seed,
        progress=print,
    )
    bench_mod.write_bench_csv(records, args.output)
    print(f"wrote {len(records)} rows to {args.output}")
    if args.svg:
        bench_mod.write_bench_svg(records, args.svg)
        print(f"wrote plot to {args.svg}")
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "reconstruct": _cmd_reconstruct,
    "grad-check": _cmd_grad_check,
    "equiv-check": _cmd_equiv_check,
    "train-toy": _cmd_train_toy,
    "bench": _cmd_bench,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse signals usage errors (and --help)
        return int(exc.code or 0)
    if args.threads is not None:
        threads = args.threads
    else:
        try:
            threads = int(os.environ.get("EVSURFACE_THREADS", "1"))
        except ValueError:
            print("EVSURFACE_THREADS must be an integer", file=sys.stderr)
            return 2
    if threads < 1:
        print("thread count must be >= 1", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=threads):
            return _COMMANDS[args.command](args)
    except StreamValidationError as exc:
        # input data exists and parses, but fails the content contract
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, EventFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
