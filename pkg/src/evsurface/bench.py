"""Grouped-vs-dense benchmark harness.

Generates synthetic workloads at controlled pixel density (the fraction of
pixels that receive any events), reconstructs surfaces through both the
grouped path and a vectorized dense path that scans one padded row per
pixel whether or not it was active, and records wall-clock medians plus the
peak number of processing-buffer elements each path allocates.  Model
parameters and the raw event arrays are excluded from the element counts.

The dense path reuses the exact same masked scan kernel, so at density 1.0
the two paths do identical numerical work and their times should agree; at
low density the dense path keeps paying for silent pixels.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import ConfigError
from .events import EventBatch, EventStream
from .features import FeatureConfig, encode_features
from .layer import LayerConfig, apply_layer, layer_backward, prepare_layer_inputs
from .lstm import (
    LstmParams,
    init_lstm_params,
    masked_scan_backward,
    masked_scan_forward,
)

CSV_COLUMNS = (
    "path",
    "density",
    "batch",
    "channels",
    "events_per_pixel",
    "pass",
    "time_ms",
    "peak_elements",
)

PASSES = ("forward", "backward")


def gen_density_sweep(
    width: int,
    height: int,
    density: float,
    events_per_pixel: int,
    seed,
    t_span: float = 1.0e6,
) -> EventStream:
    """Synthetic stream where exactly floor(density * W * H) pixels fire.

    Each active pixel receives ``events_per_pixel`` events; timestamps are
    uniform over the span and sorted, so per-pixel order is time order.
    Identical seeds produce identical streams.
    """
    if not (0.0 < density <= 1.0):
        raise ConfigError(f"density must lie in (0, 1], got {density}")
    if events_per_pixel < 1:
        raise ConfigError(f"events_per_pixel must be >= 1, got {events_per_pixel}")
    rng = np.random.default_rng(seed)
    n_active = int(density * width * height)
    pixels = rng.choice(width * height, size=n_active, replace=False)
    n_events = n_active * events_per_pixel
    x = np.repeat(pixels % width, events_per_pixel)
    y = np.repeat(pixels // width, events_per_pixel)
    t = rng.uniform(0.0, t_span, size=n_events)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=n_events)
    return EventStream(width, height, x, y, t, p).sorted_by_time()


@dataclass(frozen=True)
class BenchRecord:
    path: str  # grouped | dense
    density: float
    batch: int
    channels: int
    events_per_pixel: int
    pass_name: str  # forward | backward
    time_ms: Optional[float]  # None when the cell was skipped
    peak_elements: Optional[int]

    @property
    def skipped(self) -> bool:
        return self.time_ms is None


def _median_time_ms(fn: Callable[[], object], repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(samples))


def densify_rows(
    batch: EventBatch, features: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Dense row block: one padded row per (sample, pixel), active or not.

    Returns (block, lengths) with block shaped (N*H*W, T_max, F); silent
    pixels get all-zero rows of length 0.  This is the dense volume laid out
    for the shared scan kernel.
    """
    height, width = batch.height, batch.width
    n_rows = len(batch) * height * width
    xs = np.concatenate([s.x for s in batch]).astype(np.int64)
    ys = np.concatenate([s.y for s in batch]).astype(np.int64)
    sample = np.concatenate(
        [np.full(len(s), i, dtype=np.int64) for i, s in enumerate(batch)]
    )
    n_feat = np.asarray(features[0]).shape[1] if features else 0
    if len(xs) == 0:
        return np.zeros((n_rows, 0, n_feat)), np.zeros(n_rows, dtype=np.int64)
    feats = np.concatenate([np.asarray(f, dtype=np.float64) for f in features])

    key = (sample * height + ys) * width + xs
    lengths = np.bincount(key, minlength=n_rows)
    t_max = int(lengths.max())
    order = np.argsort(key, kind="stable")
    key_sorted = key[order]
    starts = np.flatnonzero(np.diff(key_sorted, prepend=key_sorted[0] - 1))
    counts = np.diff(starts, append=len(key_sorted))
    slot = np.arange(len(key_sorted)) - np.repeat(starts, counts)
    block = np.zeros((n_rows, t_max, feats.shape[1]))
    block[key_sorted, slot] = feats[order]
    return block, lengths.astype(np.int64)


@dataclass
class _PathRun:
    surface: np.ndarray
    forward_elements: int
    backward_elements: int
    forward_fn: Callable[[], object]
    backward_fn: Callable[[], object]


def _grouped_run(batch: EventBatch, config: LayerConfig, params: LstmParams) -> _PathRun:
    n_feat = config.features.width

    def forward():
        inputs = prepare_layer_inputs(batch, config)
        surface, tape = apply_layer(inputs, config, params)
        return inputs, surface, tape

    inputs, surface, tape = forward()
    d_surface = np.ones_like(surface)

    def backward():
        return layer_backward(tape, d_surface)

    encoded = sum(len(s) * n_feat for s in batch)
    outputs = sum(g.n_rows * config.channels for g in inputs.grouped_bins)
    fw_elements = encoded + tape.element_count() + outputs + surface.size
    # reverse sweep: gate-input gradients, input-block gradient, per-row
    # parameter contributions reduced in canonical order
    bw_elements = fw_elements
    for g in inputs.grouped_bins:
        p_rows, t_len, _ = g.data.shape
        c4 = 4 * config.channels
        bw_elements += p_rows * t_len * c4  # d(gate inputs)
        bw_elements += g.data.size  # d(block)
        bw_elements += p_rows * (n_feat * c4 + config.channels * c4 + c4)
    return _PathRun(surface, int(fw_elements), int(bw_elements), forward, backward)


def _dense_run(batch: EventBatch, config: LayerConfig, params: LstmParams) -> _PathRun:
    n = len(batch)
    height, width = batch.height, batch.width
    n_feat = config.features.width
    if config.n_bins != 1 or config.kernel != (1, 1) or config.stride != (1, 1):
        raise ConfigError("the dense path covers single-bin, kernel-1 configs")

    def forward():
        feats = [encode_features(s, config.features) for s in batch]
        block, lengths = densify_rows(batch, feats)
        h_last, tape = masked_scan_forward(block, lengths, params)
        surface = h_last.reshape(n, height, width, config.channels)
        return block, tape, surface

    block, tape, surface = forward()
    d_last = np.ones_like(surface).reshape(-1, config.channels)
    # dense rows are laid out (sample, y, x) already, which is the canonical
    # reduction order; passing it keeps the gradient contract identical to
    # the grouped path so the two backward timings measure the same work
    row_order = np.arange(block.shape[0])

    def backward():
        return masked_scan_backward(tape, d_last, row_order=row_order)

    encoded = sum(len(s) * n_feat for s in batch)
    fw_elements = encoded + block.size + tape.element_count() + surface.size
    rows, t_len, _ = block.shape
    c4 = 4 * config.channels
    bw_elements = fw_elements + rows * t_len * c4 + block.size
    bw_elements += rows * (n_feat * c4 + config.channels * c4 + c4)
    return _PathRun(surface, int(fw_elements), int(bw_elements), forward, backward)


def run_benchmark(
    densities: Iterable[float] = (0.1, 1.0),
    batches: Iterable[int] = (1, 8, 64),
    channels: Iterable[int] = (8,),
    events_per_pixel: Iterable[int] = (4,),
    passes: Iterable[str] = PASSES,
    height: int = 64,
    width: int = 64,
    repeats: int = 5,
    warmup: int = 1,
    seed: int = 0,
    features: FeatureConfig | None = None,
    dtype=np.float32,
    progress: Callable[[str], None] | None = None,
) -> list[BenchRecord]:
    """Sweep the grid and time both paths; out-of-memory cells are recorded
    as skipped rather than aborting the sweep."""
    features = features or FeatureConfig(("ts_absolute",), with_polarity=True)
    passes = tuple(passes)
    for p in passes:
        if p not in PASSES:
            raise ConfigError(f"unknown pass {p!r}")
    records: list[BenchRecord] = []
    for density in densities:
        for batch_size in batches:
            for c_n in channels:
                for epp in events_per_pixel:
                    streams = tuple(
                        gen_density_sweep(
                            width,
                            height,
                            density,
                            epp,
                            seed=np.random.SeedSequence(
                                entropy=(seed, int(density * 1e6), batch_size, c_n, epp, i)
                            ),
                        )
                        for i in range(batch_size)
                    )
                    batch = EventBatch(streams)
                    config = LayerConfig(
                        channels=c_n, n_bins=1, features=features, dtype=dtype
                    )
                    params = init_lstm_params(
                        features.width, c_n, seed=seed, dtype=dtype
                    )
                    for path, runner in (("grouped", _grouped_run), ("dense", _dense_run)):
                        base = dict(
                            path=path,
                            density=density,
                            batch=batch_size,
                            channels=c_n,
                            events_per_pixel=epp,
                        )
                        try:
                            run = runner(batch, config, params)
                            for pass_name in passes:
                                fn = run.forward_fn if pass_name == "forward" else run.backward_fn
                                elements = (
                                    run.forward_elements
                                    if pass_name == "forward"
                                    else run.backward_elements
                                )
                                ms = _median_time_ms(fn, repeats, warmup)
                                records.append(
                                    BenchRecord(
                                        pass_name=pass_name,
                                        time_ms=ms,
                                        peak_elements=elements,
                                        **base,
                                    )
                                )
                                if progress:
                                    progress(
                                        f"{path:7s} d={density:<4g} n={batch_size:<3d} "
                                        f"c={c_n:<2d} epp={epp:<2d} {pass_name:8s} "
                                        f"{ms:9.3f} ms  {elements} elements"
                                    )
                        except MemoryError:
                            for pass_name in passes:
                                records.append(
                                    BenchRecord(
                                        pass_name=pass_name,
                                        time_ms=None,
                                        peak_elements=None,
                                        **base,
                                    )
                                )
                                if progress:
                                    progress(f"{path} {base} {pass_name}: skipped (out of memory)")
    return records


def write_bench_csv(records: list[BenchRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.path,
                    r.density,
                    r.batch,
                    r.channels,
                    r.events_per_pixel,
                    r.pass_name,
                    "" if r.time_ms is None else f"{r.time_ms:.3f}",
                    "" if r.peak_elements is None else r.peak_elements,
                ]
            )


def read_bench_csv(path: str | Path) -> list[BenchRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ConfigError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            records.append(
                BenchRecord(
                    row["path"],
                    float(row["density"]),
                    int(row["batch"]),
                    int(row["channels"]),
                    int(row["events_per_pixel"]),
                    row["pass"],
                    float(row["time_ms"]) if row["time_ms"] else None,
                    int(row["peak_elements"]) if row["peak_elements"] else None,
                )
            )
    return records


def write_bench_svg(records: list[BenchRecord], path: str | Path) -> None:
    """Relative speed of the grouped path over the dense one, by batch size.

    Positive percentages mean the grouped path was faster.  One line per
    (density, pass) pair, averaged over the remaining grid axes.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pairs: dict[tuple[float, str], dict[int, list[float]]] = {}
    by_key: dict[tuple, BenchRecord] = {}
    for r in records:
        by_key[(r.path, r.density, r.batch, r.channels, r.events_per_pixel, r.pass_name)] = r
    for r in records:
        if r.path != "grouped" or r.skipped:
            continue
        dense = by_key.get(
            ("dense", r.density, r.batch, r.channels, r.events_per_pixel, r.pass_name)
        )
        if dense is None or dense.skipped:
            continue
        improvement = (dense.time_ms - r.time_ms) / dense.time_ms * 100.0
        pairs.setdefault((r.density, r.pass_name), {}).setdefault(r.batch, []).append(
            improvement
        )

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (density, pass_name), by_batch in sorted(pairs.items()):
        batches = sorted(by_batch)
        means = [float(np.mean(by_batch[b])) for b in batches]
        ax.plot(batches, means, marker="o", label=f"density {density:g}, {pass_name}")
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("batch size")
    ax.set_ylabel("grouped speedup over dense (%)")
    ax.set_title("grouped vs dense reconstruction")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
