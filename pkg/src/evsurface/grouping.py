"""Order-preserving reshapes between event streams and padded row blocks.

``group_by_pixel`` packs a batch of encoded streams into one (P, T_max, F)
zero-padded block with one row per active (sample, pixel) pair, keeping each
pixel's events in stream order.  ``group_by_time`` cuts each sample into B
consecutive equal-duration bins over that sample's own time range.
``unfold_receptive_fields`` replicates events into every stride-placed KxK
window that covers them, re-addressing them on the output grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .events import EventBatch, EventStream


@dataclass(frozen=True)
class GroupedEvents:
    """Padded per-pixel rows plus the bookkeeping to map them back.

    ``data[r, k]`` is the feature row of the k-th event at pixel
    (row_x[r], row_y[r]) of sample row_sample[r]; slots at and beyond
    row_len[r] are zero padding.  Rows are ordered by (sample, y, x).
    """

    data: np.ndarray  # (P, T_max, F)
    row_x: np.ndarray  # (P,)
    row_y: np.ndarray  # (P,)
    row_sample: np.ndarray  # (P,)
    row_len: np.ndarray  # (P,)
    n_samples: int
    height: int
    width: int

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def t_max(self) -> int:
        return self.data.shape[1]

    @property
    def n_features(self) -> int:
        return self.data.shape[2]

    def permuted(self, order: np.ndarray) -> "GroupedEvents":
        """Same block with rows reordered (bookkeeping travels along)."""
        return GroupedEvents(
            self.data[order],
            self.row_x[order],
            self.row_y[order],
            self.row_sample[order],
            self.row_len[order],
            self.n_samples,
            self.height,
            self.width,
        )


def group_by_pixel(batch: EventBatch, features: list[np.ndarray]) -> GroupedEvents:
    """Pack encoded streams into a padded (P, T_max, F) row block.

    ``features[i]`` must be the (len(streams[i]), F) encoding of stream i.
    Only (sample, pixel) pairs that saw at least one event get a row, so P is
    N*H*W only in the worst case.  Pixel segments keep stream storage order.
    """
    if len(features) != len(batch):
        raise ConfigError(f"{len(features)} feature blocks for {len(batch)} streams")
    widths = set()
    for i, (stream, feat) in enumerate(zip(batch, features)):
        feat = np.asarray(feat)
        if feat.ndim != 2 or feat.shape[0] != len(stream):
            raise ConfigError(
                f"feature block {i} has shape {feat.shape}, stream has {len(stream)} events"
            )
        widths.add(feat.shape[1])
    if len(widths) > 1:
        raise ConfigError(f"feature blocks disagree on width: {sorted(widths)}")
    n_feat = widths.pop() if widths else 0

    height, width = batch.height, batch.width
    xs = np.concatenate([s.x for s in batch]).astype(np.int64)
    ys = np.concatenate([s.y for s in batch]).astype(np.int64)
    sample = np.concatenate(
        [np.full(len(s), i, dtype=np.int64) for i, s in enumerate(batch)]
    )
    feats = (
        np.concatenate([np.asarray(f, dtype=np.float64) for f in features])
        if len(xs)
        else np.zeros((0, n_feat))
    )

    if len(xs) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return GroupedEvents(
            np.zeros((0, 0, n_feat)), empty, empty, empty, empty,
            len(batch), height, width,
        )

    # one key per event; ascending key order == lexicographic (sample, y, x)
    key = (sample * height + ys) * width + xs
    order = np.argsort(key, kind="stable")  # radix sort on non-negative ints
    key_sorted = key[order]
    starts = np.flatnonzero(np.diff(key_sorted, prepend=key_sorted[0] - 1))
    counts = np.diff(starts, append=len(key_sorted))
    n_rows = len(starts)
    t_max = int(counts.max())

    data = np.zeros((n_rows, t_max, n_feat))
    row_of_event = np.repeat(np.arange(n_rows), counts)
    slot_of_event = np.arange(len(key_sorted)) - np.repeat(starts, counts)
    data[row_of_event, slot_of_event] = feats[order]

    row_key = key_sorted[starts]
    row_x = row_key % width
    row_y = (row_key // width) % height
    row_sample = row_key // (width * height)
    return GroupedEvents(
        data, row_x, row_y, row_sample, counts.astype(np.int64),
        len(batch), height, width,
    )


@dataclass(frozen=True)
class BinnedBatch:
    """Per-bin sub-batches of one event batch.

    ``bins[b]`` holds every sample's b-th time slice (possibly empty).
    ``sample_spans[n]`` is sample n's uncut (first, last) event time and
    ``bin_spans[n, b]`` the half-open span of its b-th bin (the last bin is
    closed at the sample's final timestamp).
    """

    bins: tuple[EventBatch, ...]
    bin_spans: np.ndarray  # (N, B, 2)
    sample_spans: np.ndarray  # (N, 2)

    @property
    def n_bins(self) -> int:
        return len(self.bins)


def group_by_time(batch: EventBatch, n_bins: int) -> BinnedBatch:
    """Split each sample into ``n_bins`` equal-duration consecutive bins.

    Bin b of sample n covers [t0 + b*d, t0 + (b+1)*d) with d spanning the
    sample's own event range; the last bin additionally includes the final
    timestamp.  Events keep their order inside each bin.  A sample whose
    range is degenerate (one distinct timestamp, or empty) lands in bin 0.
    """
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    n = len(batch)
    sample_spans = np.zeros((n, 2))
    bin_spans = np.zeros((n, n_bins, 2))
    per_bin_streams: list[list[EventStream]] = [[] for _ in range(n_bins)]
    for i, stream in enumerate(batch):
        t0, t1 = stream.time_span()
        sample_spans[i] = (t0, t1)
        delta = (t1 - t0) / n_bins
        edges = t0 + delta * np.arange(n_bins + 1)
        edges[-1] = t1
        bin_spans[i, :, 0] = edges[:-1]
        bin_spans[i, :, 1] = edges[1:]
        if n_bins == 1:
            continue  # single bin is the whole sample, no cutting needed
        if len(stream) == 0 or delta == 0.0:
            idx = np.zeros(len(stream), dtype=np.int64)
        else:
            idx = np.minimum(
                ((stream.t - t0) / delta).astype(np.int64), n_bins - 1
            )
        for b in range(n_bins):
            per_bin_streams[b].append(stream.select(idx == b))
    if n_bins == 1:
        return BinnedBatch((batch,), bin_spans, sample_spans)
    bins = tuple(EventBatch(tuple(streams)) for streams in per_bin_streams)
    return BinnedBatch(bins, bin_spans, sample_spans)


@dataclass(frozen=True)
class UnfoldedBatch:
    """Events replicated onto the receptive-field output grid.

    ``coords[i][k]`` is the (x, y) position, scaled to [0, 1]^2, of the k-th
    replicated event of stream i inside its receptive field.
    """

    batch: EventBatch
    coords: tuple[np.ndarray, ...]


def _pad_before(n_in: int, n_out: int, kernel: int, stride: int) -> int:
    covered = (n_out - 1) * stride + kernel
    total = max(covered - n_in, 0)
    return total - total // 2  # leading side takes the odd pixel


def unfold_receptive_fields(
    batch: EventBatch,
    kernel: int | tuple[int, int],
    stride: int | tuple[int, int] = 1,
) -> UnfoldedBatch:
    """Replicate each event into every receptive field that covers it.

    Fields are ``kernel``-sized windows placed every ``stride`` pixels over a
    zero-padded grid, one per cell of the ceil(H/s) x ceil(W/s) output grid.
    Kernel sides must be odd.  Replicas are addressed by their field's output
    cell and keep the original time order; replicas of the same event sit in
    distinct fields.  With kernel 1 and stride 1 this is the identity (all
    coordinates (0, 0)).
    """
    k_h, k_w = (kernel, kernel) if isinstance(kernel, int) else kernel
    s_y, s_x = (stride, stride) if isinstance(stride, int) else stride
    if k_h < 1 or k_w < 1 or k_h % 2 == 0 or k_w % 2 == 0:
        raise ConfigError(f"kernel sides must be odd and positive, got {k_h}x{k_w}")
    if s_y < 1 or s_x < 1:
        raise ConfigError(f"stride must be >= 1, got ({s_y}, {s_x})")

    if (k_h, k_w) == (1, 1) and (s_y, s_x) == (1, 1):
        # identity: one field per pixel, every event sits at its origin
        return UnfoldedBatch(batch, tuple(np.zeros((len(s), 2)) for s in batch))

    h_in, w_in = batch.height, batch.width
    out_h = math.ceil(h_in / s_y)
    out_w = math.ceil(w_in / s_x)
    pad_top = _pad_before(h_in, out_h, k_h, s_y)
    pad_left = _pad_before(w_in, out_w, k_w, s_x)

    streams: list[EventStream] = []
    coords: list[np.ndarray] = []
    for stream in batch:
        pieces = []  # (orig_idx, u, v, px, py)
        y = stream.y.astype(np.int64)
        x = stream.x.astype(np.int64)
        for a in range(k_h):
            num_y = y + pad_top - a
            ok_y = (num_y >= 0) & (num_y % s_y == 0) & (num_y < out_h * s_y)
            for b in range(k_w):
                num_x = x + pad_left - b
                ok = ok_y & (num_x >= 0) & (num_x % s_x == 0) & (num_x < out_w * s_x)
                idx = np.flatnonzero(ok)
                if len(idx) == 0:
                    continue
                pieces.append(
                    (
                        idx,
                        num_y[idx] // s_y,
                        num_x[idx] // s_x,
                        np.full(len(idx), b / max(k_w - 1, 1)),
                        np.full(len(idx), a / max(k_h - 1, 1)),
                    )
                )
        if pieces:
            orig = np.concatenate([p[0] for p in pieces])
            u = np.concatenate([p[1] for p in pieces])
            v = np.concatenate([p[2] for p in pieces])
            px = np.concatenate([p[3] for p in pieces])
            py = np.concatenate([p[4] for p in pieces])
            # stable by original index: replicas inherit stream time order
            order = np.argsort(orig, kind="stable")
            orig, u, v, px, py = (arr[order] for arr in (orig, u, v, px, py))
            streams.append(
                EventStream(out_w, out_h, v, u, stream.t[orig], stream.p[orig])
            )
            coords.append(np.column_stack([px, py]))
        else:
            streams.append(EventStream.empty(out_w, out_h))
            coords.append(np.zeros((0, 2)))
    return UnfoldedBatch(EventBatch(tuple(streams)), tuple(coords))


def scatter_last_outputs(
    outputs: np.ndarray, grouped: GroupedEvents, channels: int | None = None
) -> np.ndarray:
    """Place per-row vectors at their pixels; untouched cells stay zero.

    Returns an (N, H, W, C) tensor in the dtype of ``outputs``.
    """
    outputs = np.asarray(outputs)
    if outputs.ndim != 2 or outputs.shape[0] != grouped.n_rows:
        raise ConfigError(
            f"outputs shape {outputs.shape} does not match {grouped.n_rows} rows"
        )
    if channels is not None and outputs.shape[1] != channels:
        raise ConfigError(f"outputs carry {outputs.shape[1]} channels, expected {channels}")
    surface = np.zeros(
        (grouped.n_samples, grouped.height, grouped.width, outputs.shape[1]),
        dtype=outputs.dtype,
    )
    surface[grouped.row_sample, grouped.row_y, grouped.row_x] = outputs
    return surface


def gather_surface_rows(surface: np.ndarray, grouped: GroupedEvents) -> np.ndarray:
    """Inverse lookup of ``scatter_last_outputs``: one surface vector per row."""
    return surface[grouped.row_sample, grouped.row_y, grouped.row_x]
