"""Per-event feature encoding.

Each event becomes a float row.  Columns appear in a fixed canonical order:
the enabled time features (in ``TIME_FEATURES`` order), then polarity, then
the two receptive-field coordinates when enabled.  All time features are
range-normalized into [0, 1]; a degenerate range maps to exactly 0.0.

Time feature scopes:

* ``ts_absolute`` / ``ts_global``: normalized over the sample span, i.e. the
  time range of the uncut sample.  They are properties of the event, not of
  whatever sub-sequence (time bin, receptive field) it is encoded in.
* ``ts_local``: normalized over the time range of the sequence being encoded,
  so inside a time bin it measures progress through that bin.
* ``ts_relative``: like ``ts_local`` but per pixel, over the range of events
  sharing the event's (x, y).
* ``delay_relative``: per pixel, the gap to the previous event at the same
  pixel (0 for the first one), divided by that pixel's largest gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .events import EventStream

TIME_FEATURES = ("ts_absolute", "ts_relative", "delay_relative", "ts_global", "ts_local")

# short aliases accepted on the command line
_SPEC_ALIASES = {
    "ts_abs": "ts_absolute",
    "ts_rel": "ts_relative",
    "delay_rel": "delay_relative",
    "delay": "delay_relative",
}


@dataclass(frozen=True)
class FeatureConfig:
    """Which per-event features to emit.

    ``time_features`` is normalized to canonical order and deduplicated, so
    configs that enable the same set compare equal and produce identical
    column layouts.
    """

    time_features: tuple[str, ...] = ("ts_absolute",)
    with_polarity: bool = True
    with_coords: bool = False

    def __post_init__(self):
        requested = set(self.time_features)
        unknown = requested - set(TIME_FEATURES)
        if unknown:
            raise ConfigError(f"unknown time features: {sorted(unknown)}")
        canon = tuple(name for name in TIME_FEATURES if name in requested)
        object.__setattr__(self, "time_features", canon)
        if not canon and not self.with_polarity and not self.with_coords:
            raise ConfigError("feature config enables no features at all")

    @property
    def width(self) -> int:
        return len(self.time_features) + int(self.with_polarity) + 2 * int(self.with_coords)

    def column_names(self) -> tuple[str, ...]:
        names = list(self.time_features)
        if self.with_polarity:
            names.append("polarity")
        if self.with_coords:
            names += ["coord_x", "coord_y"]
        return tuple(names)


def parse_feature_spec(spec: str) -> FeatureConfig:
    """Build a config from a comma/plus separated token list.

    Tokens: ``polarity``, ``coords``, ``ts_absolute``/``ts_abs``,
    ``ts_relative``/``ts_rel``, ``delay_relative``/``delay_rel``,
    ``ts_global``, ``ts_local``.
    """
    tokens = [tok.strip() for tok in spec.replace("+", ",").split(",") if tok.strip()]
    time_feats: list[str] = []
    polarity = False
    coords = False
    for tok in tokens:
        name = _SPEC_ALIASES.get(tok, tok)
        if name == "polarity":
            polarity = True
        elif name == "coords":
            coords = True
        elif name in TIME_FEATURES:
            time_feats.append(name)
        else:
            raise ConfigError(f"unknown feature token {tok!r}")
    return FeatureConfig(tuple(time_feats), with_polarity=polarity, with_coords=coords)


def _range_normalize(t: np.ndarray, lo, hi) -> np.ndarray:
    """(t - lo) / (hi - lo) with a degenerate range collapsing to 0.0."""
    span = np.asarray(hi, dtype=np.float64) - np.asarray(lo, dtype=np.float64)
    out = np.zeros(t.shape, dtype=np.float64)
    np.divide(t - lo, span, out=out, where=span > 0)
    return out


def _per_pixel_features(stream: EventStream, want_relative: bool, want_delay: bool):
    """ts_relative / delay_relative via one stable sort by pixel id.

    Pixel order inside each segment is the stream's storage order, which for
    a sorted stream is time order.
    """
    n = len(stream)
    ts_rel = np.zeros(n, dtype=np.float64) if want_relative else None
    delay = np.zeros(n, dtype=np.float64) if want_delay else None
    if n == 0:
        return ts_rel, delay
    pix = stream.y.astype(np.int64) * stream.width + stream.x.astype(np.int64)
    order = np.argsort(pix, kind="stable")
    t_sorted = stream.t[order]
    starts = np.flatnonzero(np.diff(pix[order], prepend=pix[order[0]] - 1))
    counts = np.diff(starts, append=n)
    if want_relative:
        lo = np.repeat(np.minimum.reduceat(t_sorted, starts), counts)
        hi = np.repeat(np.maximum.reduceat(t_sorted, starts), counts)
        ts_rel[order] = _range_normalize(t_sorted, lo, hi)
    if want_delay:
        gaps = np.empty(n, dtype=np.float64)
        gaps[1:] = t_sorted[1:] - t_sorted[:-1]
        gaps[starts] = 0.0  # first event at a pixel has no predecessor
        gmax = np.repeat(np.maximum.reduceat(gaps, starts), counts)
        out = np.zeros(n, dtype=np.float64)
        np.divide(gaps, gmax, out=out, where=gmax > 0)
        delay[order] = out
    return ts_rel, delay


def encode_features(
    stream: EventStream,
    config: FeatureConfig,
    sample_span: tuple[float, float] | None = None,
    coords: np.ndarray | None = None,
) -> np.ndarray:
    """Encode a stream into an (n_events, config.width) float64 matrix.

    ``sample_span`` is the (first, last) time of the uncut sample the stream
    belongs to; it must cover all event times and defaults to the stream's
    own range.  ``coords`` is the (n_events, 2) receptive-field coordinate
    block produced by unfolding and is required iff ``with_coords`` is set.
    """
    n = len(stream)
    if sample_span is None:
        sample_span = stream.time_span()
    lo, hi = float(sample_span[0]), float(sample_span[1])
    if hi < lo:
        raise ConfigError(f"sample span ({lo}, {hi}) is reversed")
    if n and (stream.t.min() < lo or stream.t.max() > hi):
        raise ConfigError("sample span does not cover all event times")
    if config.with_coords:
        if coords is None:
            raise ConfigError("config expects receptive-field coords but none were given")
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape != (n, 2):
            raise ConfigError(f"coords shape {coords.shape} != ({n}, 2)")
    elif coords is not None:
        raise ConfigError("coords given but with_coords is off")

    want_rel = "ts_relative" in config.time_features
    want_delay = "delay_relative" in config.time_features
    ts_rel, delay = _per_pixel_features(stream, want_rel, want_delay)

    columns: list[np.ndarray] = []
    for name in config.time_features:
        if name in ("ts_absolute", "ts_global"):
            columns.append(_range_normalize(stream.t, lo, hi))
        elif name == "ts_local":
            s_lo, s_hi = stream.time_span()
            columns.append(_range_normalize(stream.t, s_lo, s_hi))
        elif name == "ts_relative":
            columns.append(ts_rel)
        elif name == "delay_relative":
            columns.append(delay)
    if config.with_polarity:
        columns.append(stream.p.astype(np.float64))
    if config.with_coords:
        columns.append(coords[:, 0])
        columns.append(coords[:, 1])
    if not columns:  # unreachable: config validation requires >= 1 feature
        raise ConfigError("no feature columns to encode")
    return np.column_stack(columns) if n else np.zeros((0, config.width))


def receptive_coords(
    event_xy: tuple[int, int],
    field_origin: tuple[int, int],
    kernel_h: int,
    kernel_w: int,
) -> tuple[float, float]:
    """Position of an event inside one receptive field, scaled to [0, 1]^2.

    The field's top-left pixel maps to (0, 0) and its bottom-right to (1, 1);
    a 1x1 field maps to (0, 0).  The divisor is max(K - 1, 1) per axis.
    """
    ex, ey = event_xy
    ox, oy = field_origin
    dx, dy = ex - ox, ey - oy
    if not (0 <= dx < kernel_w and 0 <= dy < kernel_h):
        raise ConfigError(
            f"event {event_xy} outside {kernel_w}x{kernel_h} field at {field_origin}"
        )
    return (dx / max(kernel_w - 1, 1), dy / max(kernel_h - 1, 1))
