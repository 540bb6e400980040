"""Dense reference implementations used as correctness oracles.

Everything here is deliberately simple and single-threaded: a densified
event volume with one slot per (sample, step, pixel), a triple-loop scan
that treats every pixel as an independent LSTM (what a 1x1-kernel
convolutional LSTM computes on the dense volume), and a second, pure-scalar
reimplementation of the whole single-sample pipeline that shares no array
code with the main path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .events import EventBatch, EventStream
from .lstm import LstmParams, LstmState, lstm_cell_step

# keep an explicit import so layer config objects can be type-checked here
from .layer import LayerConfig


@dataclass(frozen=True)
class DenseEventVolume:
    """Zero-padded dense layout: one feature slot per (sample, step, pixel).

    ``data[n, k, y, x]`` is the k-th event row at pixel (x, y) of sample n;
    ``valid_len[n, y, x]`` counts the real events there.  Its footprint is
    N * T_max * H * W * F elements no matter how sparse the input was, which
    is what the grouped representation avoids.
    """

    data: np.ndarray  # (N, T_max, H, W, F)
    valid_len: np.ndarray  # (N, H, W)

    @property
    def element_count(self) -> int:
        return int(self.data.size)


def densify_events(batch: EventBatch, features: list[np.ndarray]) -> DenseEventVolume:
    """Scatter encoded events into the dense volume, preserving stream order."""
    if len(features) != len(batch):
        raise ConfigError(f"{len(features)} feature blocks for {len(batch)} streams")
    widths = {np.asarray(f).shape[1] for f in features if np.asarray(f).ndim == 2}
    if len(widths) > 1:
        raise ConfigError(f"feature blocks disagree on width: {sorted(widths)}")
    n_feat = widths.pop() if widths else 0
    n, h, w = len(batch), batch.height, batch.width

    valid = np.zeros((n, h, w), dtype=np.int64)
    for s_idx, stream in enumerate(batch):
        for e_idx in range(len(stream)):
            valid[s_idx, stream.y[e_idx], stream.x[e_idx]] += 1
    t_max = int(valid.max()) if valid.size else 0

    data = np.zeros((n, t_max, h, w, n_feat))
    slot = np.zeros((n, h, w), dtype=np.int64)
    for s_idx, (stream, feats) in enumerate(zip(batch, features)):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape[0] != len(stream):
            raise ConfigError(
                f"feature block {s_idx} has {feats.shape[0]} rows, "
                f"stream has {len(stream)} events"
            )
        for e_idx in range(len(stream)):
            x, y = int(stream.x[e_idx]), int(stream.y[e_idx])
            data[s_idx, slot[s_idx, y, x], y, x] = feats[e_idx]
            slot[s_idx, y, x] += 1
    return DenseEventVolume(data, valid)


def convlstm_1x1_forward(volume: DenseEventVolume, params: LstmParams) -> np.ndarray:
    """Run the shared cell over every pixel of the dense volume.

    A 1x1 kernel means no spatial mixing, so each pixel is an independent
    LSTM fed its own slots; pixels with no events yield exact zeros.
    Returns an (N, H, W, C) surface.
    """
    n, t_max, h, w, n_feat = volume.data.shape
    if n_feat != params.n_features:
        raise ConfigError(
            f"volume carries {n_feat} features, parameters expect {params.n_features}"
        )
    c_n = params.channels
    out = np.zeros((n, h, w, c_n), dtype=params.dtype)
    for s_idx in range(n):
        for y in range(h):
            for x in range(w):
                steps = int(volume.valid_len[s_idx, y, x])
                if steps == 0:
                    continue
                state = LstmState(
                    np.zeros(c_n, dtype=params.dtype), np.zeros(c_n, dtype=params.dtype)
                )
                for k in range(steps):
                    state = lstm_cell_step(params, volume.data[s_idx, k, y, x], state)
                out[s_idx, y, x] = state.h
    return out


# ---------------------------------------------------------------------------
# pure-scalar second oracle


def _sigmoid(value: float) -> float:
    if value >= 0.0:
        return 1.0 / (1.0 + math.exp(-value))
    e = math.exp(value)
    return e / (1.0 + e)


def _norm(value: float, lo: float, hi: float) -> float:
    return (value - lo) / (hi - lo) if hi > lo else 0.0


def naive_pixel_forward(
    stream: EventStream, config: LayerConfig, params: LstmParams
) -> np.ndarray:
    """Single-sample pipeline in plain Python floats, no numpy math.

    Re-derives the time features, bin assignment and per-pixel recurrence
    from scratch with ``math`` functions, so it shares no numerical code
    with the vectorized path.  Restricted to kernel 1, stride 1 and no
    squeeze-excitation.  Returns a (1, H, W, B*C) surface.
    """
    if config.kernel != (1, 1) or config.stride != (1, 1) or config.se_enabled:
        raise ConfigError("the scalar reference only covers kernel 1, stride 1, no SE")
    if params.n_features != config.features.width or params.channels != config.channels:
        raise ConfigError("parameter shapes do not match the config")

    height, width = stream.height, stream.width
    c_n = config.channels
    n_bins = config.n_bins
    events = list(stream)
    times = [e.t for e in events]
    span_lo, span_hi = (min(times), max(times)) if times else (0.0, 0.0)
    delta = (span_hi - span_lo) / n_bins

    wx = params.wx.astype(np.float64).tolist()
    wh = params.wh.astype(np.float64).tolist()
    bias = params.b.astype(np.float64).tolist()
    n_feat = params.n_features

    surface = np.zeros((1, height, width, n_bins * c_n))
    for b_idx in range(n_bins):
        if delta == 0.0:
            members = events if b_idx == 0 else []
        else:
            members = [
                e
                for e in events
                if min(int((e.t - span_lo) / delta), n_bins - 1) == b_idx
            ]
        bin_times = [e.t for e in members]
        bin_lo, bin_hi = (min(bin_times), max(bin_times)) if bin_times else (0.0, 0.0)

        per_pixel: dict[tuple[int, int], list] = {}
        for e in members:
            per_pixel.setdefault((e.x, e.y), []).append(e)

        for (x, y), seq in per_pixel.items():
            seq_times = [e.t for e in seq]
            pix_lo, pix_hi = min(seq_times), max(seq_times)
            gaps = [0.0] + [seq_times[k] - seq_times[k - 1] for k in range(1, len(seq))]
            gap_max = max(gaps)

            h_state = [0.0] * c_n
            c_state = [0.0] * c_n
            for k, e in enumerate(seq):
                row: list[float] = []
                for name in config.features.time_features:
                    if name in ("ts_absolute", "ts_global"):
                        row.append(_norm(e.t, span_lo, span_hi))
                    elif name == "ts_local":
                        row.append(_norm(e.t, bin_lo, bin_hi))
                    elif name == "ts_relative":
                        row.append(_norm(e.t, pix_lo, pix_hi))
                    elif name == "delay_relative":
                        row.append(gaps[k] / gap_max if gap_max > 0 else 0.0)
                if config.features.with_polarity:
                    row.append(float(e.p))
                if config.features.with_coords:
                    row.extend([0.0, 0.0])  # 1x1 fields collapse to the origin
                assert len(row) == n_feat

                act = [bias[j] for j in range(4 * c_n)]
                for f_idx in range(n_feat):
                    value = row[f_idx]
                    for j in range(4 * c_n):
                        act[j] += value * wx[f_idx][j]
                for c_idx in range(c_n):
                    value = h_state[c_idx]
                    for j in range(4 * c_n):
                        act[j] += value * wh[c_idx][j]
                for c_idx in range(c_n):
                    gate_i = _sigmoid(act[c_idx])
                    gate_f = _sigmoid(act[c_n + c_idx])
                    gate_g = math.tanh(act[2 * c_n + c_idx])
                    gate_o = _sigmoid(act[3 * c_n + c_idx])
                    c_state[c_idx] = gate_f * c_state[c_idx] + gate_i * gate_g
                    h_state[c_idx] = gate_o * math.tanh(c_state[c_idx])
            surface[0, y, x, b_idx * c_n : (b_idx + 1) * c_n] = h_state
    return surface
