"""End-to-end reconstruction layer: event batch -> dense learned surface.

The pipeline is: cut each sample into time bins, unfold receptive fields,
encode per-event features, group by pixel, scan the shared LSTM, scatter last
outputs onto the output grid, concatenate the per-bin slabs channel-wise and
optionally rescale channels with a squeeze-excitation block.

The pure data movement (everything up to the padded blocks) is split out as
``prepare_layer_inputs`` so the differentiable part, ``apply_layer``, can be
probed independently: gradients flow to LSTM parameters, squeeze-excitation
parameters and the grouped feature blocks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError, EventFormatError
from .events import EventBatch
from .features import FeatureConfig, encode_features
from .grouping import (
    GroupedEvents,
    gather_surface_rows,
    group_by_pixel,
    group_by_time,
    scatter_last_outputs,
    unfold_receptive_fields,
)
from .lstm import GroupedTape, LstmGrads, LstmParams, backward_grouped, forward_grouped

_SRF_MAGIC = b"SRF1"
_SRF_HEADER = struct.Struct("<4sHHH")


@dataclass(frozen=True)
class LayerConfig:
    """Static description of one reconstruction layer.

    The produced surface has ``n_bins * channels`` channels on the
    ceil(H/stride) x ceil(W/stride) output grid.
    """

    channels: int
    n_bins: int = 1
    features: FeatureConfig = field(default_factory=FeatureConfig)
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    se_enabled: bool = False
    dtype: type = np.float64

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.n_bins < 1:
            raise ConfigError(f"n_bins must be >= 1, got {self.n_bins}")
        k_h, k_w = self.kernel
        if k_h % 2 == 0 or k_w % 2 == 0 or k_h < 1 or k_w < 1:
            raise ConfigError(f"kernel sides must be odd and positive, got {self.kernel}")
        if min(self.stride) < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    @property
    def surface_channels(self) -> int:
        return self.n_bins * self.channels


@dataclass(frozen=True)
class SeParams:
    """Two channel-mixing maps with biases; applied squeeze -> w1 -> relu ->
    w2 -> sigmoid to produce one scale per surface channel."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        d = self.w1.shape[0] if self.w1.ndim == 2 else -1
        shapes = (self.w1.shape, self.b1.shape, self.w2.shape, self.b2.shape)
        if d < 1 or shapes != ((d, d), (d,), (d, d), (d,)):
            raise ConfigError(f"inconsistent squeeze-excitation shapes: {shapes}")

    @property
    def channels(self) -> int:
        return self.w1.shape[0]

    @property
    def dtype(self):
        return self.w1.dtype

    def astype(self, dtype) -> "SeParams":
        if self.dtype == dtype:
            return self
        return SeParams(*(a.astype(dtype) for a in (self.w1, self.b1, self.w2, self.b2)))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "SeParams":
        return cls(d["w1"], d["b1"], d["w2"], d["b2"])


@dataclass(frozen=True)
class SeGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_se_params(channels: int, seed: int, dtype=np.float64) -> SeParams:
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(channels)
    w1 = rng.uniform(-bound, bound, size=(channels, channels))
    w2 = rng.uniform(-bound, bound, size=(channels, channels))
    zeros = np.zeros(channels)
    return SeParams(w1.astype(dtype), zeros.astype(dtype), w2.astype(dtype), zeros.astype(dtype))


@dataclass
class LayerInputs:
    """Per-bin grouped feature blocks, ready for the differentiable part."""

    grouped_bins: tuple[GroupedEvents, ...]
    n_samples: int
    out_height: int
    out_width: int

    def element_count(self) -> int:
        return int(sum(g.data.size for g in self.grouped_bins))


def prepare_layer_inputs(batch: EventBatch, config: LayerConfig) -> LayerInputs:
    """Bin, unfold, encode and group a batch.  Pure data movement."""
    binned = group_by_time(batch, config.n_bins)
    spans = binned.sample_spans
    grouped_bins = []
    out_h = out_w = None
    for bin_batch in binned.bins:
        unfolded = unfold_receptive_fields(bin_batch, config.kernel, config.stride)
        out_h, out_w = unfolded.batch.height, unfolded.batch.width
        feats = [
            encode_features(
                stream,
                config.features,
                sample_span=tuple(spans[n]),
                coords=unfolded.coords[n] if config.features.with_coords else None,
            )
            for n, stream in enumerate(unfolded.batch)
        ]
        grouped_bins.append(group_by_pixel(unfolded.batch, feats))
    return LayerInputs(tuple(grouped_bins), len(batch), out_h, out_w)


@dataclass
class SeTape:
    params: SeParams
    surface_in: np.ndarray  # (N, H, W, D) pre-scale
    squeeze: np.ndarray  # (N, D)
    pre_relu: np.ndarray  # (N, D)
    hidden: np.ndarray  # (N, D)
    scale: np.ndarray  # (N, D)


def se_forward(surface: np.ndarray, params: SeParams) -> tuple[np.ndarray, SeTape]:
    """Rescale each channel by a sigmoid gate of the spatial channel means.

    The squeeze averages over all grid cells, inactive (zero) ones included.
    Zero cells stay exactly zero afterwards since scaling preserves +-0.0.
    """
    if surface.ndim != 4 or surface.shape[3] != params.channels:
        raise ConfigError(
            f"surface shape {surface.shape} does not carry {params.channels} channels"
        )
    z = surface.mean(axis=(1, 2))
    u = z @ params.w1 + params.b1
    r = np.maximum(u, 0.0)
    v = r @ params.w2 + params.b2
    s = expit(v)
    out = surface * s[:, None, None, :]
    return out, SeTape(params, surface, z, u, r, s)


def se_backward(tape: SeTape, d_out: np.ndarray) -> tuple[np.ndarray, SeGrads]:
    p = tape.params
    d_scale = np.einsum("nhwd,nhwd->nd", d_out, tape.surface_in)
    dv = d_scale * tape.scale * (1.0 - tape.scale)
    g_w2 = tape.hidden.T @ dv
    g_b2 = dv.sum(axis=0)
    dr = dv @ p.w2.T
    du = dr * (tape.pre_relu > 0)
    g_w1 = tape.squeeze.T @ du
    g_b1 = du.sum(axis=0)
    dz = du @ p.w1.T
    n_cells = tape.surface_in.shape[1] * tape.surface_in.shape[2]
    d_surface = d_out * tape.scale[:, None, None, :] + dz[:, None, None, :] / n_cells
    return d_surface, SeGrads(g_w1, g_b1, g_w2, g_b2)


@dataclass
class LayerTape:
    config: LayerConfig
    inputs: LayerInputs
    bin_tapes: tuple[GroupedTape, ...]
    se_tape: Optional[SeTape]

    def element_count(self) -> int:
        """Processing elements held by this tape: grouped blocks plus the
        scan activations (parameters and raw events are not counted)."""
        total = self.inputs.element_count()
        total += sum(t.scan.element_count() for t in self.bin_tapes)
        if self.se_tape is not None:
            total += int(
                self.se_tape.squeeze.size * 3 + self.se_tape.scale.size
            )
        return total


@dataclass(frozen=True)
class LayerGrads:
    lstm: LstmGrads
    se: Optional[SeGrads]
    feature_blocks: tuple[np.ndarray, ...]  # one per bin, aligned with inputs


def _check_params(config: LayerConfig, lstm_params: LstmParams, se_params) -> None:
    if lstm_params.n_features != config.features.width:
        raise ConfigError(
            f"parameters expect {lstm_params.n_features} features, "
            f"config encodes {config.features.width}"
        )
    if lstm_params.channels != config.channels:
        raise ConfigError(
            f"parameters have {lstm_params.channels} channels, config wants {config.channels}"
        )
    if config.se_enabled:
        if se_params is None:
            raise ConfigError("config enables squeeze-excitation but no parameters given")
        if se_params.channels != config.surface_channels:
            raise ConfigError(
                f"squeeze-excitation sized for {se_params.channels} channels, "
                f"surface has {config.surface_channels}"
            )
    elif se_params is not None:
        raise ConfigError("squeeze-excitation parameters given but disabled in config")


def apply_layer(
    inputs: LayerInputs,
    config: LayerConfig,
    lstm_params: LstmParams,
    se_params: SeParams | None = None,
) -> tuple[np.ndarray, LayerTape]:
    """Differentiable part: grouped blocks -> (N, H_out, W_out, B*C) surface."""
    _check_params(config, lstm_params, se_params)
    if len(inputs.grouped_bins) != config.n_bins:
        raise ConfigError(
            f"inputs carry {len(inputs.grouped_bins)} bins, config wants {config.n_bins}"
        )
    lstm_params = lstm_params.astype(config.dtype) if lstm_params.dtype != config.dtype else lstm_params
    slabs = []
    bin_tapes = []
    for grouped in inputs.grouped_bins:
        outputs, tape = forward_grouped(grouped, lstm_params)
        bin_tapes.append(tape)
        slab = scatter_last_outputs(outputs, grouped, channels=config.channels)
        slabs.append(slab)
    surface = np.concatenate(slabs, axis=3)
    se_tape = None
    if config.se_enabled:
        surface, se_tape = se_forward(surface, se_params.astype(config.dtype))
    return surface, LayerTape(config, inputs, tuple(bin_tapes), se_tape)


def layer_forward(
    batch: EventBatch,
    config: LayerConfig,
    lstm_params: LstmParams,
    se_params: SeParams | None = None,
) -> tuple[np.ndarray, LayerTape]:
    """Full reconstruction: prepare the batch, then apply the layer."""
    return apply_layer(prepare_layer_inputs(batch, config), config, lstm_params, se_params)


def layer_backward(tape: LayerTape, d_surface: np.ndarray) -> LayerGrads:
    """Reverse sweep of :func:`apply_layer`.

    Returns gradients for the LSTM parameters (summed over bins in bin
    order), the squeeze-excitation parameters when enabled, and each bin's
    grouped feature block.  Gradient entries of ``d_surface`` at inactive
    cells only reach the squeeze-excitation path; the per-pixel scan never
    sees them.
    """
    config = tape.config
    c_n = config.channels
    se_grads = None
    if tape.se_tape is not None:
        d_surface, se_grads = se_backward(tape.se_tape, d_surface)
    wx = wh = b = None
    feature_grads = []
    for b_idx, gtape in enumerate(tape.bin_tapes):
        d_slab = d_surface[..., b_idx * c_n : (b_idx + 1) * c_n]
        d_outputs = gather_surface_rows(d_slab, gtape.grouped)
        grads, d_block = backward_grouped(gtape, d_outputs)
        feature_grads.append(d_block)
        if wx is None:
            wx, wh, b = grads.wx, grads.wh, grads.b
        else:
            wx = wx + grads.wx
            wh = wh + grads.wh
            b = b + grads.b
    return LayerGrads(LstmGrads(wx, wh, b), se_grads, tuple(feature_grads))


# ---------------------------------------------------------------------------
# surface IO: magic, u16 height, u16 width, u16 channels, float32 LE rows


def write_surface(path: str | Path, surface: np.ndarray) -> None:
    """Store one sample's (H, W, D) surface as float32."""
    surface = np.asarray(surface)
    if surface.ndim != 3:
        raise ConfigError(f"expected one (H, W, D) surface, got shape {surface.shape}")
    h, w, d = surface.shape
    if max(h, w, d) > 0xFFFF:
        raise ConfigError(f"surface dimensions {surface.shape} exceed 16-bit header fields")
    with open(path, "wb") as fh:
        fh.write(_SRF_HEADER.pack(_SRF_MAGIC, h, w, d))
        fh.write(np.ascontiguousarray(surface, dtype="<f4").tobytes())


def read_surface(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _SRF_HEADER.size:
        raise EventFormatError(f"{path}: truncated surface header")
    magic, h, w, d = _SRF_HEADER.unpack_from(raw)
    if magic != _SRF_MAGIC:
        raise EventFormatError(f"{path}: bad surface magic {magic!r}")
    expected = _SRF_HEADER.size + 4 * h * w * d
    if len(raw) != expected:
        raise EventFormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_SRF_HEADER.size).copy()
    return data.reshape(h, w, d)


def write_surface_pgm(path: str | Path, surface: np.ndarray) -> None:
    """8-bit binary PGM preview of the first channel, min-max scaled."""
    surface = np.asarray(surface)
    if surface.ndim != 3:
        raise ConfigError(f"expected one (H, W, D) surface, got shape {surface.shape}")
    chan = surface[:, :, 0].astype(np.float64)
    lo, hi = chan.min(), chan.max()
    if hi > lo:
        scaled = (chan - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(chan)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
