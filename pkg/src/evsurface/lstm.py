"""Shared-parameter LSTM over padded event rows, forward and backward.

One LSTM cell (gate order: input, forget, candidate, output) is applied to
every row of a padded (P, T_max, F) block with a per-row valid length.  The
scan is vectorized across rows; padded slots are computed and then discarded
through a select, so their contents never influence any output, and the
backward pass reproduces exactly what autodiff of the forward would give.

Parameter gradients can be reduced over rows in a caller-chosen canonical
order, which makes gradients bit-identical under row permutations.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import ConfigError, EventFormatError
from .grouping import GroupedEvents

_CKPT_MAGIC = b"MLP1"
_CKPT_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class LstmParams:
    """Input weights (F, 4C), recurrent weights (C, 4C) and bias (4C,).

    The 4C axis is laid out as [input | forget | candidate | output] blocks.
    """

    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        wx, wh, b = (np.asarray(a) for a in (self.wx, self.wh, self.b))
        if wx.ndim != 2 or wh.ndim != 2 or b.ndim != 1:
            raise ConfigError("parameter arrays have wrong rank")
        c4 = wx.shape[1]
        if c4 % 4 != 0 or wh.shape != (c4 // 4, c4) or b.shape != (c4,):
            raise ConfigError(
                f"inconsistent parameter shapes: wx {wx.shape}, wh {wh.shape}, b {b.shape}"
            )
        object.__setattr__(self, "wx", wx)
        object.__setattr__(self, "wh", wh)
        object.__setattr__(self, "b", b)

    @property
    def n_features(self) -> int:
        return self.wx.shape[0]

    @property
    def channels(self) -> int:
        return self.wh.shape[0]

    @property
    def dtype(self):
        return self.wx.dtype

    def astype(self, dtype) -> "LstmParams":
        return LstmParams(self.wx.astype(dtype), self.wh.astype(dtype), self.b.astype(dtype))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"wx": self.wx, "wh": self.wh, "b": self.b}

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "LstmParams":
        return cls(d["wx"], d["wh"], d["b"])


@dataclass(frozen=True)
class LstmGrads:
    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


def init_lstm_params(
    n_features: int,
    channels: int,
    seed: int,
    dtype=np.float64,
    forget_bias: float = 1.0,
) -> LstmParams:
    """Uniform(-1/sqrt(C), 1/sqrt(C)) weights, zero bias except the forget
    block, which starts at ``forget_bias`` so early training keeps state."""
    if n_features < 1 or channels < 1:
        raise ConfigError(f"need n_features >= 1 and channels >= 1, got {n_features}, {channels}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(channels)
    wx = rng.uniform(-bound, bound, size=(n_features, 4 * channels))
    wh = rng.uniform(-bound, bound, size=(channels, 4 * channels))
    b = np.zeros(4 * channels)
    b[channels : 2 * channels] = forget_bias
    return LstmParams(wx.astype(dtype), wh.astype(dtype), b.astype(dtype))


def zero_state(params: LstmParams, n_rows: int) -> LstmState:
    c = params.channels
    return LstmState(
        np.zeros((n_rows, c), dtype=params.dtype), np.zeros((n_rows, c), dtype=params.dtype)
    )


def lstm_cell_step(params: LstmParams, x: np.ndarray, state: LstmState) -> LstmState:
    """One cell update; ``x`` is (F,) or (rows, F), state shapes match."""
    c_n = params.channels
    a = x @ params.wx + state.h @ params.wh + params.b
    i = expit(a[..., :c_n])
    f = expit(a[..., c_n : 2 * c_n])
    g = np.tanh(a[..., 2 * c_n : 3 * c_n])
    o = expit(a[..., 3 * c_n :])
    c = f * state.c + i * g
    h = o * np.tanh(c)
    return LstmState(h, c)


@dataclass
class ScanTape:
    """Activations recorded by the forward scan, consumed by the backward.

    ``h_chain`` / ``c_chain`` hold the post-select state sequence (a row's
    state freezes once its valid slots run out); the gate arrays hold raw
    per-step values that are only ever read where a row is active.
    """

    block: np.ndarray  # (P, T, F) input reference, not owned
    lengths: np.ndarray  # (P,)
    params: LstmParams
    gate_i: np.ndarray
    gate_f: np.ndarray
    gate_g: np.ndarray
    gate_o: np.ndarray
    tanh_c: np.ndarray
    h_chain: np.ndarray
    c_chain: np.ndarray

    def element_count(self) -> int:
        """Elements allocated by the scan itself (the input block is not
        counted; callers that own it add it separately)."""
        acts = (
            self.gate_i, self.gate_f, self.gate_g, self.gate_o,
            self.tanh_c, self.h_chain, self.c_chain,
        )
        return int(sum(a.size for a in acts))


def masked_scan_forward(
    block: np.ndarray, lengths: np.ndarray, params: LstmParams
) -> tuple[np.ndarray, ScanTape]:
    """Run the cell along every row; return each row's last valid output.

    Rows may have length 0 (their output is exactly zero).  Padded slots are
    evaluated and dropped, so anything finite may sit in them.
    """
    block = np.asarray(block)
    lengths = np.asarray(lengths)
    if block.ndim != 3:
        raise ConfigError(f"block must be (P, T, F), got shape {block.shape}")
    n_rows, t_max, n_feat = block.shape
    if lengths.shape != (n_rows,):
        raise ConfigError(f"lengths shape {lengths.shape} != ({n_rows},)")
    if np.any(lengths > t_max) or np.any(lengths < 0):
        raise ConfigError("row lengths out of range for the padded block")
    if n_feat != params.n_features:
        raise ConfigError(
            f"block carries {n_feat} features, parameters expect {params.n_features}"
        )
    dtype = params.dtype
    if block.dtype != dtype:
        block = block.astype(dtype)
    c_n = params.channels

    h = np.zeros((n_rows, c_n), dtype=dtype)
    c = np.zeros((n_rows, c_n), dtype=dtype)
    shape = (n_rows, t_max, c_n)
    gi, gf, gg, go = (np.empty(shape, dtype=dtype) for _ in range(4))
    tanh_c = np.empty(shape, dtype=dtype)
    h_chain = np.empty(shape, dtype=dtype)
    c_chain = np.empty(shape, dtype=dtype)

    for t in range(t_max):
        a = block[:, t] @ params.wx + h @ params.wh + params.b
        i = expit(a[:, :c_n])
        f = expit(a[:, c_n : 2 * c_n])
        g = np.tanh(a[:, 2 * c_n : 3 * c_n])
        o = expit(a[:, 3 * c_n :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        active = (lengths > t)[:, None]
        h = np.where(active, h_new, h)
        c = np.where(active, c_new, c)
        gi[:, t], gf[:, t], gg[:, t], go[:, t] = i, f, g, o
        tanh_c[:, t] = tc
        h_chain[:, t] = h
        c_chain[:, t] = c

    tape = ScanTape(block, lengths, params, gi, gf, gg, go, tanh_c, h_chain, c_chain)
    return h, tape


def masked_scan_backward(
    tape: ScanTape, d_last: np.ndarray, row_order: np.ndarray | None = None
) -> tuple[LstmGrads, np.ndarray]:
    """Exact reverse-mode sweep of :func:`masked_scan_forward`.

    ``d_last`` is the loss gradient at each row's last valid output.  Returns
    parameter gradients and the gradient w.r.t. the input block (exactly zero
    at padded slots).  With ``row_order`` given, per-row parameter
    contributions are reduced in that order, making the result invariant to
    how rows were arranged; without it a flat matmul reduction is used.
    """
    block, lengths, params = tape.block, tape.lengths, tape.params
    n_rows, t_max, _ = block.shape
    c_n = params.channels
    d_last = np.asarray(d_last)
    if d_last.shape != (n_rows, c_n):
        raise ConfigError(f"d_last shape {d_last.shape} != ({n_rows}, {c_n})")
    dtype = params.dtype

    dh = np.zeros((n_rows, c_n), dtype=dtype)
    dc = np.zeros((n_rows, c_n), dtype=dtype)
    da_all = np.zeros((n_rows, t_max, 4 * c_n), dtype=dtype)
    zeros_c = np.zeros((n_rows, c_n), dtype=dtype)

    for t in reversed(range(t_max)):
        # the downstream gradient enters where a row's sequence ends
        at_end = (lengths == t + 1)[:, None]
        dh = np.where(at_end, dh + d_last, dh)
        active = (lengths > t)[:, None]

        i, f = tape.gate_i[:, t], tape.gate_f[:, t]
        g, o = tape.gate_g[:, t], tape.gate_o[:, t]
        tc = tape.tanh_c[:, t]
        c_prev = tape.c_chain[:, t - 1] if t > 0 else zeros_c

        do = dh * tc
        dct = dc + dh * o * (1.0 - tc * tc)
        da = np.concatenate(
            [
                dct * g * i * (1.0 - i),
                dct * c_prev * f * (1.0 - f),
                dct * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        da = np.where(active, da, 0.0)
        da_all[:, t] = da

        dh = np.where(active, da @ params.wh.T, dh)
        dc = np.where(active, dct * f, dc)

    d_block = da_all @ params.wx.T

    if t_max:
        h_prev = np.concatenate(
            [np.zeros((n_rows, 1, c_n), dtype=dtype), tape.h_chain[:, :-1]], axis=1
        )
    else:
        h_prev = np.zeros((n_rows, 0, c_n), dtype=dtype)

    if row_order is None:
        x2 = block.reshape(n_rows * t_max, -1)
        da2 = da_all.reshape(n_rows * t_max, 4 * c_n)
        g_wx = x2.T @ da2
        g_wh = h_prev.reshape(n_rows * t_max, c_n).T @ da2
        g_b = da2.sum(axis=0)
    else:
        row_order = np.asarray(row_order)
        if sorted(row_order.tolist()) != list(range(n_rows)):
            raise ConfigError("row_order must be a permutation of all rows")
        g_wx = np.einsum("ptf,ptg->pfg", block, da_all)[row_order].sum(axis=0)
        g_wh = np.einsum("ptc,ptg->pcg", h_prev, da_all)[row_order].sum(axis=0)
        g_b = da_all.sum(axis=1)[row_order].sum(axis=0)
    return LstmGrads(g_wx, g_wh, g_b), d_block


@dataclass
class GroupedTape:
    scan: ScanTape
    grouped: GroupedEvents


def canonical_row_order(grouped: GroupedEvents) -> np.ndarray:
    """Rows sorted by (sample, y, x): the order group_by_pixel emits."""
    return np.lexsort((grouped.row_x, grouped.row_y, grouped.row_sample))


def forward_grouped(
    grouped: GroupedEvents, params: LstmParams
) -> tuple[np.ndarray, GroupedTape]:
    """Scan a grouped block; returns the (P, C) last-output matrix.

    Every grouped row must hold at least one event (group_by_pixel only
    emits rows for active pixels).
    """
    if grouped.n_rows and int(grouped.row_len.min()) < 1:
        raise ConfigError("grouped rows must contain at least one event each")
    if grouped.n_features != params.n_features:
        raise ConfigError(
            f"grouped block carries {grouped.n_features} features, "
            f"parameters expect {params.n_features}"
        )
    h_last, tape = masked_scan_forward(grouped.data, grouped.row_len, params)
    return h_last, GroupedTape(tape, grouped)


def backward_grouped(
    tape: GroupedTape, d_outputs: np.ndarray
) -> tuple[LstmGrads, np.ndarray]:
    """Gradients for :func:`forward_grouped`.

    Parameter gradients are accumulated in canonical (sample, y, x) row
    order, so two blocks holding the same rows in different order produce
    bit-identical gradients.  The returned feature-block gradient is aligned
    with the tape's block (zeros at padded slots).
    """
    order = canonical_row_order(tape.grouped)
    return masked_scan_backward(tape.scan, d_outputs, row_order=order)


# ---------------------------------------------------------------------------
# checkpoint IO: magic, u32 n_features, u32 channels, float64 LE blocks


def save_checkpoint(path: str | Path, params: LstmParams) -> None:
    p = params.astype(np.float64)
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(_CKPT_MAGIC, p.n_features, p.channels))
        for arr in (p.wx, p.wh, p.b):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> LstmParams:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise EventFormatError(f"{path}: truncated checkpoint header")
    magic, n_feat, channels = _CKPT_HEADER.unpack_from(raw)
    if magic != _CKPT_MAGIC:
        raise EventFormatError(f"{path}: bad checkpoint magic {magic!r}")
    sizes = (n_feat * 4 * channels, channels * 4 * channels, 4 * channels)
    expected = _CKPT_HEADER.size + 8 * sum(sizes)
    if len(raw) != expected:
        raise EventFormatError(
            f"{path}: expected {expected} bytes for {n_feat} features x {channels} channels, "
            f"got {len(raw)}"
        )
    offset = _CKPT_HEADER.size
    blocks = []
    for size in sizes:
        blocks.append(np.frombuffer(raw, dtype="<f8", count=size, offset=offset).copy())
        offset += 8 * size
    wx = blocks[0].reshape(n_feat, 4 * channels)
    wh = blocks[1].reshape(channels, 4 * channels)
    return LstmParams(wx, wh, blocks[2])
