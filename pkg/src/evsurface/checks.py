"""Self-contained correctness checks, reachable from both the CLI and tests.

``run_equivalence_check`` compares the vectorized layer against the two
dense references on random desk-scale instances.  ``run_gradient_check``
compares every analytic gradient the layer produces against central finite
differences of a scalar probe loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .events import EventBatch, EventStream
from .features import TIME_FEATURES, FeatureConfig, encode_features
from .layer import (
    LayerConfig,
    apply_layer,
    init_se_params,
    layer_backward,
    layer_forward,
    prepare_layer_inputs,
)
from .lstm import init_lstm_params
from .reference import convlstm_1x1_forward, densify_events, naive_pixel_forward

# tolerances the command-line checks enforce
EQUIV_TOL_DENSE = 1e-9
EQUIV_TOL_SCALAR = 1e-12
GRAD_TOL = 1e-5
FD_STEP = 1e-6
# relative-error denominators are floored: near-zero gradients are dominated
# by finite-difference roundoff, while a genuinely wrong gradient shows up
# orders of magnitude above the tolerance anyway
FD_DENOM_FLOOR = 1e-3


def gen_random_stream(
    rng: np.random.Generator,
    width: int,
    height: int,
    n_events: int,
    t_span: float = 1.0e4,
    integer_times: bool = False,
) -> EventStream:
    """A valid random stream: sorted times, uniform pixels, +-1 polarities."""
    if integer_times:
        t = np.sort(rng.integers(0, int(t_span), size=n_events)).astype(np.float64)
    else:
        t = np.sort(rng.uniform(0.0, t_span, size=n_events))
    x = rng.integers(0, width, size=n_events)
    y = rng.integers(0, height, size=n_events)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=n_events)
    return EventStream(width, height, x, y, t, p)


def _random_feature_config(rng: np.random.Generator, with_coords: bool = False) -> FeatureConfig:
    n_time = int(rng.integers(0, len(TIME_FEATURES) + 1))
    picks = tuple(rng.choice(TIME_FEATURES, size=n_time, replace=False)) if n_time else ()
    polarity = bool(rng.random() < 0.8) or (n_time == 0 and not with_coords)
    return FeatureConfig(picks, with_polarity=polarity, with_coords=with_coords)


@dataclass
class EquivalenceReport:
    n_instances: int
    max_diff_dense: float
    max_diff_scalar: float

    def ok(self, tol_dense: float = EQUIV_TOL_DENSE, tol_scalar: float = EQUIV_TOL_SCALAR) -> bool:
        return self.max_diff_dense <= tol_dense and self.max_diff_scalar <= tol_scalar


def run_equivalence_check(seed: int = 0, n_instances: int = 100) -> EquivalenceReport:
    """Random small instances: layer vs dense scan, layer vs scalar rerun.

    The dense comparison runs single-bin (the dense reference has no bin
    notion); the scalar one also exercises multi-bin configs.
    """
    rng = np.random.default_rng(seed)
    worst_dense = 0.0
    worst_scalar = 0.0
    for _ in range(n_instances):
        height = int(rng.integers(1, 9))
        width = int(rng.integers(1, 9))
        n_samples = int(rng.integers(1, 5))
        channels = int(rng.integers(1, 9))
        n_bins = int(rng.integers(1, 3))
        total_budget = int(rng.integers(1, 201))
        streams = []
        for _ in range(n_samples):
            n_ev = int(rng.integers(0, total_budget // n_samples + 1))
            streams.append(
                gen_random_stream(
                    rng, width, height, n_ev, integer_times=bool(rng.random() < 0.3)
                )
            )
        batch = EventBatch(tuple(streams))
        features = _random_feature_config(rng)
        params = init_lstm_params(features.width, channels, seed=int(rng.integers(2**31)))

        config_b1 = LayerConfig(channels=channels, n_bins=1, features=features)
        surface_b1, _ = layer_forward(batch, config_b1, params)
        encoded = [encode_features(s, features) for s in batch]
        dense = convlstm_1x1_forward(densify_events(batch, encoded), params)
        worst_dense = max(worst_dense, float(np.abs(surface_b1 - dense).max()))

        config = replace(config_b1, n_bins=n_bins) if n_bins > 1 else config_b1
        surface = surface_b1 if n_bins == 1 else layer_forward(batch, config, params)[0]
        for n, stream in enumerate(batch):
            scalar = naive_pixel_forward(stream, config, params)
            worst_scalar = max(worst_scalar, float(np.abs(surface[n : n + 1] - scalar).max()))
    return EquivalenceReport(n_instances, worst_dense, worst_scalar)


@dataclass
class GradCheckReport:
    n_instances: int
    n_scalars: int
    max_rel_err: float
    worst_block: str = ""

    def ok(self, tol: float = GRAD_TOL) -> bool:
        return self.max_rel_err <= tol


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FD_DENOM_FLOOR)


def run_gradient_check(
    seed: int = 0, n_instances: int = 20, step: float = FD_STEP
) -> GradCheckReport:
    """Central finite differences against every analytic gradient.

    Each instance draws a small random layer (bins, kernel, squeeze-
    excitation and feature set all vary), a random probe direction, and
    checks d(probe . surface)/d(theta) for every LSTM parameter, every
    squeeze-excitation parameter, and every valid feature slot.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_block = ""
    n_scalars = 0
    for _ in range(n_instances):
        height = int(rng.integers(2, 6))
        width = int(rng.integers(2, 6))
        n_samples = int(rng.integers(1, 3))
        channels = int(rng.integers(2, 4))
        n_bins = int(rng.choice([1, 2]))
        kernel = int(rng.choice([1, 1, 3]))
        se_on = bool(rng.random() < 0.5)
        features = _random_feature_config(rng, with_coords=kernel > 1)
        config = LayerConfig(
            channels=channels,
            n_bins=n_bins,
            features=features,
            kernel=(kernel, kernel),
            se_enabled=se_on,
        )
        max_events = 12 if kernel > 1 else 20
        streams = [
            gen_random_stream(rng, width, height, int(rng.integers(1, max_events + 1)))
            for _ in range(n_samples)
        ]
        inputs = prepare_layer_inputs(EventBatch(tuple(streams)), config)
        lstm_params = init_lstm_params(features.width, channels, seed=int(rng.integers(2**31)))
        se_params = (
            init_se_params(config.surface_channels, seed=int(rng.integers(2**31)))
            if se_on
            else None
        )

        surface, tape = apply_layer(inputs, config, lstm_params, se_params)
        probe = rng.standard_normal(surface.shape) / surface.size
        grads = layer_backward(tape, probe)

        def loss() -> float:
            s, _ = apply_layer(inputs, config, lstm_params, se_params)
            return float(np.sum(probe * s))

        def fd_on(array: np.ndarray, index: tuple) -> float:
            orig = array[index]
            array[index] = orig + step
            hi = loss()
            array[index] = orig - step
            lo = loss()
            array[index] = orig
            return (hi - lo) / (2.0 * step)

        blocks: list[tuple[str, np.ndarray, np.ndarray]] = [
            ("lstm.wx", lstm_params.wx, grads.lstm.wx),
            ("lstm.wh", lstm_params.wh, grads.lstm.wh),
            ("lstm.b", lstm_params.b, grads.lstm.b),
        ]
        if se_on:
            blocks += [
                ("se.w1", se_params.w1, grads.se.w1),
                ("se.b1", se_params.b1, grads.se.b1),
                ("se.w2", se_params.w2, grads.se.w2),
                ("se.b2", se_params.b2, grads.se.b2),
            ]
        for name, values, analytic in blocks:
            values = np.asarray(values)
            for index in np.ndindex(values.shape):
                err = _rel_err(float(analytic[index]), fd_on(values, index))
                n_scalars += 1
                if err > worst:
                    worst, worst_block = err, name
        for b_idx, grouped in enumerate(inputs.grouped_bins):
            analytic_block = grads.feature_blocks[b_idx]
            for r in range(grouped.n_rows):
                for t in range(int(grouped.row_len[r])):
                    for f in range(grouped.n_features):
                        err = _rel_err(
                            float(analytic_block[r, t, f]), fd_on(grouped.data, (r, t, f))
                        )
                        n_scalars += 1
                        if err > worst:
                            worst, worst_block = err, f"features.bin{b_idx}"
    return GradCheckReport(n_instances, n_scalars, worst, worst_block)
