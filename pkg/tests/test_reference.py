"""Independent reference implementations used to cross-check the fast path."""

import numpy as np
import pytest

from evsurface import (
    ConfigError,
    Event,
    EventStream,
    FeatureConfig,
    LayerConfig,
    LstmState,
    convlstm_1x1_forward,
    densify_events,
    encode_features,
    group_by_pixel,
    init_lstm_params,
    layer_forward,
    lstm_cell_step,
    naive_pixel_forward,
    run_equivalence_check,
    run_gradient_check,
    zero_state,
)
from evsurface.events import EventBatch

POL = FeatureConfig(time_features=(), with_polarity=True)


def stream_of(rows, width=4, height=4):
    return EventStream.from_events(width, height, [Event(*r) for r in rows])


def encode_batch(batch, config):
    return [encode_features(s, config, sample_span=s.time_span()) for s in batch]


class TestDensify:
    def test_counts_and_slots(self):
        s = stream_of([(1, 0, 0.0, 1), (1, 0, 2.0, -1), (3, 2, 1.0, 1)])
        batch = EventBatch((s,))
        volume = densify_events(batch, encode_batch(batch, POL))
        assert volume.data.shape == (1, 2, 4, 4, 1)
        assert volume.valid_len[0, 0, 1] == 2
        assert volume.valid_len[0, 2, 3] == 1
        assert volume.data[0, :, 0, 1, 0].tolist() == [1.0, -1.0]
        assert volume.data[0, 1, 2, 3, 0] == 0.0  # padding beyond the one event

    def test_footprint_dominates_grouped_storage(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            w, h = int(rng.integers(2, 7)), int(rng.integers(2, 7))
            n = int(rng.integers(1, 20))
            rows = sorted(
                [(int(rng.integers(w)), int(rng.integers(h)), float(rng.uniform(0, 9)), 1) for _ in range(n)],
                key=lambda r: r[2],
            )
            batch = EventBatch((stream_of(rows, w, h),))
            volume = densify_events(batch, encode_batch(batch, POL))
            grouped = group_by_pixel(batch, encode_batch(batch, POL))
            assert volume.element_count >= grouped.data.size

    def test_empty_batch(self):
        batch = EventBatch((EventStream.empty(3, 3),))
        volume = densify_events(batch, encode_batch(batch, POL))
        assert volume.data.shape[1] == 0 or volume.data.size == 0


class TestDenseRecurrence:
    def test_single_pixel_matches_cell_chain(self):
        s = stream_of([(2, 1, 0.0, 1), (2, 1, 1.0, -1), (2, 1, 2.0, 1)])
        batch = EventBatch((s,))
        volume = densify_events(batch, encode_batch(batch, POL))
        params = init_lstm_params(1, 3, seed=4)
        surface = convlstm_1x1_forward(volume, params)

        state = zero_state(params, 1)
        for t in range(3):
            x = volume.data[0, t, 1, 2][None, :]
            state = LstmState(*lstm_cell_step(params, x, state))
        np.testing.assert_array_equal(surface[0, 1, 2], state.h[0])

    def test_silent_pixels_are_exact_zero(self):
        s = stream_of([(0, 0, 0.0, 1)])
        batch = EventBatch((s,))
        volume = densify_events(batch, encode_batch(batch, POL))
        surface = convlstm_1x1_forward(volume, init_lstm_params(1, 2, seed=0))
        assert np.all(surface[0, 1:, :] == 0.0)
        assert np.all(surface[0, 0, 1:] == 0.0)


class TestScalarReference:
    def test_rejects_unsupported_configs(self):
        s = stream_of([(0, 0, 0.0, 1)])
        config = LayerConfig(channels=2, features=POL, kernel=(3, 3))
        params = init_lstm_params(config.features.width, 2, seed=0)
        with pytest.raises(ConfigError):
            naive_pixel_forward(s, config, params)

    def test_empty_stream_gives_zero_surface(self):
        config = LayerConfig(channels=2, features=POL)
        params = init_lstm_params(1, 2, seed=0)
        surface = naive_pixel_forward(EventStream.empty(3, 3), config, params)
        assert surface.shape == (1, 3, 3, 2)
        assert np.all(surface == 0.0)

    def test_agrees_with_vectorized_layer(self):
        rng = np.random.default_rng(5)
        rows = sorted(
            [(int(rng.integers(4)), int(rng.integers(4)), float(rng.uniform(0, 500)), int(rng.choice((-1, 1)))) for _ in range(15)],
            key=lambda r: r[2],
        )
        s = stream_of(rows)
        config = LayerConfig(
            channels=3,
            n_bins=2,
            features=FeatureConfig(
                time_features=("ts_absolute", "ts_local", "ts_relative", "delay_relative"),
                with_polarity=True,
            ),
        )
        params = init_lstm_params(config.features.width, 3, seed=6)
        fast, _ = layer_forward(EventBatch((s,)), config, params)
        slow = naive_pixel_forward(s, config, params)
        np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-13)


class TestCheckRunners:
    def test_equivalence_smoke(self):
        report = run_equivalence_check(seed=123, n_instances=8)
        assert report.n_instances == 8
        assert report.ok()

    def test_gradient_smoke(self):
        report = run_gradient_check(seed=123, n_instances=3)
        assert report.n_scalars > 0
        assert report.ok()
