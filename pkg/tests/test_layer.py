"""Surface layer tests: shapes, zero-fill, squeeze-excitation, IO."""

import numpy as np
import pytest

from evsurface import (
    ConfigError,
    Event,
    EventFormatError,
    EventStream,
    FeatureConfig,
    LayerConfig,
    apply_layer,
    init_lstm_params,
    init_se_params,
    layer_backward,
    layer_forward,
    prepare_layer_inputs,
    read_surface,
    se_forward,
    write_surface,
    write_surface_pgm,
)
from evsurface.events import EventBatch
from evsurface.layer import SeParams

POL = FeatureConfig(time_features=(), with_polarity=True)
POL_TS = FeatureConfig(time_features=("ts_absolute",), with_polarity=True)


def stream_of(rows, width=4, height=4):
    return EventStream.from_events(width, height, [Event(*r) for r in rows])


def random_batch(seed, n=2, width=5, height=4, n_events=12):
    rng = np.random.default_rng(seed)
    streams = []
    for _ in range(n):
        ts = np.sort(rng.uniform(0, 1000, n_events))
        rows = [
            (int(rng.integers(width)), int(rng.integers(height)), float(t), int(rng.choice((-1, 1))))
            for t in ts
        ]
        streams.append(stream_of(rows, width, height))
    return EventBatch(tuple(streams))


def fitted_params(config, seed=0):
    return init_lstm_params(config.features.width, config.channels, seed=seed)


class TestConfig:
    def test_surface_channels(self):
        config = LayerConfig(channels=3, n_bins=4, features=POL)
        assert config.surface_channels == 12

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            LayerConfig(channels=2, features=POL, kernel=(2, 3))

    def test_coords_demand_matching_feature_flag(self):
        config = LayerConfig(channels=2, features=POL, kernel=(3, 3))
        params = fitted_params(config)
        # a 3x3 kernel without coordinate columns is legal; just exercise it
        surface, _ = layer_forward(random_batch(0), config, params)
        assert surface.shape[1:3] == (4, 5)


class TestForward:
    def test_surface_shape_and_dtype(self):
        config = LayerConfig(channels=3, n_bins=2, features=POL_TS)
        surface, _ = layer_forward(random_batch(1), config, fitted_params(config))
        assert surface.shape == (2, 4, 5, 6)
        assert surface.dtype == np.float64

    def test_inactive_cells_are_exact_zero(self):
        s = stream_of([(1, 2, 0.0, 1), (1, 2, 5.0, -1)])
        config = LayerConfig(channels=4, features=POL)
        surface, _ = layer_forward(EventBatch((s,)), config, fitted_params(config))
        active = np.zeros((4, 4), dtype=bool)
        active[2, 1] = True
        assert np.all(surface[0, ~active] == 0.0)
        assert np.any(surface[0, 2, 1] != 0.0)

    def test_prepare_then_apply_equals_layer_forward(self):
        batch = random_batch(2)
        config = LayerConfig(channels=2, n_bins=3, features=POL_TS)
        params = fitted_params(config)
        via_split = apply_layer(prepare_layer_inputs(batch, config), config, params)[0]
        direct = layer_forward(batch, config, params)[0]
        assert np.array_equal(via_split, direct)

    def test_float32_config_casts_everything(self):
        config = LayerConfig(channels=2, features=POL, dtype=np.float32)
        surface, _ = layer_forward(random_batch(3), config, fitted_params(config))
        assert surface.dtype == np.float32

    def test_param_shape_mismatch_rejected(self):
        config = LayerConfig(channels=2, features=POL_TS)
        bad = init_lstm_params(5, 2, seed=0)
        with pytest.raises(ConfigError):
            layer_forward(random_batch(4), config, bad)

    def test_empty_batch_sample_yields_zero_plane(self):
        batch = EventBatch((EventStream.empty(4, 4), stream_of([(0, 0, 1.0, 1)])))
        config = LayerConfig(channels=2, features=POL)
        surface, _ = layer_forward(batch, config, fitted_params(config))
        assert np.all(surface[0] == 0.0)
        assert np.any(surface[1] != 0.0)


class TestSqueezeExcitation:
    def test_zero_params_halve_the_surface(self):
        # sigmoid(0) = 0.5 exactly, so an all-zero SE block scales by one half
        config = LayerConfig(channels=2, n_bins=2, features=POL, se_enabled=True)
        d = config.surface_channels
        se = SeParams(np.zeros((d, d)), np.zeros(d), np.zeros((d, d)), np.zeros(d))
        batch = random_batch(5)
        params = fitted_params(config)
        off = LayerConfig(channels=2, n_bins=2, features=POL)
        plain, _ = layer_forward(batch, off, params)
        scaled, _ = layer_forward(batch, config, params, se)
        assert np.array_equal(scaled, plain * 0.5)

    def test_inactive_cells_stay_positive_zero(self):
        s = stream_of([(1, 1, 0.0, 1)])
        config = LayerConfig(channels=2, features=POL, se_enabled=True)
        se = init_se_params(config.surface_channels, seed=3)
        surface, _ = layer_forward(EventBatch((s,)), config, fitted_params(config), se)
        inactive = surface[0, 0, 0]
        assert np.all(inactive == 0.0)
        assert not np.any(np.signbit(inactive))

    def test_forward_scales_per_channel(self):
        rng = np.random.default_rng(6)
        surface = rng.standard_normal((2, 3, 3, 4))
        se = init_se_params(4, seed=0)
        out, tape = se_forward(surface, se)
        np.testing.assert_allclose(out, surface * tape.scale[:, None, None, :], rtol=0, atol=0)
        assert np.all(tape.scale > 0.0) and np.all(tape.scale < 1.0)

    def test_missing_params_rejected(self):
        config = LayerConfig(channels=2, features=POL, se_enabled=True)
        with pytest.raises(ConfigError):
            layer_forward(random_batch(7), config, fitted_params(config))

    def test_unexpected_params_rejected(self):
        config = LayerConfig(channels=2, features=POL)
        se = init_se_params(2, seed=0)
        with pytest.raises(ConfigError):
            layer_forward(random_batch(8), config, fitted_params(config), se)


class TestBackward:
    def test_grad_shapes_mirror_params(self):
        config = LayerConfig(channels=2, n_bins=2, features=POL_TS, se_enabled=True)
        params = fitted_params(config)
        se = init_se_params(config.surface_channels, seed=1)
        batch = random_batch(9)
        surface, tape = layer_forward(batch, config, params, se)
        grads = layer_backward(tape, np.ones_like(surface))
        assert grads.lstm.wx.shape == params.wx.shape
        assert grads.lstm.wh.shape == params.wh.shape
        assert grads.se.w1.shape == se.w1.shape
        assert len(grads.feature_blocks) == config.n_bins
        for g, grouped in zip(grads.feature_blocks, tape.inputs.grouped_bins):
            assert g.shape == grouped.data.shape

    def test_inactive_cell_gradients_ignored_without_se(self):
        # without SE, only active cells feed the scan; junk gradient elsewhere is inert
        config = LayerConfig(channels=2, features=POL)
        params = fitted_params(config)
        s = stream_of([(1, 1, 0.0, 1), (2, 3, 4.0, -1)])
        surface, tape = layer_forward(EventBatch((s,)), config, params)
        d_clean = np.zeros_like(surface)
        d_clean[0, 1, 1] = 1.0
        d_clean[0, 3, 2] = -2.0
        rng = np.random.default_rng(10)
        d_noisy = d_clean + rng.standard_normal(surface.shape) * (surface == 0.0)
        g_clean = layer_backward(tape, d_clean)
        g_noisy = layer_backward(tape, d_noisy)
        assert np.array_equal(g_clean.lstm.wx, g_noisy.lstm.wx)
        assert np.array_equal(g_clean.feature_blocks[0], g_noisy.feature_blocks[0])


class TestSurfaceIO:
    def test_round_trip_float32_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        surface = rng.standard_normal((3, 5, 2)).astype(np.float32)
        path = tmp_path / "s.srf"
        write_surface(path, surface)
        back = read_surface(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, surface)

    def test_float64_surface_rounds_to_float32(self, tmp_path):
        surface = np.full((2, 2, 1), 1.0 / 3.0)
        path = tmp_path / "s.srf"
        write_surface(path, surface)
        assert np.array_equal(read_surface(path), surface.astype(np.float32))

    def test_rejects_wrong_rank(self, tmp_path):
        with pytest.raises(ConfigError):
            write_surface(tmp_path / "s.srf", np.zeros((2, 2)))

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "s.srf"
        write_surface(path, np.zeros((2, 2, 2), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(EventFormatError):
            read_surface(path)

    def test_pgm_header_and_scaling(self, tmp_path):
        surface = np.zeros((2, 3, 2))
        surface[..., 0] = [[0.0, 0.5, 1.0], [1.0, 0.25, 0.75]]
        path = tmp_path / "s.pgm"
        write_surface_pgm(path, surface)
        data = path.read_bytes()
        assert data.startswith(b"P5\n3 2\n255\n")
        pixels = np.frombuffer(data[len(b"P5\n3 2\n255\n") :], dtype=np.uint8)
        assert pixels.tolist() == [0, 128, 255, 255, 64, 191]

    def test_pgm_constant_channel_is_black(self, tmp_path):
        path = tmp_path / "s.pgm"
        write_surface_pgm(path, np.full((2, 2, 1), 7.0))
        assert path.read_bytes().endswith(b"\x00" * 4)
