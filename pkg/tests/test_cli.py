"""Command-line interface tests: commands, exit codes, output files."""

import struct
import subprocess
import sys

import numpy as np
import pytest

from evsurface import (
    Event,
    EventStream,
    FeatureConfig,
    LayerConfig,
    init_lstm_params,
    layer_forward,
    load_checkpoint,
    read_bench_csv,
    read_surface,
    run_cli,
    save_checkpoint,
    write_event_file,
)
from evsurface.events import EventBatch


@pytest.fixture
def event_file(tmp_path):
    rng = np.random.default_rng(0)
    ts = np.sort(rng.integers(0, 10_000, size=40)).astype(float)
    events = [
        Event(int(rng.integers(8)), int(rng.integers(6)), float(t), int(rng.choice((-1, 1))))
        for t in ts
    ]
    stream = EventStream.from_events(8, 6, events)
    path = tmp_path / "sample.evt"
    write_event_file(path, stream, fmt="binary")
    return path, stream


class TestValidate:
    def test_clean_file_exits_zero(self, event_file, capsys):
        path, _ = event_file
        assert run_cli(["validate", str(path)]) == 0
        assert capsys.readouterr().out.startswith("0 violations")

    def test_violations_exit_one_and_are_listed(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        # the loader sorts rows, so only range/polarity violations survive
        path.write_text("t,x,y,p\n5,9,0,1\n4,0,0,0\n")
        assert run_cli(["validate", str(path), "--width", "4", "--height", "4"]) == 1
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "2 violations"
        assert "x_range" in out and "polarity" in out

    def test_missing_geometry_is_usage_error(self, tmp_path, capsys):
        path = tmp_path / "x.csv"
        path.write_text("t,x,y,p\n1,0,0,1\n")
        assert run_cli(["validate", str(path)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_malformed_binary_is_usage_error(self, tmp_path, capsys):
        path = tmp_path / "x.evt"
        path.write_bytes(b"EVT1" + struct.pack("<HHQ", 4, 4, 9))
        assert run_cli(["validate", str(path)]) == 2


class TestUsage:
    def test_no_arguments(self):
        assert run_cli([]) == 2

    def test_unknown_command(self):
        assert run_cli(["frobnicate"]) == 2

    def test_bad_flag_value(self, event_file):
        path, _ = event_file
        assert run_cli(["validate", str(path), "--format", "exotic"]) == 2

    def test_console_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "evsurface.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "reconstruct" in proc.stdout

    def test_bad_thread_env_var(self, event_file, monkeypatch, capsys):
        path, _ = event_file
        monkeypatch.setenv("EVSURFACE_THREADS", "many")
        assert run_cli(["validate", str(path)]) == 2


class TestReconstruct:
    def test_surface_matches_library_call(self, event_file, tmp_path, capsys):
        path, stream = event_file
        out = tmp_path / "out.srf"
        code = run_cli(
            ["reconstruct", str(path), "--channels", "4", "--bins", "2", "--seed", "7", "-o", str(out)]
        )
        assert code == 0
        config = LayerConfig(
            channels=4,
            n_bins=2,
            features=FeatureConfig(("ts_absolute",), with_polarity=True),
        )
        params = init_lstm_params(config.features.width, 4, seed=7)
        expected, _ = layer_forward(EventBatch((stream,)), config, params)
        assert np.array_equal(read_surface(out), expected[0].astype(np.float32))

    def test_byte_deterministic(self, event_file, tmp_path):
        path, _ = event_file
        a, b = tmp_path / "a.srf", tmp_path / "b.srf"
        for out in (a, b):
            assert run_cli(["reconstruct", str(path), "--seed", "3", "-o", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_checkpoint_params_used(self, event_file, tmp_path):
        path, stream = event_file
        features = FeatureConfig(("ts_absolute",), with_polarity=True)
        params = init_lstm_params(features.width, 8, seed=42)
        ckpt = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, params)
        out = tmp_path / "out.srf"
        assert run_cli(["reconstruct", str(path), "--params", str(ckpt), "-o", str(out)]) == 0
        config = LayerConfig(channels=8, features=features)
        expected, _ = layer_forward(EventBatch((stream,)), config, params)
        assert np.array_equal(read_surface(out), expected[0].astype(np.float32))

    def test_pgm_preview(self, event_file, tmp_path):
        path, _ = event_file
        out = tmp_path / "out.pgm"
        assert run_cli(["reconstruct", str(path), "-o", str(out)]) == 0
        assert out.read_bytes().startswith(b"P5\n8 6\n255\n")

    def test_checkpoint_channel_mismatch_is_usage_error(self, event_file, tmp_path, capsys):
        path, _ = event_file
        params = init_lstm_params(2, 3, seed=0)  # 3 channels, CLI default is 8
        ckpt = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, params)
        code = run_cli(["reconstruct", str(path), "--params", str(ckpt), "-o", str(tmp_path / "o.srf")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_invalid_stream_fails_with_one(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("t,x,y,p\n1,9,0,1\n")
        code = run_cli(
            ["reconstruct", str(path), "--width", "4", "--height", "4", "-o", str(tmp_path / "o.srf")]
        )
        assert code == 1
        assert "validation error:" in capsys.readouterr().err


class TestChecks:
    def test_grad_check_passes(self, capsys):
        assert run_cli(["grad-check", "--instances", "3", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "max relative error" in out

    def test_equiv_check_passes(self, capsys):
        assert run_cli(["equiv-check", "--instances", "6", "--seed", "1"]) == 0
        assert "PASS" in capsys.readouterr().out


class TestTrainToy:
    def test_short_run_writes_checkpoint(self, tmp_path, capsys):
        ckpt = tmp_path / "toy.ckpt"
        code = run_cli(
            ["train-toy", "--epochs", "1", "--seed", "0", "--data-seed", "0", "-o", str(ckpt)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "epoch" in out and "test acc" in out
        params = load_checkpoint(ckpt)
        assert params.channels == 3  # toy model width


class TestBench:
    def test_tiny_sweep_writes_csv_and_svg(self, tmp_path, capsys):
        csv_path = tmp_path / "bench.csv"
        svg_path = tmp_path / "bench.svg"
        code = run_cli(
            [
                "bench",
                "--densities", "0.5",
                "--batches", "1,2",
                "--channels", "2",
                "--events-per-pixel", "1",
                "--height", "8",
                "--width", "8",
                "--repeats", "1",
                "--passes", "forward",
                "-o", str(csv_path),
                "--svg", str(svg_path),
            ]
        )
        assert code == 0
        records = read_bench_csv(csv_path)
        assert len(records) == 4  # 2 batches x 2 paths x 1 pass
        assert svg_path.exists()

    def test_unknown_pass_is_usage_error(self, tmp_path):
        code = run_cli(["bench", "--passes", "sideways", "-o", str(tmp_path / "b.csv")])
        assert code == 2
