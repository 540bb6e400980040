"""Benchmark harness tests: generator, dense baseline, records, plotting."""

import numpy as np
import pytest

from evsurface import (
    ConfigError,
    FeatureConfig,
    LayerConfig,
    gen_density_sweep,
    init_lstm_params,
    layer_forward,
    read_bench_csv,
    run_benchmark,
    write_bench_csv,
    write_bench_svg,
)
from evsurface.bench import CSV_COLUMNS, BenchRecord, densify_rows
from evsurface.events import EventBatch
from evsurface.features import encode_features
from evsurface.lstm import masked_scan_forward

POL_TS = FeatureConfig(time_features=("ts_absolute",), with_polarity=True)


class TestDensitySweep:
    def test_active_pixel_count_is_floor_of_density(self):
        s = gen_density_sweep(224, 224, 0.1, events_per_pixel=1, seed=0)
        active = {(int(x), int(y)) for x, y in zip(s.x, s.y)}
        assert len(active) == 5017  # floor(0.1 * 224 * 224)
        assert len(s) == 5017

    def test_events_per_pixel_multiplies_count(self):
        s = gen_density_sweep(16, 16, 0.5, events_per_pixel=3, seed=1)
        counts = {}
        for x, y in zip(s.x, s.y):
            counts[(int(x), int(y))] = counts.get((int(x), int(y)), 0) + 1
        assert set(counts.values()) == {3}
        assert len(counts) == 128

    def test_full_density_covers_grid(self):
        s = gen_density_sweep(8, 8, 1.0, events_per_pixel=1, seed=2)
        assert len({(int(x), int(y)) for x, y in zip(s.x, s.y)}) == 64

    def test_sorted_and_deterministic(self):
        a = gen_density_sweep(16, 16, 0.3, events_per_pixel=2, seed=5)
        b = gen_density_sweep(16, 16, 0.3, events_per_pixel=2, seed=5)
        assert np.all(np.diff(a.t) >= 0)
        assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x)

    def test_bounds_checked(self):
        with pytest.raises(ConfigError):
            gen_density_sweep(8, 8, 0.0, events_per_pixel=1, seed=0)
        with pytest.raises(ConfigError):
            gen_density_sweep(8, 8, 1.5, events_per_pixel=1, seed=0)
        with pytest.raises(ConfigError):
            gen_density_sweep(8, 8, 0.5, events_per_pixel=0, seed=0)


class TestDenseRows:
    def test_agrees_with_grouped_layer(self):
        # both paths run the same scan kernel; outputs must match exactly
        streams = tuple(
            gen_density_sweep(8, 6, 0.4, events_per_pixel=3, seed=i) for i in range(2)
        )
        batch = EventBatch(streams)
        config = LayerConfig(channels=4, features=POL_TS)
        params = init_lstm_params(POL_TS.width, 4, seed=9)
        surface, _ = layer_forward(batch, config, params)

        feats = [encode_features(s, POL_TS, sample_span=s.time_span()) for s in batch]
        block, lengths = densify_rows(batch, feats)
        h_last, _ = masked_scan_forward(block, lengths, params)
        dense_surface = h_last.reshape(2, 6, 8, 4)
        np.testing.assert_allclose(surface, dense_surface, rtol=0, atol=1e-12)

    def test_every_pixel_gets_a_row(self):
        s = gen_density_sweep(4, 4, 0.25, events_per_pixel=2, seed=0)
        block, lengths = densify_rows(EventBatch((s,)), [np.ones((len(s), 1))])
        assert block.shape[0] == 16
        assert int((lengths > 0).sum()) == 4
        assert int(lengths.sum()) == len(s)


class TestRecordsAndFiles:
    def run_tiny(self):
        return run_benchmark(
            densities=(0.5,),
            batches=(1, 2),
            channels=(2,),
            events_per_pixel=(2,),
            height=8,
            width=8,
            repeats=2,
            warmup=0,
            seed=0,
        )

    def test_sweep_produces_grid_of_records(self):
        records = self.run_tiny()
        # 1 density x 2 batches x 2 paths x 2 passes
        assert len(records) == 8
        assert {r.path for r in records} == {"grouped", "dense"}
        assert all(r.time_ms > 0 for r in records)
        assert all(r.peak_elements > 0 for r in records)

    def test_memory_accounting_prefers_grouped_at_low_density(self):
        records = run_benchmark(
            densities=(0.1,),
            batches=(2,),
            channels=(4,),
            events_per_pixel=(2,),
            height=16,
            width=16,
            repeats=1,
            warmup=0,
            seed=0,
        )
        by_path = {(r.path, r.pass_name): r.peak_elements for r in records}
        assert by_path[("grouped", "forward")] < by_path[("dense", "forward")]
        assert by_path[("grouped", "backward")] < by_path[("dense", "backward")]

    def test_csv_round_trip(self, tmp_path):
        records = self.run_tiny()
        path = tmp_path / "bench.csv"
        write_bench_csv(records, path)
        header = path.read_text().splitlines()[0]
        assert header == "path,density,batch,channels,events_per_pixel,pass,time_ms,peak_elements"
        back = read_bench_csv(path)
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert (a.path, a.batch, a.pass_name, a.peak_elements) == (
                b.path,
                b.batch,
                b.pass_name,
                b.peak_elements,
            )

    def test_skipped_cells_round_trip_as_empty_fields(self, tmp_path):
        records = [
            BenchRecord("dense", 1.0, 64, 8, 4, "forward", None, None),
            BenchRecord("grouped", 1.0, 64, 8, 4, "forward", 1.5, 1000),
        ]
        path = tmp_path / "bench.csv"
        write_bench_csv(records, path)
        assert ",,," not in path.read_text()  # exactly the two value fields empty
        back = read_bench_csv(path)
        assert back[0].skipped and back[0].time_ms is None
        assert not back[1].skipped

    def test_read_rejects_foreign_csv(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ConfigError):
            read_bench_csv(path)

    def test_svg_written(self, tmp_path):
        records = self.run_tiny()
        path = tmp_path / "bench.svg"
        write_bench_svg(records, path)
        content = path.read_text()
        assert content.lstrip().startswith("<?xml")
        assert "svg" in content

    def test_column_tuple_is_pinned(self):
        assert CSV_COLUMNS == (
            "path",
            "density",
            "batch",
            "channels",
            "events_per_pixel",
            "pass",
            "time_ms",
            "peak_elements",
        )
