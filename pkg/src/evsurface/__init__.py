"""evsurface: event-camera streams to dense learnable surfaces.

Sparse event streams are grouped into padded per-pixel rows, scanned by one
spatially shared LSTM, and scattered back onto the pixel grid as a dense
multi-channel surface, optionally over several time bins and with receptive
fields larger than one pixel.  Forward and backward passes are hand-written
and exact; dense reference implementations, a finite-difference gradient
checker, a toy end-to-end training task and a sparse-vs-dense benchmark
harness ship alongside.
"""

from .errors import (
    ConfigError,
    EventFormatError,
    StreamValidationError,
    TrainingDivergedError,
)
from .events import (
    Event,
    EventBatch,
    EventStream,
    ValidationReport,
    parse_event_file,
    slice_time_window,
    validate_stream,
    write_event_file,
)
from .features import FeatureConfig, TIME_FEATURES, encode_features, parse_feature_spec, receptive_coords
from .grouping import (
    BinnedBatch,
    GroupedEvents,
    UnfoldedBatch,
    gather_surface_rows,
    group_by_pixel,
    group_by_time,
    scatter_last_outputs,
    unfold_receptive_fields,
)
from .layer import (
    LayerConfig,
    LayerGrads,
    SeParams,
    apply_layer,
    init_se_params,
    layer_backward,
    layer_forward,
    prepare_layer_inputs,
    read_surface,
    se_forward,
    write_surface,
    write_surface_pgm,
)
from .lstm import (
    LstmGrads,
    LstmParams,
    LstmState,
    backward_grouped,
    forward_grouped,
    init_lstm_params,
    load_checkpoint,
    lstm_cell_step,
    masked_scan_backward,
    masked_scan_forward,
    save_checkpoint,
    zero_state,
)
from .optim import AdamState, adam_step, init_adam
from .reference import DenseEventVolume, convlstm_1x1_forward, densify_events, naive_pixel_forward
from .checks import (
    EquivalenceReport,
    GradCheckReport,
    run_equivalence_check,
    run_gradient_check,
)
from .toytask import (
    EpochStats,
    ToyModel,
    ToyTaskSpec,
    gen_moving_bar,
    make_toy_dataset,
    train_toy_classifier,
)
from .cli import main, run_cli
from .bench import (
    BenchRecord,
    gen_density_sweep,
    read_bench_csv,
    run_benchmark,
    write_bench_csv,
    write_bench_svg,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BenchRecord",
    "BinnedBatch",
    "ConfigError",
    "DenseEventVolume",
    "EpochStats",
    "EquivalenceReport",
    "Event",
    "EventBatch",
    "EventFormatError",
    "EventStream",
    "FeatureConfig",
    "GradCheckReport",
    "GroupedEvents",
    "LayerConfig",
    "LayerGrads",
    "LstmGrads",
    "LstmParams",
    "LstmState",
    "SeParams",
    "StreamValidationError",
    "TIME_FEATURES",
    "ToyModel",
    "ToyTaskSpec",
    "TrainingDivergedError",
    "UnfoldedBatch",
    "ValidationReport",
    "adam_step",
    "apply_layer",
    "backward_grouped",
    "convlstm_1x1_forward",
    "densify_events",
    "encode_features",
    "forward_grouped",
    "gather_surface_rows",
    "gen_density_sweep",
    "gen_moving_bar",
    "group_by_pixel",
    "group_by_time",
    "init_adam",
    "init_lstm_params",
    "init_se_params",
    "layer_backward",
    "layer_forward",
    "load_checkpoint",
    "lstm_cell_step",
    "main",
    "make_toy_dataset",
    "masked_scan_backward",
    "masked_scan_forward",
    "naive_pixel_forward",
    "parse_event_file",
    "parse_feature_spec",
    "prepare_layer_inputs",
    "read_bench_csv",
    "read_surface",
    "receptive_coords",
    "run_benchmark",
    "run_cli",
    "run_equivalence_check",
    "run_gradient_check",
    "save_checkpoint",
    "scatter_last_outputs",
    "se_forward",
    "slice_time_window",
    "train_toy_classifier",
    "unfold_receptive_fields",
    "validate_stream",
    "write_bench_csv",
    "write_bench_svg",
    "write_event_file",
    "write_surface",
    "write_surface_pgm",
    "zero_state",
]
