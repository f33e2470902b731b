//! Dataset ingestion, synthetic cities, normalization, patching and windowing.

mod calendar;
mod dataset;
mod norm;
mod patch;
mod synth;
mod window;

pub use calendar::{extract_temporal_context, step_time, DOW_CLASSES, TOD_BUCKETS};
pub(crate) use dataset::check_adjacency;
pub use dataset::{load_dataset, parse_timestamp, save_dataset, DatasetMeta, MatrixFormat, NetworkKind, TrafficDataset};
pub use norm::{denormalize, instance_normalize, normalize_with, NormStats, EPS_SIGMA};
pub use patch::{make_patches, num_patches};
pub use synth::{generate_synthetic_city, synthesize, SyntheticCity, SyntheticSpec};
pub use window::{
    build_window, make_windows, make_windows_in, split_bounds, window_starts, PatchedWindow, SplitRatios, Splits, WindowGeometry,
    WindowMode, Windows,
};
