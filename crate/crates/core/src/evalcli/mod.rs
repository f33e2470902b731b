//! Metrics, evaluation drivers, experiment grids and the command line.

mod cli;
mod drivers;
mod metrics;

pub use cli::{exit_code, run, CHECKPOINT_FILE, EXIT_DATA, EXIT_OK, EXIT_TRAINING, EXIT_USAGE};
pub use drivers::{
    evaluate, export_predictions, forecast, measure_latency, scaling_experiment, zero_shot_eval, EvalOptions, EvalSpan,
    LatencyReport, ScalingRow, ScalingSetup, WindowForecast, ZeroShotReport, MAPE_FLOOR_SIGMAS,
};
pub use metrics::{compute_metrics, MapeMask, MetricsReport};

#[cfg(test)]
mod tests;
