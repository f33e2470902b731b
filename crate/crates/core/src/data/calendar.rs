use chrono::{DateTime, Datelike, Duration, Timelike, Utc};

/// Time-of-day buckets (hours) and day-of-week classes.
pub const TOD_BUCKETS: usize = 24;
pub const DOW_CLASSES: usize = 7;

/// Calendar indices of each token's first step: hour of day in `[0, 24)` and
/// day of week with Monday = 0.
pub fn extract_temporal_context(
    start: DateTime<Utc>,
    sample_rate_minutes: u32,
    token_starts: &[usize],
) -> (Vec<usize>, Vec<usize>) {
    token_starts
        .iter()
        .map(|&offset| {
            let t = start + Duration::minutes(offset as i64 * sample_rate_minutes as i64);
            (t.hour() as usize, t.weekday().num_days_from_monday() as usize)
        })
        .unzip()
}

/// Wall-clock instant of step `offset`.
pub fn step_time(start: DateTime<Utc>, sample_rate_minutes: u32, offset: usize) -> DateTime<Utc> {
    start + Duration::minutes(offset as i64 * sample_rate_minutes as i64)
}
