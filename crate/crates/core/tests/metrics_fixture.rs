//! Metrics over small hand-computed fixtures.
//!
//! `fixtures/metrics/truth.csv` moves along x at 1 m/s at 5 m altitude.
//! `fixtures/metrics/trajectory.csv` has error vectors (0, 0, 0.3),
//! (0, 0.4, 0), 0 and (0, −0.3, −0.4), whose norms are 0.3, 0.4, 0, 0.5.
//! Its last row lies past the truth and must be ignored.

use std::fs::File;
use std::path::PathBuf;

use approx::assert_abs_diff_eq;
use padloc::metrics::{
    error_stats, filter_quality, latency_stats, percentile, read_trajectory_csv, trajectory_csv_bytes, RowMode,
};
use padloc::sim::read_truth_csv;

fn fixture(name: &str) -> File {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metrics").join(name);
    File::open(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn error_statistics_match_hand_computation() {
    let rows = read_trajectory_csv(fixture("trajectory.csv")).unwrap();
    let truth = read_truth_csv(fixture("truth.csv")).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[2].mode, RowMode::Local);
    let s = error_stats(&rows, &truth).unwrap();
    assert_eq!(s.count, 4);
    // (0 + 0.3 + 0.4 + 0.5) / 4
    assert_abs_diff_eq!(s.mean, 0.3, epsilon = 1e-12);
    // sqrt((0 + 0.09 + 0.16 + 0.25) / 4)
    assert_abs_diff_eq!(s.rmse, 0.125f64.sqrt(), epsilon = 1e-12);
    // Nearest rank: ceil(0.5·4) = 2nd smallest, ceil(0.9·4) = 4th.
    assert_abs_diff_eq!(s.median, 0.3, epsilon = 1e-12);
    assert_abs_diff_eq!(s.p90, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(s.max, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(s.axis_mean_abs[0], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(s.axis_mean_abs[1], 0.175, epsilon = 1e-12);
    assert_abs_diff_eq!(s.axis_mean_abs[2], 0.175, epsilon = 1e-12);
    assert_abs_diff_eq!(s.axis_rmse[1], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(s.axis_rmse[2], 0.25, epsilon = 1e-12);
}

#[test]
fn comparison_bytes_ignore_timing() {
    let mut rows = read_trajectory_csv(fixture("trajectory.csv")).unwrap();
    let before = trajectory_csv_bytes(&rows, false);
    rows[0].solve_time_us += 1000;
    assert_eq!(trajectory_csv_bytes(&rows, false), before);
    assert_ne!(trajectory_csv_bytes(&rows, true), before);
    let text = String::from_utf8(before).unwrap();
    assert!(text.starts_with("timestamp_us,x,y,z,mode,iterations\n"));
    assert_eq!(read_trajectory_csv(text.as_bytes()).unwrap()[3].position.z, 4.6);
}

#[test]
fn filter_quality_counts() {
    let drone = [true, true, false, false, true];
    let kept = [true, false, true, false, true];
    let q = filter_quality(&drone, &kept).unwrap();
    assert_eq!((q.drone_total, q.kept, q.kept_drone), (3, 3, 2));
    assert_abs_diff_eq!(q.recall, 2.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(q.precision, 2.0 / 3.0, epsilon = 1e-12);
    assert!(filter_quality(&drone, &kept[..4]).is_err());
}

#[test]
fn latency_percentiles() {
    let l = latency_stats(&[4.0, 1.0, 100.0, 3.0, 2.0]);
    assert_eq!(l.count, 5);
    assert_abs_diff_eq!(l.mean_us, 22.0, epsilon = 1e-12);
    assert_abs_diff_eq!(l.p50_us, 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(l.p99_us, 100.0, epsilon = 1e-12);
    assert_abs_diff_eq!(l.max_us, 100.0, epsilon = 1e-12);
    assert_abs_diff_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 25.0), 1.0, epsilon = 0.0);
    assert!(percentile(&[], 50.0).is_nan());
}
