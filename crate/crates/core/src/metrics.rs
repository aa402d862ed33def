//! Localization error, latency and filter-quality metrics.
//!
//! Error is the Euclidean distance between an estimate and the ground truth
//! linearly interpolated to the estimate's timestamp. Percentiles use the
//! nearest-rank rule. Recall is kept drone items over all drone items and
//! precision is kept drone items over all kept items.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Timestamp;
use crate::sim::{position_at, TruthPose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trajectory and ground truth do not overlap in time")]
    EmptyOverlap,
    #[error("{items} labels but {decisions} keep decisions")]
    LengthMismatch { items: usize, decisions: usize },
    #[error("trajectory csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowMode {
    #[serde(rename = "interSAE")]
    InterSae,
    #[serde(rename = "local")]
    Local,
}

/// One output pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub timestamp: Timestamp,
    pub position: Vector3<f64>,
    pub mode: RowMode,
    pub iterations: usize,
    pub solve_time_us: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    timestamp_us: u64,
    x: f64,
    y: f64,
    z: f64,
    mode: RowMode,
    iterations: usize,
    #[serde(default)]
    solve_time_us: u64,
}

/// Writes `timestamp_us,x,y,z,mode,iterations[,solve_time_us]`. Leaving out
/// the timing column gives a byte-stable rendering of the trajectory.
pub fn write_trajectory_csv<W: Write>(w: W, rows: &[TrajectoryRow], timing: bool) -> Result<(), MetricsError> {
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["timestamp_us", "x", "y", "z", "mode", "iterations"];
    if timing {
        header.push("solve_time_us");
    }
    wr.write_record(&header).map_err(err)?;
    for r in rows {
        let mode = match r.mode {
            RowMode::InterSae => "interSAE",
            RowMode::Local => "local",
        };
        let mut rec = vec![
            r.timestamp.0.to_string(),
            format!("{:?}", r.position.x),
            format!("{:?}", r.position.y),
            format!("{:?}", r.position.z),
            mode.to_string(),
            r.iterations.to_string(),
        ];
        if timing {
            rec.push(r.solve_time_us.to_string());
        }
        wr.write_record(&rec).map_err(err)?;
    }
    wr.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

pub fn trajectory_csv_bytes(rows: &[TrajectoryRow], timing: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, rows, timing).expect("writing to memory cannot fail");
    buf
}

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Vec<TrajectoryRow>, MetricsError> {
    csv::Reader::from_reader(r)
        .deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| MetricsError::Csv(e.to_string()))?;
            Ok(TrajectoryRow {
                timestamp: Timestamp(row.timestamp_us),
                position: Vector3::new(row.x, row.y, row.z),
                mode: row.mode,
                iterations: row.iterations,
                solve_time_us: row.solve_time_us,
            })
        })
        .collect()
}

/// Nearest-rank percentile of an ascending slice; `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
    pub rmse: f64,
    /// Mean absolute error per axis, m.
    pub axis_mean_abs: [f64; 3],
    pub axis_rmse: [f64; 3],
}

/// Per-row errors against interpolated truth, rows outside the truth span
/// skipped.
pub fn localization_errors(rows: &[TrajectoryRow], truth: &[TruthPose]) -> Vec<Vector3<f64>> {
    let (Some(first), Some(last)) = (truth.first(), truth.last()) else {
        return Vec::new();
    };
    rows.iter()
        .filter(|r| r.timestamp >= first.timestamp && r.timestamp <= last.timestamp)
        .map(|r| r.position - position_at(truth, r.timestamp))
        .collect()
}

pub fn error_stats(rows: &[TrajectoryRow], truth: &[TruthPose]) -> Result<ErrorStats, MetricsError> {
    let errs = localization_errors(rows, truth);
    if errs.is_empty() {
        return Err(MetricsError::EmptyOverlap);
    }
    let n = errs.len() as f64;
    let mut norms: Vec<f64> = errs.iter().map(|e| e.norm()).collect();
    norms.sort_by(f64::total_cmp);
    let mut axis_mean_abs = [0.0; 3];
    let mut axis_rmse = [0.0; 3];
    for k in 0..3 {
        axis_mean_abs[k] = errs.iter().map(|e| e[k].abs()).sum::<f64>() / n;
        axis_rmse[k] = (errs.iter().map(|e| e[k] * e[k]).sum::<f64>() / n).sqrt();
    }
    Ok(ErrorStats {
        count: errs.len(),
        mean: norms.iter().sum::<f64>() / n,
        median: percentile(&norms, 50.0),
        p90: percentile(&norms, 90.0),
        p99: percentile(&norms, 99.0),
        max: *norms.last().unwrap(),
        rmse: (norms.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
        axis_mean_abs,
        axis_rmse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

pub fn latency_stats(samples_us: &[f64]) -> LatencyStats {
    let mut s = samples_us.to_vec();
    s.sort_by(f64::total_cmp);
    LatencyStats {
        count: s.len(),
        mean_us: if s.is_empty() { 0.0 } else { s.iter().sum::<f64>() / s.len() as f64 },
        p50_us: if s.is_empty() { 0.0 } else { percentile(&s, 50.0) },
        p99_us: if s.is_empty() { 0.0 } else { percentile(&s, 99.0) },
        max_us: s.last().copied().unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterQuality {
    pub total: usize,
    pub drone_total: usize,
    pub kept: usize,
    pub kept_drone: usize,
    /// 1 when there is nothing to find.
    pub recall: f64,
    /// 0 when nothing is kept.
    pub precision: f64,
}

pub fn filter_quality(is_drone: &[bool], kept: &[bool]) -> Result<FilterQuality, MetricsError> {
    if is_drone.len() != kept.len() {
        return Err(MetricsError::LengthMismatch {
            items: is_drone.len(),
            decisions: kept.len(),
        });
    }
    let drone_total = is_drone.iter().filter(|d| **d).count();
    let n_kept = kept.iter().filter(|k| **k).count();
    let kept_drone = is_drone.iter().zip(kept).filter(|(d, k)| **d && **k).count();
    Ok(FilterQuality {
        total: kept.len(),
        drone_total,
        kept: n_kept,
        kept_drone,
        recall: if drone_total == 0 { 1.0 } else { kept_drone as f64 / drone_total as f64 },
        precision: if n_kept == 0 { 0.0 } else { kept_drone as f64 / n_kept as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: String,
    pub error: ErrorStats,
    /// Trajectory RMSE, m.
    pub trajectory_rmse: f64,
    /// Per-update compute latency (filtering, selection and optimization).
    pub latency: LatencyStats,
    /// Per-update latency with the scenario load time spread over all updates.
    pub latency_with_io: LatencyStats,
    pub event_filter: FilterQuality,
    pub radar_filter: FilterQuality,
    /// Fraction of scored windows whose selected box holds the true drone.
    pub selection_accuracy: f64,
    pub selection_windows: usize,
    pub windows: usize,
    pub hardware: String,
}

/// Inputs to [`compute_metrics`] beyond trajectory and truth.
#[derive(Debug, Clone, Default)]
pub struct MetricInputs<'a> {
    pub event_is_drone: &'a [bool],
    pub event_kept: &'a [bool],
    pub radar_is_drone: &'a [bool],
    pub radar_kept: &'a [bool],
    pub latency_us: &'a [f64],
    pub io_us: f64,
    /// One entry per scored window: did the selection hold the true drone.
    pub selection_hits: &'a [bool],
    pub windows: usize,
}

pub fn compute_metrics(
    mode: &str,
    rows: &[TrajectoryRow],
    truth: &[TruthPose],
    inputs: &MetricInputs<'_>,
) -> Result<MetricsReport, MetricsError> {
    let error = error_stats(rows, truth)?;
    let per_update_io = if inputs.latency_us.is_empty() {
        0.0
    } else {
        inputs.io_us / inputs.latency_us.len() as f64
    };
    let with_io: Vec<f64> = inputs.latency_us.iter().map(|l| l + per_update_io).collect();
    let hits = inputs.selection_hits.iter().filter(|h| **h).count();
    Ok(MetricsReport {
        mode: mode.to_string(),
        trajectory_rmse: error.rmse,
        error,
        latency: latency_stats(inputs.latency_us),
        latency_with_io: latency_stats(&with_io),
        event_filter: filter_quality(inputs.event_is_drone, inputs.event_kept)?,
        radar_filter: filter_quality(inputs.radar_is_drone, inputs.radar_kept)?,
        selection_accuracy: if inputs.selection_hits.is_empty() {
            0.0
        } else {
            hits as f64 / inputs.selection_hits.len() as f64
        },
        selection_windows: inputs.selection_hits.len(),
        windows: inputs.windows,
        hardware: hardware_info(),
    })
}

/// CPU model and thread count, best effort.
pub fn hardware_info() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu}, {threads} threads, {}", std::env::consts::OS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth3() -> Vec<TruthPose> {
        (0..3)
            .map(|k| TruthPose {
                timestamp: Timestamp(k * 10_000),
                position: Vector3::new(0.0, 0.0, 5.0 - k as f64),
                velocity: Vector3::zeros(),
            })
            .collect()
    }

    fn row(t: u64, p: Vector3<f64>) -> TrajectoryRow {
        TrajectoryRow {
            timestamp: Timestamp(t),
            position: p,
            mode: RowMode::InterSae,
            iterations: 1,
            solve_time_us: 0,
        }
    }

    #[test]
    fn perfect_trajectory_has_zero_error() {
        let t = truth3();
        let rows: Vec<_> = t.iter().map(|p| row(p.timestamp.0, p.position)).collect();
        let s = error_stats(&rows, &t).unwrap();
        assert_eq!((s.mean, s.max, s.rmse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn three_known_offsets() {
        let t = truth3();
        let rows = vec![
            row(0, t[0].position + Vector3::new(0.1, 0.0, 0.0)),
            row(10_000, t[1].position + Vector3::new(0.0, 0.2, 0.0)),
            row(20_000, t[2].position + Vector3::new(0.0, 0.0, 0.3)),
        ];
        let s = error_stats(&rows, &t).unwrap();
        assert!((s.mean - 0.2).abs() < 1e-12);
        assert!((s.median - 0.2).abs() < 1e-12);
        assert!((s.max - 0.3).abs() < 1e-12);
        assert!((s.rmse - (0.14f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.axis_mean_abs[1] - 0.2 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn truth_is_interpolated() {
        let t = truth3();
        let s = error_stats(&[row(5_000, Vector3::new(0.0, 0.0, 4.5))], &t).unwrap();
        assert!(s.max < 1e-12);
    }

    #[test]
    fn disjoint_spans_are_rejected() {
        let t = truth3();
        assert_eq!(
            error_stats(&[row(30_001, Vector3::zeros())], &t),
            Err(MetricsError::EmptyOverlap)
        );
    }

    #[test]
    fn keeping_everything_gives_unit_recall() {
        let drone = [true, false, false, true];
        let q = filter_quality(&drone, &[true; 4]).unwrap();
        assert_eq!(q.recall, 1.0);
        assert_eq!(q.precision, 0.5);
        assert!(filter_quality(&drone, &[true; 3]).is_err());
    }

    #[test]
    fn nearest_rank_percentiles_are_monotone() {
        let s: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        assert_eq!(percentile(&s, 50.0), 50.0);
        assert_eq!(percentile(&s, 99.0), 99.0);
        assert_eq!(percentile(&s, 0.0), 1.0);
        let l = latency_stats(&s);
        assert!(l.p50_us <= l.p99_us && l.p99_us <= l.max_us);
    }

    #[test]
    fn csv_roundtrip_and_timing_column() {
        let t = truth3();
        let rows: Vec<_> = t.iter().map(|p| row(p.timestamp.0, p.position + Vector3::new(1e-17, 0.1, 0.0))).collect();
        let full = trajectory_csv_bytes(&rows, true);
        let back = read_trajectory_csv(&full[..]).unwrap();
        assert_eq!(back, rows);
        let bare = String::from_utf8(trajectory_csv_bytes(&rows, false)).unwrap();
        assert!(bare.starts_with("timestamp_us,x,y,z,mode,iterations\n"));
        assert_eq!(read_trajectory_csv(bare.as_bytes()).unwrap().len(), 3);
    }
}
