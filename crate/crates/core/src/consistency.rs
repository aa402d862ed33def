//! Cross-modal consistency filter.
//!
//! Each event track casts a viewing ray through its box center. Radar points
//! close to some ray are paired with that track; tracks without a nearby radar
//! point are treated as noise. Among the surviving tracks, the drone is the one
//! whose events show the most propeller-like bins: dense and balanced in
//! polarity, where shadows, birds and flicker produce one polarity at a time.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::event::{BBox, Event, Polarity, Track};
use crate::geometry::{back_project_ray, CameraIntrinsics, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// Largest point-to-ray distance for a radar point to pair with a track, m.
    pub gate_radius: f64,
    /// Histogram bin side, px.
    pub bin_size: u16,
    /// Micro-motion window δi, µs.
    pub window_us: u64,
    /// Minimum events for a bin to count.
    pub count_min: u32,
    /// Half-width β of the accepted positive-fraction band around 0.5.
    pub beta: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            gate_radius: 0.5,
            bin_size: 5,
            window_us: 20_000,
            count_min: 30,
            beta: 0.15,
        }
    }
}

/// Minimal view of a track needed here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackBox {
    pub track_id: u64,
    pub bbox: BBox,
}

impl From<&Track> for TrackBox {
    fn from(t: &Track) -> Self {
        Self {
            track_id: t.id,
            bbox: t.bbox(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedObservation {
    pub track_id: u64,
    pub center: Vector2<f64>,
    /// Index into the radar point list given to [`align`].
    pub radar_index: usize,
    /// Frame E.
    pub radar_point: Vector3<f64>,
    pub ray_distance: f64,
    pub timestamp: Timestamp,
}

/// Perpendicular distance from `p` to the ray from the origin along unit `dir`;
/// the distance to the origin when `p` lies behind it.
pub fn ray_distance(dir: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let s = dir.dot(p);
    if s <= 0.0 {
        p.norm()
    } else {
        (p - dir * s).norm()
    }
}

/// Pairs tracks with radar points. Pairs are taken greedily by increasing ray
/// distance (ties by lower track id, then lower point index), so every track and
/// every point is used at most once. Output is ordered by track id.
pub fn align(
    tracks: &[TrackBox],
    radar_points: &[Vector3<f64>],
    intr: &CameraIntrinsics,
    gate_radius: f64,
    timestamp: Timestamp,
) -> Vec<AlignedObservation> {
    let mut cands = Vec::new();
    for (ti, tr) in tracks.iter().enumerate() {
        let Ok(ray) = back_project_ray(intr, &tr.bbox.center()) else {
            continue;
        };
        for (pi, p) in radar_points.iter().enumerate() {
            let d = ray_distance(&ray, p);
            if d <= gate_radius {
                cands.push((d, tr.track_id, pi, ti));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; tracks.len()];
    let mut point_used = vec![false; radar_points.len()];
    let mut out = Vec::new();
    for (d, id, pi, ti) in cands {
        if track_used[ti] || point_used[pi] {
            continue;
        }
        track_used[ti] = true;
        point_used[pi] = true;
        out.push(AlignedObservation {
            track_id: id,
            center: tracks[ti].bbox.center(),
            radar_index: pi,
            radar_point: radar_points[pi],
            ray_distance: d,
            timestamp,
        });
    }
    out.sort_by_key(|o| o.track_id);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    /// Bin column and row on the absolute image grid.
    pub bx: u16,
    pub by: u16,
    pub count: u32,
    pub positive_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroMotionScore {
    pub track_id: u64,
    /// Non-empty bins only.
    pub bins: Vec<BinStat>,
    pub propeller_bin_count: usize,
    pub total_events: usize,
    /// Scored interval `[start, end]`, µs.
    pub window: (Timestamp, Timestamp),
}

pub fn is_propeller_bin(count: u32, positive_fraction: f64, cfg: &ConsistencyConfig) -> bool {
    count >= cfg.count_min && (positive_fraction - 0.5).abs() <= cfg.beta
}

/// Histograms the events inside `bbox` and `[end − δi, end]` into
/// `bin_size`-pixel bins on the image grid and counts the propeller bins.
pub fn micro_motion_score(
    track_id: u64,
    events: &[Event],
    bbox: &BBox,
    end: Timestamp,
    cfg: &ConsistencyConfig,
) -> MicroMotionScore {
    let start = Timestamp(end.0.saturating_sub(cfg.window_us));
    let bin = cfg.bin_size.max(1);
    let mut hist: BTreeMap<(u16, u16), (u32, u32)> = BTreeMap::new();
    let mut total = 0;
    for e in events {
        if e.t < start || e.t > end || !bbox.contains_pixel(e.x, e.y) {
            continue;
        }
        let b = hist.entry((e.y / bin, e.x / bin)).or_default();
        b.0 += 1;
        b.1 += (e.polarity == Polarity::Positive) as u32;
        total += 1;
    }
    let bins: Vec<BinStat> = hist
        .into_iter()
        .map(|((by, bx), (n, pos))| BinStat {
            bx,
            by,
            count: n,
            positive_fraction: pos as f64 / n as f64,
        })
        .collect();
    let propeller_bin_count = bins
        .iter()
        .filter(|b| is_propeller_bin(b.count, b.positive_fraction, cfg))
        .count();
    MicroMotionScore {
        track_id,
        bins,
        propeller_bin_count,
        total_events: total,
        window: (start, end),
    }
}

/// The aligned observation whose track has the most propeller bins, ties broken
/// by more events and then by the lower id. `None` when no track scores.
pub fn select_drone<'a>(
    aligned: &'a [AlignedObservation],
    scores: &[MicroMotionScore],
) -> Option<&'a AlignedObservation> {
    aligned
        .iter()
        .filter_map(|a| {
            let s = scores.iter().find(|s| s.track_id == a.track_id)?;
            (s.propeller_bin_count > 0).then_some((a, s.propeller_bin_count, s.total_events))
        })
        .min_by(|x, y| {
            y.1.cmp(&x.1)
                .then(y.2.cmp(&x.2))
                .then(x.0.track_id.cmp(&y.0.track_id))
        })
        .map(|(a, _, _)| a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackDiagnostic {
    pub track_id: u64,
    pub score: usize,
    pub events: usize,
    pub ray_distance: Option<f64>,
}

/// Per-window record of the selection, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDiagnostic {
    pub timestamp_us: u64,
    pub tracks: Vec<TrackDiagnostic>,
    pub chosen: Option<u64>,
}

impl WindowDiagnostic {
    pub fn new(
        timestamp: Timestamp,
        tracks: &[TrackBox],
        aligned: &[AlignedObservation],
        scores: &[MicroMotionScore],
        chosen: Option<u64>,
    ) -> Self {
        Self {
            timestamp_us: timestamp.0,
            tracks: tracks
                .iter()
                .map(|t| {
                    let s = scores.iter().find(|s| s.track_id == t.track_id);
                    TrackDiagnostic {
                        track_id: t.track_id,
                        score: s.map_or(0, |s| s.propeller_bin_count),
                        events: s.map_or(0, |s| s.total_events),
                        ray_distance: aligned
                            .iter()
                            .find(|a| a.track_id == t.track_id)
                            .map(|a| a.ray_distance),
                    }
                })
                .collect(),
            chosen,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostic is always serializable")
    }
}
