use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::{BBox, Cluster};
use crate::geometry::Timestamp;

type State = SVector<f64, 8>;
type Cov = SMatrix<f64, 8, 8>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub iou_min: f64,
    /// Consecutive unmatched steps after which a track is removed.
    pub miss_max: u32,
    /// White-acceleration spectral density for the box center, px/s².
    pub accel_std: f64,
    /// Same for the box size.
    pub size_accel_std: f64,
    /// Measurement noise on each of (cx, cy, w, h), px.
    pub measurement_std: f64,
    /// Initial velocity uncertainty for freshly spawned tracks, px/s.
    pub initial_velocity_std: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.1,
            miss_max: 3,
            accel_std: 400.0,
            size_accel_std: 200.0,
            measurement_std: 1.0,
            initial_velocity_std: 1000.0,
        }
    }
}

/// Constant-velocity Kalman box: state is (cx, cy, w, h, vx, vy, vw, vh).
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: State,
    pub covariance: Cov,
    pub last_update: Timestamp,
    pub misses: u32,
    pub hits: u32,
    /// Cluster that corrected the track this step, if any.
    pub matched: Option<Cluster>,
}

impl Track {
    fn spawn(id: u64, c: &Cluster, t: Timestamp, cfg: &TrackerConfig) -> Self {
        let b = c.bbox();
        let mut state = State::zeros();
        state.fixed_rows_mut::<4>(0).copy_from(&SVector::<f64, 4>::new(b.cx, b.cy, b.w, b.h));
        let r2 = cfg.measurement_std.powi(2);
        let v2 = cfg.initial_velocity_std.powi(2);
        let covariance = Cov::from_diagonal(&State::from_column_slice(&[r2, r2, r2, r2, v2, v2, v2, v2]));
        Self {
            id,
            state,
            covariance,
            last_update: t,
            misses: 0,
            hits: 1,
            matched: Some(c.clone()),
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(
            self.state[0],
            self.state[1],
            self.state[2].max(1.0),
            self.state[3].max(1.0),
        )
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.state[4], self.state[5])
    }

    fn predict(&mut self, t: Timestamp, cfg: &TrackerConfig) {
        let dt = t.secs_since(self.last_update).max(0.0);
        if dt == 0.0 {
            return;
        }
        let mut f = Cov::identity();
        for i in 0..4 {
            f[(i, i + 4)] = dt;
        }
        self.state = f * self.state;
        // Discretized white-acceleration noise per axis.
        let mut q = Cov::zeros();
        for i in 0..4 {
            let s2 = if i < 2 { cfg.accel_std } else { cfg.size_accel_std }.powi(2);
            q[(i, i)] = s2 * dt.powi(3) / 3.0;
            q[(i, i + 4)] = s2 * dt.powi(2) / 2.0;
            q[(i + 4, i)] = s2 * dt.powi(2) / 2.0;
            q[(i + 4, i + 4)] = s2 * dt;
        }
        self.covariance = f * self.covariance * f.transpose() + q;
        self.last_update = t;
    }

    fn correct(&mut self, c: &Cluster, cfg: &TrackerConfig) {
        let b = c.bbox();
        let z = SVector::<f64, 4>::new(b.cx, b.cy, b.w, b.h);
        let h = SMatrix::<f64, 4, 8>::identity();
        let innovation = z - h * self.state;
        let s = h * self.covariance * h.transpose()
            + SMatrix::<f64, 4, 4>::identity() * cfg.measurement_std.powi(2);
        let Some(s_inv) = s.try_inverse() else { return };
        let k = self.covariance * h.transpose() * s_inv;
        self.state += k * innovation;
        // Joseph form keeps the covariance symmetric and PSD.
        let i_kh = Cov::identity() - k * h;
        self.covariance = i_kh * self.covariance * i_kh.transpose()
            + k * k.transpose() * cfg.measurement_std.powi(2);
        self.covariance = (self.covariance + self.covariance.transpose()) * 0.5;
        self.misses = 0;
        self.hits += 1;
        self.matched = Some(c.clone());
    }
}

/// Multi-object box tracker with greedy IOU association.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    pub config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn step(&mut self, clusters: &[Cluster], t: Timestamp) -> &[Track] {
        let cfg = self.config;
        for tr in &mut self.tracks {
            tr.predict(t, &cfg);
            tr.matched = None;
        }

        let mut pairs = Vec::new();
        for (ti, tr) in self.tracks.iter().enumerate() {
            let pred = tr.bbox();
            for (ci, c) in clusters.iter().enumerate() {
                let iou = pred.iou(&c.bbox());
                if iou >= cfg.iou_min && iou > 0.0 {
                    pairs.push((iou, tr.id, ti, ci));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.3.cmp(&b.3)));

        let mut track_used = vec![false; self.tracks.len()];
        let mut cluster_used = vec![false; clusters.len()];
        for (_, _, ti, ci) in pairs {
            if track_used[ti] || cluster_used[ci] {
                continue;
            }
            track_used[ti] = true;
            cluster_used[ci] = true;
            self.tracks[ti].correct(&clusters[ci], &cfg);
        }

        for (tr, used) in self.tracks.iter_mut().zip(&track_used) {
            if !used {
                tr.misses += 1;
            }
        }
        self.tracks.retain(|tr| tr.misses < cfg.miss_max);

        for (c, used) in clusters.iter().zip(&cluster_used) {
            if !used {
                self.tracks.push(Track::spawn(self.next_id, c, t, &cfg));
                self.next_id += 1;
            }
        }
        &self.tracks
    }
}

pub fn tracker_step<'a>(tracker: &'a mut Tracker, clusters: &[Cluster], t: Timestamp) -> &'a [Track] {
    tracker.step(clusters, t)
}
