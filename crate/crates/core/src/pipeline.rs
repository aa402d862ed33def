//! End-to-end replay: streams in timestamp order through filtering, tracking,
//! cross-modal selection and the optimizer, one pose per window.
//!
//! Every window `(t − W, t]` runs the event filter, grid clustering and the box
//! tracker, pairs tracks with the window's radar points and picks the drone by
//! its propeller signature. The chosen box center and radar point become that
//! window's measurements. A single-pose estimate is emitted every window; every
//! `n_trigger` windows the pending poses go through the adaptive window
//! optimizer and the window's row carries the optimized pose instead.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread::JoinHandle;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::config::{AblationMode, ConfigError, Params, RunConfig};
use crate::consistency::{align, micro_motion_score, ray_distance, select_drone, AlignedObservation, TrackBox, WindowDiagnostic};
use crate::event::{grid_cluster, BBox, Event, EventFilter, Tracker};
use crate::gajo::{
    inter_sae_track, AdaptiveConfig, AdaptiveSolver, GajoError, Measurement, NewPose, NoiseModel, RadarMeasurement,
};
use crate::geometry::{back_project_ray, CalibrationSet, CameraIntrinsics, Timestamp};
use crate::metrics::{compute_metrics, write_trajectory_csv, MetricInputs, MetricsError, MetricsReport, RowMode, TrajectoryRow};
use crate::radar::RadarTrack;
use crate::sim::{position_at, RadarLabel, Scenario, SimError};

/// Lowest altitude an estimate may take above the camera, m.
pub const MIN_DEPTH: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing stream {0}")]
    MissingStream(String),
    #[error("calibration differs from the scenario's by {0:e}")]
    CalibrationMismatch(f64),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(SimError),
    #[error(transparent)]
    Solver(#[from] GajoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Io(String),
}

impl PipelineError {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::MissingStream(_) => "MissingStream",
            PipelineError::CalibrationMismatch(_) => "CalibrationMismatch",
            PipelineError::Config(_) => "InvalidConfig",
            PipelineError::Scenario(_) => "Scenario",
            PipelineError::Solver(_) => "Solver",
            PipelineError::Metrics(_) => "Metrics",
            PipelineError::Io(_) => "Io",
        }
    }
}

impl From<SimError> for PipelineError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::MissingStream(s) => PipelineError::MissingStream(s),
            other => PipelineError::Scenario(other),
        }
    }
}

/// What the consistency stage chose in one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub timestamp: Timestamp,
    pub track_id: Option<u64>,
    pub bbox: Option<BBox>,
    /// Index of the chosen detection in the scenario's radar stream.
    pub radar_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub rows: Vec<TrajectoryRow>,
    pub event_kept: Vec<bool>,
    pub radar_kept: Vec<bool>,
    pub selections: Vec<Selection>,
    pub diagnostics: Vec<WindowDiagnostic>,
    /// Compute time of every window that produced a pose, µs.
    pub latency_us: Vec<f64>,
    pub windows: usize,
}

enum WorkerMsg {
    Anchor(Timestamp, Vector3<f64>),
    Batch(Vec<NewPose>, bool),
}

type WorkerReply = Result<(Vec<Vector3<f64>>, usize), GajoError>;

enum Backend {
    Inline(Box<AdaptiveSolver>),
    Worker {
        tx: Option<Sender<WorkerMsg>>,
        rx: Receiver<WorkerReply>,
        handle: Option<JoinHandle<()>>,
        outstanding: bool,
    },
}

fn spawn_worker(solver: AdaptiveSolver) -> Backend {
    let (tx, worker_rx) = mpsc::channel::<WorkerMsg>();
    let (worker_tx, rx) = mpsc::channel::<WorkerReply>();
    let handle = std::thread::spawn(move || {
        let mut solver = solver;
        for msg in worker_rx {
            match msg {
                WorkerMsg::Anchor(t, v) => solver.add_anchor(t, v),
                WorkerMsg::Batch(poses, full) => {
                    let n = poses.len();
                    let out = if full {
                        solver.full_step(&poses)
                    } else {
                        solver.adaptive_step(&poses)
                    }
                    .map(|r| {
                        let est = solver.estimates();
                        (est[est.len() - n..].to_vec(), r.iterations)
                    });
                    if worker_tx.send(out).is_err() {
                        return;
                    }
                }
            }
        }
    });
    Backend::Worker {
        tx: Some(tx),
        rx,
        handle: Some(handle),
        outstanding: false,
    }
}

struct Estimator {
    mode: AblationMode,
    noise: NoiseModel,
    intr: CameraIntrinsics,
    config: AdaptiveConfig,
    /// Poses emitted so far.
    started: usize,
    anchor_range: Option<f64>,
    /// Two latest pose estimates, most recent first.
    history: [Option<Vector3<f64>>; 2],
    pending: Vec<NewPose>,
    backend: Backend,
}

impl Estimator {
    fn new(mode: AblationMode, params: &Params, intr: CameraIntrinsics, threaded: bool) -> Self {
        let solver = AdaptiveSolver::new(params.noise, intr, params.adaptive);
        Self {
            mode,
            noise: params.noise,
            intr,
            config: params.adaptive,
            started: 0,
            anchor_range: None,
            history: [None, None],
            pending: Vec::new(),
            backend: if threaded {
                spawn_worker(solver)
            } else {
                Backend::Inline(Box::new(solver))
            },
        }
    }

    fn push_history(&mut self, p: Vector3<f64>) {
        self.history = [Some(p), self.history[0]];
    }

    fn single(&self, history: [Option<Vector3<f64>>; 2], m: &Measurement, t: Timestamp) -> (Vector3<f64>, usize) {
        let (mut p, it) = match inter_sae_track(history, m, t, &self.noise, &self.intr) {
            Ok(e) => (e.t_ed, e.iterations),
            Err(_) => {
                let pred = match history {
                    [Some(a), Some(b)] => 2.0 * a - b,
                    [Some(a), None] => a,
                    _ => m.radar.map(|r| r.point()).unwrap_or_else(Vector3::zeros),
                };
                (pred, 0)
            }
        };
        // The drone is always above the ground rig; an estimate below it can
        // only come from a diverged prediction.
        p.z = p.z.max(MIN_DEPTH);
        (p, it)
    }

    /// Consumes one window's measurements; `radar_point` is the selected radar
    /// point regardless of mode, used only to anchor the first two poses.
    fn step(
        &mut self,
        t: Timestamp,
        m: Measurement,
        radar_point: Option<Vector3<f64>>,
    ) -> Result<Option<TrajectoryRow>, PipelineError> {
        let clock = Instant::now();
        let mut row = TrajectoryRow {
            timestamp: t,
            position: Vector3::zeros(),
            mode: RowMode::InterSae,
            iterations: 0,
            solve_time_us: 0,
        };
        // The first two poses need a radar point: they have no motion prior,
        // and without radar the camera alone cannot place them.
        if self.started < 2 && radar_point.is_none() {
            return Ok(None);
        }
        if self.mode == AblationMode::EventOnly && self.started < 2 {
            // Scale comes from one radar range; both anchors sit at that range
            // along their box rays so no radar velocity leaks in.
            let p = radar_point.unwrap_or_default();
            let range = *self.anchor_range.get_or_insert(p.norm());
            let ray = m.pixel.and_then(|px| back_project_ray(&self.intr, &px).ok());
            let est = ray.map_or(p, |r| r * range);
            match &mut self.backend {
                Backend::Inline(s) => s.add_anchor(t, est),
                Backend::Worker { tx, .. } => {
                    let _ = tx.as_ref().map(|tx| tx.send(WorkerMsg::Anchor(t, est)));
                }
            }
            self.started += 1;
            self.push_history(est);
            row.position = est;
        } else {
            // The drone is taken to start at rest: the second pose is
            // predicted to stay where the first one was.
            let history = match self.history {
                [Some(a), None] => [Some(a), Some(a)],
                h => h,
            };
            let (est, it) = self.single(history, &m, t);
            self.started += 1;
            self.push_history(est);
            self.pending.push(NewPose {
                timestamp: t,
                initial: est,
                measurement: m,
            });
            row.position = est;
            row.iterations = it;
            if self.mode.local_optimization() && self.pending.len() >= self.config.n_trigger {
                self.trigger(&mut row)?;
            }
        }
        row.solve_time_us = clock.elapsed().as_micros() as u64;
        Ok(Some(row))
    }

    fn trigger(&mut self, row: &mut TrajectoryRow) -> Result<(), PipelineError> {
        let full = self.mode == AblationMode::NoAdaptive;
        let batch = std::mem::take(&mut self.pending);
        let (noise, intr) = (self.noise, self.intr);
        match &mut self.backend {
            Backend::Inline(s) => {
                let report = if full { s.full_step(&batch)? } else { s.adaptive_step(&batch)? };
                let est = s.estimates();
                let n = est.len();
                self.history = [Some(est[n - 1]), Some(est[n - 2])];
                row.position = est[n - 1];
                row.mode = RowMode::Local;
                row.iterations = report.iterations;
            }
            Backend::Worker {
                tx, rx, outstanding, ..
            } => {
                let mut batch = batch;
                if *outstanding {
                    let (prev, _) = rx
                        .recv()
                        .map_err(|_| PipelineError::Io("optimizer thread stopped".into()))??;
                    // Re-run this block's single-pose estimates from the
                    // optimized end of the previous block.
                    let n = prev.len();
                    let mut h = [Some(prev[n - 1]), if n >= 2 { Some(prev[n - 2]) } else { self.history[1] }];
                    for p in &mut batch {
                        let mut e = inter_sae_track(h, &p.measurement, p.timestamp, &noise, &intr)
                            .map(|e| e.t_ed)
                            .unwrap_or(p.initial);
                        e.z = e.z.max(MIN_DEPTH);
                        p.initial = e;
                        h = [Some(e), h[0]];
                    }
                    self.history = h;
                    row.position = batch.last().unwrap().initial;
                }
                if let Some(tx) = tx {
                    tx.send(WorkerMsg::Batch(batch, full))
                        .map_err(|_| PipelineError::Io("optimizer thread stopped".into()))?;
                }
                *outstanding = true;
            }
        }
        Ok(())
    }

    fn finish(&mut self) {
        if let Backend::Worker { tx, handle, .. } = &mut self.backend {
            tx.take();
            if let Some(h) = handle.take() {
                let _ = h.join();
            }
        }
    }
}

/// Runs the pipeline over an in-memory scenario.
pub fn run_scenario(
    s: &Scenario,
    params: &Params,
    mode: AblationMode,
    threaded: bool,
) -> Result<PipelineOutput, PipelineError> {
    params.validate()?;
    let intr = s.calibration.intrinsics;
    let t_er = s.calibration.t_er();
    let (w, h) = (intr.width, intr.height);
    let win = params.window_us;
    let cc = params.consistency;
    let cct = mode.uses_cct();

    let mut filter = EventFilter::new(w, h, params.grid.neighbor_window_us, params.filter.sae_window_us);
    let mut tracker = Tracker::new(params.tracker);
    let mut estimator = Estimator::new(mode, params, intr, threaded);
    let mut buffer: VecDeque<Event> = VecDeque::new();
    let mut out = PipelineOutput {
        rows: Vec::new(),
        event_kept: vec![false; s.events.len()],
        radar_kept: vec![false; s.radar.len()],
        selections: Vec::new(),
        diagnostics: Vec::new(),
        latency_us: Vec::new(),
        windows: 0,
    };

    let t_last = s
        .events
        .last()
        .map(|e| e.t.0)
        .unwrap_or(0)
        .max(s.radar.last().map(|d| d.timestamp.0).unwrap_or(0));
    let (mut ei, mut ri) = (0, 0);
    let mut window_events = Vec::new();
    let mut window_index = Vec::new();
    let mut last_chosen: Option<u64> = None;
    let mut radar_track: Option<RadarTrack> = None;
    let mut prev_point: Option<(Timestamp, Vector3<f64>)> = None;

    let mut k = 0u64;
    loop {
        let t = k * win;
        if k > 0 && t - win >= t_last {
            break;
        }
        k += 1;
        let ts = Timestamp(t);
        let clock = Instant::now();

        window_events.clear();
        window_index.clear();
        while ei < s.events.len() && s.events[ei].t.0 <= t {
            let e = s.events[ei];
            if !cct || filter.process(&e) {
                window_events.push(e);
                window_index.push(ei);
                if cct {
                    buffer.push_back(e);
                }
            }
            ei += 1;
        }
        while buffer.front().is_some_and(|e| e.t.0 + cc.window_us < t) {
            buffer.pop_front();
        }
        let clusters = grid_cluster(&window_events, &params.grid, w, h);
        tracker.step(&clusters, ts);
        let boxes: Vec<TrackBox> = tracker.tracks().iter().map(TrackBox::from).collect();

        let r0 = ri;
        while ri < s.radar.len() && s.radar[ri].timestamp.0 <= t {
            ri += 1;
        }
        let points: Vec<Vector3<f64>> = s.radar[r0..ri].iter().map(|d| d.location(&t_er)).collect();

        let mut sel = Selection {
            timestamp: ts,
            track_id: None,
            bbox: None,
            radar_index: None,
        };
        if cct {
            let aligned = align(&boxes, &points, &intr, cc.gate_radius, ts);
            let buf = buffer.make_contiguous();
            let scores: Vec<_> = aligned
                .iter()
                .map(|a| {
                    let b = boxes.iter().find(|b| b.track_id == a.track_id).unwrap().bbox;
                    micro_motion_score(a.track_id, buf, &b, ts, &cc)
                })
                .collect();
            let mut chosen = select_drone(&aligned, &scores).copied();
            // Keep following the last drone through windows where its
            // signature momentarily drops below threshold.
            if chosen.is_none() {
                chosen = last_chosen.and_then(|id| aligned.iter().find(|a| a.track_id == id).copied());
            }
            out.diagnostics.push(WindowDiagnostic::new(ts, &boxes, &aligned, &scores, chosen.map(|c| c.track_id)));
            if let Some(c) = chosen {
                sel.track_id = Some(c.track_id);
                sel.bbox = boxes.iter().find(|b| b.track_id == c.track_id).map(|b| b.bbox);
                sel.radar_index = Some(r0 + direct_return(&points, &c, &intr, cc.gate_radius));
                last_chosen = Some(c.track_id);
            }
        } else {
            let busiest = tracker
                .tracks()
                .iter()
                .filter_map(|t| t.matched.as_ref().map(|c| (t, c.event_count)))
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.id.cmp(&a.0.id)));
            if let Some((tr, _)) = busiest {
                sel.track_id = Some(tr.id);
                sel.bbox = Some(tr.bbox());
            }
            sel.radar_index = s.radar[r0..ri]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.snr_db.total_cmp(&b.1.snr_db).then(b.0.cmp(&a.0)))
                .map(|(i, _)| r0 + i);
        }

        let mut centroid = Vector2::zeros();
        let mut inside = 0usize;
        if let Some(b) = sel.bbox {
            for (e, &idx) in window_events.iter().zip(&window_index) {
                if b.contains_pixel(e.x, e.y) {
                    out.event_kept[idx] = true;
                    centroid += Vector2::new(e.x as f64, e.y as f64);
                    inside += 1;
                }
            }
        }
        let point = sel.radar_index.map(|i| {
            out.radar_kept[i] = true;
            points[i - r0]
        });

        let mut motion = None;
        if let Some(p) = point {
            match (&mut radar_track, prev_point) {
                (Some(track), Some((tp, pp))) if tp.0 + win == t => {
                    motion = track.update(ts, &p, &pp).ok();
                }
                (Some(track), _) => *track = RadarTrack::new(ts, p, params.noise.sigma_ue),
                (None, _) => radar_track = Some(RadarTrack::new(ts, p, params.noise.sigma_ue)),
            }
        }
        prev_point = point.map(|p| (ts, p));

        let m = Measurement {
            pixel: if mode.uses_events() {
                // Mean of the kept events: sub-pixel, unlike the box edges.
                (inside > 0).then(|| centroid / inside as f64)
            } else {
                None
            },
            radar: if mode.uses_radar() {
                point.map(|p| RadarMeasurement::from_point(&p, motion))
            } else {
                None
            },
        };
        if let Some(row) = estimator.step(ts, m, point)? {
            out.rows.push(row);
            out.latency_us.push(clock.elapsed().as_secs_f64() * 1e6);
        }
        out.selections.push(sel);
        out.windows += 1;
    }
    estimator.finish();
    Ok(out)
}

/// Index of the radar point used as the chosen track's measurement: the
/// nearest-range point within the gate of its ray. Multipath ghosts travel a
/// longer path than the direct return, so a ghost can sit closer to the ray
/// but never nearer to the sensor.
fn direct_return(points: &[Vector3<f64>], chosen: &AlignedObservation, intr: &CameraIntrinsics, gate: f64) -> usize {
    let Ok(dir) = back_project_ray(intr, &chosen.center) else {
        return chosen.radar_index;
    };
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| ray_distance(&dir, p) <= gate)
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()).then(a.0.cmp(&b.0)))
        .map_or(chosen.radar_index, |(i, _)| i)
}

/// Per scored window, whether the chosen box contains the projected true
/// position. Windows before one full micro-motion interval has elapsed, and
/// windows where the drone is outside the image, are not scored.
pub fn selection_hits(s: &Scenario, out: &PipelineOutput, params: &Params) -> Vec<bool> {
    let intr = &s.calibration.intrinsics;
    let (Some(first), Some(last)) = (s.truth.first(), s.truth.last()) else {
        return Vec::new();
    };
    out.selections
        .iter()
        .filter(|sel| sel.timestamp.0 >= first.timestamp.0 + params.consistency.window_us && sel.timestamp <= last.timestamp)
        .filter_map(|sel| {
            let px = intr.project(&position_at(&s.truth, sel.timestamp)).ok()?;
            intr.contains(&px).then(|| sel.bbox.is_some_and(|b| b.contains(&px)))
        })
        .collect()
}

pub fn evaluate(
    s: &Scenario,
    out: &PipelineOutput,
    mode: AblationMode,
    params: &Params,
    io_us: f64,
) -> Result<MetricsReport, PipelineError> {
    let event_is_drone: Vec<bool> = s.event_labels.iter().map(|l| l.is_drone()).collect();
    let radar_is_drone: Vec<bool> = s.radar_labels.iter().map(|l| *l == RadarLabel::Drone).collect();
    let hits = selection_hits(s, out, params);
    Ok(compute_metrics(
        mode.name(),
        &out.rows,
        &s.truth,
        &MetricInputs {
            event_is_drone: &event_is_drone,
            event_kept: &out.event_kept,
            radar_is_drone: &radar_is_drone,
            radar_kept: &out.radar_kept,
            latency_us: &out.latency_us,
            io_us,
            selection_hits: &hits,
            windows: out.windows,
        },
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub report: MetricsReport,
    pub output: PipelineOutput,
}

fn io(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::Io(format!("{}: {}", path.display(), e.to_string()))
}

/// Loads the scenario directory, runs the configured mode, and writes
/// `trajectory.csv`, `metrics.json` and `diagnostics.jsonl` when an output
/// directory is set.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunResult, PipelineError> {
    let load = Instant::now();
    let scenario = Scenario::read_dir(&cfg.scenario_dir)?;
    if let Some(path) = &cfg.calibration {
        let cal = CalibrationSet::load(path).map_err(|e| io(path, e))?;
        let diff = cal.max_difference(&scenario.calibration);
        if diff > 1e-9 {
            return Err(PipelineError::CalibrationMismatch(diff));
        }
    }
    let io_us = load.elapsed().as_secs_f64() * 1e6;
    let output = run_scenario(&scenario, &cfg.params, cfg.mode, cfg.threaded)?;
    let report = evaluate(&scenario, &output, cfg.mode, &cfg.params, io_us)?;
    if let Some(dir) = &cfg.output_dir {
        write_outputs(dir, &report, &output)?;
    }
    Ok(RunResult { report, output })
}

pub fn write_outputs(dir: &Path, report: &MetricsReport, output: &PipelineOutput) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let traj = dir.join("trajectory.csv");
    let f = fs::File::create(&traj).map_err(|e| io(&traj, e))?;
    write_trajectory_csv(std::io::BufWriter::new(f), &output.rows, true)?;
    let metrics = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| io(&metrics, e))?;
    fs::write(&metrics, json).map_err(|e| io(&metrics, e))?;
    let diag = dir.join("diagnostics.jsonl");
    let mut text = String::new();
    for d in &output.diagnostics {
        text.push_str(&d.to_json_line());
        text.push('\n');
    }
    fs::write(&diag, text).map_err(|e| io(&diag, e))
}
