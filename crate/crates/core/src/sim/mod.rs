//! Scenario simulator: ground-truth landing trajectories plus labelled event and
//! radar streams, and the on-disk scenario directory format.
//!
//! A scenario directory holds:
//!
//! | file               | content                                              |
//! |--------------------|------------------------------------------------------|
//! | `scenario.json`    | the [`ScenarioSpec`] that produced it                |
//! | `calibration.toml` | extrinsics, intrinsics and antenna spacing           |
//! | `events.bin`       | packed event records                                 |
//! | `event_labels.bin` | one [`EventLabel`] code byte per event               |
//! | `radar.csv`        | radar detections                                     |
//! | `radar_labels.csv` | one [`RadarLabel`] per detection                     |
//! | `truth.csv`        | `timestamp_us,x,y,z` ground truth in frame E         |

pub mod render;
pub mod scene;
pub mod trajectory;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{position_at, render_events, render_radar, EventLabel, RadarLabel, RenderedEvents, RenderedRadar};
pub use scene::{default_distractors, Distractor, DroneModel, EventNoise, Propeller, RadarNoise, SceneConfig};
pub use trajectory::{
    generate_trajectory, SpeedClass, Trajectory, TrajectoryError, TrajectoryKind, TrajectorySpec, TruthPose,
};

use crate::event::{read_events_bin, write_events_bin, Event};
use crate::geometry::{CalibrationSet, Timestamp};
use crate::radar::{read_detections_csv, write_detections_csv, ChirpConfig, RadarDetection};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("drone leaves the radar's unambiguous range ({range:.1} m > {max:.1} m)")]
    OutOfRange { range: f64, max: f64 },
    #[error("missing stream {0}")]
    MissingStream(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> SimError {
    SimError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub trajectory: TrajectorySpec,
    pub scene: SceneConfig,
    pub chirp: ChirpConfig,
}

impl ScenarioSpec {
    pub const PRESETS: [&'static str; 3] = ["default", "clean", "spiral60"];

    /// Named scenarios:
    /// - `default`: approach then descend from 6 m to 3 m among a ball, a
    ///   flickering light and a gliding shadow, with radar ghosts and drift.
    /// - `clean`: the same flight with every noise source switched off.
    /// - `spiral60`: a one-minute square spiral at 6 m with default noise.
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        let base = Self {
            name: name.to_string(),
            seed,
            trajectory: TrajectorySpec::default(),
            scene: SceneConfig::default(),
            chirp: ChirpConfig::default(),
        };
        match name {
            "default" => Some(base),
            "clean" => Some(Self {
                scene: SceneConfig::noiseless(),
                ..base
            }),
            "spiral60" => {
                let mut scene = SceneConfig::default();
                scene.distractors.retain(|d| !matches!(d, Distractor::Ball { .. }));
                Some(Self {
                    trajectory: TrajectorySpec {
                        kind: TrajectoryKind::SquareSpiral,
                        start: Vector3::new(-1.6, -1.6, 6.0),
                        end: Vector3::new(0.0, 0.0, 6.0),
                        speed: 0.7,
                        class: SpeedClass::Medium,
                        accel: 1.0,
                        hover_before: 3.5,
                        hover_after: 3.5,
                        spiral_leg: 3.2,
                        spiral_shrink: 0.4,
                        ..TrajectorySpec::default()
                    },
                    scene,
                    ..base
                })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub calibration: CalibrationSet,
    pub truth: Vec<TruthPose>,
    pub events: Vec<Event>,
    pub event_labels: Vec<EventLabel>,
    pub radar: Vec<RadarDetection>,
    pub radar_labels: Vec<RadarLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub scenario: Scenario,
    /// Human-readable warnings, e.g. a drone mostly outside the image.
    pub warnings: Vec<String>,
}

/// Generates truth and both labelled streams. Deterministic in `spec`.
pub fn simulate(spec: &ScenarioSpec, calibration: &CalibrationSet) -> Result<SimOutput, SimError> {
    spec.scene.validate().map_err(SimError::InvalidScene)?;
    spec.chirp.validate().map_err(|e| SimError::InvalidScene(e.to_string()))?;
    let truth = generate_trajectory(&spec.trajectory)?.sample();
    let t_er = calibration.t_er();
    let t_re = t_er.inverse();
    let max = spec.chirp.max_range();
    if let Some(range) = truth
        .iter()
        .map(|p| t_re.transform_point(&p.position).norm())
        .find(|r| *r >= max)
    {
        return Err(SimError::OutOfRange { range, max });
    }
    let ev = render_events(&truth, &spec.scene, &calibration.intrinsics, spec.seed);
    let radar = render_radar(&truth, &spec.scene, &spec.chirp, &t_er, spec.seed);
    let mut warnings = Vec::new();
    if ev.in_view_fraction < 0.9 {
        warnings.push(format!(
            "drone is inside the image for only {:.0}% of poses",
            100.0 * ev.in_view_fraction
        ));
    }
    Ok(SimOutput {
        scenario: Scenario {
            spec: spec.clone(),
            calibration: calibration.clone(),
            truth,
            events: ev.events,
            event_labels: ev.labels,
            radar: radar.detections,
            radar_labels: radar.labels,
        },
        warnings,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    timestamp_us: u64,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RadarLabelRow {
    label: RadarLabel,
}

pub fn write_truth_csv<W: Write>(w: W, truth: &[TruthPose]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for p in truth {
        wr.serialize(TruthRow {
            timestamp_us: p.timestamp.0,
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads `timestamp_us,x,y,z`; velocities are recovered by finite differences.
pub fn read_truth_csv<R: std::io::Read>(r: R) -> Result<Vec<TruthPose>, csv::Error> {
    let rows: Vec<TruthRow> = csv::Reader::from_reader(r).deserialize().collect::<Result<_, _>>()?;
    let pos: Vec<(Timestamp, Vector3<f64>)> = rows
        .iter()
        .map(|r| (Timestamp(r.timestamp_us), Vector3::new(r.x, r.y, r.z)))
        .collect();
    Ok(pos
        .iter()
        .enumerate()
        .map(|(i, (t, p))| {
            let velocity = if i + 1 < pos.len() {
                (pos[i + 1].1 - p) / pos[i + 1].0.secs_since(*t)
            } else if i > 0 {
                (p - pos[i - 1].1) / t.secs_since(pos[i - 1].0)
            } else {
                Vector3::zeros()
            };
            TruthPose {
                timestamp: *t,
                position: *p,
                velocity,
            }
        })
        .collect())
}

impl Scenario {
    pub fn write_dir(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| io_err(&p, e))
        };
        let spec = serde_json::to_string_pretty(&self.spec).map_err(|e| io_err(dir, e))?;
        create("scenario.json")?
            .write_all(spec.as_bytes())
            .map_err(|e| io_err(dir, e))?;
        self.calibration
            .save(&dir.join("calibration.toml"))
            .map_err(|e| io_err(dir, e))?;
        write_events_bin(create("events.bin")?, &self.events).map_err(|e| io_err(dir, e))?;
        let codes: Vec<u8> = self.event_labels.iter().map(|l| l.code()).collect();
        create("event_labels.bin")?
            .write_all(&codes)
            .map_err(|e| io_err(dir, e))?;
        write_detections_csv(create("radar.csv")?, &self.radar).map_err(|e| io_err(dir, e))?;
        let mut wr = csv::Writer::from_writer(create("radar_labels.csv")?);
        for l in &self.radar_labels {
            wr.serialize(RadarLabelRow { label: *l }).map_err(|e| io_err(dir, e))?;
        }
        wr.flush().map_err(|e| io_err(dir, e))?;
        write_truth_csv(create("truth.csv")?, &self.truth).map_err(|e| io_err(dir, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self, SimError> {
        let open = |name: &str| {
            let p = dir.join(name);
            if !p.exists() {
                return Err(SimError::MissingStream(p.display().to_string()));
            }
            File::open(&p).map(BufReader::new).map_err(|e| io_err(&p, e))
        };
        let spec: ScenarioSpec =
            serde_json::from_reader(open("scenario.json")?).map_err(|e| io_err(&dir.join("scenario.json"), e))?;
        let cal_path = dir.join("calibration.toml");
        if !cal_path.exists() {
            return Err(SimError::MissingStream(cal_path.display().to_string()));
        }
        let calibration = CalibrationSet::load(&cal_path).map_err(|e| io_err(&cal_path, e))?;
        let events = read_events_bin(open("events.bin")?).map_err(|e| io_err(&dir.join("events.bin"), e))?;
        let mut codes = Vec::new();
        std::io::Read::read_to_end(&mut open("event_labels.bin")?, &mut codes)
            .map_err(|e| io_err(&dir.join("event_labels.bin"), e))?;
        let event_labels = codes
            .iter()
            .map(|c| EventLabel::from_code(*c))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| io_err(&dir.join("event_labels.bin"), "unknown label code"))?;
        if event_labels.len() != events.len() {
            return Err(io_err(&dir.join("event_labels.bin"), "label count differs from event count"));
        }
        let radar = read_detections_csv(open("radar.csv")?).map_err(|e| io_err(&dir.join("radar.csv"), e))?;
        let radar_labels = csv::Reader::from_reader(open("radar_labels.csv")?)
            .deserialize::<RadarLabelRow>()
            .map(|r| r.map(|r| r.label))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| io_err(&dir.join("radar_labels.csv"), e))?;
        if radar_labels.len() != radar.len() {
            return Err(io_err(&dir.join("radar_labels.csv"), "label count differs from detection count"));
        }
        let truth = read_truth_csv(open("truth.csv")?).map_err(|e| io_err(&dir.join("truth.csv"), e))?;
        Ok(Self {
            spec,
            calibration,
            truth,
            events,
            event_labels,
            radar,
            radar_labels,
        })
    }
}
