use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::factors::{Factor, Measurement};
use super::graph::FactorGraph;
use super::noise::NoiseModel;
use super::qr::SquareRootInfo;
use super::solver::{gauss_newton, GnSettings};
use super::GajoError;
use crate::geometry::{CameraIntrinsics, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// A pose whose incremental update moves it at least this far needs
    /// relinearizing, m.
    pub delta: f64,
    /// Relinearize everything once this many poses need it.
    pub l_t: usize,
    /// Relinearize everything once the whole update is at least this long, m.
    pub big_delta: f64,
    /// Active poses kept in the window; older ones are frozen.
    pub w_max: usize,
    /// Windows between local optimizations in the pipeline.
    pub n_trigger: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            delta: 0.005,
            l_t: 1,
            big_delta: 0.02,
            w_max: 50,
            n_trigger: 10,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> bool {
        self.delta > 0.0 && self.big_delta > 0.0 && self.l_t >= 1 && self.w_max >= 3 && self.n_trigger >= 1
    }
}

/// A pose entering the window with its initial guess and measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewPose {
    pub timestamp: Timestamp,
    pub initial: Vector3<f64>,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub full_update: bool,
    /// Poses whose incremental change reached `delta`.
    pub changed: usize,
    /// Norm of the incremental change over the window, m.
    pub change_norm: f64,
    /// Gauss-Newton iterations spent in the full update.
    pub iterations: usize,
    /// Poses frozen at the end of the step.
    pub frozen: usize,
}

/// Window optimizer that folds new factors into the square-root information
/// factor with Givens rotations and only relinearizes when the incremental
/// solution drifts from the linearization point.
#[derive(Debug, Clone)]
pub struct AdaptiveSolver {
    pub config: AdaptiveConfig,
    graph: FactorGraph,
    sqrt_info: SquareRootInfo,
    initial: Vec<Vector3<f64>>,
    settings: GnSettings,
}

impl AdaptiveSolver {
    pub fn new(noise: NoiseModel, intrinsics: CameraIntrinsics, config: AdaptiveConfig) -> Self {
        Self {
            config,
            graph: FactorGraph::new(noise, intrinsics),
            sqrt_info: SquareRootInfo::new(0),
            initial: Vec::new(),
            settings: GnSettings::default(),
        }
    }

    /// Adds a pose that stays fixed, e.g. an externally known start.
    pub fn add_anchor(&mut self, timestamp: Timestamp, value: Vector3<f64>) {
        self.graph.add_fixed(timestamp, value);
        self.initial.push(value);
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn sqrt_info(&self) -> &SquareRootInfo {
        &self.sqrt_info
    }

    /// Current value of every pose, frozen ones included.
    pub fn estimates(&self) -> Vec<Vector3<f64>> {
        self.graph.values()
    }

    pub fn active_estimates(&self) -> Vec<Vector3<f64>> {
        self.graph.active_values()
    }

    pub fn latest(&self) -> Option<Vector3<f64>> {
        self.graph.vars().last().map(|v| v.t_ed)
    }

    /// One pass of the adaptive scheme: add factors, update `R` incrementally,
    /// back-substitute, and rebuild `R` from scratch when enough poses moved.
    pub fn adaptive_step(&mut self, new: &[NewPose]) -> Result<StepReport, GajoError> {
        self.step(new, false)
    }

    /// Same as [`adaptive_step`](Self::adaptive_step) but always relinearizes.
    pub fn full_step(&mut self, new: &[NewPose]) -> Result<StepReport, GajoError> {
        self.step(new, true)
    }

    fn step(&mut self, new: &[NewPose], force_full: bool) -> Result<StepReport, GajoError> {
        let mut report = StepReport::default();
        if new.is_empty() {
            return Ok(report);
        }
        let first_new = self.graph.len();
        for p in new {
            self.graph.add_variable(p.timestamp, p.initial);
            self.initial.push(p.initial);
        }
        self.sqrt_info.add_columns(3 * new.len());
        let mut rows = Vec::new();
        for (k, p) in new.iter().enumerate() {
            for f in Factor::for_pose(first_new + k, &p.measurement, true) {
                self.graph.linearize(&f, true, &mut rows)?;
                self.graph.add_factor(f);
            }
        }
        for r in &rows {
            self.sqrt_info.add_row(r.start, &r.coeffs[..r.len], r.rhs);
        }

        let delta = self.sqrt_info.solve()?;
        let fa = self.graph.first_active();
        let mut updated = Vec::with_capacity(self.graph.active_len());
        let mut sq = 0.0;
        for (k, v) in self.graph.vars()[fa..].iter().enumerate() {
            let step = Vector3::new(delta[3 * k], delta[3 * k + 1], delta[3 * k + 2]);
            if step.norm() >= self.config.delta {
                report.changed += 1;
            }
            sq += step.norm_squared();
            updated.push(v.linearization_point + step);
        }
        report.change_norm = sq.sqrt();
        let before = self.graph.active_values();
        self.graph.set_active_values(&updated);
        // A linear step can carry a pose behind the camera; Gauss-Newton from
        // the previous values shortens the step until it stays valid.
        let invalid = self.graph.energy().is_err();
        if invalid {
            self.graph.set_active_values(&before);
        }

        if force_full || invalid || report.changed >= self.config.l_t || report.change_norm >= self.config.big_delta {
            let out = gauss_newton(&mut self.graph, &self.settings)?;
            self.sqrt_info = out.sqrt_info;
            report.full_update = true;
            report.iterations = out.iterations;
        }

        let excess = self.graph.active_len().saturating_sub(self.config.w_max);
        if excess > 0 {
            let fixed: Vec<f64> = self.graph.vars()[fa..fa + excess]
                .iter()
                .flat_map(|v| {
                    let d = v.t_ed - v.linearization_point;
                    [d.x, d.y, d.z]
                })
                .collect();
            self.sqrt_info = self.sqrt_info.condition_on_leading(3 * excess, &fixed);
            self.graph.freeze_oldest(excess);
            report.frozen = excess;
        }
        Ok(report)
    }

    /// Reference solution: Gauss-Newton to convergence over the same window
    /// and frozen values, started from the poses' initial guesses.
    pub fn batch_solution(&self) -> Result<Vec<Vector3<f64>>, GajoError> {
        let mut g = self.graph.clone();
        g.set_active_values(&self.initial[g.first_active()..]);
        gauss_newton(&mut g, &self.settings)?;
        Ok(g.active_values())
    }
}
