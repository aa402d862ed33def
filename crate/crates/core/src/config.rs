//! Run configuration: every tunable of the pipeline under a named TOML key.
//!
//! A parameter file may set any subset of keys; missing keys keep their
//! defaults. [`DEFAULT_PARAMS_TOML`] lists them all with their meaning.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consistency::ConsistencyConfig;
use crate::event::{GridConfig, TrackerConfig};
use crate::gajo::{AdaptiveConfig, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Surface-of-active-events refractory window T_k, µs.
    pub sae_window_us: u64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { sae_window_us: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// SAE window clock, µs. One pose is estimated per window.
    pub window_us: u64,
    pub filter: FilterParams,
    pub grid: GridConfig,
    pub tracker: TrackerConfig,
    pub consistency: ConsistencyConfig,
    pub noise: NoiseModel,
    pub adaptive: AdaptiveConfig,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            window_us: 5000,
            filter: FilterParams::default(),
            grid: GridConfig::default(),
            tracker: TrackerConfig::default(),
            consistency: ConsistencyConfig::default(),
            noise: NoiseModel::default(),
            adaptive: AdaptiveConfig::default(),
        }
    }
}

/// The defaults, documented. Parsing this text yields `Params::default()`.
pub const DEFAULT_PARAMS_TOML: &str = r#"# Pose estimation cadence: one pose per window, µs.
window_us = 5000

[filter]
# SAE refractory window T_k: a same-polarity event at a pixel that fired less
# than this long ago is dropped, µs.
sae_window_us = 1000

[grid]
# Neighbour-filter window T_n: an event survives only if an 8-neighbour fired
# less than this long ago, µs.
neighbor_window_us = 2000
# Cell size c_w x c_h, px.
cell_width = 8
cell_height = 8
# Accumulation interval c_dt, µs.
interval_us = 5000
# Events needed in a cell within one interval to activate it, c_thres.
threshold = 5

[tracker]
# Minimum IOU for a track and a cluster to be associated.
iou_min = 0.1
# Unmatched steps after which a track is dropped.
miss_max = 3
# White-acceleration densities of the box center and size, px/s^2.
accel_std = 400.0
size_accel_std = 200.0
# Box measurement noise per coordinate, px.
measurement_std = 1.0
# Initial velocity std of new tracks, px/s.
initial_velocity_std = 1000.0

[consistency]
# Largest point-to-ray distance for radar/event pairing, m.
gate_radius = 0.5
# Micro-motion histogram bin side, px.
bin_size = 5
# Micro-motion window delta_i, µs.
window_us = 20000
# Events needed for a bin to count.
count_min = 30
# Propeller bins have a positive fraction within 0.5 +/- beta.
beta = 0.15

[noise]
# Constant-velocity prior sigma_tED: spread of t_i - (2 t_(i-1) - t_(i-2)), m.
# 1 mm per 5 ms window allows 40 m/s^2, far above what a landing drone does.
sigma_ted = 0.001
# Box-center sigma_ET, px.
sigma_et = 2.0
# Radar range sigma_D, m.
sigma_d = 0.05
# Radar direction sigma_v, per unit-vector component.
sigma_v = 0.01
# Radar displacement sigma_UE, m.
sigma_ue = 0.03
# Huber threshold k on the pixel residual, px.
huber_k = 5.0

[adaptive]
# Per-pose change delta that marks a pose for relinearization, m.
delta = 0.005
# Relinearize everything once L_T poses are marked.
l_t = 1
# Relinearize everything once the whole update reaches Delta, m.
big_delta = 0.02
# Active window size W_max; older poses are frozen.
w_max = 50
# Windows between local optimizations, N_trigger.
n_trigger = 10
"#;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

impl Params {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let p: Params = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("params are always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError(m.to_string()));
        if self.window_us == 0 {
            return bad("window_us must be positive");
        }
        if self.grid.cell_width == 0 || self.grid.cell_height == 0 || self.grid.interval_us == 0 {
            return bad("grid cells and interval must be positive");
        }
        if self.consistency.window_us == 0 || self.consistency.bin_size == 0 {
            return bad("micro-motion window and bin size must be positive");
        }
        if !(self.consistency.gate_radius > 0.0) || !(0.0..=0.5).contains(&self.consistency.beta) {
            return bad("gate_radius must be positive and beta within [0, 0.5]");
        }
        if !self.noise.validate() {
            return bad("every noise sigma and huber_k must be positive");
        }
        if !self.adaptive.validate() {
            return bad("adaptive: delta, big_delta > 0, l_t >= 1, w_max >= 3, n_trigger >= 1");
        }
        Ok(())
    }
}

/// Which filters and factors are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Filtering, selection, both factor types and adaptive local optimization.
    Full,
    /// Radar factors only; events still drive selection.
    RadarOnly,
    /// Event factors only; the first two poses are anchored on radar.
    EventOnly,
    /// No denoising or micro-motion selection: the busiest track and the
    /// strongest radar return are used as measurements.
    NoCct,
    /// Local optimization relinearizes from scratch every time.
    NoAdaptive,
    /// Single-pose estimates only, never a window optimization.
    IntersaeOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Full,
        AblationMode::RadarOnly,
        AblationMode::EventOnly,
        AblationMode::NoCct,
        AblationMode::NoAdaptive,
        AblationMode::IntersaeOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::RadarOnly => "radar-only",
            AblationMode::EventOnly => "event-only",
            AblationMode::NoCct => "no-cct",
            AblationMode::NoAdaptive => "no-adaptive",
            AblationMode::IntersaeOnly => "intersae-only",
        }
    }

    pub fn uses_events(self) -> bool {
        self != AblationMode::RadarOnly
    }

    pub fn uses_radar(self) -> bool {
        self != AblationMode::EventOnly
    }

    pub fn uses_cct(self) -> bool {
        self != AblationMode::NoCct
    }

    pub fn local_optimization(self) -> bool {
        self != AblationMode::IntersaeOnly
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
                ConfigError(format!("unknown mode {s:?}, expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario_dir: PathBuf,
    /// Checked against the scenario's own calibration when given.
    pub calibration: Option<PathBuf>,
    pub params: Params,
    pub mode: AblationMode,
    pub output_dir: Option<PathBuf>,
    /// Recorded with the results. The pipeline itself draws no random numbers.
    pub seed: u64,
    /// Run local optimization on a worker thread.
    pub threaded: bool,
}

impl RunConfig {
    pub fn new(scenario_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenario_dir: scenario_dir.into(),
            calibration: None,
            params: Params::default(),
            mode: AblationMode::Full,
            output_dir: None,
            seed: 0,
            threaded: false,
        }
    }
}
