//! Scene description: the drone model, sensor noise knobs and distractors.
//!
//! None of these magnitudes are measured values. They are calibration knobs
//! picked so the simulated error budget lands in a realistic range.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Propeller {
    /// Disc center in the drone body frame, m.
    pub offset: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneModel {
    /// Body extent (w, l, h), m.
    pub extent: [f64; 3],
    pub propellers: Vec<Propeller>,
}

impl Default for DroneModel {
    /// Mini-class quadrotor, 0.25 × 0.36 × 0.07 m with its 6-inch propellers
    /// unfolded, so the discs reach the edge of the footprint.
    fn default() -> Self {
        let p = |x: f64, y: f64| Propeller {
            offset: [x, y, 0.0],
            radius: 0.076,
        };
        Self {
            extent: [0.25, 0.36, 0.07],
            propellers: vec![p(-0.049, -0.104), p(0.049, -0.104), p(-0.049, 0.104), p(0.049, 0.104)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventNoise {
    /// Events per pixel of silhouette edge per pixel the edge sweeps.
    pub edge_density: f64,
    /// Rotor speed, revolutions / s. Each blade edge that sweeps a disc pixel
    /// fires there once.
    pub propeller_rps: f64,
    pub blades: u32,
    /// Angular width of one blade, rad.
    pub blade_width: f64,
    /// Probability an edge event carries the opposite polarity.
    pub polarity_flip: f64,
    /// Background shot noise over the whole sensor, events / s.
    pub shot_noise_rate: f64,
    /// Event rate inside shadow blobs, events / px² / s.
    pub shadow_rate: f64,
    /// Scales every event rate.
    pub illumination: f64,
}

impl Default for EventNoise {
    fn default() -> Self {
        Self {
            edge_density: 2.0,
            propeller_rps: 50.0,
            blades: 2,
            blade_width: 0.6,
            polarity_flip: 0.05,
            shot_noise_rate: 20_000.0,
            shadow_rate: 150.0,
            illumination: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarNoise {
    /// White range noise σ_D,sim, m.
    pub range_std: f64,
    /// White AoA phase noise per array, rad.
    pub phase_std: f64,
    /// Stationary std of the slowly drifting range bias, m.
    pub drift_range_std: f64,
    /// Stationary std of the slowly drifting phase bias, rad.
    pub drift_phase_std: f64,
    /// Correlation time of both drifts, s.
    pub drift_tau: f64,
    /// Chance that a chirp carries an extra multipath ghost.
    pub ghost_probability: f64,
    /// Ghost range excess over the direct path, uniform in [lo, hi], m.
    pub ghost_range_offset: [f64; 2],
    /// Std of the ghost's angular offset from the direct path, rad.
    pub ghost_angle_std: f64,
    pub drone_snr_db: f64,
    pub ghost_snr_db: f64,
    pub snr_std_db: f64,
}

impl Default for RadarNoise {
    fn default() -> Self {
        Self {
            range_std: 0.05,
            phase_std: 0.03,
            drift_range_std: 0.03,
            drift_phase_std: 0.02,
            drift_tau: 2.0,
            ghost_probability: 0.2,
            ghost_range_offset: [0.5, 2.5],
            ghost_angle_std: 0.15,
            drone_snr_db: 20.0,
            ghost_snr_db: 12.0,
            snr_std_db: 2.0,
        }
    }
}

impl RadarNoise {
    pub fn noiseless() -> Self {
        Self {
            range_std: 0.0,
            phase_std: 0.0,
            drift_range_std: 0.0,
            drift_phase_std: 0.0,
            ghost_probability: 0.0,
            snr_std_db: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Distractor {
    /// Sphere on a horizontal circular orbit. Visible to both sensors.
    Ball {
        center: [f64; 3],
        orbit_radius: f64,
        period: f64,
        radius: f64,
        /// Edge events per boundary pixel per pixel swept.
        edge_density: f64,
        snr_db: f64,
    },
    /// Image-space light patch toggling on and off. Invisible to radar.
    FlickerPatch {
        x: u16,
        y: u16,
        w: u16,
        h: u16,
        period: f64,
        /// Mean events per pixel at each toggle.
        events_per_toggle: f64,
        /// Each toggle's events spread over this long, s.
        ramp: f64,
    },
    /// Image-space disc gliding across the sensor with single-polarity events.
    Shadow {
        start: [f64; 2],
        velocity: [f64; 2],
        radius: f64,
        positive: bool,
        t_start: f64,
        t_end: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub drone: DroneModel,
    pub events: EventNoise,
    pub radar: RadarNoise,
    pub distractors: Vec<Distractor>,
    /// Rendering time step, µs.
    pub substep_us: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            drone: DroneModel::default(),
            events: EventNoise::default(),
            radar: RadarNoise::default(),
            distractors: default_distractors(),
            substep_us: 1000,
        }
    }
}

/// Moving ball, flickering light and one gliding shadow, placed away from the
/// default landing corridor.
pub fn default_distractors() -> Vec<Distractor> {
    vec![
        Distractor::Ball {
            center: [-0.7, 0.9, 4.5],
            orbit_radius: 0.4,
            period: 6.0,
            radius: 0.15,
            edge_density: 12.0,
            snr_db: 25.0,
        },
        Distractor::FlickerPatch {
            x: 20,
            y: 20,
            w: 30,
            h: 24,
            period: 0.5,
            events_per_toggle: 1.5,
            ramp: 0.01,
        },
        Distractor::Shadow {
            start: [330.0, 20.0],
            velocity: [-25.0, 6.0],
            radius: 10.0,
            positive: false,
            t_start: 0.5,
            t_end: 9.0,
        },
    ]
}

impl SceneConfig {
    /// No noise, no ghosts, no distractors.
    pub fn noiseless() -> Self {
        Self {
            events: EventNoise {
                polarity_flip: 0.0,
                shot_noise_rate: 0.0,
                ..EventNoise::default()
            },
            radar: RadarNoise::noiseless(),
            distractors: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let e = &self.events;
        let rates = [
            e.edge_density,
            e.propeller_rps,
            e.shot_noise_rate,
            e.shadow_rate,
            e.illumination,
            self.radar.range_std,
            self.radar.phase_std,
            self.radar.drift_range_std,
            self.radar.drift_phase_std,
            self.radar.ghost_angle_std,
        ];
        if rates.iter().any(|r| !(*r >= 0.0)) {
            return Err("rates and noise levels must be non-negative".into());
        }
        if e.blades == 0 || !(e.blade_width > 0.0 && e.blade_width * e.blades as f64 <= 2.0 * std::f64::consts::PI) {
            return Err("blades must fit on the rotor".into());
        }
        if !(0.0..=1.0).contains(&e.polarity_flip) || !(0.0..=1.0).contains(&self.radar.ghost_probability) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        if self.drone.extent.iter().any(|x| !(*x > 0.0)) {
            return Err("drone extent must be positive".into());
        }
        if self.drone.propellers.iter().any(|p| !(p.radius > 0.0)) {
            return Err("propeller radii must be positive".into());
        }
        if self.substep_us == 0 || !(self.radar.drift_tau > 0.0) {
            return Err("substep and drift time constant must be positive".into());
        }
        let [lo, hi] = self.radar.ghost_range_offset;
        if !(0.0 <= lo && lo <= hi) {
            return Err("ghost range offset must satisfy 0 <= lo <= hi".into());
        }
        Ok(())
    }
}
