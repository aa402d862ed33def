use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Timestamp;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("infeasible trajectory: {0}")]
    InfeasibleSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// Straight down from `start` to `end.z`.
    VerticalDescent,
    /// Level flight to above `end`, then straight down.
    ApproachThenDescend,
    /// Level square spiral at `start.z`, legs shrinking toward the center.
    SquareSpiral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeedClass {
    /// Below 0.5 m/s.
    Slow,
    /// 0.5 to 1 m/s.
    Medium,
    /// 1 to 1.5 m/s.
    Rapid,
}

impl SpeedClass {
    /// Half-open speed interval `[lo, hi)` in m/s.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SpeedClass::Slow => (0.0, 0.5),
            SpeedClass::Medium => (0.5, 1.0),
            SpeedClass::Rapid => (1.0, 1.5),
        }
    }

    pub fn of(speed: f64) -> Option<SpeedClass> {
        [SpeedClass::Slow, SpeedClass::Medium, SpeedClass::Rapid]
            .into_iter()
            .find(|c| {
                let (lo, hi) = c.bounds();
                speed >= lo && speed < hi
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    /// Cruise speed on every leg, m/s.
    pub speed: f64,
    pub class: SpeedClass,
    /// Acceleration of the speed ramps, m/s².
    pub accel: f64,
    /// Hover before the first leg, s.
    pub hover_before: f64,
    /// Hover after the last leg, s.
    pub hover_after: f64,
    /// Pose sampling rate, Hz.
    pub rate_hz: f64,
    /// First spiral leg length, m.
    pub spiral_leg: f64,
    /// Leg length lost every second turn, m.
    pub spiral_shrink: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::ApproachThenDescend,
            start: Vector3::new(0.8, 0.5, 6.0),
            end: Vector3::new(0.0, 0.0, 3.0),
            speed: 0.4,
            class: SpeedClass::Slow,
            accel: 0.5,
            hover_before: 1.0,
            hover_after: 1.0,
            rate_hz: 200.0,
            spiral_leg: 2.0,
            spiral_shrink: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPose {
    pub timestamp: Timestamp,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// Straight leg flown with a trapezoidal (or triangular) speed profile that
/// starts and ends at rest, so legs join with continuous velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Leg {
    from: Vector3<f64>,
    dir: Vector3<f64>,
    length: f64,
    t0: f64,
    v: f64,
    a: f64,
    t_ramp: f64,
    duration: f64,
}

impl Leg {
    fn new(from: Vector3<f64>, to: Vector3<f64>, t0: f64, speed: f64, accel: f64) -> Self {
        let length = (to - from).norm();
        let dir = if length > 0.0 { (to - from) / length } else { Vector3::zeros() };
        // Triangular profile when the leg is too short to reach cruise speed.
        let v = speed.min((length * accel).sqrt());
        let t_ramp = if accel > 0.0 { v / accel } else { 0.0 };
        let cruise = if v > 0.0 { (length - v * t_ramp) / v } else { 0.0 };
        Self {
            from,
            dir,
            length,
            t0,
            v,
            a: accel,
            t_ramp,
            duration: 2.0 * t_ramp + cruise.max(0.0),
        }
    }

    /// Distance travelled and speed at leg-local time `t`.
    fn profile(&self, t: f64) -> (f64, f64) {
        let t = t.clamp(0.0, self.duration);
        if self.length == 0.0 {
            return (0.0, 0.0);
        }
        if t < self.t_ramp {
            (0.5 * self.a * t * t, self.a * t)
        } else if t <= self.duration - self.t_ramp {
            (0.5 * self.a * self.t_ramp.powi(2) + self.v * (t - self.t_ramp), self.v)
        } else {
            let r = self.duration - t;
            (self.length - 0.5 * self.a * r * r, self.a * r)
        }
    }
}

/// Continuous-time trajectory made of rest-to-rest legs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    legs: Vec<Leg>,
    start: Vector3<f64>,
    end: Vector3<f64>,
    t_first: f64,
    duration: f64,
    rate_hz: f64,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn state_at(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        if t <= self.t_first || self.legs.is_empty() {
            return (self.start, Vector3::zeros());
        }
        for leg in &self.legs {
            if t <= leg.t0 + leg.duration {
                let (s, v) = leg.profile(t - leg.t0);
                return (leg.from + leg.dir * s, leg.dir * v);
            }
        }
        (self.end, Vector3::zeros())
    }

    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        self.state_at(t).0
    }

    /// Poses at the sampling rate, first at t = 0, last at or before the end.
    pub fn sample(&self) -> Vec<TruthPose> {
        let period_us = (1e6 / self.rate_hz).round() as u64;
        let n = (self.duration * 1e6 / period_us as f64).floor() as u64;
        (0..=n)
            .map(|k| {
                let ts = Timestamp(k * period_us);
                let (position, velocity) = self.state_at(ts.as_secs());
                TruthPose {
                    timestamp: ts,
                    position,
                    velocity,
                }
            })
            .collect()
    }
}

fn waypoints(spec: &TrajectorySpec) -> Vec<Vector3<f64>> {
    let s = spec.start;
    match spec.kind {
        TrajectoryKind::VerticalDescent => vec![s, Vector3::new(s.x, s.y, spec.end.z)],
        TrajectoryKind::ApproachThenDescend => vec![
            s,
            Vector3::new(spec.end.x, spec.end.y, s.z),
            spec.end,
        ],
        TrajectoryKind::SquareSpiral => {
            let dirs = [
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(-1.0, 0.0, 0.0),
                Vector3::new(0.0, -1.0, 0.0),
            ];
            let mut pts = vec![s];
            let mut len = spec.spiral_leg;
            let mut k = 0;
            while len > 1e-9 {
                let last = *pts.last().unwrap();
                pts.push(last + dirs[k % 4] * len);
                k += 1;
                if k % 2 == 0 {
                    len -= spec.spiral_shrink;
                }
            }
            pts
        }
    }
}

/// Builds the trajectory and checks it against its speed class.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Trajectory, TrajectoryError> {
    let (lo, hi) = spec.class.bounds();
    if !(spec.speed > 0.0 && spec.speed >= lo && spec.speed < hi) {
        return Err(TrajectoryError::InfeasibleSpec(format!(
            "speed {} m/s is outside the {:?} class [{lo}, {hi})",
            spec.speed, spec.class
        )));
    }
    if !(spec.accel > 0.0) || !(spec.rate_hz > 0.0) {
        return Err(TrajectoryError::InfeasibleSpec(
            "acceleration and sampling rate must be positive".into(),
        ));
    }
    if spec.hover_before < 0.0 || spec.hover_after < 0.0 {
        return Err(TrajectoryError::InfeasibleSpec("hover times must be non-negative".into()));
    }
    if spec.kind == TrajectoryKind::SquareSpiral && !(spec.spiral_leg > 0.0 && spec.spiral_shrink > 0.0) {
        return Err(TrajectoryError::InfeasibleSpec("spiral legs must be positive".into()));
    }
    if matches!(spec.kind, TrajectoryKind::VerticalDescent | TrajectoryKind::ApproachThenDescend)
        && spec.end.z > spec.start.z
    {
        return Err(TrajectoryError::InfeasibleSpec("a landing cannot climb".into()));
    }
    let pts = waypoints(spec);
    let mut legs = Vec::new();
    let mut t = spec.hover_before;
    for w in pts.windows(2) {
        if (w[1] - w[0]).norm() == 0.0 {
            continue;
        }
        let leg = Leg::new(w[0], w[1], t, spec.speed, spec.accel);
        t += leg.duration;
        legs.push(leg);
    }
    let end = *pts.last().unwrap();
    Ok(Trajectory {
        legs,
        start: spec.start,
        end,
        t_first: spec.hover_before,
        duration: t + spec.hover_after,
        rate_hz: spec.rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn descent(speed: f64, class: SpeedClass) -> TrajectorySpec {
        TrajectorySpec {
            kind: TrajectoryKind::VerticalDescent,
            start: Vector3::new(0.0, 0.0, 10.0),
            end: Vector3::new(0.0, 0.0, 0.5),
            speed,
            class,
            accel: 2.0,
            hover_before: 0.0,
            hover_after: 0.0,
            ..TrajectorySpec::default()
        }
    }

    #[test]
    fn ten_metre_descent_at_half_speed() {
        let spec = descent(0.5, SpeedClass::Medium);
        let traj = generate_trajectory(&spec).unwrap();
        // 9.5 m at 0.5 m/s, plus half a ramp at each end.
        let expected = 9.5 / 0.5 + 0.5 / 2.0;
        assert!((traj.duration() - expected).abs() < 1e-9);
        assert!(traj.duration() >= 19.0);
        let poses = traj.sample();
        assert!(poses.windows(2).all(|w| w[1].position.z <= w[0].position.z));
        assert!((poses.last().unwrap().position.z - 0.5).abs() < 1e-3);
        assert!(poses.iter().all(|p| p.velocity.norm() <= 0.5 + 1e-12));
    }

    #[test]
    fn zero_length_is_constant() {
        let mut spec = descent(0.3, SpeedClass::Slow);
        spec.end.z = spec.start.z;
        spec.hover_after = 2.0;
        let poses = generate_trajectory(&spec).unwrap().sample();
        assert_eq!(poses.len(), 401);
        assert!(poses.iter().all(|p| p.position == spec.start));
    }

    #[test]
    fn spiral_closes_in_at_constant_altitude() {
        let spec = TrajectorySpec {
            kind: TrajectoryKind::SquareSpiral,
            start: Vector3::new(-1.0, -1.0, 30.0),
            speed: 1.2,
            class: SpeedClass::Rapid,
            accel: 2.0,
            spiral_leg: 2.0,
            spiral_shrink: 0.5,
            ..TrajectorySpec::default()
        };
        let traj = generate_trajectory(&spec).unwrap();
        let pts = waypoints(&spec);
        assert_eq!(pts.len(), 9);
        let legs: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        assert!(legs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let poses = traj.sample();
        assert!(poses.iter().all(|p| p.position.z == 30.0));
        // Each leg cruises at the commanded speed.
        let top = poses.iter().map(|p| p.velocity.norm()).fold(0.0, f64::max);
        assert!((top - 1.2).abs() < 1e-9);
    }

    #[test]
    fn speed_outside_class_is_infeasible() {
        assert!(generate_trajectory(&descent(0.7, SpeedClass::Slow)).is_err());
        assert!(generate_trajectory(&descent(1.5, SpeedClass::Rapid)).is_err());
        assert!(generate_trajectory(&descent(0.0, SpeedClass::Slow)).is_err());
        let mut climb = descent(0.3, SpeedClass::Slow);
        climb.end.z = 20.0;
        assert!(generate_trajectory(&climb).is_err());
    }

    proptest! {
        #[test]
        fn position_is_continuous_and_speed_bounded(
            speed in 0.05f64..1.49, ax in -2.0f64..2.0, ay in -2.0f64..2.0, accel in 0.2f64..3.0,
        ) {
            let class = SpeedClass::of(speed).unwrap();
            let spec = TrajectorySpec {
                start: Vector3::new(ax, ay, 8.0),
                end: Vector3::new(0.0, 0.0, 2.0),
                speed, class, accel,
                rate_hz: 100.0,
                ..TrajectorySpec::default()
            };
            let traj = generate_trajectory(&spec).unwrap();
            let poses = traj.sample();
            for w in poses.windows(2) {
                let dt = w[1].timestamp.secs_since(w[0].timestamp);
                prop_assert!((w[1].position - w[0].position).norm() <= speed * dt + 1e-9);
                prop_assert!((w[1].velocity - w[0].velocity).norm() <= accel * dt * 1.0001 + 1e-9);
            }
            let descending: Vec<_> = poses.iter().filter(|p| p.velocity.z < 0.0).collect();
            prop_assert!(descending.windows(2).all(|w| w[1].position.z <= w[0].position.z));
        }
    }
}
