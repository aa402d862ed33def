//! Labelled event and radar synthesis from a pose sequence.
//!
//! Events follow an edge-crossing model: a silhouette boundary that sweeps a
//! pixel fires there, with polarity set by whether the dark object covers or
//! uncovers the bright sky. Propeller blades follow the same rule: every disc
//! pixel sees a negative event as a blade's leading edge covers it and a
//! positive one as the trailing edge clears it. Radar is simulated at the
//! detection level.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::scene::{Distractor, EventNoise, SceneConfig};
use super::trajectory::TruthPose;
use crate::event::{Event, Polarity};
use crate::geometry::{CameraIntrinsics, RigidTransform, Timestamp};
use crate::radar::{direction_vector, estimate_aoa, phase_difference, ChirpConfig, RadarDetection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventLabel {
    DroneBody,
    Propeller,
    Shadow,
    ShotNoise,
    Distractor,
}

impl EventLabel {
    pub const ALL: [EventLabel; 5] = [
        EventLabel::DroneBody,
        EventLabel::Propeller,
        EventLabel::Shadow,
        EventLabel::ShotNoise,
        EventLabel::Distractor,
    ];

    pub fn is_drone(self) -> bool {
        matches!(self, EventLabel::DroneBody | EventLabel::Propeller)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadarLabel {
    Drone,
    Ghost,
    Distractor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedEvents {
    pub events: Vec<Event>,
    pub labels: Vec<EventLabel>,
    /// Fraction of poses whose projection falls inside the image.
    pub in_view_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedRadar {
    pub detections: Vec<RadarDetection>,
    pub labels: Vec<RadarLabel>,
}

/// Linear interpolation of the pose sequence, clamped at both ends.
pub fn position_at(poses: &[TruthPose], t: Timestamp) -> Vector3<f64> {
    let i = poses.partition_point(|p| p.timestamp <= t);
    if i == 0 {
        return poses[0].position;
    }
    if i == poses.len() {
        return poses[i - 1].position;
    }
    let (a, b) = (&poses[i - 1], &poses[i]);
    let s = t.secs_since(a.timestamp) / b.timestamp.secs_since(a.timestamp);
    a.position + (b.position - a.position) * s
}

pub(crate) fn ball_position(center: [f64; 3], orbit_radius: f64, period: f64, t: f64) -> Vector3<f64> {
    let w = 2.0 * PI * t / period;
    Vector3::new(
        center[0] + orbit_radius * w.cos(),
        center[1] + orbit_radius * w.sin(),
        center[2],
    )
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
    } else {
        0
    }
}

fn random_polarity<R: Rng>(rng: &mut R) -> Polarity {
    if rng.random::<bool>() {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

struct Sink {
    width: f64,
    height: f64,
    events: Vec<Event>,
    labels: Vec<EventLabel>,
}

impl Sink {
    /// Pixel centers sit at integer coordinates, so (x, y) lands in the
    /// nearest pixel.
    fn push(&mut self, x: f64, y: f64, t: u64, polarity: Polarity, label: EventLabel) {
        let (x, y) = ((x + 0.5).floor(), (y + 0.5).floor());
        if x >= 0.0 && y >= 0.0 && x < self.width && y < self.height {
            self.events.push(Event::new(x as u16, y as u16, t, polarity));
            self.labels.push(label);
        }
    }
}

/// Image-space pose of the drone at one instant.
struct DroneImage {
    center: Vector2<f64>,
    half: Vector2<f64>,
    discs: Vec<(Vector2<f64>, f64)>,
}

fn drone_image(p: &Vector3<f64>, scene: &SceneConfig, intr: &CameraIntrinsics) -> Option<DroneImage> {
    if p.z <= 1e-3 {
        return None;
    }
    let center = intr.project(p).ok()?;
    let [w, l, _] = scene.drone.extent;
    let half = Vector2::new(intr.fx * w / 2.0 / p.z, intr.fy * l / 2.0 / p.z);
    let discs = scene
        .drone
        .propellers
        .iter()
        .filter_map(|prop| {
            let c = p + Vector3::from(prop.offset);
            let px = intr.project(&c).ok()?;
            Some((px, intr.fx * prop.radius / c.z))
        })
        .collect();
    Some(DroneImage { center, half, discs })
}

/// Edge events for one straight silhouette edge that moved by `delta` along its
/// outward normal. `along` spans the edge; `at(s, n)` maps an edge coordinate and
/// a normal offset to a pixel.
fn sweep_edge<R: Rng>(
    rng: &mut R,
    sink: &mut Sink,
    density: f64,
    flip: f64,
    (from, to): (f64, f64),
    delta: f64,
    t0: u64,
    dt: u64,
    label: EventLabel,
    at: impl Fn(f64, f64) -> (f64, f64),
) {
    let n = poisson(rng, density * (to - from).abs() * delta.abs());
    // Covering bright sky with the dark body darkens the pixel.
    let base = if delta > 0.0 { Polarity::Negative } else { Polarity::Positive };
    for _ in 0..n {
        let s = rng.random_range(from.min(to)..=from.max(to));
        let off = rng.random::<f64>() * delta;
        let pol = if rng.random::<f64>() < flip { base.flipped() } else { base };
        let (x, y) = at(s, off);
        sink.push(x, y, t0 + rng.random_range(0..dt), pol, label);
    }
}

fn disc_events<R: Rng>(
    rng: &mut R,
    sink: &mut Sink,
    center: Vector2<f64>,
    radius: f64,
    rate: f64,
    dt_s: f64,
    t0: u64,
    dt: u64,
    polarity: Option<Polarity>,
    label: EventLabel,
) {
    let n = poisson(rng, rate * PI * radius * radius * dt_s);
    for _ in 0..n {
        let r = radius * rng.random::<f64>().sqrt();
        let a = rng.random::<f64>() * 2.0 * PI;
        let pol = polarity.unwrap_or_else(|| random_polarity(rng));
        sink.push(center.x + r * a.cos(), center.y + r * a.sin(), t0 + rng.random_range(0..dt), pol, label);
    }
}

/// Blade-edge crossings on one rotor disc during `[t0, t0 + dt)`. Rotors spin
/// in alternating directions from fixed starting angles; each crossing fires
/// with probability `illumination` (capped at 1).
fn blade_events<R: Rng>(
    rng: &mut R,
    sink: &mut Sink,
    ev: &EventNoise,
    rotor: usize,
    center: Vector2<f64>,
    radius: f64,
    t0: u64,
    dt: u64,
) {
    let period = 2.0 * PI / ev.blades as f64;
    let omega = 2.0 * PI * ev.propeller_rps * 1e-6;
    let sense = if rotor.is_multiple_of(2) { 1.0 } else { -1.0 };
    let start = rotor as f64 * 0.7;
    let sweep = omega * dt as f64;
    let emit = ev.illumination.min(1.0);
    let (x0, x1) = ((center.x - radius).ceil().max(0.0) as i64, (center.x + radius).floor().min(sink.width - 1.0) as i64);
    let (y0, y1) = ((center.y - radius).ceil().max(0.0) as i64, (center.y + radius).floor().min(sink.height - 1.0) as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = Vector2::new(x as f64, y as f64) - center;
            if d.norm_squared() > radius * radius {
                continue;
            }
            // Blade phase relative to this pixel, advancing at omega.
            let a = d.y.atan2(d.x);
            let phase = (omega * t0 as f64 + start - sense * a).rem_euclid(period);
            for (edge, pol) in [(0.0, Polarity::Negative), (ev.blade_width, Polarity::Positive)] {
                let lag = (edge - phase).rem_euclid(period);
                let mut k = 0.0;
                while lag + k * period < sweep {
                    if rng.random::<f64>() < emit {
                        let t = t0 + ((lag + k * period) / omega) as u64;
                        let pol = if rng.random::<f64>() < ev.polarity_flip { pol.flipped() } else { pol };
                        sink.push(x as f64, y as f64, t.min(t0 + dt - 1), pol, EventLabel::Propeller);
                    }
                    k += 1.0;
                }
            }
        }
    }
}

/// Edge events of a moving circle: expected count is density·r·4|Δ|, with the
/// boundary angle drawn proportional to the normal displacement.
fn circle_events<R: Rng>(
    rng: &mut R,
    sink: &mut Sink,
    c0: Vector2<f64>,
    c1: Vector2<f64>,
    radius: f64,
    density: f64,
    flip: f64,
    t0: u64,
    dt: u64,
) {
    let d = c1 - c0;
    let step = d.norm();
    let n = poisson(rng, density * radius * 4.0 * step);
    let heading = d.y.atan2(d.x);
    for _ in 0..n {
        let mut phi = heading + (2.0 * rng.random::<f64>() - 1.0).asin();
        let leading = rng.random::<bool>();
        if !leading {
            phi += PI;
        }
        let normal = Vector2::new(phi.cos(), phi.sin());
        let p = c0 + normal * radius + normal * (normal.dot(&d) * rng.random::<f64>());
        let base = if leading { Polarity::Negative } else { Polarity::Positive };
        let pol = if rng.random::<f64>() < flip { base.flipped() } else { base };
        sink.push(p.x, p.y, t0 + rng.random_range(0..dt), pol, EventLabel::Distractor);
    }
}

/// Synthesizes the labelled event stream over the span of `poses`.
pub fn render_events(
    poses: &[TruthPose],
    scene: &SceneConfig,
    intr: &CameraIntrinsics,
    seed: u64,
) -> RenderedEvents {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sink = Sink {
        width: intr.width as f64,
        height: intr.height as f64,
        events: Vec::new(),
        labels: Vec::new(),
    };
    if poses.is_empty() {
        return RenderedEvents {
            events: Vec::new(),
            labels: Vec::new(),
            in_view_fraction: 0.0,
        };
    }
    let in_view = poses
        .iter()
        .filter(|p| p.position.z > 0.0 && intr.project(&p.position).map(|px| intr.contains(&px)).unwrap_or(false))
        .count();
    let ev = &scene.events;
    let illum = ev.illumination;
    let t_begin = poses[0].timestamp.0;
    let t_end = poses.last().unwrap().timestamp.0;
    let dt = scene.substep_us;

    let mut t = t_begin;
    while t < t_end {
        let step = dt.min(t_end - t);
        let step_s = step as f64 * 1e-6;
        let p0 = position_at(poses, Timestamp(t));
        let p1 = position_at(poses, Timestamp(t + step));
        if let (Some(a), Some(b)) = (drone_image(&p0, scene, intr), drone_image(&p1, scene, intr)) {
            let density = ev.edge_density * illum;
            let (top, bottom) = (b.center.y - b.half.y, b.center.y + b.half.y);
            let (left, right) = (b.center.x - b.half.x, b.center.x + b.half.x);
            // Left and right edges, outward normals -x and +x.
            let dl = (a.center.x - a.half.x) - left;
            let dr = right - (a.center.x + a.half.x);
            let dtop = (a.center.y - a.half.y) - top;
            let dbot = bottom - (a.center.y + a.half.y);
            let label = EventLabel::DroneBody;
            let flip = ev.polarity_flip;
            sweep_edge(&mut rng, &mut sink, density, flip, (top, bottom), dl, t, step, label, |s, o| (left + o, s));
            sweep_edge(&mut rng, &mut sink, density, flip, (top, bottom), dr, t, step, label, |s, o| (right - o, s));
            sweep_edge(&mut rng, &mut sink, density, flip, (left, right), dtop, t, step, label, |s, o| (s, top + o));
            sweep_edge(&mut rng, &mut sink, density, flip, (left, right), dbot, t, step, label, |s, o| (s, bottom - o));
            for (k, (c, r)) in b.discs.iter().enumerate() {
                blade_events(&mut rng, &mut sink, ev, k, *c, *r, t, step);
            }
        }
        for d in &scene.distractors {
            match d {
                Distractor::Ball {
                    center,
                    orbit_radius,
                    period,
                    radius,
                    edge_density,
                    ..
                } => {
                    let b0 = ball_position(*center, *orbit_radius, *period, t as f64 * 1e-6);
                    let b1 = ball_position(*center, *orbit_radius, *period, (t + step) as f64 * 1e-6);
                    if let (Ok(c0), Ok(c1)) = (intr.project(&b0), intr.project(&b1)) {
                        let r = intr.fx * radius / b1.z;
                        circle_events(&mut rng, &mut sink, c0, c1, r, edge_density * illum, ev.polarity_flip, t, step);
                    }
                }
                Distractor::Shadow {
                    start,
                    velocity,
                    radius,
                    positive,
                    t_start,
                    t_end,
                } => {
                    let ts = t as f64 * 1e-6;
                    if ts >= *t_start && ts < *t_end {
                        let c = Vector2::from(*start) + Vector2::from(*velocity) * (ts - t_start);
                        let pol = if *positive { Polarity::Positive } else { Polarity::Negative };
                        disc_events(&mut rng, &mut sink, c, *radius, ev.shadow_rate * illum, step_s, t, step, Some(pol), EventLabel::Shadow);
                    }
                }
                Distractor::FlickerPatch { .. } => {}
            }
        }
        t += step;
    }

    for d in &scene.distractors {
        if let Distractor::FlickerPatch {
            x,
            y,
            w,
            h,
            period,
            events_per_toggle,
            ramp,
        } = d
        {
            let half_us = (period / 2.0 * 1e6).max(1.0) as u64;
            let ramp_us = ((ramp * 1e6) as u64).max(1);
            let mut k = 1u64;
            while t_begin + k * half_us < t_end {
                let t0 = t_begin + k * half_us;
                let pol = if k % 2 == 1 { Polarity::Positive } else { Polarity::Negative };
                for py in *y..y.saturating_add(*h) {
                    for px in *x..x.saturating_add(*w) {
                        for _ in 0..poisson(&mut rng, events_per_toggle * illum) {
                            let te = (t0 + rng.random_range(0..ramp_us)).min(t_end);
                            sink.push(px as f64, py as f64, te, pol, EventLabel::Distractor);
                        }
                    }
                }
                k += 1;
            }
        }
    }

    let n_shot = poisson(&mut rng, ev.shot_noise_rate * illum * (t_end - t_begin) as f64 * 1e-6);
    for _ in 0..n_shot {
        let x = rng.random::<f64>() * sink.width - 0.5;
        let y = rng.random::<f64>() * sink.height - 0.5;
        let te = rng.random_range(t_begin..t_end.max(t_begin + 1));
        let pol = random_polarity(&mut rng);
        sink.push(x, y, te, pol, EventLabel::ShotNoise);
    }

    let mut order: Vec<usize> = (0..sink.events.len()).collect();
    order.sort_by_key(|&i| sink.events[i].t);
    RenderedEvents {
        events: order.iter().map(|&i| sink.events[i]).collect(),
        labels: order.iter().map(|&i| sink.labels[i]).collect(),
        in_view_fraction: in_view as f64 / poses.len() as f64,
    }
}

/// Stationary AR(1) process with the given std and correlation time.
struct Drift {
    value: f64,
    rho: f64,
    innov: f64,
}

impl Drift {
    fn new<R: Rng>(rng: &mut R, std: f64, tau: f64, dt: f64) -> Self {
        let rho = (-dt / tau).exp();
        let value = if std > 0.0 { std * gauss(rng) } else { 0.0 };
        Self {
            value,
            rho,
            innov: std * (1.0 - rho * rho).sqrt(),
        }
    }

    fn step<R: Rng>(&mut self, rng: &mut R) -> f64 {
        let v = self.value;
        if self.innov > 0.0 {
            self.value = self.rho * self.value + self.innov * gauss(rng);
        }
        v
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Radar-frame (D, v̄) measured for a point with range noise `dr` and phase noise
/// on each array.
fn measure(
    p_radar: &Vector3<f64>,
    dr: f64,
    dphi: (f64, f64),
    chirp: &ChirpConfig,
) -> (f64, Vector3<f64>) {
    let range = p_radar.norm();
    let v = p_radar / range;
    if dphi == (0.0, 0.0) {
        return (range + dr, v);
    }
    let cx = estimate_aoa(phase_difference(v.x, chirp) + dphi.0, chirp).unwrap_or(v.x);
    let cy = estimate_aoa(phase_difference(v.y, chirp) + dphi.1, chirp).unwrap_or(v.y);
    let dir = direction_vector(cx, cy).unwrap_or_else(|_| {
        let k = (cx * cx + cy * cy).sqrt();
        Vector3::new(cx / k, cy / k, 0.0)
    });
    (range + dr, dir)
}

fn rotate_away<R: Rng>(rng: &mut R, v: &Vector3<f64>, angle_std: f64) -> Vector3<f64> {
    let helper = if v.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let a = v.cross(&helper).normalize();
    let b = v.cross(&a);
    let az = rng.random::<f64>() * 2.0 * PI;
    let tilt = angle_std * gauss(rng);
    let axis = a * az.cos() + b * az.sin();
    (v * tilt.cos() + axis * tilt.sin()).normalize()
}

/// One drone detection per pose (chirp), plus ghosts and distractor returns.
/// Each detection's displacement is taken from the previous detection of the
/// same label.
pub fn render_radar(
    poses: &[TruthPose],
    scene: &SceneConfig,
    chirp: &ChirpConfig,
    t_er: &RigidTransform,
    seed: u64,
) -> RenderedRadar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let rn = &scene.radar;
    let t_re = t_er.inverse();
    let dt = if poses.len() >= 2 {
        poses[1].timestamp.secs_since(poses[0].timestamp)
    } else {
        0.005
    };
    let mut drift_r = Drift::new(&mut rng, rn.drift_range_std, rn.drift_tau, dt);
    let mut drift_px = Drift::new(&mut rng, rn.drift_phase_std, rn.drift_tau, dt);
    let mut drift_py = Drift::new(&mut rng, rn.drift_phase_std, rn.drift_tau, dt);
    let mut detections = Vec::new();
    let mut labels = Vec::new();
    let mut prev: [Option<Vector3<f64>>; 3] = [None; 3];
    let mut emit = |label: RadarLabel, ts: Timestamp, range: f64, dir: Vector3<f64>, snr: f64, dets: &mut Vec<RadarDetection>| {
        let p_e = t_er.transform_point(&(dir * range));
        let slot = label as usize;
        let displacement = prev[slot].map(|q| p_e - q).unwrap_or_else(Vector3::zeros);
        prev[slot] = Some(p_e);
        dets.push(RadarDetection {
            timestamp: ts,
            range,
            direction: dir,
            displacement,
            snr_db: snr,
        });
        labels.push(label);
    };
    let snr = |rng: &mut ChaCha8Rng, mean: f64| mean + rn.snr_std_db * gauss(rng);
    for pose in poses {
        let p_r = t_re.transform_point(&pose.position);
        let dr = rn.range_std * gauss(&mut rng) + drift_r.step(&mut rng);
        let dphi = (
            rn.phase_std * gauss(&mut rng) + drift_px.step(&mut rng),
            rn.phase_std * gauss(&mut rng) + drift_py.step(&mut rng),
        );
        let (range, dir) = measure(&p_r, dr, dphi, chirp);
        let s = snr(&mut rng, rn.drone_snr_db);
        emit(RadarLabel::Drone, pose.timestamp, range, dir, s, &mut detections);
        if rng.random::<f64>() < rn.ghost_probability {
            let [lo, hi] = rn.ghost_range_offset;
            let extra = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let gdir = rotate_away(&mut rng, &dir, rn.ghost_angle_std);
            let s = snr(&mut rng, rn.ghost_snr_db);
            emit(RadarLabel::Ghost, pose.timestamp, range + extra, gdir, s, &mut detections);
        }
        for d in &scene.distractors {
            if let Distractor::Ball {
                center,
                orbit_radius,
                period,
                snr_db,
                ..
            } = d
            {
                let b = ball_position(*center, *orbit_radius, *period, pose.timestamp.as_secs());
                let b_r = t_re.transform_point(&b);
                let dr = rn.range_std * gauss(&mut rng);
                let dphi = (rn.phase_std * gauss(&mut rng), rn.phase_std * gauss(&mut rng));
                let (range, dir) = measure(&b_r, dr, dphi, chirp);
                let s = snr(&mut rng, *snr_db);
                emit(RadarLabel::Distractor, pose.timestamp, range, dir, s, &mut detections);
            }
        }
    }
    RenderedRadar { detections, labels }
}
