//! FMCW radar model: IF-signal synthesis, Range-FFT distance estimation, two-array
//! angle of arrival, preliminary 3D location and frame-to-frame displacement
//! tracking.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::Vector3;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{RigidTransform, Timestamp};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Minimum ratio between the Range-FFT peak and the median bin magnitude for the
/// peak to count as a target.
const PEAK_TO_MEDIAN_MIN: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadarError {
    #[error("range {0} m is outside (0, max unambiguous range)")]
    RangeOutOfBand(f64),
    #[error("no spectral peak above the noise floor")]
    NoPeak,
    #[error("antenna spacing {spacing} m exceeds half a wavelength ({half_wavelength} m)")]
    AmbiguousSpacing { spacing: f64, half_wavelength: f64 },
    #[error("cos²θx + cos²θy = {0} exceeds 1")]
    InconsistentAngles(f64),
    #[error("timestamps must strictly increase ({prev} then {now})")]
    NonMonotoneTime { prev: Timestamp, now: Timestamp },
    #[error("signal has {got} samples, chirp expects {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid chirp configuration: {0}")]
    InvalidConfig(String),
    #[error("radar csv: {0}")]
    Csv(String),
}

/// Chirp and array parameters of the FMCW front end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpConfig {
    /// Start frequency f_c (Hz).
    pub start_frequency: f64,
    /// Chirp slope K (Hz/s).
    pub slope: f64,
    /// ADC sample rate (Hz).
    pub sample_rate: f64,
    pub n_samples: usize,
    /// Spacing d between adjacent receive antennas (m).
    pub antenna_spacing: f64,
    /// Attenuation α of the received signal.
    pub attenuation: f64,
}

impl Default for ChirpConfig {
    /// 77 GHz start, 500 MHz swept over 256 samples at 10 MS/s, half-wavelength
    /// array: 0.3 m range bins and a 38 m unambiguous range.
    fn default() -> Self {
        let start_frequency = 77e9;
        let n_samples = 256;
        let sample_rate = 10e6;
        let bandwidth = 0.5e9;
        Self {
            start_frequency,
            slope: bandwidth * sample_rate / n_samples as f64,
            sample_rate,
            n_samples,
            antenna_spacing: SPEED_OF_LIGHT / start_frequency / 2.0,
            attenuation: 1.0,
        }
    }
}

impl ChirpConfig {
    pub fn validate(&self) -> Result<(), RadarError> {
        if !(self.slope > 0.0) || !(self.sample_rate > 0.0) {
            return Err(RadarError::InvalidConfig(
                "slope and sample rate must be positive".into(),
            ));
        }
        if !self.n_samples.is_power_of_two() {
            return Err(RadarError::InvalidConfig(
                "n_samples must be a power of two".into(),
            ));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.start_frequency
    }

    /// c·fs / (4K).
    pub fn max_range(&self) -> f64 {
        SPEED_OF_LIGHT * self.sample_rate / (4.0 * self.slope)
    }

    /// Distance spanned by one Range-FFT bin.
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT * self.sample_rate / (2.0 * self.slope * self.n_samples as f64)
    }

    /// Beat frequency 2KD/c produced by a scatterer at `range`.
    pub fn if_frequency(&self, range: f64) -> f64 {
        2.0 * self.slope * range / SPEED_OF_LIGHT
    }
}

/// Mixed and low-pass filtered samples of one chirp.
#[derive(Debug, Clone, PartialEq)]
pub struct IfSignal {
    pub samples: Vec<Complex64>,
    pub timestamp: Timestamp,
}

impl IfSignal {
    pub fn zeros(n: usize, timestamp: Timestamp) -> Self {
        Self {
            samples: vec![Complex64::new(0.0, 0.0); n],
            timestamp,
        }
    }

    /// Superposes another chirp's samples (multiple scatterers add linearly).
    pub fn add(&mut self, other: &IfSignal) {
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += b;
        }
    }
}

/// Forward model of the mixer: α·exp(j2π(2KD/c)t) sampled at the ADC rate.
pub fn mix_to_if(
    cfg: &ChirpConfig,
    true_range: f64,
    timestamp: Timestamp,
) -> Result<IfSignal, RadarError> {
    if !(0.0..cfg.max_range()).contains(&true_range) {
        return Err(RadarError::RangeOutOfBand(true_range));
    }
    let f_if = cfg.if_frequency(true_range);
    let samples = (0..cfg.n_samples)
        .map(|k| {
            let t = k as f64 / cfg.sample_rate;
            Complex64::from_polar(cfg.attenuation, 2.0 * PI * f_if * t)
        })
        .collect();
    Ok(IfSignal { samples, timestamp })
}

/// Distance of the dominant scatterer: Range-FFT peak refined by a 3-point
/// parabolic fit over the peak magnitude and its neighbours.
pub fn estimate_range(cfg: &ChirpConfig, sig: &IfSignal) -> Result<f64, RadarError> {
    let n = cfg.n_samples;
    if sig.samples.len() != n {
        return Err(RadarError::LengthMismatch {
            got: sig.samples.len(),
            expected: n,
        });
    }
    let mut spectrum = sig.samples.clone();
    FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
    let mag: Vec<f64> = spectrum.iter().map(|c| c.norm()).collect();

    // Complex beat signals of in-band targets sit in the positive half.
    let half = n / 2;
    let (peak, &peak_mag) = mag[..half]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(RadarError::NoPeak)?;
    let mut sorted = mag.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];
    if peak_mag <= 1e-9 * n as f64 || peak_mag < PEAK_TO_MEDIAN_MIN * median {
        return Err(RadarError::NoPeak);
    }

    let left = mag[(peak + n - 1) % n];
    let right = mag[(peak + 1) % n];
    let denom = left - 2.0 * peak_mag + right;
    let offset = if denom.abs() > f64::EPSILON * peak_mag {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let f_if = (peak as f64 + offset) * cfg.sample_rate / n as f64;
    Ok((SPEED_OF_LIGHT * f_if / (2.0 * cfg.slope)).max(0.0))
}

/// cos θ = Δφ·λ / (2π·d), clamped to [-1, 1].
pub fn estimate_aoa(phase_diff: f64, cfg: &ChirpConfig) -> Result<f64, RadarError> {
    let lambda = cfg.wavelength();
    if cfg.antenna_spacing > lambda / 2.0 * (1.0 + 1e-12) {
        return Err(RadarError::AmbiguousSpacing {
            spacing: cfg.antenna_spacing,
            half_wavelength: lambda / 2.0,
        });
    }
    Ok((phase_diff * lambda / (2.0 * PI * cfg.antenna_spacing)).clamp(-1.0, 1.0))
}

/// Inverse of [`estimate_aoa`]: the phase difference a plane wave arriving with
/// direction cosine `cos_theta` produces across adjacent antennas.
pub fn phase_difference(cos_theta: f64, cfg: &ChirpConfig) -> f64 {
    2.0 * PI * cfg.antenna_spacing * cos_theta / cfg.wavelength()
}

/// Unit direction from the two orthogonal-array direction cosines.
pub fn direction_vector(cos_x: f64, cos_y: f64) -> Result<Vector3<f64>, RadarError> {
    let s = cos_x * cos_x + cos_y * cos_y;
    if s > 1.0 + 1e-9 {
        return Err(RadarError::InconsistentAngles(s));
    }
    if s > 1.0 {
        let k = s.sqrt();
        return Ok(Vector3::new(cos_x / k, cos_y / k, 0.0));
    }
    Ok(Vector3::new(cos_x, cos_y, (1.0 - s).sqrt()))
}

/// P_E = t_ER(D·v̄): the radar point expressed in the event-camera frame.
pub fn preliminary_location(
    range: f64,
    direction: &Vector3<f64>,
    t_er: &RigidTransform,
) -> Vector3<f64> {
    t_er.transform_point(&(direction * range))
}

/// One radar measurement tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarDetection {
    pub timestamp: Timestamp,
    /// Distance D (m), radar frame.
    pub range: f64,
    /// Unit direction v̄, radar frame.
    pub direction: Vector3<f64>,
    /// Displacement U_E since the previous detection of the same scatterer, camera frame.
    pub displacement: Vector3<f64>,
    pub snr_db: f64,
}

impl RadarDetection {
    pub fn location(&self, t_er: &RigidTransform) -> Vector3<f64> {
        preliminary_location(self.range, &self.direction, t_er)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    timestamp_us: u64,
    #[serde(rename = "D")]
    range: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    #[serde(rename = "Ux")]
    ux: f64,
    #[serde(rename = "Uy")]
    uy: f64,
    #[serde(rename = "Uz")]
    uz: f64,
    snr: f64,
}

pub fn write_detections_csv<W: Write>(w: W, dets: &[RadarDetection]) -> Result<(), RadarError> {
    let mut wr = csv::Writer::from_writer(w);
    for d in dets {
        wr.serialize(DetectionRow {
            timestamp_us: d.timestamp.0,
            range: d.range,
            vx: d.direction.x,
            vy: d.direction.y,
            vz: d.direction.z,
            ux: d.displacement.x,
            uy: d.displacement.y,
            uz: d.displacement.z,
            snr: d.snr_db,
        })
        .map_err(|e| RadarError::Csv(e.to_string()))?;
    }
    wr.flush().map_err(|e| RadarError::Csv(e.to_string()))
}

pub fn read_detections_csv<R: Read>(r: R) -> Result<Vec<RadarDetection>, RadarError> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<DetectionRow>()
        .map(|row| {
            let row = row.map_err(|e| RadarError::Csv(e.to_string()))?;
            Ok(RadarDetection {
                timestamp: Timestamp(row.timestamp_us),
                range: row.range,
                direction: Vector3::new(row.vx, row.vy, row.vz),
                displacement: Vector3::new(row.ux, row.uy, row.uz),
                snr_db: row.snr,
            })
        })
        .collect()
}

/// Integrates radar displacements into a translation estimate t_EO.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarTrack {
    pub t_eo: Vector3<f64>,
    pub history: Vec<(Timestamp, Vector3<f64>)>,
    /// Per-axis std of the displacement noise, carried for the factor model.
    pub noise_std: f64,
}

impl RadarTrack {
    pub fn new(timestamp: Timestamp, initial: Vector3<f64>, noise_std: f64) -> Self {
        Self {
            t_eo: initial,
            history: vec![(timestamp, initial)],
            noise_std,
        }
    }

    pub fn last_timestamp(&self) -> Timestamp {
        self.history.last().map(|h| h.0).unwrap_or_default()
    }

    /// t_EO ← t_EO + (P_now − P_prev). Returns the displacement U_E.
    pub fn update(
        &mut self,
        timestamp: Timestamp,
        p_now: &Vector3<f64>,
        p_prev: &Vector3<f64>,
    ) -> Result<Vector3<f64>, RadarError> {
        let prev = self.last_timestamp();
        if timestamp <= prev {
            return Err(RadarError::NonMonotoneTime {
                prev,
                now: timestamp,
            });
        }
        let u = p_now - p_prev;
        self.t_eo += u;
        self.history.push((timestamp, self.t_eo));
        Ok(u)
    }
}

pub fn radar_track_update(
    track: &RadarTrack,
    timestamp: Timestamp,
    p_now: &Vector3<f64>,
    p_prev: &Vector3<f64>,
) -> Result<RadarTrack, RadarError> {
    let mut next = track.clone();
    next.update(timestamp, p_now, p_prev)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Chirp whose slope puts a 5 m target exactly on FFT bin 16.
    fn bin16_cfg() -> ChirpConfig {
        let n = 256;
        let fs = 10e6;
        // bin = 2·K·D·n / (c·fs)  ⇒  K = 16·c·fs / (2·5·n)
        let slope = 16.0 * SPEED_OF_LIGHT * fs / (2.0 * 5.0 * n as f64);
        ChirpConfig {
            slope,
            sample_rate: fs,
            n_samples: n,
            ..ChirpConfig::default()
        }
    }

    fn spectrum(sig: &IfSignal) -> Vec<f64> {
        let mut s = sig.samples.clone();
        FftPlanner::new()
            .plan_fft_forward(s.len())
            .process(&mut s);
        s.iter().map(|c| c.norm()).collect()
    }

    #[test]
    fn default_chirp_is_valid() {
        let c = ChirpConfig::default();
        c.validate().unwrap();
        assert!(c.max_range() > 38.0);
        assert!((c.range_resolution() - 0.2998).abs() < 1e-3);
        assert!((c.antenna_spacing - c.wavelength() / 2.0).abs() < 1e-15);
        let bad = ChirpConfig {
            n_samples: 100,
            ..c
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_range_is_a_constant_phasor() {
        let cfg = ChirpConfig::default();
        let sig = mix_to_if(&cfg, 0.0, Timestamp(0)).unwrap();
        assert!(sig
            .samples
            .iter()
            .all(|s| (s - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn five_metres_lands_on_bin_16() {
        let cfg = bin16_cfg();
        let mag = spectrum(&mix_to_if(&cfg, 5.0, Timestamp(0)).unwrap());
        let peak = (0..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
        assert_eq!(peak, 16);
        assert!((estimate_range(&cfg, &mix_to_if(&cfg, 5.0, Timestamp(0)).unwrap()).unwrap() - 5.0).abs() < 5e-6);
    }

    #[test]
    fn two_scatterers_give_two_peaks() {
        let cfg = bin16_cfg();
        let mut sig = mix_to_if(&cfg, 5.0, Timestamp(0)).unwrap();
        sig.add(&mix_to_if(&cfg, 8.0, Timestamp(0)).unwrap());
        let mag = spectrum(&sig);
        // 8 m → bin 16·8/5 = 25.6: energy shared by bins 25 and 26.
        assert!((mag[16] - 256.0).abs() < 40.0);
        assert!(mag[25] > 100.0 && mag[26] > 100.0);
        let floor = mag[60..100].iter().cloned().fold(0.0, f64::max);
        assert!(floor < 20.0);
    }

    #[test]
    fn out_of_band_range_rejected() {
        let cfg = ChirpConfig::default();
        assert!(matches!(
            mix_to_if(&cfg, cfg.max_range() + 1.0, Timestamp(0)),
            Err(RadarError::RangeOutOfBand(_))
        ));
        assert!(mix_to_if(&cfg, -1.0, Timestamp(0)).is_err());
    }

    #[test]
    fn forward_inverse_within_half_bin() {
        let cfg = ChirpConfig::default();
        let half_bin = SPEED_OF_LIGHT * cfg.sample_rate / (4.0 * cfg.slope * cfg.n_samples as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let r = rng.random_range(0.5..cfg.max_range() - 1.0);
            let est = estimate_range(&cfg, &mix_to_if(&cfg, r, Timestamp(0)).unwrap()).unwrap();
            assert!((est - r).abs() <= half_bin, "r={r} est={est}");
        }
    }

    #[test]
    fn on_bin_ranges_are_exact() {
        let cfg = ChirpConfig::default();
        for bin in [1usize, 7, 16, 40, 100] {
            let r = bin as f64 * cfg.range_resolution();
            let est = estimate_range(&cfg, &mix_to_if(&cfg, r, Timestamp(0)).unwrap()).unwrap();
            assert!(((est - r) / r).abs() < 1e-6);
        }
    }

    #[test]
    fn silent_signal_has_no_peak() {
        let cfg = ChirpConfig::default();
        let sig = IfSignal::zeros(cfg.n_samples, Timestamp(0));
        assert_eq!(estimate_range(&cfg, &sig), Err(RadarError::NoPeak));
        let short = IfSignal::zeros(8, Timestamp(0));
        assert!(matches!(
            estimate_range(&cfg, &short),
            Err(RadarError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn noisy_range_within_one_bin_over_seeds() {
        let cfg = ChirpConfig::default();
        // −20 dB white noise: per-sample complex noise power 0.01·α².
        let noise = Normal::new(0.0, (0.01f64 / 2.0).sqrt()).unwrap();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sig = mix_to_if(&cfg, 5.0, Timestamp(0)).unwrap();
            for s in &mut sig.samples {
                *s += Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
            let est = estimate_range(&cfg, &sig).unwrap();
            assert!((est - 5.0).abs() <= cfg.range_resolution(), "seed {seed}: {est}");
        }
    }

    #[test]
    fn aoa_cases() {
        let cfg = ChirpConfig::default();
        assert_eq!(estimate_aoa(0.0, &cfg).unwrap(), 0.0);
        assert!((estimate_aoa(PI, &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert!((estimate_aoa(PI / 2.0, &cfg).unwrap() - 0.5).abs() < 1e-12);
        let wide = ChirpConfig {
            antenna_spacing: cfg.wavelength(),
            ..cfg
        };
        assert!(matches!(
            estimate_aoa(0.1, &wide),
            Err(RadarError::AmbiguousSpacing { .. })
        ));
    }

    #[test]
    fn direction_vector_cases() {
        assert_eq!(direction_vector(0.0, 0.0).unwrap(), Vector3::z());
        assert_eq!(direction_vector(1.0, 0.0).unwrap(), Vector3::x());
        let v = direction_vector(0.6, 0.8).unwrap();
        assert!((v - Vector3::new(0.6, 0.8, 0.0)).norm() < 1e-12);
        assert!(matches!(
            direction_vector(0.8, 0.8),
            Err(RadarError::InconsistentAngles(_))
        ));
    }

    #[test]
    fn preliminary_location_cases() {
        let t = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0));
        assert_eq!(preliminary_location(0.0, &Vector3::z(), &t), Vector3::new(0.1, 0.0, 0.0));
        let p = preliminary_location(5.0, &Vector3::z(), &t);
        assert!((p - Vector3::new(0.1, 0.0, 5.0)).norm() < 1e-15);
    }

    #[test]
    fn preliminary_location_recovers_truth_through_the_forward_model() {
        let cfg = ChirpConfig::default();
        let t_er = RigidTransform::from_translation(Vector3::new(0.05, -0.02, 0.0));
        let truth_e = Vector3::new(0.7, -0.4, 6.3);
        let in_radar = t_er.inverse().transform_point(&truth_e);
        let range = in_radar.norm();
        let dir = in_radar / range;
        let cx = estimate_aoa(phase_difference(dir.x, &cfg), &cfg).unwrap();
        let cy = estimate_aoa(phase_difference(dir.y, &cfg), &cfg).unwrap();
        let v = direction_vector(cx, cy).unwrap();
        let p = preliminary_location(range, &v, &t_er);
        assert!((p - truth_e).norm() < 1e-9);
    }

    #[test]
    fn radar_track_integration() {
        let mut tr = RadarTrack::new(Timestamp(0), Vector3::new(0.0, 0.0, 5.0), 0.03);
        let p = Vector3::new(0.3, 0.3, 0.3);
        tr.update(Timestamp(10), &p, &p).unwrap();
        assert_eq!(tr.t_eo, Vector3::new(0.0, 0.0, 5.0));
        let u = tr
            .update(Timestamp(20), &Vector3::new(0.0, 0.0, 4.9), &Vector3::new(0.0, 0.0, 5.0))
            .unwrap();
        assert!((u.z + 0.1).abs() < 1e-12);
        assert!((tr.t_eo - Vector3::new(0.0, 0.0, 4.9)).norm() < 1e-12);
        assert!(matches!(
            tr.update(Timestamp(20), &p, &p),
            Err(RadarError::NonMonotoneTime { .. })
        ));
    }

    #[test]
    fn hundred_constant_steps_telescope() {
        let start = Vector3::new(0.0, 0.0, 10.0);
        let mut tr = RadarTrack::new(Timestamp(0), start, 0.0);
        let step = Vector3::new(0.0, 0.0, -0.05);
        let mut prev = start;
        for k in 1..=100u64 {
            let now = start + step * k as f64;
            tr = radar_track_update(&tr, Timestamp(k * 5000), &now, &prev).unwrap();
            prev = now;
        }
        assert!((tr.t_eo.z - 5.0).abs() < 1e-9);
        assert_eq!(tr.history.len(), 101);
    }

    #[test]
    fn csv_round_trip() {
        let d = RadarDetection {
            timestamp: Timestamp(5000),
            range: 5.25,
            direction: Vector3::new(0.0, 0.6, 0.8),
            displacement: Vector3::new(0.0, 0.0, -0.01),
            snr_db: 21.5,
        };
        let mut buf = Vec::new();
        write_detections_csv(&mut buf, &[d]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp_us,D,vx,vy,vz,Ux,Uy,Uz,snr"));
        assert_eq!(read_detections_csv(&buf[..]).unwrap(), vec![d]);
    }

    proptest! {
        #[test]
        fn direction_is_unit(cx in -1.0f64..1.0, frac in 0.0f64..1.0, sign in prop::bool::ANY) {
            let max_cy = (1.0 - cx * cx).sqrt();
            let cy = if sign { frac * max_cy } else { -frac * max_cy };
            let v = direction_vector(cx, cy).unwrap();
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            prop_assert!(v.z >= 0.0);
        }

        #[test]
        fn aoa_inverts_phase_difference(c in -1.0f64..1.0) {
            let cfg = ChirpConfig::default();
            let est = estimate_aoa(phase_difference(c, &cfg), &cfg).unwrap();
            prop_assert!((est - c).abs() < 1e-12);
        }
    }
}
