use serde::{Deserialize, Serialize};

/// Standard deviations for every factor, plus the Huber threshold applied to
/// the event-tracking residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Constant-velocity prior, m.
    pub sigma_ted: f64,
    /// Box-center measurement, px per axis.
    pub sigma_et: f64,
    /// Radar range, m.
    pub sigma_d: f64,
    /// Radar direction, per unit-vector component.
    pub sigma_v: f64,
    /// Radar displacement, m per axis.
    pub sigma_ue: f64,
    /// Huber threshold on the pixel residual norm, px.
    pub huber_k: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_ted: 0.001,
            sigma_et: 2.0,
            sigma_d: 0.05,
            sigma_v: 0.01,
            sigma_ue: 0.03,
            huber_k: 5.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> bool {
        [self.sigma_ted, self.sigma_et, self.sigma_d, self.sigma_v, self.sigma_ue, self.huber_k]
            .iter()
            .all(|s| *s > 0.0 && !s.is_nan())
    }
}

/// Huber loss of a residual whose norm is `norm`: `n²` inside the threshold,
/// `2kn − k²` outside. Convex, C¹ and quadratic near zero.
pub fn huber_rho(norm: f64, k: f64) -> f64 {
    if norm <= k {
        norm * norm
    } else {
        2.0 * k * norm - k * k
    }
}

/// Iteratively-reweighted least-squares weight so that `w·n² ` has the same
/// gradient as [`huber_rho`] at `n`.
pub fn huber_weight(norm: f64, k: f64) -> f64 {
    if norm <= k {
        1.0
    } else {
        k / norm
    }
}
