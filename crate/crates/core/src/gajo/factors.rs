//! Residuals and analytic Jacobians. The free functions return raw,
//! unwhitened residuals; whitening and robust weighting happen when a
//! [`Factor`] is linearized inside the graph.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GajoError;
use crate::geometry::CameraIntrinsics;

/// Below this distance from the camera center the bearing of a pose is undefined.
pub const RADIUS_EPSILON: f64 = 1e-6;

/// Poses closer to the image plane than this are treated as unobservable by
/// the camera, m. Keeps the projection Jacobian bounded.
pub const NEAR_PLANE: f64 = 0.01;

/// Constant-velocity prior: `t_i − (2·t_{i−1} − t_{i−2})`. Its Jacobians are
/// the constants `I`, `−2I`, `I`.
pub fn residual_prior(t_i: &Vector3<f64>, t_im1: &Vector3<f64>, t_im2: &Vector3<f64>) -> Vector3<f64> {
    t_i - (2.0 * t_im1 - t_im2)
}

/// Derivatives of [`residual_prior`] with respect to `t_i`, `t_{i−1}`, `t_{i−2}`.
pub fn jacobian_prior() -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let i = Matrix3::identity();
    (i, -2.0 * i, i)
}

/// Box-center reprojection error `x_meas − π(t)`, taking the tracked center as
/// the projection of the drone origin.
pub fn residual_et(
    t: &Vector3<f64>,
    x_meas: &Vector2<f64>,
    intr: &CameraIntrinsics,
) -> Result<Vector2<f64>, GajoError> {
    if t.z < NEAR_PLANE {
        return Err(GajoError::PointBehindCamera(t.z));
    }
    let p = intr.project(t).map_err(|_| GajoError::PointBehindCamera(t.z))?;
    Ok(x_meas - p)
}

/// Derivative of [`residual_et`] with respect to `t`.
pub fn jacobian_et(t: &Vector3<f64>, intr: &CameraIntrinsics) -> Matrix2x3<f64> {
    -intr.project_jacobian(t)
}

/// Radar residual stacked as (range, direction, displacement):
/// `(‖t_i‖ − D, t_i/‖t_i‖ − v̄, (t_i − t_{i−1}) − U_E)`.
pub fn residual_rt(
    t_i: &Vector3<f64>,
    t_im1: &Vector3<f64>,
    range: f64,
    direction: &Vector3<f64>,
    motion: &Vector3<f64>,
) -> Result<SVector<f64, 7>, GajoError> {
    let n = t_i.norm();
    if n <= RADIUS_EPSILON {
        return Err(GajoError::DegenerateOrigin);
    }
    let u = t_i / n;
    let mut r = SVector::<f64, 7>::zeros();
    r[0] = n - range;
    r.fixed_rows_mut::<3>(1).copy_from(&(u - direction));
    r.fixed_rows_mut::<3>(4).copy_from(&((t_i - t_im1) - motion));
    Ok(r)
}

/// Jacobians of [`residual_rt`] with respect to `t_i` and `t_{i−1}`.
pub fn jacobian_rt(t_i: &Vector3<f64>) -> (SMatrix<f64, 7, 3>, SMatrix<f64, 7, 3>) {
    let n = t_i.norm();
    let u = t_i / n;
    let mut ji = SMatrix::<f64, 7, 3>::zeros();
    let mut jp = SMatrix::<f64, 7, 3>::zeros();
    ji.fixed_view_mut::<1, 3>(0, 0).copy_from(&u.transpose());
    ji.fixed_view_mut::<3, 3>(1, 0)
        .copy_from(&((Matrix3::identity() - u * u.transpose()) / n));
    ji.fixed_view_mut::<3, 3>(4, 0).copy_from(&Matrix3::identity());
    jp.fixed_view_mut::<3, 3>(4, 0).copy_from(&(-Matrix3::identity()));
    (ji, jp)
}

/// Radar part of one window's measurements, already re-expressed from the
/// camera center: `range = ‖P_E‖`, `direction = P_E/‖P_E‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarMeasurement {
    pub range: f64,
    pub direction: Vector3<f64>,
    /// Displacement since the previous window, when the radar tracked the
    /// drone in both.
    pub motion: Option<Vector3<f64>>,
}

impl RadarMeasurement {
    pub fn from_point(p: &Vector3<f64>, motion: Option<Vector3<f64>>) -> Self {
        let range = p.norm();
        Self {
            range,
            direction: if range > 0.0 { p / range } else { Vector3::z() },
            motion,
        }
    }

    pub fn point(&self) -> Vector3<f64> {
        self.direction * self.range
    }
}

/// Everything observed for one pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub pixel: Option<Vector2<f64>>,
    pub radar: Option<RadarMeasurement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactorKind {
    Prior,
    Et,
    Rt,
}

/// Factor nodes referencing pose variables by global index. Connected
/// variables are always consecutive.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    /// Poses `[i−2, i−1, i]`.
    Prior { vars: [usize; 3] },
    Et { var: usize, pixel: Vector2<f64> },
    /// When `motion` is present the factor also touches `var − 1`.
    Rt {
        var: usize,
        range: f64,
        direction: Vector3<f64>,
        motion: Option<Vector3<f64>>,
    },
}

impl Factor {
    pub fn kind(&self) -> FactorKind {
        match self {
            Factor::Prior { .. } => FactorKind::Prior,
            Factor::Et { .. } => FactorKind::Et,
            Factor::Rt { .. } => FactorKind::Rt,
        }
    }

    /// Inclusive range of connected variable indices.
    pub fn span(&self) -> (usize, usize) {
        match *self {
            Factor::Prior { vars } => (vars[0], vars[2]),
            Factor::Et { var, .. } => (var, var),
            Factor::Rt { var, motion, .. } => (if motion.is_some() { var - 1 } else { var }, var),
        }
    }

    /// Factors contributed by one window's measurements for pose `var`.
    pub fn for_pose(var: usize, m: &Measurement, with_prior: bool) -> Vec<Factor> {
        let mut out = Vec::with_capacity(3);
        if with_prior && var >= 2 {
            out.push(Factor::Prior {
                vars: [var - 2, var - 1, var],
            });
        }
        if let Some(pixel) = m.pixel {
            out.push(Factor::Et { var, pixel });
        }
        if let Some(r) = m.radar {
            out.push(Factor::Rt {
                var,
                range: r.range,
                direction: r.direction,
                motion: if var >= 1 { r.motion } else { None },
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn prior_cases() {
        let z = |v: f64| Vector3::new(0.0, 0.0, v);
        assert_eq!(residual_prior(&z(4.0), &z(5.0), &z(6.0)), Vector3::zeros());
        let r = residual_prior(&z(4.2), &z(5.0), &z(6.0));
        assert!((r - z(0.2)).norm() < 1e-12);
        let s = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(residual_prior(&s, &s, &s), Vector3::zeros());
    }

    #[test]
    fn et_cases() {
        let t = Vector3::new(0.0, 0.0, 5.0);
        assert_eq!(residual_et(&t, &Vector2::new(320.0, 240.0), &intr()).unwrap(), Vector2::zeros());
        let r = residual_et(&t, &Vector2::new(322.0, 240.0), &intr()).unwrap();
        assert!((r - Vector2::new(2.0, 0.0)).norm() < 1e-12);
        assert!(matches!(
            residual_et(&Vector3::new(0.0, 0.0, -1.0), &Vector2::zeros(), &intr()),
            Err(GajoError::PointBehindCamera(_))
        ));
    }

    #[test]
    fn rt_cases() {
        let t = Vector3::new(0.0, 0.0, 5.0);
        let prev = Vector3::new(0.0, 0.0, 5.1);
        let u = Vector3::new(0.0, 0.0, -0.1);
        let exact = residual_rt(&t, &prev, 5.0, &Vector3::z(), &u).unwrap();
        assert!(exact.norm() < 1e-12);
        let r = residual_rt(&t, &prev, 4.9, &Vector3::z(), &u).unwrap();
        assert!((r[0] - 0.1).abs() < 1e-12);
        let t2 = Vector3::new(3.0, 0.0, 4.0);
        let r = residual_rt(&t2, &t2, 5.0, &Vector3::new(0.6, 0.0, 0.8), &Vector3::zeros()).unwrap();
        assert!(r.fixed_rows::<3>(1).norm() < 1e-15);
        assert_eq!(
            residual_rt(&Vector3::zeros(), &prev, 1.0, &Vector3::z(), &u),
            Err(GajoError::DegenerateOrigin)
        );
    }

    #[test]
    fn factors_for_pose() {
        let m = Measurement {
            pixel: Some(Vector2::new(1.0, 2.0)),
            radar: Some(RadarMeasurement::from_point(&Vector3::new(0.0, 0.0, 2.0), Some(Vector3::zeros()))),
        };
        let f = Factor::for_pose(5, &m, true);
        assert_eq!(
            f.iter().map(Factor::kind).collect::<Vec<_>>(),
            vec![FactorKind::Prior, FactorKind::Et, FactorKind::Rt]
        );
        assert_eq!(f[0].span(), (3, 5));
        assert_eq!(f[2].span(), (4, 5));
        // The first pose has no predecessor, so its displacement is dropped.
        let f0 = Factor::for_pose(0, &m, true);
        assert_eq!(f0.len(), 2);
        assert_eq!(f0[1].span(), (0, 0));
    }

    fn central_difference<const R: usize>(
        f: impl Fn(&Vector3<f64>) -> SVector<f64, R>,
        x: &Vector3<f64>,
    ) -> SMatrix<f64, R, 3> {
        let mut j = SMatrix::<f64, R, 3>::zeros();
        for k in 0..3 {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut a = *x;
            let mut b = *x;
            a[k] += h;
            b[k] -= h;
            j.set_column(k, &((f(&a) - f(&b)) / (2.0 * h)));
        }
        j
    }

    fn rel_err<const R: usize>(a: &SMatrix<f64, R, 3>, b: &SMatrix<f64, R, 3>) -> f64 {
        (a - b).norm() / b.norm().max(1.0)
    }

    proptest! {
        #[test]
        fn et_jacobian_matches_finite_differences(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in 1.0f64..20.0,
        ) {
            let t = Vector3::new(x, y, z);
            let meas = Vector2::new(300.0, 200.0);
            let fd = central_difference(|p| residual_et(p, &meas, &intr()).unwrap(), &t);
            prop_assert!(rel_err(&jacobian_et(&t, &intr()), &fd) < 1e-5);
        }

        #[test]
        fn rt_jacobian_matches_finite_differences(
            a in prop::array::uniform3(-5.0f64..5.0), b in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let ti = Vector3::from(a) + Vector3::new(0.0, 0.0, 6.0);
            let tp = Vector3::from(b);
            let (d, v, u) = (4.0, Vector3::new(0.1, 0.2, 0.97).normalize(), Vector3::new(0.0, 0.1, -0.1));
            let (ji, jp) = jacobian_rt(&ti);
            let fdi = central_difference(|p| residual_rt(p, &tp, d, &v, &u).unwrap(), &ti);
            let fdp = central_difference(|p| residual_rt(&ti, p, d, &v, &u).unwrap(), &tp);
            prop_assert!(rel_err(&ji, &fdi) < 1e-5);
            prop_assert!(rel_err(&jp, &fdp) < 1e-5);
        }
    }
}
