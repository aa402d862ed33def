use nalgebra::{Vector2, Vector3};

use super::factors::{jacobian_et, jacobian_rt, residual_et, residual_prior, residual_rt, Factor};
use super::noise::{huber_rho, huber_weight, NoiseModel};
use super::qr::SquareRootInfo;
use super::GajoError;
use crate::geometry::{CameraIntrinsics, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVariable {
    pub t_ed: Vector3<f64>,
    pub timestamp: Timestamp,
    /// Value at which the rows currently held in the square-root factor were computed.
    pub linearization_point: Vector3<f64>,
}

/// One whitened row of the linear system, nonzero on `len` columns from `start`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub start: usize,
    pub len: usize,
    pub coeffs: [f64; 9],
    pub rhs: f64,
}

/// Poses and factors over a sliding window. Variables before `first_active`
/// are frozen: they keep their value and only enter factors as constants.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub noise: NoiseModel,
    pub intrinsics: CameraIntrinsics,
    vars: Vec<PoseVariable>,
    factors: Vec<Factor>,
    first_active: usize,
}

impl FactorGraph {
    pub fn new(noise: NoiseModel, intrinsics: CameraIntrinsics) -> Self {
        Self {
            noise,
            intrinsics,
            vars: Vec::new(),
            factors: Vec::new(),
            first_active: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn first_active(&self) -> usize {
        self.first_active
    }

    pub fn active_len(&self) -> usize {
        self.vars.len() - self.first_active
    }

    pub fn vars(&self) -> &[PoseVariable] {
        &self.vars
    }

    pub fn var_mut(&mut self, i: usize) -> &mut PoseVariable {
        &mut self.vars[i]
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Adds a pose initialized (and linearized) at `init`; returns its index.
    pub fn add_variable(&mut self, timestamp: Timestamp, init: Vector3<f64>) -> usize {
        self.vars.push(PoseVariable {
            t_ed: init,
            timestamp,
            linearization_point: init,
        });
        self.vars.len() - 1
    }

    /// Adds a pose that is frozen from the start. Only valid before any active pose exists.
    pub fn add_fixed(&mut self, timestamp: Timestamp, value: Vector3<f64>) -> usize {
        assert_eq!(self.active_len(), 0, "fixed poses must precede active ones");
        let i = self.add_variable(timestamp, value);
        self.first_active = self.vars.len();
        i
    }

    pub fn add_factor(&mut self, f: Factor) {
        let (lo, hi) = f.span();
        assert!(hi < self.vars.len(), "factor references a missing pose");
        assert!(hi >= self.first_active || lo >= self.first_active, "factor only touches frozen poses");
        self.factors.push(f);
    }

    /// Freezes the `k` oldest active poses at their current values and drops
    /// factors that no longer touch an active pose.
    pub fn freeze_oldest(&mut self, k: usize) {
        let k = k.min(self.active_len());
        for v in &mut self.vars[self.first_active..self.first_active + k] {
            v.linearization_point = v.t_ed;
        }
        self.first_active += k;
        let fa = self.first_active;
        self.factors.retain(|f| f.span().1 >= fa);
    }

    /// Column of the first coordinate of active pose `var`.
    pub fn column(&self, var: usize) -> usize {
        3 * (var - self.first_active)
    }

    pub fn values(&self) -> Vec<Vector3<f64>> {
        self.vars.iter().map(|v| v.t_ed).collect()
    }

    pub fn active_values(&self) -> Vec<Vector3<f64>> {
        self.vars[self.first_active..].iter().map(|v| v.t_ed).collect()
    }

    pub fn set_active_values(&mut self, values: &[Vector3<f64>]) {
        assert_eq!(values.len(), self.active_len());
        for (v, x) in self.vars[self.first_active..].iter_mut().zip(values) {
            v.t_ed = *x;
        }
    }

    /// Moves every active linearization point to the current value.
    pub fn relinearize_all(&mut self) {
        for v in &mut self.vars[self.first_active..] {
            v.linearization_point = v.t_ed;
        }
    }

    /// Value to evaluate pose `i` at: frozen poses use their value, active
    /// ones either the value or the linearization point.
    fn at(&self, i: usize, use_lin: bool) -> Vector3<f64> {
        let v = &self.vars[i];
        if use_lin && i >= self.first_active {
            v.linearization_point
        } else {
            v.t_ed
        }
    }

    /// Total energy (sum of whitened, robustified squared residuals) of the
    /// factors touching active poses, evaluated at current values.
    pub fn energy(&self) -> Result<f64, GajoError> {
        let mut e = 0.0;
        for f in &self.factors {
            e += self.factor_energy(f, |i| self.at(i, false))?;
        }
        Ok(e)
    }

    /// Energy of one factor with poses supplied by `pose`.
    pub fn factor_energy(
        &self,
        f: &Factor,
        pose: impl Fn(usize) -> Vector3<f64>,
    ) -> Result<f64, GajoError> {
        let n = &self.noise;
        Ok(match f {
            Factor::Prior { vars } => {
                residual_prior(&pose(vars[2]), &pose(vars[1]), &pose(vars[0])).norm_squared()
                    / n.sigma_ted.powi(2)
            }
            Factor::Et { var, pixel } => {
                let r = residual_et(&pose(*var), pixel, &self.intrinsics)?;
                huber_rho(r.norm(), n.huber_k) / n.sigma_et.powi(2)
            }
            Factor::Rt {
                var,
                range,
                direction,
                motion,
            } => {
                let t = pose(*var);
                let prev = if motion.is_some() { pose(var - 1) } else { t };
                let r = residual_rt(&t, &prev, *range, direction, &motion.unwrap_or_default())?;
                let mut e = r[0].powi(2) / n.sigma_d.powi(2)
                    + r.fixed_rows::<3>(1).norm_squared() / n.sigma_v.powi(2);
                if motion.is_some() {
                    e += r.fixed_rows::<3>(4).norm_squared() / n.sigma_ue.powi(2);
                }
                e
            }
        })
    }

    /// Whitened rows `A δ ≈ b` of one factor linearized at the linearization
    /// points (`use_lin`) or at the current values.
    pub fn linearize(&self, f: &Factor, use_lin: bool, out: &mut Vec<Row>) -> Result<(), GajoError> {
        let n = &self.noise;
        let pose = |i: usize| self.at(i, use_lin);
        let (lo, hi) = f.span();
        let first = lo.max(self.first_active);
        let start = self.column(first);
        let offset = |var: usize| (var >= self.first_active).then(|| 3 * (var - first));
        let mut push = |blocks: &[(usize, [f64; 3])], r: f64, s: f64| {
            let mut row = Row {
                start,
                len: 3 * (hi + 1 - first),
                coeffs: [0.0; 9],
                rhs: -r / s,
            };
            for (var, j) in blocks {
                if let Some(o) = offset(*var) {
                    for k in 0..3 {
                        row.coeffs[o + k] = j[k] / s;
                    }
                }
            }
            out.push(row);
        };
        match f {
            Factor::Prior { vars } => {
                let r = residual_prior(&pose(vars[2]), &pose(vars[1]), &pose(vars[0]));
                for a in 0..3 {
                    let mut e = [0.0; 3];
                    e[a] = 1.0;
                    let m2 = [-2.0 * e[0], -2.0 * e[1], -2.0 * e[2]];
                    push(&[(vars[0], e), (vars[1], m2), (vars[2], e)], r[a], n.sigma_ted);
                }
            }
            Factor::Et { var, pixel } => {
                let t = pose(*var);
                let r = residual_et(&t, pixel, &self.intrinsics)?;
                let j = jacobian_et(&t, &self.intrinsics);
                let s = n.sigma_et / huber_weight(r.norm(), n.huber_k).sqrt();
                for a in 0..2 {
                    push(&[(*var, [j[(a, 0)], j[(a, 1)], j[(a, 2)]])], r[a], s);
                }
            }
            Factor::Rt {
                var,
                range,
                direction,
                motion,
            } => {
                let t = pose(*var);
                let prev = if motion.is_some() { pose(var - 1) } else { t };
                let r = residual_rt(&t, &prev, *range, direction, &motion.unwrap_or_default())?;
                let (ji, jp) = jacobian_rt(&t);
                let rows = if motion.is_some() { 7 } else { 4 };
                for a in 0..rows {
                    let s = match a {
                        0 => n.sigma_d,
                        1..=3 => n.sigma_v,
                        _ => n.sigma_ue,
                    };
                    let bi = [ji[(a, 0)], ji[(a, 1)], ji[(a, 2)]];
                    if a >= 4 {
                        let bp = [jp[(a, 0)], jp[(a, 1)], jp[(a, 2)]];
                        push(&[(var - 1, bp), (*var, bi)], r[a], s);
                    } else {
                        push(&[(*var, bi)], r[a], s);
                    }
                }
            }
        }
        Ok(())
    }

    /// Rows of every factor touching an active pose.
    pub fn linearize_all(&self, use_lin: bool) -> Result<Vec<Row>, GajoError> {
        let mut rows = Vec::with_capacity(self.factors.len() * 4);
        for f in &self.factors {
            self.linearize(f, use_lin, &mut rows)?;
        }
        Ok(rows)
    }

    /// Square-root information factor of the active window at the chosen point.
    pub fn build_sqrt_info(&self, use_lin: bool) -> Result<SquareRootInfo, GajoError> {
        let mut info = SquareRootInfo::new(3 * self.active_len());
        for row in self.linearize_all(use_lin)? {
            info.add_row(row.start, &row.coeffs[..row.len], row.rhs);
        }
        Ok(info)
    }

    /// Projection of pose `i` at its current value, if in front of the camera.
    pub fn projected(&self, i: usize) -> Option<Vector2<f64>> {
        self.intrinsics.project(&self.vars[i].t_ed).ok()
    }
}
