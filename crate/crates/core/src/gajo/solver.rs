use nalgebra::Vector3;

use super::factors::{Factor, Measurement};
use super::graph::FactorGraph;
use super::noise::NoiseModel;
use super::qr::SquareRootInfo;
use super::GajoError;
use crate::geometry::{CameraIntrinsics, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnSettings {
    pub max_iterations: usize,
    /// Converged once the Gauss-Newton step is shorter than this, m.
    pub step_tol: f64,
    pub max_halvings: usize,
}

impl Default for GnSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tol: 1e-10,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GnOutcome {
    pub iterations: usize,
    pub energy: f64,
    pub converged: bool,
    /// Factor linearized at the returned values.
    pub sqrt_info: SquareRootInfo,
}

/// Gauss-Newton on the active window with step halving, so accepted
/// iterations never increase the energy. Leaves every linearization point at
/// the returned values.
pub fn gauss_newton(graph: &mut FactorGraph, settings: &GnSettings) -> Result<GnOutcome, GajoError> {
    let mut energy = graph.energy()?;
    let mut iterations = 0;
    loop {
        graph.relinearize_all();
        let sqrt_info = graph.build_sqrt_info(true)?;
        let delta = sqrt_info.solve()?;
        if delta.norm() < settings.step_tol || iterations >= settings.max_iterations {
            return Ok(GnOutcome {
                iterations,
                energy,
                converged: delta.norm() < settings.step_tol,
                sqrt_info,
            });
        }
        iterations += 1;
        let base = graph.active_values();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=settings.max_halvings {
            let trial: Vec<Vector3<f64>> = base
                .iter()
                .enumerate()
                .map(|(k, b)| b + alpha * Vector3::new(delta[3 * k], delta[3 * k + 1], delta[3 * k + 2]))
                .collect();
            graph.set_active_values(&trial);
            match graph.energy() {
                Ok(e) if e <= energy => {
                    energy = e;
                    accepted = true;
                    break;
                }
                _ => alpha *= 0.5,
            }
        }
        if !accepted {
            // No descent along the step: we are at a minimum to working precision.
            graph.set_active_values(&base);
            graph.relinearize_all();
            let sqrt_info = graph.build_sqrt_info(true)?;
            return Ok(GnOutcome {
                iterations,
                energy,
                converged: true,
                sqrt_info,
            });
        }
    }
}

/// Jointly optimizes the active window starting from `init`.
pub fn local_optimize(graph: &FactorGraph, init: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>, GajoError> {
    let mut g = graph.clone();
    g.set_active_values(init);
    gauss_newton(&mut g, &GnSettings::default())?;
    Ok(g.active_values())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterSaeEstimate {
    pub t_ed: Vector3<f64>,
    pub iterations: usize,
    /// False when the iteration cap was hit; `t_ed` is then the best iterate.
    pub converged: bool,
}

/// Single-pose estimate from the two previous poses (`history[0]` is the most
/// recent) and this window's measurements, started from the constant-velocity
/// prediction.
pub fn inter_sae_track(
    history: [Option<Vector3<f64>>; 2],
    measurement: &Measurement,
    timestamp: Timestamp,
    noise: &NoiseModel,
    intrinsics: &CameraIntrinsics,
) -> Result<InterSaeEstimate, GajoError> {
    let init = match history {
        [Some(a), Some(b)] => 2.0 * a - b,
        [Some(a), None] => a,
        _ => match measurement.radar {
            Some(r) => r.point(),
            None => return Err(GajoError::InsufficientHistory),
        },
    };
    let mut g = FactorGraph::new(*noise, *intrinsics);
    let known: Vec<Vector3<f64>> = match history {
        [Some(a), Some(b)] => vec![b, a],
        [Some(a), None] => vec![a],
        _ => vec![],
    };
    for p in &known {
        g.add_fixed(timestamp, *p);
    }
    let var = g.add_variable(timestamp, init);
    for f in Factor::for_pose(var, measurement, known.len() == 2) {
        g.add_factor(f);
    }
    let settings = GnSettings {
        max_iterations: 20,
        step_tol: 1e-8,
        ..GnSettings::default()
    };
    let out = gauss_newton(&mut g, &settings)?;
    Ok(InterSaeEstimate {
        t_ed: g.vars()[var].t_ed,
        iterations: out.iterations,
        converged: out.converged,
    })
}
