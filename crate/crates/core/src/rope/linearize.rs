//! Exact rollout sensitivities by forward accumulation of the per-step
//! implicit-function-theorem systems.

use nalgebra::{DMatrix, DVector, Vector3};

use super::model::{jacobians, StepInputs};
use super::sim::{bracket, newton, rollout, solve_kkt, static_hanging_state, Rollout};
use super::{RopeParams, RopeState};
use crate::arm::{forward_kinematics, tip_jacobian, ChainSpec, ConfigVector};
use crate::curvekit::{spline_knot_jacobian, CommandSpline, NUM_VARS};
use crate::{Error, Result};

/// Command sample period of the arm controller (250 Hz).
pub const COMMAND_DT: f64 = 0.004;

/// Fingertip positions on the command grid with their knot derivatives.
#[derive(Debug, Clone)]
pub struct TipPath {
    pub times: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
    /// d tip / d knots, 3 x 80 per sample.
    pub jacobians: Vec<DMatrix<f64>>,
}

pub fn tip_path(chain: &ChainSpec, command: &CommandSpline) -> Result<TipPath> {
    let times = command.sample_times(COMMAND_DT);
    let mut positions = Vec::with_capacity(times.len());
    let mut jacs = Vec::with_capacity(times.len());
    for &t in &times {
        let q: ConfigVector = command.eval(t, 0)?;
        positions.push(forward_kinematics(chain, &q, &ConfigVector::zeros()).position);
        let lin = DMatrix::from_fn(3, q.len(), |r, c| tip_jacobian(chain, &q)[(r, c)]);
        jacs.push(spline_knot_jacobian(command, t, 0)?.left_mul(&lin));
    }
    Ok(TipPath { times, positions, jacobians: jacs })
}

impl TipPath {
    /// Linear interpolation weights of time `t` on the (possibly end-clamped) grid.
    fn weights(&self, t: f64) -> (usize, usize, f64) {
        let last = self.times.len() - 1;
        if t >= self.times[last] {
            return (last, last, 0.0);
        }
        let m = ((t / COMMAND_DT + 1e-9).floor() as usize).min(last - 1);
        let w = ((t - self.times[m]) / (self.times[m + 1] - self.times[m])).clamp(0.0, 1.0);
        (m, m + 1, w)
    }

    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        let (a, b, w) = self.weights(t);
        self.positions[a] * (1.0 - w) + self.positions[b] * w
    }

    pub fn jacobian_at(&self, t: f64) -> DMatrix<f64> {
        let (a, b, w) = self.weights(t);
        &self.jacobians[a] * (1.0 - w) + &self.jacobians[b] * w
    }

    /// Tip positions on the rope grid `0, dt, ..., steps * dt`.
    pub fn resample(&self, dt: f64, steps: usize) -> Vec<Vector3<f64>> {
        (0..=steps).map(|k| self.position_at(k as f64 * dt)).collect()
    }
}

/// Propagates `d[p; v] / d theta` through the rollout up to state `last`.
///
/// `seed(k)` returns `d tip_k / d theta` and `s0` the sensitivity of the
/// initial `[p; v]`. Each step solves `J_new S' = -(J_prev S + J_tip' D' + J_tip D)`.
fn forward_sensitivities<F>(
    params: &RopeParams,
    run: &Rollout,
    seed: F,
    s0: DMatrix<f64>,
    last: usize,
) -> Result<Vec<DMatrix<f64>>>
where
    F: Fn(usize) -> DMatrix<f64>,
{
    let n = params.links;
    let mut out = Vec::with_capacity(last + 1);
    out.push(s0);
    let mut d_prev = seed(0);
    for k in 0..last {
        let d_next = seed(k + 1);
        let subs = run.substeps[k];
        let h = params.dt / subs as f64;
        let (t0, t1) = (run.tips[k], run.tips[k + 1]);
        let mut state = run.states[k].clone();
        let mut s = out[k].clone();
        for j in 0..subs {
            let (a, b) = (j as f64 / subs as f64, (j + 1) as f64 / subs as f64);
            let inp = StepInputs {
                params,
                h,
                prev: &state,
                tip_prev: t0 + (t1 - t0) * a,
                tip_next: t0 + (t1 - t0) * b,
            };
            let next = if subs == 1 { run.states[k + 1].clone() } else { newton(&inp, k + 1)? };
            let jac = jacobians(&inp, &next, true);
            let da = &d_prev * (1.0 - a) + &d_next * a;
            let db = &d_prev * (1.0 - b) + &d_next * b;
            let rhs = &jac.prev * &s + &jac.tip_next * db + &jac.tip_prev * da;
            let full = solve_kkt(jac.new, -rhs, k + 1)?;
            s = full.rows(0, 6 * n).into_owned();
            state = next;
        }
        out.push(s);
        d_prev = d_next;
    }
    Ok(out)
}

/// `d[p(t_c); v(t_c)] / d tips` for a rollout from the fixed state `z0`.
/// Column block `3k..3k+3` belongs to `tips[k]`; blocks after the critical
/// index are zero.
pub fn linearize_rollout(
    params: &RopeParams,
    z0: &RopeState,
    tips: &[Vector3<f64>],
    critical_index: usize,
) -> Result<DMatrix<f64>> {
    if critical_index >= tips.len() {
        return Err(Error::Domain(format!(
            "critical index {critical_index} outside a {}-sample trajectory",
            tips.len()
        )));
    }
    let n = params.links;
    let cols = 3 * tips.len();
    let mut out = DMatrix::zeros(6 * n, cols);
    if critical_index == 0 {
        return Ok(out);
    }
    let run = rollout(params, z0, &tips[..=critical_index])?;
    let width = 3 * (critical_index + 1);
    let seed = |k: usize| {
        let mut d = DMatrix::zeros(3, width);
        for a in 0..3 {
            d[(a, 3 * k + a)] = 1.0;
        }
        d
    };
    let sens = forward_sensitivities(params, &run, seed, DMatrix::zeros(6 * n, width), critical_index)?;
    out.columns_mut(0, width).copy_from(&sens[critical_index]);
    Ok(out)
}

/// Linearization of the critical-point state with respect to the command knots.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    /// `d[p(t_c); v(t_c)] / d knots`, 6N x 80.
    pub m: DMatrix<f64>,
    /// Predicted `[p(t_c); v(t_c)]`.
    pub state: DVector<f64>,
    pub t_c: f64,
    pub command: CommandSpline,
    pub rollout: Rollout,
}

/// Simulates the model rope under `command`, starting at rest hanging from
/// the initial fingertip, and returns the predicted `[p; v]` and its knot
/// derivative at each requested time. The initial state moves with the first
/// fingertip position, so its sensitivity is included.
pub fn linearize_system_at(
    chain: &ChainSpec,
    command: &CommandSpline,
    params: &RopeParams,
    times: &[f64],
) -> Result<(Rollout, Vec<(DVector<f64>, DMatrix<f64>)>)> {
    params.validate()?;
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    if times.iter().any(|t| !(*t >= 0.0) || *t > command.duration() + 1e-9) {
        return Err(Error::Domain(format!(
            "linearization times must lie in [0, {}]",
            command.duration()
        )));
    }
    let path = tip_path(chain, command)?;
    let steps = ((horizon / params.dt) - 1e-9).ceil().max(0.0) as usize;
    let tips = path.resample(params.dt, steps);
    let z0 = static_hanging_state(params, &tips[0]);
    let run = rollout(params, &z0, &tips)?;

    let n = params.links;
    let seeds: Vec<DMatrix<f64>> = (0..=steps).map(|k| path.jacobian_at(k as f64 * params.dt)).collect();
    let mut s0 = DMatrix::zeros(6 * n, NUM_VARS);
    for i in 0..n {
        s0.rows_mut(3 * i, 3).copy_from(&seeds[0]);
    }
    let sens = forward_sensitivities(params, &run, |k| seeds[k].clone(), s0, steps)?;

    let out = times
        .iter()
        .map(|&t| {
            let (k, w) = bracket(t, params.dt, run.len());
            if w == 0.0 {
                (run.states[k].observation(), sens[k].clone())
            } else {
                (run.observation_at(t), &sens[k] * (1.0 - w) + &sens[k + 1] * w)
            }
        })
        .collect();
    Ok((run, out))
}

pub fn linearize_system(
    chain: &ChainSpec,
    command: &CommandSpline,
    params: &RopeParams,
    t_c: f64,
) -> Result<LinearizedSystem> {
    let (run, mut at) = linearize_system_at(chain, command, params, &[t_c])?;
    let (state, m) = at.pop().expect("one requested time");
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularKkt { step: run.len() });
    }
    Ok(LinearizedSystem { m, state, t_c, command: command.clone(), rollout: run })
}
