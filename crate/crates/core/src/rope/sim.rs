//! Newton stepping, rollouts and the hanging initial state.

use nalgebra::{DMatrix, DVector, Vector3};

use super::model::{jacobians, residual, scaled_norm, StepInputs};
use super::{RopeParams, RopeState};
use crate::{Error, Result, GRAVITY};

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;
const ROUNDOFF_TOL: f64 = 1e-8;
const RETRY_SUBSTEPS: usize = 10;

/// Solves `J x = b` by LU on the row/column equilibrated matrix, rejecting
/// numerically singular pivots.
pub(super) fn solve_kkt(mut j: DMatrix<f64>, mut b: DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
    let n = j.nrows();
    let mut col_scale = vec![1.0; n];
    for r in 0..n {
        let m = j.row(r).amax();
        if m > 0.0 {
            j.row_mut(r).scale_mut(1.0 / m);
            b.row_mut(r).scale_mut(1.0 / m);
        }
    }
    for (c, cs) in col_scale.iter_mut().enumerate() {
        let m = j.column(c).amax();
        if m > 0.0 {
            *cs = 1.0 / m;
            j.column_mut(c).scale_mut(*cs);
        }
    }
    let lu = j.lu();
    let u = lu.u();
    let diag = u.diagonal().abs();
    let (lo, hi) = (diag.min(), diag.max());
    if !(hi > 0.0) || lo <= 1e-13 * hi {
        return Err(Error::SingularKkt { step });
    }
    let mut x = lu.solve(&b).ok_or(Error::SingularKkt { step })?;
    for (r, cs) in col_scale.iter().enumerate() {
        x.row_mut(r).scale_mut(*cs);
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularKkt { step })
    }
}

fn unpack(z: &DVector<f64>, n: usize) -> RopeState {
    RopeState {
        p: z.rows(0, 3 * n).into_owned(),
        v: z.rows(3 * n, 3 * n).into_owned(),
        lambda: z.rows(6 * n, n).into_owned(),
    }
}

fn pack(s: &RopeState) -> DVector<f64> {
    let n = s.links();
    let mut z = DVector::zeros(7 * n);
    z.rows_mut(0, 3 * n).copy_from(&s.p);
    z.rows_mut(3 * n, 3 * n).copy_from(&s.v);
    z.rows_mut(6 * n, n).copy_from(&s.lambda);
    z
}

/// One Newton solve over a single (sub)step of length `h`.
pub(super) fn newton(inp: &StepInputs, step: usize) -> Result<RopeState> {
    let n = inp.params.links;
    let mut guess = inp.prev.clone();
    guess.p = &inp.prev.p + &inp.prev.v * inp.h;
    let mut z = pack(&guess);
    let mut state = guess;
    let mut r = residual(inp, &state);
    let mut norm = scaled_norm(inp.params, inp.h, &r);
    for _ in 0..NEWTON_MAX_ITER {
        if norm <= NEWTON_TOL {
            return Ok(state);
        }
        let jac = jacobians(inp, &state, false);
        let rhs = DMatrix::from_column_slice(7 * n, 1, (-&r).as_slice());
        let dz = match solve_kkt(jac.new, rhs, step) {
            Ok(dz) => dz,
            Err(_) => break,
        };
        z += dz.column(0);
        state = unpack(&z, n);
        r = residual(inp, &state);
        let prev_norm = norm;
        norm = scaled_norm(inp.params, inp.h, &r);
        if !norm.is_finite() {
            break;
        }
        // stiff bending forces put a roundoff floor near the tolerance
        if norm > 0.5 * prev_norm && norm <= ROUNDOFF_TOL {
            return Ok(state);
        }
    }
    if norm <= NEWTON_TOL {
        Ok(state)
    } else {
        Err(Error::NewtonDivergence { step, residual: norm })
    }
}

/// Number of substeps actually used, plus the new state.
pub(super) fn step_with_retry(
    params: &RopeParams,
    prev: &RopeState,
    tip_prev: Vector3<f64>,
    tip_next: Vector3<f64>,
    step: usize,
) -> Result<(RopeState, usize)> {
    let inp = StepInputs { params, h: params.dt, prev, tip_prev, tip_next };
    match newton(&inp, step) {
        Ok(s) => Ok((s, 1)),
        Err(Error::NewtonDivergence { .. }) => {
            let mut state = prev.clone();
            let h = params.dt / RETRY_SUBSTEPS as f64;
            for s in 0..RETRY_SUBSTEPS {
                let a = tip_prev + (tip_next - tip_prev) * (s as f64 / RETRY_SUBSTEPS as f64);
                let b = tip_prev + (tip_next - tip_prev) * ((s + 1) as f64 / RETRY_SUBSTEPS as f64);
                let sub = StepInputs { params, h, prev: &state, tip_prev: a, tip_next: b };
                state = newton(&sub, step)?;
            }
            Ok((state, RETRY_SUBSTEPS))
        }
        Err(e) => Err(e),
    }
}

/// Advances the rope by one timestep while the fingertip moves from
/// `tip_prev` to `tip_next`.
pub fn rope_step(
    params: &RopeParams,
    state: &RopeState,
    tip_prev: &Vector3<f64>,
    tip_next: &Vector3<f64>,
) -> Result<RopeState> {
    params.validate()?;
    check_state(params, state)?;
    step_with_retry(params, state, *tip_prev, *tip_next, 0).map(|(s, _)| s)
}

fn check_state(params: &RopeParams, state: &RopeState) -> Result<()> {
    let n = params.links;
    if state.p.len() != 3 * n || state.v.len() != 3 * n || state.lambda.len() != n {
        return Err(Error::Dimension(format!(
            "rope state sized for {} links, params have {n}",
            state.lambda.len()
        )));
    }
    Ok(())
}

/// Rope hanging straight down from `tip`, at rest, with multipliers from the
/// static force balance.
pub fn static_hanging_state(params: &RopeParams, tip: &Vector3<f64>) -> RopeState {
    let n = params.links;
    let l = params.link_length;
    let mut p = DVector::zeros(3 * n);
    for i in 0..n {
        p[3 * i] = tip.x;
        p[3 * i + 1] = tip.y;
        p[3 * i + 2] = tip.z - l * (i + 1) as f64;
    }
    // link j carries the weight of masses j..N: -2 l lambda_j = sum m g
    let mut lambda = DVector::zeros(n);
    let mut carried = 0.0;
    for j in (0..n).rev() {
        carried += params.mass(j) * GRAVITY;
        lambda[j] = -carried / (2.0 * l);
    }
    RopeState { p, v: DVector::zeros(3 * n), lambda }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<RopeState>,
    pub tips: Vec<Vector3<f64>>,
    pub dt: f64,
    /// Substeps used per step (1, or the retry count); entry k is the step into state k+1.
    pub substeps: Vec<usize>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Linear interpolation of `[p; v]` at time `t`.
    pub fn observation_at(&self, t: f64) -> DVector<f64> {
        let (k, w) = bracket(t, self.dt, self.states.len());
        let a = self.states[k].observation();
        if w == 0.0 {
            return a;
        }
        a * (1.0 - w) + self.states[k + 1].observation() * w
    }
}

/// Index and weight of `t` on a uniform grid with `len` samples, clamped.
pub(crate) fn bracket(t: f64, dt: f64, len: usize) -> (usize, f64) {
    if len <= 1 || t <= 0.0 {
        return (0, 0.0);
    }
    let x = t / dt;
    let k = x.floor() as usize;
    if k + 1 >= len {
        return (len - 1, 0.0);
    }
    let w = x - k as f64;
    if w < 1e-9 {
        (k, 0.0)
    } else if w > 1.0 - 1e-9 {
        (k + 1, 0.0)
    } else {
        (k, w)
    }
}

/// Simulates the rope along `tips`, starting from `z0` at `tips[0]`.
pub fn rollout(params: &RopeParams, z0: &RopeState, tips: &[Vector3<f64>]) -> Result<Rollout> {
    params.validate()?;
    check_state(params, z0)?;
    if tips.is_empty() {
        return Err(Error::Domain("rollout needs at least one tip sample".into()));
    }
    let mut states = Vec::with_capacity(tips.len());
    let mut substeps = Vec::with_capacity(tips.len().saturating_sub(1));
    states.push(z0.clone());
    for k in 1..tips.len() {
        let (s, used) = step_with_retry(params, &states[k - 1], tips[k - 1], tips[k], k)?;
        states.push(s);
        substeps.push(used);
    }
    Ok(Rollout { states, tips: tips.to_vec(), dt: params.dt, substeps })
}
