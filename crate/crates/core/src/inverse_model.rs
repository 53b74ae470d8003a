//! Critical-point inverse model: turns a measured rope error into a
//! limit-respecting command update by solving a convex QP.
//!
//! Sign convention: the QP variable `d` is the change actually applied to the
//! knots. The rope-error term asks `M d` to cancel the error, so `M d ~ -x~`.
//! The returned update is `du = -d`, so callers apply `u_next = u - du` and
//! `M du ~ +x~`, the predicted change that explains the error.

use nalgebra::{DMatrix, DVector, SVector, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::arm::{
    forward_kinematics, inverse_dynamics, tip_jacobian, tip_velocity_position_jacobian, ChainSpec, ConfigVector,
    JointLimits, JointVector, LimitKind,
};
use crate::curvekit::sample_grid;
use crate::curvekit::{
    right_jacobian_inv, so3_log, spline_knot_jacobian, CommandSpline, Knots, CHANNELS, JOINTS, KNOTS, NUM_VARS,
};
use crate::demo::{Demonstration, HandSample};
use crate::qp::{kkt_residual, solve_qp, QpProblem, QpSettings, QpStatus};
use crate::rope::{linearize_system, linearize_system_at, RopeParams, COMMAND_DT};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpWeights {
    pub w_control: f64,
    pub w_critical_pos: f64,
    pub w_critical_vel: f64,
    pub w_pc: f64,
    pub w_vc: f64,
    pub w_rc: f64,
    pub w_pft: f64,
    pub w_vft: f64,
    pub w_rft: f64,
    pub w_ft_velocity: f64,
}

impl Default for QpWeights {
    fn default() -> Self {
        Self {
            w_control: 0.5,
            w_critical_pos: 25.0,
            w_critical_vel: 0.00375,
            w_pc: 100.0,
            w_vc: 0.1,
            w_rc: 5.0,
            w_pft: 1.0,
            w_vft: 0.1,
            w_rft: 0.1,
            w_ft_velocity: 0.5,
        }
    }
}

impl QpWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_control,
            self.w_critical_pos,
            self.w_critical_vel,
            self.w_pc,
            self.w_vc,
            self.w_rc,
            self.w_pft,
            self.w_vft,
            self.w_rft,
            self.w_ft_velocity,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("QP weights must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Diagonal of `Q` for `links` markers: positions then velocities.
    pub fn critical_diagonal(&self, links: usize) -> DVector<f64> {
        DVector::from_fn(6 * links, |i, _| if i < 3 * links { self.w_critical_pos } else { self.w_critical_vel })
    }

    /// Cost of a critical-point error, `|x~|_Q^2`.
    pub fn critical_cost(&self, error: &DVector<f64>) -> f64 {
        let q = self.critical_diagonal(error.len() / 6);
        error.component_mul(error).dot(&q)
    }
}

/// Where limits are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Collocation {
    /// Samples for position/velocity/acceleration boxes; `None` uses the
    /// 250 Hz execution grid, which makes the boxes exact for execution.
    pub kinematic_samples: Option<usize>,
    /// Samples for the linearized torque boxes.
    pub torque_samples: usize,
    /// Bounds are tightened by this much so updated commands pass exact checks.
    pub margin: f64,
    /// Keep zero joint velocity at both ends (the arm starts from rest).
    pub rest_to_rest: bool,
}

impl Default for Collocation {
    fn default() -> Self {
        Self { kinematic_samples: None, torque_samples: 16, margin: 1e-9, rest_to_rest: true }
    }
}

impl Collocation {
    fn kinematic_times(&self, duration: f64) -> Vec<f64> {
        match self.kinematic_samples {
            None => sample_grid(duration, COMMAND_DT),
            Some(n) => uniform(n, duration),
        }
    }
}

pub(crate) fn uniform(n: usize, duration: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| duration * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Rope error only at the critical time.
    #[default]
    CriticalPoint,
    /// Rope error averaged over every sample up to the critical time.
    EqualWeighted,
}

/// One follow-through sample: `Q_ft = J^T W J`, `b_ft = 2 J^T W e`.
#[derive(Debug, Clone)]
pub struct FollowThroughTerm {
    pub t: f64,
    /// `(w_p, w_R, w_v)` used at this sample.
    pub weights: [f64; 3],
    pub error: SVector<f64, 9>,
    pub jacobian: DMatrix<f64>,
    pub q_ft: DMatrix<f64>,
    pub b_ft: DVector<f64>,
}

/// Fingertip error against a hand sample and its knot Jacobian (9 x 80):
/// position, `Log(R_h^T R_tip)`, linear velocity.
pub fn hand_error(
    chain: &ChainSpec,
    command: &CommandSpline,
    t: f64,
    target: &HandSample,
) -> Result<(SVector<f64, 9>, DMatrix<f64>)> {
    let q: ConfigVector = command.eval(t, 0)?;
    let qd: ConfigVector = command.eval(t, 1)?;
    let pose = forward_kinematics(chain, &q, &qd);
    let phi = so3_log(&target.rotation.transpose().compose(&pose.rotation));
    let mut e = SVector::<f64, 9>::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&(pose.position - target.position));
    e.fixed_rows_mut::<3>(3).copy_from(&phi);
    e.fixed_rows_mut::<3>(6).copy_from(&(pose.velocity - target.velocity));

    let jac = tip_jacobian(chain, &q);
    let lin = jac.fixed_rows::<3>(0).into_owned();
    let ang = jac.fixed_rows::<3>(3).into_owned();
    let rot = right_jacobian_inv(&phi) * pose.rotation.matrix().transpose() * ang;
    let dv_dq = tip_velocity_position_jacobian(chain, &q, &qd);
    let k0 = spline_knot_jacobian(command, t, 0)?;
    let k1 = spline_knot_jacobian(command, t, 1)?;
    let to_dense = |m: &nalgebra::SMatrix<f64, 3, CHANNELS>| DMatrix::from_fn(3, CHANNELS, |r, c| m[(r, c)]);
    let mut j = DMatrix::zeros(9, NUM_VARS);
    j.rows_mut(0, 3).copy_from(&k0.left_mul(&to_dense(&lin)));
    j.rows_mut(3, 3).copy_from(&k0.left_mul(&to_dense(&rot)));
    j.rows_mut(6, 3).copy_from(&(k1.left_mul(&to_dense(&lin)) + k0.left_mul(&to_dense(&dv_dq))));
    Ok((e, j))
}

/// Follow-through samples: `t_c` itself, then every command sample after it.
fn follow_through_times(t_c: f64, duration: f64) -> Vec<f64> {
    let mut times = vec![t_c];
    let mut k = (t_c / COMMAND_DT).floor() as usize + 1;
    while (k as f64) * COMMAND_DT < duration - 1e-9 {
        let t = k as f64 * COMMAND_DT;
        if t > t_c + 1e-9 {
            times.push(t);
        }
        k += 1;
    }
    if duration > t_c + 1e-9 {
        times.push(duration);
    }
    times
}

pub fn build_follow_through_cost(
    chain: &ChainSpec,
    command: &CommandSpline,
    demo: &Demonstration,
    t_c: f64,
    weights: &QpWeights,
) -> Result<Vec<FollowThroughTerm>> {
    if !(t_c < command.duration()) {
        return Err(Error::Domain(format!("t_c = {t_c} must precede the command end {}", command.duration())));
    }
    follow_through_times(t_c, command.duration())
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let w = if i == 0 {
                [weights.w_pc, weights.w_rc, weights.w_vc]
            } else {
                [weights.w_pft, weights.w_rft, weights.w_vft]
            };
            let target = demo.hand_at(t.min(demo.duration));
            let (error, jacobian) = hand_error(chain, command, t, &target)?;
            let wdiag = DVector::from_fn(9, |r, _| w[r / 3]);
            let wj = DMatrix::from_fn(9, NUM_VARS, |r, c| wdiag[r] * jacobian[(r, c)]);
            let q_ft = jacobian.transpose() * &wj;
            let b_ft = wj.transpose() * DVector::from_column_slice(error.as_slice()) * 2.0;
            Ok(FollowThroughTerm { t, weights: w, error, jacobian, q_ft, b_ft })
        })
        .collect()
}

/// Rope-error term `scale * |M d + x~|_Q^2`.
#[derive(Debug, Clone)]
pub struct RopeTerm {
    pub m: DMatrix<f64>,
    pub error: DVector<f64>,
    pub scale: f64,
}

/// Assembled QP plus the bookkeeping needed to interpret its solution.
#[derive(Debug, Clone)]
pub struct InverseQp {
    pub problem: QpProblem,
    pub rope_terms: Vec<RopeTerm>,
    pub q_diagonal: DVector<f64>,
    /// Constant part of the objective (its value at `d = 0`).
    pub constant: f64,
    /// Inequality rows per bound kind (position, velocity, acceleration, torque).
    pub rows_by_kind: [usize; 4],
}

pub(crate) fn joint_col(c: usize, i: usize) -> usize {
    c * KNOTS + i
}

/// `d tau / d knots` (7 x 80) and `tau` at time `t`: the acceleration part is
/// exact (torque is linear in acceleration), position and velocity parts use
/// central differences.
fn torque_linearization(chain: &ChainSpec, command: &CommandSpline, t: f64) -> Result<(JointVector, DMatrix<f64>)> {
    let joints = |v: ConfigVector| -> JointVector { v.fixed_rows::<JOINTS>(0).into_owned() };
    let q = joints(command.eval(t, 0)?);
    let qd = joints(command.eval(t, 1)?);
    let qdd = joints(command.eval(t, 2)?);
    let tau = inverse_dynamics(chain, &q, &qd, &qdd);
    let h = 1e-6;
    let mut dq = DMatrix::zeros(JOINTS, CHANNELS);
    let mut dqd = DMatrix::zeros(JOINTS, CHANNELS);
    let mut dqdd = DMatrix::zeros(JOINTS, CHANNELS);
    let bias = inverse_dynamics(chain, &q, &qd, &JointVector::zeros());
    for j in 0..JOINTS {
        let mut e = JointVector::zeros();
        e[j] = h;
        let col_q = (inverse_dynamics(chain, &(q + e), &qd, &qdd) - inverse_dynamics(chain, &(q - e), &qd, &qdd)) / (2.0 * h);
        let col_qd = (inverse_dynamics(chain, &q, &(qd + e), &qdd) - inverse_dynamics(chain, &q, &(qd - e), &qdd)) / (2.0 * h);
        e[j] = 1.0;
        let col_qdd = inverse_dynamics(chain, &q, &qd, &e) - bias;
        for r in 0..JOINTS {
            dq[(r, j)] = col_q[r];
            dqd[(r, j)] = col_qd[r];
            dqdd[(r, j)] = col_qdd[r];
        }
    }
    let jac = spline_knot_jacobian(command, t, 0)?.left_mul(&dq)
        + spline_knot_jacobian(command, t, 1)?.left_mul(&dqd)
        + spline_knot_jacobian(command, t, 2)?.left_mul(&dqdd);
    Ok((tau, jac))
}

/// Joint position/velocity/acceleration boxes at `times` as rows `g d <= h`
/// (with the bound kind index 0, 1, 2). Exact, since the spline is linear in
/// its knots.
pub(crate) fn kinematic_box_rows(
    command: &CommandSpline,
    limits: &JointLimits,
    times: &[f64],
    margin: f64,
) -> Result<Vec<(DVector<f64>, f64, usize)>> {
    let kinds = [LimitKind::Position, LimitKind::Velocity, LimitKind::Acceleration];
    let mut rows = Vec::with_capacity(times.len() * 42);
    for &t in times {
        for (order, kind) in kinds.iter().enumerate() {
            let value = command.eval(t, order)?;
            let w = spline_knot_jacobian(command, t, order)?.weights;
            let (lo, hi) = limits.bounds(*kind);
            for c in 0..JOINTS {
                let mut row = DVector::zeros(NUM_VARS);
                for i in 0..KNOTS {
                    row[joint_col(c, i)] = w[i];
                }
                rows.push((row.clone(), hi[c] - margin - value[c], order));
                rows.push((-row, value[c] - lo[c] - margin, order));
            }
        }
    }
    Ok(rows)
}

/// Builds the QP in the applied change `d` (80 knots):
///
/// ```text
/// min  sum scale |M d + x~|_Q^2 + sum_ft (d^T Q_ft d + b_ft^T d)
///      + w_ft_velocity mean_ft |dq/dt change|^2 + |d|_R^2
/// s.t. base knots fixed, zero joint velocity at both ends, joint position/velocity/acceleration boxes at the
///      kinematic collocation times, linearized torque boxes.
/// ```
#[allow(clippy::too_many_arguments)]
pub fn build_qp_terms(
    rope_terms: Vec<RopeTerm>,
    ft: &[FollowThroughTerm],
    command: &CommandSpline,
    chain: &ChainSpec,
    limits: &JointLimits,
    weights: &QpWeights,
    collocation: &Collocation,
) -> Result<InverseQp> {
    weights.validate()?;
    limits.validate()?;
    let links = match rope_terms.first() {
        Some(t) => t.error.len() / 6,
        None => return Err(Error::Dimension("inverse model needs at least one rope term".into())),
    };
    let qdiag = weights.critical_diagonal(links);
    let mut p = DMatrix::zeros(NUM_VARS, NUM_VARS);
    let mut q = DVector::zeros(NUM_VARS);
    let mut constant = 0.0;
    for term in &rope_terms {
        if term.m.shape() != (6 * links, NUM_VARS) || term.error.len() != 6 * links {
            return Err(Error::Dimension(format!(
                "rope term M is {:?} with error length {}, expected {}x{}",
                term.m.shape(),
                term.error.len(),
                6 * links,
                NUM_VARS
            )));
        }
        let qm = DMatrix::from_fn(6 * links, NUM_VARS, |r, c| qdiag[r] * term.m[(r, c)]);
        p += term.m.transpose() * &qm * (2.0 * term.scale);
        q += qm.transpose() * &term.error * (2.0 * term.scale);
        constant += term.scale * weights.critical_cost(&term.error);
    }
    for f in ft {
        p += &f.q_ft * 2.0;
        q += &f.b_ft;
        let w = DVector::from_fn(9, |r, _| f.weights[r / 3]);
        constant += f.error.component_mul(&f.error).dot(&w);
        // penalize changing the joint velocity, averaged over the follow-through
        let k1 = spline_knot_jacobian(command, f.t, 1)?;
        let w = 2.0 * weights.w_ft_velocity / ft.len() as f64;
        for c in 0..JOINTS {
            for a in 0..KNOTS {
                for b in 0..KNOTS {
                    p[(joint_col(c, a), joint_col(c, b))] += w * k1.weights[a] * k1.weights[b];
                }
            }
        }
    }
    for c in 0..JOINTS {
        for i in 0..KNOTS {
            p[(joint_col(c, i), joint_col(c, i))] += 2.0 * weights.w_control;
        }
    }
    p = (&p + p.transpose()) * 0.5;

    // base knots stay put
    let base_rows = (CHANNELS - JOINTS) * KNOTS;
    let rest_rows = if collocation.rest_to_rest { 2 * JOINTS } else { 0 };
    let mut a = DMatrix::zeros(base_rows + rest_rows, NUM_VARS);
    let mut b = DVector::zeros(base_rows + rest_rows);
    for r in 0..base_rows {
        a[(r, JOINTS * KNOTS + r)] = 1.0;
    }
    if collocation.rest_to_rest {
        let k = command.knots();
        for c in 0..JOINTS {
            let r = base_rows + 2 * c;
            a[(r, joint_col(c, 1))] = 1.0;
            a[(r, joint_col(c, 0))] = -1.0;
            b[r] = k[(c, 0)] - k[(c, 1)];
            a[(r + 1, joint_col(c, KNOTS - 1))] = 1.0;
            a[(r + 1, joint_col(c, KNOTS - 2))] = -1.0;
            b[r + 1] = k[(c, KNOTS - 2)] - k[(c, KNOTS - 1)];
        }
    }

    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut h_rows: Vec<f64> = Vec::new();
    let mut rows_by_kind = [0usize; 4];
    let margin = collocation.margin;
    let mut push = |row: DVector<f64>, rhs: f64, kind: usize| {
        g_rows.push(row);
        h_rows.push(rhs);
        rows_by_kind[kind] += 1;
    };
    let kin = kinematic_box_rows(command, limits, &collocation.kinematic_times(command.duration()), margin)?;
    for (row, rhs, kind) in kin {
        push(row, rhs, kind);
    }
    for t in uniform(collocation.torque_samples, command.duration()) {
        let (tau, jac) = torque_linearization(chain, command, t)?;
        let (lo, hi) = limits.bounds(LimitKind::Torque);
        for c in 0..JOINTS {
            let row = jac.row(c).transpose();
            push(row.clone(), hi[c] - margin - tau[c], 3);
            push(-row, tau[c] - lo[c] - margin, 3);
        }
    }
    let g = DMatrix::from_fn(g_rows.len(), NUM_VARS, |r, c| g_rows[r][c]);
    let h = DVector::from_vec(h_rows);
    Ok(InverseQp {
        problem: QpProblem { p, q, a, b, g, h },
        rope_terms,
        q_diagonal: qdiag,
        constant,
        rows_by_kind,
    })
}

/// Critical-point QP from a single error at `t_c` and its linearization.
#[allow(clippy::too_many_arguments)]
pub fn build_qp(
    error: &DVector<f64>,
    m: &DMatrix<f64>,
    ft: &[FollowThroughTerm],
    command: &CommandSpline,
    chain: &ChainSpec,
    limits: &JointLimits,
    weights: &QpWeights,
    collocation: &Collocation,
) -> Result<InverseQp> {
    let term = RopeTerm { m: m.clone(), error: error.clone(), scale: 1.0 };
    build_qp_terms(vec![term], ft, command, chain, limits, weights, collocation)
}

#[derive(Debug, Clone)]
pub struct CommandUpdate {
    /// Knot update; apply as `u - delta_u`. Base rows are zero.
    pub delta_u: Knots,
    /// Predicted rope change `M delta_u` at the (first) rope term.
    pub predicted_dx: DVector<f64>,
    pub status: QpStatus,
    /// Model objective at the solution, including constants.
    pub objective: f64,
    /// Model objective with no update.
    pub objective_at_zero: f64,
    pub iterations: usize,
    /// Scaled KKT residual of the QP solution.
    pub kkt_residual: f64,
}

impl CommandUpdate {
    pub fn apply(&self, command: &CommandSpline) -> Result<CommandSpline> {
        CommandSpline::new(command.knots() - self.delta_u, command.duration())
    }
}

pub fn solve_inverse_qp(iqp: &InverseQp) -> Result<CommandUpdate> {
    let prob = &iqp.problem;
    let worst = prob.h.iter().fold(0.0f64, |m, v| m.max(-v));
    if worst > 1e-7 {
        return Err(Error::Infeasible(format!(
            "the current command already violates a limit by {worst:.3e}"
        )));
    }
    let sol = solve_qp(prob, &QpSettings::default())?;
    if sol.status == QpStatus::Infeasible {
        return Err(Error::Infeasible("inverse-model QP has no feasible update".into()));
    }
    let mut delta = Knots::zeros();
    for c in 0..JOINTS {
        for i in 0..KNOTS {
            delta[(c, i)] = -sol.x[joint_col(c, i)];
        }
    }
    let flat = DVector::from_iterator(NUM_VARS, (0..NUM_VARS).map(|k| delta[(k / KNOTS, k % KNOTS)]));
    Ok(CommandUpdate {
        predicted_dx: &iqp.rope_terms[0].m * flat,
        delta_u: delta,
        status: sol.status,
        objective: sol.objective + iqp.constant,
        objective_at_zero: iqp.constant,
        iterations: sol.iterations,
        kkt_residual: kkt_residual(prob, &sol),
    })
}

impl InverseQp {
    /// Self-describing dump of every block, for offline inspection.
    pub fn to_json(&self) -> serde_json::Value {
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        let vec = |v: &DVector<f64>| -> Vec<f64> { v.iter().copied().collect() };
        let kinds = ["position", "velocity", "acceleration", "torque"];
        json!({
            "variables": NUM_VARS,
            "variable_layout": "knot-major per channel: index = channel * 8 + knot; channels 0-6 joints, 7-9 base",
            "objective": {
                "hessian": mat(&self.problem.p),
                "linear": vec(&self.problem.q),
                "constant": self.constant,
                "form": "0.5 d^T P d + q^T d + constant",
            },
            "critical_weights": vec(&self.q_diagonal),
            "equality": { "matrix": mat(&self.problem.a), "rhs": vec(&self.problem.b) },
            "inequality": {
                "matrix": mat(&self.problem.g),
                "rhs": vec(&self.problem.h),
                "rows_by_kind": kinds.iter().zip(self.rows_by_kind).map(|(k, n)| (k.to_string(), json!(n))).collect::<serde_json::Map<String, serde_json::Value>>(),
            },
        })
    }
}

/// Rope error handed to the inverse model.
#[derive(Debug, Clone)]
pub enum TaskError {
    /// `x~` at the critical time.
    Critical(DVector<f64>),
    /// `x~(t)` at every pre-collision sample.
    Trajectory { times: Vec<f64>, errors: Vec<DVector<f64>> },
}

#[derive(Debug, Clone, Copy)]
pub struct InverseContext<'a> {
    pub chain: &'a ChainSpec,
    pub command: &'a CommandSpline,
    pub model: &'a RopeParams,
    pub demo: &'a Demonstration,
    pub limits: &'a JointLimits,
    pub weights: &'a QpWeights,
    pub collocation: &'a Collocation,
}

/// Linearize the model at the current command, assemble and solve the QP.
pub fn inverse_model(error: &TaskError, ctx: &InverseContext) -> Result<CommandUpdate> {
    let t_c = ctx.demo.t_c;
    let rope_terms = match error {
        TaskError::Critical(x) => {
            let lin = linearize_system(ctx.chain, ctx.command, ctx.model, t_c)?;
            vec![RopeTerm { m: lin.m, error: x.clone(), scale: 1.0 }]
        }
        TaskError::Trajectory { times, errors } => {
            if times.is_empty() || times.len() != errors.len() {
                return Err(Error::Dimension("trajectory error needs one error per time".into()));
            }
            let (_, lins) = linearize_system_at(ctx.chain, ctx.command, ctx.model, times)?;
            let scale = 1.0 / times.len() as f64;
            lins.into_iter()
                .zip(errors)
                .map(|((_, m), x)| RopeTerm { m, error: x.clone(), scale })
                .collect()
        }
    };
    let ft = build_follow_through_cost(ctx.chain, ctx.command, ctx.demo, t_c, ctx.weights)?;
    let iqp = build_qp_terms(rope_terms, &ft, ctx.command, ctx.chain, ctx.limits, ctx.weights, ctx.collocation)?;
    solve_inverse_qp(&iqp)
}

/// Tip position helper used by tests and reports.
pub fn tip_position(chain: &ChainSpec, command: &CommandSpline, t: f64) -> Result<Vector3<f64>> {
    Ok(forward_kinematics(chain, &command.eval(t, 0)?, &ConfigVector::zeros()).position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{check_limits, command_trajectory};
    use crate::curvekit::Rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn swing(duration: f64, amplitude: f64) -> CommandSpline {
        let profile = [0.0, 0.0, 0.3, 1.0, 1.0, 0.3, 0.0, 0.0];
        let knots = Knots::from_fn(|c, i| match c {
            1 => amplitude * profile[i],
            3 => 0.5 * amplitude * profile[i],
            9 => 0.9,
            _ => 0.0,
        });
        CommandSpline::new(knots, duration).unwrap()
    }

    /// Demonstration whose hand is exactly the tip of `cmd`.
    fn demo_from(chain: &ChainSpec, cmd: &CommandSpline, t_c: f64, links: usize) -> Demonstration {
        let hand = cmd
            .sample_times(COMMAND_DT)
            .into_iter()
            .map(|t| {
                let pose = forward_kinematics(chain, &cmd.eval(t, 0).unwrap(), &cmd.eval(t, 1).unwrap());
                HandSample { t, position: pose.position, rotation: pose.rotation, velocity: pose.velocity }
            })
            .collect();
        let rope_times = vec![0.0, t_c];
        let rope = vec![DVector::zeros(6 * links); 2];
        Demonstration::new(hand, rope_times, rope, t_c, cmd.duration(), 0.0).unwrap()
    }

    fn free_limits() -> JointLimits {
        let inf = [f64::INFINITY; JOINTS];
        let ninf = [f64::NEG_INFINITY; JOINTS];
        JointLimits {
            q_min: ninf,
            q_max: inf,
            qd_min: ninf,
            qd_max: inf,
            qdd_min: ninf,
            qdd_max: inf,
            tau_min: ninf,
            tau_max: inf,
        }
    }

    fn no_rows() -> Collocation {
        Collocation { kinematic_samples: Some(0), torque_samples: 0, margin: 0.0, rest_to_rest: false }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn flat(k: &Knots) -> DVector<f64> {
        DVector::from_iterator(NUM_VARS, (0..NUM_VARS).map(|i| k[(i / KNOTS, i % KNOTS)]))
    }

    #[test]
    fn hand_error_jacobian_matches_finite_differences() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let target = HandSample {
            t: 0.0,
            position: Vector3::new(0.3, 0.1, 0.9),
            rotation: Rotation::from_axis_angle(&Vector3::new(0.2, 1.0, 0.3).normalize(), 0.7),
            velocity: Vector3::new(0.5, -0.2, 0.1),
        };
        let t = 0.37;
        let (e0, jac) = hand_error(&chain, &cmd, t, &target).unwrap();
        let h = 1e-6;
        let base = cmd.flatten();
        for k in 0..NUM_VARS {
            let mut d = vec![0.0; NUM_VARS];
            d[k] = h;
            let plus = hand_error(&chain, &cmd.offset(&d, 1.0).unwrap(), t, &target).unwrap().0;
            let minus = hand_error(&chain, &cmd.offset(&d, -1.0).unwrap(), t, &target).unwrap().0;
            let fd = (plus - minus) / (2.0 * h);
            for r in 0..9 {
                assert!((fd[r] - jac[(r, k)]).abs() < 1e-5 * (1.0 + fd[r].abs()), "row {r} col {k}: {} vs {}", fd[r], jac[(r, k)]);
            }
        }
        assert_eq!(base.len(), NUM_VARS);
        assert!(e0.norm() > 0.1);
    }

    #[test]
    fn follow_through_weights_switch_at_critical_time() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let demo = demo_from(&chain, &cmd, 0.41, 2);
        let ft = build_follow_through_cost(&chain, &cmd, &demo, 0.41, &QpWeights::default()).unwrap();
        assert_eq!(ft[0].t, 0.41);
        assert_eq!(ft[0].weights, [100.0, 5.0, 0.1]);
        assert!(ft[1..].iter().all(|f| f.weights == [1.0, 0.1, 0.1] && f.t > 0.41));
        assert!((ft.last().unwrap().t - 0.6).abs() < 1e-12);
        // 250 Hz grid after t_c: 0.412 .. 0.596, then T
        assert_eq!(ft.len(), 1 + 47 + 1);
        assert!(build_follow_through_cost(&chain, &cmd, &demo, 0.6, &QpWeights::default()).is_err());
    }

    #[test]
    fn follow_through_quadratic_model_matches_nonlinear_cost() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let demo = demo_from(&chain, &swing(0.6, 0.7), 0.3, 2);
        let w = QpWeights::default();
        let ft = build_follow_through_cost(&chain, &cmd, &demo, 0.3, &w).unwrap();
        let cost = |c: &CommandSpline| -> f64 {
            build_follow_through_cost(&chain, c, &demo, 0.3, &w)
                .unwrap()
                .iter()
                .map(|f| {
                    let wd = DVector::from_fn(9, |r, _| f.weights[r / 3]);
                    f.error.component_mul(&f.error).dot(&wd)
                })
                .sum()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c0 = cost(&cmd);
        for _ in 0..3 {
            let d: Vec<f64> = (0..NUM_VARS).map(|k| if k < JOINTS * KNOTS { rng.gen_range(-1e-3..1e-3) } else { 0.0 }).collect();
            let dv = DVector::from_vec(d.clone());
            let model: f64 = ft.iter().map(|f| (dv.transpose() * &f.q_ft * &dv)[0] + f.b_ft.dot(&dv)).sum();
            let actual = cost(&cmd.offset(&d, 1.0).unwrap()) - c0;
            assert!((model - actual).abs() <= 1e-2 * actual.abs(), "{model} vs {actual}");
        }
    }

    #[test]
    fn critical_weights_on_the_diagonal() {
        let w = QpWeights::default();
        let q = w.critical_diagonal(11);
        assert_eq!(q.len(), 66);
        assert!(q.rows(0, 33).iter().all(|v| *v == 25.0));
        assert!(q.rows(33, 33).iter().all(|v| *v == 0.00375));
        let x = DVector::from_fn(66, |i, _| if i < 33 { 0.1 } else { 1.0 });
        assert!((w.critical_cost(&x) - (33.0 * 25.0 * 0.01 + 33.0 * 0.00375)).abs() < 1e-12);
    }

    #[test]
    fn box_row_count_matches_collocation() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let m = DMatrix::zeros(12, NUM_VARS);
        let x = DVector::zeros(12);
        for n in [3, 7] {
            let col = Collocation { kinematic_samples: Some(n), torque_samples: n, ..Collocation::default() };
            let iqp = build_qp(&x, &m, &[], &cmd, &chain, &JointLimits::default(), &QpWeights::default(), &col).unwrap();
            assert_eq!(iqp.problem.g.nrows(), 4 * 7 * n * 2);
            assert_eq!(iqp.rows_by_kind, [14 * n; 4]);
            assert_eq!(iqp.problem.a.nrows(), 24 + 14);
        }
    }

    #[test]
    fn torque_rows_match_inverse_dynamics() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let t = 0.23;
        let (tau, jac) = torque_linearization(&chain, &cmd, t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d: Vec<f64> = (0..NUM_VARS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 1e-5;
        let eval = |c: &CommandSpline| {
            let j = |v: ConfigVector| -> JointVector { v.fixed_rows::<JOINTS>(0).into_owned() };
            inverse_dynamics(&chain, &j(c.eval(t, 0).unwrap()), &j(c.eval(t, 1).unwrap()), &j(c.eval(t, 2).unwrap()))
        };
        let fd = (eval(&cmd.offset(&d, h).unwrap()) - eval(&cmd.offset(&d, -h).unwrap())) / (2.0 * h);
        let lin = &jac * DVector::from_vec(d);
        for r in 0..JOINTS {
            assert!((fd[r] - lin[r]).abs() < 1e-4 * (1.0 + fd[r].abs()), "{r}: {} vs {}", fd[r], lin[r]);
        }
        assert!((tau - eval(&cmd)).norm() < 1e-12);
    }

    #[test]
    fn zero_error_gives_zero_update() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let t_c = 0.2;
        let demo = demo_from(&chain, &cmd, t_c, 3);
        let w = QpWeights::default();
        let ft = build_follow_through_cost(&chain, &cmd, &demo, t_c, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 18, NUM_VARS);
        let iqp = build_qp(&DVector::zeros(18), &m, &ft, &cmd, &chain, &JointLimits::default(), &w, &Collocation::default())
            .unwrap();
        let up = solve_inverse_qp(&iqp).unwrap();
        assert!(up.delta_u.amax() <= 1e-9, "{}", up.delta_u.amax());
    }

    #[test]
    fn unconstrained_update_matches_regularized_least_squares() {
        // linear plant x = M u: one update must land on the closed form
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let links = 4;
        let m = random_matrix(&mut rng, 6 * links, NUM_VARS);
        let x = DVector::from_fn(6 * links, |_, _| rng.gen_range(-0.2..0.2));
        let w = QpWeights { w_control: 0.05, ..QpWeights::default() };
        let iqp = build_qp(&x, &m, &[], &cmd, &chain, &free_limits(), &w, &no_rows()).unwrap();
        let up = solve_inverse_qp(&iqp).unwrap();
        assert_eq!(up.status, QpStatus::Optimal);

        let mj = m.columns(0, JOINTS * KNOTS).into_owned();
        let q = w.critical_diagonal(links);
        let qm = DMatrix::from_fn(mj.nrows(), mj.ncols(), |r, c| q[r] * mj[(r, c)]);
        let lhs = mj.transpose() * &qm + DMatrix::identity(mj.ncols(), mj.ncols()) * w.w_control;
        let rhs = qm.transpose() * &x;
        let du = lhs.lu().solve(&rhs).unwrap();
        let got = flat(&up.delta_u);
        assert!((got.rows(0, JOINTS * KNOTS) - &du).amax() < 1e-7, "{}", (got.rows(0, JOINTS * KNOTS) - &du).amax());
        assert!(got.rows(JOINTS * KNOTS, 24).amax() == 0.0);
        let resid_before = w.critical_cost(&x);
        let resid_after = w.critical_cost(&(&x - &m * &got));
        assert!(resid_after < resid_before);
        assert!(up.objective <= up.objective_at_zero);
    }

    #[test]
    fn predicted_change_is_the_weighted_projection() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let links = 3;
        let m = random_matrix(&mut rng, 6 * links, 6) * random_matrix(&mut rng, 6, NUM_VARS);
        let x = DVector::from_fn(6 * links, |_, _| rng.gen_range(-0.2..0.2));
        let w = QpWeights { w_control: 1e-9, ..QpWeights::default() };
        let iqp = build_qp(&x, &m, &[], &cmd, &chain, &free_limits(), &w, &no_rows()).unwrap();
        let up = solve_inverse_qp(&iqp).unwrap();

        // oracle: Q^(1/2) M on the joint columns, orthogonal projection via SVD
        let mj = m.columns(0, JOINTS * KNOTS).into_owned();
        let s = w.critical_diagonal(links).map(f64::sqrt);
        let a = DMatrix::from_fn(mj.nrows(), mj.ncols(), |r, c| s[r] * mj[(r, c)]);
        let svd = a.svd(true, false);
        let u = svd.u.unwrap();
        let rank = svd.singular_values.iter().filter(|v| **v > 1e-8).count();
        let ur = u.columns(0, rank);
        let sx = x.component_mul(&s);
        let proj = &ur * (ur.transpose() * &sx);
        let expected = proj.component_div(&s);
        let err = (&up.predicted_dx - &expected).amax();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn current_violation_is_reported_infeasible() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let mut limits = JointLimits::default();
        limits.q_max[1] = 0.2;
        let m = DMatrix::zeros(6, NUM_VARS);
        let iqp = build_qp(&DVector::zeros(6), &m, &[], &cmd, &chain, &limits, &QpWeights::default(), &Collocation::default())
            .unwrap();
        assert!(matches!(solve_inverse_qp(&iqp), Err(Error::Infeasible(_))));
    }

    #[test]
    fn full_update_respects_limits_and_pins_base() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.5, 0.8);
        let model = RopeParams { links: 4, ..RopeParams::default() };
        let t_c = 0.3;
        let demo = demo_from(&chain, &cmd, t_c, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // large error so the limits bind
        let x = DVector::from_fn(24, |i, _| if i < 12 { rng.gen_range(-1.0..1.0) } else { rng.gen_range(-5.0..5.0) });
        let start_peak = command_trajectory(&chain, &cmd, COMMAND_DT, false).qd.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let cap = 1.05 * start_peak;
        let mut limits = JointLimits::default();
        limits.qd_max = [cap; JOINTS];
        limits.qd_min = [-cap; JOINTS];
        let ctx = InverseContext {
            chain: &chain,
            command: &cmd,
            model: &model,
            demo: &demo,
            limits: &limits,
            weights: &QpWeights { w_control: 1e-3, ..QpWeights::default() },
            collocation: &Collocation::default(),
        };
        let up = inverse_model(&TaskError::Critical(x), &ctx).unwrap();
        assert!(up.delta_u.rows(JOINTS, 3).amax() == 0.0);
        assert!(up.objective <= up.objective_at_zero + 1e-9);
        let next = up.apply(&cmd).unwrap();
        assert!(next.eval(0.0, 1).unwrap().rows(0, JOINTS).amax() < 1e-10);
        assert!(next.eval(0.5, 1).unwrap().rows(0, JOINTS).amax() < 1e-10);
        let kin_only = JointLimits { tau_min: free_limits().tau_min, tau_max: free_limits().tau_max, ..limits };
        let viol = check_limits(&command_trajectory(&chain, &next, COMMAND_DT, false), &kin_only).unwrap();
        assert!(viol.is_empty(), "{viol:?}");
        let peak = command_trajectory(&chain, &next, COMMAND_DT, false)
            .qd
            .iter()
            .map(|v| v.amax())
            .fold(0.0, f64::max);
        assert!(peak <= cap && peak > 0.9 * start_peak, "peak {peak}, cap {cap}");
    }

    #[test]
    fn dump_names_every_block() {
        let chain = ChainSpec::default_arm();
        let cmd = swing(0.6, 0.8);
        let col = Collocation { kinematic_samples: Some(2), torque_samples: 2, ..Collocation::default() };
        let iqp = build_qp(&DVector::zeros(6), &DMatrix::zeros(6, NUM_VARS), &[], &cmd, &chain, &JointLimits::default(), &QpWeights::default(), &col)
            .unwrap();
        let v = iqp.to_json();
        assert_eq!(v["variables"], 80);
        assert_eq!(v["objective"]["hessian"].as_array().unwrap().len(), 80);
        assert_eq!(v["equality"]["rhs"].as_array().unwrap().len(), 38);
        assert_eq!(v["inequality"]["rows_by_kind"]["torque"], 28);
    }
}
