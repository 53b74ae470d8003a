//! Initial command from a demonstration: track the hand with the fingertip
//! under joint limits, by repeated linearization and the shared QP solver.

use nalgebra::{DMatrix, DVector, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm::{forward_kinematics, tip_jacobian, ChainSpec, ConfigVector, JointLimits};
use crate::curvekit::{sample_grid, so3_log, spline_knot_jacobian, CommandSpline, Knots, CHANNELS, JOINTS, KNOTS, NUM_VARS};
use crate::demo::{Demonstration, HandSample};
use crate::inverse_model::{hand_error, joint_col, kinematic_box_rows};
use crate::qp::{solve_qp, QpProblem, QpSettings, QpStatus};
use crate::rope::COMMAND_DT;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingWeights {
    pub w_p: f64,
    pub w_r: f64,
    pub w_v: f64,
    /// Jerk weight.
    pub w_j: f64,
    /// Minimum fingertip height at the start (m).
    pub z_min: f64,
}

impl Default for TrackingWeights {
    fn default() -> Self {
        Self { w_p: 10.0, w_r: 0.2, w_v: 0.5, w_j: 5e-7, z_min: 1.2 }
    }
}

impl TrackingWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_p, self.w_r, self.w_v, self.w_j];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !self.z_min.is_finite() {
            return Err(Error::Config("tracking weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingOptions {
    /// Base translation, held fixed.
    pub base: [f64; 3],
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Fail with `NoProgress` if the final RMS tip error exceeds this (m).
    pub error_ceiling: f64,
}

impl Default for TrackingOptions {
    fn default() -> Self {
        Self { base: [0.0, 0.0, 0.9], max_iterations: 50, relative_tolerance: 1e-6, error_ceiling: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingSample {
    pub t: f64,
    pub position_error: f64,
    pub orientation_error: f64,
}

#[derive(Debug, Clone)]
pub struct Tracking {
    pub command: CommandSpline,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each accepted iterate, starting with the initial one.
    pub history: Vec<f64>,
    pub samples: Vec<TrackingSample>,
}

impl Tracking {
    pub fn rms_position_error(&self) -> f64 {
        rms(self.samples.iter().map(|s| s.position_error))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,position_error,orientation_error\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{}\n", s.t, s.position_error, s.orientation_error));
        }
        out
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Damped least-squares IK on tip position (and, lightly, orientation),
/// clamped to the position limits.
pub fn inverse_kinematics(
    chain: &ChainSpec,
    limits: &JointLimits,
    base: &Vector3<f64>,
    target: &HandSample,
    start: &ConfigVector,
) -> ConfigVector {
    let mut q = *start;
    q.fixed_rows_mut::<3>(JOINTS).copy_from(base);
    let lambda = 0.05;
    let w_rot = 0.1;
    for _ in 0..200 {
        let pose = forward_kinematics(chain, &q, &ConfigVector::zeros());
        let mut e = SVector::<f64, 6>::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&(target.position - pose.position));
        let rot_err = pose.rotation.matrix() * so3_log(&pose.rotation.transpose().compose(&target.rotation));
        e.fixed_rows_mut::<3>(3).copy_from(&(rot_err * w_rot));
        if e.fixed_rows::<3>(0).norm() < 1e-6 {
            break;
        }
        let full = tip_jacobian(chain, &q);
        let mut j = full.fixed_columns::<JOINTS>(0).into_owned();
        for r in 3..6 {
            for c in 0..JOINTS {
                j[(r, c)] *= w_rot;
            }
        }
        let jjt = j * j.transpose() + nalgebra::Matrix6::identity() * (lambda * lambda);
        let Some(y) = jjt.lu().solve(&e) else { break };
        let dq = j.transpose() * y;
        for c in 0..JOINTS {
            let step = dq[c].clamp(-0.3, 0.3);
            q[c] = (q[c] + step).clamp(limits.q_min[c] + 1e-6, limits.q_max[c] - 1e-6);
        }
    }
    q
}

/// Knot profile of a rest-to-rest straight joint path.
const RAMP: [f64; KNOTS] = [0.0, 0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 1.0];

fn straight_line(a: &ConfigVector, b: &ConfigVector, duration: f64) -> Result<CommandSpline> {
    let knots = Knots::from_fn(|c, i| a[c] + (b[c] - a[c]) * RAMP[i]);
    CommandSpline::new(knots, duration)
}

fn kinematically_feasible(cmd: &CommandSpline, limits: &JointLimits, times: &[f64]) -> Result<bool> {
    Ok(kinematic_box_rows(cmd, limits, times, 0.0)?.iter().all(|(_, h, _)| *h >= 0.0))
}

struct Evaluation {
    objective: f64,
    p: DMatrix<f64>,
    q: DVector<f64>,
}

fn evaluate(
    chain: &ChainSpec,
    demo: &Demonstration,
    cmd: &CommandSpline,
    weights: &TrackingWeights,
    times: &[f64],
    with_model: bool,
) -> Result<Evaluation> {
    let w = [weights.w_p, weights.w_r, weights.w_v];
    let mut objective = 0.0;
    let mut p = DMatrix::zeros(if with_model { NUM_VARS } else { 0 }, if with_model { NUM_VARS } else { 0 });
    let mut q = DVector::zeros(if with_model { NUM_VARS } else { 0 });
    for &t in times {
        let target = demo.hand_at(t);
        let jerk = cmd.eval(t, 3)?;
        for c in 0..JOINTS {
            objective += weights.w_j * jerk[c] * jerk[c];
        }
        if with_model {
            let (e, jac) = hand_error(chain, cmd, t, &target)?;
            let wd = DVector::from_fn(9, |r, _| w[r / 3]);
            objective += e.component_mul(&e).dot(&wd);
            let wj = DMatrix::from_fn(9, NUM_VARS, |r, c| wd[r] * jac[(r, c)]);
            p += jac.transpose() * &wj * 2.0;
            q += wj.transpose() * DVector::from_column_slice(e.as_slice()) * 2.0;
            let k3 = spline_knot_jacobian(cmd, t, 3)?.weights;
            for c in 0..JOINTS {
                for a in 0..KNOTS {
                    q[joint_col(c, a)] += 2.0 * weights.w_j * jerk[c] * k3[a];
                    for b in 0..KNOTS {
                        p[(joint_col(c, a), joint_col(c, b))] += 2.0 * weights.w_j * k3[a] * k3[b];
                    }
                }
            }
        } else {
            let pose = forward_kinematics(chain, &cmd.eval(t, 0)?, &cmd.eval(t, 1)?);
            let phi = so3_log(&target.rotation.transpose().compose(&pose.rotation));
            objective += w[0] * (pose.position - target.position).norm_squared()
                + w[1] * phi.norm_squared()
                + w[2] * (pose.velocity - target.velocity).norm_squared();
        }
    }
    Ok(Evaluation { objective, p, q })
}

/// Rest-to-rest exactly: the first two and last two joint knots coincide.
fn snap_ends(cmd: &CommandSpline) -> Result<CommandSpline> {
    let mut k = *cmd.knots();
    for c in 0..JOINTS {
        k[(c, 1)] = k[(c, 0)];
        k[(c, KNOTS - 2)] = k[(c, KNOTS - 1)];
    }
    CommandSpline::new(k, cmd.duration())
}

fn start_height(chain: &ChainSpec, cmd: &CommandSpline) -> Result<f64> {
    Ok(forward_kinematics(chain, &cmd.eval(0.0, 0)?, &ConfigVector::zeros()).position.z)
}

/// Fits the initial command to the demonstrated hand motion.
pub fn track_demonstration(
    demo: &Demonstration,
    chain: &ChainSpec,
    limits: &JointLimits,
    weights: &TrackingWeights,
    options: &TrackingOptions,
) -> Result<Tracking> {
    weights.validate()?;
    limits.validate()?;
    chain.validate()?;
    let duration = demo.duration;
    if !(duration > 0.0) {
        return Err(Error::Domain("demonstration duration must be positive".into()));
    }
    let times = sample_grid(duration, COMMAND_DT);
    let base = Vector3::from(options.base);

    let mut seed = ConfigVector::zeros();
    seed[1] = 0.3;
    seed[3] = 0.6;
    seed[5] = 0.3;
    let qa = inverse_kinematics(chain, limits, &base, &demo.hand_at(0.0), &seed);
    let qb = inverse_kinematics(chain, limits, &base, &demo.hand_at(duration), &qa);
    let mut cmd = straight_line(&qa, &qb, duration)?;
    if !kinematically_feasible(&cmd, limits, &times)? {
        cmd = straight_line(&qa, &qa, duration)?;
    }

    let z_margin = 1e-7;
    let mut mu = 1e-6;
    let mut current = evaluate(chain, demo, &cmd, weights, &times, true)?;
    let mut iterations = 0;
    let mut history = vec![current.objective];
    while iterations < options.max_iterations {
        iterations += 1;
        let prob = tracking_qp(chain, &cmd, limits, weights, &times, &current, mu)?;
        let sol = solve_qp(&prob, &QpSettings::default())?;
        if sol.status == QpStatus::Infeasible {
            return Err(Error::Infeasible("tracking QP has no feasible step".into()));
        }
        let z0 = start_height(chain, &cmd)?;
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..8 {
            let trial = snap_ends(&cmd.offset(sol.x.as_slice(), alpha)?)?;
            let z = start_height(chain, &trial)?;
            let height_ok = z >= weights.z_min || (z0 < weights.z_min && z > z0);
            if height_ok && kinematically_feasible(&trial, limits, &times)? {
                let eval = evaluate(chain, demo, &trial, weights, &times, false)?;
                let infeasible_before = z0 < weights.z_min;
                if eval.objective < current.objective || (infeasible_before && z > z0) {
                    accepted = Some((trial, eval.objective));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, objective)) => {
                let previous = current.objective;
                cmd = trial;
                current = evaluate(chain, demo, &cmd, weights, &times, true)?;
                debug_assert!((current.objective - objective).abs() <= 1e-9 * (1.0 + objective));
                history.push(current.objective);
                mu = (mu / 3.0).max(1e-9);
                let settled = start_height(chain, &cmd)? >= weights.z_min - z_margin;
                if settled && previous - current.objective <= options.relative_tolerance * previous {
                    break;
                }
            }
            None => {
                mu *= 10.0;
                if mu > 1e3 {
                    break;
                }
            }
        }
    }

    let samples = times
        .iter()
        .map(|&t| {
            let target = demo.hand_at(t);
            let pose = forward_kinematics(chain, &cmd.eval(t, 0)?, &ConfigVector::zeros());
            Ok(TrackingSample {
                t,
                position_error: (pose.position - target.position).norm(),
                orientation_error: so3_log(&target.rotation.transpose().compose(&pose.rotation)).norm(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tracking = Tracking { command: cmd, objective: current.objective, iterations, history, samples };
    let err = tracking.rms_position_error();
    if err > options.error_ceiling {
        return Err(Error::NoProgress { rms_error: err, best: Box::new(tracking.command) });
    }
    Ok(tracking)
}

fn tracking_qp(
    chain: &ChainSpec,
    cmd: &CommandSpline,
    limits: &JointLimits,
    weights: &TrackingWeights,
    times: &[f64],
    current: &Evaluation,
    mu: f64,
) -> Result<QpProblem> {
    let scale = 1.0 + current.p.diagonal().amax();
    let p = &current.p + DMatrix::identity(NUM_VARS, NUM_VARS) * (2.0 * mu * scale);
    let q = current.q.clone();

    // base pinned, zero joint velocity at both ends
    let knots = cmd.knots();
    let base_rows = (CHANNELS - JOINTS) * KNOTS;
    let mut a = DMatrix::zeros(base_rows + 2 * JOINTS, NUM_VARS);
    let mut b = DVector::zeros(base_rows + 2 * JOINTS);
    for r in 0..base_rows {
        a[(r, JOINTS * KNOTS + r)] = 1.0;
    }
    for c in 0..JOINTS {
        let r = base_rows + 2 * c;
        a[(r, joint_col(c, 1))] = 1.0;
        a[(r, joint_col(c, 0))] = -1.0;
        b[r] = knots[(c, 0)] - knots[(c, 1)];
        a[(r + 1, joint_col(c, KNOTS - 1))] = 1.0;
        a[(r + 1, joint_col(c, KNOTS - 2))] = -1.0;
        b[r + 1] = knots[(c, KNOTS - 2)] - knots[(c, KNOTS - 1)];
    }

    let mut rows = kinematic_box_rows(cmd, limits, times, 1e-9)?;
    // start height, linearized
    let q0 = cmd.eval(0.0, 0)?;
    let z0 = forward_kinematics(chain, &q0, &ConfigVector::zeros()).position.z;
    let jz = tip_jacobian(chain, &q0).row(2).into_owned();
    let k0 = spline_knot_jacobian(cmd, 0.0, 0)?;
    let jz_knots = k0.left_mul(&DMatrix::from_row_slice(1, CHANNELS, jz.as_slice()));
    rows.push((-jz_knots.row(0).transpose(), z0 - weights.z_min - 1e-7, 0));
    let g = DMatrix::from_fn(rows.len(), NUM_VARS, |r, c| rows[r].0[c]);
    let h = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    Ok(QpProblem { p, q, a, b, g, h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{check_limits, command_trajectory};
    use crate::demo::hand_from_command;

    fn known_command(duration: f64) -> CommandSpline {
        let profile = [0.0, 0.0, 0.3, 1.0, 1.0, 0.3, 0.0, 0.0];
        let knots = Knots::from_fn(|c, i| match c {
            0 => 0.4 * profile[i],
            1 => 0.2 + 0.6 * profile[i],
            3 => 0.5 + 0.4 * profile[i],
            9 => 0.9,
            _ => 0.0,
        });
        CommandSpline::new(knots, duration).unwrap()
    }

    fn demo_of(chain: &ChainSpec, cmd: &CommandSpline) -> Demonstration {
        let hand = hand_from_command(chain, cmd, COMMAND_DT).unwrap();
        let t_c = 0.5 * cmd.duration();
        Demonstration::new(hand, vec![0.0, t_c], vec![DVector::zeros(6); 2], t_c, cmd.duration(), 0.0).unwrap()
    }

    #[test]
    fn ik_reaches_a_reachable_point() {
        let chain = ChainSpec::default_arm();
        let mut q = ConfigVector::zeros();
        q[1] = 0.7;
        q[3] = 0.9;
        q[9] = 0.9;
        let pose = forward_kinematics(&chain, &q, &ConfigVector::zeros());
        let target = HandSample { t: 0.0, position: pose.position, rotation: pose.rotation, velocity: Vector3::zeros() };
        let got = inverse_kinematics(&chain, &JointLimits::default(), &Vector3::new(0.0, 0.0, 0.9), &target, &ConfigVector::zeros());
        let reached = forward_kinematics(&chain, &got, &ConfigVector::zeros()).position;
        assert!((reached - pose.position).norm() < 1e-4);
    }

    #[test]
    fn tracks_a_feasible_demonstration() {
        let chain = ChainSpec::default_arm();
        let truth = known_command(0.8);
        let demo = demo_of(&chain, &truth);
        let limits = JointLimits::default();
        let out = track_demonstration(&demo, &chain, &limits, &TrackingWeights::default(), &TrackingOptions::default()).unwrap();
        assert!(out.rms_position_error() <= 0.01, "rms {}", out.rms_position_error());
        let qd0 = out.command.eval(0.0, 1).unwrap();
        let qd1 = out.command.eval(0.8, 1).unwrap();
        assert_eq!(qd0.rows(0, JOINTS).amax(), 0.0);
        assert_eq!(qd1.rows(0, JOINTS).amax(), 0.0);
        assert!(start_height(&chain, &out.command).unwrap() >= 1.2);
        let viol = check_limits(&command_trajectory(&chain, &out.command, COMMAND_DT, false), &limits).unwrap();
        assert!(viol.is_empty(), "{viol:?}");
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.to_csv().lines().count(), out.samples.len() + 1);
    }

    #[test]
    fn start_height_constraint_lifts_a_low_demonstration() {
        let chain = ChainSpec::default_arm();
        let knots = Knots::from_fn(|c, i| match c {
            1 => 1.2 + 0.1 * (i as f64 / 7.0),
            3 => 1.0,
            9 => 0.9,
            _ => 0.0,
        });
        let low = CommandSpline::new(knots, 0.5).unwrap();
        let demo = demo_of(&chain, &low);
        assert!(demo.hand[0].position.z < 1.2);
        let out = track_demonstration(&demo, &chain, &JointLimits::default(), &TrackingWeights::default(), &TrackingOptions::default())
            .unwrap();
        assert!(start_height(&chain, &out.command).unwrap() >= 1.2);
    }

    #[test]
    fn too_fast_demonstration_saturates_velocity() {
        let chain = ChainSpec::default_arm();
        let truth = known_command(0.8);
        let demo = demo_of(&chain, &truth);
        let mut limits = JointLimits::default();
        limits.qd_max = [0.8; JOINTS];
        limits.qd_min = [-0.8; JOINTS];
        let out = track_demonstration(&demo, &chain, &limits, &TrackingWeights::default(), &TrackingOptions::default()).unwrap();
        let traj = command_trajectory(&chain, &out.command, COMMAND_DT, false);
        let peak = traj.qd.iter().map(|v| v.amax()).fold(0.0, f64::max);
        assert!(peak > 0.79 && peak <= 0.8, "peak {peak}");
        assert!(out.rms_position_error() > 0.01);
        let strict = TrackingOptions { error_ceiling: 0.005, ..TrackingOptions::default() };
        assert!(matches!(
            track_demonstration(&demo, &chain, &limits, &TrackingWeights::default(), &strict),
            Err(Error::NoProgress { .. })
        ));
    }
}
