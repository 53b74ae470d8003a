//! Serial arm on a translating base: forward kinematics, tip Jacobian,
//! point-mass inverse dynamics and joint-limit checks.
//!
//! Configuration vectors follow the command channel layout: entries 0..7 are
//! joint angles, 7..10 the base translation.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::curvekit::{so3_exp, Rotation, CHANNELS, JOINTS};
use crate::{Error, Result, GRAVITY};

pub type JointVector = SVector<f64, JOINTS>;
pub type ConfigVector = SVector<f64, CHANNELS>;
pub type TipJacobian = SMatrix<f64, 6, CHANNELS>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    /// Rotation axis in the joint's own frame.
    pub axis: [f64; 3],
    /// Translation from the parent joint (or base) origin, in the parent frame.
    pub offset: [f64; 3],
    /// Point mass of the link driven by this joint (kg).
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub joints: Vec<JointSpec>,
    pub tip_offset: [f64; 3],
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.joints.len() != JOINTS {
            return Err(Error::Config(format!(
                "chain must have {JOINTS} revolute joints, got {}",
                self.joints.len()
            )));
        }
        for (i, j) in self.joints.iter().enumerate() {
            let n = Vector3::from(j.axis).norm();
            if (n - 1.0).abs() > 1e-10 {
                return Err(Error::Config(format!("joint {i} axis is not unit length ({n})")));
            }
            if !(j.mass >= 0.0) {
                return Err(Error::Config(format!("joint {i} mass must be nonnegative")));
            }
        }
        Ok(())
    }

    /// Stand-in for a 7-DOF arm: alternating z/y axes, 0.7 m of offsets from the
    /// first joint to the fingertip and 13 kg of link mass.
    pub fn default_arm() -> Self {
        let z = [0.0, 0.0, 1.0];
        let y = [0.0, 1.0, 0.0];
        let lengths = [0.1, 0.1, 0.15, 0.1, 0.1, 0.05, 0.05];
        let masses = [2.5, 2.5, 2.0, 2.0, 1.5, 1.5, 1.0];
        let tip = 0.05;
        let joints = (0..JOINTS)
            .map(|i| {
                // the link after joint i spans to the next joint (or the tip)
                let next = if i + 1 < JOINTS { lengths[i + 1] } else { tip };
                JointSpec {
                    axis: if i % 2 == 0 { z } else { y },
                    offset: [0.0, 0.0, lengths[i]],
                    mass: masses[i],
                    com: [0.0, 0.0, 0.5 * next],
                }
            })
            .collect();
        Self {
            joints,
            tip_offset: [0.0, 0.0, tip],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let chain: ChainSpec = serde_json::from_str(text)?;
        chain.validate()?;
        Ok(chain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointLimits {
    pub q_min: [f64; JOINTS],
    pub q_max: [f64; JOINTS],
    pub qd_min: [f64; JOINTS],
    pub qd_max: [f64; JOINTS],
    pub qdd_min: [f64; JOINTS],
    pub qdd_max: [f64; JOINTS],
    pub tau_min: [f64; JOINTS],
    pub tau_max: [f64; JOINTS],
}

// Table values, not pi.
#[allow(clippy::approx_constant)]
impl Default for JointLimits {
    fn default() -> Self {
        Self {
            q_min: [-6.28, -1.8, -6.28, -0.19, -6.28, -1.69, -6.28],
            q_max: [6.28, 1.9, 6.28, 3.92, 6.28, 3.14, 6.28],
            qd_min: [-3.14; JOINTS],
            qd_max: [3.14; JOINTS],
            qdd_min: [-100.0; JOINTS],
            qdd_max: [100.0; JOINTS],
            tau_min: [-130.0, -130.0, -40.0, -40.0, -40.0, -20.0, -20.0],
            tau_max: [130.0, 130.0, 40.0, 40.0, 40.0, 20.0, 20.0],
        }
    }
}

impl JointLimits {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("q", &self.q_min, &self.q_max),
            ("qd", &self.qd_min, &self.qd_max),
            ("qdd", &self.qdd_min, &self.qdd_max),
            ("tau", &self.tau_min, &self.tau_max),
        ];
        for (name, lo, hi) in pairs {
            for j in 0..JOINTS {
                if !(lo[j] < hi[j]) {
                    return Err(Error::Config(format!(
                        "{name} limits for joint {j}: min {} must be below max {}",
                        lo[j], hi[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn bounds(&self, kind: LimitKind) -> (&[f64; JOINTS], &[f64; JOINTS]) {
        match kind {
            LimitKind::Position => (&self.q_min, &self.q_max),
            LimitKind::Velocity => (&self.qd_min, &self.qd_max),
            LimitKind::Acceleration => (&self.qdd_min, &self.qdd_max),
            LimitKind::Torque => (&self.tau_min, &self.tau_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipPose {
    pub position: Vector3<f64>,
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
}

/// Joint frames at one configuration (world frame).
struct Frames {
    /// joint origins
    origins: [Vector3<f64>; JOINTS],
    /// joint axes in world
    axes: [Vector3<f64>; JOINTS],
    /// link orientation after each joint
    rotations: [Matrix3<f64>; JOINTS],
    tip: Vector3<f64>,
}

fn frames(chain: &ChainSpec, q: &ConfigVector) -> Frames {
    let mut origin = Vector3::new(q[7], q[8], q[9]);
    let mut rot = Matrix3::identity();
    let mut origins = [Vector3::zeros(); JOINTS];
    let mut axes = [Vector3::zeros(); JOINTS];
    let mut rotations = [Matrix3::identity(); JOINTS];
    for (i, joint) in chain.joints.iter().enumerate() {
        origin += rot * Vector3::from(joint.offset);
        let axis = Vector3::from(joint.axis);
        axes[i] = rot * axis;
        rot *= so3_exp(&(axis * q[i]));
        origins[i] = origin;
        rotations[i] = rot;
    }
    let tip = origin + rot * Vector3::from(chain.tip_offset);
    Frames {
        origins,
        axes,
        rotations,
        tip,
    }
}

pub fn forward_kinematics(chain: &ChainSpec, q: &ConfigVector, qd: &ConfigVector) -> TipPose {
    let f = frames(chain, q);
    let mut velocity = Vector3::new(qd[7], qd[8], qd[9]);
    for i in 0..JOINTS {
        velocity += f.axes[i].cross(&(f.tip - f.origins[i])) * qd[i];
    }
    TipPose {
        position: f.tip,
        rotation: Rotation::new_unchecked(f.rotations[JOINTS - 1]),
        velocity,
    }
}

/// Geometric Jacobian of the tip: rows 0..3 linear velocity, rows 3..6 angular velocity.
pub fn tip_jacobian(chain: &ChainSpec, q: &ConfigVector) -> TipJacobian {
    let f = frames(chain, q);
    let mut j = TipJacobian::zeros();
    for i in 0..JOINTS {
        let lin = f.axes[i].cross(&(f.tip - f.origins[i]));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&f.axes[i]);
    }
    for k in 0..3 {
        j[(k, JOINTS + k)] = 1.0;
    }
    j
}

/// Derivative of the tip linear velocity with respect to the configuration,
/// holding `qd` fixed (central differences).
pub fn tip_velocity_position_jacobian(
    chain: &ChainSpec,
    q: &ConfigVector,
    qd: &ConfigVector,
) -> SMatrix<f64, 3, CHANNELS> {
    let h = 1e-7;
    let mut out = SMatrix::<f64, 3, CHANNELS>::zeros();
    // base translation does not change the velocity
    for i in 0..JOINTS {
        let mut qp = *q;
        qp[i] += h;
        let mut qm = *q;
        qm[i] -= h;
        let d = (forward_kinematics(chain, &qp, qd).velocity
            - forward_kinematics(chain, &qm, qd).velocity)
            / (2.0 * h);
        out.set_column(i, &d);
    }
    out
}

fn joint_config(q: &JointVector) -> ConfigVector {
    let mut c = ConfigVector::zeros();
    c.fixed_rows_mut::<JOINTS>(0).copy_from(q);
    c
}

/// Joint torques from recursive Newton-Euler over point-mass links with the
/// base held fixed and gravity along -z.
pub fn inverse_dynamics(
    chain: &ChainSpec,
    q: &JointVector,
    qd: &JointVector,
    qdd: &JointVector,
) -> JointVector {
    inverse_dynamics_with_gravity(chain, q, qd, qdd, GRAVITY)
}

pub fn inverse_dynamics_with_gravity(
    chain: &ChainSpec,
    q: &JointVector,
    qd: &JointVector,
    qdd: &JointVector,
    gravity: f64,
) -> JointVector {
    let f = frames(chain, &joint_config(q));
    // forward pass: angular velocity/acceleration and origin acceleration of each link
    let mut omega = Vector3::zeros();
    let mut alpha = Vector3::zeros();
    let mut acc = Vector3::zeros();
    let mut prev_origin = f.origins[0];
    let mut com_acc = [Vector3::zeros(); JOINTS];
    let mut com_pos = [Vector3::zeros(); JOINTS];
    for i in 0..JOINTS {
        let r = f.origins[i] - prev_origin;
        acc += alpha.cross(&r) + omega.cross(&omega.cross(&r));
        let z = f.axes[i];
        alpha += z * qdd[i] + omega.cross(&(z * qd[i]));
        omega += z * qd[i];
        let c = f.rotations[i] * Vector3::from(chain.joints[i].com);
        com_pos[i] = f.origins[i] + c;
        com_acc[i] = acc + alpha.cross(&c) + omega.cross(&omega.cross(&c));
        prev_origin = f.origins[i];
    }
    // backward pass: accumulate force and moment about each joint origin
    let g = Vector3::new(0.0, 0.0, -gravity);
    let mut tau = JointVector::zeros();
    let mut force = Vector3::zeros();
    let mut moment = Vector3::zeros(); // about the current joint origin
    for i in (0..JOINTS).rev() {
        if i + 1 < JOINTS {
            // shift the moment from the child origin to this origin
            moment += (f.origins[i + 1] - f.origins[i]).cross(&force);
        }
        let fi = (com_acc[i] - g) * chain.joints[i].mass;
        force += fi;
        moment += (com_pos[i] - f.origins[i]).cross(&fi);
        tau[i] = f.axes[i].dot(&moment);
    }
    tau
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitKind {
    Position,
    Velocity,
    Acceleration,
    Torque,
}

impl LimitKind {
    pub const ALL: [LimitKind; 4] = [
        LimitKind::Position,
        LimitKind::Velocity,
        LimitKind::Acceleration,
        LimitKind::Torque,
    ];
}

/// Sampled joint trajectory (250 Hz in practice).
#[derive(Debug, Clone, Default)]
pub struct JointTrajectory {
    pub times: Vec<f64>,
    pub q: Vec<JointVector>,
    pub qd: Vec<JointVector>,
    pub qdd: Vec<JointVector>,
    /// Optional; empty skips torque checks.
    pub tau: Vec<JointVector>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitViolation {
    pub time: f64,
    pub joint: usize,
    pub kind: LimitKind,
    /// Amount by which the bound is exceeded (positive).
    pub margin: f64,
}

/// Lists every sample that leaves its bound; an empty report means executable.
pub fn check_limits(traj: &JointTrajectory, limits: &JointLimits) -> Result<Vec<LimitViolation>> {
    let n = traj.times.len();
    if traj.q.len() != n || traj.qd.len() != n || traj.qdd.len() != n {
        return Err(Error::Dimension("trajectory sample counts differ".into()));
    }
    if !traj.tau.is_empty() && traj.tau.len() != n {
        return Err(Error::Dimension("torque sample count differs".into()));
    }
    let mut out = Vec::new();
    for (s, &time) in traj.times.iter().enumerate() {
        for kind in LimitKind::ALL {
            let values = match kind {
                LimitKind::Position => &traj.q[s],
                LimitKind::Velocity => &traj.qd[s],
                LimitKind::Acceleration => &traj.qdd[s],
                LimitKind::Torque => match traj.tau.get(s) {
                    Some(t) => t,
                    None => continue,
                },
            };
            let (lo, hi) = limits.bounds(kind);
            for j in 0..JOINTS {
                let v = values[j];
                if v > hi[j] {
                    out.push(LimitViolation { time, joint: j, kind, margin: v - hi[j] });
                } else if v < lo[j] {
                    out.push(LimitViolation { time, joint: j, kind, margin: lo[j] - v });
                }
            }
        }
    }
    Ok(out)
}

/// Samples a command at `dt` and predicts its torques.
pub fn command_trajectory(
    chain: &ChainSpec,
    command: &crate::curvekit::CommandSpline,
    dt: f64,
    with_torque: bool,
) -> JointTrajectory {
    let mut traj = JointTrajectory::default();
    for t in command.sample_times(dt) {
        let q = command.eval(t, 0).expect("sample inside duration");
        let qd = command.eval(t, 1).expect("sample inside duration");
        let qdd = command.eval(t, 2).expect("sample inside duration");
        let (q, qd, qdd) = (
            q.fixed_rows::<JOINTS>(0).into_owned(),
            qd.fixed_rows::<JOINTS>(0).into_owned(),
            qdd.fixed_rows::<JOINTS>(0).into_owned(),
        );
        if with_torque {
            traj.tau.push(inverse_dynamics(chain, &q, &qd, &qdd));
        }
        traj.times.push(t);
        traj.q.push(q);
        traj.qd.push(qd);
        traj.qdd.push(qdd);
    }
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn random_config(seed: u64) -> (ConfigVector, ConfigVector) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (
            ConfigVector::from_fn(|_, _| rng.gen_range(-1.5..1.5)),
            ConfigVector::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
        )
    }

    #[test]
    fn default_chain_is_valid() {
        let chain = ChainSpec::default_arm();
        chain.validate().unwrap();
        let total: f64 = chain.joints.iter().map(|j| j.mass).sum();
        assert_relative_eq!(total, 13.0, epsilon = 1e-12);
        let reach: f64 = chain.joints.iter().map(|j| j.offset[2]).sum::<f64>() + chain.tip_offset[2];
        assert_relative_eq!(reach, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn home_pose_tip_is_sum_of_offsets() {
        let chain = ChainSpec::default_arm();
        let tip = forward_kinematics(&chain, &ConfigVector::zeros(), &ConfigVector::zeros());
        assert_relative_eq!(tip.position, Vector3::new(0.0, 0.0, 0.7), epsilon = 1e-14);
        assert_eq!(tip.rotation, Rotation::identity());
    }

    #[test]
    fn base_translation_shifts_tip() {
        let chain = ChainSpec::default_arm();
        let (q, qd) = random_config(1);
        let mut moved = q;
        moved[7] += 0.1;
        let a = forward_kinematics(&chain, &q, &qd);
        let b = forward_kinematics(&chain, &moved, &qd);
        assert_relative_eq!(b.position - a.position, Vector3::new(0.1, 0.0, 0.0), epsilon = 1e-14);
        assert_eq!(a.rotation, b.rotation);
    }

    #[test]
    fn tip_velocity_matches_finite_differences() {
        let chain = ChainSpec::default_arm();
        for seed in 0..5 {
            let (q, qd) = random_config(seed);
            let h = 1e-6;
            let fd = (forward_kinematics(&chain, &(q + qd * h), &qd).position
                - forward_kinematics(&chain, &(q - qd * h), &qd).position)
                / (2.0 * h);
            let v = forward_kinematics(&chain, &q, &qd).velocity;
            assert!((fd - v).norm() <= 1e-5 * v.norm());
        }
    }

    #[test]
    fn jacobian_base_columns() {
        let chain = ChainSpec::default_arm();
        let j = tip_jacobian(&chain, &random_config(3).0);
        for k in 0..3 {
            for r in 0..6 {
                let expected = if r == k { 1.0 } else { 0.0 };
                assert_eq!(j[(r, JOINTS + k)], expected);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let chain = ChainSpec::default_arm();
        let h = 1e-6;
        for seed in 0..5 {
            let q = random_config(seed).0;
            let j = tip_jacobian(&chain, &q);
            let zero = ConfigVector::zeros();
            let base = forward_kinematics(&chain, &q, &zero);
            for c in 0..CHANNELS {
                let mut qp = q;
                qp[c] += h;
                let mut qm = q;
                qm[c] -= h;
                let p = forward_kinematics(&chain, &qp, &zero);
                let m = forward_kinematics(&chain, &qm, &zero);
                let lin = (p.position - m.position) / (2.0 * h);
                // angular: vee(dR R^T)
                let dr = (p.rotation.matrix() - m.rotation.matrix()) / (2.0 * h);
                let w = dr * base.rotation.matrix().transpose();
                let ang = Vector3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]);
                assert!((lin - j.fixed_view::<3, 1>(0, c)).norm() < 1e-5);
                assert!((ang - j.fixed_view::<3, 1>(3, c)).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn planar_two_link_jacobian() {
        // joints 1 and 3 rotate about y; with the others at zero the tip moves in
        // the x-z plane like a 2R arm with links a (joint 1 -> joint 3) and b (joint 3 -> tip)
        let chain = ChainSpec::default_arm();
        let (t1, t3) = (0.4, -0.7);
        let mut q = ConfigVector::zeros();
        q[1] = t1;
        q[3] = t3;
        let a: f64 = chain.joints[2].offset[2] + chain.joints[3].offset[2];
        let b: f64 = chain.joints[4..].iter().map(|j| j.offset[2]).sum::<f64>() + chain.tip_offset[2];
        // position relative to joint 1: x = a sin t1 + b sin(t1+t3), z = a cos t1 + b cos(t1+t3)
        let dx1 = a * t1.cos() + b * (t1 + t3).cos();
        let dz1 = -a * t1.sin() - b * (t1 + t3).sin();
        let dx3 = b * (t1 + t3).cos();
        let dz3 = -b * (t1 + t3).sin();
        let j = tip_jacobian(&chain, &q);
        assert_relative_eq!(j[(0, 1)], dx1, epsilon = 1e-12);
        assert_relative_eq!(j[(2, 1)], dz1, epsilon = 1e-12);
        assert_relative_eq!(j[(0, 3)], dx3, epsilon = 1e-12);
        assert_relative_eq!(j[(2, 3)], dz3, epsilon = 1e-12);
        assert_relative_eq!(j[(1, 1)], 0.0, epsilon = 1e-12);
    }

    fn single_link_chain() -> ChainSpec {
        let mut chain = ChainSpec::default_arm();
        for j in chain.joints.iter_mut() {
            j.mass = 0.0;
        }
        chain.joints[0].axis = [0.0, 1.0, 0.0];
        chain.joints[0].mass = 1.0;
        chain.joints[0].com = [0.5, 0.0, 0.0];
        chain
    }

    #[test]
    fn static_gravity_torque() {
        let chain = single_link_chain();
        let z = JointVector::zeros();
        let tau = inverse_dynamics(&chain, &z, &z, &z);
        assert_relative_eq!(tau[0].abs(), 4.905, epsilon = 1e-12);
        for j in 1..JOINTS {
            assert_eq!(tau[j], 0.0);
        }
    }

    #[test]
    fn zero_gravity_at_rest_is_torque_free() {
        let chain = ChainSpec::default_arm();
        let q = random_config(4).0.fixed_rows::<JOINTS>(0).into_owned();
        let z = JointVector::zeros();
        let tau = inverse_dynamics_with_gravity(&chain, &q, &z, &z, 0.0);
        assert!(tau.norm() < 1e-14);
    }

    fn energies(chain: &ChainSpec, q: &JointVector, qd: &JointVector) -> (f64, f64) {
        let f = frames(chain, &joint_config(q));
        let mut ke = 0.0;
        let mut pe = 0.0;
        for (i, joint) in chain.joints.iter().enumerate() {
            let c = f.origins[i] + f.rotations[i] * Vector3::from(joint.com);
            let mut v = Vector3::zeros();
            for k in 0..=i {
                v += f.axes[k].cross(&(c - f.origins[k])) * qd[k];
            }
            ke += 0.5 * joint.mass * v.norm_squared();
            pe += joint.mass * GRAVITY * c.z;
        }
        (ke, pe)
    }

    #[test]
    fn power_balance() {
        // q(t) = a + b t + c t^2: tau . qd = d/dt (KE + PE)
        let chain = ChainSpec::default_arm();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = JointVector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let b = JointVector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let c = JointVector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let state = |t: f64| (a + b * t + c * t * t, b + c * (2.0 * t), c * 2.0);
        for &t in &[0.0, 0.3, 0.9] {
            let (q, qd, qdd) = state(t);
            let power = inverse_dynamics(&chain, &q, &qd, &qdd).dot(&qd);
            let h = 1e-5;
            let (qp, qdp, _) = state(t + h);
            let (qm, qdm, _) = state(t - h);
            let (kp, pp) = energies(&chain, &qp, &qdp);
            let (km, pm) = energies(&chain, &qm, &qdm);
            let de = (kp + pp - km - pm) / (2.0 * h);
            assert!((power - de).abs() < 1e-6 * (1.0 + power.abs()), "{power} vs {de}");
        }
    }

    #[test]
    fn torque_is_linear_in_acceleration() {
        let chain = ChainSpec::default_arm();
        let (q, qd) = random_config(8);
        let q = q.fixed_rows::<JOINTS>(0).into_owned();
        let qd = qd.fixed_rows::<JOINTS>(0).into_owned();
        let a1 = JointVector::from_fn(|i, _| i as f64 * 0.3 - 1.0);
        let a2 = JointVector::from_fn(|i, _| (i as f64).sin());
        let base = inverse_dynamics(&chain, &q, &qd, &JointVector::zeros());
        let t1 = inverse_dynamics(&chain, &q, &qd, &a1) - base;
        let t2 = inverse_dynamics(&chain, &q, &qd, &a2) - base;
        let t12 = inverse_dynamics(&chain, &q, &qd, &(a1 * 2.0 - a2 * 0.5)) - base;
        assert!((t12 - (t1 * 2.0 - t2 * 0.5)).norm() < 1e-10);
    }

    fn single_sample(qd0: f64, tau0: f64) -> JointTrajectory {
        let mut qd = JointVector::zeros();
        qd[0] = qd0;
        let mut tau = JointVector::zeros();
        tau[0] = tau0;
        JointTrajectory {
            times: vec![0.5],
            q: vec![JointVector::zeros()],
            qd: vec![qd],
            qdd: vec![JointVector::zeros()],
            tau: vec![tau],
        }
    }

    #[test]
    fn limit_report() {
        let limits = JointLimits::default();
        assert!(check_limits(&single_sample(1.0, 10.0), &limits).unwrap().is_empty());
        let report = check_limits(&single_sample(3.2, 0.0), &limits).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].kind, LimitKind::Velocity);
        assert_relative_eq!(report[0].margin, 0.06, epsilon = 1e-12);
        let report = check_limits(&single_sample(0.0, 131.0), &limits).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].kind, LimitKind::Torque);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn default_limits_match_table() {
        let l = JointLimits::default();
        assert_eq!(l.q_min, [-6.28, -1.8, -6.28, -0.19, -6.28, -1.69, -6.28]);
        assert_eq!(l.q_max, [6.28, 1.9, 6.28, 3.92, 6.28, 3.14, 6.28]);
        assert_eq!(l.qd_max, [3.14; 7]);
        assert_eq!(l.qdd_min, [-100.0; 7]);
        assert_eq!(l.tau_max, [130.0, 130.0, 40.0, 40.0, 40.0, 20.0, 20.0]);
        l.validate().unwrap();
    }
}
