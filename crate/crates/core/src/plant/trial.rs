//! One execution of a command on the virtual hardware.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PlantConfig;
use crate::arm::{
    check_limits, forward_kinematics, inverse_dynamics, ConfigVector, JointTrajectory, JointVector, LimitKind,
};
use crate::curvekit::{CommandSpline, Rotation, JOINTS};
use crate::demo::estimate::{estimate_velocities, interpolate_cubic};
use crate::demo::RawCapture;
use crate::rng::{stream_rng, streams};
use crate::rope::{rollout, static_hanging_state, Rollout, COMMAND_DT};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Limit(LimitKind),
    /// The rope simulation failed to converge.
    Simulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub time: f64,
    pub joint: Option<usize>,
    pub kind: FaultKind,
}

/// What the motion-capture system and the arm report for one trial.
#[derive(Debug, Clone)]
pub struct MeasuredRollout {
    /// Marker sample times from motion start.
    pub times: Vec<f64>,
    /// `markers[sample][marker]`, `None` for dropouts.
    pub markers: Vec<Vec<Option<Vector3<f64>>>>,
    /// Estimated marker velocities, 3M per sample.
    pub velocities: Vec<DVector<f64>>,
    /// Executed joint trajectory at the command rate.
    pub joints: JointTrajectory,
    /// Fingertip position and orientation at the command rate.
    pub tips: Vec<Vector3<f64>>,
    pub tip_rotations: Vec<Rotation>,
    /// Ground-truth rope simulation (not visible to the learner).
    pub rope: Rollout,
    pub fault: Option<Fault>,
    pub seed: u64,
    pub duration: f64,
}

impl MeasuredRollout {
    pub fn marker_count(&self) -> usize {
        self.markers.first().map_or(0, |m| m.len())
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn faulted(&self) -> bool {
        self.fault.is_some()
    }

    /// Stacked marker positions at sample `i`, if no marker dropped out.
    pub fn positions(&self, i: usize) -> Option<DVector<f64>> {
        let m = self.marker_count();
        let mut x = DVector::zeros(3 * m);
        for (k, p) in self.markers[i].iter().enumerate() {
            x.fixed_rows_mut::<3>(3 * k).copy_from(p.as_ref()?);
        }
        Some(x)
    }

    /// Marker `[p; v]` at time `t` by cubic interpolation over complete samples.
    pub fn state_at(&self, t: f64) -> Result<DVector<f64>> {
        let end = self.end_time();
        if t > end + 1e-9 {
            return Err(Error::TruncatedBeforeCritical { end, t_c: t });
        }
        let m = self.marker_count();
        let mut times = Vec::new();
        let mut states = Vec::new();
        for i in 0..self.times.len() {
            if (self.times[i] - t).abs() > 0.05 {
                continue;
            }
            if let Some(p) = self.positions(i) {
                let mut x = DVector::zeros(6 * m);
                x.rows_mut(0, 3 * m).copy_from(&p);
                x.rows_mut(3 * m, 3 * m).copy_from(&self.velocities[i]);
                times.push(self.times[i]);
                states.push(x);
            }
        }
        let before = times.iter().any(|&s| s <= t + 1e-12);
        let after = times.iter().any(|&s| s >= t - 1e-12);
        if !(before && after) {
            return Err(Error::TruncatedBeforeCritical { end, t_c: t });
        }
        Ok(interpolate_cubic(&times, &states, t))
    }

    /// The trial in the capture CSV schema (hand pose at marker times).
    pub fn to_capture(&self) -> RawCapture {
        let tip_t = &self.joints.times;
        let mut hand_positions = Vec::new();
        let mut hand_rotations = Vec::new();
        for &t in &self.times {
            let k = tip_t.partition_point(|&s| s <= t + 1e-12).saturating_sub(1);
            let (a, b) = if k + 1 < tip_t.len() { (k, k + 1) } else { (k, k) };
            let w = if a == b { 0.0 } else { ((t - tip_t[a]) / (tip_t[b] - tip_t[a])).clamp(0.0, 1.0) };
            hand_positions.push(self.tips[a] * (1.0 - w) + self.tips[b] * w);
            hand_rotations.push(if w < 0.5 { self.tip_rotations[a] } else { self.tip_rotations[b] });
        }
        RawCapture { times: self.times.clone(), hand_positions, hand_rotations, markers: self.markers.clone() }
    }
}

/// First-order lag with first-order-hold input, exactly discretized, plus a
/// rate clamp. Base channels pass through.
fn servo(cfg: &PlantConfig, desired: &[ConfigVector]) -> Vec<ConfigVector> {
    let dt = COMMAND_DT;
    let tau = cfg.servo.time_constant;
    let alpha = (-dt / tau).exp();
    let gain = if tau > 0.0 { tau * (1.0 - alpha) / dt } else { 0.0 };
    let max_step = cfg.servo.rate_limit * dt;
    let mut out = Vec::with_capacity(desired.len());
    out.push(desired[0]);
    for k in 1..desired.len() {
        let prev = out[k - 1];
        let mut next = desired[k];
        for j in 0..JOINTS {
            let (u0, u1) = (desired[k - 1][j], desired[k][j]);
            let x = u1 + alpha * (prev[j] - u0) - gain * (u1 - u0);
            next[j] = prev[j] + (x - prev[j]).clamp(-max_step, max_step);
        }
        out.push(next);
    }
    out
}

/// Finite-difference velocities and accelerations on the command grid.
fn differentiate(q: &[JointVector], dt: f64) -> (Vec<JointVector>, Vec<JointVector>) {
    let n = q.len();
    let qd: Vec<JointVector> = (0..n)
        .map(|i| match (i, n) {
            (_, 1) => JointVector::zeros(),
            (0, _) => (q[1] - q[0]) / dt,
            (i, n) if i + 1 == n => (q[n - 1] - q[n - 2]) / dt,
            (i, _) => (q[i + 1] - q[i - 1]) / (2.0 * dt),
        })
        .collect();
    let qdd: Vec<JointVector> = (0..n)
        .map(|i| {
            if n < 3 {
                JointVector::zeros()
            } else {
                let c = i.clamp(1, n - 2);
                (q[c + 1] - q[c] * 2.0 + q[c - 1]) / (dt * dt)
            }
        })
        .collect();
    (qd, qdd)
}

/// Runs `command` on the plant. Faults are recorded, not raised: data after a
/// fault is absent, as on hardware.
pub fn execute_trial(command: &CommandSpline, cfg: &PlantConfig) -> Result<MeasuredRollout> {
    cfg.validate()?;
    let times = command.sample_times(COMMAND_DT);
    let desired: Vec<ConfigVector> = times.iter().map(|&t| command.eval(t, 0)).collect::<Result<_>>()?;
    let actual = servo(cfg, &desired);
    let q: Vec<JointVector> = actual.iter().map(|c| c.fixed_rows::<JOINTS>(0).into_owned()).collect();
    let (qd, qdd) = differentiate(&q, COMMAND_DT);
    let tau: Vec<JointVector> = (0..q.len()).map(|i| inverse_dynamics(&cfg.chain, &q[i], &qd[i], &qdd[i])).collect();
    let mut joints = JointTrajectory { times: times.clone(), q, qd, qdd, tau };

    let mut fault = None;
    let violations = check_limits(&joints, &cfg.limits)?;
    if let Some(v) = violations.iter().find(|v| {
        let (lo, hi) = cfg.limits.bounds(v.kind);
        v.margin > cfg.fault_tolerance * lo[v.joint].abs().max(hi[v.joint].abs())
    }) {
        fault = Some(Fault { time: v.time, joint: Some(v.joint), kind: FaultKind::Limit(v.kind) });
    }
    // keep samples strictly before the fault; the arm stops there
    let keep = match fault {
        Some(f) => times.partition_point(|&t| t < f.time - 1e-12).max(1),
        None => times.len(),
    };
    joints.times.truncate(keep);
    joints.q.truncate(keep);
    joints.qd.truncate(keep);
    joints.qdd.truncate(keep);
    joints.tau.truncate(keep);
    let poses: Vec<_> = actual[..keep]
        .iter()
        .map(|c| forward_kinematics(&cfg.chain, c, &ConfigVector::zeros()))
        .collect();
    let tips: Vec<Vector3<f64>> = poses.iter().map(|p| p.position).collect();
    let tip_rotations: Vec<Rotation> = poses.iter().map(|p| p.rotation).collect();

    // true rope on its own grid, tip linearly interpolated
    let end = joints.times[keep - 1];
    let dt = cfg.rope.dt;
    let steps = (end / dt + 1e-9).floor() as usize;
    let tip_at = |t: f64| {
        let k = joints.times.partition_point(|&s| s <= t + 1e-12).saturating_sub(1);
        if k + 1 >= keep {
            return tips[keep - 1];
        }
        let w = (t - joints.times[k]) / (joints.times[k + 1] - joints.times[k]);
        tips[k] * (1.0 - w) + tips[k + 1] * w
    };
    let rope_tips: Vec<Vector3<f64>> = (0..=steps).map(|k| tip_at(k as f64 * dt)).collect();
    let z0 = static_hanging_state(&cfg.rope, &rope_tips[0]);
    let rope = match rollout(&cfg.rope, &z0, &rope_tips) {
        Ok(r) => r,
        Err(Error::NewtonDivergence { step, .. }) => {
            let t = step as f64 * dt;
            if fault.map_or(true, |f| t < f.time) {
                fault = Some(Fault { time: t, joint: None, kind: FaultKind::Simulation });
            }
            rollout(&cfg.rope, &z0, &rope_tips[..step])?
        }
        Err(e) => return Err(e),
    };

    // motion capture
    let rope_end = (rope.len() - 1) as f64 * dt;
    let mdt = 1.0 / cfg.measurement.rate_hz;
    let samples = (rope_end / mdt + 1e-9).floor() as usize + 1;
    let marker_masses = cfg.marker_masses();
    let mut noise_rng = stream_rng(cfg.seed, streams::MARKER_NOISE);
    let mut drop_rng = stream_rng(cfg.seed, streams::DROPOUT);
    let noise = Normal::new(0.0, cfg.measurement.noise_std.max(0.0)).expect("nonnegative std");
    let mut mtimes = Vec::with_capacity(samples);
    let mut markers = Vec::with_capacity(samples);
    for s in 0..samples {
        let t = s as f64 * mdt;
        let p = rope.observation_at(t);
        let row: Vec<Option<Vector3<f64>>> = marker_masses
            .iter()
            .map(|&i| {
                let mut v = Vector3::new(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
                if cfg.measurement.noise_std > 0.0 {
                    v += Vector3::from_fn(|_, _| noise.sample(&mut noise_rng));
                }
                let dropped = cfg.measurement.dropout > 0.0 && drop_rng.gen::<f64>() < cfg.measurement.dropout;
                (!dropped).then_some(v)
            })
            .collect();
        mtimes.push(t);
        markers.push(row);
    }
    let velocities = marker_velocities(&mtimes, &markers);

    Ok(MeasuredRollout {
        times: mtimes,
        markers,
        velocities,
        joints,
        tips,
        tip_rotations,
        rope,
        fault,
        seed: cfg.seed,
        duration: command.duration(),
    })
}

/// Velocities from the shared estimator; dropouts are bridged linearly first.
pub(crate) fn marker_velocities(times: &[f64], markers: &[Vec<Option<Vector3<f64>>>]) -> Vec<DVector<f64>> {
    let n = times.len();
    let m = markers.first().map_or(0, |r| r.len());
    let mut filled = vec![DVector::zeros(3 * m); n];
    for k in 0..m {
        let valid: Vec<usize> = (0..n).filter(|&i| markers[i][k].is_some()).collect();
        if valid.is_empty() {
            continue;
        }
        for i in 0..n {
            let p = match markers[i][k] {
                Some(p) => p,
                None => {
                    let after = valid.partition_point(|&v| v < i);
                    let a = valid[after.saturating_sub(1).min(valid.len() - 1)];
                    let b = valid[after.min(valid.len() - 1)];
                    let (pa, pb) = (markers[a][k].unwrap(), markers[b][k].unwrap());
                    if a == b {
                        pa
                    } else {
                        pa + (pb - pa) * ((times[i] - times[a]) / (times[b] - times[a]))
                    }
                }
            };
            filled[i].fixed_rows_mut::<3>(3 * k).copy_from(&p);
        }
    }
    estimate_velocities(times, &filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvekit::Knots;
    use crate::rope::{linearize_system, RopeParams};

    /// Gentle swing with zero velocity at both ends.
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

    #[test]
    fn ideal_plant_reproduces_model_rollout() {
        let rope = RopeParams::default();
        let cfg = PlantConfig::ideal(rope);
        let cmd = swing(0.6, 0.8);
        let meas = execute_trial(&cmd, &cfg).unwrap();
        assert!(meas.fault.is_none());
        let lin = linearize_system(&cfg.chain, &cmd, &rope, 0.5).unwrap();
        let state = meas.state_at(0.5).unwrap();
        let err = (state.rows(0, 33) - lin.state.rows(0, 33)).amax();
        assert!(err <= 1e-6, "{err}");
        assert_eq!(meas.marker_count(), 11);
        assert!((meas.times[1] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn velocity_violation_faults_and_truncates() {
        let cfg = PlantConfig::ideal(RopeParams::default());
        // base yaw sweep: fast (peak above 3.14 rad/s) but gentle in acceleration
        let profile = [0.0, 0.0, 0.0, 0.0, 3.0, 3.0, 3.0, 3.0];
        let knots = Knots::from_fn(|c, i| match c {
            0 => profile[i],
            9 => 0.9,
            _ => 0.0,
        });
        let cmd = CommandSpline::new(knots, 1.0).unwrap();
        let traj = crate::arm::command_trajectory(&cfg.chain, &cmd, COMMAND_DT, true);
        let report = check_limits(&traj, &cfg.limits).unwrap();
        assert!(report.iter().all(|v| v.kind == LimitKind::Velocity));
        let first = report.iter().find(|v| v.margin > 0.02 * cfg.limits.qd_max[0]).unwrap().time;
        let meas = execute_trial(&cmd, &cfg).unwrap();
        let fault = meas.fault.expect("fault");
        assert_eq!(fault.kind, FaultKind::Limit(LimitKind::Velocity));
        assert!((fault.time - first).abs() <= 2.0 * COMMAND_DT);
        assert!(meas.end_time() < fault.time);
        assert!(matches!(meas.state_at(0.9), Err(Error::TruncatedBeforeCritical { .. })));
    }

    #[test]
    fn servo_lag_delays_motion() {
        let mut cfg = PlantConfig::ideal(RopeParams::default());
        cfg.servo.time_constant = 0.05;
        let cmd = swing(0.6, 0.8);
        let meas = execute_trial(&cmd, &cfg).unwrap();
        let k = 60;
        let want = cmd.eval(meas.joints.times[k], 0).unwrap()[1];
        assert!(meas.joints.q[k][1] < want);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let mut cfg = PlantConfig::default();
        cfg.seed = 11;
        cfg.measurement.dropout = 0.01;
        let cmd = swing(0.5, 0.6);
        let a = execute_trial(&cmd, &cfg).unwrap();
        let b = execute_trial(&cmd, &cfg).unwrap();
        assert_eq!(a.markers, b.markers);
        cfg.seed = 12;
        let c = execute_trial(&cmd, &cfg).unwrap();
        assert_ne!(a.markers, c.markers);
    }

    #[test]
    fn fine_plant_reports_eleven_markers() {
        let cfg = PlantConfig::ideal(RopeParams::default()).refined();
        let meas = execute_trial(&swing(0.5, 0.6), &cfg).unwrap();
        assert_eq!(meas.marker_count(), 11);
        let last = meas.positions(0).unwrap();
        // fingertip at 1.6 m, rope 1.1 m
        assert!((last[32] - 0.5).abs() < 1e-9);
    }
}
