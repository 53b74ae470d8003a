//! Ready-made motions and demonstrations for experiments and tests.

use nalgebra::DVector;

use crate::arm::{ChainSpec, JointLimits};
use crate::curvekit::JOINTS;
use crate::curvekit::{CommandSpline, Knots};
use crate::demo::{build_demonstration, hand_from_command, select_timing, synthesize_demo, Demonstration, Timing};
use crate::plant::{execute_trial, MeasuredRollout, PlantConfig};
use crate::rope::{RopeParams, COMMAND_DT};
use crate::{Error, Result};

/// Duration of the demonstrated swing; faster than the arm's velocity limits
/// allow, like a human throw.
pub const REFERENCE_DURATION: f64 = 0.55;
/// A duration at which the same swing is within the arm's limits.
pub const FEASIBLE_DURATION: f64 = 1.0;
/// Annotated collision time as a fraction of the reference duration.
pub const REFERENCE_TC_FRACTION: f64 = 0.7;

/// The demonstrated swing.
pub fn reference_command() -> CommandSpline {
    swing_command(REFERENCE_DURATION)
}

/// An overhand swing: shoulder and elbow sweep forward while the wrist flicks.
pub fn swing_command(duration: f64) -> CommandSpline {
    let rows: [[f64; 8]; 10] = [
        [0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.3, 0.3],
        [0.2, 0.2, 0.35, 0.7, 1.0, 1.2, 1.2, 1.2],
        [0.0; 8],
        [0.7, 0.7, 0.5, 0.5, 0.9, 1.2, 1.3, 1.3],
        [0.0; 8],
        [0.2, 0.2, 0.0, 0.2, 0.5, 0.6, 0.6, 0.6],
        [0.0; 8],
        [0.0; 8],
        [0.0; 8],
        [0.9; 8],
    ];
    CommandSpline::new(Knots::from_fn(|c, i| rows[c][i]), duration).expect("swing command is valid")
}

/// The human stand-in: same rope and markers, no joint limits, no servo lag.
pub fn demonstrator(plant: &PlantConfig) -> PlantConfig {
    let mut human = plant.clone();
    let (lo, hi) = ([f64::NEG_INFINITY; JOINTS], [f64::INFINITY; JOINTS]);
    human.limits = JointLimits {
        q_min: lo,
        q_max: hi,
        qd_min: lo,
        qd_max: hi,
        qdd_min: lo,
        qdd_max: hi,
        tau_min: lo,
        tau_max: hi,
    };
    human.servo.time_constant = 0.0;
    human.servo.rate_limit = f64::INFINITY;
    human
}

/// Plant that differs from the default learner model: rope twice as stiff and
/// damped, 20 ms servo lag, 1 mm marker noise.
pub fn mismatched_plant(seed: u64) -> PlantConfig {
    let mut rope = RopeParams::default();
    rope.stiffness *= 2.0;
    rope.damping *= 2.0;
    let mut plant = PlantConfig::from_rope(rope);
    plant.servo.time_constant = 0.02;
    plant.measurement.noise_std = 0.001;
    plant.seed = seed;
    plant
}

/// Runs `command` on `plant` and keeps its own clock: hand from the exact
/// command, rope from the measured markers up to the first sample at or
/// after `t_c`.
pub fn demonstration_from_trial(
    chain: &ChainSpec,
    command: &CommandSpline,
    plant: &PlantConfig,
    t_c: f64,
) -> Result<(Demonstration, MeasuredRollout)> {
    let measured = execute_trial(command, plant)?;
    if let Some(f) = measured.fault {
        return Err(Error::Domain(format!("target command faulted at t = {:.3} s", f.time)));
    }
    let hand = hand_from_command(chain, command, COMMAND_DT)?;
    let m = measured.marker_count();
    let mut rope_times = Vec::new();
    let mut rope = Vec::new();
    for i in 0..measured.times.len() {
        let t = measured.times[i];
        let p = measured.positions(i).ok_or_else(|| Error::Domain(format!("marker dropout at t = {t}")))?;
        let mut x = DVector::zeros(6 * m);
        x.rows_mut(0, 3 * m).copy_from(&p);
        x.rows_mut(3 * m, 3 * m).copy_from(&measured.velocities[i]);
        rope_times.push(t);
        rope.push(x);
        if t >= t_c - 1e-12 {
            break;
        }
    }
    let demo = Demonstration::new(hand, rope_times, rope, t_c, command.duration(), 0.0)?;
    Ok((demo, measured))
}

/// The full capture pipeline: record `command` on `plant`, select timing
/// around the annotated collision, crop and fill.
pub fn captured_demonstration(
    command: &CommandSpline,
    plant: &PlantConfig,
    t_c_fraction: f64,
) -> Result<(Demonstration, Timing)> {
    let (raw, annotation) = synthesize_demo(command, plant, t_c_fraction)?;
    let timing = select_timing(&raw, &annotation)?;
    let demo = build_demonstration(&raw, &timing)?;
    Ok((demo, timing))
}

/// Default demonstration: the reference swing by the demonstrator holding
/// `plant`'s rope.
pub fn reference_demonstration(plant: &PlantConfig) -> Result<(Demonstration, Timing)> {
    captured_demonstration(&reference_command(), &demonstrator(plant), REFERENCE_TC_FRACTION)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{check_limits, command_trajectory, LimitKind};

    #[test]
    fn slow_swing_respects_limits_and_fast_one_does_not() {
        let chain = ChainSpec::default_arm();
        let slow = command_trajectory(&chain, &swing_command(FEASIBLE_DURATION), COMMAND_DT, true);
        let viol = check_limits(&slow, &JointLimits::default()).unwrap();
        assert!(viol.is_empty(), "{viol:?}");
        let fast = command_trajectory(&chain, &reference_command(), COMMAND_DT, true);
        let viol = check_limits(&fast, &JointLimits::default()).unwrap();
        assert!(viol.iter().any(|v| v.kind == LimitKind::Velocity));
    }

    #[test]
    fn reference_demonstration_is_cropped() {
        let (demo, timing) = reference_demonstration(&PlantConfig::default()).unwrap();
        assert!((timing.t_f - timing.t_c - 0.035).abs() < 1e-12);
        assert!((demo.duration - (timing.t_f - timing.t0)).abs() < 1e-9);
        assert_eq!(demo.links(), 11);
    }
}
