//! Synthetic captures from the virtual plant.

use nalgebra::Vector3;

use super::{Annotation, HandSample, RawCapture};
use crate::arm::{forward_kinematics, ChainSpec};
use crate::curvekit::{CommandSpline, Rotation};
use crate::plant::{execute_trial, PlantConfig};
use crate::{Error, Result};

/// Executes `command` on `plant` and records it as a capture, annotating the
/// collision at `t_c_fraction` of the command duration. The coarse window
/// spans the whole capture.
pub fn synthesize_demo(
    command: &CommandSpline,
    plant: &PlantConfig,
    t_c_fraction: f64,
) -> Result<(RawCapture, Annotation)> {
    if !(t_c_fraction > 0.0 && t_c_fraction < 1.0) {
        return Err(Error::Domain(format!("t_c fraction must be in (0, 1), got {t_c_fraction}")));
    }
    let measured = execute_trial(command, plant)?;
    if let Some(f) = measured.fault {
        return Err(Error::Domain(format!("demonstration command faulted at t = {:.3} s", f.time)));
    }
    let capture = measured.to_capture();
    let end = capture.times.last().copied().unwrap_or(0.0);
    let annotation = Annotation { t_c: t_c_fraction * command.duration(), coarse_window: [0.0, end] };
    Ok((capture, annotation))
}

/// Fingertip of `command` sampled every `dt` as hand samples.
pub fn hand_from_command(chain: &ChainSpec, command: &CommandSpline, dt: f64) -> Result<Vec<HandSample>> {
    command
        .sample_times(dt)
        .into_iter()
        .map(|t| {
            let pose = forward_kinematics(chain, &command.eval(t, 0)?, &command.eval(t, 1)?);
            Ok(HandSample { t, position: pose.position, rotation: pose.rotation, velocity: pose.velocity })
        })
        .collect()
}

/// Hand moving along x at 200 Hz with a sin^2 speed bump on [0.2, 0.8] s,
/// peaking at 3 m/s at 0.5 s. One static marker.
pub fn bell_capture() -> RawCapture {
    let dt = 0.005;
    let times: Vec<f64> = (0..=240).map(|i| i as f64 * dt).collect();
    let x = |t: f64| {
        let s = ((t - 0.2) / 0.6).clamp(0.0, 1.0);
        // integral of 3 sin^2(pi s) over time
        3.0 * 0.6 * (s / 2.0 - (2.0 * std::f64::consts::PI * s).sin() / (4.0 * std::f64::consts::PI))
    };
    RawCapture {
        hand_positions: times.iter().map(|&t| Vector3::new(x(t), 0.0, 1.0)).collect(),
        hand_rotations: vec![Rotation::identity(); times.len()],
        markers: vec![vec![Some(Vector3::zeros())]; times.len()],
        times,
    }
}
