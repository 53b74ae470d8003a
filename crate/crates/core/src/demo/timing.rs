//! Search for the start and end of the demonstrated motion.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::estimate::{estimate_velocities, interpolate_linear};
use super::{Annotation, RawCapture};
use crate::{Error, Result};

/// Fixed follow-through after the collision (s).
pub const FOLLOW_THROUGH: f64 = 0.035;
/// Hand speed counted as "at rest", relative to the peak.
pub const SLOW_FRACTION: f64 = 0.03;
/// Path-length fraction that marks the start of motion.
pub const PATH_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t0: f64,
    pub t_c: f64,
    pub t_f: f64,
    pub t_peak: f64,
    /// Last near-rest sample before the peak.
    pub slow_start: f64,
}

impl Timing {
    pub fn duration(&self) -> f64 {
        self.t_f - self.t0
    }
}

/// Hand speed per capture sample.
pub(crate) fn hand_speeds(raw: &RawCapture) -> Vec<f64> {
    let pos: Vec<DVector<f64>> = raw
        .hand_positions
        .iter()
        .map(|p| DVector::from_column_slice(p.as_slice()))
        .collect();
    estimate_velocities(&raw.times, &pos).iter().map(|v| v.norm()).collect()
}

pub fn select_timing(raw: &RawCapture, annotation: &Annotation) -> Result<Timing> {
    raw.validate()?;
    let [start, end] = annotation.coarse_window;
    let t_c = annotation.t_c;
    let window: Vec<usize> = (0..raw.len()).filter(|&i| raw.times[i] >= start && raw.times[i] <= end).collect();
    if window.is_empty() {
        return Err(Error::EmptyWindow { start, end });
    }
    if !(t_c > start && t_c < end) {
        return Err(Error::Domain(format!("t_c = {t_c} lies outside the window [{start}, {end}]")));
    }
    let speed = hand_speeds(raw);
    let peak = *window
        .iter()
        .max_by(|&&a, &&b| speed[a].total_cmp(&speed[b]))
        .unwrap();
    let threshold = SLOW_FRACTION * speed[peak];
    let first = window[0];
    let slow = (first..=peak).rev().find(|&i| speed[i] <= threshold);
    let Some(slow) = slow else {
        let best = (first..=peak).min_by(|&a, &b| speed[a].total_cmp(&speed[b])).unwrap();
        return Err(Error::NoSlowPoint { threshold, best_candidate: raw.times[best] });
    };

    let t_f = t_c + FOLLOW_THROUGH;
    if t_f > *raw.times.last().unwrap() + 1e-12 {
        return Err(Error::Domain(format!("capture ends before the follow-through time {t_f}")));
    }
    // arc length from the slow point to t_f, sample by sample
    let pos: Vec<DVector<f64>> = raw
        .hand_positions
        .iter()
        .map(|p| DVector::from_column_slice(p.as_slice()))
        .collect();
    let mut cumulative = vec![0.0];
    let mut idx = vec![slow];
    let mut i = slow;
    while i + 1 < raw.len() && raw.times[i + 1] <= t_f {
        let seg = (&pos[i + 1] - &pos[i]).norm();
        cumulative.push(cumulative.last().unwrap() + seg);
        idx.push(i + 1);
        i += 1;
    }
    let tail = (interpolate_linear(&raw.times, &pos, t_f) - &pos[i]).norm();
    let total = cumulative.last().unwrap() + tail;
    let target = PATH_FRACTION * total;
    let k = cumulative.iter().position(|&c| c >= target).unwrap_or(cumulative.len() - 1);
    let t0 = raw.times[idx[k]];
    if !(t0 < t_c) {
        return Err(Error::Domain(format!("motion start {t0} is not before t_c = {t_c}")));
    }
    Ok(Timing { t0, t_c, t_f, t_peak: raw.times[peak], slow_start: raw.times[slow] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::bell_capture;

    #[test]
    fn constant_speed_never_slows() {
        let mut cap = bell_capture();
        for (i, p) in cap.hand_positions.iter_mut().enumerate() {
            p.x = i as f64 * 0.01;
        }
        let ann = Annotation { t_c: 0.6, coarse_window: [0.1, 1.0] };
        assert!(matches!(select_timing(&cap, &ann), Err(Error::NoSlowPoint { .. })));
    }

    #[test]
    fn follow_through_is_exactly_35_ms() {
        let cap = bell_capture();
        let ann = Annotation { t_c: 0.7, coarse_window: [0.05, 1.1] };
        let timing = select_timing(&cap, &ann).unwrap();
        assert!((timing.t_f - timing.t_c - 0.035).abs() < 1e-12);
        assert!((timing.t_peak - 0.5).abs() <= 0.005);
    }

    #[test]
    fn empty_window_is_reported() {
        let cap = bell_capture();
        let ann = Annotation { t_c: 5.0, coarse_window: [4.0, 6.0] };
        assert!(matches!(select_timing(&cap, &ann), Err(Error::EmptyWindow { .. })));
    }
}
