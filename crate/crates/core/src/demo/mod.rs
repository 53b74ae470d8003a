//! Demonstrations: motion-capture ingestion, timing selection and the
//! cropped, gap-filled trajectory the learner imitates.

mod build;
mod capture;
pub mod estimate;
mod synth;
mod timing;

pub use build::build_demonstration;
pub use capture::{Annotation, RawCapture};
pub use synth::{bell_capture, hand_from_command, synthesize_demo};
pub use timing::{select_timing, Timing, FOLLOW_THROUGH, PATH_FRACTION, SLOW_FRACTION};

use nalgebra::{DVector, Vector3};

use crate::curvekit::{so3_exp, so3_log, Rotation};
use crate::{Error, Result};
use estimate::{floor_index, interpolate_cubic};

/// Hand pose and velocity at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
}

/// A demonstration on its own clock: `t = 0` is the start of hand motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    /// Hand samples covering `[0, duration]`.
    pub hand: Vec<HandSample>,
    /// Rope sample times covering `[0, t_c]`.
    pub rope_times: Vec<f64>,
    /// Stacked marker `[p; v]` per rope sample.
    pub rope: Vec<DVector<f64>>,
    pub t_c: f64,
    pub duration: f64,
    /// Capture time of `t = 0`.
    pub start_time: f64,
}

impl Demonstration {
    pub fn new(
        hand: Vec<HandSample>,
        rope_times: Vec<f64>,
        rope: Vec<DVector<f64>>,
        t_c: f64,
        duration: f64,
        start_time: f64,
    ) -> Result<Self> {
        let demo = Self { hand, rope_times, rope, t_c, duration, start_time };
        demo.validate()?;
        Ok(demo)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_c > 0.0 && self.t_c < self.duration) {
            return Err(Error::Domain(format!(
                "need 0 < t_c < T, got t_c = {} and T = {}",
                self.t_c, self.duration
            )));
        }
        if self.hand.len() < 2 || self.rope.is_empty() || self.rope.len() != self.rope_times.len() {
            return Err(Error::Dimension("demonstration has too few samples".into()));
        }
        let dim = self.rope[0].len();
        if dim == 0 || dim % 6 != 0 || self.rope.iter().any(|x| x.len() != dim) {
            return Err(Error::Dimension("rope samples must all have length 6N".into()));
        }
        let rising = |t: &[f64]| t.windows(2).all(|w| w[1] > w[0]);
        let hand_t: Vec<f64> = self.hand.iter().map(|h| h.t).collect();
        if !rising(&hand_t) || !rising(&self.rope_times) {
            return Err(Error::Domain("demonstration times must be strictly increasing".into()));
        }
        if hand_t[0] > 1e-9 || *hand_t.last().unwrap() < self.duration - 1e-9 {
            return Err(Error::Domain("hand samples must cover [0, T]".into()));
        }
        if *self.rope_times.last().unwrap() < self.t_c - 1e-9 {
            return Err(Error::TruncatedBeforeCritical {
                end: *self.rope_times.last().unwrap(),
                t_c: self.t_c,
            });
        }
        Ok(())
    }

    pub fn links(&self) -> usize {
        self.rope[0].len() / 6
    }

    /// Marker `[p; v]` at time `t` (cubic interpolation).
    pub fn rope_state_at(&self, t: f64) -> DVector<f64> {
        interpolate_cubic(&self.rope_times, &self.rope, t)
    }

    /// Marker `[p; v]` at the critical time.
    pub fn critical_state(&self) -> DVector<f64> {
        self.rope_state_at(self.t_c)
    }

    /// Hand pose at `t`: linear in position and velocity, geodesic in rotation.
    pub fn hand_at(&self, t: f64) -> HandSample {
        let times: Vec<f64> = self.hand.iter().map(|h| h.t).collect();
        let k = floor_index(&times, t);
        let a = &self.hand[k];
        if k + 1 >= self.hand.len() || t <= a.t {
            return HandSample { t, ..*a };
        }
        let b = &self.hand[k + 1];
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let rel = a.rotation.transpose().compose(&b.rotation);
        let step = Rotation::new_unchecked(so3_exp(&(so3_log(&rel) * w)));
        HandSample {
            t,
            position: a.position * (1.0 - w) + b.position * w,
            rotation: a.rotation.compose(&step),
            velocity: a.velocity * (1.0 - w) + b.velocity * w,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Demonstration {
        let hand = (0..=10)
            .map(|i| {
                let t = i as f64 * 0.1;
                HandSample {
                    t,
                    position: Vector3::new(t, 0.0, 1.0),
                    rotation: Rotation::from_axis_angle(&Vector3::z(), t),
                    velocity: Vector3::x(),
                }
            })
            .collect();
        let rope_times: Vec<f64> = (0..=8).map(|i| i as f64 * 0.1).collect();
        let rope = rope_times.iter().map(|t| DVector::from_element(6, *t)).collect();
        Demonstration::new(hand, rope_times, rope, 0.75, 1.0, 2.0).unwrap()
    }

    #[test]
    fn hand_interpolation_is_geodesic() {
        let d = toy();
        let h = d.hand_at(0.25);
        assert!((h.position.x - 0.25).abs() < 1e-12);
        assert!((so3_log(&h.rotation) - Vector3::new(0.0, 0.0, 0.25)).norm() < 1e-12);
    }

    #[test]
    fn rope_state_interpolates_linear_data_exactly() {
        let d = toy();
        assert!((d.critical_state() - DVector::from_element(6, 0.75)).amax() < 1e-12);
        assert_eq!(d.links(), 1);
    }

    #[test]
    fn rejects_critical_time_outside_motion() {
        let d = toy();
        let bad = Demonstration { t_c: 1.2, ..d.clone() };
        assert!(bad.validate().is_err());
        let short = Demonstration { t_c: 0.95, ..d };
        assert!(matches!(short.validate(), Err(Error::TruncatedBeforeCritical { .. })));
    }
}
