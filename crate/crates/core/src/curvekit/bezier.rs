use nalgebra::{DMatrix, SMatrix, SVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Polynomial degree of every command channel.
pub const DEGREE: usize = 7;
/// Knot points per channel.
pub const KNOTS: usize = DEGREE + 1;
/// 7 arm joints followed by 3 base translation channels.
pub const CHANNELS: usize = 10;
pub const JOINTS: usize = 7;
/// Length of the flattened knot vector (channel-major).
pub const NUM_VARS: usize = CHANNELS * KNOTS;

pub type Knots = SMatrix<f64, CHANNELS, KNOTS>;

/// Feedforward command: ten Bezier channels sharing a fixed duration.
///
/// Column `i` of `knots` is the knot point at `i / 7 * duration`. Rows 0..7 are
/// joint angles in radians, rows 7..10 the base translation in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSpline {
    knots: Knots,
    duration: f64,
}

impl CommandSpline {
    pub fn new(knots: Knots, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::Domain(format!("duration must be positive, got {duration}")));
        }
        if knots.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("command knots must be finite".into()));
        }
        Ok(Self { knots, duration })
    }

    /// Every knot of channel `c` set to `values[c]`.
    pub fn constant(values: &SVector<f64, CHANNELS>, duration: f64) -> Result<Self> {
        let knots = Knots::from_fn(|c, _| values[c]);
        Self::new(knots, duration)
    }

    pub fn knots(&self) -> &Knots {
        &self.knots
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Knots flattened channel-major: entry `c * KNOTS + i` is knot `i` of channel `c`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(NUM_VARS);
        for c in 0..CHANNELS {
            for i in 0..KNOTS {
                out.push(self.knots[(c, i)]);
            }
        }
        out
    }

    pub fn from_flat(flat: &[f64], duration: f64) -> Result<Self> {
        if flat.len() != NUM_VARS {
            return Err(Error::Dimension(format!(
                "expected {NUM_VARS} knot values, got {}",
                flat.len()
            )));
        }
        Self::new(Knots::from_fn(|c, i| flat[c * KNOTS + i]), duration)
    }

    /// `self + scale * delta` with `delta` flattened channel-major.
    pub fn offset(&self, delta: &[f64], scale: f64) -> Result<Self> {
        let mut flat = self.flatten();
        if delta.len() != flat.len() {
            return Err(Error::Dimension(format!(
                "expected {NUM_VARS} update values, got {}",
                delta.len()
            )));
        }
        for (x, d) in flat.iter_mut().zip(delta) {
            *x += scale * d;
        }
        Self::from_flat(&flat, self.duration)
    }

    pub fn eval(&self, t: f64, order: usize) -> Result<SVector<f64, CHANNELS>> {
        eval_spline(self, t, order)
    }

    /// Samples `0, dt, 2 dt, ...` up to and including the duration (the last
    /// sample is clamped to the end point when `dt` does not divide it).
    pub fn sample_times(&self, dt: f64) -> Vec<f64> {
        sample_grid(self.duration, dt)
    }
}

pub(crate) fn sample_grid(duration: f64, dt: f64) -> Vec<f64> {
    let n = (duration / dt + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    if duration - times[n] > 1e-9 {
        times.push(duration);
    }
    times
}

#[derive(Serialize, Deserialize)]
struct CommandSplineRepr {
    duration_s: f64,
    knots: Vec<Vec<f64>>,
}

impl Serialize for CommandSpline {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let knots = (0..KNOTS)
            .map(|i| self.knots.column(i).iter().copied().collect())
            .collect();
        CommandSplineRepr {
            duration_s: self.duration,
            knots,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CommandSpline {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = CommandSplineRepr::deserialize(deserializer)?;
        if repr.knots.len() != KNOTS || repr.knots.iter().any(|k| k.len() != CHANNELS) {
            return Err(D::Error::custom(format!(
                "knots must be {KNOTS} columns of {CHANNELS} values"
            )));
        }
        let knots = Knots::from_fn(|c, i| repr.knots[i][c]);
        CommandSpline::new(knots, repr.duration_s).map_err(D::Error::custom)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Bernstein basis polynomial `C(n, i) s^i (1 - s)^(n - i)`.
pub fn bernstein(i: usize, n: usize, s: f64) -> Result<f64> {
    if i > n {
        return Err(Error::Domain(format!("basis index {i} exceeds degree {n}")));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("basis parameter {s} outside [0, 1]")));
    }
    Ok(bernstein_unchecked(i, n, s))
}

fn bernstein_unchecked(i: usize, n: usize, s: f64) -> f64 {
    binomial(n, i) * s.powi(i as i32) * (1.0 - s).powi((n - i) as i32)
}

/// Weights `w` with `d^order/dt^order B(t) = sum_i w_i u_i`. Identical for every channel.
fn derivative_weights(t: f64, duration: f64, order: usize) -> [f64; KNOTS] {
    let s = (t / duration).clamp(0.0, 1.0);
    let mut w = [0.0; KNOTS];
    if order > DEGREE {
        return w;
    }
    let lower = DEGREE - order;
    // n! / (n - r)!
    let falling: f64 = (0..order).map(|j| (DEGREE - j) as f64).product();
    let scale = falling / duration.powi(order as i32);
    for i in 0..=lower {
        let b = bernstein_unchecked(i, lower, s);
        // forward difference of order r: sum_k (-1)^(r-k) C(r,k) u_{i+k}
        for k in 0..=order {
            let sign = if (order - k) % 2 == 0 { 1.0 } else { -1.0 };
            w[i + k] += scale * b * sign * binomial(order, k);
        }
    }
    w
}

fn check_eval_args(c: &CommandSpline, t: f64, order: usize) -> Result<()> {
    if order > 3 {
        return Err(Error::Domain(format!("derivative order {order} not supported")));
    }
    let tol = 1e-12 * c.duration.max(1.0);
    if !(t >= -tol && t <= c.duration + tol) {
        return Err(Error::Domain(format!(
            "time {t} outside [0, {}]",
            c.duration
        )));
    }
    Ok(())
}

/// Evaluates the command (order 0) or its exact time derivatives (orders 1..=3).
pub fn eval_spline(c: &CommandSpline, t: f64, order: usize) -> Result<SVector<f64, CHANNELS>> {
    check_eval_args(c, t, order)?;
    let w = derivative_weights(t, c.duration, order);
    Ok(c.knots * SVector::<f64, KNOTS>::from_column_slice(&w))
}

/// Derivative of [`eval_spline`] with respect to the flattened knots.
///
/// The map is block diagonal: every channel uses the same 8 weights on its own
/// knots, so only those weights are stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotJacobian {
    pub weights: [f64; KNOTS],
}

impl KnotJacobian {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(CHANNELS, NUM_VARS);
        for c in 0..CHANNELS {
            for i in 0..KNOTS {
                m[(c, c * KNOTS + i)] = self.weights[i];
            }
        }
        m
    }

    /// `A * J` for a dense `A` with `CHANNELS` columns, without forming `J`.
    pub fn left_mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.ncols(), CHANNELS);
        let mut out = DMatrix::zeros(a.nrows(), NUM_VARS);
        for r in 0..a.nrows() {
            for c in 0..CHANNELS {
                let v = a[(r, c)];
                if v != 0.0 {
                    for i in 0..KNOTS {
                        out[(r, c * KNOTS + i)] += v * self.weights[i];
                    }
                }
            }
        }
        out
    }
}

pub fn spline_knot_jacobian(c: &CommandSpline, t: f64, order: usize) -> Result<KnotJacobian> {
    // order 3 is accepted as well: the tracking objective needs the jerk map
    check_eval_args(c, t, order)?;
    Ok(KnotJacobian {
        weights: derivative_weights(t, c.duration, order),
    })
}
