//! Velocity estimation and interpolation shared by captures and plant measurements.

use nalgebra::DVector;

/// Central differences followed by a zero-phase 2-sample moving average
/// (forward then backward), i.e. a `[1/4, 1/2, 1/4]` smoother. Ends fall back
/// to one-sided differences without smoothing.
pub fn estimate_velocities(times: &[f64], values: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![DVector::zeros(values[0].len())];
    }
    let raw: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i + 1 == n {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (&values[b] - &values[a]) / (times[b] - times[a])
        })
        .collect();
    (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                raw[i].clone()
            } else {
                (&raw[i - 1] + &raw[i] * 2.0 + &raw[i + 1]) * 0.25
            }
        })
        .collect()
}

/// Index of the last sample at or before `t` (clamped to the first sample).
pub(crate) fn floor_index(times: &[f64], t: f64) -> usize {
    match times.partition_point(|&s| s <= t + 1e-12) {
        0 => 0,
        k => k - 1,
    }
}

/// Cubic Lagrange interpolation through the four samples around `t`
/// (fewer near the ends).
pub fn interpolate_cubic(times: &[f64], values: &[DVector<f64>], t: f64) -> DVector<f64> {
    let n = times.len();
    assert!(n > 0 && n == values.len());
    let k = floor_index(times, t);
    if (times[k] - t).abs() <= 1e-12 {
        return values[k].clone();
    }
    let lo = k.saturating_sub(1).min(n.saturating_sub(4));
    let hi = (lo + 4).min(n);
    let mut out = DVector::zeros(values[0].len());
    for i in lo..hi {
        let mut w = 1.0;
        for j in lo..hi {
            if j != i {
                w *= (t - times[j]) / (times[i] - times[j]);
            }
        }
        out += &values[i] * w;
    }
    out
}

/// Piecewise-linear interpolation, clamped at the ends.
pub fn interpolate_linear(times: &[f64], values: &[DVector<f64>], t: f64) -> DVector<f64> {
    let k = floor_index(times, t);
    if k + 1 >= times.len() || t <= times[0] {
        return values[k].clone();
    }
    let w = ((t - times[k]) / (times[k + 1] - times[k])).clamp(0.0, 1.0);
    &values[k] * (1.0 - w) + &values[k + 1] * w
}
