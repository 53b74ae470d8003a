//! Cropping, gap filling and velocity estimation of a capture.

use nalgebra::{DVector, Vector3};

use super::estimate::{estimate_velocities, floor_index, interpolate_cubic};
use super::{Demonstration, HandSample, RawCapture, Timing};
use crate::{Error, Result};

/// Longest dropout run that is filled by interpolation.
pub const MAX_GAP: usize = 3;
/// Extra samples kept around the crop so velocities at the edges are central.
const MARGIN: usize = 2;

/// Fills missing samples of one marker on `lo..=hi`. Runs longer than
/// `MAX_GAP` that touch `must_lo..=must_hi` are errors; other unfillable runs
/// are left empty.
fn fill_marker(
    raw: &RawCapture,
    marker: usize,
    lo: usize,
    hi: usize,
    must: (usize, usize),
) -> Result<Vec<Option<Vector3<f64>>>> {
    let mut out: Vec<Option<Vector3<f64>>> = (lo..=hi).map(|i| raw.markers[i][marker]).collect();
    let valid: Vec<usize> = (lo..=hi).filter(|&i| raw.markers[i][marker].is_some()).collect();
    let mut i = lo;
    while i <= hi {
        if raw.markers[i][marker].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i <= hi && raw.markers[i][marker].is_none() {
            i += 1;
        }
        let end = i - 1;
        let run = end - start + 1;
        let touches = start <= must.1 && end >= must.0;
        let before: Vec<usize> = valid.iter().copied().filter(|&k| k < start).rev().take(2).collect();
        let after: Vec<usize> = valid.iter().copied().filter(|&k| k > end).take(2).collect();
        if run > MAX_GAP || before.is_empty() || after.is_empty() {
            if touches {
                return Err(Error::GapTooLarge { marker, run, start: raw.times[start] });
            }
            continue;
        }
        let mut nodes: Vec<usize> = before.into_iter().rev().chain(after).collect();
        nodes.sort_unstable();
        let t: Vec<f64> = nodes.iter().map(|&k| raw.times[k]).collect();
        let v: Vec<DVector<f64>> = nodes
            .iter()
            .map(|&k| DVector::from_column_slice(raw.markers[k][marker].unwrap().as_slice()))
            .collect();
        for k in start..=end {
            let p = interpolate_cubic(&t, &v, raw.times[k]);
            out[k - lo] = Some(Vector3::new(p[0], p[1], p[2]));
        }
    }
    Ok(out)
}

/// Crops the capture to `[t0, t_f]` (hand) and `[t0, t_c]` (rope), fills
/// short marker dropouts and estimates velocities. The returned
/// demonstration runs on its own clock starting at `t0`.
///
/// Rope samples extend to the first sample at or after `t_c` so the critical
/// state is interpolated rather than extrapolated.
pub fn build_demonstration(raw: &RawCapture, timing: &Timing) -> Result<Demonstration> {
    raw.validate()?;
    let last = raw.len() - 1;
    let i0 = floor_index(&raw.times, timing.t0);
    let cover = |t: f64| raw.times.partition_point(|&s| s < t - 1e-12).min(last);
    let ic = cover(timing.t_c);
    let i_f = cover(timing.t_f);
    if raw.times[ic] < timing.t_c - 1e-12 {
        return Err(Error::TruncatedBeforeCritical { end: raw.times[last], t_c: timing.t_c });
    }
    if raw.times[i_f] < timing.t_f - 1e-12 {
        return Err(Error::Domain(format!("capture ends before t_f = {}", timing.t_f)));
    }
    let t0 = timing.t0;

    // hand
    let (hlo, hhi) = (i0.saturating_sub(MARGIN), (i_f + MARGIN).min(last));
    let ht: Vec<f64> = raw.times[hlo..=hhi].to_vec();
    let hp: Vec<DVector<f64>> = (hlo..=hhi)
        .map(|i| DVector::from_column_slice(raw.hand_positions[i].as_slice()))
        .collect();
    let hv = estimate_velocities(&ht, &hp);
    let hand: Vec<HandSample> = (i0..=i_f)
        .map(|i| HandSample {
            t: raw.times[i] - t0,
            position: raw.hand_positions[i],
            rotation: raw.hand_rotations[i],
            velocity: Vector3::new(hv[i - hlo][0], hv[i - hlo][1], hv[i - hlo][2]),
        })
        .collect();

    // rope
    let m = raw.marker_count();
    let (mut rlo, mut rhi) = (i0.saturating_sub(MARGIN), (ic + MARGIN).min(last));
    let mut filled = Vec::with_capacity(m);
    for k in 0..m {
        filled.push(fill_marker(raw, k, rlo, rhi, (i0, ic))?);
    }
    // drop margin samples that stayed empty
    while rlo < i0 && filled.iter().any(|f| f[0].is_none()) {
        rlo += 1;
        for f in filled.iter_mut() {
            f.remove(0);
        }
    }
    while rhi > ic && filled.iter().any(|f| f.last().unwrap().is_none()) {
        rhi -= 1;
        for f in filled.iter_mut() {
            f.pop();
        }
    }
    let rt: Vec<f64> = raw.times[rlo..=rhi].to_vec();
    let rp: Vec<DVector<f64>> = (0..rt.len())
        .map(|j| DVector::from_iterator(3 * m, (0..m).flat_map(|k| filled[k][j].unwrap().into_iter().copied().collect::<Vec<_>>())))
        .collect();
    let rv = estimate_velocities(&rt, &rp);
    let mut rope_times = Vec::new();
    let mut rope = Vec::new();
    for i in i0..=ic {
        let j = i - rlo;
        let mut x = DVector::zeros(6 * m);
        x.rows_mut(0, 3 * m).copy_from(&rp[j]);
        x.rows_mut(3 * m, 3 * m).copy_from(&rv[j]);
        rope_times.push(raw.times[i] - t0);
        rope.push(x);
    }
    Demonstration::new(hand, rope_times, rope, timing.t_c - t0, timing.duration(), t0)
}
