//! Dense convex QP solver.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x^T P x + q^T x
//! subject to  A x = b
//!             G x <= h
//! ```
//!
//! with a Mehrotra predictor-corrector interior-point method, followed by an
//! active-set polish that makes binding inequalities hold with equality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Equality multipliers.
    pub y: DVector<f64>,
    /// Inequality multipliers (nonnegative).
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iter: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iter: 100,
            polish: true,
        }
    }
}

impl QpProblem {
    /// Problem with no constraints.
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            g: DMatrix::zeros(0, n),
            h: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let ok = self.p.shape() == (n, n)
            && self.a.ncols() == n
            && self.a.nrows() == self.b.len()
            && self.g.ncols() == n
            && self.g.nrows() == self.h.len();
        if !ok {
            return Err(Error::Dimension(format!(
                "qp blocks inconsistent: P {:?}, q {}, A {:?}, b {}, G {:?}, h {}",
                self.p.shape(),
                n,
                self.a.shape(),
                self.b.len(),
                self.g.shape(),
                self.h.len()
            )));
        }
        let asym = (&self.p - self.p.transpose()).amax();
        if asym > 1e-9 * (1.0 + self.p.amax()) {
            return Err(Error::Domain(format!("qp Hessian is not symmetric (|P - P^T| = {asym})")));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !(finite(self.p.as_slice())
            && finite(self.q.as_slice())
            && finite(self.a.as_slice())
            && finite(self.b.as_slice())
            && finite(self.g.as_slice())
            && self.h.iter().all(|v| !v.is_nan() && *v > f64::NEG_INFINITY))
        {
            return Err(Error::Domain("qp data contains non-finite entries".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Largest equality or inequality violation at `x`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let eq = if self.b.is_empty() { 0.0 } else { (&self.a * x - &self.b).amax() };
        let ineq = (&self.g * x - &self.h).iter().fold(0.0f64, |m, v| m.max(*v));
        eq.max(ineq)
    }

    /// Drops inequality rows with an infinite right-hand side.
    fn finite_rows(&self) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
        let keep: Vec<usize> = (0..self.h.len()).filter(|&i| self.h[i].is_finite()).collect();
        let g = DMatrix::from_fn(keep.len(), self.num_vars(), |r, c| self.g[(keep[r], c)]);
        let h = DVector::from_fn(keep.len(), |r, _| self.h[keep[r]]);
        (g, h, keep)
    }
}

/// Solves the reduced system `[H A^T; A -eps I] [dx; dy] = [r1; r2]`.
/// `reg` is a relative regularization on the scale of the original Hessian.
fn solve_reduced(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
    reg: f64,
) -> Option<DVector<f64>> {
    let n = h.nrows();
    let p = a.nrows();
    let scale = reg;
    let mut k = DMatrix::zeros(n + p, n + p);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    for i in 0..n {
        k[(i, i)] += scale;
    }
    k.view_mut((n, 0), (p, n)).copy_from(a);
    k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
    for i in 0..p {
        k[(n + i, n + i)] = -scale;
    }
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(r1);
    rhs.rows_mut(n, p).copy_from(r2);
    let lu = k.clone().lu();
    let mut x = lu.solve(&rhs)?;
    // iterative refinement against the regularization
    for _ in 0..2 {
        let res = &rhs - &k * &x;
        if let Some(dx) = lu.solve(&res) {
            x += dx;
        }
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

pub fn solve_qp(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    prob.validate()?;
    let n = prob.num_vars();
    let (g, h, keep) = prob.finite_rows();
    let m = h.len();
    let pe = prob.b.len();
    let full_z = |z: &DVector<f64>| {
        let mut out = DVector::zeros(prob.h.len());
        for (r, &i) in keep.iter().enumerate() {
            out[i] = z[r];
        }
        out
    };

    // zero is optimal when there is no linear term and it is feasible
    if prob.q.iter().all(|v| *v == 0.0) && prob.b.iter().all(|v| *v == 0.0) && h.iter().all(|v| *v >= 0.0) {
        return Ok(QpSolution {
            x: DVector::zeros(n),
            y: DVector::zeros(pe),
            z: DVector::zeros(prob.h.len()),
            status: QpStatus::Optimal,
            objective: 0.0,
            iterations: 0,
        });
    }

    let p = &prob.p;
    let a = &prob.a;
    let gt = g.transpose();
    let at = a.transpose();

    // initial point: least squares on the constraints
    let h0 = p + &gt * &g;
    let r1 = -&prob.q + &gt * &h;
    let reg = 1e-13 * (1.0 + p.amax());
    let init = solve_reduced(&h0, a, &r1, &prob.b, reg).ok_or(Error::Infeasible("singular initial KKT".into()))?;
    let mut x = init.rows(0, n).into_owned();
    let mut y = DVector::zeros(pe);
    let mut s = &h - &g * &x;
    let shift = s.iter().fold(0.0f64, |acc, v| acc.max(-v));
    s.apply(|v| *v += shift + 1.0);
    let mut z = DVector::from_element(m, 1.0);

    let qn = 1.0 + prob.q.amax();
    let bn = 1.0 + if pe > 0 { prob.b.amax() } else { 0.0 };
    let hn = 1.0 + if m > 0 { h.amax() } else { 0.0 };
    let tol = settings.tolerance;
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;

    for it in 0..settings.max_iter {
        iterations = it + 1;
        let rd = p * &x + &prob.q + &at * &y + &gt * &z;
        let re = a * &x - &prob.b;
        let ri = &g * &x + &s - &h;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        let rd_n = rd.amax() / qn;
        let re_n = if pe > 0 { re.amax() / bn } else { 0.0 };
        let ri_n = if m > 0 { ri.amax() / hn } else { 0.0 };
        let obj = prob.objective(&x).abs();
        let comp = s.iter().zip(z.iter()).fold(0.0f64, |c, (s, z)| c.max(s * z));
        if rd_n <= tol && re_n <= tol && ri_n <= tol && comp <= tol * (1.0 + obj) {
            status = QpStatus::Optimal;
            break;
        }
        // stalled at roundoff with complementarity far below tolerance
        let loose = 100.0 * tol;
        if rd_n <= loose && re_n <= loose && ri_n <= loose && mu <= 1e-3 * tol * (1.0 + obj) {
            status = QpStatus::Optimal;
            break;
        }
        if m > 0 && z.amax() > 1e13 * qn && ri_n > 1e-6 {
            status = QpStatus::Infeasible;
            break;
        }

        let w = DVector::from_fn(m, |i, _| z[i] / s[i]);
        let mut hk = p.clone();
        for i in 0..m {
            let wi = w[i];
            for c1 in 0..n {
                let gi = g[(i, c1)];
                if gi == 0.0 {
                    continue;
                }
                for c2 in 0..n {
                    hk[(c1, c2)] += wi * gi * g[(i, c2)];
                }
            }
        }
        let lu_step = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // dz = S^-1 (-rc + Z ri + Z G dx), ds = -ri - G dx
            let t = DVector::from_fn(m, |i, _| (-rc[i] + z[i] * ri[i]) / s[i]);
            let r1 = -&rd - &gt * &t;
            let sol = solve_reduced(&hk, a, &r1, &(-&re), reg)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, pe).into_owned();
            let gdx = &g * &dx;
            let dz = DVector::from_fn(m, |i, _| t[i] + w[i] * gdx[i]);
            let ds = -&ri - gdx;
            Some((dx, dy, ds, dz))
        };

        // predictor
        let rc_aff = s.component_mul(&z);
        let Some((_, _, ds_a, dz_a)) = lu_step(&rc_aff) else {
            break;
        };
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let sigma = if m > 0 {
            let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff)) / m as f64;
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };
        // corrector
        let rc = DVector::from_fn(m, |i, _| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu);
        let Some((dx, dy, ds, dz)) = lu_step(&rc) else {
            break;
        };
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
    }

    let mut sol = QpSolution {
        objective: prob.objective(&x),
        x,
        y,
        z: full_z(&z),
        status,
        iterations,
    };
    if settings.polish && status == QpStatus::Optimal && m > 0 {
        let active: Vec<usize> = (0..m).filter(|&i| z[i] > s[i]).collect();
        if let Some(polished) = polish(prob, &g, &h, &active, &keep, &sol) {
            sol = polished;
        }
    }
    Ok(sol)
}

/// Re-solves with the identified active inequalities as equalities.
fn polish(
    prob: &QpProblem,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    active: &[usize],
    keep: &[usize],
    ipm: &QpSolution,
) -> Option<QpSolution> {
    let n = prob.num_vars();
    let pe = prob.b.len();
    let na = active.len();
    let mut a = DMatrix::zeros(pe + na, n);
    let mut b = DVector::zeros(pe + na);
    a.rows_mut(0, pe).copy_from(&prob.a);
    b.rows_mut(0, pe).copy_from(&prob.b);
    for (r, &i) in active.iter().enumerate() {
        a.row_mut(pe + r).copy_from(&g.row(i));
        b[pe + r] = h[i];
    }
    let sol = solve_reduced(&prob.p, &a, &(-&prob.q), &b, 1e-13 * (1.0 + prob.p.amax()))?;
    let x = sol.rows(0, n).into_owned();
    let y = sol.rows(n, pe).into_owned();
    let za = sol.rows(n + pe, na).into_owned();
    let hn = 1.0 + h.amax();
    let slack_ok = (g * &x - h).iter().all(|v| *v <= 1e-10 * hn);
    let eq_ok = pe == 0 || (&prob.a * &x - &prob.b).amax() <= 1e-10 * (1.0 + prob.b.amax());
    let dual_ok = za.iter().all(|v| *v >= -1e-7 * (1.0 + za.amax()));
    let objective = prob.objective(&x);
    let not_worse = objective <= ipm.objective + 1e-7 * (1.0 + ipm.objective.abs());
    if !(slack_ok && eq_ok && dual_ok && not_worse) {
        return None;
    }
    let mut z = DVector::zeros(prob.h.len());
    for (r, &i) in active.iter().enumerate() {
        z[keep[i]] = za[r].max(0.0);
    }
    Some(QpSolution {
        x,
        y,
        z,
        status: QpStatus::Optimal,
        objective,
        iterations: ipm.iterations,
    })
}

/// Scaled KKT residual of a candidate solution (stationarity, primal
/// feasibility, complementarity), for tests and diagnostics.
pub fn kkt_residual(prob: &QpProblem, sol: &QpSolution) -> f64 {
    let stat = &prob.p * &sol.x + &prob.q + prob.a.transpose() * &sol.y + prob.g.transpose() * &sol.z;
    let stat = stat.amax() / (1.0 + prob.q.amax());
    let primal = prob.violation(&sol.x);
    let slack = &prob.h - &prob.g * &sol.x;
    let comp = (0..slack.len())
        .filter(|&i| slack[i].is_finite())
        .map(|i| (sol.z[i] * slack[i]).abs())
        .fold(0.0, f64::max);
    let dual = sol.z.iter().fold(0.0f64, |m, v| m.max(-v));
    stat.max(primal).max(comp).max(dual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unconstrained_toy() {
        // min (x-1)^2 + (y+2)^2 + x y
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let q = DVector::from_vec(vec![-2.0, 4.0]);
        let sol = solve_qp(&QpProblem::unconstrained(p, q), &QpSettings::default()).unwrap();
        // normal equations: 2x + y = 2, x + 2y = -4
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 8.0 / 3.0).abs() < 1e-9);
        assert!((sol.x[1] + 10.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_is_returned_exactly() {
        let mut prob = QpProblem::unconstrained(DMatrix::identity(3, 3), DVector::zeros(3));
        prob.g = DMatrix::identity(3, 3);
        prob.h = DVector::from_element(3, 1.0);
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.x, DVector::zeros(3));
    }

    #[test]
    fn equality_constrained() {
        // min x^2 + y^2 s.t. x + y = 1
        let mut prob = QpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2));
        prob.a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        prob.b = DVector::from_vec(vec![1.0]);
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-9 && (sol.x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_boxes() {
        let mut prob = QpProblem::unconstrained(DMatrix::identity(1, 1), DVector::from_vec(vec![1.0]));
        prob.g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        prob.h = DVector::from_vec(vec![-1.0, -1.0]); // x <= -1 and x >= 1
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_ne!(sol.status, QpStatus::Optimal);
    }

    #[test]
    fn infinite_bounds_are_ignored() {
        let mut prob = QpProblem::unconstrained(DMatrix::identity(1, 1), DVector::from_vec(vec![-3.0]));
        prob.g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        prob.h = DVector::from_vec(vec![f64::INFINITY, 1.0]);
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let mut prob = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        prob.g = DMatrix::zeros(1, 3);
        prob.h = DVector::zeros(1);
        assert!(matches!(solve_qp(&prob, &QpSettings::default()), Err(Error::Dimension(_))));
    }

    /// Brute force over all active sets of a tiny inequality-constrained QP.
    fn enumerate(prob: &QpProblem) -> DVector<f64> {
        let m = prob.h.len();
        let n = prob.num_vars();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0..(1u32 << m) {
            let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let ga = DMatrix::from_fn(rows.len(), n, |r, c| prob.g[(rows[r], c)]);
            let ha = DVector::from_fn(rows.len(), |r, _| prob.h[rows[r]]);
            let Some(sol) = solve_reduced(&prob.p, &ga, &(-&prob.q), &ha, 1e-13) else { continue };
            let x = sol.rows(0, n).into_owned();
            if prob.violation(&x) > 1e-9 {
                continue;
            }
            let f = prob.objective(&x);
            if best.as_ref().map_or(true, |(b, _)| f < *b - 1e-12) {
                best = Some((f, x));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn binding_bound_matches_enumeration_exactly() {
        // velocity-like bound: a x <= 0.3 binds at the optimum
        let p = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let q = DVector::from_vec(vec![-4.0, -1.0, 2.0]);
        let mut prob = QpProblem::unconstrained(p, q);
        prob.g = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0]);
        prob.h = DVector::from_vec(vec![0.3, 5.0, 5.0, 5.0]);
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        let reference = enumerate(&prob);
        assert!((&sol.x - &reference).amax() < 1e-9);
        assert!(((sol.x[0] + sol.x[1]) - 0.3).abs() < 1e-12);
        assert!(kkt_residual(&prob, &sol) < 1e-7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn random_box_qps_match_enumeration(
            seed in proptest::collection::vec(-1.0f64..1.0, 9 + 3 + 3),
        ) {
            let l = DMatrix::from_row_slice(3, 3, &seed[..9]);
            let p = &l * l.transpose() + DMatrix::identity(3, 3) * 0.1;
            let q = DVector::from_row_slice(&seed[9..12]) * 3.0;
            let mut prob = QpProblem::unconstrained(p, q);
            let mut g = DMatrix::zeros(6, 3);
            let mut h = DVector::zeros(6);
            for i in 0..3 {
                g[(2 * i, i)] = 1.0;
                g[(2 * i + 1, i)] = -1.0;
                h[2 * i] = 0.2 + seed[12 + i].abs();
                h[2 * i + 1] = 0.2 + seed[12 + i].abs();
            }
            prob.g = g;
            prob.h = h;
            let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
            prop_assert_eq!(sol.status, QpStatus::Optimal);
            prop_assert!(kkt_residual(&prob, &sol) < 1e-7);
            prop_assert!((&sol.x - enumerate(&prob)).amax() < 1e-7);
        }
    }
}
