//! Forces, per-step residual and its analytic Jacobians.

use nalgebra::{DMatrix, DVector, Vector3};

use super::{RopeParams, RopeState};
use crate::GRAVITY;

/// Extended point list: index 0 is the fingertip, 1..=N the rope masses.
fn point(p: &DVector<f64>, tip: &Vector3<f64>, i: usize) -> Vector3<f64> {
    if i == 0 {
        *tip
    } else {
        p.fixed_rows::<3>(3 * (i - 1)).into_owned()
    }
}

/// Discrete curvature `P[j+1] - 2 P[j] + P[j-1]` for joints j = 1..N-1.
fn curvatures(p: &DVector<f64>, tip: &Vector3<f64>, n: usize) -> Vec<Vector3<f64>> {
    (1..n)
        .map(|j| point(p, tip, j + 1) - point(p, tip, j) * 2.0 + point(p, tip, j - 1))
        .collect()
}

/// `-(D^T D P)` on the free masses, where `D` is the second-difference operator.
/// Differences are formed first so large absolute coordinates do not cancel.
fn laplacian_force(p: &DVector<f64>, tip: &Vector3<f64>, n: usize) -> DVector<f64> {
    let c = curvatures(p, tip, n);
    let at = |j: usize| -> Vector3<f64> {
        if j >= 1 && j < n {
            c[j - 1]
        } else {
            Vector3::zeros()
        }
    };
    let mut f = DVector::zeros(3 * n);
    for i in 1..=n {
        let fi = -(at(i - 1) - at(i) * 2.0 + at(i + 1));
        f.fixed_rows_mut::<3>(3 * (i - 1)).copy_from(&fi);
    }
    f
}

/// Scalar `D^T D` over the N+1 extended points (apply per coordinate).
pub(super) fn bending_operator(n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n + 1, n + 1);
    for j in 1..n {
        let idx = [j - 1, j, j + 1];
        let w = [1.0, -2.0, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                a[(idx[r], idx[c])] += w[r] * w[c];
            }
        }
    }
    a
}

fn gravity_force(params: &RopeParams) -> DVector<f64> {
    let n = params.links;
    let mut f = DVector::zeros(3 * n);
    for i in 0..n {
        f[3 * i + 2] = -params.mass(i) * GRAVITY;
    }
    f
}

/// Gravity plus bending stiffness and damping on the free masses.
///
/// Bending uses the energy `k / (2 l^2) * sum_j |P[j+1] - 2 P[j] + P[j-1]|^2`,
/// which equals `k (1 - cos theta_j)` per joint on the constraint manifold, so
/// the restoring torque is `k sin theta` and the rest shape is straight.
/// Damping applies the same operator to velocities with coefficient `b / l^2`.
pub fn bending_forces(
    params: &RopeParams,
    p: &DVector<f64>,
    v: &DVector<f64>,
    tip: &Vector3<f64>,
    tip_velocity: &Vector3<f64>,
) -> DVector<f64> {
    let n = params.links;
    let l2 = params.link_length * params.link_length;
    gravity_force(params)
        + laplacian_force(p, tip, n) * (params.stiffness / l2)
        + laplacian_force(v, tip_velocity, n) * (params.damping / l2)
}

/// Reaction of the internal forces on the driven fingertip.
#[cfg(test)]
pub(crate) fn tip_reaction(
    params: &RopeParams,
    p: &DVector<f64>,
    v: &DVector<f64>,
    tip: &Vector3<f64>,
    tip_velocity: &Vector3<f64>,
) -> Vector3<f64> {
    let n = params.links;
    let l2 = params.link_length * params.link_length;
    let first = |x: &DVector<f64>, t: &Vector3<f64>| -> Vector3<f64> {
        if n >= 2 {
            // only joint 1 touches the tip, with weight +1
            -curvatures(x, t, n)[0]
        } else {
            Vector3::zeros()
        }
    };
    first(p, tip) * (params.stiffness / l2) + first(v, tip_velocity) * (params.damping / l2)
}

/// `g(p, tip)`: squared-distance constraints, tip first.
pub fn constraint_residual(params: &RopeParams, p: &DVector<f64>, tip: &Vector3<f64>) -> DVector<f64> {
    let l2 = params.link_length * params.link_length;
    DVector::from_fn(params.links, |j, _| {
        (point(p, tip, j + 1) - point(p, tip, j)).norm_squared() - l2
    })
}

/// Kinetic + gravitational + bending energy (tip held at `tip`).
pub fn mechanical_energy(params: &RopeParams, state: &RopeState, tip: &Vector3<f64>) -> f64 {
    let n = params.links;
    let l2 = params.link_length * params.link_length;
    let mut e = 0.0;
    for i in 0..n {
        let m = params.mass(i);
        e += 0.5 * m * state.velocity(i).norm_squared() + m * GRAVITY * state.position(i).z;
    }
    let bend: f64 = curvatures(&state.p, tip, n).iter().map(|c| c.norm_squared()).sum();
    e + 0.5 * params.stiffness / l2 * bend
}

/// Inputs of one integrator step.
pub(super) struct StepInputs<'a> {
    pub params: &'a RopeParams,
    pub h: f64,
    pub prev: &'a RopeState,
    pub tip_prev: Vector3<f64>,
    pub tip_next: Vector3<f64>,
}

/// Residual blocks of one step, evaluated at the candidate `(p', v', lambda')`:
///
/// ```text
/// R1 = p' - p - h (v + v') / 2
/// R2 = M (v' - v) - h f(p', (p' - p) / h) - h G(p_mid)^T lambda'
/// R3 = g(p', tip')
/// ```
///
/// Kinematics and the constraint Jacobian use the midpoint, stiffness the new
/// positions and damping the mean velocity over the step. With a static tip
/// this makes the discrete energy change exactly
/// `-|dp|_K^2 / 2 - h |v_mid|_D^2 <= 0`.
pub(super) fn residual(inp: &StepInputs, next: &RopeState) -> DVector<f64> {
    let params = inp.params;
    let n = params.links;
    let h = inp.h;
    let mut r = DVector::zeros(7 * n);
    let r1 = &next.p - &inp.prev.p - (&inp.prev.v + &next.v) * (0.5 * h);
    r.rows_mut(0, 3 * n).copy_from(&r1);

    let mean_v = (&next.p - &inp.prev.p) / h;
    let tip_v = (inp.tip_next - inp.tip_prev) / h;
    let l2 = params.link_length * params.link_length;
    let f = gravity_force(params)
        + laplacian_force(&next.p, &inp.tip_next, n) * (params.stiffness / l2)
        + laplacian_force(&mean_v, &tip_v, n) * (params.damping / l2);
    let mut r2 = -f * h;
    for i in 0..n {
        let m = params.mass(i);
        for a in 0..3 {
            r2[3 * i + a] += m * (next.v[3 * i + a] - inp.prev.v[3 * i + a]);
        }
    }
    let tip_mid = (inp.tip_prev + inp.tip_next) * 0.5;
    let p_mid = (&inp.prev.p + &next.p) * 0.5;
    for j in 1..=n {
        let d = point(&p_mid, &tip_mid, j) - point(&p_mid, &tip_mid, j - 1);
        let w = d * (2.0 * h * next.lambda[j - 1]);
        for a in 0..3 {
            r2[3 * (j - 1) + a] -= w[a];
            if j >= 2 {
                r2[3 * (j - 2) + a] += w[a];
            }
        }
    }
    r.rows_mut(3 * n, 3 * n).copy_from(&r2);
    let r3 = constraint_residual(params, &next.p, &inp.tip_next);
    r.rows_mut(6 * n, n).copy_from(&r3);
    r
}

/// Scaled infinity norm used for convergence: positions by `l`, momentum by
/// the weight impulse of the heaviest mass over one step, constraints by `l^2`.
pub(super) fn scaled_norm(params: &RopeParams, h: f64, r: &DVector<f64>) -> f64 {
    let n = params.links;
    let l = params.link_length;
    let m_max = params.link_mass.max(params.end_mass);
    let r1 = r.rows(0, 3 * n).amax() / l;
    let r2 = r.rows(3 * n, 3 * n).amax() / (h * GRAVITY * m_max);
    let r3 = r.rows(6 * n, n).amax() / (l * l);
    r1.max(r2).max(r3)
}

/// Partial derivatives of the step residual.
pub(super) struct StepJacobians {
    /// d R / d (p', v', lambda'), 7N x 7N.
    pub new: DMatrix<f64>,
    /// d R / d (p, v) of the previous state, 7N x 6N.
    pub prev: DMatrix<f64>,
    /// d R / d tip', 7N x 3.
    pub tip_next: DMatrix<f64>,
    /// d R / d tip, 7N x 3.
    pub tip_prev: DMatrix<f64>,
}

fn add_block(m: &mut DMatrix<f64>, row: usize, col: usize, s: f64) {
    for a in 0..3 {
        m[(row + a, col + a)] += s;
    }
}

pub(super) fn jacobians(inp: &StepInputs, next: &RopeState, with_inputs: bool) -> StepJacobians {
    let params = inp.params;
    let n = params.links;
    let h = inp.h;
    let l2 = params.link_length * params.link_length;
    let kappa = params.stiffness / l2;
    let beta = params.damping / l2;
    let (pv, vv, lv) = (0, 3 * n, 6 * n);
    let (r1, r2, r3) = (0, 3 * n, 6 * n);

    let mut jn = DMatrix::zeros(7 * n, 7 * n);
    let mut jp = if with_inputs { DMatrix::zeros(7 * n, 6 * n) } else { DMatrix::zeros(0, 0) };
    let mut jt_next = if with_inputs { DMatrix::zeros(7 * n, 3) } else { DMatrix::zeros(0, 0) };
    let mut jt_prev = if with_inputs { DMatrix::zeros(7 * n, 3) } else { DMatrix::zeros(0, 0) };

    for i in 0..n {
        add_block(&mut jn, r1 + 3 * i, pv + 3 * i, 1.0);
        add_block(&mut jn, r1 + 3 * i, vv + 3 * i, -0.5 * h);
        add_block(&mut jn, r2 + 3 * i, vv + 3 * i, params.mass(i));
        if with_inputs {
            add_block(&mut jp, r1 + 3 * i, 3 * i, -1.0);
            add_block(&mut jp, r1 + 3 * i, 3 * n + 3 * i, -0.5 * h);
            add_block(&mut jp, r2 + 3 * i, 3 * n + 3 * i, -params.mass(i));
        }
    }

    // bending: d(-h f)/dp' = (h kappa + beta) A, d/dp = -beta A
    let a = bending_operator(n);
    for i in 1..=n {
        for k in 0..=n {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            let row = r2 + 3 * (i - 1);
            if k == 0 {
                if with_inputs {
                    add_block(&mut jt_next, row, 0, (h * kappa + beta) * aik);
                    add_block(&mut jt_prev, row, 0, -beta * aik);
                }
            } else {
                add_block(&mut jn, row, pv + 3 * (k - 1), (h * kappa + beta) * aik);
                if with_inputs {
                    add_block(&mut jp, row, 3 * (k - 1), -beta * aik);
                }
            }
        }
    }

    // constraint forces at the midpoint: -h sum_j lambda_j * edge Laplacian / 2 per endpoint
    let tip_mid = (inp.tip_prev + inp.tip_next) * 0.5;
    let p_mid = (&inp.prev.p + &next.p) * 0.5;
    for j in 1..=n {
        let lam = next.lambda[j - 1];
        let d_mid = point(&p_mid, &tip_mid, j) - point(&p_mid, &tip_mid, j - 1);
        let d_new = point(&next.p, &inp.tip_next, j) - point(&next.p, &inp.tip_next, j - 1);
        let bj = 3 * (j - 1); // mass j
        // R2 rows of mass j: -2 h lam d_mid
        add_block(&mut jn, r2 + bj, pv + bj, -h * lam);
        if with_inputs {
            add_block(&mut jp, r2 + bj, bj, -h * lam);
        }
        for ax in 0..3 {
            jn[(r2 + bj + ax, lv + j - 1)] -= 2.0 * h * d_mid[ax];
            jn[(r3 + j - 1, pv + bj + ax)] += 2.0 * d_new[ax];
        }
        if j >= 2 {
            let bp = 3 * (j - 2); // mass j-1
            add_block(&mut jn, r2 + bj, pv + bp, h * lam);
            add_block(&mut jn, r2 + bp, pv + bp, -h * lam);
            add_block(&mut jn, r2 + bp, pv + bj, h * lam);
            if with_inputs {
                add_block(&mut jp, r2 + bj, bp, h * lam);
                add_block(&mut jp, r2 + bp, bp, -h * lam);
                add_block(&mut jp, r2 + bp, bj, h * lam);
            }
            for ax in 0..3 {
                jn[(r2 + bp + ax, lv + j - 1)] += 2.0 * h * d_mid[ax];
                jn[(r3 + j - 1, pv + bp + ax)] -= 2.0 * d_new[ax];
            }
        } else if with_inputs {
            add_block(&mut jt_next, r2 + bj, 0, h * lam);
            add_block(&mut jt_prev, r2 + bj, 0, h * lam);
            for ax in 0..3 {
                jt_next[(r3, ax)] -= 2.0 * d_new[ax];
            }
        }
    }

    StepJacobians {
        new: jn,
        prev: jp,
        tip_next: jt_next,
        tip_prev: jt_prev,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_inputs(seed: u64, n: usize) -> (RopeParams, RopeState, RopeState, Vector3<f64>, Vector3<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = RopeParams {
            stiffness: 30.0,
            damping: 2.0,
            end_mass: 3.0,
            links: n,
            ..RopeParams::default()
        };
        let mut r = |len: usize, s: f64| DVector::from_fn(len, |_, _| rng.gen_range(-s..s));
        let prev = RopeState { p: r(3 * n, 1.0), v: r(3 * n, 1.0), lambda: r(n, 5.0) };
        let next = RopeState { p: r(3 * n, 1.0), v: r(3 * n, 1.0), lambda: r(n, 5.0) };
        let t0 = Vector3::from_iterator(r(3, 1.0).iter().copied());
        let t1 = Vector3::from_iterator(r(3, 1.0).iter().copied());
        (params, prev, next, t0, t1)
    }

    fn unpack(z: &DVector<f64>, n: usize) -> RopeState {
        RopeState {
            p: z.rows(0, 3 * n).into_owned(),
            v: z.rows(3 * n, 3 * n).into_owned(),
            lambda: z.rows(6 * n, n).into_owned(),
        }
    }

    fn pack(s: &RopeState) -> DVector<f64> {
        let n = s.links();
        let mut z = DVector::zeros(7 * n);
        z.rows_mut(0, 3 * n).copy_from(&s.p);
        z.rows_mut(3 * n, 3 * n).copy_from(&s.v);
        z.rows_mut(6 * n, n).copy_from(&s.lambda);
        z
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let n = 4;
        let (params, prev, next, t0, t1) = random_inputs(3, n);
        let h = 0.01;
        let inp = StepInputs { params: &params, h, prev: &prev, tip_prev: t0, tip_next: t1 };
        let jac = jacobians(&inp, &next, true);
        let eps = 1e-6;
        let z = pack(&next);
        for c in 0..7 * n {
            let mut zp = z.clone();
            zp[c] += eps;
            let mut zm = z.clone();
            zm[c] -= eps;
            let fd = (residual(&inp, &unpack(&zp, n)) - residual(&inp, &unpack(&zm, n))) / (2.0 * eps);
            let err = (fd - jac.new.column(c)).amax();
            assert!(err < 1e-6, "new column {c}: {err}");
        }
        let zprev = pack(&prev);
        for c in 0..6 * n {
            let mut zp = zprev.clone();
            zp[c] += eps;
            let mut zm = zprev.clone();
            zm[c] -= eps;
            let (sp, sm) = (unpack(&zp, n), unpack(&zm, n));
            let ip = StepInputs { prev: &sp, ..inp };
            let im = StepInputs { prev: &sm, ..inp };
            let fd = (residual(&ip, &next) - residual(&im, &next)) / (2.0 * eps);
            assert!((fd - jac.prev.column(c)).amax() < 1e-6, "prev column {c}");
        }
        for ax in 0..3 {
            let mut d = Vector3::zeros();
            d[ax] = eps;
            let fd_next = (residual(&StepInputs { tip_next: t1 + d, ..inp }, &next)
                - residual(&StepInputs { tip_next: t1 - d, ..inp }, &next))
                / (2.0 * eps);
            assert!((fd_next - jac.tip_next.column(ax)).amax() < 1e-6);
            let fd_prev = (residual(&StepInputs { tip_prev: t0 + d, ..inp }, &next)
                - residual(&StepInputs { tip_prev: t0 - d, ..inp }, &next))
                / (2.0 * eps);
            assert!((fd_prev - jac.tip_prev.column(ax)).amax() < 1e-6);
        }
    }

    fn straight_vertical(n: usize, l: f64) -> DVector<f64> {
        DVector::from_fn(3 * n, |k, _| if k % 3 == 2 { -l * (k / 3 + 1) as f64 } else { 0.0 })
    }

    #[test]
    fn straight_rope_feels_only_gravity() {
        let params = RopeParams::default();
        let p = straight_vertical(params.links, params.link_length);
        let v = DVector::zeros(3 * params.links);
        let f = bending_forces(&params, &p, &v, &Vector3::zeros(), &Vector3::zeros());
        assert!((f - gravity_force(&params)).amax() < 1e-6);
    }

    #[test]
    fn no_bending_terms_means_pure_gravity() {
        let (mut params, prev, _, t0, _) = random_inputs(5, 6);
        params.stiffness = 0.0;
        params.damping = 0.0;
        let f = bending_forces(&params, &prev.p, &prev.v, &t0, &Vector3::new(0.3, 0.1, 0.0));
        assert_eq!(f, gravity_force(&params));
    }

    #[test]
    fn internal_forces_balance_with_tip_reaction() {
        let (params, prev, _, t0, t1) = random_inputs(9, 7);
        let f = bending_forces(&params, &prev.p, &prev.v, &t0, &t1) - gravity_force(&params);
        let mut total = tip_reaction(&params, &prev.p, &prev.v, &t0, &t1);
        for i in 0..params.links {
            total += f.fixed_rows::<3>(3 * i);
        }
        assert!(total.norm() < 1e-9 * f.amax().max(1.0));
    }
}
