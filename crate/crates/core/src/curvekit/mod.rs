//! Bezier command curves and rotation utilities.

mod bezier;
mod so3;

pub(crate) use bezier::sample_grid;
pub use bezier::{
    bernstein, eval_spline, spline_knot_jacobian, CommandSpline, KnotJacobian, Knots, CHANNELS, DEGREE,
    JOINTS, KNOTS, NUM_VARS,
};
pub use so3::{hat, right_jacobian_inv, so3_exp, so3_log, Rotation};
