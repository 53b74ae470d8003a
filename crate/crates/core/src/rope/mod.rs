//! Maximal-coordinate rope model.
//!
//! The rope is a chain of `N` point masses. Mass 1 hangs at distance `l` from
//! the driven fingertip and every following mass at distance `l` from its
//! predecessor. Positions, velocities and constraint multipliers are all
//! unknowns of the per-step implicit system, which is solved with Newton's
//! method and differentiated with the implicit function theorem.
//!
//! Multiplier scaling: constraints are written on squared distances
//! `|d|^2 - l^2`, so the tension carried by a link is `2 l |lambda|`.

mod linearize;
mod model;
mod sim;

pub use linearize::{
    linearize_rollout, linearize_system, linearize_system_at, tip_path, LinearizedSystem,
    TipPath, COMMAND_DT,
};
pub use model::{bending_forces, constraint_residual, mechanical_energy};
pub use sim::{rollout, rope_step, static_hanging_state, Rollout};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RopeParams {
    /// Bending stiffness, in units of the link mass.
    pub stiffness: f64,
    /// Bending damping, in units of the link mass.
    pub damping: f64,
    /// Mass of the last point, in units of the link mass.
    pub end_mass: f64,
    pub link_mass: f64,
    /// Link length (m).
    pub link_length: f64,
    pub links: usize,
    /// Integrator timestep (s).
    pub dt: f64,
}

impl Default for RopeParams {
    fn default() -> Self {
        Self {
            stiffness: 1e5,
            damping: 50.0,
            end_mass: 5.0,
            link_mass: 1.0,
            link_length: 0.1,
            links: 11,
            dt: 0.005,
        }
    }
}

impl RopeParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("end_mass", self.end_mass),
            ("link_mass", self.link_mass),
            ("link_length", self.link_length),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("rope {name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("stiffness", self.stiffness), ("damping", self.damping)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("rope {name} must be nonnegative, got {v}")));
            }
        }
        if self.links == 0 {
            return Err(Error::Config("rope needs at least one link".into()));
        }
        Ok(())
    }

    pub fn mass(&self, i: usize) -> f64 {
        if i + 1 == self.links {
            self.end_mass
        } else {
            self.link_mass
        }
    }

    pub fn total_length(&self) -> f64 {
        self.link_length * self.links as f64
    }
}

/// Positions (3N), velocities (3N) and multipliers (N) at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RopeState {
    pub p: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl RopeState {
    pub fn links(&self) -> usize {
        self.lambda.len()
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        self.p.fixed_rows::<3>(3 * i).into_owned()
    }

    pub fn velocity(&self, i: usize) -> Vector3<f64> {
        self.v.fixed_rows::<3>(3 * i).into_owned()
    }

    /// Stacked `[p; v]`.
    pub fn observation(&self) -> DVector<f64> {
        let n = self.p.len();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.p);
        x.rows_mut(n, n).copy_from(&self.v);
        x
    }
}
