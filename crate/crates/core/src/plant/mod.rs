//! Virtual hardware: servo-lagged arm, the "true" rope and a 200 Hz
//! motion-capture pipeline.

mod trial;

pub use trial::{execute_trial, Fault, FaultKind, MeasuredRollout};

use serde::{Deserialize, Serialize};

use crate::arm::{ChainSpec, JointLimits};
use crate::rope::RopeParams;
use crate::{Error, Result};

/// Rope length shared by every preset (m).
pub const ROPE_LENGTH: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoConfig {
    /// First-order lag time constant (s); 0 tracks the command exactly.
    pub time_constant: f64,
    /// Joint rate clamp (rad/s).
    pub rate_limit: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self { time_constant: 0.02, rate_limit: 6.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    pub rate_hz: f64,
    /// Marker noise standard deviation per coordinate (m).
    pub noise_std: f64,
    /// Per-sample, per-marker dropout probability.
    pub dropout: f64,
    pub markers: usize,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self { rate_hz: 200.0, noise_std: 0.001, dropout: 0.0, markers: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub rope: RopeParams,
    #[serde(default)]
    pub servo: ServoConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default = "ChainSpec::default_arm")]
    pub chain: ChainSpec,
    #[serde(default)]
    pub limits: JointLimits,
    /// Relative overshoot of a joint limit tolerated before the arm faults.
    #[serde(default = "default_fault_tolerance")]
    pub fault_tolerance: f64,
    /// Kilograms per model mass unit (one coarse link).
    #[serde(default = "default_mass_scale")]
    pub mass_scale: f64,
    #[serde(default)]
    pub preset: Option<u32>,
    #[serde(default)]
    pub seed: u64,
}

fn default_fault_tolerance() -> f64 {
    0.02
}

fn default_mass_scale() -> f64 {
    0.04 * ROPE_LENGTH / 11.0
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::from_rope(RopeParams::default())
    }
}

/// Row of the rope table: diameter (mm), density (kg/m), end weight (g).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopePreset {
    pub id: u32,
    pub name: &'static str,
    pub material: &'static str,
    pub diameter_mm: f64,
    pub density: f64,
    pub end_weight_g: f64,
}

pub const PRESETS: [RopePreset; 7] = [
    RopePreset { id: 1, name: "#10 Sash Spot Cord", material: "Cotton", diameter_mm: 9.0, density: 0.040, end_weight_g: 18.0 },
    RopePreset { id: 2, name: "#14 Spot Cord", material: "Cotton", diameter_mm: 12.0, density: 0.081, end_weight_g: 80.0 },
    RopePreset { id: 3, name: "Soft Braided", material: "Cotton", diameter_mm: 15.0, density: 0.076, end_weight_g: 80.0 },
    RopePreset { id: 4, name: "Shoe Lace", material: "Cotton", diameter_mm: 7.0, density: 0.014, end_weight_g: 5.0 },
    RopePreset { id: 5, name: "Thick Twisted", material: "Cotton", diameter_mm: 25.0, density: 0.139, end_weight_g: 50.0 },
    RopePreset { id: 6, name: "3/8\" Chain", material: "Steel", diameter_mm: 20.0, density: 0.514, end_weight_g: 50.0 },
    RopePreset { id: 7, name: "3/8\" Surgical Tubing", material: "Latex", diameter_mm: 9.0, density: 0.026, end_weight_g: 18.0 },
];

pub fn preset(id: u32) -> Result<&'static RopePreset> {
    PRESETS.iter().find(|p| p.id == id).ok_or(Error::UnknownPreset(id))
}

/// Bending stiffness and damping per preset, in model units.
///
/// Heuristic: chain links barely resist bending, latex tubing is soft with
/// little damping, thin cotton is softer than regular cord, thick twisted
/// cord is stiff. Above roughly 1e3 the 11-link chain hangs almost like a rod,
/// so the values sit in the band where bending visibly shapes the swing.
fn material_bending(p: &RopePreset) -> (f64, f64) {
    match (p.material, p.id) {
        ("Steel", _) => (3e2, 2.0),
        ("Latex", _) => (5e2, 2.0),
        (_, 4) => (7e2, 5.0),
        (_, 5) => (5e3, 20.0),
        _ => (1e3, 10.0),
    }
}

impl PlantConfig {
    pub fn from_rope(rope: RopeParams) -> Self {
        Self {
            rope,
            servo: ServoConfig::default(),
            measurement: MeasurementConfig::default(),
            chain: ChainSpec::default_arm(),
            limits: JointLimits::default(),
            fault_tolerance: default_fault_tolerance(),
            mass_scale: default_mass_scale(),
            preset: None,
            seed: 0,
        }
    }

    /// Plant with no servo lag and no measurement noise.
    pub fn ideal(rope: RopeParams) -> Self {
        let mut cfg = Self::from_rope(rope);
        cfg.servo.time_constant = 0.0;
        cfg.measurement.noise_std = 0.0;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.rope.validate()?;
        self.chain.validate()?;
        self.limits.validate()?;
        if !(self.servo.time_constant >= 0.0 && self.servo.rate_limit > 0.0) {
            return Err(Error::Config("servo time constant must be >= 0 and rate limit > 0".into()));
        }
        let m = &self.measurement;
        if !(m.rate_hz > 0.0 && m.noise_std >= 0.0 && (0.0..1.0).contains(&m.dropout)) {
            return Err(Error::Config("measurement rate, noise or dropout out of range".into()));
        }
        if m.markers == 0 || self.rope.links % m.markers != 0 {
            return Err(Error::Config(format!(
                "{} markers cannot be spread evenly over {} rope masses",
                m.markers, self.rope.links
            )));
        }
        if !(self.fault_tolerance >= 0.0 && self.mass_scale > 0.0) {
            return Err(Error::Config("fault tolerance and mass scale must be nonnegative".into()));
        }
        Ok(())
    }

    /// Rope mass index carrying each marker (every `N / markers`-th mass).
    pub fn marker_masses(&self) -> Vec<usize> {
        let stride = self.rope.links / self.measurement.markers;
        (1..=self.measurement.markers).map(|j| j * stride - 1).collect()
    }

    /// Rope mass without the end weight (kg).
    pub fn rope_mass_kg(&self) -> f64 {
        let r = &self.rope;
        (r.link_mass * (r.links - 1) as f64 + r.link_mass) * self.mass_scale
    }

    /// End weight (kg): the last mass minus its share of rope.
    pub fn end_weight_kg(&self) -> f64 {
        (self.rope.end_mass - self.rope.link_mass) * self.mass_scale
    }

    /// Splits every link in three (l/3, m/3), keeping length, mass and
    /// bending rigidity, for a plant that differs structurally from the model.
    pub fn refined(&self) -> Self {
        let mut cfg = self.clone();
        let r = &mut cfg.rope;
        let end_weight = r.end_mass - r.link_mass;
        r.links *= 3;
        r.link_length /= 3.0;
        r.link_mass /= 3.0;
        r.end_mass = end_weight + r.link_mass;
        r.stiffness *= 3.0;
        r.damping *= 3.0;
        cfg
    }
}

/// Plant for one row of the rope table: 11 links over 1.1 m, link mass
/// normalized to one model unit (`density * 0.1 kg`), end weight folded into
/// the last mass.
pub fn load_preset(id: u32) -> Result<PlantConfig> {
    let p = preset(id)?;
    let links = 11;
    let mass_scale = p.density * ROPE_LENGTH / links as f64;
    let (stiffness, damping) = material_bending(p);
    let rope = RopeParams {
        stiffness,
        damping,
        end_mass: 1.0 + p.end_weight_g * 1e-3 / mass_scale,
        link_mass: 1.0,
        link_length: ROPE_LENGTH / links as f64,
        links,
        dt: 0.005,
    };
    let mut cfg = PlantConfig::from_rope(rope);
    cfg.mass_scale = mass_scale;
    cfg.preset = Some(id);
    Ok(cfg)
}
