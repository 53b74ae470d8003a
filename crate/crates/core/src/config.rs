//! Experiment configuration: one TOML file, every section optional, unknown
//! keys rejected.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! output = "runs/default"
//! # chain = "arm.json"
//! # capture = "demo.csv"
//! # annotation = "demo.json"
//!
//! [model]          # learner rope model
//! stiffness = 1e5
//! end_mass = 5.0
//!
//! [plant]
//! preset = 1       # or a full [plant.rope] table
//! stiffness_scale = 2.0
//!
//! [ilc]
//! max_iterations = 10
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arm::{ChainSpec, JointLimits};
use crate::demo::{build_demonstration, select_timing, Annotation, Demonstration, RawCapture};
use crate::ilc::{IlcConfig, Learner};
use crate::init_guess::{TrackingOptions, TrackingWeights};
use crate::inverse_model::{Collocation, QpWeights};
use crate::plant::{load_preset, MeasurementConfig, PlantConfig, ServoConfig};
use crate::rope::RopeParams;
use crate::scenario::reference_demonstration;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Arm description (JSON); the built-in arm when absent.
    pub chain: Option<PathBuf>,
    /// Demonstration capture CSV and its annotation; the synthetic reference
    /// demonstration when absent.
    pub capture: Option<PathBuf>,
    pub annotation: Option<PathBuf>,
    pub output: PathBuf,
}

/// The virtual hardware. Starts from a rope preset or an explicit rope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub preset: Option<u32>,
    pub rope: Option<RopeParams>,
    /// Multiplies the rope's stiffness and damping.
    pub stiffness_scale: f64,
    pub servo: ServoConfig,
    pub measurement: MeasurementConfig,
    pub fault_tolerance: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let plant = PlantConfig::default();
        Self {
            preset: None,
            rope: None,
            stiffness_scale: 1.0,
            servo: plant.servo,
            measurement: plant.measurement,
            fault_tolerance: plant.fault_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub model: RopeParams,
    pub plant: PlantSection,
    pub qp: QpWeights,
    pub collocation: Collocation,
    pub tracking: TrackingWeights,
    pub tracking_options: TrackingOptions,
    pub limits: JointLimits,
    pub ilc: IlcConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths { output: PathBuf::from("out"), ..Paths::default() },
            model: RopeParams::default(),
            plant: PlantSection::default(),
            qp: QpWeights::default(),
            collocation: Collocation::default(),
            tracking: TrackingWeights::default(),
            tracking_options: TrackingOptions::default(),
            limits: JointLimits::default(),
            ilc: IlcConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::Parse { line, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, resolves relative paths against the file's directory, checks
    /// that referenced files exist and validates every section.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in [&mut cfg.paths.chain, &mut cfg.paths.capture, &mut cfg.paths.annotation].into_iter().flatten() {
            resolve(p);
        }
        resolve(&mut cfg.paths.output);
        for p in [&cfg.paths.chain, &cfg.paths.capture, &cfg.paths.annotation].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file not found")));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.qp.validate()?;
        self.tracking.validate()?;
        self.limits.validate()?;
        self.ilc.validate()?;
        if self.paths.capture.is_some() != self.paths.annotation.is_some() {
            return Err(Error::Config("capture and annotation must be given together".into()));
        }
        let p = &self.plant;
        if p.preset.is_some() && p.rope.is_some() {
            return Err(Error::Config("plant takes either a preset or a rope, not both".into()));
        }
        if !(p.stiffness_scale > 0.0 && p.stiffness_scale.is_finite()) {
            return Err(Error::Config("plant.stiffness_scale must be positive".into()));
        }
        if let Some(id) = p.preset {
            crate::plant::preset(id)?;
        }
        self.plant_config_with(ChainSpec::default_arm())?.validate()
    }

    pub fn chain(&self) -> Result<ChainSpec> {
        match &self.paths.chain {
            Some(p) => ChainSpec::from_json(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => Ok(ChainSpec::default_arm()),
        }
    }

    fn plant_config_with(&self, chain: ChainSpec) -> Result<PlantConfig> {
        let p = &self.plant;
        let mut cfg = match (p.preset, p.rope) {
            (Some(id), _) => load_preset(id)?,
            (None, Some(rope)) => PlantConfig::from_rope(rope),
            (None, None) => PlantConfig::from_rope(self.model),
        };
        cfg.rope.stiffness *= p.stiffness_scale;
        cfg.rope.damping *= p.stiffness_scale;
        cfg.servo = p.servo;
        cfg.measurement = p.measurement;
        cfg.fault_tolerance = p.fault_tolerance;
        cfg.chain = chain;
        cfg.limits = self.limits;
        cfg.seed = self.seed;
        Ok(cfg)
    }

    pub fn plant_config(&self) -> Result<PlantConfig> {
        let cfg = self.plant_config_with(self.chain()?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn learner(&self) -> Result<Learner> {
        Ok(Learner {
            chain: self.chain()?,
            model: self.model,
            limits: self.limits,
            weights: self.qp,
            collocation: self.collocation,
            tracking: self.tracking,
            tracking_options: self.tracking_options,
        })
    }

    /// The demonstration: from the capture files, or the reference swing
    /// performed with the plant's rope.
    pub fn demonstration(&self) -> Result<Demonstration> {
        match (&self.paths.capture, &self.paths.annotation) {
            (Some(capture), Some(annotation)) => {
                let raw = RawCapture::read(capture)?;
                let ann = Annotation::read(annotation)?;
                build_demonstration(&raw, &select_timing(&raw, &ann)?)
            }
            _ => Ok(reference_demonstration(&self.plant_config()?)?.0),
        }
    }
}
