//! Task-level iterative learning: execute, measure the rope at the critical
//! time, map the error through the inverse model, update the command.

mod experiments;

pub use experiments::{sensitivity_sweep, transfer_experiment, SweepPoint, SweepRow, TransferMatrix};

use std::fmt;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::arm::{ChainSpec, JointLimits};
use crate::curvekit::CommandSpline;
use crate::demo::Demonstration;
use crate::init_guess::{track_demonstration, TrackingOptions, TrackingWeights};
use crate::inverse_model::{inverse_model, Collocation, InverseContext, ObjectiveMode, QpWeights, TaskError};
use crate::plant::{execute_trial, MeasuredRollout, PlantConfig};
use crate::qp::QpStatus;
use crate::rng::{split, streams};
use crate::rope::RopeParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlcConfig {
    pub max_iterations: usize,
    /// Success when the weighted critical cost `|x~|_Q^2` drops below this.
    pub success_threshold: f64,
    pub mode: ObjectiveMode,
    pub stop_on_first_success: bool,
}

impl Default for IlcConfig {
    fn default() -> Self {
        Self { max_iterations: 10, success_threshold: 0.25, mode: ObjectiveMode::CriticalPoint, stop_on_first_success: true }
    }
}

impl IlcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.success_threshold > 0.0 && self.success_threshold.is_finite()) {
            return Err(Error::Config("success_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the learner knows: its arm, rope model and solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub chain: ChainSpec,
    pub model: RopeParams,
    pub limits: JointLimits,
    pub weights: QpWeights,
    pub collocation: Collocation,
    pub tracking: TrackingWeights,
    pub tracking_options: TrackingOptions,
}

impl Learner {
    pub fn new(model: RopeParams) -> Self {
        Self {
            chain: ChainSpec::default_arm(),
            model,
            limits: JointLimits::default(),
            weights: QpWeights::default(),
            collocation: Collocation::default(),
            tracking: TrackingWeights::default(),
            tracking_options: TrackingOptions::default(),
        }
    }

    /// Initial command from the demonstration.
    pub fn initial_command(&self, demo: &Demonstration) -> Result<CommandSpline> {
        Ok(track_demonstration(demo, &self.chain, &self.limits, &self.tracking, &self.tracking_options)?.command)
    }
}

/// `x(t_c) - x_demo(t_c)`, positions then velocities.
pub fn critical_point_error(measured: &MeasuredRollout, demo: &Demonstration) -> Result<DVector<f64>> {
    error_at(measured, demo, demo.t_c)
}

fn error_at(measured: &MeasuredRollout, demo: &Demonstration, t: f64) -> Result<DVector<f64>> {
    if measured.marker_count() != demo.links() {
        return Err(Error::Dimension(format!(
            "trial has {} markers, demonstration {}",
            measured.marker_count(),
            demo.links()
        )));
    }
    Ok(measured.state_at(t)? - demo.rope_state_at(t))
}

/// RMS marker position error of a stacked `[p; v]` error.
pub fn rms_position(error: &DVector<f64>) -> f64 {
    let n = error.len() / 2;
    (error.rows(0, n).norm_squared() / (n / 3) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub iteration: usize,
    pub command: CommandSpline,
    pub measured: MeasuredRollout,
    /// `None` when the trial ended before the critical time.
    pub error: Option<DVector<f64>>,
    pub objective: Option<f64>,
    pub rms_error: Option<f64>,
    pub success: bool,
    /// Status of the QP that produced the next command, if one was solved.
    pub update_status: Option<QpStatus>,
    pub update_kkt: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct IlcRun {
    pub records: Vec<TrialRecord>,
    pub success: bool,
}

impl IlcRun {
    /// Trials up to and including the first success.
    pub fn trials_to_success(&self) -> Option<usize> {
        self.records.iter().position(|r| r.success).map(|i| i + 1)
    }

    /// Last executed command.
    pub fn final_command(&self) -> &CommandSpline {
        &self.records.last().expect("a run has at least one trial").command
    }

    /// Command of the first successful trial.
    pub fn learned_command(&self) -> Option<&CommandSpline> {
        self.records.iter().find(|r| r.success).map(|r| &r.command)
    }
}

/// An unrecoverable failure, with the trials that ran before it.
#[derive(Debug)]
pub struct IlcError {
    pub source: Error,
    pub records: Vec<TrialRecord>,
}

impl fmt::Display for IlcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "learning stopped after {} trials: {}", self.records.len(), self.source)
    }
}

impl std::error::Error for IlcError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn task_error(measured: &MeasuredRollout, demo: &Demonstration, mode: ObjectiveMode, x: &DVector<f64>) -> Result<TaskError> {
    match mode {
        ObjectiveMode::CriticalPoint => Ok(TaskError::Critical(x.clone())),
        ObjectiveMode::EqualWeighted => {
            let mut times: Vec<f64> = demo.rope_times.iter().copied().filter(|t| *t < demo.t_c - 1e-9).collect();
            times.push(demo.t_c);
            let errors = times.iter().map(|&t| error_at(measured, demo, t)).collect::<Result<Vec<_>>>()?;
            Ok(TaskError::Trajectory { times, errors })
        }
    }
}

/// Runs up to `max_iterations` trials on `plant`, starting from `initial` or
/// from demonstration tracking. Trial `k` uses a plant seed split from the
/// plant's own seed, so runs are reproducible.
pub fn run_ilc(
    demo: &Demonstration,
    learner: &Learner,
    plant: &PlantConfig,
    cfg: &IlcConfig,
    initial: Option<&CommandSpline>,
) -> std::result::Result<IlcRun, IlcError> {
    let mut records = Vec::new();
    macro_rules! bail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(source) => return Err(IlcError { source, records }),
            }
        };
    }
    bail!(cfg.validate());
    bail!(demo.validate());
    bail!(plant.validate());
    let mut command = match initial {
        Some(c) => c.clone(),
        None => bail!(learner.initial_command(demo)),
    };
    let mut draw = 0u64;
    let mut retried = false;
    let mut k = 0;
    while k < cfg.max_iterations {
        let start = Instant::now();
        let mut trial_plant = plant.clone();
        trial_plant.seed = split(plant.seed, streams::TRIAL, draw);
        draw += 1;
        let measured = bail!(execute_trial(&command, &trial_plant));
        let error = match critical_point_error(&measured, demo) {
            Ok(x) => Some(x),
            Err(Error::TruncatedBeforeCritical { .. }) => None,
            Err(e) => bail!(Err(e)),
        };
        let objective = error.as_ref().map(|x| learner.weights.critical_cost(x));
        let success = objective.is_some_and(|c| c < cfg.success_threshold);
        let mut record = TrialRecord {
            iteration: k,
            command: command.clone(),
            measured,
            rms_error: error.as_ref().map(rms_position),
            error,
            objective,
            success,
            update_status: None,
            update_kkt: None,
            wall_time: 0.0,
        };
        let Some(x) = record.error.clone() else {
            record.wall_time = start.elapsed().as_secs_f64();
            let end = record.measured.end_time();
            records.push(record);
            if retried {
                return Err(IlcError { source: Error::TruncatedBeforeCritical { end, t_c: demo.t_c }, records });
            }
            // repeat the same command once with a fresh seed
            retried = true;
            k += 1;
            continue;
        };
        retried = false;
        let last = k + 1 == cfg.max_iterations;
        if !(success && cfg.stop_on_first_success) && !last {
            let signal = bail!(task_error(&record.measured, demo, cfg.mode, &x));
            let ctx = InverseContext {
                chain: &learner.chain,
                command: &command,
                model: &learner.model,
                demo,
                limits: &learner.limits,
                weights: &learner.weights,
                collocation: &learner.collocation,
            };
            let update = bail!(inverse_model(&signal, &ctx));
            record.update_status = Some(update.status);
            record.update_kkt = Some(update.kkt_residual);
            command = bail!(update.apply(&command));
        }
        record.wall_time = start.elapsed().as_secs_f64();
        records.push(record);
        if success && cfg.stop_on_first_success {
            break;
        }
        k += 1;
    }
    let success = records.iter().any(|r| r.success);
    Ok(IlcRun { records, success })
}
