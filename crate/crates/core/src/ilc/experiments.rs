//! Transfer and model-sensitivity drivers. Cells are independent and run in
//! parallel; results come back in input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_ilc, IlcConfig, IlcError, Learner};
use crate::curvekit::CommandSpline;
use crate::demo::Demonstration;
use crate::plant::PlantConfig;
use crate::rng::{split, streams};
use crate::{Error, Result};

/// Trials to success when starting rope `to` from the command learned on
/// rope `from`; `None` means no success within the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub labels: Vec<String>,
    /// `entries[from][to]`
    pub entries: Vec<Vec<Option<usize>>>,
    pub max_iterations: usize,
}

impl TransferMatrix {
    /// Rows are the source rope, columns the target rope; `>K` marks failure.
    pub fn to_csv(&self, seed: u64) -> String {
        let mut out = format!("# seed={seed}\nfrom\\to,{}\n", self.labels.join(","));
        for (label, row) in self.labels.iter().zip(&self.entries) {
            let cells: Vec<String> = row.iter().map(|e| self.cell(*e)).collect();
            out.push_str(&format!("{label},{}\n", cells.join(",")));
        }
        out
    }

    fn cell(&self, entry: Option<usize>) -> String {
        match entry {
            Some(n) => n.to_string(),
            None => format!(">{}", self.max_iterations),
        }
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty matrix".into() })?;
        let labels: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut entries = Vec::new();
        let mut max_iterations = 0;
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != labels.len() + 1 {
                return Err(Error::Parse { line: i + 1, message: format!("expected {} cells", labels.len() + 1) });
            }
            let row = cells[1..]
                .iter()
                .map(|c| {
                    if let Some(k) = c.strip_prefix('>') {
                        max_iterations = k.parse().map_err(|_| Error::Parse { line: i + 1, message: format!("bad cell {c}") })?;
                        Ok(None)
                    } else {
                        c.parse().map(Some).map_err(|_| Error::Parse { line: i + 1, message: format!("bad cell {c}") })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push(row);
        }
        Ok(Self { labels, entries, max_iterations })
    }
}

/// Starts ILC on every plant from every learned command.
pub fn transfer_experiment(
    demo: &Demonstration,
    learner: &Learner,
    learned: &[(String, CommandSpline)],
    plants: &[PlantConfig],
    cfg: &IlcConfig,
    seed: u64,
) -> std::result::Result<TransferMatrix, IlcError> {
    if learned.len() < 2 || learned.len() != plants.len() {
        return Err(IlcError {
            source: Error::Config("transfer needs one learned command per plant and at least two plants".into()),
            records: Vec::new(),
        });
    }
    let n = plants.len();
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).collect();
    let results: Vec<std::result::Result<Option<usize>, IlcError>> = cells
        .par_iter()
        .map(|&(a, b)| {
            let mut plant = plants[b].clone();
            plant.seed = split(seed, streams::EXPERIMENT, (a * n + b) as u64);
            run_ilc(demo, learner, &plant, cfg, Some(&learned[a].1)).map(|run| run.trials_to_success())
        })
        .collect();
    let mut entries = vec![vec![None; n]; n];
    for ((a, b), r) in cells.into_iter().zip(results) {
        entries[a][b] = r?;
    }
    Ok(TransferMatrix { labels: learned.iter().map(|l| l.0.clone()).collect(), entries, max_iterations: cfg.max_iterations })
}

/// One learner model to try: stiffness and end mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub stiffness: f64,
    pub end_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub trials: Option<usize>,
    pub final_cost: Option<f64>,
    /// Set when the run stopped on an unrecoverable error.
    pub failure: Option<String>,
}

/// Runs ILC once per grid point, changing only the learner's rope model.
pub fn sensitivity_sweep(
    demo: &Demonstration,
    plant: &PlantConfig,
    grid: &[SweepPoint],
    learner: &Learner,
    cfg: &IlcConfig,
    initial: Option<&CommandSpline>,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sensitivity grid is empty".into()));
    }
    let initial = match initial {
        Some(c) => c.clone(),
        None => learner.initial_command(demo)?,
    };
    Ok(grid
        .par_iter()
        .map(|point| {
            let mut l = learner.clone();
            l.model.stiffness = point.stiffness;
            l.model.end_mass = point.end_mass;
            match run_ilc(demo, &l, plant, cfg, Some(&initial)) {
                Ok(run) => SweepRow {
                    point: *point,
                    trials: run.trials_to_success(),
                    final_cost: run.records.last().and_then(|r| r.objective),
                    failure: None,
                },
                Err(e) => SweepRow {
                    point: *point,
                    trials: None,
                    final_cost: e.records.last().and_then(|r| r.objective),
                    failure: Some(e.source.to_string()),
                },
            }
        })
        .collect())
}
