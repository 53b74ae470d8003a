//! Files written by experiments: run logs, summaries, rollouts for external
//! plotting, sweep grids and tables. Every artifact carries the seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curvekit::CommandSpline;
use crate::ilc::{IlcRun, SweepPoint, SweepRow, TrialRecord};
use crate::plant::MeasuredRollout;
use crate::{Error, Result};

/// Writes through a temporary file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Marker trajectory of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutFrames {
    pub seed: u64,
    pub markers: usize,
    pub times: Vec<f64>,
    /// `positions[frame][marker]`, `None` for a dropout.
    pub positions: Vec<Vec<Option<[f64; 3]>>>,
    /// Stacked marker velocities, `3 * markers` per frame.
    pub velocities: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RolloutHeader {
    kind: String,
    seed: u64,
    markers: usize,
    frames: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Frame {
    t: f64,
    p: Vec<Option<[f64; 3]>>,
    v: Vec<f64>,
}

impl RolloutFrames {
    pub fn from_measured(m: &MeasuredRollout) -> Self {
        Self {
            seed: m.seed,
            markers: m.marker_count(),
            times: m.times.clone(),
            positions: m
                .markers
                .iter()
                .map(|row| row.iter().map(|p| p.map(|p| [p.x, p.y, p.z])).collect())
                .collect(),
            velocities: m.velocities.iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.times.len();
        if self.positions.len() != n || self.velocities.len() != n {
            return Err(Error::Dimension("rollout frame counts differ".into()));
        }
        if self.positions.iter().any(|p| p.len() != self.markers)
            || self.velocities.iter().any(|v| v.len() != 3 * self.markers)
        {
            return Err(Error::Dimension(format!("every frame needs {} markers", self.markers)));
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        self.check()?;
        let header =
            RolloutHeader { kind: "rollout".into(), seed: self.seed, markers: self.markers, frames: self.len() };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for i in 0..self.len() {
            let frame = Frame { t: self.times[i], p: self.positions[i].clone(), v: self.velocities[i].clone() };
            out.push_str(&serde_json::to_string(&frame)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse { line: line + 1, message: e.to_string() };
        let (i, first) = lines.next().ok_or(Error::Parse { line: 1, message: "empty rollout".into() })?;
        let header: RolloutHeader = serde_json::from_str(first).map_err(|e| parse_err(i, e))?;
        if header.kind != "rollout" {
            return Err(Error::Parse { line: 1, message: format!("expected a rollout, found {}", header.kind) });
        }
        let mut out = Self {
            seed: header.seed,
            markers: header.markers,
            times: Vec::new(),
            positions: Vec::new(),
            velocities: Vec::new(),
        };
        for (i, line) in lines {
            let f: Frame = serde_json::from_str(line).map_err(|e| parse_err(i, e))?;
            out.times.push(f.t);
            out.positions.push(f.p);
            out.velocities.push(f.v);
        }
        if out.len() != header.frames {
            return Err(Error::Parse {
                line: out.len() + 1,
                message: format!("header announces {} frames, found {}", header.frames, out.len()),
            });
        }
        out.check()?;
        Ok(out)
    }

    /// One row per frame; dropouts are empty cells.
    pub fn to_csv(&self) -> Result<String> {
        self.check()?;
        let mut out = format!("# seed={}\nt", self.seed);
        for k in 0..self.markers {
            write!(out, ",m{k}_x,m{k}_y,m{k}_z").unwrap();
        }
        for k in 0..self.markers {
            write!(out, ",v{k}_x,v{k}_y,v{k}_z").unwrap();
        }
        out.push('\n');
        for i in 0..self.len() {
            write!(out, "{}", self.times[i]).unwrap();
            for p in &self.positions[i] {
                match p {
                    Some([x, y, z]) => write!(out, ",{x},{y},{z}").unwrap(),
                    None => out.push_str(",,,"),
                }
            }
            for v in &self.velocities[i] {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Parse { line: 1, message: "empty rollout".into() })?;
        let seed = first
            .strip_prefix("# seed=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or(Error::Parse { line: 1, message: "expected '# seed=<n>'".into() })?;
        let (_, header) = lines.next().ok_or(Error::Parse { line: 2, message: "missing header".into() })?;
        let cols = header.split(',').count();
        if cols < 1 || (cols - 1) % 6 != 0 {
            return Err(Error::Parse { line: 2, message: format!("unexpected column count {cols}") });
        }
        let markers = (cols - 1) / 6;
        let mut out =
            Self { seed, markers, times: Vec::new(), positions: Vec::new(), velocities: Vec::new() };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != cols {
                return Err(err(format!("expected {cols} cells, found {}", cells.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number '{s}'")));
            out.times.push(num(cells[0])?);
            let mut row = Vec::with_capacity(markers);
            for k in 0..markers {
                let c = &cells[1 + 3 * k..4 + 3 * k];
                if c.iter().all(|s| s.is_empty()) {
                    row.push(None);
                } else {
                    row.push(Some([num(c[0])?, num(c[1])?, num(c[2])?]));
                }
            }
            out.positions.push(row);
            out.velocities.push(cells[1 + 3 * markers..].iter().map(|s| num(s)).collect::<Result<_>>()?);
        }
        Ok(out)
    }

    /// Reads either format, picked by content.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = read(path.as_ref())?;
        if text.trim_start().starts_with('{') {
            Self::from_jsonl(&text)
        } else {
            Self::from_csv(&text)
        }
    }
}

/// One line of the run log; the rollout itself lives in its own file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub seed: u64,
    pub iteration: usize,
    pub command: CommandSpline,
    pub error: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub rms_error: Option<f64>,
    pub success: bool,
    pub fault: Option<String>,
    pub update_status: Option<String>,
    pub update_kkt: Option<f64>,
    pub wall_time: f64,
    /// Rollout file, relative to the log.
    pub rollout: PathBuf,
}

fn rollout_name(iteration: usize) -> PathBuf {
    PathBuf::from("rollouts").join(format!("trial_{iteration:03}.jsonl"))
}

impl LogRecord {
    pub fn from_trial(record: &TrialRecord, seed: u64) -> Self {
        Self {
            seed,
            iteration: record.iteration,
            command: record.command.clone(),
            error: record.error.as_ref().map(|e| e.iter().copied().collect()),
            objective: record.objective,
            rms_error: record.rms_error,
            success: record.success,
            fault: record.measured.fault.map(|f| format!("{:?} at t = {}", f.kind, f.time)),
            update_status: record.update_status.map(|s| format!("{s:?}")),
            update_kkt: record.update_kkt,
            wall_time: record.wall_time,
            rollout: rollout_name(record.iteration),
        }
    }
}

pub fn read_run_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let text = read(path.as_ref())?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

/// Iteration, weighted cost, RMS marker error and success flag per trial.
pub fn summary_csv(records: &[TrialRecord], seed: u64) -> String {
    let mut out = format!("# seed={seed}\niteration,cost,rms_error,success\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in records {
        writeln!(out, "{},{},{},{}", r.iteration, cell(r.objective), cell(r.rms_error), r.success).unwrap();
    }
    out
}

/// Files produced by one learning run.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub log: PathBuf,
    pub summary: PathBuf,
    pub command: PathBuf,
}

/// Writes `log.jsonl`, `summary.csv`, `final_command.json` and one rollout
/// per trial under `dir`.
pub fn write_run(dir: impl AsRef<Path>, records: &[TrialRecord], seed: u64) -> Result<RunFiles> {
    let dir = dir.as_ref();
    let mut log = String::new();
    for r in records {
        let entry = LogRecord::from_trial(r, seed);
        write_atomic(dir.join(&entry.rollout), &RolloutFrames::from_measured(&r.measured).to_jsonl()?)?;
        log.push_str(&serde_json::to_string(&entry)?);
        log.push('\n');
    }
    let files = RunFiles {
        log: dir.join("log.jsonl"),
        summary: dir.join("summary.csv"),
        command: dir.join("final_command.json"),
    };
    write_atomic(&files.log, &log)?;
    write_atomic(&files.summary, &summary_csv(records, seed))?;
    if let Some(last) = records.last() {
        let command = serde_json::json!({ "seed": seed, "command": last.command });
        write_atomic(&files.command, &serde_json::to_string_pretty(&command)?)?;
    }
    Ok(files)
}

pub fn write_ilc_run(dir: impl AsRef<Path>, run: &IlcRun, seed: u64) -> Result<RunFiles> {
    write_run(dir, &run.records, seed)
}

/// Sweep grid: a `stiffness,end_mass` header, then one point per line.
pub fn parse_grid(text: &str) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["stiffness", "end_mass"] {
                return Err(err(format!("expected header 'stiffness,end_mass', found '{line}'")));
            }
            header_seen = true;
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 2 {
            return Err(err(format!("expected 2 values, found {}", cells.len())));
        }
        let num = |s: &str| match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
            _ => Err(err(format!("'{s}' is not a positive number"))),
        };
        points.push(SweepPoint { stiffness: num(cells[0])?, end_mass: num(cells[1])? });
    }
    if points.is_empty() {
        return Err(Error::Parse { line: text.lines().count().max(1), message: "grid has no points".into() });
    }
    Ok(points)
}

/// Sweep results; `>K` marks no success within the budget.
pub fn sweep_csv(rows: &[SweepRow], max_iterations: usize, seed: u64) -> String {
    let mut out = format!("# seed={seed}\nstiffness,end_mass,trials,final_cost\n");
    for r in rows {
        let trials = r.trials.map_or(format!(">{max_iterations}"), |n| n.to_string());
        let cost = r.final_cost.map_or(String::new(), |c| c.to_string());
        writeln!(out, "{},{},{},{}", r.point.stiffness, r.point.end_mass, trials, cost).unwrap();
    }
    out
}
