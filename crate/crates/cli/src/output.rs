//! Files written by a run: metrics log, evaluation rows, summary.
//!
//! Every file starts with a provenance comment line
//! `# spec_sha256=<hex> seed=<n> version=<crate version>`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use sketch_core::baselines::{Condition, EvalRow};
use sketch_core::trainer::{TaskRow, UpdateRecord};

use crate::error::{CliError, Result};

pub const METRICS_COLUMNS: [&str; 5] = ["episodes_elapsed", "l_max", "task_name", "reward_estimate", "curriculum_weight"];
pub const EVAL_COLUMNS: [&str; 5] = ["model", "condition", "task", "completion_rate", "episodes"];
pub const ABLATION_COLUMNS: [&str; 5] = ["study", "setting", "seed", "auc", "episodes_to_threshold"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_sha256: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new(spec_sha256: String, seed: u64) -> Self {
        Self { spec_sha256, seed, version: env!("CARGO_PKG_VERSION").to_string() }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "# spec_sha256={} seed={} version={}", self.spec_sha256, self.seed, self.version)
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

/// Appends one row group per update to a metrics CSV.
pub struct MetricsLog {
    writer: csv::Writer<File>,
}

impl MetricsLog {
    /// Starts a new log, replacing any existing file.
    pub fn create(path: &Path, provenance: &Provenance) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{provenance}")?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(METRICS_COLUMNS)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    /// Reopens an existing log, dropping rows written after `episodes`.
    /// Returns the surviving records.
    pub fn resume(path: &Path, provenance: &Provenance, episodes: u64) -> Result<(Self, Vec<UpdateRecord>)> {
        let records: Vec<UpdateRecord> = read_metrics(path)?
            .into_iter()
            .filter(|r| r.episodes_elapsed <= episodes)
            .collect();
        let mut log = Self::create(path, provenance)?;
        for r in &records {
            log.append(r)?;
        }
        Ok((log, records))
    }

    pub fn append(&mut self, record: &UpdateRecord) -> Result<()> {
        for row in &record.rows {
            self.writer.write_record([
                record.episodes_elapsed.to_string(),
                record.l_max.to_string(),
                row.task_name.clone(),
                row.reward_estimate.to_string(),
                row.curriculum_weight.to_string(),
            ])?;
        }
        self.writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct MetricsRow {
    episodes_elapsed: u64,
    l_max: usize,
    task_name: String,
    reward_estimate: f64,
    curriculum_weight: f64,
}

/// Reads a metrics CSV back into per-update records (batch statistics are
/// not logged and come back as zero).
pub fn read_metrics(path: &Path) -> Result<Vec<UpdateRecord>> {
    let mut out: Vec<UpdateRecord> = Vec::new();
    for row in csv_reader(path)?.deserialize() {
        let row: MetricsRow = row?;
        let task = TaskRow {
            task_name: row.task_name,
            reward_estimate: row.reward_estimate,
            curriculum_weight: row.curriculum_weight,
        };
        match out.last_mut() {
            Some(last) if last.episodes_elapsed == row.episodes_elapsed => last.rows.push(task),
            _ => out.push(UpdateRecord {
                update: out.len() as u64 + 1,
                episodes_elapsed: row.episodes_elapsed,
                l_max: row.l_max,
                batch_episodes: 0,
                batch_transitions: 0,
                batch_success_rate: 0.0,
                rows: vec![task],
            }),
        }
    }
    Ok(out)
}

/// First line of `path`, if it is a provenance comment.
pub fn read_provenance_line(path: &Path) -> Result<Option<String>> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    Ok(line.starts_with('#').then(|| line.trim_end().to_string()))
}

pub fn write_eval(path: &Path, provenance: &Provenance, rows: &[EvalRow]) -> Result<()> {
    let mut file = File::create(path)?;
    writeln!(file, "{provenance}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(EVAL_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.condition.name().to_string(),
            r.task.clone(),
            r.completion_rate.to_string(),
            r.episodes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct EvalCsvRow {
    model: String,
    condition: String,
    task: String,
    completion_rate: f64,
    episodes: usize,
}

pub fn parse_condition(name: &str) -> Result<Condition> {
    match name {
        "multitask" => Ok(Condition::Multitask),
        "zero_shot" => Ok(Condition::ZeroShot),
        "adaptation" => Ok(Condition::Adaptation),
        other => Err(CliError::Spec(format!("unknown condition `{other}`"))),
    }
}

pub fn read_eval(path: &Path) -> Result<Vec<EvalRow>> {
    let mut out = Vec::new();
    for row in csv_reader(path)?.deserialize() {
        let row: EvalCsvRow = row?;
        out.push(EvalRow {
            model: row.model,
            condition: parse_condition(&row.condition)?,
            task: row.task,
            completion_rate: row.completion_rate,
            episodes: row.episodes,
        });
    }
    Ok(out)
}

/// Mean completion per (model, condition), in first-seen order.
pub fn summarize_eval(rows: &[EvalRow]) -> Vec<(String, Condition, f64)> {
    let mut order: Vec<(String, Condition)> = Vec::new();
    let mut sums: BTreeMap<(String, &str), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let key = (r.model.clone(), r.condition);
        if !order.contains(&key) {
            order.push(key);
        }
        let e = sums.entry((r.model.clone(), r.condition.name())).or_insert((0.0, 0));
        e.0 += r.completion_rate;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|(m, c)| {
            let (sum, n) = sums[&(m.clone(), c.name())];
            (m, c, sum / n as f64)
        })
        .collect()
}

/// Models as rows, conditions as columns.
pub fn format_table(summary: &[(String, Condition, f64)]) -> String {
    let conditions = [Condition::Multitask, Condition::ZeroShot, Condition::Adaptation];
    let mut models: Vec<&str> = Vec::new();
    for (m, _, _) in summary {
        if !models.contains(&m.as_str()) {
            models.push(m);
        }
    }
    let mut out = format!("{:<14}", "model");
    for c in conditions {
        out.push_str(&format!(" {:>11}", c.name()));
    }
    out.push('\n');
    for m in models {
        out.push_str(&format!("{m:<14}"));
        for c in conditions {
            match summary.iter().find(|(mm, cc, _)| mm == m && *cc == c) {
                Some((_, _, v)) => out.push_str(&format!(" {v:>11.3}")),
                None => out.push_str(&format!(" {:>11}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

/// One training run of an ablation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub study: String,
    pub setting: String,
    pub seed: u64,
    pub auc: f64,
    /// Empty when the threshold was never reached.
    pub episodes_to_threshold: Option<u64>,
}

pub fn create_ablation(path: &Path, provenance: &Provenance) -> Result<()> {
    fs::write(path, format!("{provenance}\n{}\n", ABLATION_COLUMNS.join(",")))?;
    Ok(())
}

pub fn append_ablation(path: &Path, row: &AblationRow) -> Result<()> {
    let file = OpenOptions::new().append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

pub fn read_ablation(path: &Path) -> Result<Vec<AblationRow>> {
    let mut out = Vec::new();
    for row in csv_reader(path)?.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Per setting, in first-seen order: median AUC and median episodes to
/// threshold (a run that never got there counts as infinite).
pub fn summarize_ablation(rows: &[AblationRow]) -> Vec<(String, f64, f64)> {
    let mut settings: Vec<&str> = Vec::new();
    for r in rows {
        if !settings.contains(&r.setting.as_str()) {
            settings.push(&r.setting);
        }
    }
    settings
        .into_iter()
        .map(|s| {
            let runs: Vec<&AblationRow> = rows.iter().filter(|r| r.setting == s).collect();
            let auc = median(runs.iter().map(|r| r.auc).collect());
            let hit = median(
                runs.iter()
                    .map(|r| r.episodes_to_threshold.map_or(f64::INFINITY, |e| e as f64))
                    .collect(),
            );
            (s.to_string(), auc, hit)
        })
        .collect()
}

pub fn format_ablation(summary: &[(String, f64, f64)]) -> String {
    let mut out = format!("{:<20} {:>10} {:>22}\n", "setting", "median_auc", "median_episodes_to_thr");
    for (s, auc, hit) in summary {
        let hit = if hit.is_finite() { format!("{hit:.0}") } else { "never".to_string() };
        out.push_str(&format!("{s:<20} {auc:>10.4} {hit:>22}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub mode: String,
    pub model: String,
    pub provenance: Provenance,
    pub stop_reason: String,
    pub episodes: u64,
    pub updates: u64,
    pub wall_clock_seconds: f64,
    pub final_estimates: BTreeMap<String, f64>,
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let text = format!("{}\n{}", summary.provenance, toml::to_string(summary)?);
    fs::write(path, text)?;
    Ok(())
}
