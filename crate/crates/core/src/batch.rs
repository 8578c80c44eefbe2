//! Running an agency over a whole canon of problems, and grading transcripts
//! against simulated ground truth.
//!
//! Each canon entry yields one report row with its tally, bootstrap estimate
//! `p_hat = M1 / N` and predominance flag. The ensemble metric `varpi` is the
//! mean of `p_hat` over the rows that have one. Entries fail independently: a
//! missing file or a backend error marks that row failed and the rest still run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, SubsecRound, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::consensus::{bootstrap_estimate, ensemble_metric, make_tally, Tally};
use crate::problem::{
    apply_grade, read_file, Grade, GradingTemplate, ProblemError, ProblemStatement, Transcript,
    Verdict,
};
use crate::runtime::{
    Agency, AgencyError, AgencyOptions, BackendConfig, ModelBackend, SimulatedBackend,
};
use crate::sim::{CompareMode, ProblemProfile, SimError};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agency(#[from] AgencyError),
    #[error("invalid canon manifest: {0}")]
    InvalidManifest(String),
    #[error("realization {index} has no class label")]
    UnlabeledRealization { index: usize },
    #[error("realization {index} is labeled {label:?}, which the profile does not define")]
    UnknownClass { index: usize, label: String },
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, BatchError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonEntry {
    pub problem: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grading_template: Option<PathBuf>,
}

/// A named list of problems. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonManifest {
    pub name: String,
    pub entries: Vec<CanonEntry>,
}

impl CanonManifest {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut manifest: CanonManifest = serde_json::from_str(text).map_err(ProblemError::from)?;
        if manifest.entries.is_empty() {
            return Err(BatchError::InvalidManifest(
                "entries must not be empty".into(),
            ));
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for e in &mut manifest.entries {
            resolve(&mut e.problem);
            if let Some(p) = e.profile.as_mut() {
                resolve(p);
            }
            if let Some(p) = e.grading_template.as_mut() {
                resolve(p);
            }
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&read_file(path)?, base)
    }
}

/// Which backend answers each entry.
#[derive(Clone)]
pub enum CanonBackend {
    /// One shared backend for every entry. Tallies come from compare-assigned labels.
    Shared(Arc<dyn ModelBackend>),
    /// A simulated backend per entry, built from the entry's profile.
    Simulated {
        compare_mode: CompareMode,
        /// Replaces every profile seed with one derived from this value and the entry position.
        seed: Option<u64>,
    },
}

impl CanonBackend {
    pub fn simulated() -> Self {
        CanonBackend::Simulated {
            compare_mode: CompareMode::Prevalent,
            seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CanonOptions {
    pub config: BackendConfig,
    pub agency: AgencyOptions,
    /// Entries run concurrently up to this many; 1 means sequentially.
    pub canon_parallel: usize,
}

impl Default for CanonOptions {
    fn default() -> Self {
        Self {
            config: BackendConfig::default(),
            agency: AgencyOptions::default(),
            canon_parallel: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// The run finished but not every realization carries a class label.
    TallyUnavailable,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonRow {
    pub problem_id: String,
    pub n: usize,
    pub tally: Option<Tally>,
    pub p_hat: Option<f64>,
    pub predominant: Option<bool>,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    /// Fraction graded correct by the class oracle, for entries with a profile
    /// and a grading template. Only ever reported, never shown to an agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graded_p_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonReport {
    pub name: String,
    pub per_problem: Vec<CanonRow>,
    /// Mean `p_hat` over rows that have one; absent when none do.
    pub varpi: Option<f64>,
    pub config_snapshot: BTreeMap<String, Value>,
    pub generated_at: DateTime<Utc>,
}

impl CanonReport {
    pub fn any_failed(&self) -> bool {
        self.per_problem
            .iter()
            .any(|r| r.status == RowStatus::Failed)
    }

    /// `varpi` recomputed from the rows.
    pub fn recompute_varpi(&self) -> Option<f64> {
        let estimates: Vec<f64> = self.per_problem.iter().filter_map(|r| r.p_hat).collect();
        ensemble_metric(&estimates).ok()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text).map_err(ProblemError::from)?)
    }

    /// JSON with the generation time blanked, for comparing runs.
    pub fn comparison_form(&self) -> String {
        let mut copy = self.clone();
        copy.generated_at = DateTime::<Utc>::UNIX_EPOCH;
        copy.to_json()
    }

    pub fn file_name(&self) -> String {
        format!("{}.report.json", self.name)
    }
}

impl fmt::Display for CanonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "canon {}: {} problems",
            self.name,
            self.per_problem.len()
        )?;
        for row in &self.per_problem {
            match (row.status, &row.tally, row.p_hat) {
                (RowStatus::Ok, Some(t), Some(p)) => {
                    write!(
                        f,
                        "  {:<24} N={:<3} p_hat={:.3} prevalent={} predominant={}",
                        row.problem_id,
                        row.n,
                        p,
                        t.prevalent(),
                        t.predominant()
                    )?;
                    match row.graded_p_hat {
                        Some(g) => writeln!(f, " graded={g:.3}")?,
                        None => writeln!(f)?,
                    }
                }
                (RowStatus::Failed, ..) => writeln!(
                    f,
                    "  {:<24} FAILED: {}",
                    row.problem_id,
                    row.error.as_deref().unwrap_or("unknown error")
                )?,
                _ => writeln!(
                    f,
                    "  {:<24} N={:<3} tally unavailable",
                    row.problem_id, row.n
                )?,
            }
        }
        match self.varpi {
            Some(v) => write!(f, "varpi = {v:.4}"),
            None => write!(f, "varpi unavailable"),
        }
    }
}

fn failed_row(problem_id: String, n: usize, error: impl fmt::Display) -> CanonRow {
    CanonRow {
        problem_id,
        n,
        tally: None,
        p_hat: None,
        predominant: None,
        status: RowStatus::Failed,
        error: Some(error.to_string()),
        transcript: None,
        graded_p_hat: None,
    }
}

fn entry_seed(seed: u64, position: usize) -> u64 {
    seed.wrapping_add((position as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

async fn run_entry(
    position: usize,
    entry: &CanonEntry,
    n: usize,
    backend: &CanonBackend,
    options: &CanonOptions,
) -> CanonRow {
    let fallback_id = entry
        .problem
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.trim_end_matches(".problem").to_owned())
        .unwrap_or_else(|| format!("entry-{}", position + 1));
    let stmt = match ProblemStatement::load(&entry.problem) {
        Ok(s) => s,
        Err(e) => return failed_row(fallback_id, n, e),
    };
    // load grading inputs before any model call so a missing file costs nothing
    let grading = match (&entry.grading_template, &entry.profile) {
        (Some(t), Some(p)) => match (GradingTemplate::load(t), ProblemProfile::load(p)) {
            (Ok(t), Ok(p)) => Some((t, p)),
            (Err(e), _) => return failed_row(stmt.id, n, e),
            (_, Err(e)) => return failed_row(stmt.id, n, e),
        },
        (Some(_), None) => {
            return failed_row(stmt.id, n, "grading template given without a profile")
        }
        _ => None,
    };

    let model: Arc<dyn ModelBackend> = match backend {
        CanonBackend::Shared(b) => b.clone(),
        CanonBackend::Simulated { compare_mode, seed } => {
            let Some(path) = &entry.profile else {
                return failed_row(
                    stmt.id,
                    n,
                    "simulated backend needs a profile for this entry",
                );
            };
            let mut profile = match ProblemProfile::load(path) {
                Ok(p) => p,
                Err(e) => return failed_row(stmt.id, n, e),
            };
            if profile.problem_id != stmt.id {
                return failed_row(
                    stmt.id.clone(),
                    n,
                    format!("profile is for {:?}, not {:?}", profile.problem_id, stmt.id),
                );
            }
            if let Some(s) = seed {
                profile = profile.with_seed(entry_seed(*s, position));
            }
            Arc::new(SimulatedBackend::new(profile).with_compare_mode(*compare_mode))
        }
    };

    let agency = match Agency::new(model, options.config.clone()) {
        Ok(a) => a.with_options(options.agency.clone()),
        Err(e) => return failed_row(stmt.id, n, e),
    };
    let transcript = match agency.run(&stmt, n).await {
        Ok(t) => t,
        Err(e) => return failed_row(stmt.id, n, e),
    };
    let mut row = row_from_transcript(&transcript, options.agency.out_dir.is_some());
    // without class labels there is nothing for the oracle to grade
    if let (Some((template, profile)), Some(_)) = (grading, transcript.class_labels()) {
        match grade_with_oracle(&transcript, &profile, &template) {
            Ok(grades) => {
                let correct = grades
                    .iter()
                    .filter(|g| g.verdict == Verdict::Correct)
                    .count();
                row.graded_p_hat = Some(correct as f64 / grades.len() as f64);
            }
            Err(e) => {
                row.status = RowStatus::Failed;
                row.error = Some(format!("grading: {e}"));
            }
        }
    }
    row
}

/// Tallies a finished transcript into a report row.
pub fn row_from_transcript(t: &Transcript, persisted: bool) -> CanonRow {
    let tally = t.class_labels().and_then(|labels| make_tally(&labels).ok());
    CanonRow {
        problem_id: t.problem_id.clone(),
        n: t.n,
        p_hat: tally.as_ref().map(bootstrap_estimate),
        predominant: tally.as_ref().map(Tally::predominant),
        status: if tally.is_some() {
            RowStatus::Ok
        } else {
            RowStatus::TallyUnavailable
        },
        tally,
        error: None,
        transcript: persisted.then(|| t.json_file_name()),
        graded_p_hat: None,
    }
}

/// Runs the agency on every canon entry and aggregates the results.
pub async fn run_canon(
    manifest: &CanonManifest,
    n: usize,
    backend: &CanonBackend,
    options: &CanonOptions,
) -> Result<CanonReport> {
    if n == 0 {
        return Err(BatchError::InvalidArgument("n must be at least 1".into()));
    }
    if manifest.entries.is_empty() {
        return Err(BatchError::InvalidManifest(
            "entries must not be empty".into(),
        ));
    }
    options
        .config
        .validate()
        .map_err(|e| BatchError::InvalidArgument(e.to_string()))?;

    let mut rows: Vec<(usize, CanonRow)> = stream::iter(manifest.entries.iter().enumerate())
        .map(|(pos, entry)| async move { (pos, run_entry(pos, entry, n, backend, options).await) })
        .buffer_unordered(options.canon_parallel.max(1))
        .collect()
        .await;
    rows.sort_by_key(|(pos, _)| *pos);

    let mut seen = BTreeSet::new();
    let per_problem: Vec<CanonRow> = rows
        .into_iter()
        .map(|(_, row)| {
            if row.status != RowStatus::Failed && !seen.insert(row.problem_id.clone()) {
                let id = row.problem_id.clone();
                failed_row(
                    id.clone(),
                    n,
                    format!("duplicate problem id {id:?} in canon"),
                )
            } else {
                row
            }
        })
        .collect();

    let mut config_snapshot = BTreeMap::new();
    config_snapshot.insert("n".into(), json!(n));
    config_snapshot.insert("model_id".into(), json!(options.config.model_id));
    config_snapshot.insert(
        "reasoning_effort".into(),
        json!(options.config.reasoning_effort),
    );
    config_snapshot.insert("max_parallel".into(), json!(options.config.max_parallel));
    config_snapshot.insert(
        "canon_parallel".into(),
        json!(options.canon_parallel.max(1)),
    );
    match backend {
        CanonBackend::Shared(b) => {
            config_snapshot.insert("backend".into(), json!(b.name()));
        }
        CanonBackend::Simulated { compare_mode, seed } => {
            config_snapshot.insert("backend".into(), json!("simulated"));
            config_snapshot.insert("compare_mode".into(), json!(compare_mode));
            if let Some(s) = seed {
                config_snapshot.insert("seed".into(), json!(s));
            }
        }
    }

    let mut report = CanonReport {
        name: manifest.name.clone(),
        per_problem,
        varpi: None,
        config_snapshot,
        generated_at: Utc::now().trunc_subsecs(3),
    };
    report.varpi = report.recompute_varpi();
    Ok(report)
}

/// Oracle grader: realizations in a correct class score full marks, all
/// others score zero. Stands in for an expert applying the template.
pub fn grade_with_oracle(
    transcript: &Transcript,
    profile: &ProblemProfile,
    template: &GradingTemplate,
) -> Result<Vec<Grade>> {
    template.validate()?;
    let full: Vec<u32> = template.items.iter().map(|i| i.points).collect();
    let zero = vec![0; template.items.len()];
    transcript
        .realizations
        .iter()
        .map(|r| {
            let label = r
                .class_label
                .as_deref()
                .ok_or(BatchError::UnlabeledRealization { index: r.index })?;
            let class = profile
                .class(label)
                .ok_or_else(|| BatchError::UnknownClass {
                    index: r.index,
                    label: label.to_owned(),
                })?;
            let awards = if class.correct { &full } else { &zero };
            Ok(apply_grade(template, awards)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{compose_transcript, GradingItem, Realization, Verdict};
    use crate::sim::ProfileClass;

    fn labeled(index: usize, label: &str) -> Realization {
        let (mut r, _) =
            Realization::from_output(index, format!("answer {label}"), BTreeMap::new());
        r.class_label = Some(label.into());
        r
    }

    fn profile() -> ProblemProfile {
        let class = |label: &str, correct, prob| ProfileClass {
            label: label.into(),
            correct,
            prob,
            canonical_answer_text: format!("answer {label}"),
            recognizable: false,
        };
        ProblemProfile::new(
            "pinned-assembly",
            vec![class("d", true, 0.8), class("e", false, 0.2)],
            0,
        )
        .unwrap()
    }

    fn template() -> GradingTemplate {
        GradingTemplate::new(
            "pinned-assembly",
            vec![
                GradingItem {
                    criterion: "model".into(),
                    points: 60,
                },
                GradingItem {
                    criterion: "answer".into(),
                    points: 40,
                },
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn oracle_grades_by_class() {
        let labels = ["d", "d", "e", "d", "d", "d", "e", "d", "d", "d"];
        let rs = labels
            .iter()
            .enumerate()
            .map(|(i, l)| labeled(i + 1, l))
            .collect();
        let t = compose_transcript("pinned-assembly", rs, None).unwrap();
        let grades = grade_with_oracle(&t, &profile(), &template()).unwrap();
        assert_eq!(grades[0].value, 100);
        assert_eq!(grades[0].verdict, Verdict::Correct);
        assert_eq!(grades[2].value, 0);
        assert_eq!(grades[2].verdict, Verdict::Incorrect);
        let correct = grades
            .iter()
            .filter(|g| g.verdict == Verdict::Correct)
            .count();
        assert_eq!(correct, 8);
        assert_eq!(correct as f64 / grades.len() as f64, 0.8);
    }

    #[test]
    fn oracle_rejects_unknown_and_missing_labels() {
        let t = compose_transcript("pinned-assembly", vec![labeled(1, "zzz")], None).unwrap();
        assert!(matches!(
            grade_with_oracle(&t, &profile(), &template()),
            Err(BatchError::UnknownClass { index: 1, .. })
        ));
        let mut r = labeled(1, "d");
        r.class_label = None;
        let t = compose_transcript("pinned-assembly", vec![r], None).unwrap();
        assert!(matches!(
            grade_with_oracle(&t, &profile(), &template()),
            Err(BatchError::UnlabeledRealization { index: 1 })
        ));
    }

    #[test]
    fn row_without_labels_is_tally_unavailable() {
        let mut r = labeled(1, "d");
        r.class_label = None;
        let t = compose_transcript("p", vec![r], None).unwrap();
        let row = row_from_transcript(&t, false);
        assert_eq!(row.status, RowStatus::TallyUnavailable);
        assert_eq!(row.p_hat, None);
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let text = r#"{"name":"c","entries":[{"problem":"a.problem.json","profile":"/abs/a.profile.json"}]}"#;
        let m = CanonManifest::from_json(text, Path::new("/data/canon")).unwrap();
        assert_eq!(
            m.entries[0].problem,
            Path::new("/data/canon/a.problem.json")
        );
        assert_eq!(
            m.entries[0].profile.as_deref(),
            Some(Path::new("/abs/a.profile.json"))
        );
        assert!(CanonManifest::from_json(r#"{"name":"c","entries":[]}"#, Path::new(".")).is_err());
    }
}
