//! Problem statements, solve realizations, transcripts, grading templates and grades.
//!
//! Transcripts are persisted twice: `<problem_id>.transcript.json` is the
//! canonical machine form and `<problem_id>.transcript.md` is the rendered
//! document a reviewer reads before accepting or rejecting a recommendation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use chrono::{DateTime, SubsecRound, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_GRADE_THRESHOLD: u32 = 70;
pub const TOTAL_GRADE_POINTS: u32 = 100;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("realization list must not be empty")]
    NoRealizations,
    #[error("realization index {0} appears more than once")]
    DuplicateIndex(usize),
    #[error("realization indices must run 1..n without gaps: expected {expected}, found {found}")]
    IndexGap { expected: usize, found: usize },
    #[error("realization {0} has an empty raw output")]
    EmptyRawOutput(usize),
    #[error("recommendation assesses realization {0}, which is not in the transcript")]
    UnknownAssessedIndex(usize),
    #[error("recommended solution must not be empty")]
    EmptyRecommendation,
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("invalid grading template: {0}")]
    InvalidTemplate(String),
    #[error("expected {expected} awards (one per template item), got {got}")]
    MisalignedAwards { expected: usize, got: usize },
    #[error("award {awarded} for item {item} exceeds its {max} points")]
    AwardOutOfRange { item: usize, awarded: u32, max: u32 },
}

pub type Result<T> = std::result::Result<T, ProblemError>;

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| ProblemError::Io {
        path: path.to_owned(),
        source,
    })
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

mod utc_millis {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let text = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&text)
            .map(|ts| ts.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Opaque file attached to a problem statement, typically a figure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub filename: String,
    pub media_type: String,
    #[serde(with = "base64_bytes")]
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub description: String,
    pub domain_description: String,
}

/// The input to an agency run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemStatement {
    pub id: String,
    pub title: String,
    pub body_text: String,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
    /// Quantities of interest the solution must predict.
    pub qoi: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<Vec<Parameter>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engineering_context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ProblemStatement {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_file(path)?)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("statement serializes") + "\n"
    }
}

/// Structural checks only. Whether the body prescribes a solution method is
/// left to the author.
pub fn validate_statement(stmt: &ProblemStatement) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let mut issue = |field: &str, message: String| {
        issues.push(ValidationIssue {
            field: field.to_owned(),
            message,
        })
    };

    if stmt.id.trim().is_empty() {
        issue("id", "id empty".into());
    }
    if stmt.body_text.trim().is_empty() {
        issue("body_text", "body_text empty".into());
    }
    if stmt.qoi.is_empty() {
        issue("qoi", "qoi empty".into());
    }
    for (i, q) in stmt.qoi.iter().enumerate() {
        if q.trim().is_empty() {
            issue("qoi", format!("qoi entry {i} is blank"));
        }
    }

    let mut seen = BTreeSet::new();
    for a in &stmt.attachments {
        if a.filename.trim().is_empty() {
            issue("attachments", "attachment with empty filename".into());
        } else if !seen.insert(a.filename.as_str()) {
            issue(
                "attachments",
                format!("duplicate attachment filename {:?}", a.filename),
            );
        }
        if a.media_type.trim().is_empty() {
            issue(
                "attachments",
                format!("attachment {:?} has no media type", a.filename),
            );
        }
    }

    if let Some(params) = &stmt.parameters {
        let mut names = BTreeSet::new();
        for p in params {
            if p.name.trim().is_empty() {
                issue("parameters", "parameter with empty name".into());
            } else if !names.insert(p.name.as_str()) {
                issue("parameters", format!("duplicate parameter {:?}", p.name));
            }
        }
    }
    issues
}

/// One solve output. Parts 1-4 are extracted from `raw_output` by their
/// `## Part k` headers; when the headers are missing the parts stay empty and
/// `raw_output` carries everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub index: usize,
    pub part1_data_completion: String,
    pub part2_model: String,
    pub part3_solution_procedure: String,
    pub part4_verification_validation: String,
    pub raw_output: String,
    #[serde(default)]
    pub class_label: Option<String>,
    #[serde(default)]
    pub approximation_error_note: Option<String>,
    #[serde(default)]
    pub backend_metadata: BTreeMap<String, Value>,
}

fn part_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[ \t]{0,3}#{1,6}[ \t]*Part[ \t]*([1-4])\b.*$").unwrap())
}

fn class_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[ \t]*Equivalence[ \t]+class:[ \t]*(\S.*?)[ \t]*$").unwrap()
    })
}

fn approximation_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[ \t]*Approximation[ \t]+error:[ \t]*(\S.*?)[ \t]*$").unwrap()
    })
}

/// Splits agent output on `## Part 1` .. `## Part 4`. Returns `None` unless all
/// four headers appear exactly once and in order.
pub fn split_parts(raw: &str) -> Option<[String; 4]> {
    let headers: Vec<(usize, usize, usize)> = part_header()
        .captures_iter(raw)
        .map(|c| {
            let whole = c.get(0).unwrap();
            (c[1].parse::<usize>().unwrap(), whole.start(), whole.end())
        })
        .collect();
    if headers.len() != 4 || headers.iter().enumerate().any(|(i, h)| h.0 != i + 1) {
        return None;
    }
    let mut parts: [String; 4] = Default::default();
    for (i, &(_, _, body_start)) in headers.iter().enumerate() {
        let body_end = headers.get(i + 1).map_or(raw.len(), |next| next.1);
        parts[i] = raw[body_start..body_end].trim().to_owned();
    }
    Some(parts)
}

impl Realization {
    /// Builds a realization from raw agent output. The second value is a
    /// warning when the part headers could not be found.
    pub fn from_output(
        index: usize,
        raw_output: impl Into<String>,
        backend_metadata: BTreeMap<String, Value>,
    ) -> (Self, Option<String>) {
        let raw_output = raw_output.into();
        let (parts, warning) = match split_parts(&raw_output) {
            Some(parts) => (parts, None),
            None => (
                Default::default(),
                Some(format!(
                    "realization {index}: output lacks the Part 1-4 headers; kept as raw output only"
                )),
            ),
        };
        let [part1, part2, part3, part4] = parts;
        let class_label = class_line().captures(&raw_output).map(|c| c[1].to_owned());
        let approximation_error_note = approximation_line()
            .captures(&raw_output)
            .map(|c| c[1].to_owned());
        let realization = Self {
            index,
            part1_data_completion: part1,
            part2_model: part2,
            part3_solution_procedure: part3,
            part4_verification_validation: part4,
            raw_output,
            class_label,
            approximation_error_note,
            backend_metadata,
        };
        (realization, warning)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub index: usize,
    pub assessment: String,
}

/// Output of the compare agent: a single recommended solution with discussion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub discussion: String,
    pub recommended_solution: String,
    #[serde(default)]
    pub per_realization_assessments: Vec<Assessment>,
    #[serde(default)]
    pub secondary_opinions_noted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub problem_id: String,
    pub n: usize,
    pub realizations: Vec<Realization>,
    #[serde(default)]
    pub recommendation: Option<Recommendation>,
    #[serde(with = "utc_millis")]
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub agency_config_snapshot: BTreeMap<String, Value>,
}

/// Metadata keys that vary between otherwise identical runs.
pub const VOLATILE_METADATA_KEYS: &[&str] = &["wall_time_ms"];

/// Assembles a transcript, ordering realizations by index and checking that the
/// indices are exactly `1..=n`.
pub fn compose_transcript(
    problem_id: impl Into<String>,
    mut realizations: Vec<Realization>,
    recommendation: Option<Recommendation>,
) -> Result<Transcript> {
    realizations.sort_by_key(|r| r.index);
    check_realizations(&realizations)?;
    if let Some(rec) = &recommendation {
        check_recommendation(rec, realizations.len())?;
    }
    Ok(Transcript {
        problem_id: problem_id.into(),
        n: realizations.len(),
        realizations,
        recommendation,
        created_at: Utc::now().trunc_subsecs(3),
        agency_config_snapshot: BTreeMap::new(),
    })
}

fn check_realizations(realizations: &[Realization]) -> Result<()> {
    if realizations.is_empty() {
        return Err(ProblemError::NoRealizations);
    }
    for (pos, r) in realizations.iter().enumerate() {
        let expected = pos + 1;
        if r.index != expected {
            if pos > 0 && r.index == realizations[pos - 1].index {
                return Err(ProblemError::DuplicateIndex(r.index));
            }
            return Err(ProblemError::IndexGap {
                expected,
                found: r.index,
            });
        }
        if r.raw_output.trim().is_empty() {
            return Err(ProblemError::EmptyRawOutput(r.index));
        }
    }
    Ok(())
}

fn check_recommendation(rec: &Recommendation, n: usize) -> Result<()> {
    if rec.recommended_solution.trim().is_empty() {
        return Err(ProblemError::EmptyRecommendation);
    }
    if let Some(a) = rec
        .per_realization_assessments
        .iter()
        .find(|a| a.index == 0 || a.index > n)
    {
        return Err(ProblemError::UnknownAssessedIndex(a.index));
    }
    Ok(())
}

impl Transcript {
    pub fn with_config_snapshot(mut self, snapshot: BTreeMap<String, Value>) -> Self {
        self.agency_config_snapshot = snapshot;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.problem_id.trim().is_empty() {
            return Err(ProblemError::InvalidTranscript("problem_id empty".into()));
        }
        if self.n != self.realizations.len() {
            return Err(ProblemError::InvalidTranscript(format!(
                "n = {} but {} realizations present",
                self.n,
                self.realizations.len()
            )));
        }
        check_realizations(&self.realizations)?;
        if let Some(rec) = &self.recommendation {
            check_recommendation(rec, self.n)?;
        }
        Ok(())
    }

    pub fn class_labels(&self) -> Option<Vec<&str>> {
        self.realizations
            .iter()
            .map(|r| r.class_label.as_deref())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Transcript = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?)
    }

    /// Canonical JSON with the creation time and wall-clock metadata blanked,
    /// for comparing runs that should be identical.
    pub fn comparison_form(&self) -> String {
        let mut copy = self.clone();
        copy.created_at = DateTime::<Utc>::UNIX_EPOCH;
        for r in &mut copy.realizations {
            for key in VOLATILE_METADATA_KEYS {
                r.backend_metadata.remove(*key);
            }
        }
        copy.to_json()
    }

    pub fn json_file_name(&self) -> String {
        format!("{}.transcript.json", self.problem_id)
    }

    pub fn markdown_file_name(&self) -> String {
        format!("{}.transcript.md", self.problem_id)
    }

    /// Writes the canonical and rendered forms into `dir`, returning both paths.
    pub fn write_files(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|source| ProblemError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let json = dir.join(self.json_file_name());
        let md = dir.join(self.markdown_file_name());
        write_file(&json, &self.to_json())?;
        write_file(&md, &render_transcript(self))?;
        Ok((json, md))
    }
}

// Embedded agent text is nested two heading levels down so that its own
// headers can never be mistaken for transcript sections.
fn push_nested(out: &mut String, text: &str) {
    for line in text.trim_end().lines() {
        if line.trim_start().starts_with('#') {
            out.push_str("##");
        }
        out.push_str(line);
        out.push('\n');
    }
}

/// Renders the transcript as a markdown document: one `## Realization k`
/// section per realization in index order, then `## Recommendation` if present.
pub fn render_transcript(t: &Transcript) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Problem Transcript: {}", t.problem_id);
    out.push('\n');
    let _ = writeln!(out, "- N: {}", t.n);
    let _ = writeln!(
        out,
        "- Created: {}",
        t.created_at
            .to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    );
    if let Some(model) = t
        .agency_config_snapshot
        .get("model_id")
        .and_then(Value::as_str)
    {
        let _ = writeln!(out, "- Model: {model}");
    }
    out.push('\n');

    for r in &t.realizations {
        let _ = writeln!(out, "## Realization {}", r.index);
        out.push('\n');
        if let Some(label) = &r.class_label {
            let _ = writeln!(out, "_Equivalence class: {label}_");
            out.push('\n');
        }
        push_nested(&mut out, &r.raw_output);
        out.push('\n');
    }

    if let Some(rec) = &t.recommendation {
        out.push_str("## Recommendation\n\n");
        out.push_str("### Recommended Solution\n\n");
        push_nested(&mut out, &rec.recommended_solution);
        out.push('\n');
        if !rec.discussion.trim().is_empty() && rec.discussion != rec.recommended_solution {
            out.push_str("### Discussion\n\n");
            push_nested(&mut out, &rec.discussion);
            out.push('\n');
        }
        if !rec.per_realization_assessments.is_empty() {
            out.push_str("### Assessments\n\n");
            for a in &rec.per_realization_assessments {
                let _ = writeln!(out, "- Realization {}: {}", a.index, a.assessment.trim());
            }
            out.push('\n');
        }
        if !rec.secondary_opinions_noted.is_empty() {
            out.push_str("### Secondary Opinions\n\n");
            for s in &rec.secondary_opinions_noted {
                let _ = writeln!(out, "- {}", s.trim());
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradingItem {
    pub criterion: String,
    pub points: u32,
}

fn default_threshold() -> u32 {
    DEFAULT_GRADE_THRESHOLD
}

/// Expert rubric worth 100 points in total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradingTemplate {
    pub problem_id: String,
    pub items: Vec<GradingItem>,
    #[serde(default = "default_threshold")]
    pub threshold: u32,
}

impl GradingTemplate {
    pub fn new(
        problem_id: impl Into<String>,
        items: Vec<GradingItem>,
        threshold: Option<u32>,
    ) -> Result<Self> {
        let template = Self {
            problem_id: problem_id.into(),
            items,
            threshold: threshold.unwrap_or(DEFAULT_GRADE_THRESHOLD),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<()> {
        let total: u32 = self.items.iter().map(|i| i.points).sum();
        if total != TOTAL_GRADE_POINTS {
            return Err(ProblemError::InvalidTemplate(format!(
                "item points sum to {total}, expected {TOTAL_GRADE_POINTS}"
            )));
        }
        if self.threshold > TOTAL_GRADE_POINTS {
            return Err(ProblemError::InvalidTemplate(format!(
                "threshold {} exceeds {TOTAL_GRADE_POINTS}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: GradingTemplate = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes") + "\n"
    }

    pub fn file_name(&self) -> String {
        format!("{}.grading.json", self.problem_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    Incorrect,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Correct => "Correct",
            Verdict::Incorrect => "Incorrect",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemAward {
    pub criterion: String,
    pub awarded: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub value: u32,
    pub verdict: Verdict,
    pub item_awards: Vec<ItemAward>,
}

/// Scores one solution against a template. Correct iff the total reaches the threshold.
pub fn apply_grade(template: &GradingTemplate, awards: &[u32]) -> Result<Grade> {
    template.validate()?;
    if awards.len() != template.items.len() {
        return Err(ProblemError::MisalignedAwards {
            expected: template.items.len(),
            got: awards.len(),
        });
    }
    let mut item_awards = Vec::with_capacity(awards.len());
    for (i, (item, &awarded)) in template.items.iter().zip(awards).enumerate() {
        if awarded > item.points {
            return Err(ProblemError::AwardOutOfRange {
                item: i,
                awarded,
                max: item.points,
            });
        }
        item_awards.push(ItemAward {
            criterion: item.criterion.clone(),
            awarded,
        });
    }
    let value: u32 = awards.iter().sum();
    let verdict = if value >= template.threshold {
        Verdict::Correct
    } else {
        Verdict::Incorrect
    };
    Ok(Grade {
        value,
        verdict,
        item_awards,
    })
}
