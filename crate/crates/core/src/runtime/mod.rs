//! The agency pipeline: preprocess a problem statement, fan it out to `n`
//! independent solve calls, and hand the collected realizations to a single
//! compare call that recommends one solution.
//!
//! Solve calls never share state. Each gets its own session id and a request
//! built only from the prepared problem, so no realization can see another.
//! Calls run concurrently up to `max_parallel`, and results are always
//! returned in index order.

pub mod backend;
pub mod compare;
pub mod instructions;
pub mod remote;
pub mod simulated;
pub mod testing;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::consensus::{bootstrap_estimate, make_tally, posterior_predominant, TwoClassModel};
use crate::problem::{
    compose_transcript, validate_statement, Attachment, ProblemError, ProblemStatement,
    Realization, Transcript, ValidationIssue,
};

pub use backend::{
    AgentRole, BackendConfig, BackendError, BackendKind, ChatRequest, ChatResponse, ModelBackend,
    ReasoningEffort, RetryPolicy,
};
pub use compare::ParsedCompare;
pub use instructions::{AgentInstructions, InstructionPair};
pub use remote::RemoteBackend;
pub use simulated::SimulatedBackend;

/// Per-attachment size limit, 8 MiB.
pub const ATTACHMENT_SIZE_CAP: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Preprocess,
    Solve,
    Compare,
    Compose,
    Persist,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Preprocess => "preprocess",
            Stage::Solve => "solve",
            Stage::Compare => "compare",
            Stage::Compose => "compose",
            Stage::Persist => "persist",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizationFailure {
    pub index: usize,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Error)]
pub enum AgencyError {
    #[error("problem statement is invalid: {}", join_issues(.0))]
    InvalidStatement(Vec<ValidationIssue>),
    #[error("attachment {filename:?} is {size} bytes, over the {cap}-byte cap")]
    AttachmentTooLarge {
        filename: String,
        size: usize,
        cap: usize,
    },
    #[error("invalid instructions: {0}")]
    InvalidInstructions(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("n must be at least 1")]
    ZeroRealizations,
    #[error("realization {index} failed after {attempts} attempt(s): {source}")]
    RealizationFailed {
        index: usize,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("all {} realizations failed{}", .0.len(), first_failure(.0))]
    AllFailed(Vec<RealizationFailure>),
    #[error("{} of {requested} realizations failed and partial runs are not allowed{}",
        .failures.len(), first_failure(.failures))]
    PartialDisallowed {
        requested: usize,
        failures: Vec<RealizationFailure>,
    },
    #[error("compare failed after {attempts} attempt(s): {source}")]
    CompareFailed {
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<AgencyError>,
    },
}

fn first_failure(failures: &[RealizationFailure]) -> String {
    failures
        .first()
        .map(|f| format!(" (first: realization {} - {})", f.index, f.error))
        .unwrap_or_default()
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl AgencyError {
    fn at(self, stage: Stage) -> Self {
        AgencyError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The error with any stage tags removed.
    pub fn root(&self) -> &AgencyError {
        match self {
            AgencyError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            AgencyError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// True when the input, not the backend, is at fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            AgencyError::InvalidStatement(_)
                | AgencyError::AttachmentTooLarge { .. }
                | AgencyError::InvalidInstructions(_)
                | AgencyError::InvalidConfig(_)
                | AgencyError::ZeroRealizations
                | AgencyError::Problem(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, AgencyError>;

/// A problem statement rendered into the text every solve call receives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedProblem {
    pub prompt_text: String,
    pub attachments: Vec<Attachment>,
    /// Id of the originating problem statement.
    pub provenance: String,
}

/// Prepares a statement with the default solve instructions and attachment cap.
pub fn preprocess(stmt: &ProblemStatement) -> Result<PreparedProblem> {
    preprocess_with(
        stmt,
        &AgentInstructions::default_solve(),
        ATTACHMENT_SIZE_CAP,
    )
}

pub fn preprocess_with(
    stmt: &ProblemStatement,
    instr: &AgentInstructions,
    attachment_cap: usize,
) -> Result<PreparedProblem> {
    let issues = validate_statement(stmt);
    if !issues.is_empty() {
        return Err(AgencyError::InvalidStatement(issues));
    }
    if let Some(a) = stmt
        .attachments
        .iter()
        .find(|a| a.data.len() > attachment_cap)
    {
        return Err(AgencyError::AttachmentTooLarge {
            filename: a.filename.clone(),
            size: a.data.len(),
            cap: attachment_cap,
        });
    }

    let mut text = String::new();
    let _ = write!(
        text,
        "# Problem Statement: {}\n\n{}\n\n",
        stmt.title.trim(),
        stmt.body_text.trim()
    );
    text.push_str("## Quantities of Interest\n\n");
    for q in &stmt.qoi {
        let _ = writeln!(text, "- {}", q.trim());
    }
    if let Some(params) = stmt.parameters.as_ref().filter(|p| !p.is_empty()) {
        text.push_str("\n## Problem Statement Parameters\n\n");
        for p in params {
            let _ = writeln!(
                text,
                "- {}: {} (domain: {})",
                p.name, p.description, p.domain_description
            );
        }
    }
    if let Some(ctx) = stmt
        .engineering_context
        .as_deref()
        .filter(|c| !c.trim().is_empty())
    {
        let _ = write!(text, "\n## Engineering Context\n\n{}\n", ctx.trim());
    }
    if !stmt.attachments.is_empty() {
        text.push_str("\n## Attachments\n\n");
        for a in &stmt.attachments {
            let _ = writeln!(text, "- {} ({})", a.filename, a.media_type);
        }
    }
    if !instr.expectations_text.trim().is_empty() {
        let _ = write!(
            text,
            "\n## Expectations\n\n{}\n",
            instr.expectations_text.trim()
        );
    }
    if !instr.restrictions_text.trim().is_empty() {
        let _ = write!(
            text,
            "\n## Restrictions\n\n{}\n",
            instr.restrictions_text.trim()
        );
    }

    Ok(PreparedProblem {
        prompt_text: text,
        attachments: stmt.attachments.clone(),
        provenance: stmt.id.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgencyOptions {
    /// Keep going when some solves fail, as long as at least one succeeds.
    pub allow_partial: bool,
    /// Run compare even for a single realization.
    pub force_compare: bool,
    /// Append tally statistics of pre-labeled realizations to the compare prompt.
    pub append_tally_stats: bool,
    /// Overrides [`ATTACHMENT_SIZE_CAP`].
    pub attachment_cap: Option<usize>,
    /// Where to write `<problem_id>.transcript.{json,md}`.
    pub out_dir: Option<PathBuf>,
}

/// Successful solves plus the failures tolerated under `allow_partial`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub realizations: Vec<Realization>,
    pub failures: Vec<RealizationFailure>,
}

static SESSION_NONCE: AtomicU64 = AtomicU64::new(0);

fn fresh_session_id(provenance: &str, role: AgentRole, index: Option<usize>) -> String {
    let nonce = SESSION_NONCE.fetch_add(1, Ordering::Relaxed);
    match index {
        Some(i) => format!("{provenance}/{role}/{i}/{nonce}"),
        None => format!("{provenance}/{role}/{nonce}"),
    }
}

pub struct Agency {
    backend: Arc<dyn ModelBackend>,
    config: BackendConfig,
    instructions: InstructionPair,
    options: AgencyOptions,
}

impl Agency {
    pub fn new(backend: Arc<dyn ModelBackend>, config: BackendConfig) -> Result<Self> {
        config.validate().map_err(AgencyError::InvalidConfig)?;
        Ok(Self {
            backend,
            config,
            instructions: InstructionPair::default(),
            options: AgencyOptions::default(),
        })
    }

    pub fn with_instructions(mut self, instructions: InstructionPair) -> Self {
        self.instructions = instructions;
        self
    }

    pub fn with_options(mut self, options: AgencyOptions) -> Self {
        self.options = options;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn options(&self) -> &AgencyOptions {
        &self.options
    }

    pub fn instructions(&self) -> &InstructionPair {
        &self.instructions
    }

    async fn call_with_retry(
        &self,
        request: &ChatRequest,
    ) -> (std::result::Result<ChatResponse, BackendError>, u32) {
        let policy = self.config.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = match tokio::time::timeout(
                self.config.request_timeout,
                self.backend.complete(request),
            )
            .await
            {
                Ok(r) => r,
                Err(_) => Err(BackendError::Timeout(self.config.request_timeout)),
            };
            let result = result.and_then(|r| {
                if r.text.trim().is_empty() {
                    Err(BackendError::EmptyResponse)
                } else {
                    Ok(r)
                }
            });
            match result {
                Err(e) if e.is_retryable() && attempt < policy.max_attempts => {
                    tracing::debug!(session = %request.session_id, attempt, "retrying after: {e}");
                    tokio::time::sleep(policy.backoff(attempt)).await;
                }
                other => return (other, attempt),
            }
        }
    }

    fn request(
        &self,
        prep: &PreparedProblem,
        instr: &AgentInstructions,
        index: Option<usize>,
        user_parts: Vec<String>,
        attachments: Vec<Attachment>,
    ) -> ChatRequest {
        ChatRequest {
            session_id: fresh_session_id(&prep.provenance, instr.role, index),
            role: instr.role,
            index,
            system_text: instr.system_message(),
            user_parts,
            attachments,
            model_id: self.config.model_id.clone(),
            reasoning_effort: self.config.reasoning_effort,
            temperature: self.config.temperature,
        }
    }

    /// One independent solve in a fresh session.
    pub async fn solve_once(
        &self,
        prep: &PreparedProblem,
        instr: &AgentInstructions,
        index: usize,
    ) -> Result<Realization> {
        if instr.role != AgentRole::Solve {
            return Err(AgencyError::InvalidInstructions(format!(
                "solve_once needs solve instructions, got {}",
                instr.role
            )));
        }
        instr.validate().map_err(AgencyError::InvalidInstructions)?;
        let request = self.request(
            prep,
            instr,
            Some(index),
            vec![prep.prompt_text.clone()],
            prep.attachments.clone(),
        );
        let started = Instant::now();
        let (result, attempts) = self.call_with_retry(&request).await;
        let response = result.map_err(|source| AgencyError::RealizationFailed {
            index,
            attempts,
            source,
        })?;

        let mut metadata = BTreeMap::new();
        metadata.insert(
            "model_id".into(),
            json!(response
                .model
                .clone()
                .unwrap_or_else(|| self.config.model_id.clone())),
        );
        metadata.insert("backend".into(), json!(self.backend.name()));
        metadata.insert("attempts".into(), json!(attempts));
        if let Some(t) = response.prompt_tokens {
            metadata.insert("prompt_tokens".into(), json!(t));
        }
        if let Some(t) = response.completion_tokens {
            metadata.insert("completion_tokens".into(), json!(t));
        }
        metadata.insert(
            "wall_time_ms".into(),
            json!(started.elapsed().as_millis() as u64),
        );

        let (mut realization, warning) = Realization::from_output(index, response.text, metadata);
        if let Some(w) = warning {
            tracing::warn!("{w}");
            realization
                .backend_metadata
                .insert("parse_warning".into(), Value::String(w));
        }
        Ok(realization)
    }

    /// `n` independent solves, at most `max_parallel` in flight, returned in index order.
    pub async fn solve_n(
        &self,
        prep: &PreparedProblem,
        instr: &AgentInstructions,
        n: usize,
    ) -> Result<SolveOutcome> {
        if n == 0 {
            return Err(AgencyError::ZeroRealizations);
        }
        let results: Vec<Result<Realization>> = stream::iter(1..=n)
            .map(|index| self.solve_once(prep, instr, index))
            .buffer_unordered(self.config.max_parallel)
            .collect()
            .await;

        let mut realizations = Vec::with_capacity(n);
        let mut failures = Vec::new();
        for result in results {
            match result {
                Ok(r) => realizations.push(r),
                Err(AgencyError::RealizationFailed {
                    index,
                    attempts,
                    source,
                }) => {
                    tracing::warn!(
                        "realization {index} failed after {attempts} attempt(s): {source}"
                    );
                    failures.push(RealizationFailure {
                        index,
                        attempts,
                        error: source.to_string(),
                    });
                }
                Err(other) => return Err(other),
            }
        }
        realizations.sort_by_key(|r| r.index);
        failures.sort_by_key(|f| f.index);

        if realizations.is_empty() {
            return Err(AgencyError::AllFailed(failures));
        }
        if !failures.is_empty() && !self.options.allow_partial {
            return Err(AgencyError::PartialDisallowed {
                requested: n,
                failures,
            });
        }
        Ok(SolveOutcome {
            realizations,
            failures,
        })
    }

    /// The compare call. Realizations are concatenated in index order; the
    /// problem text goes in a separate message ahead of them.
    pub async fn compare(
        &self,
        prep: &PreparedProblem,
        realizations: &[Realization],
        instr: &AgentInstructions,
    ) -> Result<ParsedCompare> {
        if instr.role != AgentRole::Compare {
            return Err(AgencyError::InvalidInstructions(format!(
                "compare needs compare instructions, got {}",
                instr.role
            )));
        }
        instr.validate().map_err(AgencyError::InvalidInstructions)?;
        if realizations.is_empty() {
            return Err(ProblemError::NoRealizations.into());
        }
        let mut parts = vec![
            prep.prompt_text.clone(),
            compare::concatenate_realizations(realizations),
        ];
        if self.options.append_tally_stats {
            if let Some(stats) = tally_statistics(realizations) {
                parts.push(stats);
            }
        }
        let request = self.request(prep, instr, None, parts, prep.attachments.clone());
        let (result, attempts) = self.call_with_retry(&request).await;
        let response = result.map_err(|source| AgencyError::CompareFailed { attempts, source })?;
        let parsed = compare::parse_compare_output(
            &response.text,
            realizations.iter().map(|r| r.index).max().unwrap_or(0),
        );
        for w in &parsed.warnings {
            tracing::warn!("{w}");
        }
        Ok(parsed)
    }

    /// Full pipeline: preprocess, solve, compare when `n >= 2` (or forced), compose, persist.
    pub async fn run(&self, stmt: &ProblemStatement, n: usize) -> Result<Transcript> {
        if n == 0 {
            return Err(AgencyError::ZeroRealizations.at(Stage::Preprocess));
        }
        let prep = preprocess_with(
            stmt,
            &self.instructions.solve,
            self.options.attachment_cap.unwrap_or(ATTACHMENT_SIZE_CAP),
        )
        .map_err(|e| e.at(Stage::Preprocess))?;
        let outcome = self
            .solve_n(&prep, &self.instructions.solve, n)
            .await
            .map_err(|e| e.at(Stage::Solve))?;

        // renumber survivors of a partial run so indices stay contiguous
        let mut realizations = outcome.realizations;
        for (pos, r) in realizations.iter_mut().enumerate() {
            if r.index != pos + 1 {
                r.backend_metadata
                    .insert("requested_index".into(), json!(r.index));
                r.index = pos + 1;
            }
        }

        let run_compare = n >= 2 || self.options.force_compare;
        let mut compare_warnings = Vec::new();
        let recommendation = if run_compare {
            let parsed = self
                .compare(&prep, &realizations, &self.instructions.compare)
                .await
                .map_err(|e| e.at(Stage::Compare))?;
            for r in &mut realizations {
                if r.class_label.is_none() {
                    r.class_label = parsed.labels.get(&r.index).cloned();
                }
            }
            compare_warnings = parsed.warnings;
            Some(parsed.recommendation)
        } else {
            None
        };

        let mut snapshot = self.snapshot(n);
        if !outcome.failures.is_empty() {
            snapshot.insert("failed_realizations".into(), json!(outcome.failures));
        }
        if !compare_warnings.is_empty() {
            snapshot.insert("compare_warnings".into(), json!(compare_warnings));
        }
        let transcript = compose_transcript(stmt.id.clone(), realizations, recommendation)
            .map_err(|e| AgencyError::from(e).at(Stage::Compose))?
            .with_config_snapshot(snapshot);

        if let Some(dir) = &self.options.out_dir {
            transcript
                .write_files(dir)
                .map_err(|e| AgencyError::from(e).at(Stage::Persist))?;
        }
        Ok(transcript)
    }

    fn snapshot(&self, n: usize) -> BTreeMap<String, Value> {
        let mut s = BTreeMap::new();
        s.insert("backend".into(), json!(self.backend.name()));
        s.insert("model_id".into(), json!(self.config.model_id));
        s.insert(
            "reasoning_effort".into(),
            json!(self.config.reasoning_effort),
        );
        s.insert("max_parallel".into(), json!(self.config.max_parallel));
        s.insert("requested_n".into(), json!(n));
        s.insert("allow_partial".into(), json!(self.options.allow_partial));
        s.insert("force_compare".into(), json!(self.options.force_compare));
        s.insert(
            "append_tally_stats".into(),
            json!(self.options.append_tally_stats),
        );
        if let Some(t) = self.config.temperature {
            s.insert("temperature".into(), json!(t));
        }
        s
    }
}

fn tally_statistics(realizations: &[Realization]) -> Option<String> {
    let labels: Vec<&str> = realizations
        .iter()
        .map(|r| r.class_label.as_deref())
        .collect::<Option<_>>()?;
    let tally = make_tally(&labels).ok()?;
    let p_hat = bootstrap_estimate(&tally);
    let mut out =
        format!("## Tally statistics\n\n- tally: {tally}\n- bootstrap estimate: {p_hat:.4}\n");
    if let Ok(model) = TwoClassModel::new(p_hat) {
        if let Ok(post) = posterior_predominant(model, tally.total_n(), tally.prevalent_count()) {
            let _ = writeln!(
                out,
                "- probability the prevalent class is correct: {post:.4}"
            );
        }
    }
    Some(out)
}
