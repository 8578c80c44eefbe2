//! Backend that answers from a [`ProblemProfile`] instead of a model.
//!
//! Solve calls draw a class with [`sample_realization`] and answer in the same
//! four-part layout a real solve agent is asked for, ending with an
//! `Equivalence class:` line. Compare calls read those lines back out of the
//! concatenated prompt and answer with [`simulated_compare`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;

use super::backend::{AgentRole, BackendError, ChatRequest, ChatResponse, ModelBackend};
use super::compare::{format_compare_output, split_concatenated, REALIZATION_HEADER};
use crate::problem::Realization;
use crate::sim::{
    realization_rng, sample_realization, simulated_compare, CompareMode, ProblemProfile,
};

#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    profile: ProblemProfile,
    mode: CompareMode,
    max_latency: Duration,
}

impl SimulatedBackend {
    pub fn new(profile: ProblemProfile) -> Self {
        Self {
            profile,
            mode: CompareMode::Prevalent,
            max_latency: Duration::ZERO,
        }
    }

    pub fn with_compare_mode(mut self, mode: CompareMode) -> Self {
        self.mode = mode;
        self
    }

    /// Delay each solve by a pseudo-random amount up to `max`, so calls finish
    /// out of order. The delay is a function of the seed and index.
    pub fn with_latency(mut self, max: Duration) -> Self {
        self.max_latency = max;
        self
    }

    pub fn profile(&self) -> &ProblemProfile {
        &self.profile
    }

    fn solve_text(&self, index: usize) -> String {
        let r = sample_realization(&self.profile, index);
        let label = r.class_label.as_deref().unwrap_or_default();
        let mut out = String::new();
        let _ = write!(
            out,
            "## Part 1: Data Completion\nSimulated realization {index}; no data completion required.\n\n\
             ## Part 2: Mathematical Model\n{}\n\n\
             ## Part 3: Solution Procedure\nSimulated.\n\n\
             ## Part 4: Verification and Validation\nSimulated.\n\n\
             Equivalence class: {label}\n",
            r.raw_output.trim()
        );
        out
    }

    fn compare_text(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let concatenated = request
            .user_parts
            .iter()
            .find(|p| p.starts_with(REALIZATION_HEADER))
            .ok_or_else(|| BackendError::Malformed("compare prompt has no realizations".into()))?;
        let realizations: Vec<Realization> = split_concatenated(concatenated)
            .into_iter()
            .map(|(index, body)| Realization::from_output(index, body, BTreeMap::new()).0)
            .collect();
        if realizations.is_empty() {
            return Err(BackendError::Malformed(
                "compare prompt has no realizations".into(),
            ));
        }
        let verdict = simulated_compare(&realizations, &self.profile, self.mode);
        let labels = realizations
            .iter()
            .filter_map(|r| r.class_label.clone().map(|l| (r.index, l)))
            .collect();
        Ok(format_compare_output(&verdict.recommendation, &labels))
    }
}

#[async_trait]
impl ModelBackend for SimulatedBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = match request.role {
            AgentRole::Solve => {
                let index = request
                    .index
                    .ok_or_else(|| BackendError::Malformed("solve request without index".into()))?;
                if !self.max_latency.is_zero() {
                    // separate stream from the class draw so latency never shifts sampling
                    let mut rng = realization_rng(self.profile.seed ^ 0x6c61_7465_6e63_7921, index);
                    let delay = self.max_latency.mul_f64(rng.random::<f64>());
                    tokio::time::sleep(delay).await;
                }
                self.solve_text(index)
            }
            AgentRole::Compare => self.compare_text(request)?,
        };
        Ok(ChatResponse {
            text,
            model: Some("simulated".into()),
            prompt_tokens: None,
            completion_tokens: None,
        })
    }

    fn name(&self) -> &str {
        "simulated"
    }
}
