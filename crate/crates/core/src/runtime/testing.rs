//! Backend wrappers for fault injection and instrumentation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;

use super::backend::{AgentRole, BackendError, ChatRequest, ChatResponse, ModelBackend};

#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    /// Solve indices whose every attempt fails.
    pub failing_solves: BTreeSet<usize>,
    /// Solve index -> number of attempts that fail before one succeeds.
    pub transient_solves: BTreeMap<usize, u32>,
    /// Solve indices answered with an empty body.
    pub empty_solves: BTreeSet<usize>,
    /// Replaces every compare answer with this text.
    pub compare_override: Option<String>,
    pub fail_compare: bool,
}

impl FaultPlan {
    pub fn fail_solve(mut self, index: usize) -> Self {
        self.failing_solves.insert(index);
        self
    }

    pub fn transient_solve(mut self, index: usize, failures: u32) -> Self {
        self.transient_solves.insert(index, failures);
        self
    }

    pub fn empty_solve(mut self, index: usize) -> Self {
        self.empty_solves.insert(index);
        self
    }

    pub fn compare_answer(mut self, text: impl Into<String>) -> Self {
        self.compare_override = Some(text.into());
        self
    }

    pub fn fail_compare(mut self) -> Self {
        self.fail_compare = true;
        self
    }
}

pub struct FaultInjectingBackend<B> {
    inner: B,
    plan: FaultPlan,
    attempts: Mutex<HashMap<usize, u32>>,
}

impl<B: ModelBackend> FaultInjectingBackend<B> {
    pub fn new(inner: B, plan: FaultPlan) -> Self {
        Self {
            inner,
            plan,
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn attempts(&self, index: usize) -> u32 {
        self.attempts
            .lock()
            .unwrap()
            .get(&index)
            .copied()
            .unwrap_or(0)
    }
}

#[async_trait]
impl<B: ModelBackend> ModelBackend for FaultInjectingBackend<B> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        match (request.role, request.index) {
            (AgentRole::Solve, Some(index)) => {
                let attempt = {
                    let mut attempts = self.attempts.lock().unwrap();
                    let n = attempts.entry(index).or_insert(0);
                    *n += 1;
                    *n
                };
                if self.plan.failing_solves.contains(&index) {
                    return Err(BackendError::Injected(format!(
                        "solve {index} always fails"
                    )));
                }
                if self.plan.empty_solves.contains(&index) {
                    return Ok(ChatResponse::default());
                }
                if let Some(&failures) = self.plan.transient_solves.get(&index) {
                    if attempt <= failures {
                        return Err(BackendError::Injected(format!(
                            "solve {index} attempt {attempt} of {failures} planned failures"
                        )));
                    }
                }
                self.inner.complete(request).await
            }
            (AgentRole::Compare, _) => {
                if self.plan.fail_compare {
                    return Err(BackendError::Injected("compare fails".into()));
                }
                if let Some(text) = &self.plan.compare_override {
                    return Ok(ChatResponse {
                        text: text.clone(),
                        ..ChatResponse::default()
                    });
                }
                self.inner.complete(request).await
            }
            _ => self.inner.complete(request).await,
        }
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub session_id: String,
    pub role: AgentRole,
    pub index: Option<usize>,
    pub user_parts: Vec<String>,
}

/// Records every call and tracks the peak number of concurrent calls.
pub struct InstrumentedBackend<B> {
    inner: B,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    calls: Mutex<Vec<CallRecord>>,
}

impl<B: ModelBackend> InstrumentedBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl<B: ModelBackend> ModelBackend for InstrumentedBackend<B> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.lock().unwrap().push(CallRecord {
            session_id: request.session_id.clone(),
            role: request.role,
            index: request.index,
            user_parts: request.user_parts.clone(),
        });
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        let _guard = InFlight(&self.in_flight);
        // let other calls start before this one returns
        tokio::task::yield_now().await;
        self.inner.complete(request).await
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}
