//! Majority-consensus statistics over a set of independent solve realizations.
//!
//! Everything here is a pure function of its inputs. The two-class model treats
//! each solve as a Bernoulli trial that lands in the single correct equivalence
//! class with probability `p`; given the observed split `m1 : n - m1`, the
//! probability that the larger class is the correct one is
//!
//! ```text
//! 1 / (1 + ((1 - p) / p)^(2 m1 - n))
//! ```
//!
//! which is evaluated in log-odds form so that large `n` cannot overflow.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a probability vector sums to one.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("probability {0} must lie strictly inside (0, 1)")]
    OpenProbability(f64),
    #[error("probability {0} must lie in [0, 1]")]
    Probability(f64),
    #[error("count m1 = {m1} is outside [0, {n}]")]
    CountOutOfRange { m1: usize, n: usize },
    #[error("n must be at least 1")]
    ZeroTotal,
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("invalid tally: {0}")]
    InvalidTally(String),
    #[error("invalid profile summary: {0}")]
    InvalidProfile(String),
}

pub type Result<T> = std::result::Result<T, ConsensusError>;

/// Per-class vote counts over `total_n` realizations.
///
/// The prevalent class is the one with the highest count; ties go to the
/// lexicographically smallest label. The prevalent class is predominant when
/// it holds strictly more than half of the votes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTally")]
pub struct Tally {
    total_n: usize,
    counts: BTreeMap<String, usize>,
    prevalent: String,
    predominant: bool,
}

#[derive(Deserialize)]
struct RawTally {
    total_n: usize,
    counts: BTreeMap<String, usize>,
    prevalent: String,
    predominant: bool,
}

impl TryFrom<RawTally> for Tally {
    type Error = ConsensusError;

    fn try_from(raw: RawTally) -> Result<Self> {
        let tally = Tally::from_counts(raw.counts)?;
        if tally.total_n != raw.total_n {
            return Err(ConsensusError::InvalidTally(format!(
                "total_n {} does not equal the sum of counts {}",
                raw.total_n, tally.total_n
            )));
        }
        if tally.prevalent != raw.prevalent || tally.predominant != raw.predominant {
            return Err(ConsensusError::InvalidTally(format!(
                "stored prevalent/predominant ({}, {}) disagree with counts ({}, {})",
                raw.prevalent, raw.predominant, tally.prevalent, tally.predominant
            )));
        }
        Ok(tally)
    }
}

impl Tally {
    /// Builds a tally from explicit counts. Zero counts are kept; the total must be positive.
    pub fn from_counts(counts: BTreeMap<String, usize>) -> Result<Self> {
        let total_n: usize = counts.values().sum();
        if total_n == 0 {
            return Err(ConsensusError::InvalidTally(
                "counts must sum to at least 1".into(),
            ));
        }
        let mut prevalent: Option<(&String, usize)> = None;
        for (label, &count) in &counts {
            match prevalent {
                Some((_, best)) if count <= best => {}
                _ => prevalent = Some((label, count)),
            }
        }
        let (prevalent, top) = prevalent.expect("non-empty counts");
        let prevalent = prevalent.clone();
        Ok(Self {
            total_n,
            predominant: 2 * top > total_n,
            counts,
            prevalent,
        })
    }

    pub fn total_n(&self) -> usize {
        self.total_n
    }

    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    pub fn count(&self, label: &str) -> usize {
        self.counts.get(label).copied().unwrap_or(0)
    }

    pub fn prevalent(&self) -> &str {
        &self.prevalent
    }

    pub fn prevalent_count(&self) -> usize {
        self.count(&self.prevalent)
    }

    pub fn predominant(&self) -> bool {
        self.predominant
    }

    /// Labels other than the prevalent one that received at least one vote.
    pub fn secondary(&self) -> impl Iterator<Item = (&str, usize)> {
        self.counts
            .iter()
            .filter(move |(label, &count)| count > 0 && **label != self.prevalent)
            .map(|(label, &count)| (label.as_str(), count))
    }
}

impl fmt::Display for Tally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .counts
            .iter()
            .map(|(label, count)| format!("{label}:{count}"))
            .collect();
        write!(
            f,
            "{{{}}} N={} prevalent={} predominant={}",
            parts.join(", "),
            self.total_n,
            self.prevalent,
            self.predominant
        )
    }
}

/// Counts label multiplicities and determines the prevalent class.
pub fn make_tally<S: AsRef<str>>(labels: &[S]) -> Result<Tally> {
    if labels.is_empty() {
        return Err(ConsensusError::Empty("label list"));
    }
    let mut counts = BTreeMap::new();
    for label in labels {
        *counts.entry(label.as_ref().to_owned()).or_insert(0) += 1;
    }
    Tally::from_counts(counts)
}

/// Single-correct-class Bernoulli model with per-solve success probability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoClassModel {
    p: f64,
}

impl TwoClassModel {
    pub fn new(p: f64) -> Result<Self> {
        if p > 0.0 && p < 1.0 {
            Ok(Self { p })
        } else {
            Err(ConsensusError::OpenProbability(p))
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `log((1 - p) / p)`, the per-vote log-likelihood ratio against class 1.
    fn log_ratio(&self) -> f64 {
        (1.0 - self.p).ln() - self.p.ln()
    }
}

/// Log-odds that class 1 (holding `m1` of `n` votes) is the correct class.
pub fn posterior_log_odds(model: TwoClassModel, n: usize, m1: usize) -> Result<f64> {
    if n == 0 {
        return Err(ConsensusError::ZeroTotal);
    }
    if m1 > n {
        return Err(ConsensusError::CountOutOfRange { m1, n });
    }
    let margin = 2.0 * m1 as f64 - n as f64;
    Ok(-margin * model.log_ratio())
}

/// Probability that class 1 is the correct class given it received `m1` of `n` votes.
pub fn posterior_predominant(model: TwoClassModel, n: usize, m1: usize) -> Result<f64> {
    posterior_log_odds(model, n, m1).map(logistic)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bootstrap estimate of the per-solve success probability: prevalent count over `N`.
///
/// Only meaningful when the prevalent class is the correct one, which the
/// two-class model makes likely for `p > 1/2`. For `p <= 1/2` the estimate
/// can be badly biased.
pub fn bootstrap_estimate(tally: &Tally) -> f64 {
    tally.prevalent_count() as f64 / tally.total_n() as f64
}

/// Ensemble success metric: the unweighted mean of per-problem estimates.
pub fn ensemble_metric(per_problem_estimates: &[f64]) -> Result<f64> {
    if per_problem_estimates.is_empty() {
        return Err(ConsensusError::Empty("per-problem estimates"));
    }
    for &value in per_problem_estimates {
        check_unit(value)?;
    }
    Ok(per_problem_estimates.iter().sum::<f64>() / per_problem_estimates.len() as f64)
}

fn check_unit(value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ConsensusError::Probability(value))
    }
}

/// Aggregate view of a problem's class probabilities: one entry per correct
/// class, plus the total mass `p_star` of all incorrect classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfileSummary")]
pub struct ProfileSummary {
    correct_probs: Vec<f64>,
    p_star: f64,
}

#[derive(Deserialize)]
struct RawProfileSummary {
    correct_probs: Vec<f64>,
    p_star: f64,
}

impl TryFrom<RawProfileSummary> for ProfileSummary {
    type Error = ConsensusError;

    fn try_from(raw: RawProfileSummary) -> Result<Self> {
        ProfileSummary::new(raw.correct_probs, raw.p_star)
    }
}

impl ProfileSummary {
    pub fn new(correct_probs: Vec<f64>, p_star: f64) -> Result<Self> {
        if correct_probs.is_empty() {
            return Err(ConsensusError::InvalidProfile(
                "at least one correct class is required".into(),
            ));
        }
        for &p in correct_probs.iter().chain(std::iter::once(&p_star)) {
            check_unit(p)?;
        }
        let total: f64 = correct_probs.iter().sum::<f64>() + p_star;
        if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(ConsensusError::InvalidProfile(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            correct_probs,
            p_star,
        })
    }

    pub fn correct_probs(&self) -> &[f64] {
        &self.correct_probs
    }

    pub fn p_star(&self) -> f64 {
        self.p_star
    }

    pub fn p_max(&self) -> f64 {
        self.correct_probs.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn p_min(&self) -> f64 {
        self.correct_probs.iter().copied().fold(f64::MAX, f64::min)
    }

    pub fn p_tot(&self) -> f64 {
        self.correct_probs.iter().sum()
    }
}

/// Operating regime of a problem under the multi-class generalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// A correct class wins a strict majority of solves on average.
    CaseA,
    /// No majority class, but every correct class outweighs all incorrect mass.
    CaseB,
    /// Every correct class is at most as likely as the incorrect mass.
    CaseC,
    /// Some correct classes beat the incorrect mass and some do not.
    Mixed,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Regime::CaseA => "CaseA",
            Regime::CaseB => "CaseB",
            Regime::CaseC => "CaseC",
            Regime::Mixed => "Mixed",
        };
        f.write_str(name)
    }
}

pub fn classify_regime(profile: &ProfileSummary) -> Regime {
    if profile.p_max() > 0.5 {
        Regime::CaseA
    } else if profile.p_min() > profile.p_star() {
        Regime::CaseB
    } else if profile.p_max() <= profile.p_star() {
        Regime::CaseC
    } else {
        Regime::Mixed
    }
}
