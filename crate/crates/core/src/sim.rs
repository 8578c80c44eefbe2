//! Synthetic ground truth for desk-scale verification.
//!
//! A [`ProblemProfile`] assigns every equivalence class a probability and a
//! correctness flag. Solves are categorical draws from it, compare is a
//! deterministic function of the drawn labels, and the Monte Carlo routines
//! check the consensus statistics empirically against exact references.
//!
//! All randomness is ChaCha8 seeded from a `u64`, with one stream per
//! realization index or per fixed-size block of trials, so results do not
//! depend on platform or on how many threads share the work.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{
    make_tally, posterior_predominant, ConsensusError, ProfileSummary, TwoClassModel,
    PROBABILITY_SUM_TOLERANCE,
};
use crate::problem::{read_file, Assessment, ProblemError, Realization, Recommendation};

/// Trials per independently seeded block in the Monte Carlo routines.
pub const TRIALS_PER_BLOCK: u64 = 1 << 16;

/// Label used for realizations that carry no class label.
pub const UNLABELED: &str = "unlabeled";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("trials must be at least 1")]
    ZeroTrials,
    #[error(
        "inconclusive: none of the {trials} trials produced m1 = {m1} of n = {n}; rerun with more trials"
    )]
    Inconclusive { trials: u64, n: usize, m1: usize },
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileClass {
    pub label: String,
    pub correct: bool,
    pub prob: f64,
    pub canonical_answer_text: String,
    /// Whether compare recognizes this class as right on sight, even in the minority.
    #[serde(default)]
    pub recognizable: bool,
}

/// Ground-truth distribution of equivalence classes for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemProfile {
    pub problem_id: String,
    pub classes: Vec<ProfileClass>,
    pub seed: u64,
}

impl ProblemProfile {
    pub fn new(
        problem_id: impl Into<String>,
        classes: Vec<ProfileClass>,
        seed: u64,
    ) -> Result<Self> {
        let profile = Self {
            problem_id: problem_id.into(),
            classes,
            seed,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// One correct class with probability `p`, one incorrect class with `1 - p`.
    pub fn two_class(problem_id: impl Into<String>, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ConsensusError::Probability(p).into());
        }
        Self::new(
            problem_id,
            vec![
                ProfileClass {
                    label: "correct".into(),
                    correct: true,
                    prob: p,
                    canonical_answer_text: "Correct answer.".into(),
                    recognizable: false,
                },
                ProfileClass {
                    label: "incorrect".into(),
                    correct: false,
                    prob: 1.0 - p,
                    canonical_answer_text: "Incorrect answer.".into(),
                    recognizable: false,
                },
            ],
            seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(SimError::InvalidProfile(
                "at least one class is required".into(),
            ));
        }
        let mut labels = BTreeSet::new();
        for c in &self.classes {
            if c.label.trim().is_empty() {
                return Err(SimError::InvalidProfile("class label empty".into()));
            }
            if !labels.insert(c.label.as_str()) {
                return Err(SimError::InvalidProfile(format!(
                    "duplicate label {:?}",
                    c.label
                )));
            }
            if !(0.0..=1.0).contains(&c.prob) {
                return Err(SimError::InvalidProfile(format!(
                    "class {:?} has probability {} outside [0, 1]",
                    c.label, c.prob
                )));
            }
        }
        let total: f64 = self.classes.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(SimError::InvalidProfile(format!(
                "class probabilities sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn class(&self, label: &str) -> Option<&ProfileClass> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Aggregate view used by the regime classifier. Fails without a correct class.
    pub fn summary(&self) -> Result<ProfileSummary> {
        let correct: Vec<f64> = self
            .classes
            .iter()
            .filter(|c| c.correct)
            .map(|c| c.prob)
            .collect();
        let p_star = self
            .classes
            .iter()
            .filter(|c| !c.correct)
            .map(|c| c.prob)
            .sum();
        Ok(ProfileSummary::new(correct, p_star)?)
    }

    /// Index of a class drawn from the categorical distribution.
    pub fn draw_class<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, c) in self.classes.iter().enumerate() {
            acc += c.prob;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding slack above the cumulative sum
        self.classes
            .iter()
            .rposition(|c| c.prob > 0.0)
            .unwrap_or(self.classes.len() - 1)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let profile: ProblemProfile = serde_json::from_str(text).map_err(ProblemError::from)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes") + "\n"
    }

    pub fn file_name(&self) -> String {
        format!("{}.profile.json", self.problem_id)
    }
}

/// Generator for realization `index` of a run seeded with `seed`.
pub fn realization_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws one simulated solve. Reproducible from `(profile.seed, index)`.
pub fn sample_realization(profile: &ProblemProfile, index: usize) -> Realization {
    let mut rng = realization_rng(profile.seed, index);
    let class = &profile.classes[profile.draw_class(&mut rng)];
    Realization {
        index,
        part1_data_completion: String::new(),
        part2_model: String::new(),
        part3_solution_procedure: String::new(),
        part4_verification_validation: String::new(),
        raw_output: class.canonical_answer_text.clone(),
        class_label: Some(class.label.clone()),
        approximation_error_note: None,
        backend_metadata: Default::default(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareMode {
    /// Recommend the prevalent class.
    #[default]
    Prevalent,
    /// Prefer any present class flagged correct and recognizable, even in the
    /// minority. A deliberately simple stand-in for a reviewer spotting a
    /// missing effect the majority overlooked.
    Recognition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedVerdict {
    pub recommended_label: String,
    pub recommendation: Recommendation,
}

fn label_of(r: &Realization) -> &str {
    r.class_label.as_deref().unwrap_or(UNLABELED)
}

/// Deterministic compare over labeled realizations.
///
/// Panics if `realizations` is empty.
pub fn simulated_compare(
    realizations: &[Realization],
    profile: &ProblemProfile,
    mode: CompareMode,
) -> SimulatedVerdict {
    assert!(
        !realizations.is_empty(),
        "compare needs at least one realization"
    );
    let labels: Vec<&str> = realizations.iter().map(label_of).collect();
    let tally = make_tally(&labels).expect("non-empty labels");

    let recognized: Vec<&str> = match mode {
        CompareMode::Prevalent => Vec::new(),
        CompareMode::Recognition => labels
            .iter()
            .copied()
            .filter(|l| {
                profile
                    .class(l)
                    .is_some_and(|c| c.correct && c.recognizable)
            })
            .collect(),
    };
    let (chosen, reason) = if recognized.is_empty() {
        (tally.prevalent().to_owned(), "prevalent")
    } else {
        let among = make_tally(&recognized).expect("non-empty");
        (among.prevalent().to_owned(), "recognized")
    };

    let exemplar = realizations
        .iter()
        .find(|r| label_of(r) == chosen)
        .expect("chosen label is present");
    let recommended_solution = if exemplar.raw_output.trim().is_empty() {
        format!("Class {chosen}")
    } else {
        exemplar.raw_output.clone()
    };

    let chosen_count = tally.count(&chosen);
    let discussion = format!(
        "{} realizations fall into {} equivalence classes. Class {} holds {} of {} and is recommended ({}).",
        tally.total_n(),
        tally.counts().len(),
        chosen,
        chosen_count,
        tally.total_n(),
        reason
    );
    let per_realization_assessments = realizations
        .iter()
        .map(|r| {
            let label = label_of(r);
            let assessment = if label == chosen {
                format!("class {label}: agrees with the recommendation")
            } else {
                format!("class {label}: secondary opinion, differs from the recommendation")
            };
            Assessment {
                index: r.index,
                assessment,
            }
        })
        .collect();
    let secondary_opinions_noted = tally
        .counts()
        .iter()
        .filter(|(label, &count)| count > 0 && **label != chosen)
        .map(|(label, count)| format!("class {label} ({count} of {})", tally.total_n()))
        .collect();

    SimulatedVerdict {
        recommended_label: chosen,
        recommendation: Recommendation {
            discussion,
            recommended_solution,
            per_realization_assessments,
            secondary_opinions_noted,
        },
    }
}

/// Outcome of a Monte Carlo check against an exact reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: u64,
    /// Trials that contributed to the estimate (all of them unless conditioning rejects some).
    pub kept_trials: u64,
    pub empirical_value: f64,
    pub reference_value: f64,
    pub abs_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SimReport {
    fn new(trials: u64, kept: u64, hits: u64, reference: f64, tolerance: Option<f64>) -> Self {
        let empirical_value = hits as f64 / kept as f64;
        let tolerance = tolerance.unwrap_or_else(|| default_tolerance(reference, kept));
        let abs_error = (empirical_value - reference).abs();
        Self {
            trials,
            kept_trials: kept,
            empirical_value,
            reference_value: reference,
            abs_error,
            tolerance,
            pass: abs_error <= tolerance,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

impl fmt::Display for SimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} empirical={:.6} reference={:.6} abs_error={:.2e} tolerance={:.2e} kept={}/{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.empirical_value,
            self.reference_value,
            self.abs_error,
            self.tolerance,
            self.kept_trials,
            self.trials
        )
    }
}

/// Four standard errors of a Bernoulli mean with success probability `reference`.
pub fn default_tolerance(reference: f64, kept: u64) -> f64 {
    4.0 * (reference * (1.0 - reference) / kept as f64).sqrt()
}

// Runs `trials` in fixed blocks, each with its own stream, and sums
// (kept, hits) over blocks. The result is independent of the thread count.
fn run_blocks<F>(trials: u64, seed: u64, trial: F) -> (u64, u64)
where
    F: Fn(&mut ChaCha8Rng) -> Option<bool> + Sync,
{
    let blocks = trials.div_ceil(TRIALS_PER_BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block);
            let len = TRIALS_PER_BLOCK.min(trials - block * TRIALS_PER_BLOCK);
            let (mut kept, mut hits) = (0u64, 0u64);
            for _ in 0..len {
                if let Some(hit) = trial(&mut rng) {
                    kept += 1;
                    hits += hit as u64;
                }
            }
            (kept, hits)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// Empirical check of the two-class posterior by rejection sampling.
///
/// Each trial picks which class is correct uniformly at random, draws `n`
/// solves, and is kept only if class 1 received exactly `m1` votes. The
/// report compares the fraction of kept trials in which class 1 was the
/// correct one against [`posterior_predominant`].
pub fn monte_carlo_posterior(
    p: f64,
    n: usize,
    m1: usize,
    trials: u64,
    seed: u64,
) -> Result<SimReport> {
    let model = TwoClassModel::new(p)?;
    let reference = posterior_predominant(model, n, m1)?;
    if trials == 0 {
        return Err(SimError::ZeroTrials);
    }
    let (kept, hits) = run_blocks(trials, seed, |rng| {
        let class1_correct = rng.random::<bool>();
        let p_vote_class1 = if class1_correct { p } else { 1.0 - p };
        let votes = (0..n)
            .filter(|_| rng.random::<f64>() < p_vote_class1)
            .count();
        (votes == m1).then_some(class1_correct)
    });
    if kept == 0 {
        return Err(SimError::Inconclusive { trials, n, m1 });
    }
    Ok(SimReport::new(trials, kept, hits, reference, None))
}

/// Probability that the correct class holds a strict majority of `n` votes,
/// summed exactly over the binomial terms.
pub fn majority_correct_probability(p: f64, n: usize) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_choose = 0.0; // ln C(n, k), advanced incrementally
    let mut total = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if 2 * k > n {
            total += (log_choose + k as f64 * lp + (n - k) as f64 * lq).exp();
        }
    }
    total.min(1.0)
}

/// Empirical probability that an `n`-solve run produces a predominant correct
/// class, for a profile with one correct class (`p > 1/2`) and one incorrect class.
pub fn verify_condorcet(
    profile: &ProblemProfile,
    n: usize,
    trials: u64,
    seed: u64,
    tolerance: Option<f64>,
) -> Result<SimReport> {
    profile.validate()?;
    if profile.classes.len() != 2 || profile.classes.iter().filter(|c| c.correct).count() != 1 {
        return Err(SimError::InvalidProfile(
            "condorcet check needs exactly one correct and one incorrect class".into(),
        ));
    }
    let correct = profile.classes.iter().position(|c| c.correct).unwrap();
    let p = profile.classes[correct].prob;
    if p <= 0.5 {
        return Err(SimError::InvalidProfile(format!(
            "correct class probability {p} must exceed 1/2"
        )));
    }
    if n == 0 {
        return Err(ConsensusError::ZeroTotal.into());
    }
    if trials == 0 {
        return Err(SimError::ZeroTrials);
    }
    let reference = majority_correct_probability(p, n);
    let (kept, hits) = run_blocks(trials, seed, |rng| {
        let votes = (0..n)
            .filter(|_| profile.draw_class(rng) == correct)
            .count();
        Some(2 * votes > n)
    });
    Ok(SimReport::new(trials, kept, hits, reference, tolerance))
}
