#![allow(dead_code)]

use std::path::PathBuf;

use agency::consensus::{ConsensusError, TwoClassModel};
use agency::problem::ProblemStatement;
use agency::sim::ProblemProfile;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn statement(id: &str) -> ProblemStatement {
    ProblemStatement::load(&fixture(&format!("{id}.problem.json"))).unwrap()
}

pub fn profile(id: &str) -> ProblemProfile {
    ProblemProfile::load(&fixture(&format!("{id}.profile.json"))).unwrap()
}

/// Posterior that class 1 is correct, by direct enumeration of the two
/// hypotheses with equal priors: binomial likelihood of `m1` votes for class 1
/// under each, normalized. Written independently of the library's closed form.
pub fn enumerated_posterior(p: f64, n: usize, m1: usize) -> f64 {
    let choose = |n: usize, k: usize| -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    };
    let c = choose(n, m1);
    let m2 = n - m1;
    let class1_correct = c * p.powi(m1 as i32) * (1.0 - p).powi(m2 as i32);
    let class2_correct = c * (1.0 - p).powi(m1 as i32) * p.powi(m2 as i32);
    class1_correct / (class1_correct + class2_correct)
}

/// Exact probability that the correct class gets a strict majority of `n`
/// Bernoulli(p) votes, by summing the pmf term by term.
pub fn binomial_majority(p: f64, n: usize) -> f64 {
    let mut pmf = (1.0 - p).powi(n as i32); // k = 0
    let mut total = 0.0;
    for k in 0..=n {
        if k > 0 {
            pmf *= (n - k + 1) as f64 / k as f64 * p / (1.0 - p);
        }
        if 2 * k > n {
            total += pmf;
        }
    }
    total
}

pub fn model(p: f64) -> Result<TwoClassModel, ConsensusError> {
    TwoClassModel::new(p)
}
