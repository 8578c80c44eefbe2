//! Grading a transcript against known ground truth.
//!
//! The oracle grader awards full marks to realizations in a correct class and
//! zero otherwise, then applies the template's pass threshold. The fraction
//! graded correct matches the bootstrap estimate from the tally.
//!
//! ```text
//! cargo run --example oracle_grading
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use agency::batch::grade_with_oracle;
use agency::consensus::{bootstrap_estimate, make_tally};
use agency::problem::{GradingTemplate, ProblemStatement, Verdict};
use agency::runtime::{Agency, BackendConfig, SimulatedBackend};
use agency::sim::ProblemProfile;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let stmt = ProblemStatement::load(&fixtures.join("pinned-assembly.problem.json"))?;
    let profile =
        ProblemProfile::load(&fixtures.join("pinned-assembly.profile.json"))?.with_seed(1);
    let template = GradingTemplate::load(&fixtures.join("pinned-assembly.grading.json"))?;

    let agency = Agency::new(
        Arc::new(SimulatedBackend::new(profile.clone())),
        BackendConfig::simulated(),
    )?;
    let transcript = agency.run(&stmt, 10).await?;
    let grades = grade_with_oracle(&transcript, &profile, &template)?;

    for (r, g) in transcript.realizations.iter().zip(&grades) {
        println!(
            "realization {:>2}  class {}  grade {:>3}  {}",
            r.index,
            r.class_label.as_deref().unwrap_or("-"),
            g.value,
            g.verdict
        );
    }
    let tally = make_tally(&transcript.class_labels().unwrap())?;
    let correct = grades
        .iter()
        .filter(|g| g.verdict == Verdict::Correct)
        .count();
    println!("\n{tally}");
    println!("p_hat from tally:  {:.2}", bootstrap_estimate(&tally));
    println!(
        "p_hat from grades: {:.2}",
        correct as f64 / grades.len() as f64
    );
    Ok(())
}
