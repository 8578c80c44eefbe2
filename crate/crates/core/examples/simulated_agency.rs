//! A full agency run against the simulated backend.
//!
//! Ten solve agents answer in parallel, each in its own session, and the
//! compare agent reads all ten and recommends one. The simulated backend draws
//! each answer's equivalence class from a problem profile, so the run is
//! reproducible from the profile seed.
//!
//! ```text
//! cargo run --example simulated_agency
//! ```

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use agency::consensus::{bootstrap_estimate, make_tally, posterior_predominant, TwoClassModel};
use agency::problem::{render_transcript, ProblemStatement};
use agency::runtime::{Agency, BackendConfig, SimulatedBackend};
use agency::sim::ProblemProfile;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let stmt = ProblemStatement::load(&fixtures.join("plate-convection.problem.json"))?;
    let profile = ProblemProfile::load(&fixtures.join("plate-convection.profile.json"))?;

    // random per-solve latency shows that results still come back in index order
    let backend = SimulatedBackend::new(profile).with_latency(Duration::from_millis(30));
    let agency = Agency::new(Arc::new(backend), BackendConfig::simulated())?;
    let transcript = agency.run(&stmt, 10).await?;

    print!("{}", render_transcript(&transcript));

    let labels = transcript
        .class_labels()
        .expect("simulated realizations are labeled");
    let tally = make_tally(&labels)?;
    let p_hat = bootstrap_estimate(&tally);
    println!("\n{tally}");
    println!("p_hat = {p_hat:.2}");
    if let Ok(model) = TwoClassModel::new(p_hat) {
        println!(
            "posterior that the prevalent class is correct: {:.6}",
            posterior_predominant(model, tally.total_n(), tally.prevalent_count())?
        );
    }
    Ok(())
}
