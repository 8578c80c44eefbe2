//! A minority answer that the compare agent recognizes on sight.
//!
//! Most solves of the cooling problem leave out radiation and agree with each
//! other. In recognition mode the compare agent knows the radiation answer is
//! right when it sees it, and recommends it even from the minority. In the
//! default mode it follows the majority.
//!
//! ```text
//! cargo run --example missing_physics_recognition
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use agency::consensus::make_tally;
use agency::problem::ProblemStatement;
use agency::runtime::{Agency, BackendConfig, SimulatedBackend};
use agency::sim::{sample_realization, CompareMode, ProblemProfile};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let stmt = ProblemStatement::load(&fixtures.join("apple-cooling.problem.json"))?;
    let base = ProblemProfile::load(&fixtures.join("apple-cooling.profile.json"))?;

    // pick a seed where the correct class shows up, but only in the minority
    let profile = (0..)
        .map(|seed| base.with_seed(seed))
        .find(|p| {
            let labels: Vec<_> = (1..=10)
                .map(|i| sample_realization(p, i).class_label.unwrap())
                .collect();
            let tally = make_tally(&labels).unwrap();
            tally.count("with_radiation") > 0 && tally.prevalent() != "with_radiation"
        })
        .expect("some seed has a correct minority");

    for mode in [CompareMode::Prevalent, CompareMode::Recognition] {
        let backend = SimulatedBackend::new(profile.clone()).with_compare_mode(mode);
        let agency = Agency::new(Arc::new(backend), BackendConfig::simulated())?;
        let t = agency.run(&stmt, 10).await?;
        let tally = make_tally(&t.class_labels().unwrap())?;
        let rec = t.recommendation.expect("compare ran");
        println!("compare mode {mode:?} (seed {}): {tally}", profile.seed);
        let class = rec
            .recommended_solution
            .lines()
            .find_map(|l| l.strip_prefix("Equivalence class: "))
            .unwrap_or("?");
        println!("  recommended class: {class}");
        for note in &rec.secondary_opinions_noted {
            println!("  secondary: {note}");
        }
    }
    Ok(())
}
