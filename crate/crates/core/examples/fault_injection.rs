//! What the agency does when things go wrong.
//!
//! Wraps the simulated backend in a fault injector and shows retries of
//! transient failures, partial runs, aborted runs, and a compare agent whose
//! answer has no recognizable structure.
//!
//! ```text
//! cargo run --example fault_injection
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use agency::problem::ProblemStatement;
use agency::runtime::testing::{FaultInjectingBackend, FaultPlan};
use agency::runtime::{Agency, AgencyOptions, BackendConfig, SimulatedBackend};
use agency::sim::ProblemProfile;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let stmt = ProblemStatement::load(&fixtures.join("pinned-assembly.problem.json"))?;
    let profile = ProblemProfile::load(&fixtures.join("pinned-assembly.profile.json"))?;

    let scenarios = [
        (
            "two transient failures, then success",
            FaultPlan::default().transient_solve(2, 2),
            false,
        ),
        (
            "one solve always fails, partial not allowed",
            FaultPlan::default().fail_solve(3),
            false,
        ),
        (
            "one solve always fails, partial allowed",
            FaultPlan::default().fail_solve(3),
            true,
        ),
        (
            "compare answers without structure",
            FaultPlan::default().compare_answer("They all look fine to me."),
            false,
        ),
        (
            "compare always fails",
            FaultPlan::default().fail_compare(),
            false,
        ),
    ];
    for (name, plan, allow_partial) in scenarios {
        let backend = FaultInjectingBackend::new(SimulatedBackend::new(profile.clone()), plan);
        let agency = Agency::new(Arc::new(backend), BackendConfig::simulated())?.with_options(
            AgencyOptions {
                allow_partial,
                ..Default::default()
            },
        );
        println!("{name}:");
        match agency.run(&stmt, 4).await {
            Ok(t) => {
                let attempts: Vec<String> = t
                    .realizations
                    .iter()
                    .map(|r| r.backend_metadata["attempts"].to_string())
                    .collect();
                println!(
                    "  ok: {} realizations, attempts per solve [{}]",
                    t.n,
                    attempts.join(", ")
                );
                for key in ["failed_realizations", "compare_warnings"] {
                    if let Some(v) = t.agency_config_snapshot.get(key) {
                        println!("  {key}: {v}");
                    }
                }
            }
            Err(e) => println!(
                "  error ({} stage, validation: {}): {e}",
                e.stage().map_or("-".into(), |s| s.to_string()),
                e.is_validation()
            ),
        }
    }
    Ok(())
}
