//! Solving a whole canon of problems and aggregating the results.
//!
//! Each entry yields a tally and a bootstrap estimate `p_hat`; the ensemble
//! metric is their mean. Transcripts and the report are written to a
//! temporary directory.
//!
//! ```text
//! cargo run --example canon_batch -- 25 7
//! ```

use std::path::PathBuf;

use agency::batch::{run_canon, CanonBackend, CanonManifest, CanonOptions};
use agency::runtime::{AgencyOptions, BackendConfig};
use agency::sim::CompareMode;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "25".into())
        .parse()?;
    let seed: u64 = std::env::args()
        .nth(2)
        .unwrap_or_else(|| "7".into())
        .parse()?;
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let manifest = CanonManifest::load(&fixtures.join("canon.json"))?;

    let out = std::env::temp_dir().join("agency-canon-example");
    let options = CanonOptions {
        config: BackendConfig::simulated(),
        agency: AgencyOptions {
            out_dir: Some(out.clone()),
            ..Default::default()
        },
        canon_parallel: 3,
    };
    let backend = CanonBackend::Simulated {
        compare_mode: CompareMode::Prevalent,
        seed: Some(seed),
    };
    let report = run_canon(&manifest, n, &backend, &options).await?;
    std::fs::write(out.join(report.file_name()), report.to_json())?;

    println!("{report}");
    println!("transcripts and report in {}", out.display());
    Ok(())
}
