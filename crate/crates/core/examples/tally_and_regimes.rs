//! Tallying equivalence classes and classifying a problem's regime.
//!
//! A tally counts realizations per class, breaks ties toward the smallest
//! label, and calls the prevalent class predominant only with a strict
//! majority. The regime of a profile says whether majority voting can be
//! trusted for it.
//!
//! ```text
//! cargo run --example tally_and_regimes
//! ```

use agency::consensus::{
    bootstrap_estimate, classify_regime, ensemble_metric, make_tally, ProfileSummary,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for labels in [
        vec!["b", "b", "b", "e", "b", "b", "b", "b", "b", "b"],
        vec!["d", "e", "d", "d", "d", "d", "e", "d", "d", "d"],
        vec!["a", "c", "c", "a", "f"],
        vec!["x", "y"],
    ] {
        let tally = make_tally(&labels)?;
        let secondary: Vec<String> = tally.secondary().map(|(l, c)| format!("{l}:{c}")).collect();
        println!(
            "{tally}  p_hat={:.2}  secondary=[{}]",
            bootstrap_estimate(&tally),
            secondary.join(", ")
        );
    }

    let estimates = [0.9, 0.7, 0.8];
    println!(
        "\nensemble metric over {estimates:?}: {:.4}",
        ensemble_metric(&estimates)?
    );

    println!("\nregimes (correct-class probabilities, incorrect mass p*):");
    for (correct, p_star) in [
        (vec![0.9], 0.1),
        (vec![0.35, 0.3], 0.35),
        (vec![0.45, 0.05], 0.5),
        (vec![0.4, 0.3], 0.3),
        (vec![0.2], 0.8),
    ] {
        let summary = ProfileSummary::new(correct.clone(), p_star)?;
        println!(
            "  {correct:?} p*={p_star}: p_max={:.2} p_min={:.2} p_tot={:.2} -> {}",
            summary.p_max(),
            summary.p_min(),
            summary.p_tot(),
            classify_regime(&summary)
        );
    }
    Ok(())
}
