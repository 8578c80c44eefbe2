//! How majority voting amplifies a better-than-even solver.
//!
//! For a two-class problem solved correctly with probability p, prints the
//! exact probability that N solves produce a correct strict majority next to a
//! Monte Carlo estimate.
//!
//! ```text
//! cargo run --release --example condorcet_amplification -- 0.85
//! ```

use agency::sim::{verify_condorcet, ProblemProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p: f64 = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "0.85".into())
        .parse()?;
    let profile = ProblemProfile::two_class("condorcet", p, 7)?;
    println!("p = {p}");
    println!("{:>4}  {:>9}  {:>9}  result", "N", "exact", "simulated");
    for n in [1, 3, 5, 7, 9, 15, 25] {
        let r = verify_condorcet(&profile, n, 100_000, 7, Some(0.01))?;
        println!(
            "{n:>4}  {:>9.4}  {:>9.4}  {}",
            r.reference_value,
            r.empirical_value,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(())
}
