//! Posterior probability that the predominant class is the correct one.
//!
//! Prints a table of the two-class posterior for a few solve success rates and
//! vote splits, including the worked values 0.9961, 0.0039 and 0.9412.
//!
//! ```text
//! cargo run --example posterior_fixtures
//! ```

use agency::consensus::{posterior_log_odds, posterior_predominant, TwoClassModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = TwoClassModel::new(0.8)?;
    for (n, m1) in [(8, 6), (8, 2), (4, 3)] {
        println!(
            "p=0.8 N={n} M1={m1}: posterior {:.4} (log-odds {:+.3})",
            posterior_predominant(model, n, m1)?,
            posterior_log_odds(model, n, m1)?
        );
    }

    println!("\nposterior that class 1 is correct, N = 10");
    print!("{:>6}", "p \\ M1");
    for m1 in 0..=10 {
        print!("{m1:>8}");
    }
    println!();
    for p in [0.55, 0.6, 0.7, 0.8, 0.9] {
        let model = TwoClassModel::new(p)?;
        print!("{p:>6}");
        for m1 in 0..=10 {
            print!("{:>8.4}", posterior_predominant(model, 10, m1)?);
        }
        println!();
    }
    Ok(())
}
