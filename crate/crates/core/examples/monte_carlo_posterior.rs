//! Empirical check of the closed-form posterior by rejection sampling.
//!
//! Each trial picks the correct class at random, draws N votes, and is kept
//! when class 1 received exactly M1 of them. The kept fraction in which class
//! 1 was correct should match the closed form within four standard errors.
//! Results depend only on the seed, not on the number of threads.
//!
//! ```text
//! cargo run --release --example monte_carlo_posterior -- 0.8 8 6 1000000 42
//! ```

use agency::sim::monte_carlo_posterior;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_owned());
    let p: f64 = arg(0, "0.8").parse()?;
    let n: usize = arg(1, "8").parse()?;
    let m1: usize = arg(2, "6").parse()?;
    let trials: u64 = arg(3, "1000000").parse()?;
    let seed: u64 = arg(4, "42").parse()?;

    let report = monte_carlo_posterior(p, n, m1, trials, seed)?;
    println!("p={p} N={n} M1={m1} trials={trials} seed={seed}");
    println!("{report}");
    print!("{}", report.to_json());
    Ok(())
}
