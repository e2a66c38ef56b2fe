//! Runs the with/without mutual-transfer comparison on a generated corpus
//! and prints the table plus the seed-averaged alpha/beta trace.
//!
//! ```text
//! cargo run --release --example ablation -- [epochs] [seeds...]
//! ```

use mutual_span::engine::{ablate, alpha_beta_trace, mean_trace, TrainConfig};
use mutual_span::synth::{generate_corpus, split_corpus, GenConfig};

fn main() -> mutual_span::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|a| a.parse().ok()).unwrap_or(30);
    let seeds: Vec<u64> = args.iter().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![1, 2, 3] } else { seeds };

    let corpus = generate_corpus(&GenConfig::default())?;
    let (train, test) = split_corpus(&corpus, 500.0 / 600.0, 0)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let ab = ablate(&train, &test, &cfg, &seeds)?;
    ab.write_csv(std::io::stdout())?;

    let traces = ab
        .reports
        .iter()
        .map(|(_, with, _)| alpha_beta_trace(with))
        .collect::<mutual_span::Result<Vec<_>>>()?;
    println!();
    for p in mean_trace(&traces) {
        println!("epoch {:>3}  alpha {:.3}  beta {:.3}", p.epoch, p.mean_alpha, p.mean_beta);
    }
    Ok(())
}
