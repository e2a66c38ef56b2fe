//! Trains one model, saves the best checkpoint, reloads it and scores both
//! predictors on the held-out split.
//!
//! ```text
//! cargo run --release --example train_evaluate -- [epochs] [--no-mkt]
//! ```

use mutual_span::checkpoint::{load_checkpoint, save_checkpoint};
use mutual_span::engine::{evaluate_predictor, train, Predictor, TrainConfig};
use mutual_span::synth::{generate_corpus, split_corpus, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.iter().find_map(|a| a.parse().ok()).unwrap_or(10);
    let mkt_enabled = !args.iter().any(|a| a == "--no-mkt");

    let corpus = generate_corpus(&GenConfig::default())?;
    let (tr, te) = split_corpus(&corpus, 500.0 / 600.0, 0)?;
    let cfg = TrainConfig {
        epochs,
        mkt_enabled,
        ..TrainConfig::default()
    };
    let run = train(&tr, &te, &cfg)?;
    println!("epoch  total loss  alpha  beta   val mIoU");
    for e in &run.report.epochs {
        let fmt = |x: Option<f64>| x.map_or("  -  ".into(), |v| format!("{v:.3}"));
        println!(
            "{:>5}  {:>10.4}  {}  {}  {:>8.2}",
            e.epoch,
            e.losses.total,
            fmt(e.mean_alpha),
            fmt(e.mean_beta),
            e.validation.miou
        );
    }

    let dir = std::env::temp_dir().join("mutual-span-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("checkpoint.json");
    save_checkpoint(&path, &run.best)?;
    let params = load_checkpoint(&path)?;
    println!("\nbest epoch {} saved to {}", run.report.best_epoch, path.display());
    for p in [Predictor::Textual, Predictor::Visual] {
        let m = evaluate_predictor(&params, &te, p, cfg.max_len)?;
        let flat: Vec<String> = m.flat().iter().map(|(k, v)| format!("{k} {v:.2}")).collect();
        println!("{}  {}", p.label(), flat.join("  "));
    }
    Ok(())
}
