//! Generates a synthetic corpus, splits it and writes both halves as JSON
//! lines, then prints one sample in readable form.
//!
//! ```text
//! cargo run --release --example generate_corpus -- [out_dir] [num_samples] [seed]
//! ```

use std::path::PathBuf;

use mutual_span::data::{save_corpus, validate_sample};
use mutual_span::synth::{generate_corpus, split_corpus, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out".into()));
    let num_samples = args.next().and_then(|a| a.parse().ok()).unwrap_or(600);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let cfg = GenConfig {
        num_samples,
        seed,
        ..GenConfig::default()
    };
    let corpus = generate_corpus(&cfg)?;
    let (train, test) = split_corpus(&corpus, 5.0 / 6.0, seed)?;
    std::fs::create_dir_all(&out)?;
    save_corpus(out.join("train.jsonl"), &train)?;
    save_corpus(out.join("test.jsonl"), &test)?;
    println!("{} train / {} test samples in {}", train.len(), test.len(), out.display());

    let s = &corpus[0];
    assert!(validate_sample(s).is_empty());
    println!("\n{}: {} seconds, answer {:?}", s.id, s.duration_k, s.answer_frames);
    println!("question tokens {:?}", s.question_tokens);
    for (i, sub) in s.subtitles.iter().enumerate() {
        println!("  subtitle {i:>2}  [{:>5.1}, {:>5.1})  {:?}", sub.start_sec, sub.end_sec, sub.token_ids);
    }
    Ok(())
}
