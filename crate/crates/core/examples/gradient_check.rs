//! Compares the hand-derived gradients with central differences on a tiny
//! model and prints the worst relative error per parameter array.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use mutual_span::data::{FrameSpan, Sample, Subtitle};
use mutual_span::network::{ModelConfig, ModelParams, ParamKey};
use mutual_span::objective::{loss_and_grads, loss_value, LossTerms, Transfer};
use rand::{Rng, SeedableRng};

fn tiny_sample() -> Sample {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    Sample {
        id: "tiny".into(),
        duration_k: 6,
        video_features: (0..6).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect(),
        subtitles: vec![
            Subtitle { start_sec: 0.0, end_sec: 2.0, token_ids: vec![3, 4] },
            Subtitle { start_sec: 2.0, end_sec: 4.0, token_ids: vec![5, 6, 7] },
            Subtitle { start_sec: 4.5, end_sec: 6.0, token_ids: vec![8] },
        ],
        question_tokens: vec![1, 2],
        answer_frames: FrameSpan::new(2.0, 6.0),
    }
}

fn main() -> mutual_span::Result<()> {
    let params = ModelParams::init(ModelConfig {
        d: 4,
        d_in: 3,
        vocab_size: 12,
        kernel_size: 3,
        seed: 17,
    })?;
    let s = tiny_sample();
    let state = loss_and_grads(&params, &s, &Transfer::Dynamic, LossTerms::NONE, None)?
        .transfer
        .expect("sample has subtitles");
    // Freeze the pseudo labels so both evaluations see the same targets.
    let transfer = Transfer::Frozen(state.with_weights(0.6, 0.8));
    let analytic = loss_and_grads(&params, &s, &transfer, LossTerms::ALL, None)?.grads;

    let h = 1e-5;
    let mut worst = 0.0f64;
    for &key in ParamKey::ALL {
        let a = analytic.get(key);
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for idx in 0..a.len() {
            let at = (idx / a.ncols(), idx % a.ncols());
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.get_mut(key)[at] += h;
            minus.get_mut(key)[at] -= h;
            let numeric = (loss_value(&plus, &s, &transfer, None)?.total - loss_value(&minus, &s, &transfer, None)?.total) / (2.0 * h);
            diff = diff.max((a[at] - numeric).abs());
            scale = scale.max(a[at].abs()).max(numeric.abs());
        }
        let rel = diff / scale.max(1e-6);
        worst = worst.max(rel);
        println!("{:<28} {:>4} values  max |grad| {scale:9.2e}  rel err {rel:9.2e}", key.name(), a.len());
    }
    println!("\nworst relative error {worst:.2e}");
    Ok(())
}
