//! Runs an untrained network on one sample, prints the shape of every
//! intermediate, and turns the logits into decoded spans and pseudo labels.
//!
//! ```text
//! cargo run --release --example forward_pass
//! ```

use mutual_span::data::token_layout;
use mutual_span::network::{forward, ModelConfig, ModelParams};
use mutual_span::objective::{build_pseudo_labels, decode_span, odl_weights};
use mutual_span::synth::{generate_corpus, GenConfig};
use mutual_span::timeline::{build_table, ground_truth_targets};

fn main() -> mutual_span::Result<()> {
    let s = generate_corpus(&GenConfig {
        num_samples: 1,
        ..GenConfig::default()
    })?
    .remove(0);
    let params = ModelParams::init(ModelConfig::default())?;
    println!("{} parameters", params.num_scalars());

    let (state, logits) = forward(&s, &params)?;
    let shape = |a: &ndarray::Array2<f64>| format!("{} x {}", a.nrows(), a.ncols());
    for (name, a) in [
        ("video embedding", &state.v),
        ("text embedding", &state.t),
        ("similarity", &state.g),
        ("video-to-text attention", &state.d),
        ("text-to-video attention", &state.f),
        ("fused video", &state.v_prime),
        ("video after text conv", &state.v_dprime),
        ("text after projection", &state.t_prime),
        ("text with video summary", &state.t_bar),
    ] {
        println!("{name:<26} {}", shape(a));
    }

    let (vs, ve) = decode_span(&logits.v_start, &logits.v_end, None, None)?;
    let (ts, te) = decode_span(&logits.t_start, &logits.t_end, Some(&logits.t_mask), None)?;
    println!("\nvisual span frames {vs}..={ve}, textual span tokens {ts}..={te}");

    let table = build_table(&s, &token_layout(&s));
    let labels = build_pseudo_labels(&logits, &table, None)?;
    let gt = ground_truth_targets(&s, &table);
    if let Some(tokens) = gt.tokens {
        let (alpha, beta) = odl_weights(&labels, s.answer_frames, tokens);
        println!("pseudo visual {:?}, pseudo textual {:?}", labels.pseudo_visual, labels.pseudo_textual);
        println!("alpha {alpha:.3}, beta {beta:.3}");
    }
    Ok(())
}
