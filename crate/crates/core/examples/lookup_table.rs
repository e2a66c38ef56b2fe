//! Builds the subtitle timeline of one generated sample and walks a span
//! through every conversion: frames, subtitles, tokens and back.
//!
//! ```text
//! cargo run --example lookup_table -- [sample_index]
//! ```

use mutual_span::data::token_layout;
use mutual_span::synth::{generate_corpus, GenConfig};
use mutual_span::timeline::{
    build_table, frame_to_subtitle, ground_truth_targets, subtitle_span_of_tokens, subtitle_to_frame, temporal_iou,
    token_span_of_subtitles,
};

fn main() -> mutual_span::Result<()> {
    let index: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let corpus = generate_corpus(&GenConfig {
        num_samples: index + 1,
        ..GenConfig::default()
    })?;
    let s = &corpus[index];
    let layout = token_layout(s);
    let table = build_table(s, &layout);

    println!("{}: {} question tokens, {} tokens in total", s.id, layout.question_len(), layout.n);
    println!("{:>5} {:>7} {:>7}  tokens", "index", "start", "end");
    for e in &table.entries {
        println!("{:>5} {:>7.1} {:>7.1}  {}..={}", e.index, e.start_sec, e.end_sec, e.tokens.start_tok, e.tokens.end_tok);
    }

    let answer = s.answer_frames;
    let subs = frame_to_subtitle(answer, &table)?;
    let tokens = token_span_of_subtitles(subs, &table)?;
    let back = subtitle_to_frame(subtitle_span_of_tokens(tokens, &table)?, &table)?;
    println!("\nanswer    {answer:?}");
    println!("subtitles {subs:?}");
    println!("tokens    {tokens:?}");
    println!("back      {back:?}  (IoU with answer {:.3})", temporal_iou(back, answer));

    let gt = ground_truth_targets(s, &table);
    println!("\nframe targets {:?}, token targets {:?}", gt.frames, gt.tokens);
    Ok(())
}
