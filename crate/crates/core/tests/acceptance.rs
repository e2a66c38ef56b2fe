//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The ablation criterion trains 18 models at the default scale and
//! dominates the runtime (about a quarter of an hour on one core).

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{aligned_sample, brute_decode, cell_iou, finite_difference_errors, random_sample, rng, set_iou};
use common::{toy_params, toy_sample};
use mutual_span::data::{token_layout, FrameSpan, TokenSpan};
use mutual_span::engine::{ablate, alpha_beta_trace, evaluate, mean_trace, train, Ablation, Predictor, TrainConfig};
use mutual_span::network::{ParamGroup, ParamKey};
use mutual_span::objective::{decode_span, loss_and_grads, LossTerms, Transfer};
use mutual_span::synth::{generate_corpus, split_corpus, GenConfig};
use mutual_span::timeline::{
    build_table, compute_metrics, frame_to_subtitle, ground_truth_targets, index_iou, subtitle_span_of_tokens,
    subtitle_to_frame, temporal_iou, SubtitleSpan,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn iou_suite() -> Outcome {
    let mut cases = 0usize;
    for a0 in 0..12usize {
        for a1 in a0 + 1..=12 {
            for b0 in 0..12usize {
                for b1 in b0 + 1..=12 {
                    let got = temporal_iou(FrameSpan::new(a0 as f64, a1 as f64), FrameSpan::new(b0 as f64, b1 as f64));
                    check((got - cell_iou((a0, a1), (b0, b1))).abs() < 1e-12, format!("temporal [{a0},{a1}] [{b0},{b1}]"))?;
                    cases += 1;
                }
            }
        }
    }
    for a0 in 0..12usize {
        for a1 in a0..12 {
            for b0 in 0..12usize {
                for b1 in b0..12 {
                    let (a, b) = (TokenSpan::new(a0, a1), TokenSpan::new(b0, b1));
                    check(index_iou(&a, &b) == set_iou(&a, &b), format!("index [{a0},{a1}] [{b0},{b1}]"))?;
                    cases += 1;
                }
            }
        }
    }
    // Half-second endpoints at random offsets: doubling the times turns them
    // into unit cells.
    let mut r = rng(101);
    for _ in 0..500 {
        let a0 = r.random_range(0..200usize);
        let a1 = a0 + r.random_range(1..=24);
        let b0 = r.random_range(0..200usize);
        let b1 = b0 + r.random_range(1..=24);
        let half = |x: usize| x as f64 * 0.5;
        let got = temporal_iou(FrameSpan::new(half(a0), half(a1)), FrameSpan::new(half(b0), half(b1)));
        check((got - cell_iou((a0, a1), (b0, b1))).abs() < 1e-12, format!("random [{a0},{a1}] [{b0},{b1}]"))?;
        cases += 1;
    }
    for set in 0..1000 {
        let n = r.random_range(1..50);
        let span = |r: &mut rand_chacha::ChaCha8Rng| {
            let s = r.random_range(0.0..60.0);
            FrameSpan::new(s, s + r.random_range(0.0..20.0))
        };
        let p: Vec<_> = (0..n).map(|_| span(&mut r)).collect();
        let t: Vec<_> = (0..n).map(|_| span(&mut r)).collect();
        let m = compute_metrics(&p, &t).map_err(|e| e.to_string())?;
        check(m.iou_at[0] >= m.iou_at[1] && m.iou_at[1] >= m.iou_at[2], format!("monotonicity, set {set}"))?;
    }
    Ok(format!("{cases} IoU cases, 1000 metric sets"))
}

fn lookup_round_trip() -> Outcome {
    let mut r = rng(202);
    let (mut tables, mut aligned) = (0, 0);
    while tables < 1000 {
        let k = r.random_range(4..40);
        let mut s = random_sample(&mut r, k, 1);
        let t = build_table(&s, &token_layout(&s));
        if t.is_empty() {
            continue;
        }
        tables += 1;
        let (a, b) = (r.random_range(0..t.len()), r.random_range(0..t.len()));
        let span = SubtitleSpan::new(a.min(b), a.max(b));
        let frames = subtitle_to_frame(span, &t).map_err(|e| e.to_string())?;
        check(frame_to_subtitle(frames, &t).map_err(|e| e.to_string())? == span, format!("table {tables}: {span:?}"))?;

        s.answer_frames = frames;
        let tokens = ground_truth_targets(&s, &t).tokens.ok_or("aligned answer lost its token target")?;
        let back = subtitle_to_frame(subtitle_span_of_tokens(tokens, &t).map_err(|e| e.to_string())?, &t)
            .map_err(|e| e.to_string())?;
        check(temporal_iou(back, s.answer_frames) == 1.0, format!("table {tables}: aligned answer drifted"))?;
        aligned += 1;
    }
    Ok(format!("{tables} tables, {aligned} aligned answers"))
}

fn gradient_check() -> Outcome {
    let p = toy_params();
    let s = toy_sample(3, 1);
    let n = token_layout(&s).n;
    let state = loss_and_grads(&p, &s, &Transfer::Dynamic, LossTerms::NONE, None)
        .map_err(|e| e.to_string())?
        .transfer
        .ok_or("toy sample has no text")?;
    let errors = finite_difference_errors(&p, &s, &Transfer::Frozen(state.with_weights(0.6, 0.8)), 1e-5);
    let groups = [
        ParamGroup::Encoders,
        ParamGroup::Fusion,
        ParamGroup::VisualPredictor,
        ParamGroup::TextualPredictor,
    ];
    for g in groups {
        check(errors.iter().any(|(k, _)| k.group() == g), format!("{g:?} not covered"))?;
    }
    let (worst_key, worst) = errors.iter().copied().fold((ParamKey::ALL[0], 0.0), |a, b| if b.1 > a.1 { b } else { a });
    check(worst <= 1e-4, format!("{}: {worst:e}", worst_key.name()))?;
    Ok(format!("k={} n={n} d={}, {} arrays, worst {worst:.1e} ({})", s.duration_k, p.config.d, errors.len(), worst_key.name()))
}

fn one_way() -> Outcome {
    let p = toy_params();
    let mut compared = 0;
    for seed in 0..5 {
        let s = toy_sample(3, seed);
        let state = loss_and_grads(&p, &s, &Transfer::Dynamic, LossTerms::NONE, None)
            .map_err(|e| e.to_string())?
            .transfer
            .ok_or("toy sample has no text")?;
        let tr = Transfer::Frozen(state.with_weights(0.7, 0.9));
        let term = |f: fn(&mut LossTerms)| {
            let mut t = LossTerms::NONE;
            f(&mut t);
            loss_and_grads(&p, &s, &tr, t, None).map_err(|e| e.to_string())
        };
        let vis = term(|t| t.visual_mutual = true)?;
        check(vis.grads.is_zero_in(ParamGroup::TextualPredictor), "visual mutual term reaches the textual head")?;
        let txt = term(|t| t.textual_mutual = true)?;
        check(txt.grads.is_zero_in(ParamGroup::VisualPredictor), "textual mutual term reaches the visual head")?;

        let off = loss_and_grads(&p, &s, &Transfer::Disabled, LossTerms::ALL, None).map_err(|e| e.to_string())?;
        let zero = loss_and_grads(&p, &s, &Transfer::FixedWeights { alpha: 0.0, beta: 0.0 }, LossTerms::ALL, None)
            .map_err(|e| e.to_string())?;
        check(off.grads == zero.grads && off.bundle.total == zero.bundle.total, "zero weights differ from no transfer")?;
        compared += 1;
    }
    Ok(format!("{compared} samples, both directions exactly zero"))
}

fn decode_oracle() -> Outcome {
    let mut r = rng(303);
    for case in 0..10_000 {
        let n = r.random_range(1..=12);
        let start: Vec<f64> = (0..n).map(|_| r.random_range(-3..=3) as f64).collect();
        let end: Vec<f64> = (0..n).map(|_| r.random_range(-3..=3) as f64).collect();
        let mask: Option<Vec<bool>> = r.random_bool(0.5).then(|| (0..n).map(|_| r.random_bool(0.7)).collect());
        let max_len = r.random_bool(0.3).then(|| r.random_range(0..n));
        let got = decode_span(&start, &end, mask.as_deref(), max_len).ok();
        check(got == brute_decode(&start, &end, mask.as_deref(), max_len), format!("case {case}"))?;
    }
    Ok("10000 randomized cases".into())
}

fn overfit() -> Outcome {
    let s = aligned_sample();
    let cfg = TrainConfig { learning_rate: 1e-2, batch_size: 1, epochs: 200, ..TrainConfig::default() };
    let set = [s];
    let run = train(&set, &set, &cfg).map_err(|e| e.to_string())?;
    let iou = evaluate(&run.last, &set, None).map_err(|e| e.to_string())?.per_sample_iou[0];
    check(iou == 1.0, format!("final IoU {iou}"))?;
    Ok(format!("sample {}, 200 steps, IoU {iou}", set[0].id))
}

fn ablation_run() -> Result<(Ablation, Duration), String> {
    let t = Instant::now();
    let corpus = generate_corpus(&GenConfig::default()).map_err(|e| e.to_string())?;
    let (tr, te) = split_corpus(&corpus, 500.0 / 600.0, 0).map_err(|e| e.to_string())?;
    if (tr.len(), te.len()) != (500, 100) {
        return Err(format!("split {}/{}", tr.len(), te.len()));
    }
    let ab = ablate(&tr, &te, &TrainConfig::default(), &[1, 2, 3]).map_err(|e| e.to_string())?;
    Ok((ab, t.elapsed()))
}

fn ablation_trend(ab: &Ablation) -> Outcome {
    let miou = |p, mkt| ab.mean_row(p, mkt).map(|r| r.metrics[3]).ok_or("missing mean row");
    let (tp_with, tp_without) = (miou(Predictor::Textual, true)?, miou(Predictor::Textual, false)?);
    let (vp_with, vp_without) = (miou(Predictor::Visual, true)?, miou(Predictor::Visual, false)?);
    let detail = format!("TP {tp_with:.3} vs {tp_without:.3}, VP {vp_with:.3} vs {vp_without:.3}");
    check(tp_with >= tp_without, format!("textual: {detail}"))?;
    check(vp_with >= vp_without - 1.0, format!("visual: {detail}"))?;
    Ok(detail)
}

fn trace_shape(ab: &Ablation) -> Outcome {
    let traces = ab
        .reports
        .iter()
        .map(|(_, with, _)| alpha_beta_trace(with))
        .collect::<mutual_span::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    for t in &traces {
        for p in t {
            check((0.0..=1.0).contains(&p.mean_alpha) && (0.0..=1.0).contains(&p.mean_beta), format!("epoch {} out of range", p.epoch))?;
        }
    }
    let mean = mean_trace(&traces);
    check(mean.len() >= 6, format!("only {} epochs", mean.len()))?;
    let avg = |pts: &[mutual_span::engine::TracePoint], f: fn(&mutual_span::engine::TracePoint) -> f64| {
        pts.iter().map(f).sum::<f64>() / pts.len() as f64
    };
    let (head, tail) = (&mean[..3], &mean[mean.len() - 3..]);
    let (a0, a1) = (avg(head, |p| p.mean_alpha), avg(tail, |p| p.mean_alpha));
    let (b0, b1) = (avg(head, |p| p.mean_beta), avg(tail, |p| p.mean_beta));
    let beta_above = avg(&mean, |p| p.mean_beta) > avg(&mean, |p| p.mean_alpha);
    let detail = format!(
        "alpha {a0:.3} -> {a1:.3}, beta {b0:.3} -> {b1:.3}; beta above alpha: {} (not gating)",
        if beta_above { "yes" } else { "no" }
    );
    check(a1 > a0 && b1 > b0, detail.clone())?;
    Ok(detail)
}

fn report(id: &str, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let out = f();
    let took = t.elapsed();
    report_outcome(id, name, budget, took, out)
}

fn report_outcome(id: &str, name: &str, budget: Duration, took: Duration, out: Outcome) -> bool {
    let out = out.and_then(|d| {
        if took <= budget {
            Ok(d)
        } else {
            Err(format!("{d}; took {took:.1?}, budget {budget:?}"))
        }
    });
    match out {
        Ok(d) => {
            println!("{id} PASS  {name}: {d} [{took:.2?}]");
            true
        }
        Err(d) => {
            println!("{id} FAIL  {name}: {d} [{took:.2?}]");
            false
        }
    }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report("C1", "IoU and metrics", secs(5), iou_suite);
    ok &= report("C2", "look-up table round trip", secs(5), lookup_round_trip);
    ok &= report("C3", "gradient check", secs(120), gradient_check);
    ok &= report("C4", "one-way transfer", secs(60), one_way);
    ok &= report("C5", "decode oracle", secs(30), decode_oracle);
    ok &= report("C6", "single-sample overfit", secs(120), overfit);
    match ablation_run() {
        Ok((ab, took)) => {
            ok &= report_outcome("C7", "ablation trend", secs(30 * 60), took, ablation_trend(&ab));
            ok &= report_outcome("C8", "alpha/beta trace", secs(30 * 60), took, trace_shape(&ab));
            let mut csv = Vec::new();
            if ab.write_csv(&mut csv).is_ok() {
                print!("{}", String::from_utf8_lossy(&csv));
            }
        }
        Err(e) => {
            println!("C7 FAIL  ablation trend: {e}");
            println!("C8 FAIL  alpha/beta trace: {e}");
            ok = false;
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
