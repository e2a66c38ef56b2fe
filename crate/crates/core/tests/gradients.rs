mod common;

use common::{finite_difference_errors, toy_params, toy_sample};
use mutual_span::network::{ParamGroup, ParamKey};
use mutual_span::objective::{loss_and_grads, LossTerms, Transfer};

fn frozen_transfer() -> Transfer {
    let p = toy_params();
    let s = toy_sample(3, 1);
    let state = loss_and_grads(&p, &s, &Transfer::Dynamic, LossTerms::NONE, None)
        .unwrap()
        .transfer
        .expect("toy sample has subtitles");
    Transfer::Frozen(state.with_weights(0.6, 0.8))
}

#[test]
fn analytic_gradients_match_central_differences() {
    let errors = finite_difference_errors(&toy_params(), &toy_sample(3, 1), &frozen_transfer(), 1e-5);
    for group in [
        ParamGroup::Encoders,
        ParamGroup::Fusion,
        ParamGroup::VisualPredictor,
        ParamGroup::TextualPredictor,
    ] {
        assert!(errors.iter().any(|(k, _)| k.group() == group));
    }
    for (key, err) in errors {
        assert!(err <= 1e-4, "{}: relative error {err:e}", key.name());
    }
}

const HEAD_BIASES: [ParamKey; 4] = [
    ParamKey::VisualStartBias,
    ParamKey::VisualEndBias,
    ParamKey::TextualStartBias,
    ParamKey::TextualEndBias,
];

#[test]
fn every_weight_receives_gradient() {
    let out = loss_and_grads(&toy_params(), &toy_sample(3, 1), &frozen_transfer(), LossTerms::ALL, None).unwrap();
    for &key in ParamKey::ALL.iter().filter(|k| !HEAD_BIASES.contains(k)) {
        assert!(out.grads.get(key).iter().any(|&g| g != 0.0), "{} got no gradient", key.name());
    }
}

#[test]
fn head_biases_have_zero_gradient() {
    // A bias shared by every position shifts all logits equally, which the
    // softmax ignores.
    let out = loss_and_grads(&toy_params(), &toy_sample(3, 1), &frozen_transfer(), LossTerms::ALL, None).unwrap();
    for key in HEAD_BIASES {
        assert!(out.grads.get(key)[[0, 0]].abs() < 1e-12, "{}", key.name());
    }
}

fn only(f: impl FnOnce(&mut LossTerms)) -> LossTerms {
    let mut t = LossTerms::NONE;
    f(&mut t);
    t
}

#[test]
fn mutual_terms_are_one_way() {
    let p = toy_params();
    let s = toy_sample(3, 1);
    let tr = frozen_transfer();
    let visual = loss_and_grads(&p, &s, &tr, only(|t| t.visual_mutual = true), None).unwrap();
    assert!(visual.grads.is_zero_in(ParamGroup::TextualPredictor));
    assert!(!visual.grads.is_zero_in(ParamGroup::VisualPredictor));

    let textual = loss_and_grads(&p, &s, &tr, only(|t| t.textual_mutual = true), None).unwrap();
    assert!(textual.grads.is_zero_in(ParamGroup::VisualPredictor));
    assert!(!textual.grads.is_zero_in(ParamGroup::TextualPredictor));
}

#[test]
fn dynamic_pseudo_labels_carry_no_gradient() {
    // Same labels and weights, once recomputed from the logits and once
    // supplied as constants: any path through the label producer would make
    // these differ.
    let p = toy_params();
    let s = toy_sample(3, 2);
    let dynamic = loss_and_grads(&p, &s, &Transfer::Dynamic, LossTerms::ALL, None).unwrap();
    let state = dynamic.transfer.clone().unwrap();
    let frozen = loss_and_grads(&p, &s, &Transfer::Frozen(state), LossTerms::ALL, None).unwrap();
    assert_eq!(dynamic.grads, frozen.grads);
    assert_eq!(dynamic.bundle, frozen.bundle);
}

#[test]
fn zero_weights_equal_no_transfer() {
    let p = toy_params();
    for seed in 0..5 {
        let s = toy_sample(3, seed);
        let off = loss_and_grads(&p, &s, &Transfer::Disabled, LossTerms::ALL, None).unwrap();
        let zero = loss_and_grads(&p, &s, &Transfer::FixedWeights { alpha: 0.0, beta: 0.0 }, LossTerms::ALL, None).unwrap();
        assert_eq!(off.grads, zero.grads);
        assert_eq!(off.bundle.total, zero.bundle.total);
    }
}

#[test]
fn subtitle_free_sample_trains_only_the_visual_side() {
    let p = toy_params();
    let mut s = toy_sample(3, 3);
    s.subtitles.clear();
    let out = loss_and_grads(&p, &s, &Transfer::Dynamic, LossTerms::ALL, None).unwrap();
    assert!(out.transfer.is_none());
    assert_eq!(out.bundle.loss_textual, 0.0);
    assert!(out.grads.is_zero_in(ParamGroup::TextualPredictor));
    assert!(!out.grads.is_zero_in(ParamGroup::VisualPredictor));
}
