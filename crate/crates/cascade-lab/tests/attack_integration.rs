//! End-to-end attack behavior on an attackable two-stage cascade: accuracy
//! degradation, pass-rate steering, and damage preservation across the
//! decision-targeted phase.

use cascade_lab::attack::{
    joint_attack, single_target_attack, AttackConfig, AttackMode, Backend, LossKind, Neighborhood,
};
use cascade_lab::cascade::{run_cascade, CascadeSpec};
use cascade_lab::token::TokenSeq;
use cascade_lab::zoo::{generate_class_corpus, ClassVocabLayout, LinearDecider, SyntheticCorpus};

fn fixture() -> (ClassVocabLayout, CascadeSpec, SyntheticCorpus) {
    let layout = ClassVocabLayout {
        class_count: 2,
        block_size: 8,
        attack_tokens: 8,
    };
    // Stage 1 reads the whole input, so suffix tokens with negative class
    // votes can flip its prediction; stage 2 ignores attack tokens.
    let f1 = layout.indicator_model(-2.0, 0.0, 1.0, 1.0);
    let f2 = layout.indicator_model(0.0, 0.0, 5.0, 10.0);
    // Alternating-sign decider weights let the search steer escalation in
    // both directions.
    let mut weights = vec![0.0; layout.vocab_size()];
    for k in 0..layout.attack_tokens {
        weights[layout.attack_token(k) as usize] = if k % 2 == 0 { 3.0 } else { -3.0 };
    }
    let g1 = LinearDecider::new(weights, 1.0, 0.5, 0.0, 0.1, 0.1);
    let spec = CascadeSpec::new(
        vec![Box::new(f1), Box::new(f2)],
        vec![Box::new(g1)],
        layout.vocab_size(),
        layout.class_count,
    )
    .unwrap();
    // Short samples keep the clean margin small enough for the phase-1
    // budget to flip predictions within a single round.
    let corpus = generate_class_corpus(&layout, 24, 2, 0.0, 17).unwrap();
    (layout, spec, corpus)
}

fn joint_cfg(layout: &ClassVocabLayout, p: f64) -> AttackConfig {
    AttackConfig {
        target_stages: vec![1],
        iterations: 4,
        pass_rate: p,
        seed: 99,
        backend: Backend::Greedy,
        mode: AttackMode::Joint,
        loss: LossKind::Margin,
        neighborhood: Neighborhood {
            suffix_slots_per_phase: 3,
            rounds: 2,
            candidate_pool_size: 24,
            substitutions_per_iteration: 2,
            attack_vocab: layout.attack_vocab(),
        },
    }
}

fn cascade_accuracy(spec: &CascadeSpec, corpus: &SyntheticCorpus, inputs: &[TokenSeq]) -> f64 {
    let hits = corpus
        .samples
        .iter()
        .zip(inputs)
        .filter(|(s, x)| run_cascade(spec, x).unwrap().final_output.matches(&s.label))
        .count();
    hits as f64 / corpus.len() as f64
}

fn escalation_rate(spec: &CascadeSpec, inputs: &[TokenSeq]) -> f64 {
    let escalated = inputs
        .iter()
        .filter(|x| run_cascade(spec, x).unwrap().stopping_index > 1)
        .count();
    escalated as f64 / inputs.len() as f64
}

#[test]
fn joint_attack_degrades_stage_one_accuracy() {
    let (layout, spec, corpus) = fixture();
    let cfg = joint_cfg(&layout, 1.0);
    let mut clean_wrong = 0usize;
    let mut adv_wrong = 0usize;
    for s in &corpus.samples {
        let (xp, _) = joint_attack(&s.x, &s.label, &spec, &cfg, s.id).unwrap();
        if !spec.stage(1).predict(&s.x).prediction.matches(&s.label) {
            clean_wrong += 1;
        }
        if !spec.stage(1).predict(&xp).prediction.matches(&s.label) {
            adv_wrong += 1;
        }
    }
    assert_eq!(clean_wrong, 0, "fixture has no hard samples");
    assert!(
        adv_wrong > corpus.len() / 2,
        "attack should flip most stage-1 predictions, flipped {adv_wrong}/{}",
        corpus.len()
    );
}

#[test]
fn pass_rate_steers_escalation() {
    let (layout, spec, corpus) = fixture();
    let mut by_p = Vec::new();
    for p in [0.0, 1.0] {
        let cfg = joint_cfg(&layout, p);
        let adv: Vec<TokenSeq> = corpus
            .samples
            .iter()
            .map(|s| joint_attack(&s.x, &s.label, &spec, &cfg, s.id).unwrap().0)
            .collect();
        by_p.push((escalation_rate(&spec, &adv), cascade_accuracy(&spec, &corpus, &adv)));
    }
    let (rho_p0, acc_p0) = by_p[0];
    let (rho_p1, acc_p1) = by_p[1];
    assert!(
        rho_p1 >= rho_p0,
        "p=1 must escalate at least as much as p=0 ({rho_p1} vs {rho_p0})"
    );
    // With everything stopped early the cascade keeps the damaged stage-1
    // answer; full escalation hands wrong samples to the accurate stage 2.
    assert!(
        acc_p1 >= acc_p0,
        "escalation routes damaged samples to the strong stage ({acc_p1} vs {acc_p0})"
    );
}

#[test]
fn damage_is_preserved_through_the_decision_phase() {
    let (layout, spec, corpus) = fixture();
    let cfg = joint_cfg(&layout, 1.0);
    let slots = cfg.neighborhood.suffix_slots_per_phase;
    for s in &corpus.samples {
        let (xp, report) = joint_attack(&s.x, &s.label, &spec, &cfg, s.id).unwrap();
        // Reconstruct the final snapshot context x ∥ ... ∥ δ^(f)_R from the
        // segment geometry.
        let suffix_len = xp.len() - s.x.len();
        assert_eq!(suffix_len, 2 * cfg.neighborhood.rounds * slots);
        let snapshot_ctx = TokenSeq::new(xp.tokens[..xp.len() - slots].to_vec());
        let snapshot_pred = spec.stage(1).predict(&snapshot_ctx).prediction;
        let final_pred = spec.stage(1).predict(&xp).prediction;
        let last_g = report
            .per_round
            .iter()
            .rev()
            .find(|r| r.phase == "g")
            .expect("joint report has g phases");
        match last_g.tiers.last().map(|t| t.as_str()) {
            Some("i") => assert_eq!(final_pred, snapshot_pred, "tier i must preserve predictions"),
            Some("ii") => {
                if !snapshot_pred.matches(&s.label) {
                    assert!(
                        !final_pred.matches(&s.label),
                        "tier ii must keep wrong predictions wrong"
                    );
                }
            }
            _ => {}
        }
    }
}

#[test]
fn single_cost_attack_inflates_escalation() {
    let (layout, spec, corpus) = fixture();
    let cfg = AttackConfig {
        target_stages: vec![1],
        iterations: 4,
        pass_rate: 1.0,
        seed: 7,
        backend: Backend::Greedy,
        mode: AttackMode::SingleCost,
        loss: LossKind::Margin,
        neighborhood: Neighborhood {
            suffix_slots_per_phase: 3,
            rounds: 1,
            candidate_pool_size: 24,
            substitutions_per_iteration: 2,
            attack_vocab: layout.attack_vocab(),
        },
    };
    let clean_inputs: Vec<TokenSeq> = corpus.samples.iter().map(|s| s.x.clone()).collect();
    let adv: Vec<TokenSeq> = corpus
        .samples
        .iter()
        .map(|s| single_target_attack(&s.x, &s.label, &spec, &cfg, s.id).unwrap().0)
        .collect();
    let before = escalation_rate(&spec, &clean_inputs);
    let after = escalation_rate(&spec, &adv);
    assert!(
        after > before,
        "cost attack should force escalations ({before} -> {after})"
    );
}

#[test]
fn genetic_backend_also_degrades() {
    let (layout, spec, corpus) = fixture();
    let mut cfg = joint_cfg(&layout, 1.0);
    cfg.backend = Backend::Genetic;
    let mut adv_wrong = 0usize;
    for s in corpus.samples.iter().take(8) {
        let (xp, _) = joint_attack(&s.x, &s.label, &spec, &cfg, s.id).unwrap();
        if !spec.stage(1).predict(&xp).prediction.matches(&s.label) {
            adv_wrong += 1;
        }
    }
    assert!(adv_wrong >= 4, "genetic backend flipped only {adv_wrong}/8");
}

#[test]
fn attack_is_deterministic_across_calls() {
    let (layout, spec, corpus) = fixture();
    let cfg = joint_cfg(&layout, 0.5);
    let s = &corpus.samples[3];
    let (a, ra) = joint_attack(&s.x, &s.label, &spec, &cfg, s.id).unwrap();
    let (b, rb) = joint_attack(&s.x, &s.label, &spec, &cfg, s.id).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&ra).unwrap(),
        serde_json::to_string(&rb).unwrap()
    );
}
