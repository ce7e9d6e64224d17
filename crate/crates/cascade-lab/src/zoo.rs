//! Synthetic stage models, decision modules, and corpus generators.
//!
//! Everything here is deterministic and cheap: table models give exact
//! control over per-subset accuracy (used to plant fixtures where the
//! routing decomposition can be verified by enumeration), linear bag models
//! give an additive score landscape the suffix attack can actually traverse.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::cascade::{CascadeSpec, Decision, DecisionModule, StageModel, StageOutput};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::token::{Label, TokenSeq, Vocabulary};

/// How a table-backed component keys its lookups.
///
/// `Prefix(n)` hashes only the first `n` tokens, which makes the component
/// insensitive to appended suffixes. Planted fixtures identify samples by
/// their leading token, so `Prefix(1)` pins behavior per sample regardless
/// of any adversarial suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKey {
    FullSeq,
    Prefix(usize),
}

impl TableKey {
    fn hash(&self, x: &TokenSeq) -> u64 {
        match self {
            TableKey::FullSeq => x.stable_hash(),
            TableKey::Prefix(n) => x.stable_hash_prefix(*n),
        }
    }
}

/// Lookup-table stage model with exactly controllable outputs.
pub struct TableModel {
    table: HashMap<u64, (Label, f64)>,
    default: Label,
    default_margin: f64,
    class_count: usize,
    key: TableKey,
    cost_per_token: f64,
    cost_base: f64,
    param_scale: f64,
    output_tokens: u32,
}

impl TableModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        table: HashMap<u64, (Label, f64)>,
        default: Label,
        default_margin: f64,
        class_count: usize,
        key: TableKey,
        cost_per_token: f64,
        cost_base: f64,
        param_scale: f64,
        output_tokens: u32,
    ) -> Self {
        TableModel {
            table,
            default,
            default_margin,
            class_count,
            key,
            cost_per_token,
            cost_base,
            param_scale,
            output_tokens,
        }
    }

    fn output_for(&self, label: &Label, margin: f64) -> StageOutput {
        match label {
            Label::Class(c) => {
                let mut scores = vec![0.0; self.class_count];
                scores[*c as usize] = margin;
                // from_scores keeps the argmax invariant; planted margins are
                // positive so the planted class always wins.
                StageOutput::from_scores(scores, self.output_tokens)
            }
            Label::Answer(a) => StageOutput {
                prediction: Label::Answer(a.clone()),
                scores: vec![margin],
                output_token_count: self.output_tokens,
            },
        }
    }
}

impl StageModel for TableModel {
    fn predict(&self, x: &TokenSeq) -> StageOutput {
        match self.table.get(&self.key.hash(x)) {
            Some((label, margin)) => self.output_for(label, *margin),
            None => self.output_for(&self.default.clone(), self.default_margin),
        }
    }

    fn cost_of(&self, x: &TokenSeq) -> f64 {
        self.cost_base + self.cost_per_token * x.len() as f64
    }

    fn param_scale(&self) -> f64 {
        self.param_scale
    }
}

/// Bag-of-tokens linear scorer: `scores(x) = bias + Σ_{t ∈ x} weights[t]`.
///
/// Appending a token changes the scores by exactly that token's weight row,
/// which makes exhaustive attack oracles tractable.
pub struct LinearBagModel {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    cost_per_token: f64,
    cost_base: f64,
    param_scale: f64,
    output_tokens: u32,
}

impl LinearBagModel {
    pub fn new(
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        cost_per_token: f64,
        cost_base: f64,
        param_scale: f64,
        output_tokens: u32,
    ) -> Result<Self> {
        let class_count = bias.len();
        if class_count == 0 {
            return Err(Error::config("linear bag model needs at least one class"));
        }
        for (t, row) in weights.iter().enumerate() {
            if row.len() != class_count {
                return Err(Error::config(format!(
                    "weight row {t} has {} entries, expected {class_count}",
                    row.len()
                )));
            }
        }
        Ok(LinearBagModel {
            weights,
            bias,
            cost_per_token,
            cost_base,
            param_scale,
            output_tokens,
        })
    }

    pub fn scores(&self, x: &TokenSeq) -> Vec<f64> {
        let mut scores = self.bias.clone();
        for &t in &x.tokens {
            if let Some(row) = self.weights.get(t as usize) {
                for (s, w) in scores.iter_mut().zip(row) {
                    *s += w;
                }
            }
        }
        scores
    }
}

impl StageModel for LinearBagModel {
    fn predict(&self, x: &TokenSeq) -> StageOutput {
        StageOutput::from_scores(self.scores(x), self.output_tokens)
    }

    fn cost_of(&self, x: &TokenSeq) -> f64 {
        self.cost_base + self.cost_per_token * x.len() as f64
    }

    fn param_scale(&self) -> f64 {
        self.param_scale
    }
}

/// Confidence-threshold decider: escalate iff the softmax margin of the
/// stage output falls below the threshold.
pub struct ThresholdDecider {
    pub threshold: f64,
    cost_per_token: f64,
    cost_base: f64,
    param_scale: f64,
}

impl ThresholdDecider {
    pub fn new(threshold: f64, cost_per_token: f64, cost_base: f64, param_scale: f64) -> Self {
        ThresholdDecider {
            threshold,
            cost_per_token,
            cost_base,
            param_scale,
        }
    }
}

impl DecisionModule for ThresholdDecider {
    fn decide(&self, _x: &TokenSeq, output: &StageOutput) -> Decision {
        let confidence = output.softmax_margin();
        Decision {
            escalate: confidence < self.threshold,
            confidence,
        }
    }

    fn cost_of(&self, x: &TokenSeq, _output: &StageOutput) -> f64 {
        self.cost_base + self.cost_per_token * x.len() as f64
    }

    fn param_scale(&self) -> f64 {
        self.param_scale
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Lightweight attackable decider that reads both the input tokens and the
/// stage output margin:
/// `confidence = sigmoid(bias + Σ_{t ∈ x} weights[t] + margin)`,
/// escalate iff `confidence < threshold`.
pub struct LinearDecider {
    weights: Vec<f64>,
    bias: f64,
    pub threshold: f64,
    cost_per_token: f64,
    cost_base: f64,
    param_scale: f64,
}

impl LinearDecider {
    pub fn new(
        weights: Vec<f64>,
        bias: f64,
        threshold: f64,
        cost_per_token: f64,
        cost_base: f64,
        param_scale: f64,
    ) -> Self {
        LinearDecider {
            weights,
            bias,
            threshold,
            cost_per_token,
            cost_base,
            param_scale,
        }
    }
}

impl DecisionModule for LinearDecider {
    fn decide(&self, x: &TokenSeq, output: &StageOutput) -> Decision {
        let mut z = self.bias + output.margin();
        for &t in &x.tokens {
            if let Some(w) = self.weights.get(t as usize) {
                z += w;
            }
        }
        let confidence = sigmoid(z);
        Decision {
            escalate: confidence < self.threshold,
            confidence,
        }
    }

    fn cost_of(&self, x: &TokenSeq, _output: &StageOutput) -> f64 {
        self.cost_base + self.cost_per_token * x.len() as f64
    }

    fn param_scale(&self) -> f64 {
        self.param_scale
    }
}

/// Table-backed decider with per-sample planted routing bits. Insensitive to
/// suffixes when keyed by prefix.
pub struct TableDecider {
    table: HashMap<u64, bool>,
    default_escalate: bool,
    key: TableKey,
    cost: f64,
    param_scale: f64,
}

impl TableDecider {
    pub fn new(
        table: HashMap<u64, bool>,
        default_escalate: bool,
        key: TableKey,
        cost: f64,
        param_scale: f64,
    ) -> Self {
        TableDecider {
            table,
            default_escalate,
            key,
            cost,
            param_scale,
        }
    }
}

impl DecisionModule for TableDecider {
    fn decide(&self, x: &TokenSeq, _output: &StageOutput) -> Decision {
        let escalate = *self
            .table
            .get(&self.key.hash(x))
            .unwrap_or(&self.default_escalate);
        Decision {
            escalate,
            confidence: if escalate { 0.0 } else { 1.0 },
        }
    }

    fn cost_of(&self, _x: &TokenSeq, _output: &StageOutput) -> f64 {
        self.cost
    }

    fn param_scale(&self) -> f64 {
        self.param_scale
    }
}

/// One labeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub x: TokenSeq,
    pub label: Label,
}

/// A seeded synthetic corpus. Regeneration with the same seed is
/// bit-identical.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub samples: Vec<Sample>,
    pub seed: u64,
}

impl SyntheticCorpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Vocabulary layout for class-block corpora: after the two reserved
/// specials come `class_count` blocks of `block_size` content tokens, then
/// `attack_tokens` ids reserved for adversarial suffixes.
#[derive(Debug, Clone, Copy)]
pub struct ClassVocabLayout {
    pub class_count: usize,
    pub block_size: usize,
    pub attack_tokens: usize,
}

impl ClassVocabLayout {
    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::synthetic(self.class_count * self.block_size + self.attack_tokens)
    }

    pub fn content_token(&self, class: usize, slot: usize) -> u32 {
        (2 + class * self.block_size + (slot % self.block_size)) as u32
    }

    pub fn attack_token(&self, k: usize) -> u32 {
        (2 + self.class_count * self.block_size + k) as u32
    }

    pub fn attack_vocab(&self) -> Vec<u32> {
        (0..self.attack_tokens).map(|k| self.attack_token(k)).collect()
    }

    pub fn vocab_size(&self) -> usize {
        2 + self.class_count * self.block_size + self.attack_tokens
    }

    /// Unit-weight class-indicator model over this layout: each content token
    /// votes `+1` for its own class. Attack token `k` votes `attack_weight`
    /// for class `k % class_count`.
    pub fn indicator_model(
        &self,
        attack_weight: f64,
        cost_per_token: f64,
        cost_base: f64,
        param_scale: f64,
    ) -> LinearBagModel {
        let mut weights = vec![vec![0.0; self.class_count]; self.vocab_size()];
        for c in 0..self.class_count {
            for j in 0..self.block_size {
                weights[self.content_token(c, j) as usize][c] = 1.0;
            }
        }
        for k in 0..self.attack_tokens {
            weights[self.attack_token(k) as usize][k % self.class_count] = attack_weight;
        }
        LinearBagModel::new(
            weights,
            vec![0.0; self.class_count],
            cost_per_token,
            cost_base,
            param_scale,
            1,
        )
        .expect("layout weights are well-formed")
    }
}

/// Class-block corpus: each sample holds `sample_len` tokens drawn from its
/// label's block. A `hard_fraction` of samples instead draw their tokens
/// from the next class's block while keeping the original label, so a
/// unit-weight indicator model errs on exactly those samples.
pub fn generate_class_corpus(
    layout: &ClassVocabLayout,
    n: usize,
    sample_len: usize,
    hard_fraction: f64,
    seed: u64,
) -> Result<SyntheticCorpus> {
    if sample_len == 0 {
        return Err(Error::config("sample_len must be positive"));
    }
    let hard_count = (hard_fraction * n as f64).round() as usize;
    let mut hard = vec![false; n];
    for h in hard.iter_mut().take(hard_count) {
        *h = true;
    }
    let mut rng = keyed_rng(seed, &[0x11]);
    hard.shuffle(&mut rng);

    let mut samples = Vec::with_capacity(n);
    for (k, &is_hard) in hard.iter().enumerate() {
        let label_class = k % layout.class_count;
        let token_class = if is_hard {
            (label_class + 1) % layout.class_count
        } else {
            label_class
        };
        let mut rng = keyed_rng(seed, &[0x12, k as u64]);
        let tokens: Vec<u32> = (0..sample_len)
            .map(|_| layout.content_token(token_class, rng.gen_range(0..layout.block_size)))
            .collect();
        samples.push(Sample {
            id: k as u64,
            x: TokenSeq::new(tokens),
            label: Label::Class(label_class as u32),
        });
    }
    Ok(SyntheticCorpus { samples, seed })
}

/// Uniform random suffix over an attack vocabulary, reproducible under seed.
pub fn random_suffix(len: usize, attack_vocab: &[u32], seed: u64, tags: &[u64]) -> TokenSeq {
    if len == 0 {
        return TokenSeq::empty();
    }
    assert!(!attack_vocab.is_empty(), "attack vocabulary must be non-empty");
    let mut key = vec![0x5u64];
    key.extend_from_slice(tags);
    let mut rng = keyed_rng(seed, &key);
    let tokens = (0..len)
        .map(|_| attack_vocab[rng.gen_range(0..attack_vocab.len())])
        .collect();
    TokenSeq::new(tokens)
}

/// Difficulty profile for a planted cascade: per-subset routing mass and the
/// full matrix of per-model conditional accuracies on each routed subset.
#[derive(Debug, Clone)]
pub struct PlantedProfile {
    pub corpus_size: usize,
    pub class_count: usize,
    /// `routing[i]` = fraction of samples stopping at stage `i+1`; sums to 1.
    pub routing: Vec<f64>,
    /// `accuracy[i][m]` = accuracy of stage model `m+1` on subset `S_{i+1}`.
    pub accuracy: Vec<Vec<f64>>,
    /// Per-stage base execution cost; defaults to 1, 5, 25, ... when empty.
    pub stage_costs: Vec<f64>,
    /// Per-stage parameter scale; defaults to 1, 10, 100, ... when empty.
    pub param_scales: Vec<f64>,
    pub decider_cost: f64,
}

impl PlantedProfile {
    pub fn uniform_costs(corpus_size: usize, class_count: usize, routing: Vec<f64>, accuracy: Vec<Vec<f64>>) -> Self {
        PlantedProfile {
            corpus_size,
            class_count,
            routing,
            accuracy,
            stage_costs: Vec::new(),
            param_scales: Vec::new(),
            decider_cost: 0.1,
        }
    }

    pub fn stage_count(&self) -> usize {
        self.routing.len()
    }
}

fn exact_count(fraction: f64, total: usize, what: &str) -> Result<usize> {
    let raw = fraction * total as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() > 1e-9 {
        return Err(Error::construction(format!(
            "{what} = {fraction} is not representable over {total} samples ({raw} is not an integer)"
        )));
    }
    if !(0.0..=total as f64).contains(&rounded) {
        return Err(Error::construction(format!("{what} = {fraction} out of range")));
    }
    Ok(rounded as usize)
}

/// Construct a cascade and corpus where each stage model achieves exactly
/// the profile's per-subset accuracy and the deciders route exactly the
/// planted fraction of samples to each stopping stage.
///
/// Samples are identified by a unique leading token; all planted components
/// key on that prefix, so predictions and routing are insensitive to
/// appended suffixes.
pub fn make_planted_cascade(
    profile: &PlantedProfile,
    seed: u64,
) -> Result<(CascadeSpec, SyntheticCorpus, ClassVocabLayout)> {
    let l = profile.stage_count();
    let n = profile.corpus_size;
    if l == 0 {
        return Err(Error::construction("profile needs at least one stage"));
    }
    if profile.class_count < 2 {
        return Err(Error::construction("planted fixtures need at least two classes"));
    }
    let routing_sum: f64 = profile.routing.iter().sum();
    if (routing_sum - 1.0).abs() > 1e-9 {
        return Err(Error::construction(format!(
            "routing fractions sum to {routing_sum}, expected 1"
        )));
    }
    if profile.accuracy.len() != l {
        return Err(Error::construction("accuracy matrix must have one row per subset"));
    }
    for (i, row) in profile.accuracy.iter().enumerate() {
        if row.len() != l {
            return Err(Error::construction(format!(
                "accuracy row {i} must have one entry per stage model"
            )));
        }
    }

    // Subset sizes must be exact integers.
    let mut subset_sizes = Vec::with_capacity(l);
    for (i, &frac) in profile.routing.iter().enumerate() {
        subset_sizes.push(exact_count(frac, n, &format!("Pr[S_{}]", i + 1))?);
    }
    if subset_sizes.iter().sum::<usize>() != n {
        return Err(Error::construction(
            "routing fractions do not partition the corpus exactly",
        ));
    }

    // Vocabulary: one identifying token per sample plus a small attack block.
    let layout = ClassVocabLayout {
        class_count: 1,
        block_size: n,
        attack_tokens: 16,
    };
    let vocab_size = layout.vocab_size();

    // Assign samples to subsets; seeded shuffle keeps counts exact.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, &[0x21]));
    let mut subset_of = vec![0usize; n];
    let mut cursor = 0usize;
    for (i, &size) in subset_sizes.iter().enumerate() {
        for &s in &order[cursor..cursor + size] {
            subset_of[s] = i;
        }
        cursor += size;
    }

    // Corpus: sample k = the single token identifying it.
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        samples.push(Sample {
            id: k as u64,
            x: TokenSeq::new(vec![layout.content_token(0, k)]),
            label: Label::Class((k % profile.class_count) as u32),
        });
    }

    // Per-subset correctness planting for every stage model.
    let mut stage_tables: Vec<HashMap<u64, (Label, f64)>> =
        vec![HashMap::new(); l];
    for (i, &size) in subset_sizes.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&k| subset_of[k] == i).collect();
        debug_assert_eq!(members.len(), size);
        for m in 0..l {
            let correct = exact_count(
                profile.accuracy[i][m],
                size,
                &format!("accuracy of stage {} on S_{}", m + 1, i + 1),
            )?;
            for (rank, &k) in members.iter().enumerate() {
                let truth = match &samples[k].label {
                    Label::Class(c) => *c,
                    _ => unreachable!(),
                };
                let predicted = if rank < correct {
                    truth
                } else {
                    (truth + 1) % profile.class_count as u32
                };
                stage_tables[m].insert(
                    samples[k].x.stable_hash_prefix(1),
                    (Label::Class(predicted), 2.0),
                );
            }
        }
    }

    // Routing tables: sample in S_i escalates past boundaries j < i.
    let mut decider_tables: Vec<HashMap<u64, bool>> = vec![HashMap::new(); l.saturating_sub(1)];
    for k in 0..n {
        let stop = subset_of[k];
        for (j, table) in decider_tables.iter_mut().enumerate() {
            table.insert(samples[k].x.stable_hash_prefix(1), j < stop);
        }
    }

    let stage_cost = |m: usize| -> f64 {
        profile
            .stage_costs
            .get(m)
            .copied()
            .unwrap_or_else(|| 5f64.powi(m as i32))
    };
    let scale = |m: usize| -> f64 {
        profile
            .param_scales
            .get(m)
            .copied()
            .unwrap_or_else(|| 10f64.powi(m as i32))
    };

    let stages: Vec<Box<dyn StageModel>> = stage_tables
        .into_iter()
        .enumerate()
        .map(|(m, table)| {
            Box::new(TableModel::new(
                table,
                Label::Class(0),
                1.0,
                profile.class_count,
                TableKey::Prefix(1),
                0.0,
                stage_cost(m),
                scale(m),
                1,
            )) as Box<dyn StageModel>
        })
        .collect();
    let deciders: Vec<Box<dyn DecisionModule>> = decider_tables
        .into_iter()
        .map(|table| {
            Box::new(TableDecider::new(
                table,
                false,
                TableKey::Prefix(1),
                profile.decider_cost,
                0.1,
            )) as Box<dyn DecisionModule>
        })
        .collect();

    let spec = CascadeSpec::new(stages, deciders, vocab_size, profile.class_count)?;
    Ok((spec, SyntheticCorpus { samples, seed }, layout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::run_cascade;

    #[test]
    fn linear_bag_additivity_exact() {
        let layout = ClassVocabLayout {
            class_count: 3,
            block_size: 4,
            attack_tokens: 4,
        };
        let model = layout.indicator_model(-2.0, 0.0, 1.0, 1.0);
        let x = TokenSeq::new(vec![layout.content_token(0, 1), layout.content_token(1, 2)]);
        let delta = TokenSeq::new(vec![layout.attack_token(1), layout.content_token(2, 0)]);
        let lhs = model.scores(&x.concat(&delta));
        let mut rhs = model.scores(&x);
        for &t in &delta.tokens {
            let single = model.scores(&TokenSeq::new(vec![t]));
            for (r, (s, b)) in rhs.iter_mut().zip(single.iter().zip([0.0, 0.0, 0.0])) {
                *r += s - b;
            }
        }
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn threshold_decider_monotone_in_threshold() {
        let out = StageOutput::from_scores(vec![2.0, 0.5, 0.1], 1);
        let x = TokenSeq::new(vec![0]);
        let mut last_escalate = false;
        for step in 0..=20 {
            let threshold = step as f64 / 20.0;
            let d = ThresholdDecider::new(threshold, 0.0, 0.1, 0.1).decide(&x, &out);
            // Raising the threshold never flips escalation from 1 to 0.
            if last_escalate {
                assert!(d.escalate);
            }
            last_escalate = d.escalate;
        }
    }

    #[test]
    fn corpus_reproducible_under_seed() {
        let layout = ClassVocabLayout {
            class_count: 2,
            block_size: 8,
            attack_tokens: 4,
        };
        let a = generate_class_corpus(&layout, 40, 6, 0.25, 99).unwrap();
        let b = generate_class_corpus(&layout, 40, 6, 0.25, 99).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = generate_class_corpus(&layout, 40, 6, 0.25, 100).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn indicator_model_errs_exactly_on_hard_samples() {
        let layout = ClassVocabLayout {
            class_count: 2,
            block_size: 8,
            attack_tokens: 4,
        };
        let corpus = generate_class_corpus(&layout, 40, 6, 0.25, 7).unwrap();
        let model = layout.indicator_model(0.0, 0.0, 1.0, 1.0);
        let wrong = corpus
            .samples
            .iter()
            .filter(|s| !model.predict(&s.x).prediction.matches(&s.label))
            .count();
        assert_eq!(wrong, 10);
    }

    #[test]
    fn planted_accuracy_and_routing_exact() {
        let profile = PlantedProfile::uniform_costs(
            40,
            2,
            vec![0.5, 0.5],
            vec![vec![0.6, 0.9], vec![0.8, 0.8]],
        );
        let (spec, corpus, _) = make_planted_cascade(&profile, 3).unwrap();
        let mut stop_counts = [0usize; 2];
        let mut correct = [[0usize; 2]; 2];
        let mut subset_sizes = [0usize; 2];
        for s in &corpus.samples {
            let trace = run_cascade(&spec, &s.x).unwrap();
            let i = trace.stopping_index - 1;
            stop_counts[i] += 1;
            subset_sizes[i] += 1;
            for m in 1..=2 {
                if spec.stage(m).predict(&s.x).prediction.matches(&s.label) {
                    correct[i][m - 1] += 1;
                }
            }
        }
        assert_eq!(stop_counts, [20, 20]);
        assert_eq!(correct[0], [12, 18]); // 0.6, 0.9 of 20
        assert_eq!(correct[1], [16, 16]); // 0.8, 0.8 of 20
    }

    #[test]
    fn planted_perfect_models_have_zero_error() {
        let profile = PlantedProfile::uniform_costs(
            20,
            2,
            vec![0.5, 0.5],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        );
        let (spec, corpus, _) = make_planted_cascade(&profile, 1).unwrap();
        for s in &corpus.samples {
            let trace = run_cascade(&spec, &s.x).unwrap();
            assert!(trace.final_output.matches(&s.label));
        }
    }

    #[test]
    fn infeasible_accuracy_is_construction_error() {
        let profile = PlantedProfile::uniform_costs(3, 2, vec![1.0], vec![vec![0.5]]);
        let err = make_planted_cascade(&profile, 1)
            .err()
            .expect("half accuracy over three samples must be rejected");
        let msg = err.to_string();
        assert!(msg.contains("0.5"), "error should name the infeasible target: {msg}");
    }

    #[test]
    fn random_suffix_contract() {
        assert!(random_suffix(0, &[5, 6], 1, &[]).is_empty());
        let a = random_suffix(8, &[5, 6, 7], 42, &[1]);
        let b = random_suffix(8, &[5, 6, 7], 42, &[1]);
        assert_eq!(a, b);
        assert!(a.tokens.iter().all(|t| [5, 6, 7].contains(t)));
    }

    #[test]
    fn random_suffix_uniform_within_chi_square() {
        // 10^4 draws over a vocab of 64, per-position chi-square check.
        let vocab: Vec<u32> = (0..64).collect();
        let mut counts = vec![0usize; 64];
        let draws = 10_000;
        for k in 0..draws {
            let s = random_suffix(8, &vocab, 7, &[k]);
            counts[s.tokens[0] as usize] += 1;
        }
        let expected = draws as f64 / 64.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 63 dof; 99.9th percentile is ~103.4.
        assert!(chi2 < 103.4, "chi2 = {chi2}");
    }
}
