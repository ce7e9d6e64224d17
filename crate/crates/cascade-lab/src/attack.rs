//! The attack suite: bounded suffix neighborhoods, single-target objectives,
//! and the joint alternating attack with tiered candidate selection and
//! adaptive pass-rate control, on a gray-box score-query search backbone
//! (greedy coordinate search or a genetic variant).

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::CascadeSpec;
use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::token::{Label, TokenSeq};
use crate::zoo::random_suffix;

/// The discrete suffix neighborhood: segment geometry, round count, and the
/// candidate-generation budget per iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Neighborhood {
    pub suffix_slots_per_phase: usize,
    pub rounds: usize,
    pub candidate_pool_size: usize,
    pub substitutions_per_iteration: usize,
    pub attack_vocab: Vec<u32>,
}

impl Neighborhood {
    pub fn validate(&self) -> Result<()> {
        if self.suffix_slots_per_phase == 0 {
            return Err(Error::config("suffix_slots_per_phase must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be positive"));
        }
        if self.candidate_pool_size == 0 {
            return Err(Error::config("candidate_pool_size must be positive"));
        }
        if self.attack_vocab.is_empty() {
            return Err(Error::config("attack vocabulary is empty"));
        }
        Ok(())
    }

    /// Total appended length: one f-segment and one g-segment per round.
    pub fn total_suffix_len(&self) -> usize {
        2 * self.rounds * self.suffix_slots_per_phase
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    F,
    G,
}

/// The interleaved suffix segments accumulated across rounds.
#[derive(Debug, Clone, Default)]
pub struct SuffixState {
    pub segments: Vec<(Phase, usize, TokenSeq)>,
}

impl SuffixState {
    pub fn push(&mut self, phase: Phase, round: usize, segment: TokenSeq) {
        self.segments.push((phase, round, segment));
    }

    /// `δ^(f)_1 ∥ δ^(g)_1 ∥ ... ∥ δ^(f)_R ∥ δ^(g)_R`, in exactly that order.
    pub fn assembled(&self) -> TokenSeq {
        let mut out = TokenSeq::empty();
        for (_, _, seg) in &self.segments {
            out = out.concat(seg);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Greedy,
    Genetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    SingleAcc,
    SingleCost,
    DmFlip,
    Joint,
}

impl AttackMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackMode::SingleAcc => "single_acc",
            AttackMode::SingleCost => "single_cost",
            AttackMode::DmFlip => "dm_flip",
            AttackMode::Joint => "joint",
        }
    }
}

/// Surrogate loss for the accuracy objective. Margin loss is defined for any
/// scorer in the zoo; cross-entropy over softmax is the config alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Margin,
    CrossEntropy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Targeted stage indices, a subset of `1..l-1`.
    pub target_stages: Vec<usize>,
    /// Inner iterations per phase.
    pub iterations: usize,
    /// Pass-rate `p`; used only in joint mode.
    pub pass_rate: f64,
    pub seed: u64,
    pub backend: Backend,
    pub mode: AttackMode,
    pub loss: LossKind,
    pub neighborhood: Neighborhood,
}

impl AttackConfig {
    pub fn rounds(&self) -> usize {
        self.neighborhood.rounds
    }

    pub fn validate(&self, spec: &CascadeSpec) -> Result<()> {
        self.neighborhood.validate()?;
        if self.target_stages.is_empty() {
            return Err(Error::config("target stage set is empty"));
        }
        let l = spec.stage_count();
        for &i in &self.target_stages {
            if i == 0 || i >= l {
                return Err(Error::config(format!(
                    "target stage {i} out of range 1..{} for an {l}-stage cascade",
                    l - 1
                )));
            }
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.pass_rate) {
            return Err(Error::config(format!(
                "pass rate {} outside [0, 1]",
                self.pass_rate
            )));
        }
        for &t in &self.neighborhood.attack_vocab {
            if t as usize >= spec.vocab_size() {
                return Err(Error::config(format!(
                    "attack token {t} out of range for the cascade vocabulary"
                )));
            }
        }
        Ok(())
    }
}

/// Objective value with a lexicographic tiebreaker. The cost objective's
/// primary key is the integer escalation count; the continuous confidence
/// gap only orders candidates within equal counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjVal {
    pub primary: f64,
    pub tie: f64,
}

impl ObjVal {
    pub fn scalar(v: f64) -> ObjVal {
        ObjVal { primary: v, tie: 0.0 }
    }

    fn key(&self) -> (f64, f64) {
        (self.primary, self.tie)
    }

    pub fn greater_than(&self, other: &ObjVal) -> bool {
        self.key() > other.key()
    }

    pub fn less_than(&self, other: &ObjVal) -> bool {
        self.key() < other.key()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Maximize => "maximize",
            Direction::Minimize => "minimize",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    I,
    II,
    III,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::I => "i",
            Tier::II => "ii",
            Tier::III => "iii",
        }
    }
}

/// Accuracy objective: summed surrogate loss of the targeted stage models
/// against the ground truth.
pub fn acc_loss(
    spec: &CascadeSpec,
    input: &TokenSeq,
    y: &Label,
    targets: &[usize],
    loss: LossKind,
) -> f64 {
    let mut total = 0.0;
    for &i in targets {
        let out = spec.stage(i).predict(input);
        total += match (y, loss) {
            (Label::Class(c), LossKind::Margin) => {
                // Negated margin of the true class over the best rival.
                let truth = *c as usize;
                let s_true = out.scores.get(truth).copied().unwrap_or(0.0);
                let rival = out
                    .scores
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != truth)
                    .map(|(_, &s)| s)
                    .fold(f64::NEG_INFINITY, f64::max);
                if rival.is_finite() { rival - s_true } else { 0.0 }
            }
            (Label::Class(c), LossKind::CrossEntropy) => {
                let truth = *c as usize;
                let max = out.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = out.scores.iter().map(|s| (s - max).exp()).sum();
                let p = (out.scores.get(truth).copied().unwrap_or(f64::NEG_INFINITY) - max).exp() / z;
                -(p.max(1e-300)).ln()
            }
            (Label::Answer(_), _) => {
                // Answer tasks: signed output margin, positive when wrong.
                if out.prediction.matches(y) {
                    -out.margin()
                } else {
                    out.margin()
                }
            }
        };
    }
    total
}

/// Cost objective: number of targeted deciders voting to escalate, with the
/// summed (1 - confidence) gap as tiebreaker.
pub fn cost_escalation(spec: &CascadeSpec, input: &TokenSeq, targets: &[usize]) -> ObjVal {
    let mut bits = 0u32;
    let mut gap = 0.0;
    for &i in targets {
        let out = spec.stage(i).predict(input);
        let d = spec.decider(i).decide(input, &out);
        if d.escalate {
            bits += 1;
        }
        gap += 1.0 - d.confidence;
    }
    ObjVal {
        primary: bits as f64,
        tie: gap,
    }
}

/// DM-flip objective: reward matching the *flipped* decision behavior —
/// escalate where the clean prediction was correct, stop where it was wrong.
pub fn dm_flip_value(
    spec: &CascadeSpec,
    input: &TokenSeq,
    desired_escalate: &[(usize, bool)],
) -> ObjVal {
    let mut hits = 0u32;
    let mut tie = 0.0;
    for &(i, want_escalate) in desired_escalate {
        let out = spec.stage(i).predict(input);
        let d = spec.decider(i).decide(input, &out);
        if d.escalate == want_escalate {
            hits += 1;
        }
        tie += if want_escalate { 1.0 - d.confidence } else { d.confidence };
    }
    ObjVal {
        primary: hits as f64,
        tie,
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut out: u128 = 1;
    for j in 0..k.min(n - k) {
        out = out * (n - j) as u128 / (j + 1) as u128;
    }
    out
}

/// Number of distinct segments within Hamming distance `subs` of a
/// `len`-token incumbent over a `v`-token vocabulary.
fn reachable_count(len: usize, v: usize, subs: usize) -> u128 {
    (0..=subs.min(len))
        .map(|k| binomial(len, k) * ((v - 1) as u128).pow(k as u32))
        .sum()
}

const ENUMERATION_CAP: u128 = 4096;

/// Generate the candidate pool around an incumbent segment: the incumbent
/// itself plus distinct segments differing in at most
/// `substitutions_per_iteration` positions, tokens drawn from the attack
/// vocabulary. When the whole neighborhood fits in the pool it is enumerated
/// exhaustively (this is what makes the micro-scale oracle equivalence
/// exact); otherwise candidates are sampled from the seeded stream.
pub fn propose_candidates(
    incumbent: &TokenSeq,
    nb: &Neighborhood,
    seed: u64,
    tags: &[u64],
) -> Result<Vec<TokenSeq>> {
    if nb.attack_vocab.is_empty() {
        return Err(Error::config("attack vocabulary is empty"));
    }
    let len = incumbent.len();
    let subs = nb.substitutions_per_iteration;
    if subs == 0 {
        return Ok(vec![incumbent.clone()]);
    }
    let v = nb.attack_vocab.len();
    let reachable = reachable_count(len, v, subs);
    if reachable <= nb.candidate_pool_size as u128 && reachable <= ENUMERATION_CAP {
        let mut out = vec![incumbent.clone()];
        enumerate_neighbors(incumbent, nb, subs, 0, &mut incumbent.clone(), 0, &mut out);
        return Ok(out);
    }

    let mut key = vec![0x7u64];
    key.extend_from_slice(tags);
    let mut rng = keyed_rng(seed, &key);
    let mut seen: HashMap<TokenSeq, ()> = HashMap::new();
    let mut out = vec![incumbent.clone()];
    seen.insert(incumbent.clone(), ());
    let mut attempts = 0usize;
    let budget = nb.candidate_pool_size.saturating_mul(64);
    while out.len() < nb.candidate_pool_size && attempts < budget {
        attempts += 1;
        let k = rng.gen_range(1..=subs.min(len).max(1));
        let mut tokens = incumbent.tokens.clone();
        for _ in 0..k {
            let pos = rng.gen_range(0..len);
            tokens[pos] = nb.attack_vocab[rng.gen_range(0..v)];
        }
        let cand = TokenSeq::new(tokens);
        if seen.insert(cand.clone(), ()).is_none() {
            out.push(cand);
        }
    }
    Ok(out)
}

fn enumerate_neighbors(
    incumbent: &TokenSeq,
    nb: &Neighborhood,
    subs_left: usize,
    pos: usize,
    current: &mut TokenSeq,
    changed: usize,
    out: &mut Vec<TokenSeq>,
) {
    if pos == incumbent.len() {
        if changed > 0 {
            out.push(current.clone());
        }
        return;
    }
    // Keep the incumbent token at this position.
    enumerate_neighbors(incumbent, nb, subs_left, pos + 1, current, changed, out);
    if changed < subs_left {
        let original = current.tokens[pos];
        for &t in &nb.attack_vocab {
            if t == incumbent.tokens[pos] {
                continue;
            }
            current.tokens[pos] = t;
            enumerate_neighbors(incumbent, nb, subs_left, pos + 1, current, changed + 1, out);
        }
        current.tokens[pos] = original;
    }
}

/// One phase of local search over a single segment. Greedy backend: per
/// iteration, evaluate the candidate pool on the assembled input and keep
/// the best (ties toward the lowest candidate ordinal; the incumbent is in
/// the pool, so the accepted value never decreases). Genetic backend:
/// population evolution with elitism, same non-worsening contract.
///
/// Returns the final segment and the per-iteration objective trajectory.
pub fn update_operator(
    incumbent: &TokenSeq,
    context: &TokenSeq,
    objective: &dyn Fn(&TokenSeq) -> ObjVal,
    nb: &Neighborhood,
    budget: usize,
    backend: Backend,
    seed: u64,
    tags: &[u64],
) -> Result<(TokenSeq, Vec<f64>)> {
    if budget == 0 {
        return Err(Error::config("update budget must be >= 1"));
    }
    match backend {
        Backend::Greedy => greedy_update(incumbent, context, objective, nb, budget, seed, tags),
        Backend::Genetic => genetic_update(incumbent, context, objective, nb, budget, seed, tags),
    }
}

fn greedy_update(
    incumbent: &TokenSeq,
    context: &TokenSeq,
    objective: &dyn Fn(&TokenSeq) -> ObjVal,
    nb: &Neighborhood,
    budget: usize,
    seed: u64,
    tags: &[u64],
) -> Result<(TokenSeq, Vec<f64>)> {
    let mut seg = incumbent.clone();
    let mut val = objective(&context.concat(&seg));
    let mut trajectory = Vec::with_capacity(budget);
    for t in 0..budget {
        let mut key = tags.to_vec();
        key.push(t as u64);
        let candidates = propose_candidates(&seg, nb, seed, &key)?;
        let mut best_ordinal = 0usize;
        let mut best_val = objective(&context.concat(&candidates[0]));
        for (ordinal, cand) in candidates.iter().enumerate().skip(1) {
            let v = objective(&context.concat(cand));
            if v.greater_than(&best_val) {
                best_val = v;
                best_ordinal = ordinal;
            }
        }
        if best_val.greater_than(&val) || best_val == val {
            seg = candidates[best_ordinal].clone();
            val = best_val;
        }
        trajectory.push(val.primary);
    }
    Ok((seg, trajectory))
}

fn genetic_update(
    incumbent: &TokenSeq,
    context: &TokenSeq,
    objective: &dyn Fn(&TokenSeq) -> ObjVal,
    nb: &Neighborhood,
    budget: usize,
    seed: u64,
    tags: &[u64],
) -> Result<(TokenSeq, Vec<f64>)> {
    let mut key = vec![0x8u64];
    key.extend_from_slice(tags);
    let mut rng = keyed_rng(seed, &key);
    let pool = nb.candidate_pool_size.max(2);
    let len = incumbent.len();
    let v = nb.attack_vocab.len();
    let subs = nb.substitutions_per_iteration.max(1);

    let mutate = |parent: &TokenSeq, rng: &mut rand_chacha::ChaCha8Rng| -> TokenSeq {
        let mut tokens = parent.tokens.clone();
        let k = rng.gen_range(1..=subs.min(len).max(1));
        for _ in 0..k {
            let pos = rng.gen_range(0..len);
            tokens[pos] = nb.attack_vocab[rng.gen_range(0..v)];
        }
        TokenSeq::new(tokens)
    };

    let mut population: Vec<TokenSeq> = vec![incumbent.clone()];
    while population.len() < pool {
        population.push(mutate(incumbent, &mut rng));
    }

    let mut best = incumbent.clone();
    let mut best_val = objective(&context.concat(incumbent));
    let mut trajectory = Vec::with_capacity(budget);
    for _gen in 0..budget {
        let mut scored: Vec<(usize, ObjVal)> = population
            .iter()
            .enumerate()
            .map(|(i, seg)| (i, objective(&context.concat(seg))))
            .collect();
        // Stable sort: fitness descending, then generation ordinal.
        scored.sort_by(|a, b| {
            b.1.key()
                .partial_cmp(&a.1.key())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        let (top, top_val) = (population[scored[0].0].clone(), scored[0].1);
        if top_val.greater_than(&best_val) {
            best = top.clone();
            best_val = top_val;
        }
        trajectory.push(best_val.primary);

        let elite_count = (pool / 4).max(1);
        let elites: Vec<TokenSeq> = scored
            .iter()
            .take(elite_count)
            .map(|&(i, _)| population[i].clone())
            .collect();
        let mut next: Vec<TokenSeq> = elites.clone();
        while next.len() < pool {
            let a = &elites[rng.gen_range(0..elites.len())];
            let b = &elites[rng.gen_range(0..elites.len())];
            // Uniform crossover, then mutation within the substitution bound.
            let tokens: Vec<u32> = a
                .tokens
                .iter()
                .zip(&b.tokens)
                .map(|(&x, &y)| if rng.gen_bool(0.5) { x } else { y })
                .collect();
            next.push(mutate(&TokenSeq::new(tokens), &mut rng));
        }
        population = next;
    }
    Ok((best, trajectory))
}

/// Tiered candidate selection for the decision-targeted phase:
/// (i) keep all targeted predictions unchanged vs the snapshot; if none,
/// (ii) keep previously wrong predictions still wrong; if none,
/// (iii) unconstrained. Within the surviving tier the candidate optimizing
/// the cost objective in the given direction wins; ties break toward the
/// lowest candidate ordinal.
pub fn constrained_select(
    candidates: &[TokenSeq],
    context: &TokenSeq,
    spec: &CascadeSpec,
    targets: &[usize],
    snapshot: &[(usize, Label)],
    y: &Label,
    direction: Direction,
) -> Result<(usize, Tier)> {
    if candidates.is_empty() {
        return Err(Error::config("candidate set is empty"));
    }
    for &i in targets {
        if !snapshot.iter().any(|(s, _)| *s == i) {
            return Err(Error::integrity(format!(
                "snapshot missing targeted stage {i}"
            )));
        }
    }

    struct Eval {
        tier1: bool,
        tier2: bool,
        cost: ObjVal,
    }
    let evals: Vec<Eval> = candidates
        .iter()
        .map(|cand| {
            let full = context.concat(cand);
            let mut tier1 = true;
            let mut tier2 = true;
            for (i, snap) in snapshot {
                let pred = spec.stage(*i).predict(&full).prediction;
                if !pred.matches(snap) {
                    tier1 = false;
                }
                if !snap.matches(y) && pred.matches(y) {
                    tier2 = false;
                }
            }
            Eval {
                tier1,
                tier2,
                cost: cost_escalation(spec, &full, targets),
            }
        })
        .collect();

    let (indices, tier): (Vec<usize>, Tier) = {
        let t1: Vec<usize> = (0..evals.len()).filter(|&i| evals[i].tier1).collect();
        if !t1.is_empty() {
            (t1, Tier::I)
        } else {
            let t2: Vec<usize> = (0..evals.len()).filter(|&i| evals[i].tier2).collect();
            if !t2.is_empty() {
                (t2, Tier::II)
            } else {
                ((0..evals.len()).collect(), Tier::III)
            }
        }
    };

    let mut best = indices[0];
    for &i in &indices[1..] {
        let better = match direction {
            Direction::Maximize => evals[i].cost.greater_than(&evals[best].cost),
            Direction::Minimize => evals[i].cost.less_than(&evals[best].cost),
        };
        if better {
            best = i;
        }
    }
    Ok((best, tier))
}

/// The stochastic targeting rule: samples whose targeted predictions are
/// still correct always escalate; already-compromised samples escalate with
/// probability `p` and are forced toward early termination otherwise.
pub fn pass_rate_gate(
    p: f64,
    attack_succeeded: bool,
    seed: u64,
    tags: &[u64],
) -> Result<Direction> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("pass rate {p} outside [0, 1]")));
    }
    if !attack_succeeded {
        return Ok(Direction::Maximize);
    }
    let mut key = vec![0x6u64];
    key.extend_from_slice(tags);
    let mut rng = keyed_rng(seed, &key);
    let b = rng.gen_bool(p);
    Ok(if b { Direction::Maximize } else { Direction::Minimize })
}

/// Report of one optimization phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseReport {
    pub round: usize,
    pub phase: String,
    pub objective_before: f64,
    pub objective_after: f64,
    pub tiers: Vec<String>,
    pub directions: Vec<String>,
    pub restarts: usize,
    pub trajectory: Vec<f64>,
}

/// Full report of one per-sample attack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub sample_id: u64,
    pub mode: String,
    pub per_round: Vec<PhaseReport>,
    pub suffix_tokens: Vec<u32>,
    pub suffix_text: Option<String>,
}

/// Single-target attack: one segment stream of total length
/// `2 * R * suffix_slots`, no alternation, optimizing the mode's objective.
pub fn single_target_attack(
    x: &TokenSeq,
    y: &Label,
    spec: &CascadeSpec,
    cfg: &AttackConfig,
    sample_id: u64,
) -> Result<(TokenSeq, AttackReport)> {
    cfg.validate(spec)?;
    let nb = &cfg.neighborhood;
    let desired: Vec<(usize, bool)> = cfg
        .target_stages
        .iter()
        .map(|&i| (i, spec.stage(i).predict(x).prediction.matches(y)))
        .collect();

    let objective = |input: &TokenSeq| -> ObjVal {
        match cfg.mode {
            AttackMode::SingleAcc => {
                ObjVal::scalar(acc_loss(spec, input, y, &cfg.target_stages, cfg.loss))
            }
            AttackMode::SingleCost => cost_escalation(spec, input, &cfg.target_stages),
            AttackMode::DmFlip => dm_flip_value(spec, input, &desired),
            AttackMode::Joint => unreachable!("joint mode uses joint_attack"),
        }
    };
    if cfg.mode == AttackMode::Joint {
        return Err(Error::config("single_target_attack cannot run in joint mode"));
    }

    let mut context = x.clone();
    let mut per_round = Vec::new();
    let segment_count = 2 * cfg.rounds();
    for s in 0..segment_count {
        let init = random_suffix(
            nb.suffix_slots_per_phase,
            &nb.attack_vocab,
            cfg.seed,
            &[sample_id, s as u64],
        );
        let before = objective(&context.concat(&init)).primary;
        let (seg, trajectory) = update_operator(
            &init,
            &context,
            &objective,
            nb,
            cfg.iterations,
            cfg.backend,
            cfg.seed,
            &[sample_id, s as u64],
        )?;
        let after = objective(&context.concat(&seg)).primary;
        context = context.concat(&seg);
        per_round.push(PhaseReport {
            round: s / 2 + 1,
            phase: "single".to_string(),
            objective_before: before,
            objective_after: after,
            tiers: Vec::new(),
            directions: Vec::new(),
            restarts: 0,
            trajectory,
        });
    }

    let suffix: Vec<u32> = context.tokens[x.len()..].to_vec();
    let report = AttackReport {
        sample_id,
        mode: cfg.mode.as_str().to_string(),
        per_round,
        suffix_tokens: suffix,
        suffix_text: None,
    };
    Ok((context, report))
}

const MAX_RESTARTS: usize = 3;

/// The joint alternating attack. Each round optimizes a prediction-targeted
/// segment, snapshots the targeted predictions, then runs the tiered
/// decision-targeted phase with the pass-rate gate choosing the direction
/// per iteration. If a decision phase never finds a tier (i)/(ii) candidate
/// it restarts from a fresh initialization up to three times, then accepts
/// the best-loss segment.
pub fn joint_attack(
    x: &TokenSeq,
    y: &Label,
    spec: &CascadeSpec,
    cfg: &AttackConfig,
    sample_id: u64,
) -> Result<(TokenSeq, AttackReport)> {
    cfg.validate(spec)?;
    if cfg.mode != AttackMode::Joint {
        return Err(Error::config("joint_attack requires joint mode"));
    }
    let nb = &cfg.neighborhood;
    let sid = sample_id;

    let mut state = SuffixState::default();
    let mut context = x.clone();
    let mut per_round = Vec::new();

    for r in 1..=cfg.rounds() {
        // Phase 1: prediction-targeted segment, maximizing the task loss.
        let acc_objective = |input: &TokenSeq| -> ObjVal {
            ObjVal::scalar(acc_loss(spec, input, y, &cfg.target_stages, cfg.loss))
        };
        let init_f = random_suffix(
            nb.suffix_slots_per_phase,
            &nb.attack_vocab,
            cfg.seed,
            &[sid, r as u64, 0],
        );
        let before_f = acc_objective(&context.concat(&init_f)).primary;
        let (seg_f, traj_f) = update_operator(
            &init_f,
            &context,
            &acc_objective,
            nb,
            cfg.iterations,
            cfg.backend,
            cfg.seed,
            &[sid, r as u64, 0],
        )?;
        let after_f = acc_objective(&context.concat(&seg_f)).primary;
        context = context.concat(&seg_f);
        state.push(Phase::F, r, seg_f);
        per_round.push(PhaseReport {
            round: r,
            phase: "f".to_string(),
            objective_before: before_f,
            objective_after: after_f,
            tiers: Vec::new(),
            directions: Vec::new(),
            restarts: 0,
            trajectory: traj_f,
        });

        // Snapshot after phase 1; succeeded = every targeted stage wrong.
        let snapshot: Vec<(usize, Label)> = cfg
            .target_stages
            .iter()
            .map(|&i| (i, spec.stage(i).predict(&context).prediction))
            .collect();
        let succeeded = snapshot.iter().all(|(_, pred)| !pred.matches(y));

        // Phase 2: decision-targeted segment via tiered candidate selection.
        let mut accepted: Option<(TokenSeq, Vec<String>, Vec<String>, ObjVal)> = None;
        let mut fallback: Option<(TokenSeq, Vec<String>, Vec<String>, ObjVal)> = None;
        let mut last_direction = Direction::Maximize;
        let mut restarts_used = 0usize;
        let mut before_g = 0.0;
        for attempt in 0..=MAX_RESTARTS {
            let mut seg = random_suffix(
                nb.suffix_slots_per_phase,
                &nb.attack_vocab,
                cfg.seed,
                &[sid, r as u64, 1, attempt as u64],
            );
            if attempt == 0 {
                before_g = cost_escalation(spec, &context.concat(&seg), &cfg.target_stages).primary;
            }
            let mut tiers = Vec::with_capacity(cfg.iterations);
            let mut directions = Vec::with_capacity(cfg.iterations);
            let mut constrained_ok = false;
            for t in 1..=cfg.iterations {
                let candidates = propose_candidates(
                    &seg,
                    nb,
                    cfg.seed,
                    &[sid, r as u64, 2, attempt as u64, t as u64],
                )?;
                let direction = pass_rate_gate(
                    cfg.pass_rate,
                    succeeded,
                    cfg.seed,
                    &[sid, r as u64, attempt as u64, t as u64],
                )?;
                last_direction = direction;
                let (ordinal, tier) = constrained_select(
                    &candidates,
                    &context,
                    spec,
                    &cfg.target_stages,
                    &snapshot,
                    y,
                    direction,
                )?;
                seg = candidates[ordinal].clone();
                if tier != Tier::III {
                    constrained_ok = true;
                }
                tiers.push(tier.as_str().to_string());
                directions.push(direction.as_str().to_string());
            }
            let val = cost_escalation(spec, &context.concat(&seg), &cfg.target_stages);
            if constrained_ok {
                accepted = Some((seg, tiers, directions, val));
                restarts_used = attempt;
                break;
            }
            let keep = match &fallback {
                None => true,
                Some((_, _, _, prev)) => match last_direction {
                    Direction::Maximize => val.greater_than(prev),
                    Direction::Minimize => val.less_than(prev),
                },
            };
            if keep {
                fallback = Some((seg, tiers, directions, val));
            }
            restarts_used = attempt;
        }
        let (seg_g, tiers, directions, val_g) =
            accepted.or(fallback).expect("at least one attempt ran");
        context = context.concat(&seg_g);
        state.push(Phase::G, r, seg_g);
        per_round.push(PhaseReport {
            round: r,
            phase: "g".to_string(),
            objective_before: before_g,
            objective_after: val_g.primary,
            tiers,
            directions,
            restarts: restarts_used,
            trajectory: Vec::new(),
        });
    }

    debug_assert_eq!(context.len() - x.len(), nb.total_suffix_len());
    debug_assert_eq!(context, x.concat(&state.assembled()));
    let suffix: Vec<u32> = context.tokens[x.len()..].to_vec();
    let report = AttackReport {
        sample_id,
        mode: cfg.mode.as_str().to_string(),
        per_round,
        suffix_tokens: suffix,
        suffix_text: None,
    };
    Ok((context, report))
}

/// Dispatch by mode.
pub fn run_attack(
    x: &TokenSeq,
    y: &Label,
    spec: &CascadeSpec,
    cfg: &AttackConfig,
    sample_id: u64,
) -> Result<(TokenSeq, AttackReport)> {
    match cfg.mode {
        AttackMode::Joint => joint_attack(x, y, spec, cfg, sample_id),
        _ => single_target_attack(x, y, spec, cfg, sample_id),
    }
}
