//! Executable cascade semantics: sequential stage evaluation, early-exit
//! decisions, stopping index, and cost accounting.
//!
//! A cascade runs stage models `f^1..f^l` in order. After stage `i < l`, the
//! decision module `g^i` sees the input and the stage output and either stops
//! (returning the stage output) or escalates to stage `i+1`. The final stage
//! always terminates. No decision module exists at the final stage; its cost
//! is modeled as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token::{Label, TokenSeq};

/// One stage model's output: a prediction, the raw per-class (or per-answer)
/// scores behind it, and the simulated length of the generated output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub prediction: Label,
    pub scores: Vec<f64>,
    pub output_token_count: u32,
}

impl StageOutput {
    /// Classification output from raw scores. The prediction is the argmax;
    /// ties break toward the lowest class index.
    pub fn from_scores(scores: Vec<f64>, output_token_count: u32) -> Self {
        let winner = argmax(&scores);
        StageOutput {
            prediction: Label::Class(winner as u32),
            scores,
            output_token_count,
        }
    }

    /// Margin between the top score and the runner-up. Zero when fewer than
    /// two scores exist.
    pub fn margin(&self) -> f64 {
        if self.scores.len() < 2 {
            return 0.0;
        }
        let top = argmax(&self.scores);
        let best = self.scores[top];
        let second = self
            .scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != top)
            .map(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        best - second
    }

    /// Softmax probability margin: top-1 probability minus top-2 probability.
    pub fn softmax_margin(&self) -> f64 {
        if self.scores.len() < 2 {
            return 1.0;
        }
        let max = self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let top = argmax(&self.scores);
        let p1 = exps[top] / z;
        let p2 = exps
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != top)
            .map(|(_, &e)| e / z)
            .fold(f64::NEG_INFINITY, f64::max);
        p1 - p2
    }
}

/// Lowest-index argmax.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// A stage model `f^i`. `predict` must be pure; `cost_of` must be monotone
/// non-decreasing in input length.
pub trait StageModel: Send + Sync {
    fn predict(&self, x: &TokenSeq) -> StageOutput;
    fn cost_of(&self, x: &TokenSeq) -> f64;
    /// Model size in billions of parameters, for normalized token cost.
    fn param_scale(&self) -> f64;
}

/// A decision outcome: `escalate = true` means continue to the next stage;
/// `false` means stop and return the current stage's answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub escalate: bool,
    pub confidence: f64,
}

/// A decision module `g^i` sitting between stages `i` and `i+1`.
pub trait DecisionModule: Send + Sync {
    fn decide(&self, x: &TokenSeq, output: &StageOutput) -> Decision;
    fn cost_of(&self, x: &TokenSeq, output: &StageOutput) -> f64;
    fn param_scale(&self) -> f64;
}

/// The ordered stage models and decision modules defining one cascade.
pub struct CascadeSpec {
    stages: Vec<Box<dyn StageModel>>,
    deciders: Vec<Box<dyn DecisionModule>>,
    vocab_size: usize,
    class_count: usize,
}

impl CascadeSpec {
    pub fn new(
        stages: Vec<Box<dyn StageModel>>,
        deciders: Vec<Box<dyn DecisionModule>>,
        vocab_size: usize,
        class_count: usize,
    ) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::config("cascade needs at least one stage"));
        }
        if deciders.len() != stages.len() - 1 {
            return Err(Error::config(format!(
                "cascade with {} stages needs {} deciders, got {}",
                stages.len(),
                stages.len() - 1,
                deciders.len()
            )));
        }
        Ok(CascadeSpec {
            stages,
            deciders,
            vocab_size,
            class_count,
        })
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Stage model by 1-based index.
    pub fn stage(&self, i: usize) -> &dyn StageModel {
        self.stages[i - 1].as_ref()
    }

    /// Decision module by 1-based boundary index (`1..l-1`).
    pub fn decider(&self, i: usize) -> &dyn DecisionModule {
        self.deciders[i - 1].as_ref()
    }

    fn check_input(&self, x: &TokenSeq) -> Result<()> {
        for &t in &x.tokens {
            if t as usize >= self.vocab_size {
                return Err(Error::config(format!(
                    "token id {t} out of range for cascade vocabulary of size {}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// Per-stage entry of an execution trace. `decision` is `None` only at the
/// terminal stage `l` (no decider exists there).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage_index: usize,
    pub output: StageOutput,
    pub model_cost: f64,
    pub decision: Option<DecisionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub escalate: bool,
    pub confidence: f64,
    pub cost: f64,
}

/// Full record of one cascade query: evaluated stages, decisions, stopping
/// index, final output, and accumulated cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub input_len: usize,
    pub per_stage: Vec<StageRecord>,
    pub stopping_index: usize,
    pub final_output: Label,
    pub total_cost: f64,
}

/// Run the cascade on one input. Stages after the stopping index are never
/// evaluated.
pub fn run_cascade(spec: &CascadeSpec, x: &TokenSeq) -> Result<ExecutionTrace> {
    spec.check_input(x)?;
    let l = spec.stage_count();
    let mut per_stage: Vec<StageRecord> = Vec::new();
    let mut total_cost = 0.0f64;

    for i in 1..=l {
        let output = spec.stage(i).predict(x);
        let model_cost = spec.stage(i).cost_of(x);
        total_cost += model_cost;

        if i < l {
            let decider = spec.decider(i);
            let decision = decider.decide(x, &output);
            let decider_cost = decider.cost_of(x, &output);
            total_cost += decider_cost;
            let escalate = decision.escalate;
            per_stage.push(StageRecord {
                stage_index: i,
                output,
                model_cost,
                decision: Some(DecisionRecord {
                    escalate,
                    confidence: decision.confidence,
                    cost: decider_cost,
                }),
            });
            if !escalate {
                break;
            }
        } else {
            // Terminal stage: virtual zero-cost decider.
            per_stage.push(StageRecord {
                stage_index: i,
                output,
                model_cost,
                decision: None,
            });
        }
    }

    let stopping_index = per_stage.last().expect("l >= 1").stage_index;
    let final_output = per_stage.last().unwrap().output.prediction.clone();
    Ok(ExecutionTrace {
        input_len: x.len(),
        per_stage,
        stopping_index,
        final_output,
        total_cost,
    })
}

/// Stopping index recomputed from the recorded decisions: the first stage
/// with a stop decision, or `l` if every recorded decision escalated.
pub fn stopping_index(trace: &ExecutionTrace) -> usize {
    for rec in &trace.per_stage {
        if let Some(d) = &rec.decision {
            if !d.escalate {
                return rec.stage_index;
            }
        }
    }
    trace.per_stage.last().map(|r| r.stage_index).unwrap_or(1)
}

/// Total cost recomputed from the per-stage entries, fixed left-to-right
/// summation order. Errors if the trace records more stages than the spec has.
pub fn total_cost(trace: &ExecutionTrace, spec: &CascadeSpec) -> Result<f64> {
    if trace.per_stage.len() > spec.stage_count() {
        return Err(Error::integrity(format!(
            "trace records {} stages but spec has {}",
            trace.per_stage.len(),
            spec.stage_count()
        )));
    }
    let mut sum = 0.0f64;
    for rec in &trace.per_stage {
        sum += rec.model_cost;
        if let Some(d) = &rec.decision {
            sum += d.cost;
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{TableDecider, TableKey, TableModel};
    use std::collections::HashMap;

    fn const_model(class: u32, class_count: usize, cost: f64) -> Box<dyn StageModel> {
        Box::new(TableModel::new(
            HashMap::new(),
            Label::Class(class),
            1.0,
            class_count,
            TableKey::FullSeq,
            cost,
            0.0,
            1.0,
            1,
        ))
    }

    fn const_decider(escalate: bool, cost: f64) -> Box<dyn DecisionModule> {
        Box::new(TableDecider::new(
            HashMap::new(),
            escalate,
            TableKey::FullSeq,
            cost,
            0.1,
        ))
    }

    #[test]
    fn single_stage_cascade_stops_at_one() {
        let spec = CascadeSpec::new(vec![const_model(2, 3, 1.0)], vec![], 8, 3).unwrap();
        let trace = run_cascade(&spec, &TokenSeq::new(vec![3])).unwrap();
        assert_eq!(trace.stopping_index, 1);
        assert_eq!(trace.final_output, Label::Class(2));
    }

    #[test]
    fn all_escalate_reaches_final_stage() {
        let spec = CascadeSpec::new(
            vec![const_model(0, 3, 1.0), const_model(1, 3, 2.0), const_model(2, 3, 4.0)],
            vec![const_decider(true, 0.1), const_decider(true, 0.1)],
            8,
            3,
        )
        .unwrap();
        let trace = run_cascade(&spec, &TokenSeq::new(vec![0])).unwrap();
        assert_eq!(trace.stopping_index, 3);
        assert_eq!(trace.final_output, Label::Class(2));
        assert_eq!(trace.per_stage.len(), 3);
        assert!(trace.per_stage[2].decision.is_none());
    }

    #[test]
    fn hand_traced_two_stage_stop() {
        // f^1 maps x0 -> class 2, decider stops at stage 1.
        let mut table = HashMap::new();
        let x0 = TokenSeq::new(vec![5]);
        table.insert(x0.stable_hash(), (Label::Class(2), 3.0));
        let f1: Box<dyn StageModel> = Box::new(TableModel::new(
            table,
            Label::Class(0),
            0.0,
            3,
            TableKey::FullSeq,
            1.0,
            0.0,
            1.0,
            1,
        ));
        let spec = CascadeSpec::new(
            vec![f1, const_model(1, 3, 5.0)],
            vec![const_decider(false, 0.1)],
            8,
            3,
        )
        .unwrap();
        let trace = run_cascade(&spec, &x0).unwrap();
        assert_eq!(trace.stopping_index, 1);
        assert_eq!(trace.final_output, Label::Class(2));
        // Lazy: stage 2 never evaluated.
        assert_eq!(trace.per_stage.len(), 1);
        // tau = 1, c_f = 1.0, c_g = 0.1.
        assert!((trace.total_cost - 1.1).abs() < 1e-12);
    }

    #[test]
    fn terminal_cost_uses_zero_cost_virtual_decider() {
        let spec = CascadeSpec::new(
            vec![const_model(0, 3, 1.0), const_model(1, 3, 5.0)],
            vec![const_decider(true, 0.1)],
            8,
            3,
        )
        .unwrap();
        let trace = run_cascade(&spec, &TokenSeq::new(vec![0])).unwrap();
        assert_eq!(trace.stopping_index, 2);
        assert!((trace.total_cost - 6.1).abs() < 1e-12);
        assert!((total_cost(&trace, &spec).unwrap() - trace.total_cost).abs() == 0.0);
    }

    #[test]
    fn stopping_index_first_zero_rule() {
        let spec = CascadeSpec::new(
            vec![const_model(0, 2, 1.0), const_model(0, 2, 1.0), const_model(0, 2, 1.0)],
            vec![const_decider(true, 0.0), const_decider(false, 0.0)],
            8,
            2,
        )
        .unwrap();
        let trace = run_cascade(&spec, &TokenSeq::new(vec![0])).unwrap();
        assert_eq!(stopping_index(&trace), 2);
        assert_eq!(trace.stopping_index, 2);
    }

    #[test]
    fn vocab_mismatch_is_config_error() {
        let spec = CascadeSpec::new(vec![const_model(0, 2, 1.0)], vec![], 4, 2).unwrap();
        assert!(run_cascade(&spec, &TokenSeq::new(vec![9])).is_err());
    }

    #[test]
    fn empty_spec_rejected() {
        assert!(CascadeSpec::new(vec![], vec![], 4, 2).is_err());
    }

    #[test]
    fn argmax_ties_break_low() {
        let out = StageOutput::from_scores(vec![1.0, 1.0, 0.0], 1);
        assert_eq!(out.prediction, Label::Class(0));
    }
}
