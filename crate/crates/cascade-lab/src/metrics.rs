//! Task-performance and efficiency metrics: accuracy, exact match, coverage,
//! normalized token cost, pass rates, and decision-module confusion counts.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::analysis::RoutingRecord;
use crate::cascade::{CascadeSpec, ExecutionTrace};
use crate::error::{Error, Result};
use crate::token::Label;

/// Per-token cost coefficients: 0.01 per input token, 0.03 per output token,
/// scaled by the component's parameter count in billions.
pub const INPUT_TOKEN_COST: f64 = 0.01;
pub const OUTPUT_TOKEN_COST: f64 = 0.03;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskMetric {
    pub name: String,
    pub value: f64,
}

/// Confusion counts for one decision module over the samples that reached it:
/// rows = stage prediction correct?, columns = escalated?.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmConfusion {
    pub correct_stop: usize,
    pub correct_escalate: usize,
    pub wrong_stop: usize,
    pub wrong_escalate: usize,
}

impl DmConfusion {
    pub fn total(&self) -> usize {
        self.correct_stop + self.correct_escalate + self.wrong_stop + self.wrong_escalate
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub task_metric: TaskMetric,
    pub normalized_token_cost: f64,
    pub simulated_time: f64,
    pub pass_rates: Vec<f64>,
    pub dm_confusion: Vec<DmConfusion>,
}

/// Mean of exact label matches. Empty or mismatched inputs are an error,
/// never NaN.
pub fn accuracy(predictions: &[Label], labels: &[Label]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::integrity(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::integrity("accuracy over an empty set"));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p.matches(y))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Normalize: lowercase, strip non-alphanumeric-non-space characters,
/// collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Exact match after normalization.
pub fn exact_match(pred_text: &str, gold_text: &str) -> bool {
    normalize_answer(pred_text) == normalize_answer(gold_text)
}

/// Fraction of required concept surfaces appearing as words of the generated
/// text, and whether coverage is full.
pub fn full_coverage(generated_text: &str, concepts: &[String]) -> (f64, bool) {
    assert!(!concepts.is_empty(), "concept set must be non-empty");
    let words: HashSet<&str> = generated_text.split_whitespace().collect();
    let present = concepts
        .iter()
        .filter(|c| words.contains(c.as_str()))
        .count();
    let coverage = present as f64 / concepts.len() as f64;
    (coverage, present == concepts.len())
}

/// Normalized token cost of one trace: for each executed component
/// (stage models up to the stopping index plus the deciders that ran),
/// `(0.01 * input_tokens + 0.03 * output_tokens) * param_scale`, summed and
/// divided by the input length. Deciders contribute one output token.
pub fn normalized_token_cost(
    trace: &ExecutionTrace,
    spec: &CascadeSpec,
    input_len: usize,
) -> Result<f64> {
    if input_len == 0 {
        return Err(Error::integrity("input_len must be >= 1"));
    }
    let mut sum = 0.0f64;
    for rec in &trace.per_stage {
        let stage = spec.stage(rec.stage_index);
        sum += (INPUT_TOKEN_COST * trace.input_len as f64
            + OUTPUT_TOKEN_COST * rec.output.output_token_count as f64)
            * stage.param_scale();
        if rec.decision.is_some() {
            let decider = spec.decider(rec.stage_index);
            sum += (INPUT_TOKEN_COST * trace.input_len as f64 + OUTPUT_TOKEN_COST)
                * decider.param_scale();
        }
    }
    Ok(sum / input_len as f64)
}

/// Escalation rate past each boundary: `rho_i = #(stop_stage > i) / N` for
/// `i = 1..l-1`.
pub fn pass_rate(stop_stages: &[usize], stage_count: usize) -> Vec<f64> {
    assert!(!stop_stages.is_empty(), "pass_rate over an empty record set");
    let n = stop_stages.len() as f64;
    (1..stage_count)
        .map(|i| stop_stages.iter().filter(|&&s| s > i).count() as f64 / n)
        .collect()
}

/// Confusion counts per decision module. Only samples that reached a decider
/// are counted toward it.
pub fn dm_confusion(records: &[RoutingRecord], stage_count: usize) -> Vec<DmConfusion> {
    let mut out = vec![DmConfusion::default(); stage_count.saturating_sub(1)];
    for rec in records {
        for i in 1..stage_count {
            if rec.stop_stage < i {
                break;
            }
            let correct = rec.stage_correct[i - 1]
                .expect("stage reached by the sample must have a recorded correctness bit");
            let escalated = rec.stop_stage > i;
            let cell = &mut out[i - 1];
            match (correct, escalated) {
                (true, false) => cell.correct_stop += 1,
                (true, true) => cell.correct_escalate += 1,
                (false, false) => cell.wrong_stop += 1,
                (false, true) => cell.wrong_escalate += 1,
            }
        }
    }
    out
}

/// Assemble the full metric report for a batch of traces over a labeled
/// corpus.
pub fn metric_report(
    traces: &[ExecutionTrace],
    labels: &[Label],
    records: &[RoutingRecord],
    spec: &CascadeSpec,
) -> Result<MetricReport> {
    let predictions: Vec<Label> = traces.iter().map(|t| t.final_output.clone()).collect();
    let acc = accuracy(&predictions, labels)?;
    let mut token_cost_sum = 0.0;
    let mut time_sum = 0.0;
    for trace in traces {
        token_cost_sum += normalized_token_cost(trace, spec, trace.input_len.max(1))?;
        time_sum += trace.total_cost;
    }
    let n = traces.len() as f64;
    let stop_stages: Vec<usize> = traces.iter().map(|t| t.stopping_index).collect();
    Ok(MetricReport {
        task_metric: TaskMetric {
            name: "accuracy".to_string(),
            value: acc,
        },
        normalized_token_cost: token_cost_sum / n,
        simulated_time: time_sum / n,
        pass_rates: pass_rate(&stop_stages, spec.stage_count()),
        dm_confusion: dm_confusion(records, spec.stage_count()),
    })
}

/// Render a metric report as a markdown table row set matching the result
/// tables' column structure.
pub fn metric_markdown(title: &str, report: &MetricReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("### {title}\n\n"));
    s.push_str("| Performance | Token cost | Time cost |");
    for i in 1..=report.pass_rates.len() {
        s.push_str(&format!(" Passrate_{i} |"));
    }
    s.push('\n');
    s.push_str("|---|---|---|");
    for _ in &report.pass_rates {
        s.push_str("---|");
    }
    s.push('\n');
    s.push_str(&format!(
        "| {:.4} | {:.4} | {:.4} |",
        report.task_metric.value, report.normalized_token_cost, report.simulated_time
    ));
    for r in &report.pass_rates {
        s.push_str(&format!(" {r:.4} |"));
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_matches() {
        let labels: Vec<Label> = [0u32, 1, 2, 3].iter().map(|&c| Label::Class(c)).collect();
        let preds: Vec<Label> = [0u32, 1, 0, 0].iter().map(|&c| Label::Class(c)).collect();
        assert_eq!(accuracy(&preds, &labels).unwrap(), 0.5);
        assert_eq!(accuracy(&labels, &labels).unwrap(), 1.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&preds[..2], &labels).is_err());
    }

    #[test]
    fn exact_match_normalization() {
        assert!(exact_match("Paris.", "paris"));
        assert!(!exact_match("New York", "York"));
        assert!(exact_match(" a  b ", "a b"));
    }

    #[test]
    fn coverage_fraction() {
        let concepts = vec!["dog".to_string(), "ball".to_string(), "park".to_string(), "run".to_string()];
        let (c, full) = full_coverage("the dog ran", &concepts);
        assert_eq!(c, 0.25);
        assert!(!full);
        let (c, full) = full_coverage("dog ball park run", &concepts);
        assert_eq!(c, 1.0);
        assert!(full);
        let (c, full) = full_coverage("", &concepts);
        assert_eq!(c, 0.0);
        assert!(!full);
    }

    #[test]
    fn pass_rate_boundaries() {
        assert_eq!(pass_rate(&[1, 1, 1, 1], 2), vec![0.0]);
        assert_eq!(pass_rate(&[3, 3, 3], 3), vec![1.0, 1.0]);
        assert_eq!(pass_rate(&[1, 2, 2, 1], 2), vec![0.5]);
    }
}
