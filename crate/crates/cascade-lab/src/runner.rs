//! Experiment orchestration: clean runs, attack sweeps, analysis, defense
//! sweeps, and report emission. Every file is written atomically
//! (temp-then-rename) and the whole directory is a pure function of the
//! config (remote stages excluded).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{decomposition, gap_shift, routing_stats, DecompositionReport, GapShiftReport, RoutingRecord};
use crate::attack::{run_attack, AttackMode, AttackReport};
use crate::cascade::{run_cascade, CascadeSpec, ExecutionTrace};
use crate::config::{build_experiment, BuiltExperiment, ExperimentConfig};
use crate::defense::{
    defense_eval, ppl_quantile, smoothing_eval, BigramModel, DefenseReport, FilterDefense,
    FilterKind,
};
use crate::error::{Error, Result};
use crate::metrics::{metric_markdown, metric_report, MetricReport};
use crate::token::{Label, TokenSeq};
use crate::zoo::{random_suffix, Sample};

/// One line of a trace JSONL file; carries everything `analyze` needs to
/// rebuild routing records without the models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceLine {
    pub sample_id: u64,
    pub input_len: usize,
    pub stop_stage: usize,
    pub prediction: Label,
    pub total_cost: f64,
    pub stage_correct: Vec<Option<bool>>,
    pub final_stage_correct: bool,
    pub cascade_correct: bool,
}

impl TraceLine {
    pub fn new(trace: &ExecutionTrace, record: &RoutingRecord) -> TraceLine {
        TraceLine {
            sample_id: record.sample_id,
            input_len: trace.input_len,
            stop_stage: trace.stopping_index,
            prediction: trace.final_output.clone(),
            total_cost: trace.total_cost,
            stage_correct: record.stage_correct.clone(),
            final_stage_correct: record.final_stage_correct,
            cascade_correct: record.cascade_correct,
        }
    }

    pub fn to_record(&self) -> RoutingRecord {
        RoutingRecord {
            sample_id: self.sample_id,
            stop_stage: self.stop_stage,
            stage_correct: self.stage_correct.clone(),
            final_stage_correct: self.final_stage_correct,
            cascade_correct: self.cascade_correct,
        }
    }
}

/// One line of an attacked-trace JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackLine {
    pub sample_id: u64,
    pub suffix: Vec<u32>,
    pub suffix_text: String,
    pub restarts: usize,
    pub trace: TraceLine,
}

/// Write bytes atomically: the final path either holds the old content or
/// the complete new content, never a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| Error::config(format!("no parent directory for {}", path.display())))?;
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string())
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, lines: &[T]) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line)?);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Signed percentage change with one decimal, e.g. `-73.1%`.
pub fn format_delta(initial: f64, attacked: f64) -> String {
    if initial == 0.0 {
        return "n/a".to_string();
    }
    let pct = (attacked - initial) / initial * 100.0;
    format!("{pct:+.1}%")
}

/// Evaluated batch: per-sample traces, routing records, and metrics.
pub struct Batch {
    pub traces: Vec<ExecutionTrace>,
    pub records: Vec<RoutingRecord>,
    pub metric: MetricReport,
}

/// Run the cascade over a set of inputs (with the labels of `samples`) and
/// aggregate. `inputs[i]` must correspond to `samples[i]`.
pub fn evaluate_batch(
    spec: &CascadeSpec,
    samples: &[Sample],
    inputs: &[TokenSeq],
) -> Result<Batch> {
    if samples.len() != inputs.len() {
        return Err(Error::integrity(format!(
            "{} samples vs {} inputs",
            samples.len(),
            inputs.len()
        )));
    }
    let relabeled: Vec<Sample> = samples
        .iter()
        .zip(inputs)
        .map(|(s, x)| Sample {
            id: s.id,
            x: x.clone(),
            label: s.label.clone(),
        })
        .collect();
    let traces: Vec<ExecutionTrace> = relabeled
        .par_iter()
        .map(|s| run_cascade(spec, &s.x))
        .collect::<Result<Vec<_>>>()?;
    let records = routing_stats(spec, &relabeled)?;
    let labels: Vec<Label> = relabeled.iter().map(|s| s.label.clone()).collect();
    let metric = metric_report(&traces, &labels, &records, spec)?;
    Ok(Batch {
        traces,
        records,
        metric,
    })
}

fn trace_lines(batch: &Batch) -> Vec<TraceLine> {
    batch
        .traces
        .iter()
        .zip(&batch.records)
        .map(|(t, r)| TraceLine::new(t, r))
        .collect()
}

/// Attack every sample in parallel (input-ordered) and evaluate the
/// attacked inputs.
pub fn attack_batch(
    built: &BuiltExperiment,
    cfg: &crate::attack::AttackConfig,
) -> Result<(Vec<TokenSeq>, Vec<AttackReport>, Batch)> {
    let results: Vec<(TokenSeq, AttackReport)> = built
        .corpus
        .samples
        .par_iter()
        .map(|s| run_attack(&s.x, &s.label, &built.spec, cfg, s.id))
        .collect::<Result<Vec<_>>>()?;
    let (inputs, mut reports): (Vec<TokenSeq>, Vec<AttackReport>) = results.into_iter().unzip();
    for report in &mut reports {
        let seq = TokenSeq::new(report.suffix_tokens.clone());
        report.suffix_text = Some(built.vocab.decode(&seq));
    }
    let batch = evaluate_batch(&built.spec, &built.corpus.samples, &inputs)?;
    Ok((inputs, reports, batch))
}

fn attack_lines(reports: &[AttackReport], batch: &Batch) -> Vec<AttackLine> {
    reports
        .iter()
        .zip(batch.traces.iter().zip(&batch.records))
        .map(|(rep, (trace, record))| AttackLine {
            sample_id: rep.sample_id,
            suffix: rep.suffix_tokens.clone(),
            suffix_text: rep.suffix_text.clone().unwrap_or_default(),
            restarts: rep.per_round.iter().map(|p| p.restarts).sum(),
            trace: TraceLine::new(trace, record),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsFile {
    pub clean: MetricReport,
    #[serde(default)]
    pub random_noise: Option<MetricReport>,
    /// Keyed by formatted sweep point, e.g. `p=0.20`.
    #[serde(default)]
    pub attacked: Vec<(String, MetricReport)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisFile {
    pub clean: DecompositionReport,
    #[serde(default)]
    pub attacked: Option<DecompositionReport>,
    #[serde(default)]
    pub gap_shift: Option<GapShiftReport>,
}

fn sweep_key(p: f64) -> String {
    format!("p={p:.2}")
}

/// Full experiment: clean baseline, random-noise baseline, attack sweep,
/// analysis, defense sweep, metrics, and summary. Returns the experiment
/// directory.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let built = build_experiment(cfg)?;
    fs::create_dir_all(out_dir)?;
    atomic_write(
        &out_dir.join("config.json"),
        serde_json::to_string_pretty(cfg)?.as_bytes(),
    )?;

    // Clean baseline.
    let clean_inputs: Vec<TokenSeq> = built.corpus.samples.iter().map(|s| s.x.clone()).collect();
    let clean = evaluate_batch(&built.spec, &built.corpus.samples, &clean_inputs)?;
    write_jsonl(&out_dir.join("clean_traces.jsonl"), &trace_lines(&clean))?;

    let mut metrics = MetricsFile {
        clean: clean.metric.clone(),
        random_noise: None,
        attacked: Vec::new(),
    };
    let mut analysis = AnalysisFile {
        clean: decomposition(&clean.records)?,
        attacked: None,
        gap_shift: None,
    };
    let mut first_attacked: Option<(Vec<TokenSeq>, Batch)> = None;

    if let Some(base_attack) = cfg.attack_config(&built.layout, 1.0) {
        // Random-noise baseline: same perturbation budget, no optimization.
        let noise_len = base_attack.neighborhood.total_suffix_len();
        let noise_inputs: Vec<TokenSeq> = built
            .corpus
            .samples
            .iter()
            .map(|s| {
                s.x.concat(&random_suffix(
                    noise_len,
                    &base_attack.neighborhood.attack_vocab,
                    cfg.seed,
                    &[0x4e, s.id],
                ))
            })
            .collect();
        let noise = evaluate_batch(&built.spec, &built.corpus.samples, &noise_inputs)?;
        write_jsonl(&out_dir.join("random_noise.jsonl"), &trace_lines(&noise))?;
        metrics.random_noise = Some(noise.metric.clone());

        let sweep: Vec<f64> = if base_attack.mode == AttackMode::Joint {
            cfg.p_sweep
                .clone()
                .unwrap_or_else(|| vec![cfg.attack.as_ref().map(|a| a.pass_rate).unwrap_or(1.0)])
        } else {
            vec![1.0]
        };
        for &p in &sweep {
            let attack_cfg = cfg
                .attack_config(&built.layout, p)
                .expect("attack section present");
            let (inputs, reports, batch) = attack_batch(&built, &attack_cfg)?;
            let name = if attack_cfg.mode == AttackMode::Joint {
                format!("attacked_{}.jsonl", sweep_key(p))
            } else {
                format!("attacked_{}.jsonl", attack_cfg.mode.as_str())
            };
            write_jsonl(&out_dir.join(name), &attack_lines(&reports, &batch))?;
            let key = if attack_cfg.mode == AttackMode::Joint {
                sweep_key(p)
            } else {
                attack_cfg.mode.as_str().to_string()
            };
            metrics.attacked.push((key, batch.metric.clone()));
            if first_attacked.is_none() {
                first_attacked = Some((inputs, batch));
            }
        }
    }

    if let Some((_, batch)) = &first_attacked {
        analysis.attacked = Some(decomposition(&batch.records)?);
        analysis.gap_shift = Some(gap_shift(&clean.records, &batch.records)?);
    }
    atomic_write(
        &out_dir.join("analysis.json"),
        serde_json::to_string_pretty(&analysis)?.as_bytes(),
    )?;

    if let Some(defense) = &cfg.defense {
        let adversarial: Vec<TokenSeq> = match &first_attacked {
            Some((inputs, _)) => inputs.clone(),
            None => {
                // No attack configured: defend against random suffixes.
                built
                    .corpus
                    .samples
                    .iter()
                    .map(|s| {
                        s.x.concat(&random_suffix(
                            defense.trim.max(1),
                            &built.layout.attack_vocab(),
                            cfg.seed,
                            &[0x4e, s.id],
                        ))
                    })
                    .collect()
            }
        };
        let csv = defense_sweep(&built, cfg, &clean_inputs, &adversarial, defense)?;
        atomic_write(&out_dir.join("defense.csv"), csv.as_bytes())?;
    }

    atomic_write(
        &out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?.as_bytes(),
    )?;
    atomic_write(
        &out_dir.join("summary.md"),
        render_summary(&metrics).as_bytes(),
    )?;
    Ok(out_dir.to_path_buf())
}

/// Sweep every configured filter strength against the same attacked inputs.
pub fn defense_sweep(
    built: &BuiltExperiment,
    cfg: &ExperimentConfig,
    clean: &[TokenSeq],
    adversarial: &[TokenSeq],
    section: &crate::config::DefenseSection,
) -> Result<String> {
    let mut csv = String::from("filter,strength,attacked,dsr,odr\n");
    let mut push_row = |name: &str, strength: f64, report: &DefenseReport| {
        csv.push_str(&format!(
            "{name},{strength},{},{:.6},{:.6}\n",
            report.attacked_count, report.dsr, report.odr
        ));
    };
    if !section.ppl_quantiles.is_empty() {
        let model = BigramModel::fit(clean, built.spec.vocab_size())?;
        for &q in &section.ppl_quantiles {
            let threshold = ppl_quantile(&model, clean, q)?;
            let defense = FilterDefense {
                kind: FilterKind::Perplexity {
                    model: model.clone(),
                    threshold,
                },
                trim: section.trim,
            };
            let report = defense_eval(&built.spec, &built.vocab, clean, adversarial, &defense)?;
            push_row("ppl", q, &report);
        }
    }
    for &t in &section.special_char_thresholds {
        let defense = FilterDefense {
            kind: FilterKind::SpecialChar { threshold: t },
            trim: section.trim,
        };
        let report = defense_eval(&built.spec, &built.vocab, clean, adversarial, &defense)?;
        push_row("special_char", t, &report);
    }
    for &t in &section.cpt_thresholds {
        let defense = FilterDefense {
            kind: FilterKind::CharsPerToken { threshold: t },
            trim: section.trim,
        };
        let report = defense_eval(&built.spec, &built.vocab, clean, adversarial, &defense)?;
        push_row("chars_per_token", t, &report);
    }
    if let Some(smoothing) = &section.smoothing {
        let report = smoothing_eval(&built.spec, clean, adversarial, smoothing, cfg.seed)?;
        push_row("smoothing", smoothing.sigma, &report);
    }
    Ok(csv)
}

/// Render the summary markdown: the clean table plus one Δ row per attacked
/// configuration.
pub fn render_summary(metrics: &MetricsFile) -> String {
    let mut s = String::from("# Experiment summary\n\n");
    s.push_str(&metric_markdown("Clean baseline", &metrics.clean));
    s.push('\n');
    if let Some(noise) = &metrics.random_noise {
        s.push_str(&metric_markdown("Random-noise baseline", noise));
        s.push('\n');
    }
    if !metrics.attacked.is_empty() {
        s.push_str("### Attacked (Δ vs clean)\n\n");
        s.push_str("| Config | Performance | Δ | Token cost | Δ | Time cost | Δ |\n");
        s.push_str("|---|---|---|---|---|---|---|\n");
        let c = &metrics.clean;
        for (key, m) in &metrics.attacked {
            s.push_str(&format!(
                "| {key} | {:.4} | {} | {:.4} | {} | {:.4} | {} |\n",
                m.task_metric.value,
                format_delta(c.task_metric.value, m.task_metric.value),
                m.normalized_token_cost,
                format_delta(c.normalized_token_cost, m.normalized_token_cost),
                m.simulated_time,
                format_delta(c.simulated_time, m.simulated_time),
            ));
        }
    }
    s
}

/// Stored suffix document for transfer evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuffixFile {
    #[serde(default)]
    pub suffix_tokens: Option<Vec<u32>>,
    #[serde(default)]
    pub suffix_text: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    /// Suffix surfaces that had no id in the target vocabulary.
    pub unknown_count: usize,
    pub clean: MetricReport,
    pub transferred: MetricReport,
    pub delta_performance: String,
    pub delta_token_cost: String,
    pub delta_time: String,
}

/// Apply a stored suffix to every sample of the target experiment. Text
/// suffixes are mapped through the target vocabulary's surfaces; unmappable
/// surfaces become the unknown id and are counted.
pub fn transfer_eval(built: &BuiltExperiment, suffix: &SuffixFile) -> Result<TransferReport> {
    let (tokens, unknown_count) = match (&suffix.suffix_text, &suffix.suffix_tokens) {
        (Some(text), _) => {
            let unknown = text
                .split_whitespace()
                .filter(|w| built.vocab.id_of(w).is_none())
                .count();
            (built.vocab.encode(text), unknown)
        }
        (None, Some(tokens)) => {
            let seq = TokenSeq::new(tokens.clone());
            built.vocab.check(&seq)?;
            (seq, 0)
        }
        (None, None) => {
            return Err(Error::config(
                "suffix file needs suffix_text or suffix_tokens",
            ))
        }
    };
    let clean_inputs: Vec<TokenSeq> = built.corpus.samples.iter().map(|s| s.x.clone()).collect();
    let clean = evaluate_batch(&built.spec, &built.corpus.samples, &clean_inputs)?;
    let transferred_inputs: Vec<TokenSeq> = clean_inputs.iter().map(|x| x.concat(&tokens)).collect();
    let transferred = evaluate_batch(&built.spec, &built.corpus.samples, &transferred_inputs)?;
    Ok(TransferReport {
        unknown_count,
        delta_performance: format_delta(
            clean.metric.task_metric.value,
            transferred.metric.task_metric.value,
        ),
        delta_token_cost: format_delta(
            clean.metric.normalized_token_cost,
            transferred.metric.normalized_token_cost,
        ),
        delta_time: format_delta(clean.metric.simulated_time, transferred.metric.simulated_time),
        clean: clean.metric,
        transferred: transferred.metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_formatting_matches_table_style() {
        assert_eq!(format_delta(0.52, 0.14), "-73.1%");
        assert_eq!(format_delta(1.0, 1.125), "+12.5%");
        assert_eq!(format_delta(1.0, 1.0), "+0.0%");
        assert_eq!(format_delta(0.0, 1.0), "n/a");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        // No stray temp files left behind.
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["a.txt".to_string()]);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let lines = vec![
            TraceLine {
                sample_id: 0,
                input_len: 3,
                stop_stage: 1,
                prediction: Label::Class(1),
                total_cost: 1.1,
                stage_correct: vec![Some(true), None],
                final_stage_correct: true,
                cascade_correct: true,
            },
            TraceLine {
                sample_id: 1,
                input_len: 3,
                stop_stage: 2,
                prediction: Label::Class(0),
                total_cost: 6.1,
                stage_correct: vec![Some(false), Some(true)],
                final_stage_correct: true,
                cascade_correct: true,
            },
        ];
        write_jsonl(&path, &lines).unwrap();
        let back: Vec<TraceLine> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].to_record().stop_stage, 2);
        assert_eq!(back[0].prediction, Label::Class(1));
    }
}
