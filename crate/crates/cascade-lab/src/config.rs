//! Experiment configuration documents: versioned JSON in, validated cascade
//! construction out.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackMode, Backend, LossKind, Neighborhood};
use crate::cascade::{CascadeSpec, DecisionModule, StageModel};
use crate::defense::SmoothingConfig;
use crate::error::{Error, Result};
use crate::remote::RemoteStageModel;
use crate::token::Vocabulary;
use crate::zoo::{
    generate_class_corpus, make_planted_cascade, ClassVocabLayout, LinearDecider, PlantedProfile,
    SyntheticCorpus, ThresholdDecider,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub cascade: CascadeConfig,
    #[serde(default)]
    pub attack: Option<AttackSection>,
    #[serde(default)]
    pub defense: Option<DefenseSection>,
    /// Pass-rate sweep for joint attacks; ignored for other modes.
    #[serde(default)]
    pub p_sweep: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CascadeConfig {
    /// Exact-probability planted fixture (table models + table routing).
    Planted {
        corpus_size: usize,
        class_count: usize,
        routing: Vec<f64>,
        accuracy: Vec<Vec<f64>>,
        #[serde(default)]
        stage_costs: Vec<f64>,
        #[serde(default)]
        param_scales: Vec<f64>,
        #[serde(default = "default_decider_cost")]
        decider_cost: f64,
    },
    /// Class-block corpus with linear bag stages and attackable deciders.
    ClassLinear {
        class_count: usize,
        block_size: usize,
        attack_tokens: usize,
        corpus_size: usize,
        sample_len: usize,
        hard_fraction: f64,
        stages: Vec<StageConfig>,
        deciders: Vec<DeciderConfig>,
    },
}

fn default_decider_cost() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageConfig {
    /// Unit-weight class-indicator linear model over the layout.
    Indicator {
        attack_weight: f64,
        #[serde(default)]
        cost_per_token: f64,
        cost_base: f64,
        param_scale: f64,
    },
    /// HTTP-backed stage; excluded from determinism guarantees.
    Remote {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        cost_base: f64,
        param_scale: f64,
    },
}

fn default_timeout_ms() -> u64 {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeciderConfig {
    /// Escalate iff the stage's softmax margin is below the threshold.
    Threshold {
        threshold: f64,
        cost_base: f64,
        param_scale: f64,
    },
    /// Input-reading sigmoid decider; attack tokens carry `attack_weight`
    /// with alternating sign when `alternate_sign` is set, so the suffix
    /// search can steer escalation in both directions.
    Linear {
        attack_weight: f64,
        #[serde(default)]
        alternate_sign: bool,
        bias: f64,
        threshold: f64,
        cost_base: f64,
        param_scale: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSection {
    pub mode: AttackMode,
    pub target_stages: Vec<usize>,
    pub rounds: usize,
    pub iterations: usize,
    pub suffix_slots_per_phase: usize,
    pub candidate_pool_size: usize,
    pub substitutions_per_iteration: usize,
    #[serde(default = "default_pass_rate")]
    pub pass_rate: f64,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default)]
    pub loss: LossKind,
}

fn default_pass_rate() -> f64 {
    1.0
}

fn default_backend() -> Backend {
    Backend::Greedy
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseSection {
    #[serde(default)]
    pub ppl_quantiles: Vec<f64>,
    #[serde(default)]
    pub special_char_thresholds: Vec<f64>,
    #[serde(default)]
    pub cpt_thresholds: Vec<f64>,
    pub trim: usize,
    #[serde(default)]
    pub smoothing: Option<SmoothingConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Validation collects every offending field into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        if self.schema != SCHEMA_VERSION {
            problems.push(format!(
                "schema: got {}, this build reads {SCHEMA_VERSION}",
                self.schema
            ));
        }
        match &self.cascade {
            CascadeConfig::Planted {
                corpus_size,
                class_count,
                routing,
                accuracy,
                ..
            } => {
                if *corpus_size == 0 {
                    problems.push("cascade.corpus_size: must be positive".into());
                }
                if *class_count < 2 {
                    problems.push("cascade.class_count: must be at least 2".into());
                }
                if routing.is_empty() {
                    problems.push("cascade.routing: must list at least one stage".into());
                }
                if accuracy.len() != routing.len() {
                    problems.push(format!(
                        "cascade.accuracy: {} rows for {} routing entries",
                        accuracy.len(),
                        routing.len()
                    ));
                }
            }
            CascadeConfig::ClassLinear {
                class_count,
                block_size,
                attack_tokens,
                corpus_size,
                sample_len,
                hard_fraction,
                stages,
                deciders,
            } => {
                if *class_count < 2 {
                    problems.push("cascade.class_count: must be at least 2".into());
                }
                if *block_size == 0 {
                    problems.push("cascade.block_size: must be positive".into());
                }
                if *attack_tokens == 0 {
                    problems.push("cascade.attack_tokens: must be positive".into());
                }
                if *corpus_size == 0 {
                    problems.push("cascade.corpus_size: must be positive".into());
                }
                if *sample_len == 0 {
                    problems.push("cascade.sample_len: must be positive".into());
                }
                if !(0.0..=1.0).contains(hard_fraction) {
                    problems.push(format!(
                        "cascade.hard_fraction: {hard_fraction} outside [0, 1]"
                    ));
                }
                if stages.is_empty() {
                    problems.push("cascade.stages: must list at least one stage".into());
                }
                if deciders.len() + 1 != stages.len() {
                    problems.push(format!(
                        "cascade.deciders: {} entries for {} stages (need stages - 1)",
                        deciders.len(),
                        stages.len()
                    ));
                }
            }
        }
        if let Some(attack) = &self.attack {
            if attack.target_stages.is_empty() {
                problems.push("attack.target_stages: must be non-empty".into());
            }
            if attack.rounds == 0 {
                problems.push("attack.rounds: must be positive".into());
            }
            if attack.iterations == 0 {
                problems.push("attack.iterations: must be positive".into());
            }
            if attack.suffix_slots_per_phase == 0 {
                problems.push("attack.suffix_slots_per_phase: must be positive".into());
            }
            if attack.candidate_pool_size == 0 {
                problems.push("attack.candidate_pool_size: must be positive".into());
            }
            if !(0.0..=1.0).contains(&attack.pass_rate) {
                problems.push(format!(
                    "attack.pass_rate: {} outside [0, 1]",
                    attack.pass_rate
                ));
            }
        }
        if let Some(sweep) = &self.p_sweep {
            for p in sweep {
                if !(0.0..=1.0).contains(p) {
                    problems.push(format!("p_sweep: {p} outside [0, 1]"));
                }
            }
        }
        if let Some(defense) = &self.defense {
            for q in &defense.ppl_quantiles {
                if !(0.0..=1.0).contains(q) {
                    problems.push(format!("defense.ppl_quantiles: {q} outside [0, 1]"));
                }
            }
            if let Some(s) = &defense.smoothing {
                if s.sigma < 0.0 {
                    problems.push(format!("defense.smoothing.sigma: {} negative", s.sigma));
                }
                if s.sigma > 0.0 && s.votes == 0 {
                    problems.push("defense.smoothing.votes: must be positive".into());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }

    /// Attack config over the built layout's attack vocabulary, with the
    /// pass rate overridden per sweep point.
    pub fn attack_config(&self, layout: &ClassVocabLayout, pass_rate: f64) -> Option<AttackConfig> {
        self.attack.as_ref().map(|a| AttackConfig {
            target_stages: a.target_stages.clone(),
            iterations: a.iterations,
            pass_rate,
            seed: self.seed,
            backend: a.backend,
            mode: a.mode,
            loss: a.loss,
            neighborhood: Neighborhood {
                suffix_slots_per_phase: a.suffix_slots_per_phase,
                rounds: a.rounds,
                candidate_pool_size: a.candidate_pool_size,
                substitutions_per_iteration: a.substitutions_per_iteration,
                attack_vocab: layout.attack_vocab(),
            },
        })
    }
}

/// A constructed experiment: cascade, corpus, and the shared vocabulary.
pub struct BuiltExperiment {
    pub spec: CascadeSpec,
    pub corpus: SyntheticCorpus,
    pub layout: ClassVocabLayout,
    pub vocab: Vocabulary,
    /// True when any stage is remote; determinism guarantees are then void.
    pub has_remote: bool,
}

/// Build the cascade and corpus a config describes.
pub fn build_experiment(cfg: &ExperimentConfig) -> Result<BuiltExperiment> {
    cfg.validate()?;
    match &cfg.cascade {
        CascadeConfig::Planted {
            corpus_size,
            class_count,
            routing,
            accuracy,
            stage_costs,
            param_scales,
            decider_cost,
        } => {
            let profile = PlantedProfile {
                corpus_size: *corpus_size,
                class_count: *class_count,
                routing: routing.clone(),
                accuracy: accuracy.clone(),
                stage_costs: stage_costs.clone(),
                param_scales: param_scales.clone(),
                decider_cost: *decider_cost,
            };
            let (spec, corpus, layout) = make_planted_cascade(&profile, cfg.seed)?;
            let vocab = layout.vocab();
            Ok(BuiltExperiment {
                spec,
                corpus,
                layout,
                vocab,
                has_remote: false,
            })
        }
        CascadeConfig::ClassLinear {
            class_count,
            block_size,
            attack_tokens,
            corpus_size,
            sample_len,
            hard_fraction,
            stages,
            deciders,
        } => {
            let layout = ClassVocabLayout {
                class_count: *class_count,
                block_size: *block_size,
                attack_tokens: *attack_tokens,
            };
            let vocab = layout.vocab();
            let corpus = generate_class_corpus(
                &layout,
                *corpus_size,
                *sample_len,
                *hard_fraction,
                cfg.seed,
            )?;
            let mut has_remote = false;
            let mut stage_models: Vec<Box<dyn StageModel>> = Vec::new();
            for s in stages {
                match s {
                    StageConfig::Indicator {
                        attack_weight,
                        cost_per_token,
                        cost_base,
                        param_scale,
                    } => stage_models.push(Box::new(layout.indicator_model(
                        *attack_weight,
                        *cost_per_token,
                        *cost_base,
                        *param_scale,
                    ))),
                    StageConfig::Remote {
                        url,
                        timeout_ms,
                        cost_base,
                        param_scale,
                    } => {
                        has_remote = true;
                        let model = RemoteStageModel::new(
                            url.clone(),
                            *timeout_ms,
                            vocab.clone(),
                            *class_count,
                            *cost_base,
                            *param_scale,
                        )?;
                        stage_models.push(Box::new(model));
                    }
                }
            }
            let mut decision_modules: Vec<Box<dyn DecisionModule>> = Vec::new();
            for d in deciders {
                match d {
                    DeciderConfig::Threshold {
                        threshold,
                        cost_base,
                        param_scale,
                    } => decision_modules.push(Box::new(ThresholdDecider::new(
                        *threshold,
                        0.0,
                        *cost_base,
                        *param_scale,
                    ))),
                    DeciderConfig::Linear {
                        attack_weight,
                        alternate_sign,
                        bias,
                        threshold,
                        cost_base,
                        param_scale,
                    } => {
                        let mut weights = vec![0.0; layout.vocab_size()];
                        for k in 0..layout.attack_tokens {
                            let sign = if *alternate_sign && k % 2 == 1 { -1.0 } else { 1.0 };
                            weights[layout.attack_token(k) as usize] = attack_weight * sign;
                        }
                        decision_modules.push(Box::new(LinearDecider::new(
                            weights,
                            *bias,
                            *threshold,
                            0.0,
                            *cost_base,
                            *param_scale,
                        )));
                    }
                }
            }
            let spec = CascadeSpec::new(
                stage_models,
                decision_modules,
                layout.vocab_size(),
                *class_count,
            )?;
            Ok(BuiltExperiment {
                spec,
                corpus,
                layout,
                vocab,
                has_remote,
            })
        }
    }
}
