//! Exact verification of the routing-partition decomposition: stopping
//! events, the cascade-error decomposition, the cascade-vs-standalone gap,
//! and the attribution of adversarial gap changes to routing shift vs
//! conditional-gap amplification.
//!
//! All probabilities are exact integer count ratios internally; floats
//! appear only at the reporting boundary.

use serde::{Deserialize, Serialize};

use crate::cascade::{run_cascade, CascadeSpec};
use crate::error::{Error, Result};
use crate::zoo::Sample;

/// Exact rational over i128, normalized. Only used for the small attribution
/// sums, where denominators stay tiny (products of subset sizes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Frac {
    num: i128,
    den: i128,
}

impl Frac {
    pub fn new(num: i128, den: i128) -> Frac {
        assert!(den != 0, "zero denominator");
        let mut f = Frac { num, den };
        f.normalize();
        f
    }

    pub const ZERO: Frac = Frac { num: 0, den: 1 };

    fn normalize(&mut self) {
        if self.den < 0 {
            self.num = -self.num;
            self.den = -self.den;
        }
        let g = gcd(self.num.unsigned_abs(), self.den.unsigned_abs());
        if g > 1 {
            self.num /= g as i128;
            self.den /= g as i128;
        }
    }

    pub fn add(self, other: Frac) -> Frac {
        Frac::new(
            self.num * other.den + other.num * self.den,
            self.den * other.den,
        )
    }

    pub fn sub(self, other: Frac) -> Frac {
        Frac::new(
            self.num * other.den - other.num * self.den,
            self.den * other.den,
        )
    }

    pub fn mul(self, other: Frac) -> Frac {
        Frac::new(self.num * other.num, self.den * other.den)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

/// Routing outcome of one sample: where it stopped, per-stage correctness of
/// every evaluated stage, and the standalone final-stage correctness
/// (evaluated out-of-band even when the cascade stopped early; that
/// evaluation is excluded from cost accounting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub sample_id: u64,
    pub stop_stage: usize,
    /// `stage_correct[i-1]` is `Some(bit)` for every stage `i <= stop_stage`
    /// and for the final stage; `None` for unevaluated middle stages.
    pub stage_correct: Vec<Option<bool>>,
    pub final_stage_correct: bool,
    /// Whether the cascade's returned output matches the label.
    pub cascade_correct: bool,
}

/// One record per sample: stopping stage from the cascade run plus the
/// standalone final-stage evaluation on the same input.
pub fn routing_stats(spec: &CascadeSpec, samples: &[Sample]) -> Result<Vec<RoutingRecord>> {
    let l = spec.stage_count();
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let trace = run_cascade(spec, &s.x)?;
        let mut stage_correct: Vec<Option<bool>> = vec![None; l];
        for rec in &trace.per_stage {
            stage_correct[rec.stage_index - 1] =
                Some(rec.output.prediction.matches(&s.label));
        }
        let final_correct = match stage_correct[l - 1] {
            Some(bit) => bit,
            None => {
                let bit = spec.stage(l).predict(&s.x).prediction.matches(&s.label);
                stage_correct[l - 1] = Some(bit);
                bit
            }
        };
        records.push(RoutingRecord {
            sample_id: s.id,
            stop_stage: trace.stopping_index,
            stage_correct,
            final_stage_correct: final_correct,
            cascade_correct: trace.final_output.matches(&s.label),
        });
    }
    Ok(records)
}

/// The routing-partition decomposition over a finite record set. Counts are
/// exact; the derived probabilities are count ratios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub n: usize,
    pub stage_count: usize,
    pub subset_counts: Vec<usize>,
    /// `count(S_i ∧ f^i wrong)` per stage.
    pub stage_error_counts: Vec<usize>,
    /// `count(S_i ∧ f^l wrong)` per stage.
    pub final_error_counts: Vec<usize>,
    /// Direct count of wrong cascade outputs.
    pub cascade_error_count: usize,
    /// Direct count of wrong standalone final-stage predictions.
    pub final_error_count: usize,
    pub pr_s: Vec<f64>,
    pub cond_err_stage: Vec<f64>,
    pub cond_err_final: Vec<f64>,
    pub pr_a_cas: f64,
    pub pr_final_err: f64,
    pub gap: f64,
    /// The `l-1` summands `Pr[S_i] * (cond_err_stage_i - cond_err_final_i)`.
    pub per_term: Vec<f64>,
}

/// Compute the decomposition. The partition, decomposition, and gap
/// identities hold with exact integer equality by construction; tests
/// re-check them against independent counts.
pub fn decomposition(records: &[RoutingRecord]) -> Result<DecompositionReport> {
    if records.is_empty() {
        return Err(Error::integrity("decomposition over an empty record set"));
    }
    let l = records[0].stage_correct.len();
    let n = records.len();
    let mut subset_counts = vec![0usize; l];
    let mut stage_error_counts = vec![0usize; l];
    let mut final_error_counts = vec![0usize; l];
    let mut cascade_error_count = 0usize;
    let mut final_error_count = 0usize;
    for rec in records {
        let i = rec.stop_stage - 1;
        subset_counts[i] += 1;
        let stage_ok = rec.stage_correct[i]
            .ok_or_else(|| Error::integrity("stopping stage lacks a correctness bit"))?;
        if !stage_ok {
            stage_error_counts[i] += 1;
        }
        if !rec.final_stage_correct {
            final_error_counts[i] += 1;
            final_error_count += 1;
        }
        if !rec.cascade_correct {
            cascade_error_count += 1;
        }
    }

    let cond = |err: usize, total: usize| if total == 0 { 0.0 } else { err as f64 / total as f64 };
    let pr_s: Vec<f64> = subset_counts.iter().map(|&c| c as f64 / n as f64).collect();
    let cond_err_stage: Vec<f64> = stage_error_counts
        .iter()
        .zip(&subset_counts)
        .map(|(&e, &c)| cond(e, c))
        .collect();
    let cond_err_final: Vec<f64> = final_error_counts
        .iter()
        .zip(&subset_counts)
        .map(|(&e, &c)| cond(e, c))
        .collect();
    // Per-term values collapse to integer-over-N ratios.
    let per_term: Vec<f64> = (0..l.saturating_sub(1))
        .map(|i| (stage_error_counts[i] as f64 - final_error_counts[i] as f64) / n as f64)
        .collect();
    let pr_a_cas = stage_error_counts.iter().sum::<usize>() as f64 / n as f64;
    let pr_final_err = final_error_count as f64 / n as f64;

    Ok(DecompositionReport {
        n,
        stage_count: l,
        subset_counts,
        stage_error_counts,
        final_error_counts,
        cascade_error_count,
        final_error_count,
        pr_s,
        cond_err_stage,
        cond_err_final,
        pr_a_cas,
        pr_final_err,
        gap: (cascade_error_count as f64 - final_error_count as f64) / n as f64,
        per_term,
    })
}

/// Per-stage attribution of the adversarial gap change.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapShiftTerm {
    pub stage: usize,
    /// `(Pr[S_i(x')] - Pr[S_i(x)]) * clean conditional gap`.
    pub routing_shift: f64,
    /// `Pr[S_i(x)] * (adv conditional gap - clean conditional gap)`.
    pub conditional_gap: f64,
    /// Interaction of simultaneous routing and conditional changes.
    pub cross: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapShiftReport {
    pub delta_clean: f64,
    pub delta_adv: f64,
    pub delta_change: f64,
    pub per_stage: Vec<GapShiftTerm>,
    pub routing_shift_total: f64,
    pub conditional_gap_total: f64,
    pub cross_total: f64,
}

fn cond_gap_frac(stage_err: usize, final_err: usize, subset: usize) -> Frac {
    if subset == 0 {
        // Empty routed subset: conditional gap defined as zero.
        Frac::ZERO
    } else {
        Frac::new(stage_err as i128 - final_err as i128, subset as i128)
    }
}

/// Attribute `Δ(x') - Δ(x)` to routing shift, conditional-gap amplification,
/// and their interaction. The three attributions sum to the gap change
/// exactly (verified in rational arithmetic before converting to floats).
pub fn gap_shift(
    clean_records: &[RoutingRecord],
    adv_records: &[RoutingRecord],
) -> Result<GapShiftReport> {
    if clean_records.len() != adv_records.len() {
        return Err(Error::integrity("clean and adversarial record sets differ in size"));
    }
    for (c, a) in clean_records.iter().zip(adv_records) {
        if c.sample_id != a.sample_id {
            return Err(Error::integrity(format!(
                "unpaired sample ids {} vs {}",
                c.sample_id, a.sample_id
            )));
        }
    }
    let clean = decomposition(clean_records)?;
    let adv = decomposition(adv_records)?;
    if clean.stage_count != adv.stage_count {
        return Err(Error::integrity("stage counts differ between record sets"));
    }
    let l = clean.stage_count;
    let n = clean.n as i128;

    let mut per_stage = Vec::new();
    let mut total_a = Frac::ZERO;
    let mut total_b = Frac::ZERO;
    let mut total_x = Frac::ZERO;
    let mut delta_change = Frac::ZERO;
    for i in 0..l.saturating_sub(1) {
        let p_clean = Frac::new(clean.subset_counts[i] as i128, n);
        let p_adv = Frac::new(adv.subset_counts[i] as i128, n);
        let g_clean = cond_gap_frac(
            clean.stage_error_counts[i],
            clean.final_error_counts[i],
            clean.subset_counts[i],
        );
        let g_adv = cond_gap_frac(
            adv.stage_error_counts[i],
            adv.final_error_counts[i],
            adv.subset_counts[i],
        );
        let dp = p_adv.sub(p_clean);
        let dg = g_adv.sub(g_clean);
        let a = dp.mul(g_clean);
        let b = p_clean.mul(dg);
        let x = dp.mul(dg);
        total_a = total_a.add(a);
        total_b = total_b.add(b);
        total_x = total_x.add(x);
        delta_change = delta_change.add(p_adv.mul(g_adv).sub(p_clean.mul(g_clean)));
        per_stage.push(GapShiftTerm {
            stage: i + 1,
            routing_shift: a.to_f64(),
            conditional_gap: b.to_f64(),
            cross: x.to_f64(),
        });
    }

    // Attribution completeness, checked exactly.
    let attributed = total_a.add(total_b).add(total_x);
    if attributed != delta_change {
        return Err(Error::integrity(
            "gap attribution does not sum to the gap change (empty-subset convention violated)",
        ));
    }

    Ok(GapShiftReport {
        delta_clean: clean.gap,
        delta_adv: adv.gap,
        delta_change: delta_change.to_f64(),
        per_stage,
        routing_shift_total: total_a.to_f64(),
        conditional_gap_total: total_b.to_f64(),
        cross_total: total_x.to_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{make_planted_cascade, PlantedProfile};

    fn planted_records(
        routing: Vec<f64>,
        accuracy: Vec<Vec<f64>>,
        n: usize,
        seed: u64,
    ) -> Vec<RoutingRecord> {
        let profile = PlantedProfile::uniform_costs(n, 2, routing, accuracy);
        let (spec, corpus, _) = make_planted_cascade(&profile, seed).unwrap();
        routing_stats(&spec, &corpus.samples).unwrap()
    }

    #[test]
    fn frac_arithmetic() {
        let a = Frac::new(1, 2);
        let b = Frac::new(1, 3);
        assert_eq!(a.add(b), Frac::new(5, 6));
        assert_eq!(a.sub(b), Frac::new(1, 6));
        assert_eq!(a.mul(b), Frac::new(1, 6));
        assert_eq!(Frac::new(2, -4), Frac::new(-1, 2));
    }

    #[test]
    fn partition_and_decomposition_identities() {
        let records = planted_records(
            vec![0.25, 0.25, 0.5],
            vec![
                vec![0.5, 0.75, 1.0],
                vec![0.25, 0.5, 0.75],
                vec![0.8, 0.9, 0.95],
            ],
            80,
            11,
        );
        let d = decomposition(&records).unwrap();
        assert_eq!(d.subset_counts.iter().sum::<usize>(), d.n);
        assert_eq!(d.stage_error_counts.iter().sum::<usize>(), d.cascade_error_count);
        assert_eq!(d.final_error_counts.iter().sum::<usize>(), d.final_error_count);
        // Gap two ways.
        let by_sum: f64 = d.per_term.iter().sum();
        assert!((d.gap - by_sum).abs() < 1e-15);
    }

    #[test]
    fn perfect_models_zero_gap() {
        let records = planted_records(
            vec![0.5, 0.5],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            20,
            1,
        );
        let d = decomposition(&records).unwrap();
        assert_eq!(d.pr_a_cas, 0.0);
        assert_eq!(d.gap, 0.0);
    }

    #[test]
    fn planted_gap_value() {
        // Pr[S_1]=0.5, errors 0.4 vs 0.1 on S_1, equal on S_2:
        // gap = 0.5 * (0.4 - 0.1) = 0.15.
        let records = planted_records(
            vec![0.5, 0.5],
            vec![vec![0.6, 0.9], vec![0.8, 0.8]],
            40,
            3,
        );
        let d = decomposition(&records).unwrap();
        assert_eq!(d.gap, 0.15);
    }

    #[test]
    fn inverted_fixture_negative_gap() {
        // Early stage better than the final model on its routed subset.
        let records = planted_records(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.6], vec![0.8, 0.8]],
            40,
            3,
        );
        let d = decomposition(&records).unwrap();
        assert!(d.gap < 0.0);
    }

    #[test]
    fn gap_shift_no_attack_is_all_zero() {
        let records = planted_records(
            vec![0.5, 0.5],
            vec![vec![0.6, 0.9], vec![0.8, 0.8]],
            40,
            3,
        );
        let r = gap_shift(&records, &records).unwrap();
        assert_eq!(r.delta_change, 0.0);
        assert_eq!(r.routing_shift_total, 0.0);
        assert_eq!(r.conditional_gap_total, 0.0);
        assert_eq!(r.cross_total, 0.0);
    }

    #[test]
    fn unpaired_records_rejected() {
        let a = planted_records(vec![0.5, 0.5], vec![vec![1.0, 1.0], vec![1.0, 1.0]], 20, 1);
        let mut b = a.clone();
        b[0].sample_id = 999;
        assert!(gap_shift(&a, &b).is_err());
    }
}
