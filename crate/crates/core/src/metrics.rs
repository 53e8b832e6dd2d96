//! Detection and attribution scoring against planted ground truth,
//! with stratified bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::attribution::AttributionReport;
use crate::detector::CascadeKind;
use crate::error::MetricError;
use crate::simulator::GroundTruth;

/// Per-turn inputs to the trace-level detection score.
#[derive(Debug, Clone, Copy)]
pub struct TurnEvidence {
    pub watch: bool,
    pub amp: f64,
    pub gap_contraction: f64,
    pub phase_shift: bool,
    pub cross_channel: bool,
}

/// Strongest propagation evidence over the trace: on watch turns the
/// evidence is `amp * max(dg, 0) + [phase] + [cross]`, otherwise 0.
pub fn trace_score(evidence: &[TurnEvidence]) -> f64 {
    evidence
        .iter()
        .map(|e| {
            if e.watch {
                e.amp * e.gap_contraction.max(0.0)
                    + f64::from(e.phase_shift)
                    + f64::from(e.cross_channel)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Outcome of running the pipeline over one trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceResult {
    pub id: String,
    pub score: f64,
    pub first_alert_turn: Option<u64>,
    pub alert_kind: Option<CascadeKind>,
    pub report: Option<AttributionReport>,
    pub truth: GroundTruth,
}

/// Mann-Whitney AUROC with ties counted half.
pub fn auroc(results: &[TraceResult]) -> Result<f64, MetricError> {
    let pos: Vec<f64> = results
        .iter()
        .filter(|r| r.truth.is_attack)
        .map(|r| r.score)
        .collect();
    let neg: Vec<f64> = results
        .iter()
        .filter(|r| !r.truth.is_attack)
        .map(|r| r.score)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricError::Undefined(
            "auroc needs both attack and benign traces".into(),
        ));
    }
    // Midrank formulation.
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j averaged
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let n_pos = pos.len() as f64;
    let n_neg = neg.len() as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// Highest TPR among thresholds whose empirical FPR stays within budget.
/// Thresholds classify `score >= theta` as positive.
pub fn tpr_at_fpr(results: &[TraceResult], fpr_budget: f64) -> Result<f64, MetricError> {
    let pos: Vec<f64> = results
        .iter()
        .filter(|r| r.truth.is_attack)
        .map(|r| r.score)
        .collect();
    let neg: Vec<f64> = results
        .iter()
        .filter(|r| !r.truth.is_attack)
        .map(|r| r.score)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricError::Undefined(
            "tpr_at_fpr needs both attack and benign traces".into(),
        ));
    }
    let mut thresholds: Vec<f64> = pos.iter().chain(neg.iter()).cloned().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let mut best = 0.0f64;
    for &theta in &thresholds {
        let fpr = neg.iter().filter(|&&s| s >= theta).count() as f64 / neg.len() as f64;
        if fpr <= fpr_budget {
            let tpr = pos.iter().filter(|&&s| s >= theta).count() as f64 / pos.len() as f64;
            best = best.max(tpr);
        }
    }
    Ok(best)
}

/// Fraction of attack traces whose first alert lands in
/// `[onset, onset + k]`, over all attack traces.
pub fn edr_at_k(results: &[TraceResult], k: u64) -> f64 {
    let mut attacks = 0usize;
    let mut early = 0usize;
    for r in results {
        let Some(onset) = r.truth.onset_turn else {
            continue;
        };
        attacks += 1;
        if let Some(alert) = r.first_alert_turn {
            if alert >= onset && alert <= onset + k {
                early += 1;
            }
        }
    }
    if attacks == 0 {
        0.0
    } else {
        early as f64 / attacks as f64
    }
}

/// Fraction of benign traces that raised any cascade alert.
pub fn benign_declaration_rate(results: &[TraceResult]) -> f64 {
    let benign: Vec<&TraceResult> = results.iter().filter(|r| !r.truth.is_attack).collect();
    if benign.is_empty() {
        return 0.0;
    }
    benign.iter().filter(|r| r.first_alert_turn.is_some()).count() as f64 / benign.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RoleMetrics {
    pub acc1: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct AttributionMetrics {
    pub origin: RoleMetrics,
    pub amplifier: RoleMetrics,
    pub bridge: RoleMetrics,
    pub joint_acc1: f64,
    pub spine_jaccard_at_3: f64,
    pub channel_acc: f64,
    pub attribution_lag: f64,
    /// Attack traces with a declared cascade (the metric population).
    pub declared_attacks: usize,
    /// Attack traces excluded for lack of a declaration.
    pub undeclared_attacks: usize,
}

fn role_scores(valid: &[usize], top: usize, ranking: &[usize]) -> (f64, f64) {
    if valid.is_empty() {
        return (0.0, 0.0);
    }
    let acc = f64::from(valid.contains(&top));
    let mrr = ranking
        .iter()
        .position(|a| valid.contains(a))
        .map(|p| 1.0 / (p + 1) as f64)
        .unwrap_or(0.0);
    (acc, mrr)
}

fn path_edges(path: &[usize]) -> BTreeSet<(usize, usize)> {
    path.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Attribution metrics over attack traces with a declared cascade.
pub fn attribution_metrics(results: &[TraceResult]) -> AttributionMetrics {
    let mut m = AttributionMetrics::default();
    let mut lag_sum = 0.0;
    let mut chan_sum = 0.0;
    let mut chan_traces = 0usize;
    for r in results {
        if !r.truth.is_attack {
            continue;
        }
        let Some(report) = &r.report else {
            m.undeclared_attacks += 1;
            continue;
        };
        m.declared_attacks += 1;
        let t = &r.truth;
        let (oa, om) = role_scores(&t.origin, report.origin, &report.role_rankings.origin);
        let (aa, am) = role_scores(
            &t.amplifier,
            report.amplifier,
            &report.role_rankings.amplifier,
        );
        let (ba, bm) = role_scores(&t.bridge, report.bridge, &report.role_rankings.bridge);
        m.origin.acc1 += oa;
        m.origin.mrr += om;
        m.amplifier.acc1 += aa;
        m.amplifier.mrr += am;
        m.bridge.acc1 += ba;
        m.bridge.mrr += bm;
        if oa > 0.0 && aa > 0.0 && ba > 0.0 {
            m.joint_acc1 += 1.0;
        }

        // Spine overlap: union of predicted top-3 edge sets against union
        // of planted spine edge sets.
        let mut pred: BTreeSet<(usize, usize)> = BTreeSet::new();
        for s in report.spines.iter().take(3) {
            pred.extend(path_edges(&s.path));
        }
        let mut truth_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for s in &t.spines {
            truth_edges.extend(path_edges(s));
        }
        let union = pred.union(&truth_edges).count();
        if union > 0 {
            m.spine_jaccard_at_3 += pred.intersection(&truth_edges).count() as f64 / union as f64;
        } else {
            m.spine_jaccard_at_3 += 1.0;
        }

        // Channel accuracy over predicted spines.
        let valid_channels: BTreeSet<_> = t.spine_channels.iter().collect();
        if !report.spines.is_empty() && !valid_channels.is_empty() {
            let hit = report
                .spines
                .iter()
                .filter(|s| valid_channels.contains(&s.dominant_channel))
                .count() as f64;
            chan_sum += hit / report.spines.len() as f64;
            chan_traces += 1;
        }

        if let (Some(onset), Some(alert)) = (t.onset_turn, r.first_alert_turn) {
            lag_sum += alert.saturating_sub(onset) as f64;
        }
    }
    let n = m.declared_attacks as f64;
    if m.declared_attacks > 0 {
        m.origin.acc1 /= n;
        m.origin.mrr /= n;
        m.amplifier.acc1 /= n;
        m.amplifier.mrr /= n;
        m.bridge.acc1 /= n;
        m.bridge.mrr /= n;
        m.joint_acc1 /= n;
        m.spine_jaccard_at_3 /= n;
        m.attribution_lag = lag_sum / n;
    }
    if chan_traces > 0 {
        m.channel_acc = chan_sum / chan_traces as f64;
    }
    m
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap with trace-level resampling, stratified by
/// (label, scenario family). Deterministic under seed; metric-undefined
/// resamples are redrawn a bounded number of times and counted.
pub fn bootstrap_ci<F>(
    metric: F,
    results: &[TraceResult],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(ConfidenceInterval, usize), MetricError>
where
    F: Fn(&[TraceResult]) -> Result<f64, MetricError>,
{
    assert!(resamples >= 100, "resamples must be at least 100");
    let point = metric(results)?;
    let mut strata: BTreeMap<(bool, String), Vec<usize>> = BTreeMap::new();
    for (idx, r) in results.iter().enumerate() {
        strata
            .entry((r.truth.is_attack, r.truth.scenario.clone()))
            .or_default()
            .push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    let mut redraws = 0usize;
    for _ in 0..resamples {
        let mut value = None;
        for _ in 0..100 {
            let mut sample: Vec<TraceResult> = Vec::with_capacity(results.len());
            for idxs in strata.values() {
                for _ in 0..idxs.len() {
                    let pick = idxs[rng.gen_range(0..idxs.len())];
                    sample.push(results[pick].clone());
                }
            }
            match metric(&sample) {
                Ok(v) => {
                    value = Some(v);
                    break;
                }
                Err(_) => redraws += 1,
            }
        }
        values.push(value.ok_or_else(|| {
            MetricError::Undefined("metric undefined on every bootstrap redraw".into())
        })?);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let tail = (1.0 - level) / 2.0;
    let lo = percentile(&values, tail);
    let hi = percentile(&values, 1.0 - tail);
    Ok((ConfidenceInterval { point, lo, hi }, redraws))
}

/// Linear-interpolation percentile of a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, score: f64, attack: bool) -> TraceResult {
        let mut truth = GroundTruth {
            scenario: if attack { "intent".into() } else { "benign".into() },
            is_attack: attack,
            cascade_kind: None,
            onset_turn: None,
            origin: Vec::new(),
            bridge: Vec::new(),
            amplifier: Vec::new(),
            spines: Vec::new(),
            spine_channels: Vec::new(),
        };
        if attack {
            truth.onset_turn = Some(10);
        }
        TraceResult {
            id: id.into(),
            score,
            first_alert_turn: None,
            alert_kind: None,
            report: None,
            truth,
        }
    }

    #[test]
    fn trace_score_is_zero_without_watch() {
        let ev = vec![
            TurnEvidence {
                watch: false,
                amp: 5.0,
                gap_contraction: 0.4,
                phase_shift: true,
                cross_channel: true,
            };
            6
        ];
        assert_eq!(trace_score(&ev), 0.0);
    }

    #[test]
    fn trace_score_hand_case() {
        let ev = vec![
            TurnEvidence {
                watch: true,
                amp: 1.5,
                gap_contraction: 0.2,
                phase_shift: true,
                cross_channel: false,
            },
            TurnEvidence {
                watch: true,
                amp: 1.1,
                gap_contraction: -0.3,
                phase_shift: false,
                cross_channel: false,
            },
        ];
        // turn 1: 1.5*0.2 + 1 = 1.3; turn 2: 1.1*0 + 0 = 0.
        assert!((trace_score(&ev) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn auroc_perfect_separation() {
        let rs = vec![
            result("a", 0.9, true),
            result("b", 0.8, true),
            result("c", 0.2, false),
            result("d", 0.1, false),
        ];
        assert_eq!(auroc(&rs).unwrap(), 1.0);
    }

    #[test]
    fn auroc_hand_case_three_quarters() {
        // scores (0.9, 0.8, 0.4, 0.1) labels (1, 0, 1, 0): 3 of 4 pairs
        // correctly ordered.
        let rs = vec![
            result("a", 0.9, true),
            result("b", 0.8, false),
            result("c", 0.4, true),
            result("d", 0.1, false),
        ];
        assert_eq!(auroc(&rs).unwrap(), 0.75);
    }

    #[test]
    fn auroc_matches_brute_force_pair_counting() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let rs: Vec<TraceResult> = (0..30)
                .map(|i| {
                    // Coarse grid forces ties.
                    let s = (rng.gen_range(0..6) as f64) / 5.0;
                    result(&format!("t{i}"), s, rng.gen_bool(0.5))
                })
                .collect();
            let pos: Vec<f64> = rs.iter().filter(|r| r.truth.is_attack).map(|r| r.score).collect();
            let neg: Vec<f64> = rs.iter().filter(|r| !r.truth.is_attack).map(|r| r.score).collect();
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let mut acc = 0.0;
            for &p in &pos {
                for &q in &neg {
                    if p > q {
                        acc += 1.0;
                    } else if p == q {
                        acc += 0.5;
                    }
                }
            }
            let brute = acc / (pos.len() * neg.len()) as f64;
            let fast = auroc(&rs).unwrap();
            assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
        }
    }

    #[test]
    fn auroc_null_permutation_is_half() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let mut labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let mut sum = 0.0;
        let shuffles = 1000;
        for _ in 0..shuffles {
            labels.shuffle(&mut rng);
            let rs: Vec<TraceResult> = scores
                .iter()
                .zip(&labels)
                .enumerate()
                .map(|(i, (&s, &l))| result(&format!("t{i}"), s, l))
                .collect();
            sum += auroc(&rs).unwrap();
        }
        let mean = sum / shuffles as f64;
        assert!((mean - 0.5).abs() < 0.05, "null mean {mean}");
    }

    #[test]
    fn auroc_single_class_is_error() {
        let rs = vec![result("a", 0.9, true)];
        assert!(auroc(&rs).is_err());
    }

    #[test]
    fn tpr_perfect_and_degenerate() {
        let rs = vec![
            result("a", 0.9, true),
            result("b", 0.8, true),
            result("c", 0.2, false),
            result("d", 0.1, false),
        ];
        assert_eq!(tpr_at_fpr(&rs, 0.01).unwrap(), 1.0);
        // All scores equal: no threshold excludes benign mass.
        let flat: Vec<TraceResult> = (0..40)
            .map(|i| result(&format!("t{i}"), 0.5, i % 2 == 0))
            .collect();
        assert_eq!(tpr_at_fpr(&flat, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn tpr_matches_exhaustive_sweep() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rs: Vec<TraceResult> = (0..40)
            .map(|i| {
                let attack = i < 20;
                let s: f64 = if attack {
                    rng.gen_range(0.3..1.0)
                } else {
                    rng.gen_range(0.0..0.7)
                };
                result(&format!("t{i}"), (s * 20.0).round() / 20.0, attack)
            })
            .collect();
        let budget = 0.05;
        // Oracle: sweep every score as a threshold directly.
        let pos: Vec<f64> = rs.iter().filter(|r| r.truth.is_attack).map(|r| r.score).collect();
        let neg: Vec<f64> = rs.iter().filter(|r| !r.truth.is_attack).map(|r| r.score).collect();
        let mut want = 0.0f64;
        for r in &rs {
            let theta = r.score;
            let fpr = neg.iter().filter(|&&s| s >= theta).count() as f64 / neg.len() as f64;
            let tpr = pos.iter().filter(|&&s| s >= theta).count() as f64 / pos.len() as f64;
            if fpr <= budget {
                want = want.max(tpr);
            }
        }
        assert_eq!(tpr_at_fpr(&rs, budget).unwrap(), want);
    }

    #[test]
    fn tpr_nondecreasing_in_budget() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rs: Vec<TraceResult> = (0..60)
            .map(|i| result(&format!("t{i}"), rng.gen(), i % 3 == 0))
            .collect();
        let mut prev = 0.0;
        for b in [0.0, 0.05, 0.1, 0.3, 0.6, 1.0] {
            let v = tpr_at_fpr(&rs, b).unwrap();
            assert!(v + 1e-12 >= prev);
            prev = v;
        }
    }

    #[test]
    fn edr_boundaries() {
        let mut hit = result("a", 1.0, true);
        hit.first_alert_turn = Some(10); // exactly at onset
        let mut edge = result("b", 1.0, true);
        edge.first_alert_turn = Some(15); // onset + 5
        let mut late = result("c", 1.0, true);
        late.first_alert_turn = Some(16); // onset + 6
        let silent = result("d", 1.0, true);
        let rs = vec![hit, edge, late, silent];
        assert_eq!(edr_at_k(&rs, 5), 0.5);
    }

    #[test]
    fn bootstrap_constant_metric_collapses() {
        let rs: Vec<TraceResult> = (0..20)
            .map(|i| result(&format!("t{i}"), 0.5, i % 2 == 0))
            .collect();
        let (ci, _) = bootstrap_ci(|_| Ok(0.7), &rs, 200, 0.95, 1).unwrap();
        assert_eq!(ci.point, 0.7);
        assert_eq!(ci.lo, 0.7);
        assert_eq!(ci.hi, 0.7);
    }

    #[test]
    fn bootstrap_deterministic_under_seed() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rs: Vec<TraceResult> = (0..40)
            .map(|i| result(&format!("t{i}"), rng.gen(), i % 2 == 0))
            .collect();
        let a = bootstrap_ci(auroc, &rs, 300, 0.95, 99).unwrap();
        let b = bootstrap_ci(auroc, &rs, 300, 0.95, 99).unwrap();
        assert_eq!(a.0.lo, b.0.lo);
        assert_eq!(a.0.hi, b.0.hi);
        let c = bootstrap_ci(auroc, &rs, 300, 0.95, 100).unwrap();
        assert!(a.0.lo != c.0.lo || a.0.hi != c.0.hi);
    }

    #[test]
    fn bootstrap_interval_shrinks_with_sample_size() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mk = |n: usize, rng: &mut ChaCha8Rng| -> Vec<TraceResult> {
            (0..n)
                .map(|i| {
                    let attack = i % 2 == 0;
                    // Overlapping score ranges so the statistic has
                    // genuine sampling variance.
                    let s = if attack {
                        0.3 + 0.7 * rng.gen::<f64>()
                    } else {
                        0.6 * rng.gen::<f64>()
                    };
                    result(&format!("t{i}"), s, attack)
                })
                .collect()
        };
        let small = mk(50, &mut rng);
        let large = mk(500, &mut rng);
        let (ci_s, _) = bootstrap_ci(auroc, &small, 300, 0.95, 7).unwrap();
        let (ci_l, _) = bootstrap_ci(auroc, &large, 300, 0.95, 7).unwrap();
        assert!(ci_l.hi - ci_l.lo < ci_s.hi - ci_s.lo);
    }

    #[test]
    fn percentile_interpolates() {
        let v = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert!((percentile(&v, 0.5) - 2.5).abs() < 1e-12);
    }
}
