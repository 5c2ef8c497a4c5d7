//! Ranking metrics: AUC, impression-weighted per-user AUC, and RelaImpr.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// One scored impression.
#[derive(Debug, Clone)]
pub struct ScoredExample {
    pub user_key: String,
    pub score: f64,
    pub label: bool,
}

/// Probability that a random positive outranks a random negative, with
/// ties counted half. Computed by average ranks; agrees with the pairwise
/// count exactly.
pub fn auc(examples: &[ScoredExample]) -> Result<f64> {
    let mut order: Vec<&ScoredExample> = examples.iter().collect();
    let positives = order.iter().filter(|e| e.label).count();
    let negatives = order.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative example",
        ));
    }
    order.sort_by(|a, b| a.score.partial_cmp(&b.score).expect("finite scores"));
    // sum of positive ranks with tied scores sharing their average rank
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share the average
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for e in &order[i..j] {
            if e.label {
                rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Weighted-AUC breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub weighted_auc: f64,
    pub users: usize,
    pub skipped_users: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rela_impr_vs: Option<RelaImpr>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaImpr {
    pub baseline: String,
    pub value_pct: f64,
}

/// Impression-weighted average of per-user AUCs. Users with a single label
/// class have no defined AUC and are excluded from both the numerator and
/// the denominator; they are tallied in `skipped_users`.
pub fn weighted_auc(examples: &[ScoredExample]) -> Result<(f64, usize, usize)> {
    let mut by_user: BTreeMap<&str, Vec<&ScoredExample>> = BTreeMap::new();
    for e in examples {
        by_user.entry(&e.user_key).or_default().push(e);
    }
    let mut weighted_sum = 0.0f64;
    let mut impressions = 0usize;
    let mut users = 0usize;
    let mut skipped = 0usize;
    for group in by_user.values() {
        let owned: Vec<ScoredExample> = group.iter().map(|e| (*e).clone()).collect();
        match auc(&owned) {
            Ok(user_auc) => {
                weighted_sum += group.len() as f64 * user_auc;
                impressions += group.len();
                users += 1;
            }
            Err(Error::UndefinedMetric(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if users == 0 {
        return Err(Error::UndefinedMetric(
            "no user has both positive and negative examples",
        ));
    }
    Ok((weighted_sum / impressions as f64, users, skipped))
}

/// Relative improvement over a baseline, measured against the random-guess
/// AUC of 0.5: `((measured - 0.5) / (base - 0.5) - 1) * 100`.
pub fn rela_impr(measured_auc: f64, base_auc: f64) -> Result<f64> {
    if base_auc == 0.5 {
        return Err(Error::DivisionByRandomBaseline);
    }
    Ok(((measured_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0)
}

/// Full evaluation report over scored examples.
pub fn evaluate(
    examples: &[ScoredExample],
    baseline: Option<(&str, f64)>,
) -> Result<MetricsReport> {
    let plain = auc(examples)?;
    let (wauc, users, skipped) = weighted_auc(examples)?;
    let rela = match baseline {
        Some((name, base)) => Some(RelaImpr {
            baseline: name.to_string(),
            value_pct: rela_impr(wauc, base)?,
        }),
        None => None,
    };
    Ok(MetricsReport {
        auc: plain,
        weighted_auc: wauc,
        users,
        skipped_users: skipped,
        rela_impr_vs: rela,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(user: &str, score: f64, label: bool) -> ScoredExample {
        ScoredExample {
            user_key: user.to_string(),
            score,
            label,
        }
    }

    fn examples(scores: &[f64], labels: &[u8]) -> Vec<ScoredExample> {
        scores
            .iter()
            .zip(labels)
            .map(|(&s, &l)| ex("u", s, l == 1))
            .collect()
    }

    /// O(P*N) pairwise oracle with ties counted half.
    pub(crate) fn brute_force_auc(examples: &[ScoredExample]) -> f64 {
        let pos: Vec<f64> = examples.iter().filter(|e| e.label).map(|e| e.score).collect();
        let neg: Vec<f64> = examples
            .iter()
            .filter(|e| !e.label)
            .map(|e| e.score)
            .collect();
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        wins / (pos.len() as f64 * neg.len() as f64)
    }

    #[test]
    fn pairwise_example() {
        // 3 of 4 positive-negative pairs correctly ordered
        let e = examples(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        assert!((auc(&e).unwrap() - 0.75).abs() < 1e-15);
        assert!((brute_force_auc(&e) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn separated_and_tied_scores() {
        let e = examples(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]);
        assert_eq!(auc(&e).unwrap(), 1.0);
        let e = examples(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 0, 1]);
        assert_eq!(auc(&e).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        let e = examples(&[0.1, 0.2], &[1, 1]);
        assert!(matches!(auc(&e).unwrap_err(), Error::UndefinedMetric(_)));
    }

    #[test]
    fn matches_brute_force_on_random_inputs() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.gen_range(2..50);
            let quantize = rng.gen_bool(0.5);
            let e: Vec<ScoredExample> = (0..n)
                .map(|_| {
                    let raw: f64 = rng.gen_range(0.0..1.0);
                    let score = if quantize { (raw * 8.0).round() / 8.0 } else { raw };
                    ex("u", score, rng.gen_bool(0.5))
                })
                .collect();
            match auc(&e) {
                Ok(fast) => {
                    let brute = brute_force_auc(&e);
                    assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
                }
                Err(_) => {
                    let pos = e.iter().filter(|x| x.label).count();
                    assert!(pos == 0 || pos == e.len());
                }
            }
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let e = examples(&[0.1, 0.4, 0.35, 0.8, 0.2], &[0, 1, 1, 1, 0]);
        let base = auc(&e).unwrap();
        let transformed: Vec<ScoredExample> = e
            .iter()
            .map(|x| ex("u", (x.score * 3.0).exp(), x.label))
            .collect();
        assert!((auc(&transformed).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn weighted_single_user_equals_plain() {
        let e = examples(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        let (wauc, users, skipped) = weighted_auc(&e).unwrap();
        assert!((wauc - 0.75).abs() < 1e-15);
        assert_eq!((users, skipped), (1, 0));
    }

    #[test]
    fn weighted_equal_impressions_is_plain_mean() {
        // user a: AUC 1.0 over 4 impressions, user b: AUC 0.5 over 4
        let mut e = vec![
            ex("a", 0.1, false),
            ex("a", 0.2, false),
            ex("a", 0.8, true),
            ex("a", 0.9, true),
        ];
        e.extend([
            ex("b", 0.5, false),
            ex("b", 0.5, true),
            ex("b", 0.5, false),
            ex("b", 0.5, true),
        ]);
        let (wauc, _, _) = weighted_auc(&e).unwrap();
        assert!((wauc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn weighted_by_impression_counts() {
        // user a: AUC 1.0 over 2 impressions; user b: AUC 0.5 over 6
        let mut e = vec![ex("a", 0.1, false), ex("a", 0.9, true)];
        for _ in 0..3 {
            e.push(ex("b", 0.5, false));
            e.push(ex("b", 0.5, true));
        }
        let (wauc, users, skipped) = weighted_auc(&e).unwrap();
        assert!((wauc - (2.0 * 1.0 + 6.0 * 0.5) / 8.0).abs() < 1e-15);
        assert_eq!((users, skipped), (2, 0));
    }

    #[test]
    fn single_class_users_are_skipped_from_both_sums() {
        let mut e = vec![ex("a", 0.1, false), ex("a", 0.9, true)];
        // user c has positives only: no defined AUC
        e.push(ex("c", 0.99, true));
        e.push(ex("c", 0.98, true));
        let (wauc, users, skipped) = weighted_auc(&e).unwrap();
        assert_eq!(wauc, 1.0);
        assert_eq!((users, skipped), (1, 1));
    }

    #[test]
    fn no_countable_users_is_undefined() {
        let e = vec![ex("a", 0.1, true), ex("b", 0.9, false)];
        assert!(matches!(
            weighted_auc(&e).unwrap_err(),
            Error::UndefinedMetric(_)
        ));
    }

    #[test]
    fn rela_impr_published_pairs() {
        // MovieLens and Amazon model-vs-base pairs, and the production pair
        let cases = [
            (0.7337, 0.7300, 1.61),
            (0.8818, 0.8624, 5.35),
            (0.6029, 0.5970, 6.08),
        ];
        for (measured, base, expect) in cases {
            let got = rela_impr(measured, base).unwrap();
            assert!(
                ((got * 100.0).round() / 100.0 - expect).abs() < 1e-9,
                "{measured}/{base}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn rela_impr_identity_and_monotonicity() {
        for x in [0.3, 0.55, 0.7, 0.99] {
            assert!((rela_impr(x, x).unwrap() - 0.0).abs() < 1e-12);
        }
        let a = rela_impr(0.70, 0.60).unwrap();
        let b = rela_impr(0.71, 0.60).unwrap();
        assert!(b > a);
        assert!(matches!(
            rela_impr(0.7, 0.5).unwrap_err(),
            Error::DivisionByRandomBaseline
        ));
    }

    #[test]
    fn report_serializes_expected_keys() {
        let e = vec![
            ex("a", 0.1, false),
            ex("a", 0.9, true),
            ex("b", 0.2, false),
            ex("b", 0.7, true),
        ];
        let report = evaluate(&e, Some(("base", 0.75))).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        assert!(json.get("auc").is_some());
        assert!(json.get("weighted_auc").is_some());
        assert!(json.get("users").is_some());
        assert!(json.get("skipped_users").is_some());
        assert_eq!(json["rela_impr_vs"]["baseline"], "base");
        let bare = evaluate(&e, None).unwrap();
        let json = serde_json::to_value(&bare).unwrap();
        assert!(json.get("rela_impr_vs").is_none());
    }
}
