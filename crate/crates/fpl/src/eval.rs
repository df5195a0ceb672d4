//! Top-N evaluation: accuracy (P@N, R@N, F1), diversity (IC@N, G@N), and
//! paired t-test significance over per-user metric vectors.

use std::collections::HashSet;

use crate::error::{FplError, Result};

/// Aggregate metrics at one cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub cutoff: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub item_coverage: f64,
    pub gini: f64,
    pub per_user_precision: Vec<f64>,
    pub per_user_recall: Vec<f64>,
}

/// Per-user precision and recall at cutoff n, averaged over users with a
/// non-empty test set. The precision denominator is n even for short lists.
pub fn precision_recall_at_n(
    recommendations: &[Vec<usize>],
    test_positives: &[Vec<usize>],
    n: usize,
) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let mut per_user_precision = Vec::new();
    let mut per_user_recall = Vec::new();
    for (list, test) in recommendations.iter().zip(test_positives) {
        if test.is_empty() {
            continue;
        }
        let test_set: HashSet<&usize> = test.iter().collect();
        let hits = list
            .iter()
            .take(n)
            .filter(|item| test_set.contains(item))
            .count();
        per_user_precision.push(hits as f64 / n as f64);
        per_user_recall.push(hits as f64 / test.len() as f64);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    (
        mean(&per_user_precision),
        mean(&per_user_recall),
        per_user_precision,
        per_user_recall,
    )
}

/// Harmonic mean of precision and recall; 0 when both vanish.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Fraction of the catalog appearing in at least one top-N list.
pub fn item_coverage_at_n(recommendations: &[Vec<usize>], catalog_size: usize) -> f64 {
    let distinct: HashSet<usize> = recommendations.iter().flatten().copied().collect();
    distinct.len() as f64 / catalog_size as f64
}

/// G@N = 1 - Gini inequality of the exposure distribution over the FULL
/// catalog (zero-exposure items included): uniform exposure -> 1,
/// single-item concentration -> ~0.
pub fn gini_at_n(recommendations: &[Vec<usize>], catalog_size: usize) -> Result<f64> {
    gini_exposure(recommendations, catalog_size, true)
}

/// Gini complement with a switch for restricting the population to items
/// that were actually recommended.
pub fn gini_exposure(
    recommendations: &[Vec<usize>],
    catalog_size: usize,
    full_catalog: bool,
) -> Result<f64> {
    if catalog_size < 2 {
        return Err(FplError::UndefinedMetric(
            "Gini needs a catalog of at least 2 items".into(),
        ));
    }
    let mut counts = vec![0u64; catalog_size];
    for list in recommendations {
        for &item in list {
            counts[item] += 1;
        }
    }
    let mut exposure: Vec<f64> = if full_catalog {
        counts.iter().map(|&c| c as f64).collect()
    } else {
        counts.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect()
    };
    let population = exposure.len();
    if population < 2 {
        return Err(FplError::UndefinedMetric(
            "Gini population has fewer than 2 items".into(),
        ));
    }
    let total: f64 = exposure.iter().sum();
    if total == 0.0 {
        return Err(FplError::UndefinedMetric("no exposure counts".into()));
    }
    exposure.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = population as f64;
    let mut gi = 0.0;
    for (k, p) in exposure.iter().enumerate() {
        let rank = (k + 1) as f64;
        gi += (2.0 * rank - n - 1.0) * (p / total);
    }
    gi /= n - 1.0;
    Ok(1.0 - gi)
}

/// Paired Student's t-test result. `degenerate` flags a zero-variance
/// difference vector with nonzero mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub degenerate: bool,
}

/// Two-sided paired t-test on per-user metric vectors.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(FplError::Config("paired samples differ in length".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(FplError::Config("paired t-test needs n >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTestResult {
                t: 0.0,
                p: 1.0,
                degenerate: false,
            }
        } else {
            TTestResult {
                t: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                p: 0.0,
                degenerate: true,
            }
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let df = n as f64 - 1.0;
    // two-sided: P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    let p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    Ok(TTestResult {
        t,
        p,
        degenerate: false,
    })
}

/// Lanczos approximation of ln Gamma.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEFFS {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "x out of range: {x}");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let front =
        (a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Full report at one cutoff.
pub fn evaluate(
    recommendations: &[Vec<usize>],
    test_positives: &[Vec<usize>],
    catalog_size: usize,
    cutoff: usize,
) -> Result<EvaluationReport> {
    let (precision, recall, per_user_precision, per_user_recall) =
        precision_recall_at_n(recommendations, test_positives, cutoff);
    Ok(EvaluationReport {
        cutoff,
        precision,
        recall,
        f1: f1_score(precision, recall),
        item_coverage: item_coverage_at_n(recommendations, catalog_size),
        gini: gini_at_n(recommendations, catalog_size)?,
        per_user_precision,
        per_user_recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_test_set_in_top_10() {
        let recs = vec![vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9]];
        let test = vec![vec![1, 5, 7]];
        let (p, r, _, _) = precision_recall_at_n(&recs, &test, 10);
        assert_eq!(p, 0.3);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn no_hits_means_zero() {
        let recs = vec![vec![0, 1], vec![2, 3]];
        let test = vec![vec![9], vec![8]];
        let (p, r, _, _) = precision_recall_at_n(&recs, &test, 2);
        assert_eq!((p, r), (0.0, 0.0));
    }

    #[test]
    fn aggregate_is_the_user_mean() {
        // user 0: 1 hit in top-5 -> P 0.2; user 1: 2 hits -> P 0.4
        let recs = vec![vec![0, 1, 2, 3, 4], vec![0, 1, 2, 3, 4]];
        let test = vec![vec![0, 90], vec![0, 1]];
        let (p, _, per_user, _) = precision_recall_at_n(&recs, &test, 5);
        assert_eq!(per_user, vec![0.2, 0.4]);
        assert!((p - 0.3).abs() < 1e-15);
    }

    #[test]
    fn empty_test_users_are_excluded() {
        let recs = vec![vec![0], vec![1]];
        let test = vec![vec![], vec![1]];
        let (p, r, per_user, _) = precision_recall_at_n(&recs, &test, 1);
        assert_eq!(per_user.len(), 1);
        assert_eq!((p, r), (1.0, 1.0));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(0.5, 0.5), 0.5);
        assert_eq!(f1_score(0.0, 0.7), 0.0);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        // harmonic mean of a realistic precision/recall pair
        let f1 = f1_score(0.07757, 0.09581);
        assert!((f1 - 0.08573).abs() < 5e-6, "f1 {f1}");
    }

    #[test]
    fn coverage_identical_lists() {
        let recs = vec![vec![0, 1, 2]; 7];
        assert_eq!(item_coverage_at_n(&recs, 30), 0.1);
    }

    #[test]
    fn coverage_disjoint_lists() {
        let recs = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        assert_eq!(item_coverage_at_n(&recs, 12), 0.5);
    }

    #[test]
    fn gini_single_item_concentration_is_zero() {
        let recs = vec![vec![0]; 100];
        let g = gini_at_n(&recs, 50).unwrap();
        assert!(g.abs() < 1e-12, "g {g}");
    }

    #[test]
    fn gini_uniform_exposure_is_one() {
        let recs: Vec<Vec<usize>> = (0..10).map(|u| vec![u * 2, u * 2 + 1]).collect();
        let g = gini_at_n(&recs, 20).unwrap();
        assert!((g - 1.0).abs() < 1e-12, "g {g}");
    }

    #[test]
    fn gini_undefined_for_tiny_catalog() {
        assert!(gini_at_n(&[vec![0]], 1).is_err());
    }

    /// Mean-absolute-difference form of the same index, used as an oracle.
    pub(crate) fn gini_brute_force(recommendations: &[Vec<usize>], catalog_size: usize) -> f64 {
        let mut counts = vec![0f64; catalog_size];
        for list in recommendations {
            for &item in list {
                counts[item] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        let n = catalog_size as f64;
        let mut mad = 0.0;
        for a in &counts {
            for b in &counts {
                mad += (a - b).abs();
            }
        }
        let gi = mad / (2.0 * (n - 1.0) * total);
        1.0 - gi
    }

    #[test]
    fn gini_matches_mean_absolute_difference_formula() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let catalog = rng.random_range(2..120);
            let users = rng.random_range(1..40);
            let recs: Vec<Vec<usize>> = (0..users)
                .map(|_| {
                    (0..rng.random_range(1..10))
                        .map(|_| rng.random_range(0..catalog))
                        .collect()
                })
                .collect();
            let fast = gini_at_n(&recs, catalog).unwrap();
            let brute = gini_brute_force(&recs, catalog);
            assert!((fast - brute).abs() < 1e-9, "{fast} vs {brute}");
        }
    }

    #[test]
    fn gini_scale_invariant() {
        let recs = vec![vec![0, 1, 1, 3], vec![3, 3, 0]];
        let tripled: Vec<Vec<usize>> = recs
            .iter()
            .map(|l| l.iter().copied().cycle().take(l.len() * 3).collect())
            .collect();
        let a = gini_at_n(&recs, 6).unwrap();
        let b = gini_at_n(&tripled, 6).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn t_test_identical_vectors() {
        let a = vec![0.1, 0.4, 0.2];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p, r.degenerate), (0.0, 1.0, false));
    }

    #[test]
    fn t_test_constant_nonzero_difference_is_degenerate() {
        let a = vec![2.0, 3.0, 4.0, 5.0];
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
    }

    #[test]
    fn t_test_worked_example() {
        let a = vec![0.1, 0.2, 0.3, 0.4];
        let b = vec![0.0, 0.1, 0.25, 0.35];
        let r = paired_t_test(&a, &b).unwrap();
        // reference values from an independent implementation
        assert!((r.t - 5.196152422706634).abs() < 1e-12, "t {}", r.t);
        assert!((r.p - 0.013846832988859).abs() < 1e-9, "p {}", r.p);
    }

    #[test]
    fn t_test_antisymmetric() {
        let a = vec![0.3, 0.1, 0.9, 0.2, 0.5];
        let b = vec![0.4, 0.0, 0.8, 0.1, 0.45];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert!((ab.p - ba.p).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval(
            lists in proptest::collection::vec(
                proptest::collection::vec(0usize..30, 0..10), 1..20),
            tests in proptest::collection::vec(
                proptest::collection::vec(0usize..30, 0..5), 1..20),
        ) {
            // recommendation lists and test sets hold distinct items
            let dedup = |v: &[Vec<usize>]| -> Vec<Vec<usize>> {
                v.iter()
                    .map(|l| {
                        let mut l = l.clone();
                        l.sort_unstable();
                        l.dedup();
                        l
                    })
                    .collect()
            };
            let n = lists.len().min(tests.len());
            let lists = dedup(&lists[..n]);
            let tests = dedup(&tests[..n]);
            let (lists, tests) = (&lists[..], &tests[..]);
            let (p, r, _, _) = precision_recall_at_n(lists, tests, 10);
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((0.0..=1.0).contains(&r));
            let ic = item_coverage_at_n(lists, 30);
            prop_assert!((0.0..=1.0).contains(&ic));
            if lists.iter().any(|l| !l.is_empty()) {
                let g = gini_at_n(lists, 30).unwrap();
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&g));
            }
        }

        #[test]
        fn metrics_invariant_under_user_permutation(seed in 0u64..1000) {
            use rand::Rng;
            use rand::seq::SliceRandom;
            use rand_chacha::rand_core::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let users = rng.random_range(2..12);
            let mut pairs: Vec<(Vec<usize>, Vec<usize>)> = (0..users)
                .map(|_| {
                    let rec = (0..5).map(|_| rng.random_range(0..20)).collect();
                    let test = (0..3).map(|_| rng.random_range(0..20)).collect();
                    (rec, test)
                })
                .collect();
            let recs: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
            let tests: Vec<_> = pairs.iter().map(|p| p.1.clone()).collect();
            let before = precision_recall_at_n(&recs, &tests, 5);
            pairs.shuffle(&mut rng);
            let recs2: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
            let tests2: Vec<_> = pairs.iter().map(|p| p.1.clone()).collect();
            let after = precision_recall_at_n(&recs2, &tests2, 5);
            prop_assert!((before.0 - after.0).abs() < 1e-12);
            prop_assert!((before.1 - after.1).abs() < 1e-12);
        }
    }
}
