//! Percentile bootstrap intervals and paired permutation tests.
//!
//! Resampling runs in chunks of `CHUNK` iterations; chunk `c` draws from
//! `stream(seed, label, c)`, so results do not depend on the worker count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::percentile_sorted;
use crate::seeding::stream;

const CHUNK: usize = 1024;
pub const DEFAULT_RESAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// Resamples that produced a finite statistic.
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub b: usize,
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            b: DEFAULT_RESAMPLES,
            iterations: DEFAULT_RESAMPLES,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Runs `total` draws in seeded chunks; `draw` returns `None` for a failed draw.
fn chunked<F>(total: usize, seed: u64, label: &str, draw: F) -> Vec<Option<f64>>
where
    F: Fn(&mut ChaCha8Rng) -> Option<f64> + Sync,
{
    let chunks = total.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream(seed, label, c as u64);
            let n = CHUNK.min(total - c * CHUNK);
            (0..n).map(|_| draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Percentile bootstrap over units. `statistic` sees a resampled multiset of
/// units, so dataset-level metrics are recomputed per resample; resamples on
/// which it fails are dropped.
pub fn bootstrap_ci<T, F>(
    units: &[T],
    statistic: F,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<IntervalEstimate>
where
    T: Sync,
    F: Fn(&[&T]) -> Result<f64> + Sync,
{
    if units.len() < 2 {
        return Err(Error::TooFewUnits {
            have: units.len(),
            need: 2,
        });
    }
    if b < 100 {
        return Err(Error::Precondition(format!(
            "bootstrap needs b >= 100, got {b}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Precondition(format!("level {level} outside (0, 1)")));
    }
    let all: Vec<&T> = units.iter().collect();
    let point = statistic(&all)?;
    let n = units.len();
    let mut draws: Vec<f64> = chunked(b, seed, "bootstrap", |rng| {
        let sample: Vec<&T> = (0..n).map(|_| &units[rng.gen_range(0..n)]).collect();
        statistic(&sample).ok().filter(|v| v.is_finite())
    })
    .into_iter()
    .flatten()
    .collect();
    if draws.is_empty() {
        return Err(Error::Precondition(
            "every bootstrap resample failed".into(),
        ));
    }
    draws.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(IntervalEstimate {
        point,
        lo: percentile_sorted(&draws, alpha),
        hi: percentile_sorted(&draws, 1.0 - alpha),
        level,
        b: draws.len(),
    })
}

/// Mean shifted by the first value, so a constant sample returns that constant exactly.
pub fn mean(values: &[&f64]) -> Result<f64> {
    let (&&first, _) = values
        .split_first()
        .ok_or(Error::EmptyInput("mean of no values"))?;
    let shift: f64 = values.iter().map(|&&v| v - first).sum();
    Ok(first + shift / values.len() as f64)
}

pub fn bootstrap_mean_ci(
    values: &[f64],
    b: usize,
    level: f64,
    seed: u64,
) -> Result<IntervalEstimate> {
    bootstrap_ci(values, mean, b, level, seed)
}

/// Per-unit metrics of two models, aligned by unit id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSamples {
    pub unit_ids: Vec<String>,
    pub metric_a: Vec<f64>,
    pub metric_b: Vec<f64>,
}

impl PairedSamples {
    /// Pairs `(id, value)` lists; the id sets must match exactly.
    pub fn align(a: &[(String, f64)], b: &[(String, f64)]) -> Result<Self> {
        let sorted = |v: &[(String, f64)]| {
            let mut v = v.to_vec();
            v.sort_by(|x, y| x.0.cmp(&y.0));
            v
        };
        let (a, b) = (sorted(a), sorted(b));
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.0 != y.0) {
            return Err(Error::UnitMismatch(format!(
                "{} units vs {} units with differing ids",
                a.len(),
                b.len()
            )));
        }
        if a.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::UnitMismatch("duplicate unit id".into()));
        }
        Ok(Self {
            unit_ids: a.iter().map(|x| x.0.clone()).collect(),
            metric_a: a.iter().map(|x| x.1).collect(),
            metric_b: b.iter().map(|x| x.1).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.metric_a
            .iter()
            .zip(&self.metric_b)
            .map(|(a, b)| a - b)
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.metric_a.len() != self.len() || self.metric_b.len() != self.len() {
            return Err(Error::UnitMismatch(
                "metric columns differ in length".into(),
            ));
        }
        if self.len() < 2 {
            return Err(Error::TooFewUnits {
                have: self.len(),
                need: 2,
            });
        }
        Ok(())
    }
}

// Permuted statistics within this relative distance of the observed one count as ties.
fn refs<T>(v: &[T]) -> Vec<&T> {
    v.iter().collect()
}

fn tie_tolerance(t_obs: f64) -> f64 {
    1e-12 * t_obs.abs().max(1e-300)
}

fn mean_abs_flipped(d: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let mut sum = 0.0;
    let mut bits = 0u64;
    for (i, x) in d.iter().enumerate() {
        if i % 64 == 0 {
            bits = rng.gen();
        }
        sum += if bits & 1 == 1 { -x } else { *x };
        bits >>= 1;
    }
    (sum / d.len() as f64).abs()
}

/// Two-sided sign-flip test on `mean(a - b)`; `p = (1 + hits) / (1 + iterations)`.
pub fn permutation_test(samples: &PairedSamples, iterations: usize, seed: u64) -> Result<f64> {
    samples.check()?;
    if iterations == 0 {
        return Err(Error::Precondition(
            "permutation test needs iterations >= 1".into(),
        ));
    }
    let d = samples.differences();
    let t_obs = (d.iter().sum::<f64>() / d.len() as f64).abs();
    let bar = t_obs - tie_tolerance(t_obs);
    let hits = chunked(iterations, seed, "permutation", |rng| {
        Some(if mean_abs_flipped(&d, rng) >= bar {
            1.0
        } else {
            0.0
        })
    })
    .into_iter()
    .flatten()
    .sum::<f64>();
    Ok((1.0 + hits) / (1.0 + iterations as f64))
}

/// Fraction of all `2^n` sign patterns at least as extreme as the observed one.
pub fn exact_permutation_p(samples: &PairedSamples) -> Result<f64> {
    samples.check()?;
    let n = samples.len();
    if n > 24 {
        return Err(Error::Precondition(format!(
            "exact enumeration over {n} units is too large"
        )));
    }
    let d = samples.differences();
    let t_obs = (d.iter().sum::<f64>() / n as f64).abs();
    let bar = t_obs - tie_tolerance(t_obs);
    let hits = (0u64..1 << n)
        .into_par_iter()
        .filter(|mask| {
            let s: f64 = d
                .iter()
                .enumerate()
                .map(|(i, x)| if mask >> i & 1 == 1 { -x } else { *x })
                .sum();
            (s / n as f64).abs() >= bar
        })
        .count();
    Ok(hits as f64 / (1u64 << n) as f64)
}

/// Paired swap test for statistics defined on a whole unit set (AUC, AP):
/// each iteration exchanges the two models' outputs on every unit with
/// probability one half and recomputes `stat(A') - stat(B')`. Iterations on
/// which either statistic fails are dropped from numerator and denominator.
pub fn paired_swap_test<T, F>(
    a: &[T],
    b: &[T],
    statistic: F,
    iterations: usize,
    seed: u64,
) -> Result<f64>
where
    T: Sync,
    F: Fn(&[&T]) -> Result<f64> + Sync,
{
    if a.len() != b.len() {
        return Err(Error::UnitMismatch(format!(
            "{} units vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::TooFewUnits {
            have: a.len(),
            need: 2,
        });
    }
    let t_obs = (statistic(&refs(a))? - statistic(&refs(b))?).abs();
    let bar = t_obs - tie_tolerance(t_obs);
    let draws = chunked(iterations, seed, "swap", |rng| {
        let mut pa = Vec::with_capacity(a.len());
        let mut pb = Vec::with_capacity(a.len());
        for (x, y) in a.iter().zip(b) {
            if rng.gen::<bool>() {
                pa.push(y);
                pb.push(x);
            } else {
                pa.push(x);
                pb.push(y);
            }
        }
        let t = (statistic(&pa).ok()? - statistic(&pb).ok()?).abs();
        Some(if t >= bar { 1.0 } else { 0.0 })
    });
    let valid = draws.iter().flatten().count();
    let hits: f64 = draws.into_iter().flatten().sum();
    Ok((1.0 + hits) / (1.0 + valid as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Case,
    Fold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub model_a: String,
    pub model_b: String,
    pub metric: String,
    pub granularity: Granularity,
    pub test: String,
    pub n_units: usize,
    pub value_a: f64,
    pub value_b: f64,
    pub delta: f64,
    pub delta_ci: IntervalEstimate,
    pub p_value: f64,
    pub iterations: usize,
    pub b: usize,
}

/// Δ = mean(a − b) with a bootstrap interval on the per-unit differences and a
/// sign-flip permutation p-value.
pub fn compare_models(
    model_a: &str,
    a: &[(String, f64)],
    model_b: &str,
    b: &[(String, f64)],
    metric: &str,
    granularity: Granularity,
    cfg: &StatsConfig,
) -> Result<ComparisonRecord> {
    let samples = PairedSamples::align(a, b)?;
    samples.check()?;
    let d = samples.differences();
    let delta_ci = bootstrap_mean_ci(&d, cfg.b, cfg.level, cfg.seed)?;
    let p_value = permutation_test(&samples, cfg.iterations, cfg.seed)?;
    let n = samples.len() as f64;
    Ok(ComparisonRecord {
        model_a: model_a.into(),
        model_b: model_b.into(),
        metric: metric.into(),
        granularity,
        test: "sign-flip".into(),
        n_units: samples.len(),
        value_a: samples.metric_a.iter().sum::<f64>() / n,
        value_b: samples.metric_b.iter().sum::<f64>() / n,
        delta: delta_ci.point,
        delta_ci,
        p_value,
        iterations: cfg.iterations,
        b: delta_ci.b,
    })
}

/// Comparison for a statistic defined on the whole case set. The interval
/// resamples cases jointly for both models; the p-value comes from
/// [`paired_swap_test`]. `a` and `b` must already be aligned by case.
#[allow(clippy::too_many_arguments)]
pub fn compare_dataset_level<T, F>(
    model_a: &str,
    a: &[T],
    model_b: &str,
    b: &[T],
    metric: &str,
    statistic: F,
    cfg: &StatsConfig,
) -> Result<ComparisonRecord>
where
    T: Sync,
    F: Fn(&[&T]) -> Result<f64> + Sync,
{
    if a.len() != b.len() {
        return Err(Error::UnitMismatch(format!(
            "{} units vs {}",
            a.len(),
            b.len()
        )));
    }
    let pairs: Vec<(&T, &T)> = a.iter().zip(b).collect();
    let delta_ci = bootstrap_ci(
        &pairs,
        |sample: &[&(&T, &T)]| {
            let sa: Vec<&T> = sample.iter().map(|p| p.0).collect();
            let sb: Vec<&T> = sample.iter().map(|p| p.1).collect();
            Ok(statistic(&sa)? - statistic(&sb)?)
        },
        cfg.b,
        cfg.level,
        cfg.seed,
    )?;
    let p_value = paired_swap_test(a, b, &statistic, cfg.iterations, cfg.seed)?;
    Ok(ComparisonRecord {
        model_a: model_a.into(),
        model_b: model_b.into(),
        metric: metric.into(),
        granularity: Granularity::Case,
        test: "paired-swap".into(),
        n_units: a.len(),
        value_a: statistic(&refs(a))?,
        value_b: statistic(&refs(b))?,
        delta: delta_ci.point,
        delta_ci,
        p_value,
        iterations: cfg.iterations,
        b: delta_ci.b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;
    use crate::seeding::stream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn paired(a: &[f64], b: &[f64]) -> PairedSamples {
        PairedSamples {
            unit_ids: (0..a.len()).map(|i| format!("u{i:03}")).collect(),
            metric_a: a.to_vec(),
            metric_b: b.to_vec(),
        }
    }

    fn normals(seed: u64, n: usize, mu: f64) -> Vec<f64> {
        let mut rng = stream(seed, "test-normals", 0);
        let d = Normal::new(mu, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn degenerate_interval() {
        let ci = bootstrap_mean_ci(&[0.7; 30], 1000, 0.95, 1).unwrap();
        assert_eq!((ci.lo, ci.point, ci.hi), (0.7, 0.7, 0.7));
        assert_eq!(ci.b, 1000);
    }

    #[test]
    fn normal_theory_width() {
        let x = normals(5, 200, 0.0);
        let ci = bootstrap_mean_ci(&x, 10_000, 0.95, 2).unwrap();
        let expected = 2.0 * 1.96 / 200f64.sqrt();
        assert!(((ci.hi - ci.lo) / expected - 1.0).abs() < 0.15, "{ci:?}");
    }

    #[test]
    fn bootstrap_is_deterministic_across_pools() {
        let x = normals(9, 50, 1.0);
        let a = bootstrap_mean_ci(&x, 5000, 0.9, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool
            .install(|| bootstrap_mean_ci(&x, 5000, 0.9, 3))
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, bootstrap_mean_ci(&x, 5000, 0.9, 4).unwrap());
    }

    #[test]
    fn bootstrap_preconditions() {
        assert!(matches!(
            bootstrap_mean_ci(&[1.0], 1000, 0.95, 0),
            Err(Error::TooFewUnits { .. })
        ));
        assert!(bootstrap_mean_ci(&[1.0, 2.0], 10, 0.95, 0).is_err());
    }

    #[test]
    fn bootstrap_recomputes_dataset_statistics() {
        // AUC on resampled case sets; single-class resamples are skipped
        let cases: Vec<(f64, bool)> = (0..12).map(|i| (i as f64, i % 3 == 0)).collect();
        let stat = |s: &[&(f64, bool)]| {
            let (sc, lb): (Vec<f64>, Vec<bool>) = s.iter().map(|c| (c.0, c.1)).unzip();
            auc(&sc, &lb)
        };
        let ci = bootstrap_ci(&cases, stat, 2000, 0.95, 1).unwrap();
        assert!(ci.b <= 2000 && ci.b > 1500);
        assert!(ci.lo <= ci.point && ci.point <= ci.hi && ci.hi <= 1.0);
    }

    #[test]
    fn identical_models_have_p_one() {
        let x = normals(1, 40, 0.5);
        assert_eq!(permutation_test(&paired(&x, &x), 10_000, 1).unwrap(), 1.0);
        assert_eq!(
            exact_permutation_p(&paired(&x[..10], &x[..10])).unwrap(),
            1.0
        );
    }

    fn enumerate_oracle(d: &[f64]) -> f64 {
        // independent recursion over sign patterns
        fn rec(d: &[f64], acc: f64, n: f64, bar: f64) -> usize {
            match d.split_first() {
                None => usize::from((acc / n).abs() >= bar),
                Some((x, rest)) => rec(rest, acc + x, n, bar) + rec(rest, acc - x, n, bar),
            }
        }
        let n = d.len() as f64;
        let t = (d.iter().sum::<f64>() / n).abs();
        rec(d, 0.0, n, t - 1e-12) as f64 / 2f64.powi(d.len() as i32)
    }

    #[test]
    fn five_units_same_margin() {
        let s = paired(&[0.8; 5], &[0.7; 5]);
        assert!((exact_permutation_p(&s).unwrap() - 2.0 / 32.0).abs() < 1e-15);
        assert_eq!(enumerate_oracle(&s.differences()), 2.0 / 32.0);
        let p = permutation_test(&s, 200_000, 3).unwrap();
        assert!((p - 0.0625).abs() < 0.003, "{p}");
    }

    #[test]
    fn monte_carlo_matches_enumeration() {
        for seed in 0..6u64 {
            let n = 6 + seed as usize;
            let a = normals(seed, n, 0.4);
            let b = normals(seed + 100, n, 0.0);
            let s = paired(&a, &b);
            let exact = exact_permutation_p(&s).unwrap();
            assert!((exact - enumerate_oracle(&s.differences())).abs() < 1e-12);
            let mc = permutation_test(&s, 200_000, seed).unwrap();
            assert!((mc - exact).abs() < 0.01, "n={n} mc={mc} exact={exact}");
        }
    }

    #[test]
    fn dominant_model_is_significant() {
        let a = normals(7, 100, 1.0);
        let b = normals(8, 100, 0.0);
        let ids: Vec<String> = (0..100).map(|i| format!("c{i:03}")).collect();
        let ua: Vec<(String, f64)> = ids.iter().cloned().zip(a).collect();
        let ub: Vec<(String, f64)> = ids.iter().cloned().zip(b).collect();
        let cfg = StatsConfig {
            b: 2000,
            iterations: 2000,
            ..Default::default()
        };
        let r = compare_models("a", &ua, "b", &ub, "dice", Granularity::Case, &cfg).unwrap();
        assert!(r.p_value <= 0.01 && r.delta > 0.5);
        assert_eq!((r.iterations, r.b), (2000, 2000));
        let same = compare_models("a", &ua, "a", &ua, "dice", Granularity::Case, &cfg).unwrap();
        assert_eq!((same.delta, same.p_value), (0.0, 1.0));
        assert!(matches!(
            compare_models("a", &ua[1..], "b", &ub, "dice", Granularity::Case, &cfg),
            Err(Error::UnitMismatch(_))
        ));
    }

    #[test]
    fn swap_test_on_dataset_statistic() {
        let labels: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
        let good: Vec<(f64, bool)> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (if l { 1.0 } else { 0.0 } + i as f64 * 1e-3, l))
            .collect();
        let noise = normals(2, 60, 0.0);
        let bad: Vec<(f64, bool)> = labels.iter().zip(&noise).map(|(&l, &z)| (z, l)).collect();
        let stat = |s: &[&(f64, bool)]| {
            let (sc, lb): (Vec<f64>, Vec<bool>) = s.iter().map(|c| (c.0, c.1)).unzip();
            auc(&sc, &lb)
        };
        let cfg = StatsConfig {
            b: 1000,
            iterations: 2000,
            ..Default::default()
        };
        let r = compare_dataset_level("good", &good, "bad", &bad, "auc", stat, &cfg).unwrap();
        assert!(r.p_value <= 0.01 && r.delta > 0.2, "{r:?}");
        assert_eq!(paired_swap_test(&good, &good, stat, 500, 0).unwrap(), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn p_in_unit_interval_and_symmetric(a in prop::collection::vec(-1.0f64..1.0, 2..20), seed in 0u64..100) {
            let b: Vec<f64> = a.iter().map(|x| x * 0.5 + 0.1).collect();
            let p = permutation_test(&paired(&a, &b), 500, seed).unwrap();
            let q = permutation_test(&paired(&b, &a), 500, seed).unwrap();
            prop_assert!(p > 0.0 && p <= 1.0);
            prop_assert_eq!(p, q);
        }

        #[test]
        fn mean_interval_contains_point(x in prop::collection::vec(-5.0f64..5.0, 5..40), seed in 0u64..100) {
            let ci = bootstrap_mean_ci(&x, 500, 0.95, seed).unwrap();
            prop_assert!(ci.lo <= ci.point && ci.point <= ci.hi);
        }
    }
}
