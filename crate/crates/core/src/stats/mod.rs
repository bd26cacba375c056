//! Statistical kernels shared by the benchmark and probe pipelines.
//!
//! All functions are pure and accumulate in `f64`.

mod two_sample;

pub use two_sample::{cvm_two_sample, ks_two_sample, two_sample_stats, TwoSampleStat};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors with a smaller L2 norm are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

/// Lower clamp applied to p-values before the Cauchy transform.
pub const CAUCHY_P_CLAMP: f64 = 1e-15;

/// Null-sample count and master seed for permutation tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub k: usize,
    pub seed: u64,
}

impl PermutationConfig {
    pub fn new(k: usize, seed: u64) -> Result<Self> {
        let cfg = Self { k, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("permutation count K must be at least 1"));
        }
        Ok(())
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

fn check_nonzero(norm: f64, what: &str) -> Result<()> {
    if norm.is_finite() && norm >= MIN_NORM {
        Ok(())
    } else {
        Err(Error::degenerate(format!("{what} has zero norm")))
    }
}

/// Returns `u / ‖u‖`, or an error when `u` is (numerically) zero.
pub fn unit(u: &[f64]) -> Result<Vec<f64>> {
    let n = norm(u);
    check_nonzero(n, "vector")?;
    Ok(u.iter().map(|x| x / n).collect())
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    check_nonzero(nu, "first vector")?;
    check_nonzero(nv, "second vector")?;
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity over all ordered pairs `(i, j)`, diagonal included.
///
/// Uses `Σ_i Σ_j cos(x_i, x_j) = ‖Σ_i x_i/‖x_i‖‖²`, which is O(n·D).
pub fn mean_pairwise_similarity<'a, I>(vectors: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for v in vectors {
        if n == 0 {
            sum = vec![0.0; v.len()];
        } else if v.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                actual: v.len(),
            });
        }
        let nv = norm(v);
        check_nonzero(nv, "replicate embedding")?;
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x / nv;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("mean pairwise similarity of an empty set"));
    }
    Ok(dot(&sum, &sum) / (n * n) as f64)
}

/// Permutation p-value `max(#{null ≥ observed}, 1) / K`.
pub fn permutation_pvalue(observed: f64, null_stats: &[f64]) -> Result<f64> {
    if null_stats.is_empty() {
        return Err(Error::invalid("empty null distribution"));
    }
    let exceed = null_stats.iter().filter(|&&s| s >= observed).count();
    Ok(exceed.max(1) as f64 / null_stats.len() as f64)
}

/// Unweighted Cauchy combination of p-values.
pub fn cauchy_combine(pvalues: &[f64]) -> Result<f64> {
    if pvalues.is_empty() {
        return Err(Error::invalid("Cauchy combination of an empty list"));
    }
    if let Some(p) = pvalues.iter().find(|p| !p.is_finite()) {
        return Err(Error::invalid(format!("p-value {p} is not finite")));
    }
    let pi = std::f64::consts::PI;
    let t = pvalues
        .iter()
        .map(|&p| {
            let p = p.clamp(CAUCHY_P_CLAMP, 1.0 - CAUCHY_P_CLAMP);
            ((0.5 - p) * pi).tan()
        })
        .sum::<f64>()
        / pvalues.len() as f64;
    Ok(0.5 - t.atan() / pi)
}

/// Normalizes each vector, averages, and renormalizes.
pub fn spherical_mean<'a, I>(vectors: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for v in vectors {
        if n == 0 {
            sum = vec![0.0; v.len()];
        } else if v.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                actual: v.len(),
            });
        }
        let nv = norm(v);
        check_nonzero(nv, "input vector")?;
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x / nv;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("spherical mean of an empty set"));
    }
    for s in sum.iter_mut() {
        *s /= n as f64;
    }
    let m = norm(&sum);
    if !(m >= MIN_NORM) {
        return Err(Error::degenerate("spherical mean has zero norm"));
    }
    Ok(sum.iter().map(|x| x / m).collect())
}

/// 1-based ranks with ties assigned their average rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::degenerate("zero variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of midranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in rank correlation"));
    }
    pearson(&midranks(x), &midranks(y)).map_err(|e| match e {
        Error::Degenerate(_) => Error::degenerate("zero rank variance"),
        other => other,
    })
}

/// Quantile of sorted data by linear interpolation between order statistics
/// (position `(n − 1)·p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vectors(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::rng::substream(seed, &["vectors"]);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn brute_force_mean_pairwise(v: &[Vec<f64>]) -> f64 {
        let n = v.len();
        let mut s = 0.0;
        for a in v {
            for b in v {
                s += dot(a, b) / (norm(a) * norm(b));
            }
        }
        s / (n * n) as f64
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn mean_pairwise_examples() {
        let same = vec![vec![1.0, 2.0, 3.0]; 5];
        let s = mean_pairwise_similarity(same.iter().map(Vec::as_slice)).unwrap();
        assert!((s - 1.0).abs() < 1e-15);

        let ortho = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = mean_pairwise_similarity(ortho.iter().map(Vec::as_slice)).unwrap();
        assert!((s - 0.5).abs() < 1e-15);

        let v = random_vectors(7, 6, 3);
        let s = mean_pairwise_similarity(v.iter().map(Vec::as_slice)).unwrap();
        assert!((s - brute_force_mean_pairwise(&v)).abs() < 1e-12);

        let zero = [vec![1.0, 0.0], vec![0.0, 0.0]];
        assert!(mean_pairwise_similarity(zero.iter().map(Vec::as_slice)).is_err());
        assert!(mean_pairwise_similarity(std::iter::empty()).is_err());
    }

    #[test]
    fn permutation_pvalue_examples() {
        let nulls: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(permutation_pvalue(1000.0, &nulls).unwrap(), 0.01);
        assert_eq!(permutation_pvalue(-1.0, &nulls).unwrap(), 1.0);
        let ten: Vec<f64> = (0..10).map(|i| i as f64).collect();
        // 4.5 exceeds 0..=4 and is below 5..=9.
        assert_eq!(permutation_pvalue(4.5, &ten).unwrap(), 0.5);
        assert!(permutation_pvalue(0.0, &[]).is_err());
    }

    #[test]
    fn cauchy_examples() {
        assert!((cauchy_combine(&[0.5]).unwrap() - 0.5).abs() < 1e-15);
        for p in [1e-10, 0.003, 0.2, 0.77, 0.999] {
            assert!((cauchy_combine(&[p, p]).unwrap() - p).abs() < 1e-12);
        }
        assert!(cauchy_combine(&[]).is_err());
        let tiny = cauchy_combine(&[1e-300, 0.4]).unwrap();
        assert!(tiny.is_finite() && tiny > 0.0 && tiny < 1e-14);
    }

    #[test]
    fn cauchy_matches_extended_precision_value() {
        // 50-digit evaluation of the closed form for [0.01, 0.5, 0.9].
        let expected = 0.033_103_366_413_410_910;
        let got = cauchy_combine(&[0.01, 0.5, 0.9]).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got}");
    }

    #[test]
    fn spherical_mean_examples() {
        let m = spherical_mean([[1.0, 0.0].as_slice(), [0.0, 1.0].as_slice()]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m[0] - h).abs() < 1e-15 && (m[1] - h).abs() < 1e-15);
        let m = spherical_mean([[3.0, 4.0].as_slice()]).unwrap();
        assert_eq!(m, vec![0.6, 0.8]);
        assert!(spherical_mean([[1.0, 0.0].as_slice(), [-1.0, 0.0].as_slice()]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [2.0, 4.0, 8.0, 16.0, 100.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman_rho(&x, &up).unwrap(), 1.0);
        assert_eq!(spearman_rho(&x, &down).unwrap(), -1.0);
        assert!(spearman_rho(&x, &[1.0; 5]).is_err());
        assert!(spearman_rho(&x, &up[..4]).is_err());
    }

    #[test]
    fn spearman_matches_midrank_pearson_oracle() {
        let mut rng = crate::rng::substream(5, &["spearman"]);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(0..8) as f64).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        // direct midranks by counting
        let rank = |v: &[f64], i: usize| {
            let less = v.iter().filter(|&&o| o < v[i]).count() as f64;
            let eq = v.iter().filter(|&&o| o == v[i]).count() as f64;
            less + (eq + 1.0) / 2.0
        };
        let rx: Vec<f64> = (0..20).map(|i| rank(&x, i)).collect();
        let ry: Vec<f64> = (0..20).map(|i| rank(&y, i)).collect();
        let mx = rx.iter().sum::<f64>() / 20.0;
        let my = ry.iter().sum::<f64>() / 20.0;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        let oracle = cov / (vx * vy).sqrt();
        assert!((spearman_rho(&x, &y).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 0.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.1) - 0.4).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
    }

    proptest! {
        #[test]
        fn mean_pairwise_equals_double_loop(n in 1usize..50, d in 1usize..8, seed in any::<u64>()) {
            let v = random_vectors(n, d, seed);
            prop_assume!(v.iter().all(|x| norm(x) > 1e-6));
            let fast = mean_pairwise_similarity(v.iter().map(Vec::as_slice)).unwrap();
            prop_assert!((fast - brute_force_mean_pairwise(&v)).abs() < 1e-12);
        }

        #[test]
        fn pvalue_in_unit_interval_and_monotone(
            nulls in proptest::collection::vec(-5.0f64..5.0, 1..60),
            a in -6.0f64..6.0,
            b in -6.0f64..6.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p_lo = permutation_pvalue(lo, &nulls).unwrap();
            let p_hi = permutation_pvalue(hi, &nulls).unwrap();
            prop_assert!(p_lo > 0.0 && p_lo <= 1.0);
            prop_assert!(p_hi <= p_lo);
        }

        #[test]
        fn cauchy_is_monotone(
            ps in proptest::collection::vec(0.0001f64..0.9999, 1..10),
            idx in any::<proptest::sample::Index>(),
            bump in 0.0f64..0.5,
        ) {
            let base = cauchy_combine(&ps).unwrap();
            let mut raised = ps.clone();
            let i = idx.index(ps.len());
            raised[i] = (raised[i] + bump).min(0.9999);
            prop_assert!(cauchy_combine(&raised).unwrap() >= base);
        }
    }
}
