use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// KS and CVM distances between two equal-size samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleStat {
    pub ks: f64,
    pub cvm: f64,
    pub n: usize,
}

fn check_sample(x: &[f64], name: &str) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid(format!("sample {name} is empty")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("sample {name} has non-finite values")));
    }
    Ok(())
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov-Smirnov distance `sup |F_a − F_b|`, evaluated at
/// every pooled sample point.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample(a, "a")?;
    check_sample(b, "b")?;
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as u128, b.len() as u128);
    let (mut i, mut j) = (0usize, 0usize);
    // max |i·nb − j·na| over the sweep; divided once so the result is the
    // correctly rounded rational.
    let mut best: u128 = 0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as u128 * nb).abs_diff(j as u128 * na));
    }
    Ok(best as f64 / (na * nb) as f64)
}

/// Two-sample Cramér-von Mises statistic for equal sample sizes `N`:
///
/// `T = Σ_m [(r_m − m)² + (s_m − m)²] / (2N²) − (4N² − 1) / (12N)`
///
/// where `r_m` and `s_m` are the pooled ranks of the m-th smallest element
/// of `a` and `b`. Equal values are ordered with `a` before `b`.
pub fn cvm_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample(a, "a")?;
    check_sample(b, "b")?;
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "CVM needs equal sample sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut pooled: Vec<(f64, u8)> = a
        .iter()
        .map(|&v| (v, 0u8))
        .chain(b.iter().map(|&v| (v, 1u8)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let (mut m_a, mut m_b) = (0i64, 0i64);
    let mut sum: i128 = 0;
    for (pos, &(_, which)) in pooled.iter().enumerate() {
        let rank = pos as i64 + 1;
        let m = if which == 0 {
            m_a += 1;
            m_a
        } else {
            m_b += 1;
            m_b
        };
        let diff = (rank - m) as i128;
        sum += diff * diff;
    }
    let nf = n as f64;
    Ok(sum as f64 / (2.0 * nf * nf) - (4.0 * nf * nf - 1.0) / (12.0 * nf))
}

pub fn two_sample_stats(a: &[f64], b: &[f64]) -> Result<TwoSampleStat> {
    Ok(TwoSampleStat {
        ks: ks_two_sample(a, b)?,
        cvm: cvm_two_sample(a, b)?,
        n: a.len(),
    })
}
