//! Two-sample scalar tests. Multivariate inputs are flattened first (all
//! coordinates pooled), see [`flatten`].

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{ForteError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    /// `None` when the p-value is undefined.
    pub p_value: Option<f64>,
    pub notes: String,
}

impl TestResult {
    fn new(name: &str, statistic: f64, p_value: Option<f64>, notes: impl Into<String>) -> Self {
        TestResult {
            name: name.to_string(),
            statistic,
            p_value: p_value.map(|p| p.clamp(0.0, 1.0)),
            notes: notes.into(),
        }
    }
}

/// All coordinates of all rows, row-major, widened to f64.
pub fn flatten(x: &EmbeddingMatrix) -> Vec<f64> {
    x.as_slice().iter().map(|&v| f64::from(v)).collect()
}

/// Two-sided standard-normal tail `P(|Z| ≥ |z|)`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

fn check_nonempty(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() < min || b.len() < min {
        return Err(ForteError::param(format!(
            "two-sample test needs at least {min} values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(ForteError::Degenerate("non-finite sample value".into()));
    }
    Ok(())
}

/// Welch-style standardized mean difference with a two-sided normal p-value.
pub fn z_score(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_nonempty(a, b, 2)?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    let diff = ma - mb;
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            TestResult::new("z_score", 0.0, Some(1.0), "zero variance, equal means")
        } else {
            TestResult::new("z_score", diff.signum() * f64::INFINITY, Some(0.0), "zero variance")
        });
    }
    let z = diff / se;
    Ok(TestResult::new("z_score", z, Some(normal_two_sided_p(z)), ""))
}

/// Asymptotic Kolmogorov survival function `Q(λ) = 2 Σ (-1)^(j-1) e^(-2 j² λ²)`,
/// truncated at 100 terms. The series does not converge usefully below 0.2,
/// where the true value is 1 to double precision.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = f64::from(j);
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u32 % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `sup |F_a − F_b|` over the pooled sample.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_nonempty(a, b, 1)?;
    let d = ks_statistic(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let lambda = (na * nb / (na + nb)).sqrt() * d;
    Ok(TestResult::new("ks", d, Some(kolmogorov_q(lambda)), ""))
}

/// `U = #(a_i > b_j) + ½ #(a_i = b_j)` with a tie-corrected normal
/// approximation (no continuity correction).
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_nonempty(a, b, 1)?;
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = pooled.len();
    let (mut rank_sum_a, mut tie_term) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_a += midrank * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let (na, nb, nf) = (a.len() as f64, b.len() as f64, n as f64);
    let u = rank_sum_a - na * (na + 1.0) / 2.0;
    let mean = na * nb / 2.0;
    let var = if n > 1 {
        na * nb / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)))
    } else {
        0.0
    };
    let (z, notes) = if var > 0.0 {
        ((u - mean) / var.sqrt(), "")
    } else {
        (0.0, "all values tied")
    };
    Ok(TestResult::new("mann_whitney", u, Some(normal_two_sided_p(z)), notes))
}
