//! One-class SVM with an RBF kernel, solved by SMO on the dual
//!
//! ```text
//! minimize ½ αᵀKα   subject to   0 ≤ α_i ≤ 1/(ν n),   Σ α_i = 1
//! ```
//!
//! Each step moves mass between the maximal violating pair, with the second
//! index picked by the second-order gain `(G_j - G_i)² / (K_ii + K_jj - 2K_ij)`.
//! The decision function is `Σ α_i K(x_i, q) - ρ`; positive means inlier.

use serde::{Deserialize, Serialize};

use crate::error::{ForteError, Result};
use crate::matrix::FeatureMatrix;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// `1 / (f · mean column variance)`
    Scale,
    Fixed(f64),
}

impl std::str::FromStr for GammaRule {
    type Err = ForteError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("scale") {
            return Ok(GammaRule::Scale);
        }
        s.parse::<f64>()
            .map(GammaRule::Fixed)
            .map_err(|_| ForteError::param(format!("gamma must be 'scale' or a number, got {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcsvmParams {
    pub nu: f64,
    pub gamma: GammaRule,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OcsvmParams {
    fn default() -> Self {
        OcsvmParams {
            nu: 0.05,
            gamma: GammaRule::Scale,
            tol: 1e-6,
            max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub params: OcsvmParams,
    pub gamma: f64,
    pub rho: f64,
    pub support_vectors: FeatureMatrix,
    pub alphas: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest KKT violation `max_{α>0} G - min_{α<C} G` at exit.
    pub kkt_violation: f64,
    pub n_train: usize,
}

#[inline]
fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
    (-gamma * sq).exp()
}

fn scale_gamma(x: &FeatureMatrix) -> f64 {
    let n = x.rows() as f64;
    let f = x.cols();
    let mean_var = (0..f)
        .map(|j| {
            let c = x.column(j);
            let m = c.iter().sum::<f64>() / n;
            c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
        })
        .sum::<f64>()
        / f as f64;
    if mean_var > 0.0 {
        1.0 / (f as f64 * mean_var)
    } else {
        1.0
    }
}

/// Solver state on the full kernel matrix; returns (alphas, gradient, iterations, violation, converged).
struct Smo<'a> {
    k: &'a [f64],
    n: usize,
    upper: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
}

impl Smo<'_> {
    fn kernel(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.n + j]
    }

    /// Maximal violating pair, or `None` when the gap is below `tol`.
    fn select(&self, tol: f64) -> (Option<(usize, usize)>, f64) {
        let mut i_best = None;
        let mut g_min = f64::INFINITY;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..self.n {
            if self.alpha[t] < self.upper && self.grad[t] < g_min {
                g_min = self.grad[t];
                i_best = Some(t);
            }
            if self.alpha[t] > 0.0 && self.grad[t] > g_max {
                g_max = self.grad[t];
            }
        }
        let gap = g_max - g_min;
        let Some(i) = i_best else {
            return (None, 0.0);
        };
        if gap < tol {
            return (None, gap.max(0.0));
        }
        let kii = self.kernel(i, i);
        let mut j_best = None;
        let mut best_gain = f64::NEG_INFINITY;
        for t in 0..self.n {
            if self.alpha[t] > 0.0 && self.grad[t] > g_min {
                let b = self.grad[t] - g_min;
                let a = (kii + self.kernel(t, t) - 2.0 * self.kernel(i, t)).max(1e-12);
                let gain = b * b / a;
                if gain > best_gain {
                    best_gain = gain;
                    j_best = Some(t);
                }
            }
        }
        (j_best.map(|j| (i, j)), gap)
    }

    fn step(&mut self, i: usize, j: usize) {
        let a = (self.kernel(i, i) + self.kernel(j, j) - 2.0 * self.kernel(i, j)).max(1e-12);
        let room_i = self.upper - self.alpha[i];
        let room_j = self.alpha[j];
        let t = ((self.grad[j] - self.grad[i]) / a).min(room_i).min(room_j);
        // land exactly on the bounds so the active sets stay clean
        if t == room_i {
            self.alpha[i] = self.upper;
        } else {
            self.alpha[i] += t;
        }
        if t == room_j {
            self.alpha[j] = 0.0;
        } else {
            self.alpha[j] -= t;
        }
        for s in 0..self.n {
            self.grad[s] += t * (self.kernel(s, i) - self.kernel(s, j));
        }
    }

    fn rho(&self) -> f64 {
        let mut free_sum = 0.0;
        let mut free_count = 0usize;
        let mut lower = f64::NEG_INFINITY; // max G over α at the upper bound
        let mut upper = f64::INFINITY; // min G over α = 0
        for t in 0..self.n {
            let g = self.grad[t];
            if self.alpha[t] >= self.upper {
                lower = lower.max(g);
            } else if self.alpha[t] <= 0.0 {
                upper = upper.min(g);
            } else {
                free_sum += g;
                free_count += 1;
            }
        }
        if free_count > 0 {
            free_sum / free_count as f64
        } else if lower.is_finite() && upper.is_finite() {
            0.5 * (lower + upper)
        } else if lower.is_finite() {
            lower
        } else {
            upper
        }
    }
}

pub fn ocsvm_fit(x: &FeatureMatrix, params: &OcsvmParams) -> Result<OcsvmModel> {
    let n = x.rows();
    if !(params.nu > 0.0 && params.nu <= 1.0) {
        return Err(ForteError::param(format!(
            "nu must lie in (0, 1], got {}",
            params.nu
        )));
    }
    if n < 2 {
        return Err(ForteError::param("one-class SVM needs at least 2 points"));
    }
    if !x.all_finite() {
        return Err(ForteError::Degenerate(
            "non-finite value in OCSVM input".into(),
        ));
    }
    let gamma = match params.gamma {
        GammaRule::Scale => scale_gamma(x),
        GammaRule::Fixed(g) if g > 0.0 => g,
        GammaRule::Fixed(g) => {
            return Err(ForteError::param(format!("gamma must be > 0, got {g}")))
        }
    };

    let rows: Vec<Vec<f64>> = par::map_range(n, |i| {
        let xi = x.row(i);
        (0..n).map(|j| rbf(gamma, xi, x.row(j))).collect()
    });
    let kernel: Vec<f64> = rows.into_iter().flatten().collect();

    let upper = 1.0 / (params.nu * n as f64);
    // start from the feasible point that fills the first ⌊νn⌋ slots
    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0f64;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        let v = upper.min(remaining);
        *a = v;
        remaining -= v;
    }
    let grad: Vec<f64> = (0..n)
        .map(|s| (0..n).map(|t| kernel[s * n + t] * alpha[t]).sum())
        .collect();

    let mut smo = Smo {
        k: &kernel,
        n,
        upper,
        alpha,
        grad,
    };
    let mut iterations = 0;
    let mut converged = false;
    let mut violation;
    loop {
        let (pair, gap) = smo.select(params.tol);
        violation = gap;
        match pair {
            None => {
                converged = true;
                break;
            }
            Some(_) if iterations >= params.max_iter => break,
            Some((i, j)) => {
                smo.step(i, j);
                iterations += 1;
            }
        }
    }
    if !converged {
        log::warn!(
            "one-class SVM stopped after {iterations} iterations with KKT violation {violation:.3e}"
        );
    }
    let rho = smo.rho();

    let sv: Vec<usize> = (0..n).filter(|&t| smo.alpha[t] > 0.0).collect();
    let mut sv_data = Vec::with_capacity(sv.len() * x.cols());
    for &t in &sv {
        sv_data.extend_from_slice(x.row(t));
    }
    Ok(OcsvmModel {
        params: *params,
        gamma,
        rho,
        support_vectors: FeatureMatrix::new(sv.len(), x.cols(), sv_data)?,
        alphas: sv.iter().map(|&t| smo.alpha[t]).collect(),
        converged,
        iterations,
        kkt_violation: violation,
        n_train: n,
    })
}

impl OcsvmModel {
    pub fn upper_bound(&self) -> f64 {
        1.0 / (self.params.nu * self.n_train as f64)
    }

    pub fn decision_row(&self, q: &[f64]) -> f64 {
        self.support_vectors
            .iter_rows()
            .zip(&self.alphas)
            .map(|(s, a)| a * rbf(self.gamma, s, q))
            .sum::<f64>()
            - self.rho
    }

    pub fn decision(&self, q: &FeatureMatrix) -> Result<Vec<f64>> {
        if q.cols() != self.support_vectors.cols() {
            return Err(ForteError::DimensionMismatch {
                expected: self.support_vectors.cols(),
                found: q.cols(),
            });
        }
        Ok(par::map_range(q.rows(), |i| self.decision_row(q.row(i))))
    }
}
