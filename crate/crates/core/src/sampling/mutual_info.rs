//! Mutual information between a scalar parameter and single k-space samples,
//! by nested quadrature. Only meant for toy problems; it checks that ranking
//! points by predicted variance tracks ranking by information.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phantom::UncertainParameterPrior;
use crate::uq::{gauss_hermite, gauss_legendre, QuadratureRule};

/// Largest number of k-points evaluated in one call.
pub const MAX_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiBudget {
    /// Gauss-Hermite nodes per noise component.
    pub noise_nodes: usize,
    /// Cap on parameter-node x noise-node x parameter-node evaluations per point.
    pub max_evaluations: usize,
}

impl Default for MiBudget {
    fn default() -> Self {
        Self {
            noise_nodes: 24,
            max_evaluations: 50_000_000,
        }
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64>, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(xs);
    let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + buf.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// I(mu; z) in nats for each point, where z = U(mu) + complex Gaussian noise
/// with std `sigma` per real component and mu follows `rule` (a 1-D rule
/// whose weights are prior probabilities). `forward` returns U at every
/// point for a given mu.
///
/// Uses I = h(z) - h(z | mu); h(z | mu) = ln(2 pi e sigma^2) for two real
/// components, and h(z) is integrated over the mixture density by
/// Gauss-Hermite quadrature in the noise.
pub fn mutual_information_reference(
    rule: &QuadratureRule,
    forward: &(dyn Fn(f64) -> Vec<Complex64> + Sync),
    sigma: f64,
    budget: &MiBudget,
) -> Result<Vec<f64>> {
    if rule.dim() != 1 {
        return Err(Error::domain("mutual information oracle needs a scalar parameter"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::validation("sigma", "must be positive and finite"));
    }
    let m = rule.len();
    let e = budget.noise_nodes;
    if m * m * e * e > budget.max_evaluations {
        return Err(Error::domain(format!(
            "quadrature budget exceeded: {m} parameter nodes and {e} noise nodes need {} evaluations (cap {})",
            m * m * e * e,
            budget.max_evaluations
        )));
    }
    let predictions: Vec<Vec<Complex64>> = rule.nodes.iter().map(|x| forward(x[0])).collect();
    let npts = predictions.first().map_or(0, Vec::len);
    if npts > MAX_POINTS {
        return Err(Error::domain(format!(
            "{npts} k-points exceed the oracle limit of {MAX_POINTS}"
        )));
    }
    if predictions.iter().any(|p| p.len() != npts) {
        return Err(Error::domain("forward map returned inconsistent lengths"));
    }
    let gh = gauss_hermite(e)?;
    let log_w: Vec<f64> = rule.weights.iter().map(|w| w.ln()).collect();
    let inv2s2 = 0.5 / (sigma * sigma);
    let cond_entropy = (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln();
    // -ln of the normal density normaliser for two components
    let log_norm = -(2.0 * std::f64::consts::PI * sigma * sigma).ln();

    Ok((0..npts)
        .into_par_iter()
        .map(|k| {
            let u: Vec<Complex64> = predictions.iter().map(|p| p[k]).collect();
            let mut buf = Vec::with_capacity(m);
            let mut h = 0.0;
            for (q, uq) in u.iter().enumerate() {
                for (ea, va) in gh.nodes.iter().zip(&gh.weights) {
                    for (eb, vb) in gh.nodes.iter().zip(&gh.weights) {
                        let z = uq + Complex64::new(sigma * ea[0], sigma * eb[0]);
                        let lp = log_norm
                            + log_sum_exp(
                                u.iter().zip(&log_w).map(|(ur, lw)| lw - (z - ur).norm_sqr() * inv2s2),
                                &mut buf,
                            );
                        h -= rule.weights[q] * va * vb * lp;
                    }
                }
            }
            h - cond_entropy
        })
        .collect())
}

/// Oracle under a uniform prior, discretised with `mu_nodes` Gauss-Legendre
/// points.
pub fn mutual_information_uniform(
    prior: &UncertainParameterPrior,
    mu_nodes: usize,
    forward: &(dyn Fn(f64) -> Vec<Complex64> + Sync),
    sigma: f64,
    budget: &MiBudget,
) -> Result<Vec<f64>> {
    if prior.dim() != 1 {
        return Err(Error::domain("mutual information oracle needs d = 1"));
    }
    let (lo, hi) = prior.bounds[0];
    mutual_information_reference(&gauss_legendre(mu_nodes, lo, hi)?, forward, sigma, budget)
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64;
        for &t in &idx[i..=j] {
            r[t] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::domain("need two equally long samples of size >= 2"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::domain("rank correlation undefined for constant input"));
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_prior(n: usize, var: f64) -> QuadratureRule {
        let mut r = gauss_hermite(n).unwrap();
        r.nodes.iter_mut().for_each(|x| x[0] *= var.sqrt());
        r
    }

    #[test]
    fn linear_gaussian_matches_closed_form() {
        // real-valued U = H mu: the imaginary component carries no information
        let p = 2.0;
        let sigma = 1.0;
        let hs = [0.3, 0.7, 1.0, 1.5];
        let rule = gaussian_prior(40, p);
        let f = move |mu: f64| hs.iter().map(|h| Complex64::new(h * mu, 0.0)).collect();
        let mi = mutual_information_reference(&rule, &f, sigma, &MiBudget::default()).unwrap();
        for (h, got) in hs.iter().zip(&mi) {
            let exact = 0.5 * (1.0 + h * h * p / (sigma * sigma)).ln();
            assert!(((got - exact) / exact).abs() < 0.02, "H={h}: {got} vs {exact}");
        }
    }

    #[test]
    fn large_noise_carries_no_information() {
        let prior = UncertainParameterPrior::new(&[100.0], &[400.0]).unwrap();
        let f = |mu: f64| vec![Complex64::from_polar(1.0, mu / 100.0), Complex64::new(mu * 1e-3, 0.0)];
        let mi = mutual_information_uniform(&prior, 15, &f, 1e3, &MiBudget::default()).unwrap();
        assert!(mi.iter().all(|&v| v.abs() < 1e-3));
    }

    #[test]
    fn nonnegative() {
        let prior = UncertainParameterPrior::new(&[1.0], &[2.0]).unwrap();
        let f = |mu: f64| (0..8).map(|k| Complex64::from_polar(1.0, mu * k as f64)).collect();
        let mi = mutual_information_uniform(&prior, 20, &f, 0.3, &MiBudget::default()).unwrap();
        assert!(mi.iter().all(|&v| v >= -1e-9));
    }

    #[test]
    fn budget_and_size_limits() {
        let prior = UncertainParameterPrior::new(&[1.0], &[2.0]).unwrap();
        let f = |_mu: f64| vec![Complex64::new(0.0, 0.0); 65];
        assert!(mutual_information_uniform(&prior, 3, &f, 1.0, &MiBudget::default()).is_err());
        let g = |_mu: f64| vec![Complex64::new(0.0, 0.0)];
        let tight = MiBudget {
            noise_nodes: 10,
            max_evaluations: 100,
        };
        assert!(mutual_information_uniform(&prior, 3, &g, 1.0, &tight).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
