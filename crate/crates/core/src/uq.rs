//! Quadrature rules and moment estimation over parameter ensembles.
//!
//! Expectations against the uniform prior are computed as weighted sums over
//! quadrature nodes: `E[f] = sum_q w_q f(xi_q)` with `sum_q w_q = 1`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bioheat::{solve_pennes, SolverSettings, TemperatureHistory};
use crate::error::{Error, Result};
use crate::model::ForwardModel;
use crate::mrsignal::KSpaceSignal;
use crate::phantom::{Phantom, UncertainParameterPrior};

/// Largest parameter dimension accepted by [`tensor_rule`].
pub const MAX_TENSOR_DIM: usize = 4;

/// Nodes in parameter space with probability weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, Vec::len)
    }

    /// Weighted sum of a scalar function over the nodes.
    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = if n == 0 {
        0.0
    } else {
        n as f64 * (x * p1 - p0) / (x * x - 1.0)
    };
    (p, dp)
}

/// n-point Gauss-Legendre rule mapped to `[lo, hi]`, weights normalised to
/// one (expectation under the uniform distribution).
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::validation("nodes", "need at least one node"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::validation("bounds", "need finite lo < hi"));
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    if n == 1 {
        w[0] = 2.0;
    }
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        if n == 1 {
            break;
        }
        // Tricomi initial guess, then Newton
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, z);
            let step = p / dp;
            z -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    Ok(QuadratureRule {
        nodes: x.iter().map(|&t| vec![mid + half * t]).collect(),
        weights: w.iter().map(|&wi| 0.5 * wi).collect(),
    })
}

/// n-point Gauss-Hermite rule for the standard normal distribution
/// (Golub-Welsch), weights summing to one.
pub fn gauss_hermite(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::validation("nodes", "need at least one node"));
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| vec![p.0]).collect(),
        weights: pairs.iter().map(|p| p.1 / total).collect(),
    })
}

/// Cartesian product of 1-D rules; the first rule varies slowest.
pub fn tensor_rule(rules: &[QuadratureRule]) -> Result<QuadratureRule> {
    if rules.is_empty() || rules.len() > MAX_TENSOR_DIM {
        return Err(Error::domain(format!(
            "tensor rules support 1..={MAX_TENSOR_DIM} dimensions, got {}",
            rules.len()
        )));
    }
    let mut nodes = vec![Vec::new()];
    let mut weights = vec![1.0];
    for rule in rules {
        if rule.dim() != 1 {
            return Err(Error::domain("tensor factors must be one-dimensional"));
        }
        let mut next_nodes = Vec::with_capacity(nodes.len() * rule.len());
        let mut next_weights = Vec::with_capacity(nodes.len() * rule.len());
        for (x, w) in nodes.iter().zip(&weights) {
            for (y, v) in rule.nodes.iter().zip(&rule.weights) {
                let mut z = x.clone();
                z.push(y[0]);
                next_nodes.push(z);
                next_weights.push(w * v);
            }
        }
        nodes = next_nodes;
        weights = next_weights;
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Tensor Gauss-Legendre rule over a uniform prior box.
pub fn prior_rule(prior: &UncertainParameterPrior, nodes_per_dim: usize) -> Result<QuadratureRule> {
    let rules = prior
        .bounds
        .iter()
        .map(|&(lo, hi)| gauss_legendre(nodes_per_dim, lo, hi))
        .collect::<Result<Vec<_>>>()?;
    tensor_rule(&rules)
}

/// Forward-model output at one quadrature node.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub mu: Vec<f64>,
    pub history: TemperatureHistory,
    /// Noiseless k-space at the fusion time.
    pub signal: KSpaceSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub weights: Vec<f64>,
    pub members: Vec<Member>,
    pub fusion_time: f64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Weighted mean of the node parameters.
    pub fn parameter_mean(&self) -> Vec<f64> {
        let d = self.members.first().map_or(0, |m| m.mu.len());
        let mut mean = vec![0.0; d];
        for (m, w) in self.members.iter().zip(&self.weights) {
            for (acc, x) in mean.iter_mut().zip(&m.mu) {
                *acc += w * x;
            }
        }
        mean
    }

    /// Weighted covariance of the node parameters, row-major d x d.
    pub fn parameter_covariance(&self) -> Vec<Vec<f64>> {
        let mean = self.parameter_mean();
        let d = mean.len();
        let mut cov = vec![vec![0.0; d]; d];
        for (m, w) in self.members.iter().zip(&self.weights) {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += w * (m.mu[i] - mean[i]) * (m.mu[j] - mean[j]);
                }
            }
        }
        cov
    }

    /// Temperature fields of all members at time `t`.
    pub fn temperatures_at(&self, t: f64) -> Result<Vec<&[f64]>> {
        self.members
            .iter()
            .map(|m| {
                m.history
                    .at(t)
                    .map(|f| f.values.as_slice())
                    .ok_or_else(|| Error::domain(format!("no ensemble output at t = {t} s")))
            })
            .collect()
    }
}

/// Runs the forward model at every node of `rule`. Members are stored in node
/// order regardless of execution order.
pub fn propagate_ensemble(model: &ForwardModel, rule: &QuadratureRule) -> Result<Ensemble> {
    let d = model.phantom.num_tissues();
    if let Some((q, _)) = rule.nodes.iter().enumerate().find(|(_, x)| x.len() != d) {
        return Err(Error::domain(format!(
            "node {q} has {} parameters, phantom has {d} tissues",
            rule.nodes[q].len()
        )));
    }
    let members = rule
        .nodes
        .par_iter()
        .enumerate()
        .map(|(q, mu)| {
            model
                .simulate(mu)
                .map(|sim| Member {
                    mu: mu.clone(),
                    history: sim.history,
                    signal: sim.signal,
                })
                .map_err(|e| Error::Node {
                    node: q,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        weights: rule.weights.clone(),
        members,
        fusion_time: model.fusion_time,
    })
}

/// Temperature moments at time `t` without the signal model, for
/// re-propagation under a posterior rule.
pub fn propagate_temperature(
    phantom: &Phantom,
    settings: &SolverSettings,
    rule: &QuadratureRule,
    t: f64,
    order: u32,
) -> Result<MomentField> {
    let mut settings = settings.clone();
    if !settings.output_times.contains(&t) {
        settings.output_times.push(t);
        settings.output_times.sort_by(f64::total_cmp);
    }
    let fields = rule
        .nodes
        .par_iter()
        .enumerate()
        .map(|(q, mu)| {
            let h = solve_pennes(phantom, mu, &settings).map_err(|e| Error::Node {
                node: q,
                source: Box::new(e),
            })?;
            Ok(h.at(t).expect("t was added to the output times").values.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = fields.iter().map(Vec::as_slice).collect();
    weighted_moments(&rule.weights, &refs, order)
}

/// Mean and j-th central moment per grid point. For `order == 1` both
/// vectors hold the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentField {
    pub order: u32,
    pub mean: Vec<f64>,
    pub moment: Vec<f64>,
}

/// Complex mean and real j-th absolute central moment `sum w |U - mean|^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMoments {
    pub order: u32,
    pub mean: Vec<Complex64>,
    pub moment: Vec<f64>,
}

fn check_order(order: u32) -> Result<()> {
    if order == 0 {
        return Err(Error::validation("order", "moment order must be >= 1"));
    }
    Ok(())
}

/// Weighted moments of real samples (one slice per node).
pub fn weighted_moments(weights: &[f64], samples: &[&[f64]], order: u32) -> Result<MomentField> {
    check_order(order)?;
    if weights.len() != samples.len() || samples.is_empty() {
        return Err(Error::domain("one weight per sample is required"));
    }
    let n = samples[0].len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(Error::domain("samples differ in length"));
    }
    let mut mean = vec![0.0; n];
    for (s, w) in samples.iter().zip(weights) {
        for (m, x) in mean.iter_mut().zip(s.iter()) {
            *m += w * x;
        }
    }
    let moment = if order == 1 {
        mean.clone()
    } else {
        let mut acc = vec![0.0; n];
        for (s, w) in samples.iter().zip(weights) {
            for ((a, x), m) in acc.iter_mut().zip(s.iter()).zip(&mean) {
                *a += w * (x - m).powi(order as i32);
            }
        }
        if order.is_multiple_of(2) {
            acc.iter_mut().for_each(|a| *a = a.max(0.0));
        }
        acc
    };
    Ok(MomentField {
        order,
        mean,
        moment,
    })
}

/// Temperature moments at time `t`.
pub fn temperature_moments(ensemble: &Ensemble, t: f64, order: u32) -> Result<MomentField> {
    weighted_moments(&ensemble.weights, &ensemble.temperatures_at(t)?, order)
}

/// Weighted moments of complex samples.
pub fn complex_moments(weights: &[f64], samples: &[&[Complex64]], order: u32) -> Result<SignalMoments> {
    check_order(order)?;
    if weights.len() != samples.len() || samples.is_empty() {
        return Err(Error::domain("one weight per sample is required"));
    }
    let n = samples[0].len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(Error::domain("samples differ in length"));
    }
    let mut mean = vec![Complex64::new(0.0, 0.0); n];
    for (s, w) in samples.iter().zip(weights) {
        for (m, x) in mean.iter_mut().zip(s.iter()) {
            *m += x * *w;
        }
    }
    let moment = if order == 1 {
        mean.iter().map(|m| m.norm()).collect()
    } else {
        let mut acc = vec![0.0; n];
        for (s, w) in samples.iter().zip(weights) {
            for ((a, x), m) in acc.iter_mut().zip(s.iter()).zip(&mean) {
                *a += w * (x - m).norm().powi(order as i32);
            }
        }
        acc
    };
    Ok(SignalMoments {
        order,
        mean,
        moment,
    })
}

/// k-space moments at the fusion time. Order 2 is the variance map.
pub fn signal_moments(ensemble: &Ensemble, order: u32) -> Result<SignalMoments> {
    let samples: Vec<&[Complex64]> = ensemble.members.iter().map(|m| m.signal.data.as_slice()).collect();
    complex_moments(&ensemble.weights, &samples, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_node_is_midpoint() {
        let r = gauss_legendre(1, 2.0, 6.0).unwrap();
        assert_eq!(r.nodes, vec![vec![4.0]]);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn two_node_rule_is_closed_form() {
        let r = gauss_legendre(2, -1.0, 1.0).unwrap();
        let x = 1.0 / 3f64.sqrt();
        assert!((r.nodes[0][0] + x).abs() < 1e-15);
        assert!((r.nodes[1][0] - x).abs() < 1e-15);
        assert!(r.weights.iter().all(|&w| (w - 0.5).abs() < 1e-15));
    }

    #[test]
    fn gl15_integrates_monomials_to_degree_29() {
        let r = gauss_legendre(15, 0.0, 1.0).unwrap();
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..=29 {
            let exact = 1.0 / (k as f64 + 1.0);
            let got = r.expect(|x| x[0].powi(k));
            assert!(((got - exact) / exact).abs() < 1e-9, "degree {k}");
        }
    }

    #[test]
    fn gauss_hermite_matches_normal_moments() {
        let r = gauss_hermite(12).unwrap();
        let moments = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0];
        for (k, &m) in moments.iter().enumerate() {
            assert!((r.expect(|x| x[0].powi(k as i32)) - m).abs() < 1e-9 * m.max(1.0));
        }
    }

    #[test]
    fn tensor_rules() {
        let one = gauss_legendre(1, 0.0, 1.0).unwrap();
        let t = tensor_rule(&[one.clone(), one.clone()]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.weights, vec![1.0]);
        let three = gauss_legendre(3, 10.0, 400.0).unwrap();
        let t4 = tensor_rule(&vec![three.clone(); 4]).unwrap();
        assert_eq!(t4.len(), 81);
        assert!((t4.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(tensor_rule(&vec![three; 5]).is_err());
        assert!(tensor_rule(&[]).is_err());
    }

    #[test]
    fn tensor_rule_integrates_product_exactly() {
        // E[x^2 y^2] with x ~ U[10, 300], y ~ U[10, 400]
        let a = gauss_legendre(2, 10.0, 300.0).unwrap();
        let b = gauss_legendre(2, 10.0, 400.0).unwrap();
        let t = tensor_rule(&[a, b]).unwrap();
        let m2 = |lo: f64, hi: f64| (hi.powi(3) - lo.powi(3)) / (3.0 * (hi - lo));
        let exact = m2(10.0, 300.0) * m2(10.0, 400.0);
        let got = t.expect(|x| x[0] * x[0] * x[1] * x[1]);
        assert!(((got - exact) / exact).abs() < 1e-10);
    }

    #[test]
    fn two_point_complex_variance() {
        let a = [Complex64::new(1.0, 0.0)];
        let b = [Complex64::new(3.0, 0.0)];
        let m = complex_moments(&[0.5, 0.5], &[&a, &b], 2).unwrap();
        assert_eq!(m.mean[0], Complex64::new(2.0, 0.0));
        assert_eq!(m.moment[0], 1.0);
    }

    #[test]
    fn constant_ensemble_moments() {
        let s = [4.5, -1.0];
        for j in 1..5 {
            let m = weighted_moments(&[0.2, 0.3, 0.5], &[&s, &s, &s], j).unwrap();
            assert_eq!(m.mean, s.to_vec());
            if j > 1 {
                assert!(m.moment.iter().all(|&v| v == 0.0));
            }
        }
        assert!(weighted_moments(&[1.0], &[&s], 0).is_err());
    }

    #[test]
    fn gl5_mean_of_square_matches_analytic() {
        let (lo, hi) = (100.0, 400.0);
        let r = gauss_legendre(5, lo, hi).unwrap();
        let values: Vec<[f64; 1]> = r.nodes.iter().map(|x| [x[0] * x[0]]).collect();
        let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
        let m = weighted_moments(&r.weights, &refs, 1).unwrap();
        let exact = (hi.powi(3) - lo.powi(3)) / (3.0 * (hi - lo));
        assert!(((m.mean[0] - exact) / exact).abs() < 1e-10);
    }

    #[test]
    fn polynomial_moments_are_exact_up_to_degree() {
        // u(mu) = mu^3 under U[0, 1]; variance involves degree 6 <= 2n - 1 for n = 4
        let r = gauss_legendre(4, 0.0, 1.0).unwrap();
        let vals: Vec<[f64; 1]> = r.nodes.iter().map(|x| [x[0].powi(3)]).collect();
        let refs: Vec<&[f64]> = vals.iter().map(|v| v.as_slice()).collect();
        let m = weighted_moments(&r.weights, &refs, 2).unwrap();
        let exact = 1.0 / 7.0 - 1.0 / 16.0;
        assert!(((m.moment[0] - exact) / exact).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn moments_are_affine_equivariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 2..8),
            a in -3.0f64..3.0,
            b in -10.0f64..10.0,
        ) {
            let w = vec![1.0 / xs.len() as f64; xs.len()];
            let samples: Vec<[f64; 1]> = xs.iter().map(|&x| [x]).collect();
            let mapped: Vec<[f64; 1]> = xs.iter().map(|&x| [a * x + b]).collect();
            let r1: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
            let r2: Vec<&[f64]> = mapped.iter().map(|s| s.as_slice()).collect();
            let m = weighted_moments(&w, &r1, 2).unwrap();
            let n = weighted_moments(&w, &r2, 2).unwrap();
            prop_assert!((n.mean[0] - (a * m.mean[0] + b)).abs() < 1e-9);
            prop_assert!((n.moment[0] - a * a * m.moment[0]).abs() < 1e-9 * (1.0 + m.moment[0]));
        }

        #[test]
        fn gl_rules_sum_to_one(n in 1usize..40, lo in -100.0f64..100.0, width in 0.1f64..500.0) {
            let r = gauss_legendre(n, lo, lo + width).unwrap();
            prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.nodes.iter().all(|x| x[0] > lo && x[0] < lo + width));
        }
    }
}
