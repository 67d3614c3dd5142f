//! Temperature reconstruction from the refined model and error analysis.

use crate::bioheat::{solve_pennes, SolverSettings, TemperatureField, TemperatureHistory};
use crate::error::{Error, Result};
use crate::fusion::ParameterStats;
use crate::phantom::{Phantom, UncertainParameterPrior};
use crate::uq::{gauss_legendre, propagate_temperature, tensor_rule, QuadratureRule};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Solve at the posterior mean.
    pub history: TemperatureHistory,
    /// Posterior temperature std at the requested time, if computed.
    pub std: Option<Vec<f64>>,
    pub posterior: ParameterStats,
}

/// Single Pennes solve with mu = posterior mean.
pub fn reconstruct_temperature(
    phantom: &Phantom,
    posterior: &ParameterStats,
    settings: &SolverSettings,
) -> Result<ReconstructionResult> {
    let mu: Vec<f64> = posterior.mean.iter().copied().collect();
    if let Some(i) = phantom.prior.bounds.iter().zip(&mu).position(|(&(lo, hi), &m)| !(lo..=hi).contains(&m)) {
        return Err(Error::domain(format!(
            "posterior mean of parameter {i} ({}) is outside the prior support",
            mu[i]
        )));
    }
    Ok(ReconstructionResult {
        history: solve_pennes(phantom, &mu, settings)?,
        std: None,
        posterior: posterior.clone(),
    })
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp()
}

/// Quadrature over a Gaussian approximation of the posterior: per parameter,
/// Gauss-Legendre nodes on mean +- 3 std clipped to the prior support,
/// weighted by the node weight times the normal density. Parameters with
/// zero variance collapse to their mean.
pub fn posterior_rule(
    posterior: &ParameterStats,
    support: &UncertainParameterPrior,
    nodes_per_dim: usize,
) -> Result<QuadratureRule> {
    if nodes_per_dim == 0 {
        return Err(Error::validation("nodes_per_dim", "must be >= 1"));
    }
    if support.dim() != posterior.dim() {
        return Err(Error::domain("posterior and prior dimensions differ"));
    }
    let sd = posterior.std_devs();
    let mut rules = Vec::with_capacity(posterior.dim());
    for (i, &(lo, hi)) in support.bounds.iter().enumerate() {
        let m = posterior.mean[i];
        if sd[i] == 0.0 || nodes_per_dim == 1 {
            rules.push(QuadratureRule {
                nodes: vec![vec![m]],
                weights: vec![1.0],
            });
            continue;
        }
        let a = (m - 3.0 * sd[i]).max(lo);
        let b = (m + 3.0 * sd[i]).min(hi);
        if !(a < b) {
            rules.push(QuadratureRule {
                nodes: vec![vec![m.clamp(lo, hi)]],
                weights: vec![1.0],
            });
            continue;
        }
        let mut r = gauss_legendre(nodes_per_dim, a, b)?;
        for (w, x) in r.weights.iter_mut().zip(&r.nodes) {
            *w *= normal_pdf(x[0], m, sd[i]);
        }
        let total: f64 = r.weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::numerical("posterior quadrature weights vanish"));
        }
        r.weights.iter_mut().for_each(|w| *w /= total);
        rules.push(r);
    }
    tensor_rule(&rules)
}

/// Mean and std of the temperature at time `t` under the posterior.
pub fn posterior_temperature_stats(
    phantom: &Phantom,
    posterior: &ParameterStats,
    settings: &SolverSettings,
    t: f64,
    nodes_per_dim: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let rule = posterior_rule(posterior, &phantom.prior, nodes_per_dim)?;
    let m = propagate_temperature(phantom, settings, &rule, t, 2)?;
    let std = m.moment.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok((m.mean, std))
}

/// Default re-propagation nodes per parameter.
pub fn default_posterior_nodes(d: usize) -> usize {
    if d == 1 {
        5
    } else {
        3
    }
}

/// Voxel subset for error metrics.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Full,
    /// Inclusive index box per axis.
    Box { min: Vec<usize>, max: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub rmse: f64,
    pub max_abs_error: f64,
    pub voxels: usize,
}

/// RMSE and maximum absolute error over `region`.
pub fn error_metrics(
    estimate: &TemperatureField,
    truth: &TemperatureField,
    dims: &[usize],
    region: &Region,
) -> Result<ErrorReport> {
    let n: usize = dims.iter().product();
    if estimate.values.len() != n || truth.values.len() != n {
        return Err(Error::domain("fields do not match the grid"));
    }
    let strides = crate::phantom::strides_of(dims);
    let inside = |i: usize| match region {
        Region::Full => true,
        Region::Box { min, max } => dims
            .iter()
            .enumerate()
            .all(|(a, &na)| {
                let c = (i / strides[a]) % na;
                c >= min[a] && c <= max[a]
            }),
    };
    if let Region::Box { min, max } = region {
        if min.len() != dims.len() || max.len() != dims.len() {
            return Err(Error::domain("region box has the wrong number of axes"));
        }
    }
    let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
    for i in (0..n).filter(|&i| inside(i)) {
        let e = estimate.values[i] - truth.values[i];
        sum += e * e;
        max = max.max(e.abs());
        count += 1;
    }
    if count == 0 {
        return Err(Error::domain("error region contains no voxels"));
    }
    Ok(ErrorReport {
        rmse: (sum / count as f64).sqrt(),
        max_abs_error: max,
        voxels: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn field(values: Vec<f64>) -> TemperatureField {
        TemperatureField { values, time: 1.0 }
    }

    #[test]
    fn metric_examples() {
        let dims = [10, 10];
        let t = field(vec![37.0; 100]);
        let r = error_metrics(&t, &t, &dims, &Region::Full).unwrap();
        assert_eq!((r.rmse, r.max_abs_error), (0.0, 0.0));
        let shifted = field(vec![39.0; 100]);
        let r = error_metrics(&shifted, &t, &dims, &Region::Full).unwrap();
        assert!((r.rmse - 2.0).abs() < 1e-12 && r.max_abs_error == 2.0);
        let mut spike = vec![37.0; 100];
        spike[42] = 42.0;
        let r = error_metrics(&field(spike), &t, &dims, &Region::Full).unwrap();
        assert!((r.rmse - 0.5).abs() < 1e-12 && r.max_abs_error == 5.0);
    }

    #[test]
    fn box_regions() {
        let dims = [4, 4];
        let mut v = vec![0.0; 16];
        v[5] = 3.0; // (1, 1)
        let region = Region::Box {
            min: vec![1, 1],
            max: vec![2, 2],
        };
        let r = error_metrics(&field(v), &field(vec![0.0; 16]), &dims, &region).unwrap();
        assert_eq!(r.voxels, 4);
        assert!((r.rmse - 1.5).abs() < 1e-12);
        let empty = Region::Box {
            min: vec![3, 3],
            max: vec![2, 2],
        };
        assert!(error_metrics(&field(vec![0.0; 16]), &field(vec![0.0; 16]), &dims, &empty).is_err());
    }

    #[test]
    fn posterior_rule_degenerates() {
        let support = UncertainParameterPrior::new(&[10.0, 10.0], &[300.0, 400.0]).unwrap();
        let zero = ParameterStats {
            mean: DVector::from_vec(vec![100.0, 200.0]),
            covariance: DMatrix::zeros(2, 2),
        };
        let r = posterior_rule(&zero, &support, 3).unwrap();
        assert_eq!(r.nodes, vec![vec![100.0, 200.0]]);
        let wide = ParameterStats {
            mean: DVector::from_vec(vec![100.0, 200.0]),
            covariance: DMatrix::from_diagonal(&DVector::from_vec(vec![400.0, 900.0])),
        };
        let r = posterior_rule(&wide, &support, 3).unwrap();
        assert_eq!(r.len(), 9);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let one = posterior_rule(&wide, &support, 1).unwrap();
        assert_eq!(one.nodes, vec![vec![100.0, 200.0]]);
    }
}
