//! Linear minimum-variance update of the attenuation statistics from a
//! subset of k-space samples.
//!
//! Complex samples are stacked as real vectors: for each line in pattern
//! order, each sample in ascending readout index contributes its real then
//! imaginary part. The noise covariance is `sigma^2 I` in that space.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mrsignal::KSpaceSignal;
use crate::phantom::UncertainParameterPrior;
use crate::sampling::SamplingPattern;
use crate::uq::Ensemble;

/// Mean and covariance of the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl ParameterStats {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::domain("covariance shape does not match the mean"));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance,
        })
    }

    /// Moments of the uniform prior (independent components).
    pub fn from_prior(prior: &UncertainParameterPrior) -> Self {
        Self {
            mean: DVector::from_vec(prior.mean()),
            covariance: DMatrix::from_diagonal(&DVector::from_vec(prior.variance())),
        }
    }

    /// Quadrature moments of the ensemble parameters.
    pub fn from_ensemble(ensemble: &Ensemble) -> Self {
        let mean = ensemble.parameter_mean();
        let d = mean.len();
        let cov = ensemble.parameter_covariance();
        Self {
            mean: DVector::from_vec(mean),
            covariance: DMatrix::from_fn(d, d, |i, j| cov[i][j]),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().copied().collect()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.variances().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

fn check_pattern(signal: &KSpaceSignal, pattern: &SamplingPattern) -> Result<()> {
    if signal.dims != pattern.geometry.dims || signal.readout_axis != pattern.geometry.readout_axis {
        return Err(Error::domain(format!(
            "pattern geometry {:?}/axis {} does not match k-space {:?}/axis {}",
            pattern.geometry.dims, pattern.geometry.readout_axis, signal.dims, signal.readout_axis
        )));
    }
    let n = pattern.geometry.num_lines();
    if let Some(&l) = pattern.lines.iter().find(|&&l| l >= n) {
        return Err(Error::domain(format!("line {l} out of range (have {n})")));
    }
    Ok(())
}

/// Stacked real vector of the samples on the pattern's lines.
pub fn restrict_to_pattern(signal: &KSpaceSignal, pattern: &SamplingPattern) -> Result<Vec<f64>> {
    check_pattern(signal, pattern)?;
    let mut out = Vec::with_capacity(2 * pattern.len() * pattern.geometry.samples_per_line());
    for &l in &pattern.lines {
        for i in pattern.geometry.sample_indices(l) {
            out.push(signal.data[i].re);
            out.push(signal.data[i].im);
        }
    }
    Ok(out)
}

/// Inverse of [`restrict_to_pattern`]: zero-filled k-space with the given
/// values placed on the pattern's lines.
pub fn embed_restricted(values: &[f64], pattern: &SamplingPattern) -> Result<Vec<Complex64>> {
    let g = &pattern.geometry;
    if values.len() != 2 * pattern.len() * g.samples_per_line() {
        return Err(Error::domain("restricted vector length does not match the pattern"));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); g.dims.iter().product()];
    let mut it = values.chunks_exact(2);
    for &l in &pattern.lines {
        for i in g.sample_indices(l) {
            let c = it.next().expect("length checked above");
            out[i] = Complex64::new(c[0], c[1]);
        }
    }
    Ok(out)
}

/// Weighted deviations of the ensemble from its mean on the pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Anomalies {
    /// Columns sqrt(w_q) (r_q - r_hat), 2n x M.
    pub signal: DMatrix<f64>,
    /// Columns sqrt(w_q) (mu_q - mu_hat), d x M.
    pub parameters: DMatrix<f64>,
    /// Predicted mean r_hat on the pattern.
    pub predicted: DVector<f64>,
}

impl Anomalies {
    pub fn new(ensemble: &Ensemble, pattern: &SamplingPattern) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(Error::domain("empty ensemble"));
        }
        let rows: Vec<Vec<f64>> = ensemble
            .members
            .iter()
            .map(|m| restrict_to_pattern(&m.signal, pattern))
            .collect::<Result<_>>()?;
        let n2 = rows[0].len();
        let mut predicted = DVector::zeros(n2);
        for (r, w) in rows.iter().zip(&ensemble.weights) {
            for (p, x) in predicted.iter_mut().zip(r) {
                *p += w * x;
            }
        }
        let mu_hat = ensemble.parameter_mean();
        let d = mu_hat.len();
        let m = ensemble.len();
        let mut signal = DMatrix::zeros(n2, m);
        let mut parameters = DMatrix::zeros(d, m);
        for (q, (member, w)) in ensemble.members.iter().zip(&ensemble.weights).enumerate() {
            if *w < 0.0 {
                return Err(Error::domain("negative quadrature weight"));
            }
            let s = w.sqrt();
            for i in 0..n2 {
                signal[(i, q)] = s * (rows[q][i] - predicted[i]);
            }
            for i in 0..d {
                parameters[(i, q)] = s * (member.mu[i] - mu_hat[i]);
            }
        }
        Ok(Self {
            signal,
            parameters,
            predicted,
        })
    }

    /// Sigma_mu_z = A B^T, d x 2n.
    pub fn cross_covariance(&self) -> DMatrix<f64> {
        &self.parameters * self.signal.transpose()
    }
}

/// Cross covariance between parameters and the restricted signal.
pub fn cross_covariance(ensemble: &Ensemble, pattern: &SamplingPattern) -> Result<DMatrix<f64>> {
    Ok(Anomalies::new(ensemble, pattern)?.cross_covariance())
}

/// K = Sigma_mu_z (Sigma_UU + R)^-1 and the covariance reduction
/// K (Sigma_UU + R) K^T = K Sigma_mu_z^T.
#[derive(Debug, Clone, PartialEq)]
pub struct GainOperator {
    pub gain: DMatrix<f64>,
    pub reduction: DMatrix<f64>,
}

fn check_noise(r: &[f64], n2: usize) -> Result<()> {
    if r.len() != n2 {
        return Err(Error::domain(format!("{} noise variances for {n2} measurements", r.len())));
    }
    if r.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::validation("noise", "variances must be positive and finite"));
    }
    Ok(())
}

/// Gain through the Woodbury identity with Sigma_UU = B B^T; only an M x M
/// system is solved.
pub fn kalman_gain(anomalies: &DMatrix<f64>, cross: &DMatrix<f64>, r: &[f64]) -> Result<GainOperator> {
    let n2 = anomalies.nrows();
    let m = anomalies.ncols();
    check_noise(r, n2)?;
    if cross.ncols() != n2 {
        return Err(Error::domain("cross covariance and anomalies disagree in length"));
    }
    let rinv = DVector::from_iterator(n2, r.iter().map(|v| 1.0 / v));
    // S1 = Sigma_mu_z R^-1; Bt_rinv = B^T R^-1
    let mut s1 = cross.clone();
    for (j, mut col) in s1.column_iter_mut().enumerate() {
        col *= rinv[j];
    }
    let mut rinv_b = anomalies.clone();
    for (i, mut row) in rinv_b.row_iter_mut().enumerate() {
        row *= rinv[i];
    }
    let inner = DMatrix::identity(m, m) + anomalies.transpose() * &rinv_b;
    let s1b = &s1 * anomalies;
    let solved = match inner.clone().cholesky() {
        Some(ch) => ch.solve(&s1b.transpose()),
        None => inner
            .lu()
            .solve(&s1b.transpose())
            .ok_or_else(|| Error::numerical("singular inner system in gain computation"))?,
    };
    if solved.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite gain"));
    }
    let gain = s1 - solved.transpose() * rinv_b.transpose();
    let reduction = &gain * cross.transpose();
    Ok(GainOperator { gain, reduction })
}

/// Gain for ensemble anomalies, where Sigma_mu_z = A B^T. With
/// G = B^T R^-1 B = V diag(l) V^T the push-through identity gives
/// K = A V diag(1 / (1 + l)) V^T B^T R^-1 and the reduction
/// A V diag(l / (1 + l)) V^T A^T. Unlike [`kalman_gain`] nothing is
/// subtracted, so the result stays accurate when R is tiny against the
/// ensemble spread.
pub fn kalman_gain_factored(anomalies: &Anomalies, r: &[f64]) -> Result<GainOperator> {
    let b = &anomalies.signal;
    let a = &anomalies.parameters;
    check_noise(r, b.nrows())?;
    if a.ncols() != b.ncols() {
        return Err(Error::domain("parameter and signal anomalies disagree in member count"));
    }
    let mut rinv_b = b.clone();
    for (i, mut row) in rinv_b.row_iter_mut().enumerate() {
        row /= r[i];
    }
    let g = b.transpose() * &rinv_b;
    let eig = SymmetricEigen::new((&g + g.transpose()) * 0.5);
    let lambda = eig.eigenvalues.map(|l| l.max(0.0));
    let av = a * &eig.eigenvectors;
    let mut av_inv = av.clone();
    let mut av_red = av.clone();
    for (j, l) in lambda.iter().enumerate() {
        av_inv.column_mut(j).scale_mut(1.0 / (1.0 + l));
        av_red.column_mut(j).scale_mut(l / (1.0 + l));
    }
    let gain = av_inv * (rinv_b * &eig.eigenvectors).transpose();
    let reduction = av_red * av.transpose();
    if gain.iter().chain(reduction.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite gain"));
    }
    Ok(GainOperator { gain, reduction })
}

/// Reference gain by explicit inversion of Sigma_UU + R. Quadratic memory in
/// the measurement count; meant for checking [`kalman_gain`].
pub fn kalman_gain_dense(cross: &DMatrix<f64>, sigma_uu: &DMatrix<f64>, r: &[f64]) -> Result<GainOperator> {
    let n2 = sigma_uu.nrows();
    check_noise(r, n2)?;
    let s = sigma_uu + DMatrix::from_diagonal(&DVector::from_column_slice(r));
    let inv = s
        .try_inverse()
        .ok_or_else(|| Error::numerical("singular innovation covariance"))?;
    let gain = cross * inv;
    let reduction = &gain * cross.transpose();
    Ok(GainOperator { gain, reduction })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub posterior: ParameterStats,
    /// The updated mean left the prior support and was clamped back.
    pub clamped: bool,
}

/// mu+ = mu- + K (z - r_hat); Sigma+ = Sigma- - K Sigma_mu_z^T, symmetrised.
/// With `support` the mean is clamped to the prior box.
pub fn minimum_variance_update(
    prior: &ParameterStats,
    gain: &GainOperator,
    z: &[f64],
    predicted: &[f64],
    support: Option<&UncertainParameterPrior>,
) -> Result<FusionResult> {
    let d = prior.dim();
    if z.is_empty() {
        return Ok(FusionResult {
            posterior: prior.clone(),
            clamped: false,
        });
    }
    if gain.gain.shape() != (d, z.len()) || predicted.len() != z.len() {
        return Err(Error::domain("gain, measurement and prediction shapes disagree"));
    }
    let innovation = DVector::from_iterator(z.len(), z.iter().zip(predicted).map(|(a, b)| a - b));
    let mut mean = &prior.mean + &gain.gain * innovation;
    let raw = &prior.covariance - &gain.reduction;
    let covariance = (&raw + raw.transpose()) * 0.5;

    let floor = -1e-8 * prior.trace().abs();
    let min_eig = SymmetricEigen::new(covariance.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < floor {
        return Err(Error::numerical(format!(
            "posterior covariance indefinite (eigenvalue {min_eig:.3e})"
        )));
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite posterior mean"));
    }
    let mut clamped = false;
    if let Some(p) = support {
        for (v, &(lo, hi)) in mean.iter_mut().zip(&p.bounds) {
            let c = v.clamp(lo, hi);
            if c != *v {
                clamped = true;
                *v = c;
            }
        }
        if clamped {
            log::info!("posterior mean clamped to the prior support");
        }
    }
    Ok(FusionResult {
        posterior: ParameterStats { mean, covariance },
        clamped,
    })
}

/// Restricted measurements with their noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub values: Vec<f64>,
    /// Per-component noise variance sigma^2.
    pub noise_variance: f64,
}

impl MeasurementSet {
    pub fn new(signal: &KSpaceSignal, pattern: &SamplingPattern, sigma: f64) -> Result<Self> {
        Ok(Self {
            values: restrict_to_pattern(signal, pattern)?,
            noise_variance: sigma * sigma,
        })
    }
}

/// Full update: prior moments from the ensemble, gain on the pattern, and the
/// measurement innovation. `sigma == 0` is treated as noiseless data with a
/// tiny regularising variance relative to the ensemble spread.
pub fn fuse(
    ensemble: &Ensemble,
    pattern: &SamplingPattern,
    measurement: &KSpaceSignal,
    sigma: f64,
    support: Option<&UncertainParameterPrior>,
) -> Result<FusionResult> {
    let prior = ParameterStats::from_ensemble(ensemble);
    if pattern.is_empty() {
        return Ok(FusionResult {
            posterior: prior,
            clamped: false,
        });
    }
    let an = Anomalies::new(ensemble, pattern)?;
    let z = restrict_to_pattern(measurement, pattern)?;
    let var = noise_variance(&an, sigma);
    let r = vec![var; z.len()];
    let gain = kalman_gain_factored(&an, &r)?;
    minimum_variance_update(&prior, &gain, &z, an.predicted.as_slice(), support)
}

/// Relative floor used when the data are noiseless.
pub const NOISELESS_FLOOR: f64 = 1e-12;

fn noise_variance(an: &Anomalies, sigma: f64) -> f64 {
    let var = sigma * sigma;
    if var > 0.0 {
        return var;
    }
    // mean per-component ensemble variance on the pattern
    let spread = an.signal.norm_squared() / an.signal.nrows().max(1) as f64;
    (NOISELESS_FLOOR * spread).max(f64::MIN_POSITIVE)
}
