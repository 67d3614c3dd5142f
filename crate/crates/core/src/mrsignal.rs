//! Gradient-echo signal model and k-space forward operator.
//!
//! A temperature change `du` relative to the baseline shifts the voxel phase
//! by `-2 pi gamma alpha B0 TE du` (PRF shift). The complex image is
//! `M(x) exp(-TE/T2*) exp(-i [2 pi gamma alpha B0 TE du + TE dw0])` and
//! k-space is its DFT, `U(k) = dV * sum_x img(x) exp(-2 pi i k.x)`, with
//! `k` in integer cycles per field of view and zero frequency at index 0.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{strides_of, unravel, Grid, TissueLabelField};

/// Voxel cap for the brute-force DFT.
pub const ORACLE_MAX_VOXELS: usize = 1 << 12;

/// Relaxation constants of one tissue. `T1 = t1 * (1 + t1_slope * du)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relaxation {
    /// T1 at baseline temperature, s.
    pub t1: f64,
    /// Fractional T1 change per degC.
    #[serde(default)]
    pub t1_slope: f64,
    /// s
    pub t2_star: f64,
}

/// Sequence and tissue parameters of the signal model.
#[derive(Debug, Clone, PartialEq)]
pub struct MrProtocol {
    /// Flip angle, rad.
    pub flip_angle: f64,
    /// s
    pub repetition_time: f64,
    /// s
    pub echo_time: f64,
    /// Hz/T
    pub gyromagnetic_ratio: f64,
    /// PRF thermal coefficient, dimensionless per degC (ppm * 1e-6).
    pub thermal_coefficient: f64,
    /// T
    pub field_strength: f64,
    /// Off-resonance per voxel, rad/s. `None` means zero.
    pub off_resonance: Option<Vec<f64>>,
    /// Equilibrium magnetization per voxel. `None` means 1.
    pub equilibrium: Option<Vec<f64>>,
    /// Indexed by tissue label.
    pub tissues: Vec<Relaxation>,
}

/// TOML form of [`MrProtocol`], in the units scanners report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// rad
    pub flip_angle: f64,
    /// s
    pub repetition_time: f64,
    /// s
    pub echo_time: f64,
    /// MHz/T
    #[serde(default = "default_gamma")]
    pub gamma_mhz_per_t: f64,
    /// ppm/degC
    #[serde(default = "default_alpha")]
    pub alpha_ppm_per_degc: f64,
    /// T
    pub field_strength: f64,
    pub tissues: Vec<Relaxation>,
}

fn default_gamma() -> f64 {
    42.58
}

fn default_alpha() -> f64 {
    -0.0102
}

impl ProtocolConfig {
    pub fn build(&self) -> Result<MrProtocol> {
        let p = MrProtocol {
            flip_angle: self.flip_angle,
            repetition_time: self.repetition_time,
            echo_time: self.echo_time,
            gyromagnetic_ratio: self.gamma_mhz_per_t * 1e6,
            thermal_coefficient: self.alpha_ppm_per_degc * 1e-6,
            field_strength: self.field_strength,
            off_resonance: None,
            equilibrium: None,
            tissues: self.tissues.clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

impl MrProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.repetition_time > 0.0) {
            return Err(Error::validation("protocol.repetition_time", "must be > 0"));
        }
        if !(self.echo_time > 0.0) {
            return Err(Error::validation("protocol.echo_time", "must be > 0"));
        }
        if !(self.flip_angle > 0.0 && self.flip_angle < PI) {
            return Err(Error::validation("protocol.flip_angle", "must lie in (0, pi)"));
        }
        for (i, t) in self.tissues.iter().enumerate() {
            if !(t.t1 > 0.0) {
                return Err(Error::validation(format!("protocol.tissues[{i}].t1"), "must be > 0"));
            }
            if !(t.t2_star > 0.0) {
                return Err(Error::validation(
                    format!("protocol.tissues[{i}].t2_star"),
                    "must be > 0",
                ));
            }
        }
        Ok(())
    }

    /// Phase shift per degC of heating, rad: `2 pi gamma alpha B0 TE`.
    pub fn phase_per_degree(&self) -> f64 {
        2.0 * PI
            * self.gyromagnetic_ratio
            * self.thermal_coefficient
            * self.field_strength
            * self.echo_time
    }

    fn check_tissues(&self, labels: &TissueLabelField) -> Result<()> {
        if self.tissues.len() != labels.num_tissues() {
            return Err(Error::validation(
                "protocol.tissues",
                format!(
                    "{} relaxation entries for {} tissues",
                    self.tissues.len(),
                    labels.num_tissues()
                ),
            ));
        }
        for (name, field) in [("off_resonance", &self.off_resonance), ("equilibrium", &self.equilibrium)] {
            if field.as_ref().is_some_and(|f| f.len() != labels.len()) {
                return Err(Error::validation(
                    format!("protocol.{name}"),
                    "per-voxel map does not match the grid",
                ));
            }
        }
        Ok(())
    }
}

/// Steady-state transverse magnetization per voxel:
/// `M0 sin(th) (1 - E1) / (1 - cos(th) E1)`, `E1 = exp(-TR / T1)`.
pub fn magnetization(protocol: &MrProtocol, t1_field: &[f64]) -> Vec<f64> {
    let (s, c) = protocol.flip_angle.sin_cos();
    t1_field
        .iter()
        .enumerate()
        .map(|(i, &t1)| {
            let m0 = protocol.equilibrium.as_ref().map_or(1.0, |m| m[i]);
            let e1 = (-protocol.repetition_time / t1).exp();
            m0 * s * (1.0 - e1) / (1.0 - c * e1)
        })
        .collect()
}

/// Temperature-dependent T1 per voxel.
pub fn t1_field(protocol: &MrProtocol, labels: &TissueLabelField, delta_u: &[f64]) -> Vec<f64> {
    labels
        .labels()
        .iter()
        .zip(delta_u)
        .map(|(&l, &du)| {
            let r = &protocol.tissues[l as usize];
            r.t1 * (1.0 + r.t1_slope * du)
        })
        .collect()
}

/// Complex image on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub dims: Vec<usize>,
    /// m per axis
    pub spacing: Vec<f64>,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, data: Vec<Complex64>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() || dims.len() != spacing.len() {
            return Err(Error::domain("image data does not match its extents"));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
}

/// Complex image for temperature `u` against baseline `u_ref`.
pub fn complex_image(
    grid: &Grid,
    labels: &TissueLabelField,
    u: &[f64],
    u_ref: &[f64],
    protocol: &MrProtocol,
) -> Result<ComplexImage> {
    let n = grid.len();
    if u.len() != n || u_ref.len() != n || labels.len() != n {
        return Err(Error::domain("temperature fields do not match the grid"));
    }
    protocol.check_tissues(labels)?;
    let delta: Vec<f64> = u.iter().zip(u_ref).map(|(a, b)| a - b).collect();
    let m = magnetization(protocol, &t1_field(protocol, labels, &delta));
    let k_phase = protocol.phase_per_degree();
    let te = protocol.echo_time;
    let data = (0..n)
        .map(|i| {
            let r = &protocol.tissues[labels.labels()[i] as usize];
            let dw0 = protocol.off_resonance.as_ref().map_or(0.0, |w| w[i]);
            let phase = k_phase * delta[i] + te * dw0;
            Complex64::from_polar(m[i] * (-te / r.t2_star).exp(), -phase)
        })
        .collect();
    ComplexImage::new(grid.dims().to_vec(), grid.spacing().to_vec(), data)
}

/// Samples on the integer k-grid. Axis `readout_axis` is the frequency-encode
/// direction; the others are phase-encode axes.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceSignal {
    pub dims: Vec<usize>,
    /// Image spacing, m; physical k along axis `a` is `index / (dims[a] * spacing[a])`.
    pub spacing: Vec<f64>,
    pub readout_axis: usize,
    pub data: Vec<Complex64>,
}

impl KSpaceSignal {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Zero-frequency sample.
    pub fn dc(&self) -> Complex64 {
        self.data[0]
    }

    /// Physical spatial frequency of sample `index`, cycles/m per axis.
    pub fn frequency(&self, index: usize) -> Vec<f64> {
        unravel(&self.dims, index)
            .into_iter()
            .enumerate()
            .map(|(a, i)| centered_index(i, self.dims[a]) as f64 / (self.dims[a] as f64 * self.spacing[a]))
            .collect()
    }

    /// Copy with zero frequency moved to the middle of every axis (fftshift).
    pub fn centered(&self) -> Vec<Complex64> {
        let strides = strides_of(&self.dims);
        let mut out = vec![Complex64::new(0.0, 0.0); self.data.len()];
        for (i, v) in self.data.iter().enumerate() {
            let idx = unravel(&self.dims, i);
            let j: usize = idx
                .iter()
                .zip(&self.dims)
                .zip(&strides)
                .map(|((&k, &n), &s)| ((k + n / 2) % n) * s)
                .sum();
            out[j] = *v;
        }
        out
    }
}

/// Signed frequency index of storage position `i` on an axis of length `n`
/// (the `fftfreq` convention: `0, 1, .., -2, -1`).
pub fn centered_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn fft_along_axes(dims: &[usize], data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let strides = strides_of(dims);
    let total = data.len();
    for (a, &n) in dims.iter().enumerate() {
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let s = strides[a];
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        // every start index with a zero coordinate on axis `a`
        for start in (0..total).filter(|i| (i / s).is_multiple_of(n)) {
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[start + k * s];
            }
            fft.process(&mut line);
            for (k, v) in line.iter().enumerate() {
                data[start + k * s] = *v;
            }
        }
    }
}

/// Riemann-sum DFT of the image, scaled by the voxel volume.
pub fn kspace_forward(img: &ComplexImage, readout_axis: usize) -> KSpaceSignal {
    let mut data = img.data.clone();
    fft_along_axes(&img.dims, &mut data, false);
    let dv = img.voxel_volume();
    data.iter_mut().for_each(|v| *v *= dv);
    KSpaceSignal {
        dims: img.dims.clone(),
        spacing: img.spacing.clone(),
        readout_axis,
        data,
    }
}

/// Inverse of [`kspace_forward`].
pub fn kspace_inverse(signal: &KSpaceSignal) -> ComplexImage {
    let mut data = signal.data.clone();
    fft_along_axes(&signal.dims, &mut data, true);
    let n = data.len() as f64;
    let dv: f64 = signal.spacing.iter().product();
    data.iter_mut().for_each(|v| *v /= n * dv);
    ComplexImage {
        dims: signal.dims.clone(),
        spacing: signal.spacing.clone(),
        data,
    }
}

/// Brute-force O(N^2) evaluation of the same sum as [`kspace_forward`].
pub fn kspace_forward_oracle(img: &ComplexImage, readout_axis: usize) -> Result<KSpaceSignal> {
    let n = img.data.len();
    if n > ORACLE_MAX_VOXELS {
        return Err(Error::domain(format!(
            "direct transform limited to {ORACLE_MAX_VOXELS} voxels, image has {n}"
        )));
    }
    let coords: Vec<Vec<usize>> = (0..n).map(|i| unravel(&img.dims, i)).collect();
    let dv = img.voxel_volume();
    let data = coords
        .iter()
        .map(|k| {
            let sum: Complex64 = coords
                .iter()
                .zip(&img.data)
                .map(|(x, v)| {
                    let turns: f64 = k
                        .iter()
                        .zip(x)
                        .zip(&img.dims)
                        .map(|((&ka, &xa), &na)| ((ka * xa) % na) as f64 / na as f64)
                        .sum();
                    v * Complex64::from_polar(1.0, -2.0 * PI * turns)
                })
                .sum();
            sum * dv
        })
        .collect();
    Ok(KSpaceSignal {
        dims: img.dims.clone(),
        spacing: img.spacing.clone(),
        readout_axis,
        data,
    })
}

/// Complex Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Peak signal to complex noise ratio; `f64::INFINITY` disables noise.
    pub snr: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(snr: f64, seed: u64) -> Result<Self> {
        if !(snr > 0.0) {
            return Err(Error::validation("snr", "must be > 0"));
        }
        Ok(Self { snr, seed })
    }

    /// Per-component standard deviation `|U(0)| / (snr sqrt 2)` for a
    /// noiseless reference signal.
    pub fn sigma_for(&self, reference: &KSpaceSignal) -> f64 {
        reference.dc().norm() / (self.snr * std::f64::consts::SQRT_2)
    }
}

/// Adds seeded noise with the SNR convention of [`NoiseModel::sigma_for`],
/// taking `signal` as the noiseless reference.
pub fn add_noise(signal: &KSpaceSignal, noise: &NoiseModel) -> KSpaceSignal {
    add_noise_with_sigma(signal, noise.sigma_for(signal), noise.seed)
}

/// Adds independent N(0, sigma^2) draws to the real and imaginary part of
/// every sample (real first, in storage order).
pub fn add_noise_with_sigma(signal: &KSpaceSignal, sigma: f64, seed: u64) -> KSpaceSignal {
    let mut out = signal.clone();
    if sigma == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.data {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
    out
}
