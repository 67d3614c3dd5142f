//! On-disk formats: raw little-endian f64 arrays with TOML sidecars, and CSV
//! exports of ensembles and posteriors.
//!
//! A dump `name.f64` holds row-major values (complex arrays interleave real
//! and imaginary parts); `name.toml` describes it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::ParameterStats;
use crate::mrsignal::KSpaceSignal;
use crate::uq::Ensemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub dims: Vec<usize>,
    /// `real` or `complex`.
    pub element: String,
    pub quantity: String,
    pub unit: String,
    /// Role of every axis (`x`, `readout`, `phase`, ...).
    pub axes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

fn write_bytes(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_sidecar(path: &Path, sidecar: &RawSidecar) -> Result<()> {
    let text = toml::to_string(sidecar).map_err(|e| Error::domain(format!("sidecar: {e}")))?;
    let p = sidecar_path(path);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

/// Writes a real field and its sidecar.
pub fn write_real(path: &Path, values: &[f64], sidecar: &RawSidecar) -> Result<()> {
    if sidecar.dims.iter().product::<usize>() != values.len() {
        return Err(Error::domain("dump size does not match its dims"));
    }
    write_bytes(path, values.iter().copied())?;
    write_sidecar(path, sidecar)
}

/// Writes a complex array (interleaved) and its sidecar.
pub fn write_complex(path: &Path, values: &[Complex64], sidecar: &RawSidecar) -> Result<()> {
    if sidecar.dims.iter().product::<usize>() != values.len() {
        return Err(Error::domain("dump size does not match its dims"));
    }
    write_bytes(path, values.iter().flat_map(|c| [c.re, c.im]))?;
    write_sidecar(path, sidecar)
}

/// Reads a dump written by [`write_real`] or [`write_complex`]; complex data
/// come back interleaved.
pub fn read_raw(path: &Path) -> Result<(Vec<f64>, RawSidecar)> {
    let sp = sidecar_path(path);
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let sidecar: RawSidecar = toml::from_str(&text)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let per = if sidecar.element == "complex" { 2 } else { 1 };
    let expected = per * sidecar.dims.iter().product::<usize>();
    if bytes.len() != 8 * expected {
        return Err(Error::domain(format!(
            "{}: expected {expected} values, found {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((values, sidecar))
}

/// Axis labels for a grid of `ndim` axes.
pub fn spatial_axes(ndim: usize) -> Vec<String> {
    ["x", "y", "z"][..ndim].iter().map(|s| s.to_string()).collect()
}

/// Writes k-space with readout/phase axis roles.
pub fn write_kspace(path: &Path, signal: &KSpaceSignal, snr: Option<f64>, seed: Option<u64>) -> Result<()> {
    let axes = (0..signal.dims.len())
        .map(|a| {
            if a == signal.readout_axis {
                "readout".to_string()
            } else {
                "phase".to_string()
            }
        })
        .collect();
    let sidecar = RawSidecar {
        dims: signal.dims.clone(),
        element: "complex".into(),
        quantity: "kspace".into(),
        unit: "a.u. m^3".into(),
        axes,
        spacing: Some(signal.spacing.clone()),
        time: None,
        snr: snr.filter(|s| s.is_finite()),
        seed,
    };
    write_complex(path, &signal.data, &sidecar)
}

/// One row per quadrature node: index, parameters, weight.
pub fn write_ensemble_csv<W: Write>(ensemble: &Ensemble, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = ensemble.members.first().map_or(0, |m| m.mu.len());
    let mut header = vec!["node".to_string()];
    header.extend((0..d).map(|i| format!("mu_{i}")));
    header.push("weight".into());
    w.write_record(&header)?;
    for (q, (m, wt)) in ensemble.members.iter().zip(&ensemble.weights).enumerate() {
        let mut row = vec![q.to_string()];
        row.extend(m.mu.iter().map(|x| x.to_string()));
        row.push(wt.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<ensemble csv>", e))
}

/// One row per parameter: prior and posterior moments and lines used.
pub fn write_posterior_csv<W: Write>(
    prior: &ParameterStats,
    posterior: &ParameterStats,
    lines: usize,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "prior_mean", "prior_var", "posterior_mean", "posterior_var", "lines"])?;
    for i in 0..prior.dim() {
        w.write_record([
            i.to_string(),
            prior.mean[i].to_string(),
            prior.covariance[(i, i)].to_string(),
            posterior.mean[i].to_string(),
            posterior.covariance[(i, i)].to_string(),
            lines.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<posterior csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.f64");
        let sig = KSpaceSignal {
            dims: vec![2, 3],
            spacing: vec![1e-3, 1e-3],
            readout_axis: 0,
            data: (0..6).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect(),
        };
        write_kspace(&p, &sig, Some(50.0), Some(9)).unwrap();
        let (vals, side) = read_raw(&p).unwrap();
        assert_eq!(side.dims, vec![2, 3]);
        assert_eq!(side.axes, vec!["readout", "phase"]);
        assert_eq!(side.seed, Some(9));
        assert_eq!(vals.len(), 12);
        assert_eq!((vals[2], vals[3]), (1.0, -0.5));
        // little-endian on disk
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let side = RawSidecar {
            dims: vec![2, 2],
            element: "real".into(),
            quantity: "temperature".into(),
            unit: "degC".into(),
            axes: spatial_axes(2),
            spacing: None,
            time: None,
            snr: None,
            seed: None,
        };
        assert!(write_real(&dir.path().join("t.f64"), &[1.0; 3], &side).is_err());
        write_real(&dir.path().join("t.f64"), &[1.0; 4], &side).unwrap();
        assert_eq!(read_raw(&dir.path().join("t.f64")).unwrap().0, vec![1.0; 4]);
    }
}
