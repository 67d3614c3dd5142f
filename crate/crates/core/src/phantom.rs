//! Spatial domain, tissue segmentation and per-tissue properties.
//!
//! A [`Phantom`] bundles everything the downstream solvers need: the uniform
//! Cartesian [`Grid`], a label per voxel, thermal constants per tissue, the
//! laser and boundary conditions, and the uniform prior on the
//! per-tissue optical attenuation coefficients.
//!
//! Grids are node-centred: voxel `i` along an axis sits at
//! `origin + i * spacing`, so the first and last nodes lie on the boundary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the total voxel count of a grid.
pub const DEFAULT_VOXEL_CAP: usize = 1 << 24;

/// Uniform Cartesian grid with 2 or 3 axes. Axis 0 varies slowest in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
}

impl Grid {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        Self::with_cap(dims, spacing, origin, DEFAULT_VOXEL_CAP)
    }

    pub fn with_cap(
        dims: Vec<usize>,
        spacing: Vec<f64>,
        origin: Vec<f64>,
        cap: usize,
    ) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::validation("grid.dims", "expected 2 or 3 axes"));
        }
        if spacing.len() != dims.len() {
            return Err(Error::validation("grid.spacing", "length must match dims"));
        }
        if origin.len() != dims.len() {
            return Err(Error::validation("grid.origin", "length must match dims"));
        }
        if let Some(n) = dims.iter().find(|&&n| n < 2) {
            return Err(Error::validation(
                "grid.dims",
                format!("every extent must be >= 2 (got {n})"),
            ));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::validation("grid.spacing", "spacings must be positive"));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::validation("grid.origin", "origin must be finite"));
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .filter(|&n| n <= cap)
            .ok_or_else(|| {
                Error::validation("grid.dims", format!("voxel count exceeds cap of {cap}"))
            })?;
        debug_assert!(total > 0);
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Row-major strides (axis 0 slowest).
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    /// Per-axis indices of a flat voxel index.
    pub fn unravel(&self, index: usize) -> Vec<usize> {
        unravel(&self.dims, index)
    }

    /// Physical position of a voxel, padded with zeros to three components.
    pub fn position(&self, index: usize) -> [f64; 3] {
        let idx = self.unravel(index);
        let mut p = [0.0; 3];
        for a in 0..self.ndim() {
            p[a] = self.origin[a] + idx[a] as f64 * self.spacing[a];
        }
        p
    }

    /// Axis-aligned bounding box `[lo, hi]` per axis.
    pub fn extent(&self) -> Vec<(f64, f64)> {
        (0..self.ndim())
            .map(|a| {
                let lo = self.origin[a];
                (lo, lo + (self.dims[a] - 1) as f64 * self.spacing[a])
            })
            .collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.extent()
            .iter()
            .zip(point)
            .all(|(&(lo, hi), &x)| x >= lo && x <= hi)
    }
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

pub(crate) fn unravel(dims: &[usize], mut index: usize) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        idx[a] = index % dims[a];
        index /= dims[a];
    }
    idx
}

/// Per-voxel tissue id in `[0, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueLabelField {
    labels: Vec<u8>,
    num_tissues: usize,
}

impl TissueLabelField {
    pub fn new(labels: Vec<u8>, num_tissues: usize) -> Result<Self> {
        if num_tissues == 0 || num_tissues > 256 {
            return Err(Error::validation("tissues", "need between 1 and 256 tissues"));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_tissues)
        {
            return Err(Error::domain(format!(
                "voxel {i} has label {l}, but only {num_tissues} tissues are defined"
            )));
        }
        Ok(Self {
            labels,
            num_tissues,
        })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_tissues(&self) -> usize {
        self.num_tissues
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Voxel count per tissue; sums to the grid size.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_tissues];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }
}

/// Thermal constants of one tissue class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    #[serde(default)]
    pub name: String,
    /// Thermal conductivity, W/(m K).
    pub conductivity: f64,
    /// Blood perfusion, kg/(m^3 s).
    pub perfusion: f64,
    /// Density, kg/m^3.
    pub density: f64,
    /// Specific heat, J/(kg K).
    pub specific_heat: f64,
    /// Specific heat of blood, J/(kg K).
    pub blood_specific_heat: f64,
    /// Arterial blood temperature, degC.
    #[serde(default = "default_arterial")]
    pub arterial_temperature: f64,
}

fn default_arterial() -> f64 {
    37.0
}

impl Tissue {
    fn validate(&self, i: usize) -> Result<()> {
        let field = |k: &str| format!("tissues[{i}].{k}");
        let finite = [
            ("conductivity", self.conductivity),
            ("perfusion", self.perfusion),
            ("density", self.density),
            ("specific_heat", self.specific_heat),
            ("blood_specific_heat", self.blood_specific_heat),
            ("arterial_temperature", self.arterial_temperature),
        ];
        for (k, v) in finite {
            if !v.is_finite() {
                return Err(Error::validation(field(k), "must be finite"));
            }
        }
        if self.conductivity < 0.0 {
            return Err(Error::validation(field("conductivity"), "must be >= 0"));
        }
        if self.perfusion < 0.0 {
            return Err(Error::validation(field("perfusion"), "must be >= 0"));
        }
        if self.density <= 0.0 {
            return Err(Error::validation(field("density"), "must be > 0"));
        }
        if self.specific_heat <= 0.0 {
            return Err(Error::validation(field("specific_heat"), "must be > 0"));
        }
        if self.blood_specific_heat < 0.0 {
            return Err(Error::validation(field("blood_specific_heat"), "must be >= 0"));
        }
        Ok(())
    }

    /// Volumetric heat capacity rho*c, J/(m^3 K).
    pub fn heat_capacity(&self) -> f64 {
        self.density * self.specific_heat
    }

    /// Perfusion sink coefficient omega*c_blood, W/(m^3 K).
    pub fn perfusion_coefficient(&self) -> f64 {
        self.perfusion * self.blood_specific_heat
    }
}

/// One segment of the piecewise-constant power schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerStep {
    /// Start time of the segment, s.
    pub start: f64,
    /// Power, W.
    pub watts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaserSpec {
    /// Point source positions, m. More than one superposes equal shares of
    /// the power along a fiber.
    pub positions: Vec<[f64; 3]>,
    pub schedule: Vec<PowerStep>,
    /// Power is zero from this time onwards, s.
    pub heating_duration: f64,
}

impl LaserSpec {
    /// Total power P(t) in watts.
    pub fn power(&self, t: f64) -> f64 {
        if t >= self.heating_duration {
            return 0.0;
        }
        self.schedule
            .iter()
            .take_while(|s| s.start <= t)
            .last()
            .map_or(0.0, |s| s.watts)
    }

    /// Times at which P(t) may jump, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .schedule
            .iter()
            .map(|s| s.start)
            .chain(std::iter::once(self.heating_duration))
            .filter(|t| *t > 0.0 && t.is_finite())
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

/// Condition on one face of the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCondition {
    /// Fixed temperature, degC.
    Dirichlet { temperature: f64 },
    /// Prescribed outward heat flux, W/m^2.
    Neumann { flux: f64 },
    /// Convective loss h (u - u_inf), h in W/(m^2 K).
    Robin { coefficient: f64, ambient: f64 },
}

/// Face order is `x_min, x_max, y_min, y_max[, z_min, z_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    pub faces: Vec<BoundaryCondition>,
    pub initial_temperature: f64,
}

impl BoundarySpec {
    /// Condition on face `side` (0 = min, 1 = max) of `axis`.
    pub fn face(&self, axis: usize, side: usize) -> BoundaryCondition {
        self.faces[2 * axis + side]
    }
}

pub const FACE_NAMES: [&str; 6] = ["x_min", "x_max", "y_min", "y_max", "z_min", "z_max"];

/// Independent uniform priors on the per-tissue attenuation, 1/m.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainParameterPrior {
    pub bounds: Vec<(f64, f64)>,
}

impl UncertainParameterPrior {
    pub fn new(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::validation("prior", "lower/upper lengths differ"));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
            if !(lo > 0.0 && lo.is_finite() && hi.is_finite()) {
                return Err(Error::validation(
                    format!("prior.lower[{i}]"),
                    "bounds must be positive and finite",
                ));
            }
            if lo >= hi {
                return Err(Error::validation(
                    format!("prior.upper[{i}]"),
                    "upper bound must exceed lower bound",
                ));
            }
        }
        Ok(Self {
            bounds: lower.iter().copied().zip(upper.iter().copied()).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|(lo, hi)| (hi - lo).powi(2) / 12.0)
            .collect()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && self
                .bounds
                .iter()
                .zip(mu)
                .all(|(&(lo, hi), &m)| m >= lo && m <= hi)
    }
}

/// Immutable description of the simulated domain.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub grid: Grid,
    pub labels: TissueLabelField,
    pub tissues: Vec<Tissue>,
    pub laser: LaserSpec,
    pub boundary: BoundarySpec,
    pub prior: UncertainParameterPrior,
}

impl Phantom {
    pub fn num_tissues(&self) -> usize {
        self.tissues.len()
    }

    /// Tissue of a voxel.
    pub fn tissue_at(&self, index: usize) -> &Tissue {
        &self.tissues[self.labels.labels()[index] as usize]
    }
}

/// Expands per-tissue attenuation `mu` into a per-voxel field.
pub fn realize_attenuation(labels: &TissueLabelField, mu: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != labels.num_tissues() {
        return Err(Error::domain(format!(
            "attenuation vector has {} entries, expected {}",
            mu.len(),
            labels.num_tissues()
        )));
    }
    if let Some(m) = mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::domain(format!("attenuation must be positive, got {m}")));
    }
    Ok(labels.labels().iter().map(|&l| mu[l as usize]).collect())
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    /// m
    pub spacing: Vec<f64>,
    /// m; defaults to zeros
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
    #[serde(default)]
    pub max_voxels: Option<usize>,
}

/// Synthetic segmentation shape painted over the background label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum RegionConfig {
    /// Ellipsoid when `radius` has one entry per axis.
    Sphere {
        label: u8,
        center: Vec<f64>,
        radius: Vec<f64>,
    },
    Box {
        label: u8,
        min: Vec<f64>,
        max: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsConfig {
    /// Inline row-major labels.
    #[serde(default)]
    pub values: Option<Vec<u8>>,
    /// Raw little-endian u8 file, row-major; relative to the config file.
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Fill label when neither `values` nor `file` is given.
    #[serde(default)]
    pub background: Option<u8>,
    /// Shapes painted in order on top of the base labels.
    #[serde(default)]
    pub regions: Vec<RegionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserConfig {
    /// Point source positions, m.
    pub positions: Vec<Vec<f64>>,
    /// `[start_s, watts]` pairs.
    pub power: Vec<[f64; 2]>,
    /// s
    pub heating_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FaceConfig {
    /// Defaults to the initial temperature when omitted.
    Dirichlet {
        #[serde(default)]
        temperature: Option<f64>,
    },
    Neumann {
        #[serde(default)]
        flux: f64,
    },
    /// Ambient temperature is always the initial temperature.
    Robin { coefficient: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    /// degC
    pub initial_temperature: f64,
    pub default: FaceConfig,
    /// Per-face overrides keyed by `x_min`, `x_max`, ... `z_max`.
    #[serde(default)]
    pub faces: BTreeMap<String, FaceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// 1/m
    pub lower: Vec<f64>,
    /// 1/m
    pub upper: Vec<f64>,
}

/// On-disk phantom description (TOML). Lengths in m, temperatures in degC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub grid: GridConfig,
    pub tissues: Vec<Tissue>,
    pub labels: LabelsConfig,
    pub laser: LaserConfig,
    pub boundary: BoundaryConfig,
    pub prior: PriorConfig,
}

impl PhantomConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

fn pad3(v: &[f64], field: &str, ndim: usize) -> Result<[f64; 3]> {
    if v.len() != ndim {
        return Err(Error::validation(field, format!("expected {ndim} components")));
    }
    let mut p = [0.0; 3];
    p[..ndim].copy_from_slice(v);
    Ok(p)
}

fn build_labels(cfg: &LabelsConfig, grid: &Grid, base_dir: Option<&Path>) -> Result<Vec<u8>> {
    let n = grid.len();
    let mut labels = match (&cfg.values, &cfg.file, cfg.background) {
        (Some(v), None, None) => v.clone(),
        (None, Some(path), None) => {
            let path = match base_dir {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path.clone(),
            };
            fs::read(&path).map_err(|e| Error::io(&path, e))?
        }
        (None, None, Some(bg)) => vec![bg; n],
        (None, None, None) => vec![0; n],
        _ => {
            return Err(Error::validation(
                "labels",
                "give at most one of `values`, `file`, `background`",
            ))
        }
    };
    if labels.len() != n {
        return Err(Error::validation(
            "labels",
            format!("expected {n} labels, found {}", labels.len()),
        ));
    }
    let ndim = grid.ndim();
    for (r, region) in cfg.regions.iter().enumerate() {
        let field = format!("labels.regions[{r}]");
        match region {
            RegionConfig::Sphere {
                label,
                center,
                radius,
            } => {
                let c = pad3(center, &format!("{field}.center"), ndim)?;
                let radii: Vec<f64> = match radius.len() {
                    1 => vec![radius[0]; ndim],
                    k if k == ndim => radius.clone(),
                    _ => {
                        return Err(Error::validation(
                            format!("{field}.radius"),
                            "give one radius or one per axis",
                        ))
                    }
                };
                if radii.iter().any(|r| *r <= 0.0) {
                    return Err(Error::validation(format!("{field}.radius"), "must be > 0"));
                }
                for (i, l) in labels.iter_mut().enumerate() {
                    let p = grid.position(i);
                    let s: f64 = (0..ndim).map(|a| ((p[a] - c[a]) / radii[a]).powi(2)).sum();
                    if s <= 1.0 {
                        *l = *label;
                    }
                }
            }
            RegionConfig::Box { label, min, max } => {
                let lo = pad3(min, &format!("{field}.min"), ndim)?;
                let hi = pad3(max, &format!("{field}.max"), ndim)?;
                for (i, l) in labels.iter_mut().enumerate() {
                    let p = grid.position(i);
                    if (0..ndim).all(|a| p[a] >= lo[a] && p[a] <= hi[a]) {
                        *l = *label;
                    }
                }
            }
        }
    }
    Ok(labels)
}

fn build_face(face: &FaceConfig, u0: f64, name: &str) -> Result<BoundaryCondition> {
    let field = format!("boundary.faces.{name}");
    Ok(match *face {
        FaceConfig::Dirichlet { temperature } => BoundaryCondition::Dirichlet {
            temperature: temperature.unwrap_or(u0),
        },
        FaceConfig::Neumann { flux } => {
            if !flux.is_finite() {
                return Err(Error::validation(field, "flux must be finite"));
            }
            BoundaryCondition::Neumann { flux }
        }
        FaceConfig::Robin { coefficient } => {
            if !(coefficient >= 0.0 && coefficient.is_finite()) {
                return Err(Error::validation(field, "coefficient must be >= 0"));
            }
            BoundaryCondition::Robin {
                coefficient,
                ambient: u0,
            }
        }
    })
}

/// Validates a configuration and assembles the phantom. Relative label file
/// paths resolve against `base_dir`.
pub fn build_phantom(config: &PhantomConfig, base_dir: Option<&Path>) -> Result<Phantom> {
    let g = &config.grid;
    let origin = g.origin.clone().unwrap_or_else(|| vec![0.0; g.dims.len()]);
    let grid = Grid::with_cap(
        g.dims.clone(),
        g.spacing.clone(),
        origin,
        g.max_voxels.unwrap_or(DEFAULT_VOXEL_CAP),
    )?;
    let ndim = grid.ndim();

    if config.tissues.is_empty() {
        return Err(Error::validation("tissues", "at least one tissue is required"));
    }
    for (i, t) in config.tissues.iter().enumerate() {
        t.validate(i)?;
    }
    let labels = TissueLabelField::new(
        build_labels(&config.labels, &grid, base_dir)?,
        config.tissues.len(),
    )?;

    let lc = &config.laser;
    if lc.positions.is_empty() {
        return Err(Error::validation("laser.positions", "at least one source position"));
    }
    let positions = lc
        .positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let field = format!("laser.positions[{i}]");
            let q = pad3(p, &field, ndim)?;
            if !grid.contains(&q[..ndim]) {
                return Err(Error::validation(field, "source lies outside the grid"));
            }
            Ok(q)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut schedule = Vec::with_capacity(lc.power.len());
    for (i, &[start, watts]) in lc.power.iter().enumerate() {
        let field = format!("laser.power[{i}]");
        if !(watts >= 0.0 && watts.is_finite() && start >= 0.0 && start.is_finite()) {
            return Err(Error::validation(field, "power and start time must be >= 0"));
        }
        if schedule.last().is_some_and(|s: &PowerStep| s.start >= start) {
            return Err(Error::validation(field, "start times must increase"));
        }
        schedule.push(PowerStep { start, watts });
    }
    if !(lc.heating_duration >= 0.0) {
        return Err(Error::validation("laser.heating_duration", "must be >= 0"));
    }
    let laser = LaserSpec {
        positions,
        schedule,
        heating_duration: lc.heating_duration,
    };

    let bc = &config.boundary;
    let u0 = bc.initial_temperature;
    if !u0.is_finite() {
        return Err(Error::validation("boundary.initial_temperature", "must be finite"));
    }
    for key in bc.faces.keys() {
        if !FACE_NAMES[..2 * ndim].contains(&key.as_str()) {
            return Err(Error::validation(
                format!("boundary.faces.{key}"),
                "unknown face for this grid",
            ));
        }
    }
    let faces = FACE_NAMES[..2 * ndim]
        .iter()
        .map(|name| build_face(bc.faces.get(*name).unwrap_or(&bc.default), u0, name))
        .collect::<Result<Vec<_>>>()?;
    let boundary = BoundarySpec {
        faces,
        initial_temperature: u0,
    };

    let prior = UncertainParameterPrior::new(&config.prior.lower, &config.prior.upper)?;
    if prior.dim() != labels.num_tissues() {
        return Err(Error::validation(
            "prior",
            format!(
                "prior has {} parameters but {} tissues are defined",
                prior.dim(),
                labels.num_tissues()
            ),
        ));
    }

    Ok(Phantom {
        grid,
        labels,
        tissues: config.tissues.clone(),
        laser,
        boundary,
        prior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brain_tissue() -> Tissue {
        Tissue {
            name: "brain".into(),
            conductivity: 0.527,
            perfusion: 9.0,
            density: 1045.0,
            specific_heat: 3600.0,
            blood_specific_heat: 3840.0,
            arterial_temperature: 37.0,
        }
    }

    const BRAIN_3D: &str = r#"
        [grid]
        dims = [12, 12, 8]
        spacing = [0.002, 0.002, 0.002]

        [[tissues]]
        name = "csf"
        conductivity = 0.527
        perfusion = 9.0
        density = 1045.0
        specific_heat = 3600.0
        blood_specific_heat = 3840.0
        [[tissues]]
        name = "grey"
        conductivity = 0.527
        perfusion = 9.0
        density = 1045.0
        specific_heat = 3600.0
        blood_specific_heat = 3840.0
        [[tissues]]
        name = "white"
        conductivity = 0.527
        perfusion = 9.0
        density = 1045.0
        specific_heat = 3600.0
        blood_specific_heat = 3840.0
        [[tissues]]
        name = "tumor"
        conductivity = 0.527
        perfusion = 9.0
        density = 1045.0
        specific_heat = 3600.0
        blood_specific_heat = 3840.0

        [labels]
        background = 2
        regions = [
            { shape = "box", label = 1, min = [0.0, 0.0, 0.0], max = [0.006, 0.022, 0.014] },
            { shape = "sphere", label = 0, center = [0.018, 0.004, 0.007], radius = [0.003] },
            { shape = "sphere", label = 3, center = [0.011, 0.011, 0.007], radius = [0.004] },
        ]

        [laser]
        positions = [[0.011, 0.011, 0.007]]
        power = [[0.0, 11.5]]
        heating_duration = 90.0

        [boundary]
        initial_temperature = 37.0
        default = { kind = "dirichlet" }

        [prior]
        lower = [10.0, 10.0, 10.0, 10.0]
        upper = [300.0, 400.0, 400.0, 400.0]
    "#;

    #[test]
    fn brain_config_builds() {
        let cfg = PhantomConfig::from_toml_str(BRAIN_3D).unwrap();
        let p = build_phantom(&cfg, None).unwrap();
        assert_eq!(p.num_tissues(), 4);
        assert_eq!(p.grid.len(), 12 * 12 * 8);
        assert_eq!(p.tissues[3], Tissue { name: "tumor".into(), ..brain_tissue() });
        let counts = p.labels.counts();
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), p.grid.len());
        assert_eq!(
            p.boundary.face(2, 1),
            BoundaryCondition::Dirichlet { temperature: 37.0 }
        );
    }

    #[test]
    fn agar_config_builds() {
        let text = r#"
            [grid]
            dims = [16, 16]
            spacing = [0.001, 0.001]
            [[tissues]]
            name = "agar"
            conductivity = 0.6
            perfusion = 0.0
            density = 1000.0
            specific_heat = 3900.0
            blood_specific_heat = 0.0
            arterial_temperature = 19.0
            [labels]
            [laser]
            positions = [[0.008, 0.008]]
            power = [[0.0, 1.0]]
            heating_duration = 600.0
            [boundary]
            initial_temperature = 19.0
            default = { kind = "robin", coefficient = 10.0 }
            faces = { y_min = { kind = "neumann" } }
            [prior]
            lower = [1.0]
            upper = [200.0]
        "#;
        let p = build_phantom(&PhantomConfig::from_toml_str(text).unwrap(), None).unwrap();
        assert_eq!(
            p.boundary.face(0, 0),
            BoundaryCondition::Robin { coefficient: 10.0, ambient: 19.0 }
        );
        assert_eq!(p.boundary.face(1, 0), BoundaryCondition::Neumann { flux: 0.0 });
        assert_eq!(p.laser.positions[0], [0.008, 0.008, 0.0]);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut cfg = PhantomConfig::from_toml_str(BRAIN_3D).unwrap();
        cfg.labels.regions.push(RegionConfig::Box {
            label: 4,
            min: vec![0.0; 3],
            max: vec![0.001; 3],
        });
        assert!(matches!(build_phantom(&cfg, None), Err(Error::Domain(_))));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut cfg = PhantomConfig::from_toml_str(BRAIN_3D).unwrap();
        cfg.tissues[1].density = 0.0;
        match build_phantom(&cfg, None) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "tissues[1].density"),
            other => panic!("unexpected {other:?}"),
        }
        let mut cfg = PhantomConfig::from_toml_str(BRAIN_3D).unwrap();
        cfg.grid.dims[2] = 1;
        assert!(matches!(
            build_phantom(&cfg, None),
            Err(Error::Validation { field, .. }) if field == "grid.dims"
        ));
        let mut cfg = PhantomConfig::from_toml_str(BRAIN_3D).unwrap();
        cfg.laser.positions[0] = vec![1.0, 0.0, 0.0];
        assert!(build_phantom(&cfg, None).is_err());
        assert!(PhantomConfig::from_toml_str("[grid]\ndims=[2,2]\nbogus=1").is_err());
    }

    #[test]
    fn voxel_cap_is_enforced() {
        let e = Grid::with_cap(vec![10, 10], vec![1.0, 1.0], vec![0.0, 0.0], 99);
        assert!(e.is_err());
        assert!(Grid::with_cap(vec![10, 10], vec![1.0, 1.0], vec![0.0, 0.0], 100).is_ok());
    }

    #[test]
    fn raw_label_file_is_read_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("labels.raw"), [0u8, 1, 1, 0]).unwrap();
        let mut cfg = PhantomConfig::from_toml_str(BRAIN_3D).unwrap();
        cfg.grid.dims = vec![2, 2];
        cfg.grid.spacing = vec![0.01, 0.01];
        cfg.labels = LabelsConfig {
            file: Some("labels.raw".into()),
            ..Default::default()
        };
        cfg.laser.positions = vec![vec![0.005, 0.005]];
        cfg.tissues.truncate(2);
        cfg.prior.lower.truncate(2);
        cfg.prior.upper.truncate(2);
        let p = build_phantom(&cfg, Some(dir.path())).unwrap();
        assert_eq!(p.labels.labels(), &[0, 1, 1, 0]);
    }

    #[test]
    fn single_tissue_attenuation_is_constant() {
        let labels = TissueLabelField::new(vec![0; 9], 1).unwrap();
        assert_eq!(realize_attenuation(&labels, &[200.0]).unwrap(), vec![200.0; 9]);
    }

    #[test]
    fn four_tissue_attenuation_takes_exactly_the_given_values() {
        let mu = [111.39, 218.75, 383.01, 385.96];
        let labels = TissueLabelField::new((0..40).map(|i| (i % 4) as u8).collect(), 4).unwrap();
        let field = realize_attenuation(&labels, &mu).unwrap();
        for (v, l) in field.iter().zip(labels.labels()) {
            assert_eq!(*v, mu[*l as usize]);
        }
        let mut distinct = field.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct, mu.to_vec());
    }

    #[test]
    fn two_voxel_lookup_and_length_mismatch() {
        let labels = TissueLabelField::new(vec![0, 1], 2).unwrap();
        assert_eq!(realize_attenuation(&labels, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(
            realize_attenuation(&labels, &[1.0]),
            Err(Error::Domain(_))
        ));
        assert!(realize_attenuation(&labels, &[1.0, -2.0]).is_err());
    }

    #[test]
    fn power_schedule_is_piecewise_constant() {
        let laser = LaserSpec {
            positions: vec![[0.0; 3]],
            schedule: vec![
                PowerStep { start: 0.0, watts: 2.0 },
                PowerStep { start: 10.0, watts: 5.0 },
            ],
            heating_duration: 20.0,
        };
        assert_eq!(laser.power(0.0), 2.0);
        assert_eq!(laser.power(9.99), 2.0);
        assert_eq!(laser.power(10.0), 5.0);
        assert_eq!(laser.power(20.0), 0.0);
        assert_eq!(laser.breakpoints(), vec![10.0, 20.0]);
    }

    proptest! {
        #[test]
        fn attenuation_lookup_commutes_with_permutation(
            labels in proptest::collection::vec(0u8..3, 1..64),
            seed in any::<u64>(),
        ) {
            let mu = [5.0, 7.0, 11.0];
            let field = TissueLabelField::new(labels.clone(), 3).unwrap();
            let out = realize_attenuation(&field, &mu).unwrap();
            // deterministic permutation from the seed
            let mut perm: Vec<usize> = (0..labels.len()).collect();
            perm.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
            let permuted = TissueLabelField::new(perm.iter().map(|&i| labels[i]).collect(), 3).unwrap();
            let out_p = realize_attenuation(&permuted, &mu).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(out_p[k], out[i]);
            }
            prop_assert_eq!(field.counts().iter().sum::<usize>(), labels.len());
        }
    }
}
