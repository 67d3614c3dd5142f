//! Explicit finite-difference solver for the Pennes bioheat equation
//!
//! ```text
//! rho c du/dt = div(k grad u) - w c_b (u - u_a) + Q_laser(x, t)
//! Q_laser     = P(t) mu^2 exp(-mu r) / (4 pi r)
//! ```
//!
//! Space is discretised on the node-centred phantom grid with a 5-point (2D)
//! or 7-point (3D) Laplacian. Conductivities on faces between voxels use the
//! harmonic mean of the two neighbours. Boundary nodes use half-cell balances:
//! Neumann and Robin faces contribute their outward flux, Dirichlet nodes are
//! pinned. Time integration is forward Euler.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::phantom::{realize_attenuation, BoundaryCondition, Grid, LaserSpec, Phantom};

/// Temperatures above this magnitude (degC) are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1.0e4;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Nominal time step, s. Steps are shortened so that output times and
    /// power-schedule breakpoints are hit exactly.
    pub dt: f64,
    /// Times at which fields are recorded, s, strictly increasing.
    pub output_times: Vec<f64>,
    /// Lower bound on the source distance, m. The solver always uses at
    /// least half the smallest grid spacing.
    pub distance_clamp: f64,
}

impl SolverSettings {
    pub fn new(dt: f64, output_times: Vec<f64>) -> Self {
        Self {
            dt,
            output_times,
            distance_clamp: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    /// Per-voxel temperature, degC.
    pub values: Vec<f64>,
    /// s
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureHistory {
    pub fields: Vec<TemperatureField>,
}

impl TemperatureHistory {
    pub fn times(&self) -> Vec<f64> {
        self.fields.iter().map(|f| f.time).collect()
    }

    /// Field recorded at `t` (exact match within 1e-9 s).
    pub fn at(&self, t: f64) -> Option<&TemperatureField> {
        self.fields.iter().find(|f| (f.time - t).abs() <= 1e-9)
    }

    pub fn last(&self) -> Option<&TemperatureField> {
        self.fields.last()
    }
}

/// Laser heat deposition, W/m^3.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceField {
    pub values: Vec<f64>,
}

/// Isotropic point-source deposition `P mu^2 exp(-mu r) / (4 pi r)`.
pub fn laser_source_density(power: f64, mu: f64, r: f64) -> f64 {
    power * mu * mu * (-mu * r).exp() / (4.0 * PI * r)
}

/// Source distance floor actually used: `max(h_min / 2, configured)`.
pub fn effective_clamp(grid: &Grid, configured: f64) -> f64 {
    (0.5 * grid.min_spacing()).max(configured)
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Spatial part of the source for unit power, with the power split evenly
/// between the fiber's point sources.
fn unit_source(grid: &Grid, laser: &LaserSpec, mu_field: &[f64], clamp: f64) -> Vec<f64> {
    let share = 1.0 / laser.positions.len() as f64;
    (0..grid.len())
        .map(|i| {
            let p = grid.position(i);
            laser
                .positions
                .iter()
                .map(|x0| laser_source_density(share, mu_field[i], distance(&p, x0).max(clamp)))
                .sum()
        })
        .collect()
}

/// Laser source at time `t` for a realized attenuation field.
pub fn laser_source(
    grid: &Grid,
    laser: &LaserSpec,
    mu_field: &[f64],
    t: f64,
    distance_clamp: f64,
) -> SourceField {
    let power = laser.power(t);
    if power == 0.0 {
        return SourceField {
            values: vec![0.0; grid.len()],
        };
    }
    let clamp = effective_clamp(grid, distance_clamp);
    SourceField {
        values: unit_source(grid, laser, mu_field, clamp)
            .into_iter()
            .map(|s| power * s)
            .collect(),
    }
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Discrete operator coefficients. Everything that depends on tissue
/// constants is evaluated here, once per solve.
struct Operator {
    dims: [usize; 3],
    strides: [usize; 3],
    ndim: usize,
    /// rho c per voxel.
    capacity: Vec<f64>,
    /// Coupling to the minus / plus neighbour along each axis, W/(m^3 K).
    minus: [Vec<f64>; 3],
    plus: [Vec<f64>; 3],
    /// Linear sink (perfusion + Robin), W/(m^3 K).
    sink: Vec<f64>,
    /// Constant part: perfusion * u_a + Robin * u_inf - Neumann flux terms.
    constant: Vec<f64>,
    /// Pinned temperature for Dirichlet nodes.
    pinned: Vec<Option<f64>>,
}

impl Operator {
    fn assemble(phantom: &Phantom) -> Self {
        let grid = &phantom.grid;
        let n = grid.len();
        let ndim = grid.ndim();
        let mut dims = [1usize; 3];
        dims[..ndim].copy_from_slice(grid.dims());
        let strides = [dims[1] * dims[2], dims[2], 1];

        let tissue = |i: usize| phantom.tissue_at(i);
        let capacity: Vec<f64> = (0..n).map(|i| tissue(i).heat_capacity()).collect();
        let mut sink: Vec<f64> = (0..n).map(|i| tissue(i).perfusion_coefficient()).collect();
        let mut constant: Vec<f64> = (0..n)
            .map(|i| tissue(i).perfusion_coefficient() * tissue(i).arterial_temperature)
            .collect();
        let mut minus: [Vec<f64>; 3] = Default::default();
        let mut plus: [Vec<f64>; 3] = Default::default();
        let mut pinned = vec![None; n];

        for a in 0..3 {
            minus[a] = vec![0.0; n];
            plus[a] = vec![0.0; n];
        }
        for i in 0..n {
            let idx = [
                i / strides[0],
                (i / strides[1]) % dims[1],
                i % dims[2],
            ];
            let k_here = tissue(i).conductivity;
            for a in 0..ndim {
                let h = grid.spacing()[a];
                let s = strides[a];
                let at_min = idx[a] == 0;
                let at_max = idx[a] == dims[a] - 1;
                let face_minus = (!at_min).then(|| harmonic_mean(k_here, tissue(i - s).conductivity));
                let face_plus = (!at_max).then(|| harmonic_mean(k_here, tissue(i + s).conductivity));
                // Half cell on a boundary face doubles the interior coupling.
                match (face_minus, face_plus) {
                    (Some(km), Some(kp)) => {
                        minus[a][i] = km / (h * h);
                        plus[a][i] = kp / (h * h);
                    }
                    (None, Some(kp)) => plus[a][i] = 2.0 * kp / (h * h),
                    (Some(km), None) => minus[a][i] = 2.0 * km / (h * h),
                    (None, None) => unreachable!("grid extents are >= 2"),
                }
                for (side, on_face) in [(0, at_min), (1, at_max)] {
                    if !on_face {
                        continue;
                    }
                    match phantom.boundary.face(a, side) {
                        BoundaryCondition::Dirichlet { temperature } => {
                            pinned[i].get_or_insert(temperature);
                        }
                        BoundaryCondition::Neumann { flux } => constant[i] -= 2.0 * flux / h,
                        BoundaryCondition::Robin {
                            coefficient,
                            ambient,
                        } => {
                            sink[i] += 2.0 * coefficient / h;
                            constant[i] += 2.0 * coefficient * ambient / h;
                        }
                    }
                }
            }
        }
        Self {
            dims,
            strides,
            ndim,
            capacity,
            minus,
            plus,
            sink,
            constant,
            pinned,
        }
    }

    /// Largest forward-Euler step keeping every update a convex combination.
    fn max_stable_dt(&self) -> f64 {
        (0..self.capacity.len())
            .filter(|&i| self.pinned[i].is_none())
            .map(|i| {
                let coupling: f64 = (0..self.ndim).map(|a| self.minus[a][i] + self.plus[a][i]).sum();
                let diag = coupling + self.sink[i];
                if diag > 0.0 {
                    self.capacity[i] / diag
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes `u + dt * du/dt` into `next`.
    fn step(&self, u: &[f64], next: &mut [f64], dt: f64, heat: impl Fn(usize) -> f64) {
        let [n0, n1, n2] = self.dims;
        let [s0, s1, _] = self.strides;
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    let i = i0 * s0 + i1 * s1 + i2;
                    if let Some(t) = self.pinned[i] {
                        next[i] = t;
                        continue;
                    }
                    let ui = u[i];
                    let mut flux = 0.0;
                    for (a, s) in [(0, s0), (1, s1), (2, 1)].into_iter().take(self.ndim) {
                        let m = self.minus[a][i];
                        let p = self.plus[a][i];
                        if m != 0.0 {
                            flux += m * (u[i - s] - ui);
                        }
                        if p != 0.0 {
                            flux += p * (u[i + s] - ui);
                        }
                    }
                    let rate = flux - self.sink[i] * ui + self.constant[i] + heat(i);
                    next[i] = ui + dt * rate / self.capacity[i];
                }
            }
        }
    }
}

/// Largest explicit step for the phantom's discrete operator, s.
///
/// For a homogeneous tissue without Robin faces this is
/// `rho c / (2 k sum_a 1/h_a^2 + w c_b)`. Returns `f64::INFINITY` when the
/// operator has no diffusion or sink (k = 0, w = 0).
pub fn stable_timestep(phantom: &Phantom) -> f64 {
    Operator::assemble(phantom).max_stable_dt()
}

/// Extra volumetric heating `f(position, t)` in W/m^3, added to the laser source.
pub type Forcing<'a> = dyn Fn(&[f64; 3], f64) -> f64 + Sync + 'a;

/// Builder around [`solve_pennes`] that accepts an optional extra forcing term.
pub struct PennesSolver<'a> {
    phantom: &'a Phantom,
    mu: &'a [f64],
    settings: &'a SolverSettings,
    forcing: Option<&'a Forcing<'a>>,
}

impl<'a> PennesSolver<'a> {
    pub fn new(phantom: &'a Phantom, mu: &'a [f64], settings: &'a SolverSettings) -> Self {
        Self {
            phantom,
            mu,
            settings,
            forcing: None,
        }
    }

    pub fn with_forcing(mut self, forcing: &'a Forcing<'a>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    fn check_settings(&self, dt_max: f64) -> Result<()> {
        let s = self.settings;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::validation("solver.dt", "must be positive and finite"));
        }
        if s.dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::validation(
                "solver.dt",
                format!("{} s exceeds the stability bound {dt_max:.6e} s", s.dt),
            ));
        }
        if s.output_times.is_empty() {
            return Err(Error::validation("solver.output_times", "at least one output time"));
        }
        if s.output_times[0] < 0.0 || s.output_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation(
                "solver.output_times",
                "must be non-negative and strictly increasing",
            ));
        }
        if !(s.distance_clamp >= 0.0) {
            return Err(Error::validation("solver.distance_clamp", "must be >= 0"));
        }
        Ok(())
    }

    pub fn run(&self) -> Result<TemperatureHistory> {
        let phantom = self.phantom;
        let grid = &phantom.grid;
        let op = Operator::assemble(phantom);
        self.check_settings(op.max_stable_dt())?;

        let mu_field = realize_attenuation(&phantom.labels, self.mu)?;
        let clamp = effective_clamp(grid, self.settings.distance_clamp);
        let kernel = unit_source(grid, &phantom.laser, &mu_field, clamp);
        let positions: Vec<[f64; 3]> = match self.forcing {
            Some(_) => (0..grid.len()).map(|i| grid.position(i)).collect(),
            None => Vec::new(),
        };

        let outputs = &self.settings.output_times;
        let t_end = *outputs.last().expect("checked non-empty");
        let mut events: Vec<f64> = phantom
            .laser
            .breakpoints()
            .into_iter()
            .filter(|&b| b < t_end)
            .chain(outputs.iter().copied())
            .collect();
        events.sort_by(f64::total_cmp);
        events.dedup();

        let u0 = phantom.boundary.initial_temperature;
        let mut u: Vec<f64> = op.pinned.iter().map(|p| p.unwrap_or(u0)).collect();
        let mut next = vec![0.0; u.len()];
        let mut fields = Vec::with_capacity(outputs.len());
        let mut t = 0.0;
        let mut out_iter = outputs.iter().peekable();

        for &event in &events {
            let span = event - t;
            if span > 0.0 {
                let steps = (span / self.settings.dt - 1e-9).ceil().max(1.0) as usize;
                let dt = span / steps as f64;
                for s in 0..steps {
                    let tn = t + s as f64 * dt;
                    let power = phantom.laser.power(tn);
                    match self.forcing {
                        Some(f) => op.step(&u, &mut next, dt, |i| {
                            power * kernel[i] + f(&positions[i], tn)
                        }),
                        None => op.step(&u, &mut next, dt, |i| power * kernel[i]),
                    }
                    std::mem::swap(&mut u, &mut next);
                    let worst = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if !(worst <= DIVERGENCE_LIMIT) {
                        return Err(Error::SolverDivergence {
                            time: tn + dt,
                            magnitude: worst,
                        });
                    }
                }
                t = event;
            }
            if out_iter.peek().is_some_and(|&&o| o == event) {
                out_iter.next();
                fields.push(TemperatureField {
                    values: u.clone(),
                    time: event,
                });
            }
        }
        Ok(TemperatureHistory { fields })
    }
}

/// Solves the bioheat equation for per-tissue attenuation `mu`.
pub fn solve_pennes(
    phantom: &Phantom,
    mu: &[f64],
    settings: &SolverSettings,
) -> Result<TemperatureHistory> {
    PennesSolver::new(phantom, mu, settings).run()
}
