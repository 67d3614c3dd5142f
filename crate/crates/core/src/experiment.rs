//! End-to-end synthetic experiments: ground truth, prior ensemble, line
//! selection per method, fusion, reconstruction and error reporting.
//!
//! Random streams are split from one master seed by role and counter with
//! splitmix64 (see [`derive_seed`]): role 1 draws the measurement noise of
//! seed index `s`, role 2 the Poisson-disk darts of seed index `s`, role 3 a
//! sampled true parameter vector.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bioheat::{stable_timestep, SolverSettings};
use crate::error::{Error, Result};
use crate::fusion::{fuse, ParameterStats};
use crate::model::{ForwardModel, Simulation};
use crate::mrsignal::{add_noise_with_sigma, KSpaceSignal, MrProtocol, ProtocolConfig};
use crate::phantom::{build_phantom, Phantom, PhantomConfig};
use crate::recon::{error_metrics, reconstruct_temperature, ErrorReport, Region};
use crate::sampling::{
    line_scores, maxvar_pattern, poisson_disk_auto, poisson_disk_pattern, rectilinear_pattern,
    LineGeometry, Method, PoissonParams, SamplingPattern, VarianceMap,
};
use crate::uq::{prior_rule, propagate_ensemble, Ensemble};

pub const ROLE_NOISE: u64 = 1;
pub const ROLE_POISSON: u64 = 2;
pub const ROLE_TRUTH: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `counter` of `role`: `splitmix64(master ^ splitmix64(role << 32 | counter))`.
pub fn derive_seed(master: u64, role: u64, counter: u64) -> u64 {
    splitmix64(master ^ splitmix64((role << 32) | (counter & 0xffff_ffff)))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    /// True attenuation, 1/m.
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
    /// Draw the truth uniformly from the prior with this seed instead.
    #[serde(default)]
    pub sample_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// s; defaults to `dt_safety` times the stability bound.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_safety")]
    pub dt_safety: f64,
    /// Extra output times besides the fusion time, s.
    #[serde(default)]
    pub output_times: Vec<f64>,
    /// m
    #[serde(default)]
    pub distance_clamp: f64,
}

fn default_safety() -> f64 {
    0.9
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: None,
            dt_safety: default_safety(),
            output_times: Vec::new(),
            distance_clamp: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub nodes_per_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub methods: Vec<Method>,
    pub lines: Vec<usize>,
    #[serde(default = "one")]
    pub min_separation: f64,
    #[serde(default = "one")]
    pub poisson_beta: f64,
    /// Fixed Poisson-disk radius; searched automatically when absent.
    #[serde(default)]
    pub poisson_r0: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// `inf` for noiseless data.
    pub snr: f64,
    #[serde(default = "one_usize")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// When false the measurements are the noiseless truth while the fusion
    /// still assumes noise at `snr`.
    #[serde(default = "yes")]
    pub add_noise: bool,
}

fn yes() -> bool {
    true
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    /// Inclusive voxel index box.
    pub min: Vec<usize>,
    pub max: Vec<usize>,
}

/// Experiment description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Phantom in a separate file, relative to this config.
    #[serde(default)]
    pub phantom_file: Option<PathBuf>,
    #[serde(default)]
    pub phantom: Option<PhantomConfig>,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub truth: TruthConfig,
    /// s
    pub fusion_time: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    pub quadrature: QuadratureConfig,
    pub sampling: SamplingConfig,
    pub noise: NoiseConfig,
    /// Error region; the full volume when absent.
    #[serde(default)]
    pub region: Option<RegionConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// Validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub phantom: Phantom,
    pub protocol: MrProtocol,
    pub settings: SolverSettings,
    pub true_mu: Vec<f64>,
    pub region: Region,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = ExperimentConfig::load(path)?;
        Self::new(cfg, path.parent())
    }

    pub fn new(config: ExperimentConfig, base_dir: Option<&Path>) -> Result<Self> {
        let phantom_cfg = match (&config.phantom, &config.phantom_file) {
            (Some(p), None) => p.clone(),
            (None, Some(file)) => {
                let path = match base_dir {
                    Some(dir) if file.is_relative() => dir.join(file),
                    _ => file.clone(),
                };
                PhantomConfig::load(&path)?
            }
            _ => {
                return Err(Error::validation(
                    "phantom",
                    "give exactly one of `phantom` or `phantom_file`",
                ))
            }
        };
        let phantom = build_phantom(&phantom_cfg, base_dir)?;
        let protocol = config.protocol.build()?;
        if protocol.tissues.len() != phantom.num_tissues() {
            return Err(Error::validation(
                "protocol.tissues",
                format!("expected {} entries", phantom.num_tissues()),
            ));
        }
        if !(config.fusion_time > 0.0 && config.fusion_time.is_finite()) {
            return Err(Error::validation("fusion_time", "must be positive"));
        }
        if config.quadrature.nodes_per_dim == 0 {
            return Err(Error::validation("quadrature.nodes_per_dim", "must be >= 1"));
        }
        if !(config.noise.snr > 0.0) {
            return Err(Error::validation("noise.snr", "must be positive (use inf for noiseless)"));
        }
        if config.noise.seeds == 0 {
            return Err(Error::validation("noise.seeds", "must be >= 1"));
        }
        if config.sampling.methods.is_empty() {
            return Err(Error::validation("sampling.methods", "at least one method is required"));
        }
        let geometry = LineGeometry::new(
            phantom.grid.dims().to_vec(),
            crate::model::default_readout_axis(phantom.grid.ndim()),
        )?;
        if let Some(&n) = config.sampling.lines.iter().find(|&&n| n > geometry.num_lines()) {
            return Err(Error::validation(
                "sampling.lines",
                format!("{n} exceeds the {} phase-encode lines", geometry.num_lines()),
            ));
        }
        if config.sampling.lines.is_empty() {
            return Err(Error::validation("sampling.lines", "at least one line count is required"));
        }
        let dt = match config.solver.dt {
            Some(dt) => dt,
            None => {
                let bound = stable_timestep(&phantom);
                if bound.is_finite() {
                    config.solver.dt_safety * bound
                } else {
                    config.fusion_time / 100.0
                }
            }
        };
        let mut times = config.solver.output_times.clone();
        if !times.contains(&config.fusion_time) {
            times.push(config.fusion_time);
        }
        times.sort_by(f64::total_cmp);
        let settings = SolverSettings {
            dt,
            output_times: times,
            distance_clamp: config.solver.distance_clamp,
        };
        let true_mu = match (&config.truth.mu, config.truth.sample_seed) {
            (Some(mu), None) => {
                if mu.len() != phantom.num_tissues() {
                    return Err(Error::validation("truth.mu", "one value per tissue"));
                }
                if !phantom.prior.contains(mu) {
                    return Err(Error::validation("truth.mu", "must lie inside the prior support"));
                }
                mu.clone()
            }
            (None, Some(seed)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ROLE_TRUTH, 0));
                phantom
                    .prior
                    .bounds
                    .iter()
                    .map(|&(lo, hi)| rng.random_range(lo..hi))
                    .collect()
            }
            _ => {
                return Err(Error::validation(
                    "truth",
                    "give exactly one of `mu` or `sample_seed`",
                ))
            }
        };
        let region = match &config.region {
            None => Region::Full,
            Some(r) => Region::Box {
                min: r.min.clone(),
                max: r.max.clone(),
            },
        };
        Ok(Self {
            config,
            phantom,
            protocol,
            settings,
            true_mu,
            region,
        })
    }

    pub fn model(&self) -> Result<ForwardModel<'_>> {
        ForwardModel::new(&self.phantom, &self.protocol, &self.settings, self.config.fusion_time)
    }

    pub fn geometry(&self) -> LineGeometry {
        let m = self.model().expect("validated at construction");
        LineGeometry {
            dims: self.phantom.grid.dims().to_vec(),
            readout_axis: m.readout_axis,
        }
    }

    pub fn set_master_seed(&mut self, seed: u64) {
        self.config.noise.master_seed = seed;
    }

    pub fn set_methods(&mut self, methods: Vec<Method>) -> Result<()> {
        if methods.is_empty() {
            return Err(Error::validation("methods", "at least one method is required"));
        }
        self.config.sampling.methods = methods;
        Ok(())
    }

    pub fn set_lines(&mut self, lines: Vec<usize>) -> Result<()> {
        let n = self.geometry().num_lines();
        if lines.is_empty() {
            return Err(Error::validation("lines", "at least one line count is required"));
        }
        if let Some(&l) = lines.iter().find(|&&l| l > n) {
            return Err(Error::validation("lines", format!("{l} exceeds the {n} phase-encode lines")));
        }
        self.config.sampling.lines = lines;
        Ok(())
    }

    /// Noise std per quadrature component for a noiseless reference signal.
    pub fn sigma_for(&self, reference: &KSpaceSignal) -> f64 {
        let snr = self.config.noise.snr;
        if snr.is_infinite() {
            0.0
        } else {
            reference.dc().norm() / (snr * std::f64::consts::SQRT_2)
        }
    }

    /// Pattern for one cell. Poisson patterns depend on the seed index.
    pub fn pattern(
        &self,
        method: Method,
        lines: usize,
        seed_index: usize,
        scores: &[f64],
    ) -> Result<SamplingPattern> {
        let geom = self.geometry();
        let s = &self.config.sampling;
        match method {
            Method::MaxVar => maxvar_pattern(&geom, scores, lines, s.min_separation),
            Method::Rectilinear => rectilinear_pattern(&geom, lines),
            Method::Poisson => {
                let seed = derive_seed(self.config.noise.master_seed, ROLE_POISSON, seed_index as u64);
                match s.poisson_r0 {
                    Some(r0) => poisson_disk_pattern(&geom, lines, &PoissonParams::new(r0, s.poisson_beta, seed)),
                    None => poisson_disk_auto(&geom, lines, s.poisson_beta, seed),
                }
            }
        }
    }
}

/// Successful cell outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub errors: ErrorReport,
    pub posterior: ParameterStats,
    pub clamped: bool,
    pub shortfall: bool,
    pub lines_used: usize,
    pub line_fraction: f64,
}

/// One (method, line count, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub method: Method,
    pub lines: usize,
    pub seed_index: usize,
    pub noise_seed: u64,
    pub outcome: std::result::Result<CellResult, String>,
    pub wall_ms: f64,
}

/// Everything produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub true_mu: Vec<f64>,
    pub truth: Simulation,
    pub sigma: f64,
    pub ensemble: Ensemble,
    pub variance: VarianceMap,
    pub scores: Vec<f64>,
    pub prior: ParameterStats,
    pub records: Vec<ExperimentRecord>,
    /// Reconstructed fusion-time temperature for seed index 0, per (method, lines).
    pub reconstructions: Vec<(Method, usize, Vec<f64>)>,
}

struct Cell {
    method: Method,
    lines: usize,
    seed_index: usize,
}

/// Runs the full grid of methods x line counts x seeds. Stage failures
/// before the grid abort the run; failures inside a cell are recorded on its
/// row and the other cells continue.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentOutcome> {
    let model = exp.model()?;
    let truth = model.simulate(&exp.true_mu)?;
    let sigma = exp.sigma_for(&truth.signal);
    let rule = prior_rule(&exp.phantom.prior, exp.config.quadrature.nodes_per_dim)?;
    let ensemble = propagate_ensemble(&model, &rule)?;
    let variance = VarianceMap::from_ensemble(&ensemble)?;
    let scores = line_scores(&variance, model.readout_axis)?;
    let prior = ParameterStats::from_ensemble(&ensemble);
    let truth_field = truth
        .history
        .at(exp.config.fusion_time)
        .expect("fusion time is an output time")
        .clone();

    let seeds = exp.config.noise.seeds;
    let master = exp.config.noise.master_seed;
    let measurements: Vec<KSpaceSignal> = (0..seeds)
        .map(|s| {
            if exp.config.noise.add_noise {
                add_noise_with_sigma(&truth.signal, sigma, derive_seed(master, ROLE_NOISE, s as u64))
            } else {
                truth.signal.clone()
            }
        })
        .collect();

    let mut cells = Vec::new();
    for &method in &exp.config.sampling.methods {
        for &lines in &exp.config.sampling.lines {
            for seed_index in 0..seeds {
                cells.push(Cell {
                    method,
                    lines,
                    seed_index,
                });
            }
        }
    }
    let dims = exp.phantom.grid.dims().to_vec();
    let results: Vec<(ExperimentRecord, Option<Vec<f64>>)> = cells
        .par_iter()
        .map(|c| {
            let start = Instant::now();
            let run = || -> Result<(CellResult, Vec<f64>)> {
                let pattern = exp.pattern(c.method, c.lines, c.seed_index, &scores)?;
                let fused = fuse(
                    &ensemble,
                    &pattern,
                    &measurements[c.seed_index],
                    sigma,
                    Some(&exp.phantom.prior),
                )?;
                let rec = reconstruct_temperature(&exp.phantom, &fused.posterior, model.settings())?;
                let est = rec
                    .history
                    .at(exp.config.fusion_time)
                    .expect("fusion time is an output time");
                let errors = error_metrics(est, &truth_field, &dims, &exp.region)?;
                Ok((
                    CellResult {
                        errors,
                        posterior: fused.posterior,
                        clamped: fused.clamped,
                        shortfall: pattern.shortfall,
                        lines_used: pattern.len(),
                        line_fraction: pattern.line_fraction(),
                    },
                    est.values.clone(),
                ))
            };
            let (outcome, field) = match run() {
                Ok((r, f)) => (Ok(r), Some(f)),
                Err(e) => {
                    log::warn!("{} / {} lines / seed {}: {e}", c.method, c.lines, c.seed_index);
                    (Err(e.to_string()), None)
                }
            };
            let record = ExperimentRecord {
                method: c.method,
                lines: c.lines,
                seed_index: c.seed_index,
                noise_seed: derive_seed(master, ROLE_NOISE, c.seed_index as u64),
                outcome,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            (record, if c.seed_index == 0 { field } else { None })
        })
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut reconstructions = Vec::new();
    for (r, f) in results {
        if let Some(f) = f {
            reconstructions.push((r.method, r.lines, f));
        }
        records.push(r);
    }
    Ok(ExperimentOutcome {
        true_mu: exp.true_mu.clone(),
        truth,
        sigma,
        ensemble,
        variance,
        scores,
        prior,
        records,
        reconstructions,
    })
}

/// Report CSV: one row per record, deterministic given the configuration
/// and seeds. Wall-clock times go to [`write_timings_csv`].
pub fn write_report_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::domain("no experiment records to report"));
    }
    let d = records
        .iter()
        .find_map(|r| r.outcome.as_ref().ok().map(|c| c.posterior.dim()))
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "method",
        "lines",
        "seed",
        "noise_seed",
        "line_fraction",
        "rmse",
        "max_err",
        "trace_post",
        "clamped",
        "shortfall",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..d).map(|i| format!("mu_{i}")));
    header.extend((0..d).map(|i| format!("var_{i}")));
    header.push("error".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.method.to_string(),
            r.lines.to_string(),
            r.seed_index.to_string(),
            r.noise_seed.to_string(),
        ];
        match &r.outcome {
            Ok(c) => {
                row.push(c.line_fraction.to_string());
                row.push(c.errors.rmse.to_string());
                row.push(c.errors.max_abs_error.to_string());
                row.push(c.posterior.trace().to_string());
                row.push(c.clamped.to_string());
                row.push(c.shortfall.to_string());
                row.extend(c.posterior.mean.iter().map(|x| x.to_string()));
                row.extend(c.posterior.variances().iter().map(|x| x.to_string()));
                row.push(String::new());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 6 + 2 * d));
                row.push(e.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<report csv>", e))
}

/// Wall time per cell, ms.
pub fn write_timings_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "lines", "seed", "wall_ms"])?;
    for r in records {
        w.write_record([
            r.method.to_string(),
            r.lines.to_string(),
            r.seed_index.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<timings csv>", e))
}

/// Seed-averaged statistics of one (method, lines) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub lines: usize,
    pub runs: usize,
    pub failures: usize,
    pub line_fraction: f64,
    pub mean_rmse: f64,
    pub mean_max_err: f64,
    pub mean_trace_post: f64,
}

/// Groups records by (method, lines) in first-appearance order.
pub fn summarize(records: &[ExperimentRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::domain("no experiment records to summarize"));
    }
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.method, r.lines)) {
            keys.push((r.method, r.lines));
        }
    }
    Ok(keys
        .into_iter()
        .map(|(method, lines)| {
            let group: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|r| r.method == method && r.lines == lines)
                .collect();
            let ok: Vec<&CellResult> = group.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let n = ok.len().max(1) as f64;
            let mean = |f: &dyn Fn(&CellResult) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|c| f(c)).sum::<f64>() / n
                }
            };
            SummaryRow {
                method: method.to_string(),
                lines,
                runs: group.len(),
                failures: group.len() - ok.len(),
                line_fraction: mean(&|c| c.line_fraction),
                mean_rmse: mean(&|c| c.errors.rmse),
                mean_max_err: mean(&|c| c.errors.max_abs_error),
                mean_trace_post: mean(&|c| c.posterior.trace()),
            }
        })
        .collect())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    name: &'a str,
    true_mu: &'a [f64],
    sigma: f64,
    snr: f64,
    master_seed: u64,
    seeds: usize,
    quadrature_nodes: usize,
    fusion_time: f64,
    total_lines: usize,
    groups: &'a [SummaryRow],
}

/// Structured summary (TOML).
pub fn summary_toml(exp: &Experiment, outcome: &ExperimentOutcome) -> Result<String> {
    let groups = summarize(&outcome.records)?;
    let file = SummaryFile {
        name: &exp.config.name,
        true_mu: &outcome.true_mu,
        sigma: outcome.sigma,
        snr: if exp.config.noise.snr.is_finite() {
            exp.config.noise.snr
        } else {
            -1.0
        },
        master_seed: exp.config.noise.master_seed,
        seeds: exp.config.noise.seeds,
        quadrature_nodes: outcome.ensemble.len(),
        fusion_time: exp.config.fusion_time,
        total_lines: exp.geometry().num_lines(),
        groups: &groups,
    };
    toml::to_string(&file).map_err(|e| Error::domain(format!("summary: {e}")))
}

/// Plain-text table of a summary.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>6} {:>9} {:>10} {:>10} {:>12} {:>5}",
        "method", "lines", "fraction", "rmse", "max_err", "trace_post", "fail"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>6} {:>9.4} {:>10.4} {:>10.4} {:>12.4e} {:>5}",
            r.method, r.lines, r.line_fraction, r.mean_rmse, r.mean_max_err, r.mean_trace_post, r.failures
        );
    }
    s
}

/// Reads a report CSV back into summary rows (for `report`).
pub fn summarize_report_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::domain(format!("{}: missing column `{name}`", path.display())))
    };
    let (cm, cl, cf, cr, cx, ct, ce) = (
        col("method")?,
        col("lines")?,
        col("line_fraction")?,
        col("rmse")?,
        col("max_err")?,
        col("trace_post")?,
        col("error")?,
    );
    let mut groups: Vec<(String, usize, Vec<[f64; 4]>, usize)> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let method = row[cm].to_string();
        let lines: usize = row[cl]
            .parse()
            .map_err(|_| Error::domain(format!("bad line count `{}`", &row[cl])))?;
        let idx = match groups.iter().position(|g| g.0 == method && g.1 == lines) {
            Some(i) => i,
            None => {
                groups.push((method, lines, Vec::new(), 0));
                groups.len() - 1
            }
        };
        if !row[ce].is_empty() {
            groups[idx].3 += 1;
            continue;
        }
        let num = |i: usize| {
            row[i]
                .parse::<f64>()
                .map_err(|_| Error::domain(format!("bad number `{}`", &row[i])))
        };
        groups[idx].2.push([num(cf)?, num(cr)?, num(cx)?, num(ct)?]);
    }
    if groups.is_empty() {
        return Err(Error::domain("report contains no rows"));
    }
    Ok(groups
        .into_iter()
        .map(|(method, lines, vals, failures)| {
            let n = vals.len();
            let mean = |k: usize| {
                if n == 0 {
                    f64::NAN
                } else {
                    vals.iter().map(|v| v[k]).sum::<f64>() / n as f64
                }
            };
            SummaryRow {
                method,
                lines,
                runs: n + failures,
                failures,
                line_fraction: mean(0),
                mean_rmse: mean(1),
                mean_max_err: mean(2),
                mean_trace_post: mean(3),
            }
        })
        .collect())
}
