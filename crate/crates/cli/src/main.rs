use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mrtherm::experiment::{
    format_summary, run_experiment, summarize, summarize_report_csv, summary_toml, write_report_csv,
    write_timings_csv, Experiment, ExperimentOutcome,
};
use mrtherm::io::{spatial_axes, write_ensemble_csv, write_kspace, write_posterior_csv, write_real, RawSidecar};
use mrtherm::mrsignal::add_noise_with_sigma;
use mrtherm::sampling::{line_scores, Method, VarianceMap};
use mrtherm::uq::{prior_rule, propagate_ensemble};
use mrtherm::{Error, Result};

#[derive(Parser)]
#[command(name = "mrtherm", version, about = "Model-based accelerated MR thermometry experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write every artifact.
    Run(Common),
    /// Run the method x lines x seeds grid and write the report only.
    Sweep(Common),
    /// Build the prior ensemble and write sampling patterns.
    Pattern(Common),
    /// Simulate temperature and k-space for one parameter vector.
    Forward {
        #[command(flatten)]
        common: Common,
        /// Attenuation per tissue, 1/m (defaults to the configured truth).
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
    },
    /// Summarize an existing report.csv.
    Report {
        /// Directory containing report.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of maxvar, rectilinear, poisson.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated line counts.
    #[arg(long, value_delimiter = ',')]
    lines: Option<Vec<usize>>,
}

impl Common {
    fn load(&self) -> Result<(Experiment, PathBuf)> {
        let mut exp = Experiment::load(&self.config)?;
        if let Some(seed) = self.seed {
            exp.set_master_seed(seed);
        }
        if let Some(m) = &self.methods {
            exp.set_methods(m.iter().map(|s| s.parse()).collect::<Result<Vec<Method>>>()?)?;
        }
        if let Some(l) = &self.lines {
            exp.set_lines(l.clone())?;
        }
        let out = self
            .out
            .clone()
            .or_else(|| exp.config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        create_dir(&out)?;
        Ok((exp, out))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn temperature_sidecar(exp: &Experiment, time: f64, quantity: &str) -> RawSidecar {
    RawSidecar {
        dims: exp.phantom.grid.dims().to_vec(),
        element: "real".into(),
        quantity: quantity.into(),
        unit: "degC".into(),
        axes: spatial_axes(exp.phantom.grid.ndim()),
        spacing: Some(exp.phantom.grid.spacing().to_vec()),
        time: Some(time),
        snr: None,
        seed: None,
    }
}

fn write_report(exp: &Experiment, outcome: &ExperimentOutcome, out: &Path) -> Result<()> {
    write_report_csv(&outcome.records, create(&out.join("report.csv"))?)?;
    write_timings_csv(&outcome.records, create(&out.join("timings.csv"))?)?;
    write_text(&out.join("summary.toml"), &summary_toml(exp, outcome)?)?;
    print!("{}", format_summary(&summarize(&outcome.records)?));
    Ok(())
}

fn cmd_run(common: &Common, full: bool) -> Result<()> {
    let (exp, out) = common.load()?;
    info!("running {} cells", exp.config.sampling.methods.len() * exp.config.sampling.lines.len() * exp.config.noise.seeds);
    let outcome = run_experiment(&exp)?;
    write_report(&exp, &outcome, &out)?;
    if !full {
        return Ok(());
    }
    let t = exp.config.fusion_time;
    let truth = outcome.truth.history.at(t).expect("fusion time is recorded");
    write_real(&out.join("truth_temperature.f64"), &truth.values, &temperature_sidecar(&exp, t, "temperature"))?;
    write_kspace(&out.join("truth_kspace.f64"), &outcome.truth.signal, None, None)?;
    let seed0 = mrtherm::experiment::derive_seed(exp.config.noise.master_seed, mrtherm::experiment::ROLE_NOISE, 0);
    if exp.config.noise.add_noise {
        let measured = add_noise_with_sigma(&outcome.truth.signal, outcome.sigma, seed0);
        write_kspace(&out.join("measured_kspace.f64"), &measured, Some(exp.config.noise.snr), Some(seed0))?;
    } else {
        write_kspace(&out.join("measured_kspace.f64"), &outcome.truth.signal, None, None)?;
    }
    write_ensemble_csv(&outcome.ensemble, create(&out.join("ensemble.csv"))?)?;
    let vm = &outcome.variance;
    let side = RawSidecar {
        dims: vm.dims.clone(),
        element: "real".into(),
        quantity: "kspace_variance".into(),
        unit: "a.u.".into(),
        axes: (0..vm.dims.len())
            .map(|a| if a == exp.geometry().readout_axis { "readout".into() } else { "phase".into() })
            .collect(),
        spacing: None,
        time: Some(t),
        snr: None,
        seed: None,
    };
    write_real(&out.join("variance_map.f64"), &vm.values, &side)?;

    let patterns = out.join("patterns");
    let posteriors = out.join("posteriors");
    let recon = out.join("recon");
    for dir in [&patterns, &posteriors, &recon] {
        create_dir(dir)?;
    }
    for r in outcome.records.iter().filter(|r| r.seed_index == 0) {
        let tag = format!("{}_{}", r.method, r.lines);
        let p = exp.pattern(r.method, r.lines, 0, &outcome.scores)?;
        p.write_csv(create(&patterns.join(format!("{tag}.csv")))?)?;
        if let Ok(c) = &r.outcome {
            write_posterior_csv(&outcome.prior, &c.posterior, r.lines, create(&posteriors.join(format!("{tag}.csv")))?)?;
        }
    }
    for (method, lines, field) in &outcome.reconstructions {
        let path = recon.join(format!("{method}_{lines}.f64"));
        write_real(&path, field, &temperature_sidecar(&exp, t, "reconstructed_temperature"))?;
    }
    info!("artifacts written to {}", out.display());
    Ok(())
}

fn cmd_pattern(common: &Common) -> Result<()> {
    let (exp, out) = common.load()?;
    let model = exp.model()?;
    let rule = prior_rule(&exp.phantom.prior, exp.config.quadrature.nodes_per_dim)?;
    let ensemble = propagate_ensemble(&model, &rule)?;
    let vm = VarianceMap::from_ensemble(&ensemble)?;
    let scores = line_scores(&vm, model.readout_axis)?;
    write_ensemble_csv(&ensemble, create(&out.join("ensemble.csv"))?)?;
    let mut w = create(&out.join("line_scores.csv"))?;
    let geom = exp.geometry();
    let mut text = String::from("line,score\n");
    for (l, s) in scores.iter().enumerate() {
        text.push_str(&format!("{l},{s}\n"));
    }
    std::io::Write::write_all(&mut w, text.as_bytes()).map_err(|e| Error::Io {
        path: out.join("line_scores.csv"),
        source: e,
    })?;
    for &method in &exp.config.sampling.methods {
        for &lines in &exp.config.sampling.lines {
            let p = exp.pattern(method, lines, 0, &scores)?;
            p.validate()?;
            p.write_csv(create(&out.join(format!("pattern_{method}_{lines}.csv")))?)?;
            println!("{method:<12} {lines:>5} lines  fraction {:.4}{}", p.line_fraction(), if p.shortfall { "  (shortfall)" } else { "" });
        }
    }
    info!("{} candidate lines", geom.num_lines());
    Ok(())
}

fn cmd_forward(common: &Common, mu: Option<Vec<f64>>) -> Result<()> {
    let (exp, out) = common.load()?;
    let mu = mu.unwrap_or_else(|| exp.true_mu.clone());
    let model = exp.model()?;
    let sim = model.simulate(&mu)?;
    for (i, f) in sim.history.fields.iter().enumerate() {
        write_real(&out.join(format!("temperature_{i:03}.f64")), &f.values, &temperature_sidecar(&exp, f.time, "temperature"))?;
    }
    write_kspace(&out.join("kspace.f64"), &sim.signal, None, None)?;
    let sigma = exp.sigma_for(&sim.signal);
    let seed = mrtherm::experiment::derive_seed(exp.config.noise.master_seed, mrtherm::experiment::ROLE_NOISE, 0);
    let noisy = add_noise_with_sigma(&sim.signal, sigma, seed);
    write_kspace(&out.join("kspace_noisy.f64"), &noisy, Some(exp.config.noise.snr), Some(seed))?;
    let last = sim.history.last().expect("at least one output time");
    let peak = last.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("mu = {mu:?}\npeak temperature {peak:.3} degC at t = {} s\nnoise sigma {sigma:.6e}", last.time);
    Ok(())
}

fn cmd_report(out: &Path) -> Result<()> {
    let rows = summarize_report_csv(&out.join("report.csv"))?;
    let table = format_summary(&rows);
    write_text(&out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c, true),
        Command::Sweep(c) => cmd_run(c, false),
        Command::Pattern(c) => cmd_pattern(c),
        Command::Forward { common, mu } => cmd_forward(common, mu.clone()),
        Command::Report { out } => cmd_report(out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
