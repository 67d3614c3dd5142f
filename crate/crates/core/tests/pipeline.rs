use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrtherm::bioheat::TemperatureHistory;
use mrtherm::experiment::{run_experiment, Experiment, ExperimentConfig};
use mrtherm::fusion::{
    cross_covariance, embed_restricted, fuse, restrict_to_pattern, ParameterStats,
};
use mrtherm::mrsignal::KSpaceSignal;
use mrtherm::recon::{error_metrics, reconstruct_temperature, Region};
use mrtherm::sampling::{maxvar_pattern, rectilinear_pattern, LineGeometry, Method, SamplingPattern};
use mrtherm::uq::{gauss_legendre, prior_rule, propagate_ensemble, Ensemble, Member};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// 16 x 16 planar toy at 2 mm with a single source in the middle.
fn toy() -> Experiment {
    let mut cfg = ExperimentConfig::load(&configs().join("planar2d.toml")).unwrap();
    let p = cfg.phantom.as_mut().unwrap();
    p.grid.dims = vec![16, 16];
    p.grid.spacing = vec![2e-3, 2e-3];
    p.laser.positions = vec![vec![0.015, 0.015]];
    p.laser.power = vec![[0.0, 2.0]];
    cfg.quadrature.nodes_per_dim = 7;
    cfg.solver.dt = None;
    cfg.sampling.lines = vec![0, 4, 8];
    cfg.noise.seeds = 2;
    Experiment::new(cfg, Some(&configs())).unwrap()
}

#[test]
fn presets_load_and_validate() {
    for name in ["planar2d.toml", "brain3d.toml", "agar.toml"] {
        let exp = Experiment::load(&configs().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(exp.phantom.prior.contains(&exp.true_mu), "{name}");
        assert!(exp.settings.output_times.contains(&exp.config.fusion_time));
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let text = std::fs::read_to_string(configs().join("planar2d.toml")).unwrap();
    let bad = text.replacen("[noise]", "[noise]\nsnrr = 3.0", 1);
    assert!(ExperimentConfig::from_toml_str(&bad).is_err());
}

#[test]
fn single_node_ensemble_equals_direct_solve() {
    let exp = toy();
    let model = exp.model().unwrap();
    let rule = gauss_legendre(1, 100.0, 400.0).unwrap();
    let ens = propagate_ensemble(&model, &rule).unwrap();
    let direct = model.simulate(&[250.0]).unwrap();
    assert_eq!(ens.members.len(), 1);
    assert_eq!(ens.members[0].signal, direct.signal);
    assert_eq!(ens.members[0].history, direct.history);
}

#[test]
fn reconstruction_at_truth_is_exact() {
    let exp = toy();
    let model = exp.model().unwrap();
    let truth = model.simulate(&exp.true_mu).unwrap();
    let post = ParameterStats::new(exp.true_mu.clone(), DMatrix::zeros(1, 1)).unwrap();
    let rec = reconstruct_temperature(&exp.phantom, &post, model.settings()).unwrap();
    let t = exp.config.fusion_time;
    let est = rec.history.at(t).unwrap();
    let report = error_metrics(est, truth.history.at(t).unwrap(), exp.phantom.grid.dims(), &Region::Full).unwrap();
    assert_eq!(report.rmse, 0.0);
    assert_eq!(report.max_abs_error, 0.0);
}

#[test]
fn toy_pipeline_reduces_error() {
    let exp = toy();
    let out = run_experiment(&exp).unwrap();
    assert_eq!(out.records.len(), 3 * 3 * 2);
    for r in &out.records {
        let c = r.outcome.as_ref().unwrap();
        if r.lines == 0 {
            assert_eq!(c.posterior, out.prior);
        }
        assert!(c.posterior.trace() <= out.prior.trace() * (1.0 + 1e-12));
    }
    let rmse = |m: Method, n: usize| -> f64 {
        out.records
            .iter()
            .filter(|r| r.method == m && r.lines == n)
            .map(|r| r.outcome.as_ref().unwrap().errors.rmse)
            .sum::<f64>()
    };
    assert!(rmse(Method::MaxVar, 8) < rmse(Method::MaxVar, 0));
}

fn signal_2d(nx: usize, ny: usize, seed: u64) -> KSpaceSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    KSpaceSignal {
        dims: vec![nx, ny],
        spacing: vec![1e-3, 1e-3],
        readout_axis: 0,
        data: (0..nx * ny)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    }
}

fn pattern(geom: &LineGeometry, lines: Vec<usize>) -> SamplingPattern {
    SamplingPattern {
        method: Method::MaxVar,
        geometry: geom.clone(),
        lines,
        min_separation: 1.0,
        seed: None,
        shortfall: false,
    }
}

#[test]
fn restriction_round_trip() {
    let sig = signal_2d(4, 6, 1);
    let geom = LineGeometry::new(vec![4, 6], 0).unwrap();
    let p = pattern(&geom, vec![5, 0, 2]);
    let z = restrict_to_pattern(&sig, &p).unwrap();
    assert_eq!(z.len(), 2 * 3 * 4);
    let full = embed_restricted(&z, &p).unwrap();
    for (i, (a, b)) in full.iter().zip(&sig.data).enumerate() {
        let line = i % 6;
        if p.lines.contains(&line) {
            assert_eq!(a, b);
        } else {
            assert_eq!(*a, Complex64::new(0.0, 0.0));
        }
    }
    assert!(restrict_to_pattern(&sig, &pattern(&geom, vec![6])).is_err());
}

/// Ensemble whose restricted signal is linear in mu plus a fixed offset.
fn linear_ensemble(nodes: usize, dims: &[usize], seed: u64) -> Ensemble {
    let rule = gauss_legendre(nodes, 100.0, 400.0).unwrap();
    let n: usize = dims.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let members = rule
        .nodes
        .iter()
        .map(|x| Member {
            mu: x.clone(),
            history: TemperatureHistory { fields: vec![] },
            signal: KSpaceSignal {
                dims: dims.to_vec(),
                spacing: vec![1e-3; dims.len()],
                readout_axis: 0,
                data: h.iter().map(|c| c * x[0] * 1e-2 + Complex64::new(1.0, 0.5)).collect(),
            },
        })
        .collect();
    Ensemble {
        weights: rule.weights,
        members,
        fusion_time: 1.0,
    }
}

#[test]
fn cross_covariance_matches_monte_carlo() {
    let ens = linear_ensemble(5, &[4, 4], 3);
    let geom = LineGeometry::new(vec![4, 4], 0).unwrap();
    let p = pattern(&geom, vec![0, 1]);
    let exact = cross_covariance(&ens, &p).unwrap();
    // Monte-Carlo over the uniform prior of the same linear map
    let base = &ens.members[0];
    let slope: Vec<f64> = {
        let other = &ens.members[1];
        let a = restrict_to_pattern(&base.signal, &p).unwrap();
        let b = restrict_to_pattern(&other.signal, &p).unwrap();
        a.iter().zip(&b).map(|(x, y)| (y - x) / (other.mu[0] - base.mu[0])).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 400_000;
    let samples: Vec<f64> = (0..n).map(|_| rng.random_range(100.0..400.0)).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n as f64;
    for (j, s) in slope.iter().enumerate() {
        let mc = var * s;
        assert!((exact[(0, j)] - mc).abs() <= 0.01 * mc.abs() + 1e-12, "{j}: {} vs {mc}", exact[(0, j)]);
    }
}

#[test]
fn large_noise_returns_the_prior() {
    let ens = linear_ensemble(5, &[4, 4], 4);
    let geom = LineGeometry::new(vec![4, 4], 0).unwrap();
    let p = pattern(&geom, vec![0, 2]);
    let meas = ens.members[2].signal.clone();
    let prior = ParameterStats::from_ensemble(&ens);
    let post = fuse(&ens, &p, &meas, 1e9, None).unwrap().posterior;
    assert!((post.mean[0] - prior.mean[0]).abs() < 1e-6);
    assert!((post.covariance[(0, 0)] - prior.covariance[(0, 0)]).abs() < 1e-6);
}

#[test]
fn more_lines_never_increase_the_trace() {
    let exp = toy();
    let model = exp.model().unwrap();
    let rule = prior_rule(&exp.phantom.prior, 5).unwrap();
    let ens = propagate_ensemble(&model, &rule).unwrap();
    let geom = exp.geometry();
    let meas = model.simulate(&exp.true_mu).unwrap().signal;
    let mut last = f64::INFINITY;
    for n in 0..=geom.num_lines() {
        let p = rectilinear_pattern(&geom, n).unwrap();
        let t = fuse(&ens, &p, &meas, 1e-9, None).unwrap().posterior.trace();
        assert!(t <= last * (1.0 + 1e-9), "{n} lines: {t} > {last}");
        last = t;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn posterior_ignores_line_order(seed in 0u64..1000, lines in proptest::sample::subsequence((0..8usize).collect::<Vec<_>>(), 1..6)) {
        let ens = linear_ensemble(4, &[6, 8], seed);
        let geom = LineGeometry::new(vec![6, 8], 0).unwrap();
        let meas = ens.members[1].signal.clone();
        let mut reversed = lines.clone();
        reversed.reverse();
        let a = fuse(&ens, &pattern(&geom, lines), &meas, 0.05, None).unwrap().posterior;
        let b = fuse(&ens, &pattern(&geom, reversed), &meas, 0.05, None).unwrap().posterior;
        prop_assert!((a.mean[0] - b.mean[0]).abs() <= 1e-9 * a.mean[0].abs());
        prop_assert!((a.covariance[(0, 0)] - b.covariance[(0, 0)]).abs() <= 1e-9 * (1.0 + a.covariance[(0, 0)]));
    }

    #[test]
    fn maxvar_respects_separation(scores in proptest::collection::vec(0.0f64..10.0, 16), n in 0usize..6, sep in 1.0f64..3.0) {
        let geom = LineGeometry::new(vec![4, 16], 0).unwrap();
        if let Ok(p) = maxvar_pattern(&geom, &scores, n, sep) {
            prop_assert_eq!(p.len(), n);
            prop_assert!(p.validate().is_ok());
        }
    }
}
