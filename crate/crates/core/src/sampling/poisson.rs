//! Variable-density Poisson-disk line patterns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LineGeometry, Method, SamplingPattern};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonParams {
    /// Exclusion radius at the k-space centre, grid units.
    pub r0: f64,
    /// Radius growth: r(k) = r0 (1 + beta |k| / k_max).
    pub beta: f64,
    pub seed: u64,
    /// Dart budget per candidate line.
    pub attempts_per_line: usize,
}

impl PoissonParams {
    pub fn new(r0: f64, beta: f64, seed: u64) -> Self {
        Self {
            r0,
            beta,
            seed,
            attempts_per_line: 30,
        }
    }
}

fn norm(k: &[i64]) -> f64 {
    k.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

/// Seeded dart throwing on the phase-encode plane. Darts are drawn uniformly
/// over the plane in centred coordinates and snapped to the integer grid
/// before the distance test; a dart at k is accepted when every accepted
/// point lies at least r(k) away. When more than `n` are accepted the `n`
/// closest to the centre are kept (ties by line id). Fewer than `n` sets
/// `shortfall`.
pub fn poisson_disk_pattern(
    geometry: &LineGeometry,
    n: usize,
    params: &PoissonParams,
) -> Result<SamplingPattern> {
    if !(params.r0 > 0.0 && params.r0.is_finite()) {
        return Err(Error::validation("poisson.r0", "must be positive"));
    }
    if !(params.beta >= 0.0 && params.beta.is_finite()) {
        return Err(Error::validation("poisson.beta", "must be nonnegative"));
    }
    if n > geometry.num_lines() {
        return Err(Error::domain(format!(
            "requested {n} lines but only {} candidates exist",
            geometry.num_lines()
        )));
    }
    let pd = geometry.phase_dims();
    let k_max = pd
        .iter()
        .map(|&m| (m as f64 / 2.0).powi(2))
        .sum::<f64>()
        .sqrt();
    let radius = |k: &[i64]| params.r0 * (1.0 + params.beta * norm(k) / k_max);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut taken = vec![false; geometry.num_lines()];
    let mut accepted: Vec<Vec<i64>> = Vec::new();
    let budget = params.attempts_per_line.max(1) * geometry.num_lines();
    for _ in 0..budget {
        let k: Vec<i64> = pd
            .iter()
            .map(|&m| {
                // centred range for extent m is [-(m/2), ceil(m/2) - 1]
                let lo = -((m / 2) as f64) - 0.5;
                let hi = (m.div_ceil(2) as f64) - 0.5;
                let x: f64 = rng.random_range(lo..hi);
                (x.round() as i64).clamp(-((m / 2) as i64), m.div_ceil(2) as i64 - 1)
            })
            .collect();
        let line = geometry.line_from_centered(&k);
        if taken[line] {
            continue;
        }
        let r = radius(&k);
        let clear = accepted.iter().all(|p| {
            let d2: f64 = p.iter().zip(&k).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
            d2.sqrt() >= r
        });
        if clear {
            taken[line] = true;
            accepted.push(k);
        }
    }
    let mut lines: Vec<(f64, usize)> = accepted
        .iter()
        .map(|k| (norm(k), geometry.line_from_centered(k)))
        .collect();
    lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    lines.truncate(n);
    let shortfall = lines.len() < n;
    if shortfall {
        log::debug!(
            "poisson-disk pattern: only {} of {n} lines placed (r0 = {})",
            lines.len(),
            params.r0
        );
    }
    Ok(SamplingPattern {
        method: Method::Poisson,
        geometry: geometry.clone(),
        lines: lines.into_iter().map(|(_, l)| l).collect(),
        min_separation: params.r0,
        seed: Some(params.seed),
        shortfall,
    })
}

/// Shrinks r0 geometrically from the uniform-coverage radius until the
/// pattern reaches `n` lines. The search stops once even the outermost
/// radius `r0 (1 + beta)` is below one grid unit, where every line is
/// admissible.
pub fn poisson_disk_auto(
    geometry: &LineGeometry,
    n: usize,
    beta: f64,
    seed: u64,
) -> Result<SamplingPattern> {
    if n == 0 {
        return poisson_disk_pattern(geometry, 0, &PoissonParams::new(1.0, beta, seed));
    }
    let pd = geometry.phase_dims();
    let area = geometry.num_lines() as f64;
    let mut r0 = (area / n as f64).powf(1.0 / pd.len() as f64);
    let floor = 1.0 / (1.0 + beta.max(0.0));
    loop {
        let p = poisson_disk_pattern(geometry, n, &PoissonParams::new(r0, beta, seed))?;
        if !p.shortfall || r0 <= floor {
            if p.shortfall {
                log::warn!("poisson-disk pattern: only {} of {n} lines placed", p.len());
            }
            return Ok(p);
        }
        r0 = (r0 * 0.95).max(floor);
    }
}
