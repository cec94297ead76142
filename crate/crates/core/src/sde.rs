//! Euler-Maruyama simulation, occupation histograms and ergodic averages.
//!
//! Random numbers come from ChaCha12 seeded with `seed_from_u64(seed)`; run `k` of an ensemble
//! uses stream `k` of the same key, so runs are independent and reproducible regardless of the
//! number of workers. Normals are drawn with `rand_distr::StandardNormal`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::format_float;
use crate::dynamics::{apply_generator, ScalarField, SystemSpec};

/// Batches used for standard errors of time averages.
pub const BATCHES: usize = 20;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid simulation options: {0}")]
    InvalidOptions(String),
    #[error("state became non-finite at step {step}")]
    NonFinite { step: u64 },
    #[error("histograms support dimension 1 or 2, got {0}")]
    UnsupportedDimension(usize),
    #[error("balls {0} and {1} overlap")]
    OverlappingBalls(usize, usize),
    #[error("all {0} runs were censored at the time cap")]
    AllCensored(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub eps: f64,
    pub dt: f64,
    /// Total steps including burn-in.
    pub steps: u64,
    pub burn_in: f64,
    /// Set from the experiment seed.
    #[serde(skip)]
    pub seed: u64,
    /// Defaults to the box center.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            eps: 0.3,
            dt: 1e-3,
            steps: 1_000_000,
            burn_in: 0.1,
            seed: 0,
            x0: None,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<(), SdeError> {
        let bad = |m: &str| Err(SdeError::InvalidOptions(m.to_string()));
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return bad("eps must be finite and nonnegative");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return bad("burn_in must lie in [0, 1)");
        }
        if self.x0.as_ref().is_some_and(|x| x.iter().any(|v| !v.is_finite())) {
            return bad("x0 must be finite");
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> u64 {
        (self.burn_in * self.steps as f64).floor() as u64
    }

    pub fn retained_steps(&self) -> u64 {
        self.steps - self.burn_in_steps()
    }

    /// Warning when `dt` times the drift's Lipschitz estimate reaches 1/2.
    pub fn stability_warning(&self, system: &SystemSpec) -> Option<String> {
        let l = system.lipschitz_estimate();
        (self.dt * l >= 0.5).then(|| format!("dt * Lipschitz estimate = {:.3} >= 0.5; Euler-Maruyama may be unstable", self.dt * l))
    }
}

/// Euler-Maruyama stepper `X += b dt + eps sigma sqrt(dt) xi`.
pub struct EmStream<'a> {
    system: &'a SystemSpec,
    rng: ChaCha12Rng,
    x: Vec<f64>,
    drift: Vec<f64>,
    xi: Vec<f64>,
    x_old: Vec<f64>,
    dt: f64,
    noise_scale: f64,
    step: u64,
}

impl<'a> EmStream<'a> {
    /// Stream `run` of the generator keyed by `opts.seed`, started at `start`.
    pub fn new(system: &'a SystemSpec, opts: &SimOptions, start: &[f64], run: u64) -> EmStream<'a> {
        let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
        rng.set_stream(run);
        EmStream {
            system,
            rng,
            x: start.to_vec(),
            drift: vec![0.0; system.dim()],
            xi: vec![0.0; system.noise_dim()],
            x_old: start.to_vec(),
            dt: opts.dt,
            noise_scale: opts.eps * opts.dt.sqrt(),
            step: 0,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn advance(&mut self) -> Result<&[f64], SdeError> {
        self.system.drift_into(&self.x, &mut self.drift);
        for z in self.xi.iter_mut() {
            *z = StandardNormal.sample(&mut self.rng);
        }
        self.x_old.copy_from_slice(&self.x);
        for (x, b) in self.x.iter_mut().zip(&self.drift) {
            *x += b * self.dt;
        }
        if self.noise_scale != 0.0 {
            self.system.add_sigma_times(&self.x_old, &self.xi, self.noise_scale, &mut self.x);
        }
        self.step += 1;
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::NonFinite { step: self.step });
        }
        Ok(&self.x)
    }
}

fn start_point(system: &SystemSpec, opts: &SimOptions) -> Result<Vec<f64>, SdeError> {
    let x0 = opts.x0.clone().unwrap_or_else(|| system.domain().center());
    if x0.len() != system.dim() {
        return Err(SdeError::InvalidOptions(format!(
            "x0 has dimension {}, system has {}",
            x0.len(),
            system.dim()
        )));
    }
    Ok(x0)
}

/// States after every `every`-th step, starting with `x0`.
pub fn simulate_em(system: &SystemSpec, opts: &SimOptions, every: u64) -> Result<Vec<Vec<f64>>, SdeError> {
    opts.validate()?;
    let x0 = start_point(system, opts)?;
    let every = every.max(1);
    let mut em = EmStream::new(system, opts, &x0, 0);
    let mut out = vec![x0];
    for k in 1..=opts.steps {
        let x = em.advance()?;
        if k % every == 0 {
            out.push(x.to_vec());
        }
    }
    Ok(out)
}

/// Calls `visit(batch, state)` for each retained state of a single long run.
fn for_each_retained<F: FnMut(usize, &[f64])>(system: &SystemSpec, opts: &SimOptions, mut visit: F) -> Result<(), SdeError> {
    opts.validate()?;
    let x0 = start_point(system, opts)?;
    let mut em = EmStream::new(system, opts, &x0, 0);
    for _ in 0..opts.burn_in_steps() {
        em.advance()?;
    }
    let retained = opts.retained_steps();
    for k in 0..retained {
        let batch = ((k as u128 * BATCHES as u128) / retained as u128) as usize;
        visit(batch, em.advance()?);
    }
    Ok(())
}

/// Mean and batch-means standard error of a series summarized as per-batch sums over equal
/// (up to one) batch sizes.
fn batch_stats(sums: &[f64], sizes: &[u64]) -> (f64, f64) {
    let total: f64 = sums.iter().sum();
    let n: u64 = sizes.iter().sum();
    let mean = total / n as f64;
    let means: Vec<f64> = sums
        .iter()
        .zip(sizes)
        .filter(|(_, &s)| s > 0)
        .map(|(t, &s)| t / s as f64)
        .collect();
    let b = means.len() as f64;
    if b < 2.0 {
        return (mean, f64::NAN);
    }
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0);
    (mean, (var / b).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub eps: f64,
    pub dt: f64,
    pub burn_in_steps: u64,
    pub bins: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Flat bin counts, first axis fastest.
    pub counts: Vec<u64>,
    pub batch_counts: Vec<Vec<u64>>,
    pub batch_sizes: Vec<u64>,
    pub retained: u64,
    pub escapes: u64,
    /// Escape fraction at most 5%.
    pub reliable: bool,
}

impl DensityEstimate {
    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn bin_width(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / self.bins[k] as f64
    }

    pub fn bin_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.bin_width(k)).product()
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        let mut rest = flat;
        (0..self.dim())
            .map(|k| {
                let i = rest % self.bins[k];
                rest /= self.bins[k];
                self.lower[k] + (i as f64 + 0.5) * self.bin_width(k)
            })
            .collect()
    }

    pub fn bin_of(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0;
        let mut scale = 1;
        for k in 0..self.dim() {
            let s = (x[k] - self.lower[k]) / self.bin_width(k);
            if !(s >= 0.0 && s < self.bins[k] as f64) {
                return None;
            }
            flat += scale * (s as usize).min(self.bins[k] - 1);
            scale *= self.bins[k];
        }
        Some(flat)
    }

    pub fn escape_fraction(&self) -> f64 {
        self.escapes as f64 / self.retained as f64
    }

    pub fn probability(&self, flat: usize) -> f64 {
        self.counts[flat] as f64 / self.retained as f64
    }

    pub fn density(&self, flat: usize) -> f64 {
        self.probability(flat) / self.bin_volume()
    }

    /// Batch-means standard error of a bin probability.
    pub fn probability_se(&self, flat: usize) -> f64 {
        let sums: Vec<f64> = self.batch_counts.iter().map(|b| b[flat] as f64).collect();
        batch_stats(&sums, &self.batch_sizes).1
    }

    /// Batch-means mean and standard error of the probability of a set of bins.
    pub fn mass(&self, bins: impl Fn(usize) -> bool) -> (f64, f64) {
        let sums: Vec<f64> = self
            .batch_counts
            .iter()
            .map(|b| b.iter().enumerate().filter(|(k, _)| bins(*k)).map(|(_, c)| *c as f64).sum())
            .collect();
        batch_stats(&sums, &self.batch_sizes)
    }

    /// Rows of bin centers, count, density and `W`.
    pub fn write_csv<W: Write>(&self, w: W, log: &LogDensity) -> Result<(), SdeError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        header.extend(["count", "density", "W"].map(String::from));
        out.write_record(&header)?;
        for flat in 0..self.counts.len() {
            let mut rec: Vec<String> = self.center(flat).into_iter().map(format_float).collect();
            rec.push(self.counts[flat].to_string());
            rec.push(format_float(self.density(flat)));
            rec.push(log.w[flat].map(format_float).unwrap_or_default());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Occupation histogram of one long run after burn-in, over the domain box.
pub fn estimate_invariant_density(system: &SystemSpec, opts: &SimOptions, bins: &[usize]) -> Result<DensityEstimate, SdeError> {
    let d = system.dim();
    if d == 0 || d > 2 {
        return Err(SdeError::UnsupportedDimension(d));
    }
    if bins.len() != d || bins.contains(&0) {
        return Err(SdeError::InvalidOptions("one positive bin count per axis required".into()));
    }
    let domain = system.domain();
    let total_bins: usize = bins.iter().product();
    let mut est = DensityEstimate {
        eps: opts.eps,
        dt: opts.dt,
        burn_in_steps: opts.burn_in_steps(),
        bins: bins.to_vec(),
        lower: (0..d).map(|k| domain.lower(k)).collect(),
        upper: (0..d).map(|k| domain.upper(k)).collect(),
        counts: vec![0; total_bins],
        batch_counts: vec![vec![0; total_bins]; BATCHES],
        batch_sizes: vec![0; BATCHES],
        retained: 0,
        escapes: 0,
        reliable: true,
    };
    let mut batch_counts = std::mem::take(&mut est.batch_counts);
    let mut batch_sizes = std::mem::take(&mut est.batch_sizes);
    let mut escapes = 0;
    for_each_retained(system, opts, |batch, x| {
        batch_sizes[batch] += 1;
        match est.bin_of(x) {
            Some(k) => batch_counts[batch][k] += 1,
            None => escapes += 1,
        }
    })?;
    for b in &batch_counts {
        for (c, v) in est.counts.iter_mut().zip(b) {
            *c += v;
        }
    }
    est.retained = batch_sizes.iter().sum();
    est.escapes = escapes;
    est.batch_counts = batch_counts;
    est.batch_sizes = batch_sizes;
    est.reliable = est.escape_fraction() <= 0.05;
    if !est.reliable {
        log::warn!("escape fraction {:.3} exceeds 5%; density estimate unreliable", est.escape_fraction());
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDensity {
    pub eps: f64,
    /// `-eps^2 ln density` shifted to minimum 0; `None` on empty bins.
    pub w: Vec<Option<f64>>,
    /// First-order standard error `eps^2 se(p) / p`.
    pub w_se: Vec<Option<f64>>,
    pub bins: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn log_transform(est: &DensityEstimate) -> LogDensity {
    let e2 = est.eps * est.eps;
    let raw: Vec<Option<f64>> = (0..est.counts.len())
        .map(|k| (est.counts[k] > 0).then(|| -e2 * est.density(k).ln()))
        .collect();
    let min = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    LogDensity {
        eps: est.eps,
        w: raw.iter().map(|v| v.map(|v| v - min)).collect(),
        w_se: (0..est.counts.len())
            .map(|k| (est.counts[k] > 0).then(|| e2 * est.probability_se(k) / est.probability(k)))
            .collect(),
        bins: est.bins.clone(),
        lower: est.lower.clone(),
        upper: est.upper.clone(),
    }
}

impl LogDensity {
    /// Linear (bilinear in 2D) interpolation between bin centers; `None` if a needed bin is empty.
    pub fn at(&self, x: &[f64]) -> Option<(f64, f64)> {
        let d = self.bins.len();
        if x.len() != d {
            return None;
        }
        let mut base = Vec::with_capacity(d);
        let mut frac = Vec::with_capacity(d);
        for k in 0..d {
            let width = (self.upper[k] - self.lower[k]) / self.bins[k] as f64;
            let s = (x[k] - self.lower[k]) / width - 0.5;
            let top = (self.bins[k] - 1) as f64;
            if !(s >= 0.0 && s <= top) || self.bins[k] < 2 {
                return None;
            }
            let i = (s.floor() as usize).min(self.bins[k] - 2);
            base.push(i);
            frac.push(s - i as f64);
        }
        let (mut w, mut se) = (0.0, 0.0);
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0;
            let mut scale = 1;
            for k in 0..d {
                let up = corner >> k & 1 == 1;
                weight *= if up { frac[k] } else { 1.0 - frac[k] };
                flat += scale * (base[k] + usize::from(up));
                scale *= self.bins[k];
            }
            if weight == 0.0 {
                continue;
            }
            w += weight * self.w[flat]?;
            se += weight * self.w_se[flat].unwrap_or(f64::NAN);
        }
        Some((w, se))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallExponent {
    pub center: Vec<f64>,
    pub fraction: f64,
    pub standard_error: f64,
    /// `-eps^2 ln fraction`; with zero count, `-eps^2 ln(1 / retained)` as a lower bound.
    pub exponent: f64,
    pub lower_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallMeasure {
    pub eps: f64,
    pub rho1: f64,
    pub retained: u64,
    pub escapes: u64,
    pub balls: Vec<BallExponent>,
}

/// Fraction of retained samples in each ball of radius `rho1`.
pub fn ball_measure(system: &SystemSpec, opts: &SimOptions, centers: &[Vec<f64>], rho1: f64) -> Result<BallMeasure, SdeError> {
    for i in 0..centers.len() {
        for j in 0..i {
            let dist = centers[i].iter().zip(&centers[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist <= 2.0 * rho1 {
                return Err(SdeError::OverlappingBalls(j, i));
            }
        }
    }
    let r2 = rho1 * rho1;
    let mut sums = vec![[0.0f64; BATCHES]; centers.len()];
    let mut sizes = [0u64; BATCHES];
    let mut escapes = 0;
    let domain = system.domain();
    for_each_retained(system, opts, |batch, x| {
        sizes[batch] += 1;
        if !domain.contains(x) {
            escapes += 1;
        }
        for (c, s) in centers.iter().zip(sums.iter_mut()) {
            if c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= r2 {
                s[batch] += 1.0;
            }
        }
    })?;
    let retained: u64 = sizes.iter().sum();
    let e2 = opts.eps * opts.eps;
    let balls = centers
        .iter()
        .zip(&sums)
        .map(|(c, s)| {
            let (fraction, se) = batch_stats(s, &sizes);
            let zero = fraction == 0.0;
            BallExponent {
                center: c.clone(),
                fraction,
                standard_error: se,
                exponent: if zero { -e2 * (1.0 / retained as f64).ln() } else { -e2 * fraction.ln() },
                lower_bound: zero,
            }
        })
        .collect();
    Ok(BallMeasure {
        eps: opts.eps,
        rho1,
        retained,
        escapes,
        balls,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    /// Per run; `None` if censored at the cap.
    pub times: Vec<Option<f64>>,
    pub mean: f64,
    pub std_dev: f64,
    pub max: f64,
    pub censored: usize,
}

/// First entry times into the union of target balls over `n_runs` seeded runs.
pub fn hitting_time_stats(
    system: &SystemSpec,
    opts: &SimOptions,
    start: &[f64],
    targets: &[(Vec<f64>, f64)],
    n_runs: usize,
    time_cap: f64,
) -> Result<HittingStats, SdeError> {
    opts.validate()?;
    if n_runs == 0 {
        return Err(SdeError::InvalidOptions("n_runs must be positive".into()));
    }
    let inside = |x: &[f64]| {
        targets
            .iter()
            .any(|(c, r)| c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= r * r)
    };
    let max_steps = (time_cap / opts.dt).ceil() as u64;
    let times: Vec<Option<f64>> = crate::parallel::install(|| {
        (0..n_runs as u64)
            .into_par_iter()
            .map(|run| {
                if inside(start) {
                    return Ok(Some(0.0));
                }
                let mut em = EmStream::new(system, opts, start, run);
                for k in 1..=max_steps {
                    if inside(em.advance()?) {
                        return Ok(Some(k as f64 * opts.dt));
                    }
                }
                Ok(None)
            })
            .collect::<Result<Vec<_>, SdeError>>()
    })?;
    let hit: Vec<f64> = times.iter().flatten().copied().collect();
    if hit.is_empty() {
        return Err(SdeError::AllCensored(n_runs));
    }
    let n = hit.len() as f64;
    let mean = hit.iter().sum::<f64>() / n;
    let var = if hit.len() > 1 {
        hit.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(HittingStats {
        censored: times.len() - hit.len(),
        max: hit.iter().copied().fold(0.0, f64::max),
        mean,
        std_dev: var.sqrt(),
        times,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAverage {
    pub mean: f64,
    pub standard_error: f64,
    pub samples: u64,
}

/// Time average of `f` along the retained trajectory.
pub fn time_average<F: Fn(&[f64]) -> f64>(system: &SystemSpec, opts: &SimOptions, f: F) -> Result<TimeAverage, SdeError> {
    let mut sums = [0.0f64; BATCHES];
    let mut sizes = [0u64; BATCHES];
    for_each_retained(system, opts, |batch, x| {
        sums[batch] += f(x);
        sizes[batch] += 1;
    })?;
    let (mean, standard_error) = batch_stats(&sums, &sizes);
    Ok(TimeAverage {
        mean,
        standard_error,
        samples: sizes.iter().sum(),
    })
}

/// Time average of `L^eps f`; it vanishes for a stationary process.
pub fn generator_average(system: &SystemSpec, opts: &SimOptions, f: &dyn ScalarField) -> Result<TimeAverage, SdeError> {
    time_average(system, opts, |x| apply_generator(system, f, x, opts.eps))
}
