//! Monte Carlo ground truth: exact joint-Gaussian shadowing over Euclidean
//! inter-point distances, i.i.d. Rician multipath, first-crossing statistics
//! and Kolmogorov-Smirnov distances.
//!
//! Random streams: `ChaCha8Rng::seed_from_u64(seed)` with `set_stream(trial)`
//! (rand_chacha 0.9), normals from `rand_distr::StandardNormal`. Results are
//! independent of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{path_loss_point, shadowing_cov, ChannelParams, Multipath};
use crate::error::{invalid, FpdError, Result};
use crate::geometry::DiscretizedPath;
use crate::multipath::FirstPassagePmf;
use crate::volterra::FpdDensity;

/// Seed offset for the bridge-crossing uniforms, so discrete results do not
/// depend on whether bridge monitoring is requested.
const BRIDGE_SEED_XOR: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conditioning {
    /// Keep trials with `Gamma(0) < gamma_th`.
    BelowThreshold,
    /// Keep trials with `Gamma(0) < gamma_th - eps_db`.
    BelowThresholdMargin { eps_db: f64 },
}

impl Conditioning {
    fn limit(&self, p: &ChannelParams) -> f64 {
        match *self {
            Self::BelowThreshold => p.gamma_th,
            Self::BelowThresholdMargin { eps_db } => p.gamma_th - eps_db,
        }
    }
}

/// Where a crossing is detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    /// Only at the path samples.
    #[default]
    Discrete,
    /// Also between samples, with the Brownian-bridge crossing probability
    /// `exp(-2 (c - x)(c - y) / (B delta_d))`; approximates continuous monitoring.
    BrownianBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Number of attempted trials (before rejection on the start condition).
    pub trials: usize,
    pub seed: u64,
    pub horizon_steps: usize,
    pub conditioning: Conditioning,
    #[serde(default)]
    pub monitoring: Monitoring,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 || self.horizon_steps < 1 {
            return Err(invalid("trials and horizon_steps must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of one attempted trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub accepted: bool,
    /// First step at or above threshold (discrete monitoring).
    pub discrete_step: Option<usize>,
    /// First step whose preceding interval or sample crosses (bridge monitoring).
    pub bridge_step: Option<usize>,
}

/// One row of the raw-trials dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialCsvRow {
    pub trial: usize,
    pub crossing_step: Option<usize>,
    pub crossing_distance_m: Option<f64>,
    pub censored: bool,
}

impl TrialRecord {
    /// `None` for rejected trials.
    pub fn csv_row(&self, step: f64, monitoring: Monitoring) -> Option<TrialCsvRow> {
        if !self.accepted {
            return None;
        }
        let k = match monitoring {
            Monitoring::Discrete => self.discrete_step,
            Monitoring::BrownianBridge => self.bridge_step,
        };
        Some(TrialCsvRow {
            trial: self.trial,
            crossing_step: k,
            crossing_distance_m: k.map(|k| step * k as f64),
            censored: k.is_none(),
        })
    }
}

/// Empirical first-passage law from accepted trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalFpd {
    /// One per connected trial, in trial order.
    pub crossing_distances: Vec<f64>,
    pub censored_count: usize,
    pub accepted: usize,
    pub attempts: usize,
    pub step: f64,
    sorted: Vec<f64>,
}

impl EmpiricalFpd {
    fn new(crossing_distances: Vec<f64>, censored_count: usize, attempts: usize, step: f64) -> Self {
        let mut sorted = crossing_distances.clone();
        sorted.sort_by(f64::total_cmp);
        let accepted = crossing_distances.len() + censored_count;
        Self { crossing_distances, censored_count, accepted, attempts, step, sorted }
    }

    /// From raw crossing distances (`None` for censored), e.g. for synthetic tests.
    pub fn from_samples(samples: &[Option<f64>], step: f64) -> Self {
        let crossings: Vec<f64> = samples.iter().flatten().copied().collect();
        let censored = samples.len() - crossings.len();
        Self::new(crossings, censored, samples.len(), step)
    }

    /// `#{crossing <= d} / accepted`, with a small tolerance on grid-aligned distances.
    pub fn cdf(&self, d: f64) -> f64 {
        if self.accepted == 0 {
            return 0.0;
        }
        let tol = 1e-9 * (1.0 + d.abs());
        self.sorted.partition_point(|&x| x <= d + tol) as f64 / self.accepted as f64
    }

    pub fn mean_crossing_or_horizon(&self, horizon: f64) -> f64 {
        (self.crossing_distances.iter().sum::<f64>() + horizon * self.censored_count as f64) / self.accepted.max(1) as f64
    }
}

/// Analytic first-passage CDF on its own grid.
pub trait AnalyticCdf {
    fn cdf_grid(&self) -> (Vec<f64>, Vec<f64>);
}

impl AnalyticCdf for FpdDensity {
    fn cdf_grid(&self) -> (Vec<f64>, Vec<f64>) {
        (self.distances.clone(), self.cdf.clone())
    }
}

impl AnalyticCdf for FirstPassagePmf {
    fn cdf_grid(&self) -> (Vec<f64>, Vec<f64>) {
        (self.distances.clone(), self.cdf())
    }
}

/// Sup-norm gap between the empirical and analytic CDF on the analytic grid.
pub fn ks_distance<A: AnalyticCdf + ?Sized>(empirical: &EmpiricalFpd, analytic: &A) -> f64 {
    let (d, c) = analytic.cdf_grid();
    d.iter().zip(&c).map(|(&x, &f)| (empirical.cdf(x) - f).abs()).fold(0.0, f64::max)
}

/// Two-sample KS statistic; censored trials count as never crossing.
pub fn ks_two_sample(a: &EmpiricalFpd, b: &EmpiricalFpd) -> f64 {
    let mut pts: Vec<f64> = a.sorted.iter().chain(&b.sorted).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.iter().map(|&x| (a.cdf(x) - b.cdf(x)).abs()).fold(0.0, f64::max)
}

/// Lower-triangular factor of the shadowing covariance along a path, packed by rows.
#[derive(Debug, Clone)]
pub struct ShadowingFactor {
    n: usize,
    l: Vec<f64>,
}

impl ShadowingFactor {
    pub fn new(path: &DiscretizedPath, p: &ChannelParams) -> Result<Self> {
        p.validate()?;
        let pts = path.points();
        for i in 1..pts.len() {
            for j in 0..i {
                if pts[i].dist(pts[j]) <= 1e-12 {
                    return Err(FpdError::SingularCovariance(format!("path points {j} and {i} coincide")));
                }
            }
        }
        let cov = |i: usize, j: usize| shadowing_cov(p, pts[i].dist(pts[j]));
        match Self::factor(pts.len(), &cov, 0.0) {
            Ok(f) => Ok(f),
            Err(_) => Self::factor(pts.len(), &cov, 1e-10 * p.sigma_sh_sq),
        }
    }

    fn factor<F: Fn(usize, usize) -> f64>(n: usize, cov: &F, jitter: f64) -> Result<Self> {
        let mut l = vec![0.0; n * (n + 1) / 2];
        let off = |i: usize| i * (i + 1) / 2;
        for i in 0..n {
            let ri = off(i);
            for j in 0..=i {
                let rj = off(j);
                let dot = dot(&l[ri..ri + j], &l[rj..rj + j]);
                if i == j {
                    let v = cov(i, i) + jitter - dot;
                    if !(v > 0.0) {
                        return Err(FpdError::Factorization { row: i });
                    }
                    l[ri + i] = v.sqrt();
                } else {
                    l[ri + j] = (cov(i, j) - dot) / l[rj + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `L[i, 0..=i] . z[0..=i]`.
    pub fn row_dot(&self, i: usize, z: &[f64]) -> f64 {
        let r = i * (i + 1) / 2;
        dot(&self.l[r..=r + i], &z[..=i])
    }
}

/// Dot product with independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// One exact draw of the shadowing field at every path point.
pub fn sample_shadowing(path: &DiscretizedPath, p: &ChannelParams, seed: u64) -> Result<Vec<f64>> {
    let f = ShadowingFactor::new(path, p)?;
    Ok(draw_field(&f, &mut trial_rng(seed, 0)))
}

fn draw_field(f: &ShadowingFactor, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..f.len()).map(|_| rng.sample(StandardNormal)).collect();
    (0..f.len()).map(|i| f.row_dot(i, &z)).collect()
}

/// Unit-mean Rician power `|nu + s (X + iY)|^2` in dB.
fn rician_db<R: Rng>(k_ric: f64, rng: &mut R) -> f64 {
    let nu = (k_ric / (1.0 + k_ric)).sqrt();
    let s = (0.5 / (1.0 + k_ric)).sqrt();
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let re = nu + s * x;
    let im = s * y;
    10.0 * (re * re + im * im).log10()
}

pub fn sample_multipath_db(k_ric: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    if !(k_ric >= 0.0) {
        return Err(invalid("k_ric must be >= 0"));
    }
    let mut rng = trial_rng(seed, 0);
    Ok((0..count).map(|_| rician_db(k_ric, &mut rng)).collect())
}

/// Runs every trial and returns per-trial records in trial order.
pub fn run_trials(path: &DiscretizedPath, p: &ChannelParams, cfg: &McConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    p.validate()?;
    if cfg.horizon_steps >= path.len() {
        return Err(invalid(format!(
            "horizon of {} steps needs {} path points, path has {}",
            cfg.horizon_steps,
            cfg.horizon_steps + 1,
            path.len()
        )));
    }
    if cfg.monitoring == Monitoring::BrownianBridge && p.multipath != Multipath::None {
        return Err(invalid("bridge monitoring applies only without multipath"));
    }
    let n = cfg.horizon_steps + 1;
    let sub = path.truncated(n)?;
    let factor = ShadowingFactor::new(&sub, p)?;
    let gpl: Vec<f64> = sub.points().iter().map(|&q| path_loss_point(p, q)).collect::<Result<_>>()?;
    let limit = cfg.conditioning.limit(p);
    let bridge_scale = (2.0 * p.sigma_sh_sq / p.beta_sh) * path.delta_d();
    let bridge = cfg.monitoring == Monitoring::BrownianBridge;

    let records = (0..cfg.trials)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |z, trial| {
                let mut rng = trial_rng(cfg.seed, trial);
                let mut urng = trial_rng(cfg.seed ^ BRIDGE_SEED_XOR, trial);
                let channel = |k: usize, z: &mut [f64], rng: &mut ChaCha8Rng| -> f64 {
                    z[k] = rng.sample(StandardNormal);
                    let mut g = gpl[k] + factor.row_dot(k, z);
                    if let Multipath::Rician { k_ric } = p.multipath {
                        g += rician_db(k_ric, rng);
                    }
                    g
                };
                let g0 = channel(0, z, &mut rng);
                if g0 >= limit {
                    return TrialRecord { trial, accepted: false, discrete_step: None, bridge_step: None };
                }
                let mut prev = g0;
                let mut bridge_step = None;
                for k in 1..n {
                    let g = channel(k, z, &mut rng);
                    if g >= p.gamma_th {
                        return TrialRecord {
                            trial,
                            accepted: true,
                            discrete_step: Some(k),
                            bridge_step: bridge.then_some(bridge_step.unwrap_or(k)),
                        };
                    }
                    if bridge && bridge_step.is_none() {
                        let prob = (-2.0 * (p.gamma_th - prev) * (p.gamma_th - g) / bridge_scale).exp();
                        if urng.random::<f64>() < prob {
                            bridge_step = Some(k);
                        }
                    }
                    prev = g;
                }
                TrialRecord { trial, accepted: true, discrete_step: None, bridge_step }
            },
        )
        .collect::<Vec<_>>();
    Ok(records)
}

/// Turns trial records into the empirical law for the requested monitoring mode.
pub fn summarize(records: &[TrialRecord], step: f64, monitoring: Monitoring) -> Result<EmpiricalFpd> {
    let accepted = records.iter().filter(|r| r.accepted).count();
    if (accepted as f64) <= 1e-3 * records.len() as f64 {
        return Err(FpdError::RejectionRate { accepted, trials: records.len() });
    }
    let mut crossings = Vec::with_capacity(accepted);
    let mut censored = 0;
    for r in records.iter().filter(|r| r.accepted) {
        let hit = match monitoring {
            Monitoring::Discrete => r.discrete_step,
            Monitoring::BrownianBridge => r.bridge_step,
        };
        match hit {
            Some(k) => crossings.push(step * k as f64),
            None => censored += 1,
        }
    }
    Ok(EmpiricalFpd::new(crossings, censored, records.len(), step))
}

pub fn empirical_fpd(path: &DiscretizedPath, p: &ChannelParams, cfg: &McConfig) -> Result<EmpiricalFpd> {
    let records = run_trials(path, p, cfg)?;
    summarize(&records, path.delta_d(), cfg.monitoring)
}
