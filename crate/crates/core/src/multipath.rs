//! First-passage step distribution with i.i.d. per-step multipath, through the
//! recursion on `J_k(gamma_sh)`, the joint density of the step-`k` shadowing
//! value and the event that every earlier channel sample stayed below threshold.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::channel::{ChannelParams, Multipath, PathLossProfile, RicianCdfTable};
use crate::error::{invalid, FpdError, Result};
use crate::special::{norm_cdf, normal_pdf};

/// Samples on a uniform shadowing-dB grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    pub gamma_lo: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.gamma_lo + self.step * i as f64
    }

    /// Cell-sum integral `step * sum(values)`.
    pub fn integral(&self) -> f64 {
        self.step * self.values.iter().sum::<f64>()
    }

    /// Catmull-Rom value at `x`, zero outside the grid.
    fn interp(&self, x: f64) -> f64 {
        let t = (x - self.gamma_lo) / self.step;
        let m = self.values.len() as isize;
        if t < -1.0 || t > m as f64 {
            return 0.0;
        }
        let i = t.floor() as isize;
        let u = t - i as f64;
        let at = |k: isize| if (0..m).contains(&k) { self.values[k as usize] } else { 0.0 };
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        let v = p1
            + 0.5
                * u
                * (p2 - p0 + u * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + u * (3.0 * (p1 - p2) + p3 - p0)));
        v.max(0.0)
    }
}

/// Grid and start-event settings for the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecursionConfig {
    pub m_points: usize,
    /// Grid spans `[-c sigma, c sigma]`.
    pub span_sigmas: f64,
    /// Start event is `Gamma(0) < gamma_th - start_margin_db`.
    pub start_margin_db: f64,
}

impl Default for RecursionConfig {
    fn default() -> Self {
        Self { m_points: 4096, span_sigmas: 8.0, start_margin_db: 0.0 }
    }
}

/// First-passage step probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstPassagePmf {
    pub step: f64,
    /// `d_k = k * step`, `k = 1..=N`.
    pub distances: Vec<f64>,
    pub pmf: Vec<f64>,
    /// Conditional survival, `k = 0..=N` (entry 0 is 1).
    pub survival: Vec<f64>,
}

impl FirstPassagePmf {
    /// `Pr(K <= k)` at `d_k`, `k = 1..=N`.
    pub fn cdf(&self) -> Vec<f64> {
        self.survival[1..].iter().map(|s| 1.0 - s).collect()
    }

    /// Probability of no crossing within the horizon.
    pub fn residual(&self) -> f64 {
        *self.survival.last().unwrap_or(&1.0)
    }

    /// `sum d_k pmf_k + d_max * residual`.
    pub fn expected_distance(&self) -> f64 {
        let d_max = self.distances.last().copied().unwrap_or(0.0);
        self.distances.iter().zip(&self.pmf).map(|(d, p)| d * p).sum::<f64>() + d_max * self.residual()
    }
}

/// CDF of the multipath term in dB.
#[derive(Debug, Clone)]
enum MpCdf {
    Step,
    Rician(RicianCdfTable),
}

/// `F_MP(c - gamma_i)` on the grid; the unit step uses the fraction of each cell below `c`.
fn threshold_weights(mp: &MpCdf, c: f64, grid_lo: f64, step: f64, m: usize, out: &mut [f64]) {
    match mp {
        MpCdf::Step => {
            for (i, w) in out.iter_mut().enumerate().take(m) {
                let cell_lo = grid_lo + step * (i as f64 - 0.5);
                *w = ((c - cell_lo) / step).clamp(0.0, 1.0);
            }
        }
        MpCdf::Rician(t) => {
            for (i, w) in out.iter_mut().enumerate().take(m) {
                *w = t.cdf(c - (grid_lo + step * i as f64));
            }
        }
    }
}

fn mp_cdf(p: &ChannelParams) -> MpCdf {
    match p.multipath {
        Multipath::None => MpCdf::Step,
        Multipath::Rician { k_ric } => MpCdf::Rician(RicianCdfTable::new(k_ric)),
    }
}

fn grid_for(p: &ChannelParams, cfg: &RecursionConfig) -> Result<(f64, f64)> {
    if cfg.m_points < 16 {
        return Err(invalid("m_points must be >= 16"));
    }
    if !(cfg.span_sigmas >= 8.0) {
        return Err(invalid("grid must span at least 8 sigma on each side"));
    }
    let lo = -cfg.span_sigmas * p.sigma_sh();
    Ok((lo, -2.0 * lo / (cfg.m_points - 1) as f64))
}

fn init_with(p: &ChannelParams, mp: &MpCdf, gamma_pl_0: f64, cfg: &RecursionConfig) -> Result<GridFunction> {
    let (lo, step) = grid_for(p, cfg)?;
    let m = cfg.m_points;
    let s = p.sigma_sh();
    let c = p.gamma_th - cfg.start_margin_db - gamma_pl_0;
    let values = match mp {
        // Cell averages of the normal density cut at c, so the cell sum is exact.
        MpCdf::Step => (0..m)
            .map(|i| {
                let a = lo + step * (i as f64 - 0.5);
                let b = (a + step).min(c);
                if b <= a {
                    0.0
                } else {
                    (norm_cdf(b / s) - norm_cdf(a / s)) / step
                }
            })
            .collect(),
        MpCdf::Rician(t) => (0..m)
            .map(|i| {
                let g = lo + step * i as f64;
                t.cdf(c - g) * normal_pdf(g, 0.0, p.sigma_sh_sq)
            })
            .collect(),
    };
    Ok(GridFunction { gamma_lo: lo, step, values })
}

/// `J_0(gamma) = F_MP(gamma_th - margin - gamma_pl(0) - gamma) phi(gamma / sigma) / sigma`.
pub fn init_j0(p: &ChannelParams, gamma_pl_0: f64, cfg: &RecursionConfig) -> Result<GridFunction> {
    p.validate()?;
    init_with(p, &mp_cdf(p), gamma_pl_0, cfg)
}

/// Gaussian convolution on a fixed grid through a cached kernel spectrum.
struct Convolver {
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

/// Gaussian taps `k = -half..=half` normalized to unit sum.
fn gaussian_taps(std: f64, step: f64) -> Vec<f64> {
    if std <= 0.0 {
        return vec![1.0];
    }
    let half = (10.0 * std / step).ceil() as usize;
    let mut taps: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let x = (k as f64 - half as f64) * step;
            (-0.5 * x * x / (std * std)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

impl Convolver {
    fn new(m: usize, std: f64, step: f64) -> Self {
        let taps = gaussian_taps(std, step);
        let half = taps.len() / 2;
        let len = (m + 2 * half).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut spectrum = vec![Complex::new(0.0, 0.0); len];
        // tap k sits at index (k - half) mod len
        for (k, &t) in taps.iter().enumerate() {
            let idx = (k + len - half) % len;
            spectrum[idx].re = t / len as f64;
        }
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let mut scratch = vec![Complex::new(0.0, 0.0); scratch_len];
        fwd.process_with_scratch(&mut spectrum, &mut scratch);
        Self { m, fwd, inv, spectrum, buf: vec![Complex::new(0.0, 0.0); len], scratch }
    }

    fn apply(&mut self, input: &[f64], out: &mut [f64]) {
        self.buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &v) in self.buf.iter_mut().zip(input) {
            b.re = v;
        }
        self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (b, s) in self.buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, b) in out.iter_mut().zip(&self.buf).take(self.m) {
            *o = b.re;
        }
    }
}

/// Direct `O(M * taps)` convolution with the same taps; reference for the FFT path.
pub fn convolve_direct(input: &[f64], std: f64, step: f64) -> Vec<f64> {
    let taps = gaussian_taps(std, step);
    let half = taps.len() as isize / 2;
    let m = input.len() as isize;
    (0..m)
        .map(|i| {
            taps.iter()
                .enumerate()
                .map(|(k, t)| {
                    let j = i - (k as isize - half);
                    if (0..m).contains(&j) {
                        t * input[j as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

/// FFT convolution with the same taps as [`convolve_direct`].
pub fn convolve_fft(input: &[f64], std: f64, step: f64) -> Vec<f64> {
    let mut c = Convolver::new(input.len(), std, step);
    let mut out = vec![0.0; input.len()];
    c.apply(input, &mut out);
    out
}

/// Propagates `J_k` one step of correlation `rho`.
struct Stepper {
    mp: MpCdf,
    rho: f64,
    conv: Convolver,
    scaled: Vec<f64>,
    smoothed: Vec<f64>,
    weights: Vec<f64>,
    /// Edge mass is judged against at least this total (grid-sum units).
    mass_floor: f64,
}

impl Stepper {
    fn new(p: &ChannelParams, mp: MpCdf, rho: f64, m: usize, step: f64) -> Self {
        let std = p.sigma_sh() * (1.0 - rho * rho).max(0.0).sqrt();
        Self {
            mp,
            rho,
            conv: Convolver::new(m, std, step),
            scaled: vec![0.0; m],
            smoothed: vec![0.0; m],
            weights: vec![0.0; m],
            mass_floor: 0.0,
        }
    }

    fn step(&mut self, p: &ChannelParams, gamma_pl_next: f64, j: &GridFunction) -> Result<GridFunction> {
        let m = j.m();
        for i in 0..m {
            self.scaled[i] = j.interp(j.gamma(i) / self.rho) / self.rho;
        }
        self.conv.apply(&self.scaled, &mut self.smoothed);
        threshold_weights(&self.mp, p.gamma_th - gamma_pl_next, j.gamma_lo, j.step, m, &mut self.weights);
        let values: Vec<f64> = self.smoothed.iter().zip(&self.weights).map(|(s, w)| (s * w).max(0.0)).collect();
        let out = GridFunction { gamma_lo: j.gamma_lo, step: j.step, values };
        check_aliasing(&out, self.mass_floor)?;
        Ok(out)
    }
}

fn check_aliasing(j: &GridFunction, mass_floor: f64) -> Result<()> {
    let band = (j.m() / 64).max(1);
    let total: f64 = j.values.iter().sum();
    let edge: f64 = j.values[..band].iter().chain(&j.values[j.m() - band..]).sum();
    if total > 0.0 && edge > 1e-8 * total.max(mass_floor) {
        return Err(FpdError::Aliasing { edge_mass: edge * j.step, total: total * j.step });
    }
    Ok(())
}

/// One recursion step: `J_{k+1}(gamma) = F_MP(gamma_th - gamma_pl_next - gamma) (G * J~_k)(gamma)`
/// with `J~_k(u) = J_k(u/rho)/rho` and `G` Gaussian of std `sigma sqrt(1 - rho^2)`.
pub fn recursion_step(p: &ChannelParams, gamma_pl_next: f64, rho: f64, j_k: &GridFunction) -> Result<GridFunction> {
    p.validate()?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(invalid("rho must lie in (0, 1]"));
    }
    Stepper::new(p, mp_cdf(p), rho, j_k.m(), j_k.step).step(p, gamma_pl_next, j_k)
}

/// Unconditional `Pr(Gamma_0..Gamma_k < gamma_th)` for `k = 0..=n` (start event
/// shifted by the configured margin). Stops early once the ratio to the first
/// entry falls below `1e-12`, padding with zeros.
pub fn survival_probability(
    p: &ChannelParams,
    prof: &PathLossProfile,
    step: f64,
    n: usize,
    cfg: &RecursionConfig,
) -> Result<Vec<f64>> {
    p.validate()?;
    if !(step > 0.0) {
        return Err(invalid("step must be > 0"));
    }
    let mp = mp_cdf(p);
    let mut j = init_with(p, &mp, prof.at(p, 0.0)?.value, cfg)?;
    let mut out = Vec::with_capacity(n + 1);
    let s0 = j.integral();
    out.push(s0);
    if s0 < 1e-300 {
        return Err(FpdError::ConditioningUnderflow(s0));
    }
    let mut stepper = Stepper::new(p, mp, p.rho(step), j.m(), j.step);
    // Once survival is tiny, FFT round-off alone fills the edge band.
    stepper.mass_floor = 1e-4 * s0 / j.step;
    for k in 1..=n {
        j = stepper.step(p, prof.at(p, step * k as f64)?.value, &j)?;
        let s = j.integral();
        out.push(s);
        if s / s0 < 1e-12 {
            out.resize(n + 1, 0.0);
            break;
        }
    }
    Ok(out)
}

/// `Pr(K = k)` for the first step `k` at which the channel reaches threshold.
pub fn first_passage_pmf(
    p: &ChannelParams,
    prof: &PathLossProfile,
    step: f64,
    n: usize,
    cfg: &RecursionConfig,
) -> Result<FirstPassagePmf> {
    if n < 1 {
        return Err(invalid("need at least one step"));
    }
    let raw = survival_probability(p, prof, step, n, cfg)?;
    let s0 = raw[0];
    // Nested events: clamp round-off so survival is nonincreasing.
    let mut survival = Vec::with_capacity(n + 1);
    let mut prev = 1.0f64;
    for s in &raw {
        let v = (s / s0).min(prev).max(0.0);
        survival.push(v);
        prev = v;
    }
    let pmf = survival.windows(2).map(|w| w[0] - w[1]).collect();
    Ok(FirstPassagePmf { step, distances: (1..=n).map(|k| step * k as f64).collect(), pmf, survival })
}
