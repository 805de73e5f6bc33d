//! First-passage distance densities (no multipath) from second-kind Volterra
//! equations, solved by Simpson marching on a uniform distance grid.
//!
//! Fixed start: `g(d) = -2 Psi[d | gamma0, 0] + 2 int_0^d g(l) Psi[d | gamma_th, l] dl`.
//! Upcrossing start (Gamma(0) < gamma_th - eps): same kernel, forcing `Psi_u`.

use std::sync::OnceLock;

use serde::Serialize;

use crate::channel::{marginal_pdf, transition_moments, ChannelParams, PathLossProfile, PathLossSample};
use crate::error::{invalid, FpdError, Result};
use crate::special::{gauss_legendre, norm_cdf, normal_pdf};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolterraGrid {
    pub d_max: f64,
    pub n_steps: usize,
    pub h: f64,
    pub distances: Vec<f64>,
}

impl VolterraGrid {
    pub fn new(d_max: f64, n_steps: usize) -> Result<Self> {
        if !(d_max > 0.0 && d_max.is_finite()) {
            return Err(invalid(format!("d_max must be > 0, got {d_max}")));
        }
        if n_steps < 2 || n_steps % 2 != 0 {
            return Err(invalid(format!("n_steps must be even and >= 2, got {n_steps}")));
        }
        let h = d_max / n_steps as f64;
        let distances = (0..=n_steps).map(|k| h * k as f64).collect();
        Ok(Self { d_max, n_steps, h, distances })
    }

    /// Grid with step close to `h` (rounded so the step count is even).
    pub fn with_step(d_max: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(invalid("grid step must be > 0"));
        }
        let n = ((d_max / h / 2.0).round() as usize * 2).max(2);
        Self::new(d_max, n)
    }
}

/// Density and cumulative distribution of a first-passage distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpdDensity {
    pub distances: Vec<f64>,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
    pub total_mass: f64,
}

impl FpdDensity {
    pub const NEG_TOL: f64 = 1e-8;

    /// Builds the distribution from raw pdf samples (starting at `d = 0`),
    /// clipping round-off negatives and integrating by the trapezoid rule.
    pub fn from_pdf(distances: Vec<f64>, raw_pdf: &[f64], strict: bool) -> Result<Self> {
        let mut pdf = Vec::with_capacity(raw_pdf.len());
        for (&d, &g) in distances.iter().zip(raw_pdf) {
            if strict && g < -Self::NEG_TOL {
                return Err(FpdError::NegativeDensity { distance: d, value: g });
            }
            pdf.push(g.max(0.0));
        }
        let mut cdf = vec![0.0; pdf.len()];
        for k in 1..pdf.len() {
            cdf[k] = cdf[k - 1] + 0.5 * (distances[k] - distances[k - 1]) * (pdf[k] + pdf[k - 1]);
        }
        let total_mass = *cdf.last().unwrap_or(&0.0);
        if strict && total_mass > 1.0 + 1e-6 {
            return Err(invalid(format!("total mass {total_mass} exceeds 1")));
        }
        Ok(Self { distances, pdf, cdf, total_mass })
    }

    /// Linear interpolation of the cdf, constant beyond the grid.
    pub fn cdf_at(&self, d: f64) -> f64 {
        let n = self.distances.len();
        if d <= self.distances[0] {
            return self.cdf[0];
        }
        if d >= self.distances[n - 1] {
            return self.cdf[n - 1];
        }
        let i = self.distances.partition_point(|&x| x <= d) - 1;
        let u = (d - self.distances[i]) / (self.distances[i + 1] - self.distances[i]);
        self.cdf[i] + u * (self.cdf[i + 1] - self.cdf[i])
    }

    /// `int_0^{d_max} d g(d) dd + d_max (1 - total_mass)`.
    pub fn expected_distance(&self) -> f64 {
        let n = self.distances.len();
        let mut acc = 0.0;
        for k in 1..n {
            let (a, b) = (self.distances[k - 1], self.distances[k]);
            acc += 0.5 * (b - a) * (a * self.pdf[k - 1] + b * self.pdf[k]);
        }
        acc + self.distances[n - 1] * (1.0 - self.total_mass).max(0.0)
    }
}

/// Drift `A` and diffusion `B` of the channel power as a diffusion in `d`.
pub fn drift_diffusion(p: &ChannelParams, gamma: f64, gamma_pl: f64, gamma_pl_prime: f64) -> (f64, f64) {
    (gamma_pl_prime - (gamma - gamma_pl) / p.beta_sh, 2.0 * p.sigma_sh_sq / p.beta_sh)
}

/// Density of `Gamma(d)` at `gamma` given `Gamma(l) = eta`.
pub fn transition_pdf(p: &ChannelParams, gpl_l: f64, gpl_d: f64, eta: f64, gap: f64, gamma: f64) -> f64 {
    let (mean, var) = transition_moments(p, gpl_l, gpl_d, eta, gap);
    if var <= 0.0 {
        return 0.0;
    }
    normal_pdf(gamma, mean, var)
}

/// Kernel from the path loss at `l`, the increment `diff = gamma_PL(d) - gamma_PL(l)`
/// and the slope at `d`.
///
/// The bracket is rewritten with `coth x - 1/sinh x = tanh(x/2)` and the
/// transition offset with `expm1` so both stay accurate as `d - l -> 0`.
fn psi_core(p: &ChannelParams, gpl_l: f64, diff: f64, slope_d: f64, eta: f64, gap: f64) -> f64 {
    let b = p.beta_sh;
    let x = gap / b;
    let a = p.gamma_th - gpl_l - diff;
    let bracket = -0.5 * slope_d + (-a * (0.5 * x).tanh() + (diff + (eta - p.gamma_th)) / x.sinh()) / (2.0 * b);
    // gamma_th - E[Gamma(d) | Gamma(l) = eta]
    let offset = (p.gamma_th - eta) - (eta - gpl_l) * (-x).exp_m1() - diff;
    let var = -p.sigma_sh_sq * (-2.0 * x).exp_m1();
    if var <= 0.0 {
        return 0.0;
    }
    bracket * normal_pdf(offset, 0.0, var)
}

/// `Psi[d | eta, l]` for `d > l >= 0`.
pub fn psi_kernel(p: &ChannelParams, prof: &PathLossProfile, d: f64, eta: f64, l: f64) -> Result<f64> {
    if !(d > l && l >= 0.0) {
        return Err(invalid(format!("kernel needs d > l >= 0, got d = {d}, l = {l}")));
    }
    let at_l = prof.at(p, l)?;
    let at_d = prof.at(p, d)?;
    let diff = prof.difference(p, l, d)?;
    Ok(psi_core(p, at_l.value, diff, at_d.slope, eta, d - l))
}

/// `Pr(Gamma(0) < gamma_th - eps)` without multipath.
pub fn start_probability(p: &ChannelParams, gpl_0: f64, eps: f64) -> f64 {
    norm_cdf((p.gamma_th - eps - gpl_0) / p.sigma_sh())
}

fn psi_u_samples(p: &ChannelParams, gpl_0: f64, at_d: PathLossSample, d: f64, eps: f64, prob: f64) -> f64 {
    let b = p.beta_sh;
    let s2 = p.sigma_sh_sq;
    let e = (-d / b).exp();
    let a = p.gamma_th - at_d.value;
    let start = p.gamma_th - eps;
    let var = -(-2.0 * d / b).exp_m1();
    let upsilon = (start - gpl_0 - e * a) / (2.0 * s2 * var).sqrt();
    let first = -2.0 * s2 / b * e * marginal_pdf(p, gpl_0, start) * transition_pdf(p, gpl_0, at_d.value, start, d, p.gamma_th);
    // 1 + erf(u) = erfc(-u)
    let one_plus_erf = 2.0 * norm_cdf(upsilon * std::f64::consts::SQRT_2);
    let second = 0.5 * marginal_pdf(p, at_d.value, p.gamma_th) * one_plus_erf * (-at_d.slope - a / b);
    (first + second) / (2.0 * prob)
}

/// Upcrossing forcing `Psi_u^(eps)[d]` for `d > 0`.
pub fn psi_u_kernel(p: &ChannelParams, prof: &PathLossProfile, d: f64, eps: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(invalid("upcrossing kernel is undefined at d = 0"));
    }
    if !(eps > 0.0) {
        return Err(invalid("eps must be > 0"));
    }
    let gpl_0 = prof.at(p, 0.0)?.value;
    let prob = start_probability(p, gpl_0, eps);
    if prob < 1e-12 {
        return Err(FpdError::ConditioningUnderflow(prob));
    }
    Ok(psi_u_samples(p, gpl_0, prof.at(p, d)?, d, eps, prob))
}

/// Reusable marching solver over one (channel, path, grid). A single solve
/// evaluates kernel rows as it marches; the packed kernel
/// `w_{k,j} Psi[d_k | gamma_th, d_j]` is tabulated on first use by solvers
/// that march repeatedly.
#[derive(Debug, Clone)]
pub struct VolterraSolver {
    p: ChannelParams,
    grid: VolterraGrid,
    samples: Vec<PathLossSample>,
    packed: OnceLock<Vec<f64>>,
    sign: f64,
    strict: bool,
}

impl VolterraSolver {
    pub const DIVERGENCE: f64 = 1e3;

    pub fn new(p: &ChannelParams, prof: &PathLossProfile, grid: VolterraGrid) -> Result<Self> {
        p.validate()?;
        if let Some(max) = prof.max_distance() {
            if grid.d_max > max * (1.0 + 1e-12) + 1e-9 {
                return Err(invalid(format!("grid horizon {} m exceeds path length {max} m", grid.d_max)));
            }
        }
        let samples = prof.sample(p, &grid.distances)?;
        Ok(Self { p: *p, grid, samples, packed: OnceLock::new(), sign: 1.0, strict: true })
    }

    /// Weighted kernel row `k` (`j = 1..k-1`) into `out`; `w` is scratch of length `n + 1`.
    fn kernel_row(&self, k: usize, w: &mut [f64], out: &mut Vec<f64>) {
        quadrature_weights(k, self.grid.h, w);
        let sk = self.samples[k];
        out.clear();
        out.extend((1..k).map(|j| {
            let sj = self.samples[j];
            w[j] * psi_core(&self.p, sj.value, sk.value - sj.value, sk.slope, self.p.gamma_th, self.grid.h * (k - j) as f64)
        }));
    }

    /// Row `k` starts at `(k-1)(k-2)/2`.
    fn packed(&self) -> &[f64] {
        self.packed.get_or_init(|| {
            let n = self.grid.n_steps;
            let mut all = Vec::with_capacity(n.saturating_sub(1) * n.saturating_sub(2) / 2 + n);
            let mut w = vec![0.0; n + 1];
            let mut row = Vec::with_capacity(n);
            for k in 2..=n {
                self.kernel_row(k, &mut w, &mut row);
                all.extend_from_slice(&row);
            }
            all
        })
    }

    pub fn grid(&self) -> &VolterraGrid {
        &self.grid
    }

    /// Negates the kernel and disables the sign checks. Exists only as a
    /// negative control for validation tooling.
    #[doc(hidden)]
    pub fn corrupt_kernel_sign(mut self) -> Self {
        self.sign = -self.sign;
        self.strict = false;
        self
    }

    /// `Psi[d_k | gamma0, 0]` at every grid node (zero at `d = 0`).
    pub fn forcing_fixed(&self, gamma0: f64) -> Vec<f64> {
        let g0 = self.samples[0].value;
        let mut f = vec![0.0; self.grid.n_steps + 1];
        for k in 1..=self.grid.n_steps {
            let s = self.samples[k];
            f[k] = psi_core(&self.p, g0, s.value - g0, s.slope, gamma0, self.grid.distances[k]);
        }
        f
    }

    pub fn forcing_upcrossing(&self, eps: f64) -> Result<Vec<f64>> {
        if !(eps > 0.0) {
            return Err(invalid("eps must be > 0"));
        }
        let g0 = self.samples[0].value;
        let prob = start_probability(&self.p, g0, eps);
        if prob < 1e-12 {
            return Err(FpdError::ConditioningUnderflow(prob));
        }
        let mut f = vec![0.0; self.grid.n_steps + 1];
        for k in 1..=self.grid.n_steps {
            f[k] = psi_u_samples(&self.p, g0, self.samples[k], self.grid.distances[k], eps, prob);
        }
        Ok(f)
    }

    fn march(&self, forcing: &[f64], packed: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.grid.n_steps;
        let mut g = vec![0.0; n + 1];
        let mut w = vec![0.0; n + 1];
        let mut scratch = Vec::with_capacity(n);
        for k in 1..=n {
            let row = match packed {
                Some(all) => {
                    let start = k.saturating_sub(1) * k.saturating_sub(2) / 2;
                    &all[start..start + k.saturating_sub(1)]
                }
                None => {
                    self.kernel_row(k, &mut w, &mut scratch);
                    &scratch[..]
                }
            };
            let conv: f64 = row.iter().zip(&g[1..k]).map(|(a, b)| a * b).sum();
            let v = -2.0 * forcing[k] + 2.0 * self.sign * conv;
            if !v.is_finite() || v.abs() > Self::DIVERGENCE {
                return Err(FpdError::Instability { distance: self.grid.distances[k], value: v });
            }
            g[k] = v;
        }
        Ok(g)
    }

    /// Solves for an arbitrary forcing vector on the grid.
    pub fn solve_with_forcing(&self, forcing: &[f64]) -> Result<FpdDensity> {
        if forcing.len() != self.grid.n_steps + 1 {
            return Err(invalid("forcing length must match the grid"));
        }
        let g = self.march(forcing, None)?;
        FpdDensity::from_pdf(self.grid.distances.clone(), &g, self.strict)
    }

    pub fn solve_fpd(&self, gamma0: f64) -> Result<FpdDensity> {
        if !(gamma0 < self.p.gamma_th) {
            return Err(invalid(format!("gamma0 {gamma0} must be below gamma_th {}", self.p.gamma_th)));
        }
        self.solve_with_forcing(&self.forcing_fixed(gamma0))
    }

    pub fn solve_upcrossing(&self, eps: f64) -> Result<FpdDensity> {
        self.solve_with_forcing(&self.forcing_upcrossing(eps)?)
    }

    /// Upcrossing density assembled as the `gamma0`-mixture of fixed-start
    /// densities, Gauss-Legendre over `[gamma_pl(0) - 8 sigma, gamma_th - eps]`.
    pub fn solve_mixture(&self, eps: f64, nodes: usize) -> Result<FpdDensity> {
        let g0 = self.samples[0].value;
        let prob = start_probability(&self.p, g0, eps);
        if prob < 1e-12 {
            return Err(FpdError::ConditioningUnderflow(prob));
        }
        let top = self.p.gamma_th - eps;
        let bottom = (g0 - 8.0 * self.p.sigma_sh()).min(top - 1e-6);
        let packed = self.packed();
        let mut acc = vec![0.0; self.grid.n_steps + 1];
        for (x, w) in gauss_legendre(nodes, bottom, top) {
            let zeta = w * marginal_pdf(&self.p, g0, x) / prob;
            let g = self.march(&self.forcing_fixed(x), Some(packed))?;
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += zeta * v;
            }
        }
        FpdDensity::from_pdf(self.grid.distances.clone(), &acc, self.strict)
    }
}

/// Weights for `int_0^{k h}` on nodes `0..=k`: composite Simpson for even `k`,
/// 3/8 rule on the first three cells plus Simpson for odd `k >= 3`,
/// trapezoid for `k = 1`.
fn quadrature_weights(k: usize, h: f64, w: &mut [f64]) {
    w[..=k].iter_mut().for_each(|x| *x = 0.0);
    let simpson = |w: &mut [f64], from: usize, to: usize| {
        for j in (from..to).step_by(2) {
            w[j] += h / 3.0;
            w[j + 1] += 4.0 * h / 3.0;
            w[j + 2] += h / 3.0;
        }
    };
    match k {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ if k % 2 == 0 => simpson(w, 0, k),
        _ => {
            for (j, c) in [1.0, 3.0, 3.0, 1.0].into_iter().enumerate() {
                w[j] += 3.0 * h / 8.0 * c;
            }
            simpson(w, 3, k);
        }
    }
}

pub fn solve_fpd(p: &ChannelParams, prof: &PathLossProfile, gamma0: f64, grid: VolterraGrid) -> Result<FpdDensity> {
    VolterraSolver::new(p, prof, grid)?.solve_fpd(gamma0)
}

pub fn solve_upcrossing_fpd(p: &ChannelParams, prof: &PathLossProfile, eps: f64, grid: VolterraGrid) -> Result<FpdDensity> {
    VolterraSolver::new(p, prof, grid)?.solve_upcrossing(eps)
}
