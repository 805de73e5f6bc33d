//! Channel model: path loss, correlated shadowing and Rician multipath.
//!
//! Channel power in dB at distance `d` along a path is
//! `Gamma(d) = gamma_PL(d) + Gamma_SH(d) + Gamma_MP(d)` with the operator at
//! the origin. Shadowing is a zero-mean Gaussian field with covariance
//! `sigma_sh^2 * exp(-|q1 - q2| / beta_sh)`; multipath is either absent or
//! the dB transform of a unit-mean Rician power variable.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_10, LOG10_E};

use crate::error::{invalid, FpdError, Result};
use crate::geometry::{DiscretizedPath, Point2};
use crate::special::{bessel_i0e, integrate, normal_pdf};

/// Log arguments (squared distances, m^2) below this are treated as the robot
/// sitting on the operator.
pub const GEOMETRY_FLOOR_M2: f64 = 1e-12;

/// Small-scale fading model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Multipath {
    #[default]
    None,
    /// Unit-mean Rician power with line-of-sight to scattered power ratio `k_ric`.
    Rician { k_ric: f64 },
}

/// All channel constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Path-loss intercept. Free input, defaults to 0 dB.
    #[serde(rename = "k_db", default)]
    pub k_db: f64,
    #[serde(rename = "n_pl")]
    pub n_pl: f64,
    #[serde(rename = "sigma_sh_sq_db2")]
    pub sigma_sh_sq: f64,
    #[serde(rename = "beta_sh_m")]
    pub beta_sh: f64,
    #[serde(default)]
    pub multipath: Multipath,
    #[serde(rename = "gamma_th_db")]
    pub gamma_th: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self::san_francisco()
    }
}

impl ChannelParams {
    /// Downtown San Francisco fit: `n_PL = 4.2`, `sigma^2 = 8.41 dB^2`,
    /// `beta = 12.92 m`, threshold -110 dB, no multipath, `K_dB = 0`.
    pub fn san_francisco() -> Self {
        Self {
            k_db: 0.0,
            n_pl: 4.2,
            sigma_sh_sq: 8.41,
            beta_sh: 12.92,
            multipath: Multipath::None,
            gamma_th: -110.0,
        }
    }

    pub fn with_multipath(mut self, multipath: Multipath) -> Self {
        self.multipath = multipath;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sh_sq > 0.0 && self.sigma_sh_sq.is_finite()) {
            return Err(invalid(format!("sigma_sh_sq must be > 0, got {}", self.sigma_sh_sq)));
        }
        if !(self.beta_sh > 0.0 && self.beta_sh.is_finite()) {
            return Err(invalid(format!("beta_sh must be > 0, got {}", self.beta_sh)));
        }
        if !(self.n_pl > 0.0 && self.n_pl.is_finite()) {
            return Err(invalid(format!("n_pl must be > 0, got {}", self.n_pl)));
        }
        if !self.k_db.is_finite() || !self.gamma_th.is_finite() {
            return Err(invalid("k_db and gamma_th must be finite"));
        }
        if let Multipath::Rician { k_ric } = self.multipath {
            if !(k_ric >= 0.0 && k_ric.is_finite()) {
                return Err(invalid(format!("k_ric must be >= 0, got {k_ric}")));
            }
        }
        Ok(())
    }

    pub fn sigma_sh(&self) -> f64 {
        self.sigma_sh_sq.sqrt()
    }

    /// One-step shadowing correlation `exp(-step / beta_sh)`.
    pub fn rho(&self, step: f64) -> f64 {
        (-step / self.beta_sh).exp()
    }
}

/// Straight-path geometry: start at distance `d_src` from the operator,
/// heading `theta_src` measured from the robot-to-operator direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StraightGeometry {
    #[serde(rename = "d_src_m")]
    pub d_src: f64,
    #[serde(rename = "theta_src_rad")]
    pub theta_src: f64,
}

impl StraightGeometry {
    pub fn new(d_src: f64, theta_src: f64) -> Result<Self> {
        let g = Self { d_src, theta_src };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_src > 0.0 && self.d_src.is_finite()) {
            return Err(invalid(format!("d_src must be > 0, got {}", self.d_src)));
        }
        if !(0.0..2.0 * std::f64::consts::PI).contains(&self.theta_src) {
            return Err(invalid(format!("theta_src must lie in [0, 2pi), got {}", self.theta_src)));
        }
        Ok(())
    }

    fn dist_sq(&self, d: f64) -> Result<f64> {
        let arg = self.d_src * self.d_src + d * d - 2.0 * self.d_src * d * self.theta_src.cos();
        if arg <= GEOMETRY_FLOOR_M2 {
            return Err(FpdError::DegenerateGeometry { distance_sq: arg });
        }
        Ok(arg)
    }

    /// Robot position after `d` meters, operator at the origin and the start on the +x axis.
    pub fn position(&self, d: f64) -> Point2 {
        // Heading is measured towards the operator, i.e. from the -x direction.
        let (s, c) = self.theta_src.sin_cos();
        Point2::new(self.d_src - d * c, -d * s)
    }
}

/// `gamma_PL(d) = K_dB - 5 n_PL log10(d_src^2 + d^2 - 2 d_src d cos(theta_src))`.
pub fn path_loss_straight(p: &ChannelParams, g: &StraightGeometry, d: f64) -> Result<f64> {
    let arg = g.dist_sq(d)?;
    Ok(p.k_db - 5.0 * p.n_pl * arg.log10())
}

/// Closed-form derivative of [`path_loss_straight`] with respect to `d`.
pub fn path_loss_derivative(p: &ChannelParams, g: &StraightGeometry, d: f64) -> Result<f64> {
    let arg = g.dist_sq(d)?;
    Ok(-10.0 * p.n_pl * LOG10_E * (d - g.d_src * g.theta_src.cos()) / arg)
}

/// Point form `K_dB - 10 n_PL log10 |q|`.
pub fn path_loss_point(p: &ChannelParams, q: Point2) -> Result<f64> {
    let arg = q.norm_sq();
    if arg <= GEOMETRY_FLOOR_M2 {
        return Err(FpdError::DegenerateGeometry { distance_sq: arg });
    }
    Ok(p.k_db - 5.0 * p.n_pl * arg.log10())
}

/// Path-loss value and arc-length derivative at one path sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossSample {
    pub value: f64,
    pub slope: f64,
}

/// Path loss at each discretized path point, with a numeric derivative
/// (central differences inside, second-order one-sided at the ends).
pub fn path_loss_along_path(p: &ChannelParams, path: &DiscretizedPath) -> Result<Vec<PathLossSample>> {
    let values = path
        .points()
        .iter()
        .map(|&q| path_loss_point(p, q))
        .collect::<Result<Vec<_>>>()?;
    let h = path.delta_d();
    let n = values.len();
    let slope = |i: usize| -> f64 {
        if i == 0 {
            (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h)
        } else {
            (values[i + 1] - values[i - 1]) / (2.0 * h)
        }
    };
    Ok((0..n)
        .map(|i| PathLossSample { value: values[i], slope: slope(i) })
        .collect())
}

/// Shadowing covariance `sigma_sh^2 exp(-dist / beta_sh)` (dB^2).
pub fn shadowing_cov(p: &ChannelParams, dist: f64) -> f64 {
    p.sigma_sh_sq * (-dist / p.beta_sh).exp()
}

/// Mean and variance of `Gamma(d)` given `Gamma(l) = eta`, `gap = d - l`.
pub fn transition_moments(p: &ChannelParams, gpl_l: f64, gpl_d: f64, eta: f64, gap: f64) -> (f64, f64) {
    let e = (-gap / p.beta_sh).exp();
    let var = -p.sigma_sh_sq * (-2.0 * gap / p.beta_sh).exp_m1();
    (gpl_d + e * (eta - gpl_l), var)
}

/// Density of `Gamma(d)` (no multipath) at `gamma`: normal with mean `gpl_d`, variance `sigma_sh^2`.
pub fn marginal_pdf(p: &ChannelParams, gpl_d: f64, gamma: f64) -> f64 {
    normal_pdf(gamma, gpl_d, p.sigma_sh_sq)
}

/// Unit-mean Rician power density
/// `(1+K) exp(-K - (1+K) z) I0(2 sqrt(z K (1+K)))`.
pub fn rician_pdf(k_ric: f64, z: f64) -> f64 {
    if z < 0.0 {
        return 0.0;
    }
    let x = 2.0 * (z * k_ric * (1.0 + k_ric)).sqrt();
    let root = k_ric.sqrt() - ((1.0 + k_ric) * z).sqrt();
    // exp(-K - (1+K) z + x) = exp(-root^2)
    (1.0 + k_ric) * (-root * root).exp() * bessel_i0e(x)
}

const RICIAN_REL_TOL: f64 = 1e-10;

/// CDF of `10 log10(Z)` for unit-mean Rician power `Z`, by adaptive quadrature.
pub fn rician_cdf_db(k_ric: f64, gamma_mp: f64) -> f64 {
    if gamma_mp == f64::NEG_INFINITY {
        return 0.0;
    }
    if gamma_mp == f64::INFINITY {
        return 1.0;
    }
    let z = 10f64.powf(gamma_mp / 10.0);
    if z == 0.0 {
        return 0.0;
    }
    // Bulk of the mass sits near z ~ 1 with width ~ 1/sqrt(K); split there.
    let width = 1.0 / (1.0 + k_ric).sqrt();
    let knee = 1.0 + 12.0 * width;
    let f = |t: f64| rician_pdf(k_ric, t);
    if z <= knee {
        let lower = integrate(f, 0.0, z, RICIAN_REL_TOL, 1e-300);
        lower.min(1.0)
    } else {
        // Upper tail is small: integrate it directly to keep relative accuracy near 1.
        let upper = integrate(f, z, z + 60.0 / (1.0 + k_ric) + 60.0 * width, RICIAN_REL_TOL, 1e-300);
        (1.0 - upper).max(0.0)
    }
}

/// Precomputed Rician CDF in dB for fast repeated lookups (cubic Hermite
/// between nodes using the exact density as the derivative).
#[derive(Debug, Clone)]
pub struct RicianCdfTable {
    k_ric: f64,
    lo: f64,
    step: f64,
    cdf: Vec<f64>,
    dcdf: Vec<f64>,
}

impl RicianCdfTable {
    pub const LO_DB: f64 = -80.0;
    pub const HI_DB: f64 = 25.0;
    pub const STEP_DB: f64 = 0.005;

    pub fn new(k_ric: f64) -> Self {
        let n = ((Self::HI_DB - Self::LO_DB) / Self::STEP_DB).round() as usize + 1;
        let lo = Self::LO_DB;
        let step = Self::STEP_DB;
        let node = |i: usize| lo + step * i as f64;
        let z_of = |g: f64| 10f64.powf(g / 10.0);
        let f = |t: f64| rician_pdf(k_ric, t);
        let mut cdf = Vec::with_capacity(n);
        let mut acc = rician_cdf_db(k_ric, lo);
        cdf.push(acc);
        for i in 1..n {
            acc += integrate(f, z_of(node(i - 1)), z_of(node(i)), RICIAN_REL_TOL, 1e-300);
            cdf.push(acc.min(1.0));
        }
        // Re-anchor the top against the directly computed tail to remove drift.
        let top = rician_cdf_db(k_ric, node(n - 1));
        let drift = cdf[n - 1] - top;
        if drift.abs() > 0.0 {
            for (i, c) in cdf.iter_mut().enumerate() {
                *c = (*c - drift * (i as f64 / (n - 1) as f64)).clamp(0.0, 1.0);
            }
        }
        let dcdf = (0..n)
            .map(|i| {
                let z = z_of(node(i));
                f(z) * z * LN_10 / 10.0
            })
            .collect();
        Self { k_ric, lo, step, cdf, dcdf }
    }

    pub fn k_ric(&self) -> f64 {
        self.k_ric
    }

    pub fn cdf(&self, gamma_mp: f64) -> f64 {
        let t = (gamma_mp - self.lo) / self.step;
        if t <= 0.0 {
            return rician_cdf_db(self.k_ric, gamma_mp);
        }
        let last = self.cdf.len() - 1;
        if t >= last as f64 {
            return 1.0;
        }
        let i = t.floor() as usize;
        let u = t - i as f64;
        let (y0, y1) = (self.cdf[i], self.cdf[i + 1]);
        let (m0, m1) = (self.dcdf[i] * self.step, self.dcdf[i + 1] * self.step);
        let u2 = u * u;
        let u3 = u2 * u;
        let v = (2.0 * u3 - 3.0 * u2 + 1.0) * y0
            + (u3 - 2.0 * u2 + u) * m0
            + (-2.0 * u3 + 3.0 * u2) * y1
            + (u3 - u2) * m1;
        v.clamp(0.0, 1.0)
    }
}

/// Deterministic path-loss profile along the traveled distance.
#[derive(Debug, Clone, PartialEq)]
pub enum PathLossProfile {
    Straight(StraightGeometry),
    /// Values and slopes sampled every `step` meters from `d = 0`.
    Tabulated { step: f64, values: Vec<f64>, slopes: Vec<f64> },
}

impl PathLossProfile {
    pub fn from_path(p: &ChannelParams, path: &DiscretizedPath) -> Result<Self> {
        let samples = path_loss_along_path(p, path)?;
        Ok(Self::Tabulated {
            step: path.delta_d(),
            values: samples.iter().map(|s| s.value).collect(),
            slopes: samples.iter().map(|s| s.slope).collect(),
        })
    }

    /// Longest distance the profile covers (`None` for unbounded straight paths).
    pub fn max_distance(&self) -> Option<f64> {
        match self {
            Self::Straight(_) => None,
            Self::Tabulated { step, values, .. } => Some(step * (values.len() - 1) as f64),
        }
    }

    /// Value and slope at distance `d` (linear interpolation between table nodes).
    pub fn at(&self, p: &ChannelParams, d: f64) -> Result<PathLossSample> {
        match self {
            Self::Straight(g) => Ok(PathLossSample {
                value: path_loss_straight(p, g, d)?,
                slope: path_loss_derivative(p, g, d)?,
            }),
            Self::Tabulated { step, values, slopes } => {
                let t = d / step;
                let last = values.len() - 1;
                if t < -1e-9 || t > last as f64 * (1.0 + 1e-12) + 1e-9 {
                    return Err(invalid(format!(
                        "distance {d} m outside tabulated path (length {} m)",
                        step * last as f64
                    )));
                }
                let t = t.clamp(0.0, last as f64);
                let i = (t.floor() as usize).min(last.saturating_sub(1));
                let u = t - i as f64;
                let lerp = |a: &[f64]| a[i] + u * (a[i + 1] - a[i]);
                Ok(PathLossSample { value: lerp(values), slope: lerp(slopes) })
            }
        }
    }

    /// `gamma_PL(d) - gamma_PL(l)` without cancellation for close `l`, `d`.
    pub fn difference(&self, p: &ChannelParams, l: f64, d: f64) -> Result<f64> {
        match self {
            Self::Straight(g) => {
                let arg_l = g.dist_sq(l)?;
                g.dist_sq(d)?;
                let delta = (d - l) * (d + l - 2.0 * g.d_src * g.theta_src.cos());
                Ok(-5.0 * p.n_pl * (delta / arg_l).ln_1p() / LN_10)
            }
            Self::Tabulated { .. } => Ok(self.at(p, d)?.value - self.at(p, l)?.value),
        }
    }

    pub fn sample(&self, p: &ChannelParams, distances: &[f64]) -> Result<Vec<PathLossSample>> {
        distances.iter().map(|&d| self.at(p, d)).collect()
    }
}
