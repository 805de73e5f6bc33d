//! End-to-end runs driven by a [`RunConfig`]: certification, densities from
//! either solver, Monte Carlo validation and parameter sweeps.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{ChannelParams, Multipath, PathLossProfile, StraightGeometry};
use crate::config::{PathSpec, RunConfig, SweepParameter, SweepSpec};
use crate::error::{FpdError, Result};
use crate::geometry::DiscretizedPath;
use crate::markov::{certify_path, PathCertificate};
use crate::mc::{ks_distance, run_trials, summarize, Conditioning, EmpiricalFpd, McConfig, Monitoring, TrialRecord};
use crate::multipath::{first_passage_pmf, FirstPassagePmf, RecursionConfig};
use crate::volterra::{FpdDensity, VolterraGrid, VolterraSolver};

/// KS pass threshold for solver-vs-Monte-Carlo validation.
pub const KS_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Volterra,
    Recursion,
}

/// Config with its path and path-loss profile materialized.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub path: DiscretizedPath,
    pub profile: PathLossProfile,
    pub n_steps: usize,
}

impl Prepared {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let path = config.build_path()?;
        let profile = match config.path {
            PathSpec::Straight { d_src_m, theta_src_rad, .. } => {
                PathLossProfile::Straight(StraightGeometry::new(d_src_m, theta_src_rad)?)
            }
            _ => PathLossProfile::from_path(&config.channel, &path)?,
        };
        Ok(Self { config: config.clone(), path, profile, n_steps: config.n_steps()? })
    }

    pub fn horizon_m(&self) -> f64 {
        self.n_steps as f64 * self.config.delta_d_m
    }

    fn params(&self, multipath: bool) -> Result<ChannelParams> {
        let p = self.config.channel;
        if !multipath {
            return Ok(p.with_multipath(Multipath::None));
        }
        match p.multipath {
            Multipath::Rician { .. } => Ok(p),
            Multipath::None => Err(FpdError::Config("multipath mode needs channel.multipath of kind rician".into())),
        }
    }
}

/// Solver output on its own grid.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticFpd {
    Volterra(FpdDensity),
    Recursion(FirstPassagePmf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityRow {
    pub distance_m: f64,
    pub pdf_per_m: f64,
    pub cdf: f64,
}

/// Expected FPD with the no-crossing mass attributed to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedFpd {
    pub expected_fpd_m: f64,
    pub residual_mass: f64,
}

impl AnalyticFpd {
    pub fn solver(&self) -> Solver {
        match self {
            Self::Volterra(_) => Solver::Volterra,
            Self::Recursion(_) => Solver::Recursion,
        }
    }

    /// Recursion rows report `pmf_k / delta_d` as the density.
    pub fn rows(&self) -> Vec<DensityRow> {
        match self {
            Self::Volterra(f) => f
                .distances
                .iter()
                .zip(&f.pdf)
                .zip(&f.cdf)
                .map(|((&d, &g), &c)| DensityRow { distance_m: d, pdf_per_m: g, cdf: c })
                .collect(),
            Self::Recursion(r) => r
                .distances
                .iter()
                .zip(&r.pmf)
                .zip(r.cdf())
                .map(|((&d, &q), c)| DensityRow { distance_m: d, pdf_per_m: q / r.step, cdf: c })
                .collect(),
        }
    }

    pub fn expected(&self) -> ExpectedFpd {
        match self {
            Self::Volterra(f) => {
                ExpectedFpd { expected_fpd_m: f.expected_distance(), residual_mass: (1.0 - f.total_mass).max(0.0) }
            }
            Self::Recursion(r) => ExpectedFpd { expected_fpd_m: r.expected_distance(), residual_mass: r.residual() },
        }
    }

    pub fn ks(&self, e: &EmpiricalFpd) -> f64 {
        match self {
            Self::Volterra(f) => ks_distance(e, f),
            Self::Recursion(r) => ks_distance(e, r),
        }
    }
}

pub fn certify(prep: &Prepared) -> Result<PathCertificate> {
    let t = prep.config.tolerances;
    certify_path(&prep.path, &prep.config.channel, t.eps_m, t.eps_sigma)
}

/// Extra switches for [`density`] and [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub multipath: bool,
    /// Negative control only: flips the Volterra kernel sign.
    pub corrupt_kernel: bool,
}

/// Volterra upcrossing density without multipath, or the step recursion with it.
pub fn density(prep: &Prepared, opts: RunOptions) -> Result<AnalyticFpd> {
    let p = prep.params(opts.multipath)?;
    let eps = prep.config.epsilon_db;
    if opts.multipath {
        let rc = RecursionConfig { m_points: prep.config.grid.m_points, start_margin_db: eps, ..Default::default() };
        return Ok(AnalyticFpd::Recursion(first_passage_pmf(
            &p,
            &prep.profile,
            prep.config.delta_d_m,
            prep.n_steps,
            &rc,
        )?));
    }
    if prep.n_steps % 2 != 0 {
        return Err(FpdError::Config("the Volterra solver needs an even grid.n_steps".into()));
    }
    let grid = VolterraGrid::new(prep.horizon_m(), prep.n_steps)?;
    let mut solver = VolterraSolver::new(&p, &prep.profile, grid)?;
    if opts.corrupt_kernel {
        solver = solver.corrupt_kernel_sign();
    }
    Ok(AnalyticFpd::Volterra(solver.solve_upcrossing(eps)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub solver: Solver,
    pub monitoring: Monitoring,
    pub ks: f64,
    pub threshold: f64,
    pub pass: bool,
    pub trials: usize,
    pub accepted: usize,
    pub censored: usize,
    pub seed: u64,
    pub expected_fpd_analytic_m: f64,
    pub expected_fpd_mc_m: f64,
}

fn monitoring_for(prep: &Prepared, multipath: bool) -> Monitoring {
    prep.config.mc.monitoring.unwrap_or(if multipath { Monitoring::Discrete } else { Monitoring::BrownianBridge })
}

/// Monte Carlo trials matching the config's start conditioning and horizon.
pub fn monte_carlo(prep: &Prepared, multipath: bool) -> Result<(EmpiricalFpd, Vec<TrialRecord>)> {
    let p = prep.params(multipath)?;
    let monitoring = monitoring_for(prep, multipath);
    if multipath && monitoring == Monitoring::BrownianBridge {
        return Err(FpdError::Config("bridge monitoring applies only without multipath".into()));
    }
    let cfg = McConfig {
        trials: prep.config.mc.trials,
        seed: prep.config.mc.seed,
        horizon_steps: prep.n_steps,
        conditioning: Conditioning::BelowThresholdMargin { eps_db: prep.config.epsilon_db },
        monitoring,
    };
    let records = run_trials(&prep.path, &p, &cfg)?;
    Ok((summarize(&records, prep.config.delta_d_m, monitoring)?, records))
}

pub fn validate(prep: &Prepared, opts: RunOptions) -> Result<ValidationReport> {
    validate_with_trials(prep, opts).map(|(r, _)| r)
}

/// Like [`validate`], also returning the raw trial records.
pub fn validate_with_trials(prep: &Prepared, opts: RunOptions) -> Result<(ValidationReport, Vec<TrialRecord>)> {
    let analytic = density(prep, opts)?;
    let (mc, records) = monte_carlo(prep, opts.multipath)?;
    let ks = analytic.ks(&mc);
    let report = ValidationReport {
        solver: analytic.solver(),
        monitoring: monitoring_for(prep, opts.multipath),
        ks,
        threshold: KS_THRESHOLD,
        pass: ks < KS_THRESHOLD,
        trials: mc.attempts,
        accepted: mc.accepted,
        censored: mc.censored_count,
        seed: prep.config.mc.seed,
        expected_fpd_analytic_m: analytic.expected().expected_fpd_m,
        expected_fpd_mc_m: mc.mean_crossing_or_horizon(prep.horizon_m()),
    };
    Ok((report, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub expected_fpd_m: f64,
    pub residual_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub parameter: SweepParameter,
    pub solver: Solver,
    pub rows: Vec<SweepRow>,
    /// Strictly monotone in the expected direction, judged in input order.
    pub monotone_as_expected: bool,
}

/// Expected FPD per sweep value. Uses the recursion when the channel (or the
/// swept parameter) has multipath, else the Volterra solver.
pub fn sweep(config: &RunConfig, spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let multipath = spec.parameter == SweepParameter::KRic || config.channel.multipath != Multipath::None;
    let rows = spec
        .values
        .par_iter()
        .map(|&value| {
            let mut cfg = config.clone();
            cfg.channel = spec.parameter.apply(&config.channel, value);
            let prep = Prepared::new(&cfg)?;
            let e = density(&prep, RunOptions { multipath, corrupt_kernel: false })?.expected();
            Ok(SweepRow { value, expected_fpd_m: e.expected_fpd_m, residual_mass: e.residual_mass })
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = f64::from(spec.parameter.expected_direction());
    let monotone_as_expected = rows.windows(2).all(|w| dir * (w[1].expected_fpd_m - w[0].expected_fpd_m) > 0.0);
    Ok(SweepReport {
        parameter: spec.parameter,
        solver: if multipath { Solver::Recursion } else { Solver::Volterra },
        rows,
        monotone_as_expected,
    })
}
