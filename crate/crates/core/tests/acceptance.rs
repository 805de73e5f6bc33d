//! Acceptance suite. Runs every criterion in sequence (timings share no CPU
//! with other tests), prints one PASS/FAIL line each and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use fpd_core::channel::{rician_cdf_db, shadowing_cov};
use fpd_core::config::{PathSpec, SweepParameter, SweepSpec};
use fpd_core::geometry::Point2;
use fpd_core::markov::{
    ball_radius, conditional_gaussian_oracle, conditional_mean_gap_variance, curvature_feasible, curvature_threshold,
    eps_d, kl_stats_for_circle, three_point_kl,
};
use fpd_core::mc::{summarize, Monitoring};
use fpd_core::multipath::{first_passage_pmf, survival_probability};
use fpd_core::pipeline::{self, Prepared, RunOptions};
use fpd_core::volterra::{VolterraGrid, VolterraSolver};
use fpd_core::{ChannelParams, Multipath, PathLossProfile, RecursionConfig, RunConfig, StraightGeometry};
use nalgebra::DMatrix;

const DD: f64 = 0.03;
const EPS: f64 = 0.1;
const HORIZON: f64 = 60.0;
const N_STEPS: usize = 2000;
const KS_LIMIT: f64 = 0.02;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sf() -> ChannelParams {
    ChannelParams::san_francisco()
}

fn rician() -> Multipath {
    Multipath::Rician { k_ric: 1.59 }
}

fn straight() -> StraightGeometry {
    StraightGeometry::new(550.0, 0.0).unwrap()
}

fn straight_config(multipath: Multipath) -> RunConfig {
    let mut c = RunConfig::straight_default();
    c.channel.multipath = multipath;
    c
}

/// Log spiral `r = 11 exp(0.5 theta)` traversed inward from `theta = 2.5`,
/// with the intercept placing the start path loss 5 dB below threshold.
fn spiral_config(multipath: Multipath) -> RunConfig {
    let mut c = RunConfig::straight_default();
    let r0 = 11.0 * 1.25f64.exp();
    c.channel.k_db = c.channel.gamma_th - 5.0 + 10.0 * c.channel.n_pl * r0.log10();
    c.channel.multipath = multipath;
    c.path = PathSpec::LogSpiral { a_m: 11.0, b_per_rad: 0.5, theta_range_rad: [2.5, 0.0] };
    c
}

fn min_time<T>(reps: usize, mut f: impl FnMut() -> T) -> Duration {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed()
        })
        .min()
        .unwrap()
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn c1_ball_radius() -> Outcome {
    let p = sf();
    let d_th = ball_radius(&p, DD, 1e-3, 1e-3).unwrap();
    let t = min_time(11, || ball_radius(&p, DD, 1e-3, 1e-3).unwrap());
    let pass = (d_th - 9.5).abs() <= 0.25 && t < Duration::from_millis(1);
    outcome(pass, format!("d_th = {d_th:.4} m (9.5 +/- 0.25), {:.4} ms (< 1 ms)", ms(t)))
}

fn c2_curvature_threshold() -> Outcome {
    let p = sf();
    let d_th = ball_radius(&p, DD, 1e-3, 1e-3).unwrap();
    let e = eps_d(1e-3, 1e-3).unwrap();
    let t = Instant::now();
    let ct = curvature_threshold(&p, DD, d_th, e).unwrap();
    let elapsed = t.elapsed();
    let k = ct.kappa_th;
    let feasible = curvature_feasible(&p, k, DD, d_th, e);
    let infeasible_above = !curvature_feasible(&p, 1.05 * k, DD, d_th, e);
    let in_band = (k - 1.04).abs() <= 0.104;
    let pass = in_band && feasible && infeasible_above && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "kappa_th = {k:.5} 1/m (1.04 +/- 10%), binding {:?}, feasible at kappa_th {feasible}, infeasible at 1.05 kappa_th {infeasible_above}, {:.1} ms (< 10 s); KL-only limit {:.4} 1/m, 1/d_th = {:.5} 1/m",
            ct.binding,
            ms(elapsed),
            ct.kl_only_limit,
            1.0 / d_th
        ),
    )
}

fn c3_kl_remark() -> Outcome {
    let p = ChannelParams { beta_sh: 5.0, ..sf() };
    let dd = 0.1;
    let d_th = ball_radius(&p, dd, 1e-3, 1e-3).unwrap();
    let s = kl_stats_for_circle(&p, 1.0 / 15.0, dd, d_th).unwrap();
    let pass = (1.5e-7..=6e-7).contains(&s.m_kl) && (2.5e-7..=1e-6).contains(&s.sigma_kl);
    outcome(pass, format!("m_KL = {:.3e} ([1.5e-7, 6e-7]), sigma_KL = {:.3e} ([2.5e-7, 1e-6])", s.m_kl, s.sigma_kl))
}

fn c4_closed_form_vs_matrix() -> Outcome {
    let p = sf();
    let mut rng_state = 0x9e37_79b9_7f4a_7c15u64;
    let mut uniform = || {
        rng_state ^= rng_state << 13;
        rng_state ^= rng_state >> 7;
        rng_state ^= rng_state << 17;
        (rng_state >> 11) as f64 / (1u64 << 53) as f64
    };
    let t = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d1 = 0.01 + 5.0 * uniform();
        let dr = d1 * (1.05 + 10.0 * uniform());
        let d1r = dr - d1 + 2.0 * d1 * (0.01 + 0.99 * uniform());
        let x = (dr * dr + d1 * d1 - d1r * d1r) / (2.0 * d1);
        let cur = Point2::new(0.0, 0.0);
        let hist = [Point2::new(d1, 0.0), Point2::new(x, (dr * dr - x * x).max(0.0).sqrt())];
        let gap = conditional_mean_gap_variance(&p, cur, &hist).unwrap();
        let (_, var1) = conditional_gaussian_oracle(&p, cur, &hist[..1]).unwrap();
        let ratio = gap / var1;
        let closed = three_point_kl(&p, d1, dr, d1r).unwrap();
        let pairs = [
            (closed.sigma_dm_sq, gap),
            (closed.m_kl, -0.5 * (-ratio).ln_1p()),
            (closed.sigma_kl, ratio / std::f64::consts::SQRT_2),
        ];
        for (a, b) in pairs {
            if a != b {
                worst = worst.max((a - b).abs() / b.abs().max(a.abs()));
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = worst <= 1e-10 && elapsed < Duration::from_secs(1);
    outcome(pass, format!("max relative diff {worst:.2e} (<= 1e-10) over 1000 triangles, {:.1} ms (< 1 s)", ms(elapsed)))
}

fn c5_volterra_vs_mc() -> Outcome {
    let t = Instant::now();
    let prep = Prepared::new(&straight_config(Multipath::None)).unwrap();
    let (report, records) = pipeline::validate_with_trials(&prep, RunOptions::default()).unwrap();
    let elapsed = t.elapsed();
    let analytic = pipeline::density(&prep, RunOptions::default()).unwrap();
    let discrete = summarize(&records, DD, Monitoring::Discrete).unwrap();
    let pass = report.ks < KS_LIMIT && report.trials == 100_000 && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "KS = {:.4} (< {KS_LIMIT}) vs {} trials with bridge monitoring, {:.1} s (< 300 s); sample-only monitoring KS = {:.4}",
            report.ks,
            report.trials,
            elapsed.as_secs_f64(),
            analytic.ks(&discrete)
        ),
    )
}

fn c6_mixture_vs_upcrossing() -> Outcome {
    let p = sf();
    let solver =
        VolterraSolver::new(&p, &PathLossProfile::Straight(straight()), VolterraGrid::new(HORIZON, N_STEPS).unwrap())
            .unwrap();
    let up = solver.solve_upcrossing(EPS).unwrap();
    let mix = solver.solve_mixture(EPS, 400).unwrap();
    let gap = up.pdf.iter().zip(&mix.pdf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let peak = up.pdf.iter().copied().fold(0.0, f64::max);
    outcome(gap <= 1e-3, format!("max |g_u - mixture| = {gap:.2e} per m (<= 1e-3), peak density {peak:.3} per m"))
}

/// `Pr(Gamma_0..Gamma_3 < gamma_th)` by a 64^4 midpoint tensor grid over the
/// full joint shadowing density.
fn brute_force_joint_below(p: &ChannelParams, gpl: &[f64; 4], step: f64, k_ric: f64) -> f64 {
    const G: usize = 64;
    let sigma = p.sigma_sh();
    let h = 16.0 * sigma / G as f64;
    let nodes: Vec<f64> = (0..G).map(|i| -8.0 * sigma + (i as f64 + 0.5) * h).collect();
    let cov = DMatrix::from_fn(4, 4, |i, j| shadowing_cov(p, step * (i as f64 - j as f64).abs()));
    let q = cov.clone().try_inverse().unwrap();
    let norm = h.powi(4) / ((2.0 * std::f64::consts::PI).powi(2) * cov.determinant().sqrt());
    let f: Vec<Vec<f64>> =
        gpl.iter().map(|g| nodes.iter().map(|s| rician_cdf_db(k_ric, p.gamma_th - g - s)).collect()).collect();
    let mut total = 0.0;
    for (i0, &s0) in nodes.iter().enumerate() {
        let q0 = q[(0, 0)] * s0 * s0;
        for (i1, &s1) in nodes.iter().enumerate() {
            let q1 = q0 + q[(1, 1)] * s1 * s1 + 2.0 * q[(0, 1)] * s0 * s1;
            let f01 = f[0][i0] * f[1][i1];
            for (i2, &s2) in nodes.iter().enumerate() {
                let q2 = q1 + q[(2, 2)] * s2 * s2 + 2.0 * s2 * (q[(0, 2)] * s0 + q[(1, 2)] * s1);
                let f012 = f01 * f[2][i2];
                let lin = 2.0 * (q[(0, 3)] * s0 + q[(1, 3)] * s1 + q[(2, 3)] * s2);
                let mut acc = 0.0;
                for (i3, &s3) in nodes.iter().enumerate() {
                    let qf = q2 + s3 * (q[(3, 3)] * s3 + lin);
                    acc += f[3][i3] * (-0.5 * qf).exp();
                }
                total += f012 * acc;
            }
        }
    }
    total * norm
}

fn c7_recursion_vs_brute_force() -> Outcome {
    let p = sf().with_multipath(rician());
    let prof = PathLossProfile::Straight(straight());
    let step = 5.0;
    let gpl: [f64; 4] = std::array::from_fn(|k| prof.at(&p, step * k as f64).unwrap().value);
    let t = Instant::now();
    let brute = brute_force_joint_below(&p, &gpl, step, 1.59);
    let recursion = survival_probability(&p, &prof, step, 3, &RecursionConfig::default()).unwrap()[3];
    let elapsed = t.elapsed();
    let rel = (recursion - brute).abs() / brute;
    outcome(
        rel <= 1e-3 && elapsed < Duration::from_secs(60),
        format!(
            "int J_3 = {recursion:.8}, tensor grid = {brute:.8}, relative diff {rel:.2e} (<= 1e-3), {:.1} s (< 60 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn c8_recursion_vs_mc() -> Outcome {
    let prep = Prepared::new(&straight_config(rician())).unwrap();
    let r = pipeline::validate(&prep, RunOptions { multipath: true, corrupt_kernel: false }).unwrap();
    outcome(
        r.ks < KS_LIMIT && r.trials == 100_000,
        format!("KS = {:.4} (< {KS_LIMIT}) vs {} trials, K_ric = 1.59", r.ks, r.trials),
    )
}

fn max_cdf_gap(vol: &fpd_core::FpdDensity, step: f64, cdf: &[f64]) -> f64 {
    vol.distances
        .iter()
        .zip(&vol.cdf)
        .skip(1)
        .map(|(&d, &c)| (cdf[(d / step).round() as usize - 1] - c).abs())
        .fold(0.0, f64::max)
}

fn c9_cross_method() -> Outcome {
    let p = sf();
    let prof = PathLossProfile::Straight(straight());
    let vol = VolterraSolver::new(&p, &prof, VolterraGrid::new(HORIZON, N_STEPS).unwrap())
        .unwrap()
        .solve_upcrossing(EPS)
        .unwrap();
    let rc = RecursionConfig { start_margin_db: EPS, ..Default::default() };
    let refine = 16;
    let fine_step = DD / refine as f64;
    let fine = first_passage_pmf(&p, &prof, fine_step, N_STEPS * refine, &rc).unwrap();
    let gap = max_cdf_gap(&vol, fine_step, &fine.cdf());
    let native = first_passage_pmf(&p, &prof, DD, N_STEPS, &rc).unwrap();
    let native_gap = max_cdf_gap(&vol, DD, &native.cdf());
    outcome(
        gap < 0.01,
        format!(
            "max CDF gap = {gap:.4} (< 0.01) with recursion step {fine_step:.5} m; at step {DD} m the gap is {native_gap:.4}"
        ),
    )
}

fn c10_curved_path() -> Outcome {
    let off = Prepared::new(&spiral_config(Multipath::None)).unwrap();
    let cert = pipeline::certify(&off).unwrap();
    let vol = pipeline::validate(&off, RunOptions::default()).unwrap();
    let on = Prepared::new(&spiral_config(rician())).unwrap();
    let rec = pipeline::validate(&on, RunOptions { multipath: true, corrupt_kernel: false }).unwrap();
    let pass = cert.certified && vol.ks < KS_LIMIT && rec.ks < KS_LIMIT;
    outcome(
        pass,
        format!(
            "certified {} (kappa_max {:.4} < kappa_th {:.4}), Volterra KS = {:.4}, recursion KS = {:.4} (< {KS_LIMIT}), path length {:.2} m",
            cert.certified,
            cert.kappa_max,
            cert.tolerance.kappa_th,
            vol.ks,
            rec.ks,
            off.path.length()
        ),
    )
}

fn c11_trends() -> Outcome {
    let base = straight_config(rician());
    let cases = [
        (SweepParameter::SigmaShSq, vec![4.0, 8.41, 16.0]),
        (SweepParameter::BetaSh, vec![5.0, 12.92, 25.0]),
        (SweepParameter::KRic, vec![0.5, 1.59, 10.0]),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (param, values) in cases {
        let r = pipeline::sweep(&base, &SweepSpec { parameter: param, values }).unwrap();
        pass &= r.monotone_as_expected;
        let dir = if param.expected_direction() > 0 { "increasing" } else { "decreasing" };
        let e: Vec<String> = r.rows.iter().map(|x| format!("{:.3}", x.expected_fpd_m)).collect();
        parts.push(format!("{param:?} [{}] {dir} {}", e.join(", "), r.monotone_as_expected));
    }
    // Monte Carlo cross-check of the shadowing-power sweep.
    let mc: Vec<String> = [4.0, 8.41, 16.0]
        .iter()
        .map(|&s2| {
            let mut c = base.clone();
            c.channel.sigma_sh_sq = s2;
            let prep = Prepared::new(&c).unwrap();
            let (e, _) = pipeline::monte_carlo(&prep, true).unwrap();
            format!("{:.3}", e.mean_crossing_or_horizon(prep.horizon_m()))
        })
        .collect();
    let mut shifted = base.clone();
    shifted.channel.k_db = -5.0;
    let s = pipeline::sweep(&shifted, &SweepSpec { parameter: SweepParameter::SigmaShSq, values: vec![4.0, 8.41, 16.0] })
        .unwrap();
    let e: Vec<String> = s.rows.iter().map(|x| format!("{:.3}", x.expected_fpd_m)).collect();
    outcome(
        pass,
        format!(
            "{}; Monte Carlo SigmaShSq [{}]; with K_dB = -5 dB SigmaShSq [{}] decreasing {}",
            parts.join("; "),
            mc.join(", "),
            e.join(", "),
            s.monotone_as_expected
        ),
    )
}

fn c12_complexity() -> Outcome {
    let p = sf();
    let prof = PathLossProfile::Straight(straight());
    // Kernel assembly plus march over a fixed horizon.
    let vol_time = |n: usize| {
        min_time(5, || {
            VolterraSolver::new(&p, &prof, VolterraGrid::new(HORIZON, n).unwrap()).unwrap().solve_upcrossing(EPS).unwrap()
        })
    };
    let (v1, v2) = (vol_time(2000), vol_time(4000));
    let vol_ratio = v2.as_secs_f64() / v1.as_secs_f64();
    let pm = p.with_multipath(rician());
    let steps = 200;
    let rec_time = |m: usize| {
        let rc = RecursionConfig { m_points: m, start_margin_db: EPS, ..Default::default() };
        min_time(3, || first_passage_pmf(&pm, &prof, DD, steps, &rc).unwrap())
    };
    let (r1, r2) = (rec_time(4096), rec_time(8192));
    let rec_ratio = r2.as_secs_f64() / r1.as_secs_f64();
    outcome(
        vol_ratio <= 4.5 && rec_ratio <= 2.5,
        format!(
            "Volterra N 2000 -> 4000: {:.1} -> {:.1} ms, ratio {vol_ratio:.2} (<= 4.5); recursion M 4096 -> 8192: {:.3} -> {:.3} ms/step, ratio {rec_ratio:.2} (<= 2.5)",
            ms(v1),
            ms(v2),
            ms(r1) / steps as f64,
            ms(r2) / steps as f64
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("ball radius", c1_ball_radius),
        ("curvature threshold", c2_curvature_threshold),
        ("KL values on a 15 m circle", c3_kl_remark),
        ("closed-form KL vs matrix conditioning", c4_closed_form_vs_matrix),
        ("Volterra vs Monte Carlo, straight path", c5_volterra_vs_mc),
        ("fixed-start mixture vs upcrossing density", c6_mixture_vs_upcrossing),
        ("recursion vs tensor-grid integral", c7_recursion_vs_brute_force),
        ("recursion vs Monte Carlo, straight path with multipath", c8_recursion_vs_mc),
        ("recursion without multipath vs Volterra", c9_cross_method),
        ("log spiral certified and matched by both solvers", c10_curved_path),
        ("expected FPD trends", c11_trends),
        ("solver cost scaling", c12_complexity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} [{tag}] {name}: {} [{:.1} s]", o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(id);
        }
    }
    println!("acceptance: {} passed, {} failed {:?}", ran - failed.len(), failed.len(), failed);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
