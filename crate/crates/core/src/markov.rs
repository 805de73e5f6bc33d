//! KL-divergence tolerance analysis: how far a path's shadowing law is from
//! the Gauss-Markov chain obtained by conditioning on the previous sample only.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::channel::{shadowing_cov, ChannelParams};
use crate::error::{invalid, FpdError, Result};
use crate::geometry::{curvature_profile, is_dth_loop_free, DiscretizedPath, LoopVerdict, Point2};

/// Admissibility bundle derived from the KL tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarkovTolerance {
    pub eps_m: f64,
    pub eps_sigma: f64,
    pub eps_d: f64,
    pub d_th: f64,
    pub kappa_th: f64,
}

/// KL mean/std between the full and previous-sample-only conditionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlStats {
    pub m_kl: f64,
    pub sigma_kl: f64,
    pub sigma_dm_sq: f64,
}

/// `min(1 - exp(-2 eps_m), sqrt(2) eps_sigma)`.
pub fn eps_d(eps_m: f64, eps_sigma: f64) -> Result<f64> {
    if !(eps_m > 0.0 && eps_sigma > 0.0) {
        return Err(invalid("eps_m and eps_sigma must be > 0"));
    }
    Ok((-(-2.0 * eps_m).exp_m1()).min(std::f64::consts::SQRT_2 * eps_sigma))
}

fn kl_from_ratio(ratio: f64, sigma_dm_sq: f64) -> Result<KlStats> {
    if ratio >= 1.0 {
        return Err(FpdError::KlBreakdown { ratio });
    }
    Ok(KlStats {
        m_kl: -0.5 * (-ratio).ln_1p(),
        sigma_kl: ratio / std::f64::consts::SQRT_2,
        sigma_dm_sq,
    })
}

/// Three-point KL statistics: current point, previous point at distance `d1`,
/// and one older point at distance `dr` from the current point and `d1r`
/// from the previous one.
pub fn three_point_kl(p: &ChannelParams, d1: f64, dr: f64, d1r: f64) -> Result<KlStats> {
    p.validate()?;
    if !(d1 > 0.0 && dr > d1) {
        return Err(invalid(format!("need 0 < d1 < dr, got d1 = {d1}, dr = {dr}")));
    }
    let slack = 1e-12 * (dr + d1);
    if d1r < dr - d1 - slack || d1r > dr + d1 + slack {
        return Err(invalid(format!(
            "triangle inequality violated: d1r = {d1r} outside [{}, {}]",
            dr - d1,
            dr + d1
        )));
    }
    let b = p.beta_sh;
    // e^{-dr/b} - e^{-(d1+d1r)/b} = e^{-dr/b} (1 - e^{-(d1+d1r-dr)/b})
    let diff = (-dr / b).exp() * -(-(d1 + d1r - dr).max(0.0) / b).exp_m1();
    let one_minus_rho2 = -(-2.0 * d1 / b).exp_m1();
    let sigma_dm_sq = p.sigma_sh_sq * diff * diff / -(-2.0 * d1r / b).exp_m1();
    let ratio = sigma_dm_sq / (p.sigma_sh_sq * one_minus_rho2);
    kl_from_ratio(ratio, sigma_dm_sq)
}

fn cov_matrix(p: &ChannelParams, pts: &[Point2]) -> DMatrix<f64> {
    DMatrix::from_fn(pts.len(), pts.len(), |i, j| shadowing_cov(p, pts[i].dist(pts[j])))
}

fn check_distinct(pts: &[Point2]) -> Result<()> {
    for i in 0..pts.len() {
        for j in 0..i {
            if pts[i].dist(pts[j]) <= 1e-12 {
                return Err(FpdError::SingularCovariance(format!("points {j} and {i} coincide")));
            }
        }
    }
    Ok(())
}

/// Exact Gaussian conditioning of the shadowing at `current` on the shadowing
/// at `history` (most recent first): returns the mean coefficients and the
/// conditional variance.
pub fn conditional_gaussian_oracle(p: &ChannelParams, current: Point2, history: &[Point2]) -> Result<(Vec<f64>, f64)> {
    if history.is_empty() {
        return Err(invalid("history must be nonempty"));
    }
    let mut all = vec![current];
    all.extend_from_slice(history);
    check_distinct(&all)?;
    let sigma = cov_matrix(p, history);
    let chol = sigma
        .cholesky()
        .ok_or_else(|| FpdError::SingularCovariance("history covariance is not positive definite".into()))?;
    let cross = DVector::from_iterator(history.len(), history.iter().map(|h| shadowing_cov(p, current.dist(*h))));
    let alpha = chol.solve(&cross);
    let var = (p.sigma_sh_sq - cross.dot(&alpha)).max(0.0);
    Ok((alpha.iter().copied().collect(), var))
}

/// `Delta alpha^T Sigma Delta alpha`, the variance of the gap between the full
/// conditional mean and the previous-sample-only mean.
///
/// Uses `Delta alpha = Sigma^{-1} (s - rho Sigma e_1)` so the small residual is
/// formed before the solve.
pub fn conditional_mean_gap_variance(p: &ChannelParams, current: Point2, history: &[Point2]) -> Result<f64> {
    let mut all = vec![current];
    all.extend_from_slice(history);
    check_distinct(&all)?;
    let sigma = cov_matrix(p, history);
    let rho = p.rho(current.dist(history[0]));
    let resid = DVector::from_iterator(
        history.len(),
        history
            .iter()
            .map(|h| shadowing_cov(p, current.dist(*h)) - rho * shadowing_cov(p, history[0].dist(*h))),
    );
    let chol = sigma
        .cholesky()
        .ok_or_else(|| FpdError::SingularCovariance("history covariance is not positive definite".into()))?;
    let delta = chol.solve(&resid);
    Ok(resid.dot(&delta))
}

/// Smallest ball radius beyond which an excluded history point keeps the KL
/// statistics within tolerance: `(beta/2) ln(rho^2 + (1 - rho^2)/eps_d)`.
pub fn ball_radius(p: &ChannelParams, delta_d: f64, eps_m: f64, eps_sigma: f64) -> Result<f64> {
    p.validate()?;
    if !(delta_d >= 0.0) {
        return Err(invalid("delta_d must be >= 0"));
    }
    let e = eps_d(eps_m, eps_sigma)?;
    let rho = p.rho(delta_d);
    if e >= 1.0 || rho >= 1.0 {
        return Ok(0.0);
    }
    let one_minus_rho2 = -(-2.0 * delta_d / p.beta_sh).exp_m1();
    Ok(0.5 * p.beta_sh * (rho * rho + one_minus_rho2 / e).ln())
}

/// Normalized variance gap `sigma_dm^2 / sigma_hat^2` on a circle of
/// curvature `kappa`, with the older point an angle `phi` behind the previous one.
pub fn h_opt(p: &ChannelParams, kappa: f64, delta_d: f64, phi: f64) -> f64 {
    let (d1, dr, d1r) = circle_chords(kappa, delta_d, phi);
    let b = p.beta_sh;
    let diff = (-dr / b).exp() * -(-(d1 + d1r - dr).max(0.0) / b).exp_m1();
    let den = -(-2.0 * d1r / b).exp_m1() * -(-2.0 * d1 / b).exp_m1();
    diff * diff / den
}

/// Chord lengths `(d1, dr, d1r)` for three points on a circle of curvature `kappa`.
fn circle_chords(kappa: f64, delta_d: f64, phi: f64) -> (f64, f64, f64) {
    let r = 1.0 / kappa;
    let dphi = delta_phi(kappa, delta_d);
    (delta_d, 2.0 * r * (0.5 * (phi + dphi)).sin(), 2.0 * r * (0.5 * phi).sin())
}

fn delta_phi(kappa: f64, delta_d: f64) -> f64 {
    2.0 * (0.5 * kappa * delta_d).min(1.0).asin()
}

/// Upper end of the admissible angle range at curvature `kappa`.
fn h_cons(kappa: f64, delta_d: f64, d_th: f64) -> f64 {
    2.0 * (0.5 * kappa * d_th).min(1.0).asin() - delta_phi(kappa, delta_d)
}

const PHI_GRID: usize = 2048;

/// `(argmax, max)` of `h_opt(kappa, .)` over `(0, phi_hi]`.
fn maximize_h_opt(p: &ChannelParams, kappa: f64, delta_d: f64, phi_hi: f64) -> (f64, f64) {
    if !(phi_hi > 0.0) {
        return (0.0, 0.0);
    }
    let f = |phi: f64| h_opt(p, kappa, delta_d, phi);
    let step = phi_hi / PHI_GRID as f64;
    let (mut best_i, mut best) = (1usize, f64::NEG_INFINITY);
    for i in 1..=PHI_GRID {
        let v = f(step * i as f64);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    if best_i == PHI_GRID {
        return (phi_hi, best);
    }
    // Golden-section refinement on the bracketing cells.
    let (mut a, mut b) = (step * (best_i - 1) as f64, step * (best_i + 1) as f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let v = f(x);
    if v >= best {
        (x, v)
    } else {
        (step * best_i as f64, best)
    }
}

/// Which condition determines the curvature threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureBinding {
    /// The tolerance is met all the way up to the ball condition `kappa < 1/d_th`.
    BallCurvature,
    /// The KL tolerance is exhausted first.
    KlTolerance,
}

/// Output of [`curvature_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureThreshold {
    pub kappa_th: f64,
    pub binding: CurvatureBinding,
    /// Inner maximum of `h_opt` at `kappa_th`.
    pub h_max_at_threshold: f64,
    /// Whether the bisection bracket passed the monotonicity scan.
    pub monotone: bool,
    /// Largest curvature meeting the KL tolerance alone, ignoring `kappa < 1/d_th`
    /// (asin arguments clamped); a diagnostic only.
    pub kl_only_limit: f64,
}

fn max_h_at(p: &ChannelParams, kappa: f64, delta_d: f64, d_th: f64) -> f64 {
    maximize_h_opt(p, kappa, delta_d, h_cons(kappa, delta_d, d_th)).1
}

/// Largest feasible `kappa` on `(lo, hi)` by bisection, given `lo` feasible.
fn bisect<F: Fn(f64) -> bool>(feasible: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Largest `kappa < 1/d_th` whose worst-case three-point variance gap on a
/// circle of curvature `kappa` stays within `eps_d`.
pub fn curvature_threshold(p: &ChannelParams, delta_d: f64, d_th: f64, eps_d: f64) -> Result<CurvatureThreshold> {
    p.validate()?;
    if !(d_th > 0.0) {
        return Err(invalid("d_th must be > 0"));
    }
    if !(eps_d > 0.0 && eps_d < 1.0) {
        return Err(invalid("eps_d must lie in (0, 1)"));
    }
    if !(delta_d > 0.0 && delta_d < d_th) {
        return Err(invalid("delta_d must lie in (0, d_th)"));
    }
    let feasible = |k: f64| max_h_at(p, k, delta_d, d_th) <= eps_d;
    let k_cap = (1.0 / d_th) * (1.0 - 1e-12);
    let k_min = k_cap * 1e-9;
    if !feasible(k_min) {
        return Err(FpdError::Infeasible("curvature tolerance violated even as kappa -> 0".into()));
    }

    const SCAN_CHECK: usize = 64;
    const SCAN_FALLBACK: usize = 1024;
    let scan = |n: usize| -> Vec<bool> { (1..=n).map(|i| feasible(k_cap * i as f64 / n as f64)).collect() };
    let monotone_in = |flags: &[bool]| flags.windows(2).all(|w| w[0] || !w[1]);

    let coarse = scan(SCAN_CHECK);
    let monotone = monotone_in(&coarse);
    let kappa_th = if monotone {
        if feasible(k_cap) {
            k_cap
        } else {
            bisect(feasible, k_min, k_cap)
        }
    } else {
        // Take the first infeasible point of a dense scan and refine below it.
        let fine = scan(SCAN_FALLBACK);
        match fine.iter().position(|&ok| !ok) {
            None => k_cap,
            Some(0) => bisect(feasible, k_min, k_cap / SCAN_FALLBACK as f64),
            Some(i) => bisect(
                feasible,
                k_cap * i as f64 / SCAN_FALLBACK as f64,
                k_cap * (i + 1) as f64 / SCAN_FALLBACK as f64,
            ),
        }
    };
    let binding = if kappa_th >= k_cap { CurvatureBinding::BallCurvature } else { CurvatureBinding::KlTolerance };
    Ok(CurvatureThreshold {
        kappa_th,
        binding,
        h_max_at_threshold: max_h_at(p, kappa_th, delta_d, d_th),
        monotone,
        kl_only_limit: kl_only_limit(p, delta_d, d_th, eps_d),
    })
}

/// Curvature at which the KL tolerance alone is exhausted (constraint `kappa < 1/d_th` dropped).
fn kl_only_limit(p: &ChannelParams, delta_d: f64, d_th: f64, eps_d: f64) -> f64 {
    let feasible = |k: f64| max_h_at(p, k, delta_d, d_th) <= eps_d;
    let k_hi_cap = 2.0 / delta_d * (1.0 - 1e-12);
    let mut lo = 1e-9 / d_th;
    let mut hi = lo;
    while hi < k_hi_cap && feasible(hi) {
        lo = hi;
        hi = (hi * 2.0).min(k_hi_cap);
        if hi == k_hi_cap && feasible(hi) {
            return hi;
        }
    }
    bisect(feasible, lo, hi)
}

/// Whether `kappa` passes the curvature criterion: `kappa < 1/d_th` and the
/// inner maximum of `h_opt` is within `eps_d`.
pub fn curvature_feasible(p: &ChannelParams, kappa: f64, delta_d: f64, d_th: f64, eps_d: f64) -> bool {
    kappa * d_th < 1.0 && max_h_at(p, kappa, delta_d, d_th) <= eps_d
}

/// KL statistics on a circle of curvature `kappa` at the worst-case angle.
pub fn kl_stats_for_circle(p: &ChannelParams, kappa: f64, delta_d: f64, d_th: f64) -> Result<KlStats> {
    p.validate()?;
    if !(kappa >= 0.0 && kappa * d_th < 1.0) {
        return Err(invalid(format!("kappa must lie in [0, 1/d_th), got {kappa}")));
    }
    if kappa < 1e-12 {
        return Ok(KlStats { m_kl: 0.0, sigma_kl: 0.0, sigma_dm_sq: 0.0 });
    }
    let (phi, _) = maximize_h_opt(p, kappa, delta_d, h_cons(kappa, delta_d, d_th));
    if phi <= 0.0 {
        return Ok(KlStats { m_kl: 0.0, sigma_kl: 0.0, sigma_dm_sq: 0.0 });
    }
    let (d1, dr, d1r) = circle_chords(kappa, delta_d, phi);
    three_point_kl(p, d1, dr, d1r)
}

/// Full admissibility verdict for a path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathCertificate {
    pub tolerance: MarkovTolerance,
    pub certified: bool,
    pub kappa_max: f64,
    pub curvature_ok: bool,
    pub loop_verdict: LoopVerdict,
    /// `kappa_th - kappa_max`.
    pub margin: f64,
    pub binding: CurvatureBinding,
    pub kl_only_kappa_limit: f64,
}

/// Derives `d_th` and `kappa_th` for the path's step and checks loop-freedom
/// and the pointwise curvature bound.
pub fn certify_path(path: &DiscretizedPath, p: &ChannelParams, eps_m: f64, eps_sigma: f64) -> Result<PathCertificate> {
    let e = eps_d(eps_m, eps_sigma)?;
    let dd = path.delta_d();
    let d_th = ball_radius(p, dd, eps_m, eps_sigma)?;
    let ct = curvature_threshold(p, dd, d_th, e)?;
    let kappa_max = curvature_profile(path).kappa_max;
    let loop_verdict = is_dth_loop_free(path, d_th, kappa_max);
    let curvature_ok = kappa_max < ct.kappa_th;
    Ok(PathCertificate {
        tolerance: MarkovTolerance { eps_m, eps_sigma, eps_d: e, d_th, kappa_th: ct.kappa_th },
        certified: curvature_ok && loop_verdict.loop_free,
        kappa_max,
        curvature_ok,
        loop_verdict,
        margin: ct.kappa_th - kappa_max,
        binding: ct.binding,
        kl_only_kappa_limit: ct.kl_only_limit,
    })
}
