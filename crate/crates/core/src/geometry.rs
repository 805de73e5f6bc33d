//! Planar paths: arc-length resampling, discrete curvature, ball-geometry checks
//! and the built-in path generators.

use serde::{Deserialize, Serialize};
use std::io::Read;
use std::ops::{Add, Mul, Sub};

use crate::channel::StraightGeometry;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<Point2> for f64 {
    type Output = Point2;
    fn mul(self, p: Point2) -> Point2 {
        Point2::new(self * p.x, self * p.y)
    }
}

/// Path sampled with uniform spacing `delta_d`, operator at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPath {
    points: Vec<Point2>,
    delta_d: f64,
    cumulative_s: Vec<f64>,
}

impl DiscretizedPath {
    const SPACING_TOL: f64 = 1e-6;

    /// Wraps already-uniform points, checking the spacing invariant.
    pub fn from_uniform_points(points: Vec<Point2>, delta_d: f64) -> Result<Self> {
        if points.len() < 3 {
            return Err(invalid("a discretized path needs at least 3 points"));
        }
        if !(delta_d > 0.0 && delta_d.is_finite()) {
            return Err(invalid(format!("delta_d must be > 0, got {delta_d}")));
        }
        for (i, w) in points.windows(2).enumerate() {
            let gap = w[0].dist(w[1]);
            if ((gap - delta_d) / delta_d).abs() > Self::SPACING_TOL {
                return Err(invalid(format!(
                    "spacing {gap} between points {i} and {} differs from delta_d {delta_d}",
                    i + 1
                )));
            }
        }
        let cumulative_s = (0..points.len()).map(|i| i as f64 * delta_d).collect();
        Ok(Self { points, delta_d, cumulative_s })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn delta_d(&self) -> f64 {
        self.delta_d
    }

    pub fn cumulative_s(&self) -> &[f64] {
        &self.cumulative_s
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.delta_d * (self.points.len() - 1) as f64
    }

    /// First `n_points` samples as a new path.
    pub fn truncated(&self, n_points: usize) -> Result<Self> {
        if n_points > self.points.len() {
            return Err(invalid(format!(
                "requested {n_points} points but the path only has {}",
                self.points.len()
            )));
        }
        Self::from_uniform_points(self.points[..n_points].to_vec(), self.delta_d)
    }

    /// Applies a rigid motion `q -> R(angle) q + shift`.
    pub fn transformed(&self, angle: f64, shift: Point2) -> Self {
        let (s, c) = angle.sin_cos();
        let points = self
            .points
            .iter()
            .map(|q| Point2::new(c * q.x - s * q.y, s * q.x + c * q.y) + shift)
            .collect();
        Self { points, delta_d: self.delta_d, cumulative_s: self.cumulative_s.clone() }
    }
}

/// Resamples a polyline so that consecutive output points are exactly
/// `delta_d` apart (Euclidean) and lie on the piecewise-linear interpolant.
pub fn resample_by_arc_length(raw: &[Point2], delta_d: f64) -> Result<DiscretizedPath> {
    if !(delta_d > 0.0 && delta_d.is_finite()) {
        return Err(invalid(format!("delta_d must be > 0, got {delta_d}")));
    }
    if raw.len() < 2 {
        return Err(invalid("need at least 2 points"));
    }
    for (i, w) in raw.windows(2).enumerate() {
        if w[0] == w[1] {
            return Err(invalid(format!("duplicate consecutive points at index {i}")));
        }
    }
    let total: f64 = raw.windows(2).map(|w| w[0].dist(w[1])).sum();
    if delta_d > total {
        return Err(invalid(format!("delta_d {delta_d} exceeds total length {total}")));
    }

    let mut out = vec![raw[0]];
    let mut cur = raw[0];
    // Position along the polyline: segment index and fraction within it.
    let mut seg = 0usize;
    let mut frac = 0.0f64;
    'outer: loop {
        // Find the first point after (seg, frac) that is delta_d away from `cur`.
        let mut j = seg;
        let mut t0 = frac;
        while j + 1 < raw.len() {
            let a = raw[j];
            let b = raw[j + 1];
            let dir = b - a;
            let len_sq = dir.norm_sq();
            // |a + t dir - cur|^2 = delta_d^2, t in [t0, 1]
            let w = a - cur;
            let qb = 2.0 * w.dot(dir);
            let qc = w.norm_sq() - delta_d * delta_d;
            let disc = qb * qb - 4.0 * len_sq * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                let roots = [(-qb - sq) / (2.0 * len_sq), (-qb + sq) / (2.0 * len_sq)];
                if let Some(t) = roots
                    .into_iter()
                    .filter(|&t| t >= t0 - 1e-12 && t <= 1.0 + 1e-12)
                    .reduce(f64::min)
                {
                    let t = t.clamp(0.0, 1.0);
                    let q = a + t * dir;
                    out.push(q);
                    cur = q;
                    seg = j;
                    frac = t;
                    continue 'outer;
                }
            }
            j += 1;
            t0 = 0.0;
        }
        break;
    }
    // Snap accumulated round-off so consecutive spacing is delta_d to machine precision.
    for i in 1..out.len() {
        let dir = out[i] - out[i - 1];
        let n = dir.norm();
        if n > 0.0 {
            out[i] = out[i - 1] + (delta_d / n) * dir;
        }
    }
    DiscretizedPath::from_uniform_points(out, delta_d)
}

/// Per-point curvature and its maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureProfile {
    pub kappa: Vec<f64>,
    pub kappa_max: f64,
}

/// Second-difference curvature `|r_{i-1} - 2 r_i + r_{i+1}| / delta_d^2`;
/// endpoints reuse the nearest interior stencil.
pub fn curvature_profile(path: &DiscretizedPath) -> CurvatureProfile {
    let pts = path.points();
    let h2 = path.delta_d() * path.delta_d();
    let n = pts.len();
    let stencil = |i: usize| (pts[i - 1] - 2.0 * pts[i] + pts[i + 1]).norm() / h2;
    let kappa: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => stencil(1),
            _ if i == n - 1 => stencil(n - 2),
            _ => stencil(i),
        })
        .collect();
    let kappa_max = kappa.iter().copied().fold(0.0, f64::max);
    CurvatureProfile { kappa, kappa_max }
}

/// Upper bound `(1/kappa) asin(kappa d_th)` on the path length inside a
/// radius-`d_th` ball for curvature at most `kappa`.
pub fn max_ball_segment_length(kappa: f64, d_th: f64) -> Result<f64> {
    if !(d_th > 0.0) {
        return Err(invalid(format!("d_th must be > 0, got {d_th}")));
    }
    if kappa < 0.0 || kappa * d_th >= 1.0 {
        return Err(invalid(format!(
            "curvature {kappa} must lie in [0, 1/d_th) = [0, {})",
            1.0 / d_th
        )));
    }
    let x = kappa * d_th;
    if x < 1e-8 {
        // asin(x)/x = 1 + x^2/6 + ...
        return Ok(d_th * (1.0 + x * x / 6.0));
    }
    Ok(x.asin() / kappa)
}

/// Outcome of the d_th-loop-free test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopVerdict {
    pub loop_free: bool,
    /// `kappa_max < 1/d_th` holds.
    pub curvature_ok: bool,
    /// First `(s, s - d)` arc-length pair found closer than `d_th` past the ball segment bound.
    pub first_violation: Option<(f64, f64)>,
}

/// Checks, for every sample `s` and every earlier sample `s - d` with
/// `d` beyond the ball segment bound, that `|r(s) - r(s - d)| > d_th`.
pub fn is_dth_loop_free(path: &DiscretizedPath, d_th: f64, kappa_max: f64) -> LoopVerdict {
    let curvature_ok = kappa_max * d_th < 1.0;
    // Past the curvature precondition the asin bound is undefined; fall back to
    // the straight-line bound so re-entries are still reported.
    let bound = if curvature_ok {
        max_ball_segment_length(kappa_max, d_th).unwrap_or(d_th)
    } else {
        d_th
    };
    let pts = path.points();
    let s = path.cumulative_s();
    // Relative slack so pairs sitting exactly on the bound (straight runs) are not flagged by round-off.
    let bound = bound * (1.0 + 1e-9);
    let d_th_sq = d_th * d_th * (1.0 - 1e-9);
    let mut first_violation = None;
    'scan: for i in 0..pts.len() {
        for j in (0..i).rev() {
            if s[i] - s[j] <= bound {
                continue;
            }
            if (pts[i] - pts[j]).norm_sq() <= d_th_sq {
                first_violation = Some((s[i], s[j]));
                break 'scan;
            }
        }
    }
    LoopVerdict {
        loop_free: curvature_ok && first_violation.is_none(),
        curvature_ok,
        first_violation,
    }
}

/// Straight path of length `length` from the geometry's start point.
pub fn straight_path(g: StraightGeometry, length: f64, delta_d: f64) -> Result<DiscretizedPath> {
    g.validate()?;
    if !(length >= 2.0 * delta_d) {
        return Err(invalid("straight path must span at least two steps"));
    }
    let n = (length / delta_d + 1e-9).floor() as usize + 1;
    let pts = (0..n).map(|i| g.position(i as f64 * delta_d)).collect();
    DiscretizedPath::from_uniform_points(pts, delta_d)
}

fn dense_polar<F: Fn(f64) -> f64>(r: F, theta_start: f64, theta_end: f64, n: usize) -> Vec<Point2> {
    (0..=n)
        .map(|i| {
            let t = theta_start + (theta_end - theta_start) * i as f64 / n as f64;
            let rad = r(t);
            Point2::new(rad * t.cos(), rad * t.sin())
        })
        .collect()
}

fn polar_path<F: Fn(f64) -> f64>(r: F, theta_start: f64, theta_end: f64, delta_d: f64) -> Result<DiscretizedPath> {
    if theta_start == theta_end || !theta_start.is_finite() || !theta_end.is_finite() {
        return Err(invalid("theta range must be finite and non-empty"));
    }
    // Raw sampling ~50x finer than delta_d so chord error stays far below the step.
    let coarse = dense_polar(&r, theta_start, theta_end, 1000);
    let approx_len: f64 = coarse.windows(2).map(|w| w[0].dist(w[1])).sum();
    let n = ((approx_len / delta_d) * 50.0).ceil().max(1000.0) as usize;
    resample_by_arc_length(&dense_polar(&r, theta_start, theta_end, n), delta_d)
}

/// Archimedean spiral `r = a + b theta`, traversed from `theta_start` to `theta_end`.
pub fn archimedean_spiral(a: f64, b: f64, theta_start: f64, theta_end: f64, delta_d: f64) -> Result<DiscretizedPath> {
    polar_path(|t| a + b * t, theta_start, theta_end, delta_d)
}

/// Logarithmic spiral `r = a exp(b theta)`, traversed from `theta_start` to `theta_end`.
pub fn log_spiral(a: f64, b: f64, theta_start: f64, theta_end: f64, delta_d: f64) -> Result<DiscretizedPath> {
    polar_path(|t| a * (b * t).exp(), theta_start, theta_end, delta_d)
}

/// Offset exponential spiral `r = a + b exp(theta)`, the form labelled
/// "archimedian" in some experiment descriptions.
pub fn offset_exp_spiral(a: f64, b: f64, theta_start: f64, theta_end: f64, delta_d: f64) -> Result<DiscretizedPath> {
    polar_path(|t| a + b * t.exp(), theta_start, theta_end, delta_d)
}

/// Circle of radius `radius` centered at `center`, `turns` revolutions,
/// sampled exactly on the circle with chord length `delta_d`.
pub fn circle_path(center: Point2, radius: f64, turns: f64, delta_d: f64) -> Result<DiscretizedPath> {
    if !(radius > 0.0 && delta_d > 0.0 && delta_d < 2.0 * radius && turns > 0.0) {
        return Err(invalid("circle needs radius > 0, turns > 0 and 0 < delta_d < 2 radius"));
    }
    let dtheta = 2.0 * (delta_d / (2.0 * radius)).asin();
    let n = (2.0 * std::f64::consts::PI * turns / dtheta).floor() as usize;
    let pts = (0..=n)
        .map(|i| {
            let t = dtheta * i as f64;
            center + Point2::new(radius * t.cos(), radius * t.sin())
        })
        .collect();
    DiscretizedPath::from_uniform_points(pts, delta_d)
}

/// Reads `x_m,y_m` waypoints (header required).
pub fn read_waypoints_csv<R: Read>(reader: R) -> Result<Vec<Point2>> {
    let mut lines = std::io::read_to_string(reader)
        .map_err(|e| invalid(format!("reading waypoints: {e}")))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect::<Vec<_>>()
        .into_iter();
    let header = lines.next().ok_or_else(|| invalid("waypoint CSV is empty"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["x_m", "y_m"] {
        return Err(invalid(format!("waypoint CSV header must be `x_m,y_m`, got `{header}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let mut it = line.split(',').map(str::trim);
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| invalid(format!("row {}: missing column", i + 2)))?
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("row {}: {e}", i + 2)))
            };
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            if it.next().is_some() {
                return Err(invalid(format!("row {}: expected 2 columns", i + 2)));
            }
            Ok(Point2::new(x, y))
        })
        .collect()
}
