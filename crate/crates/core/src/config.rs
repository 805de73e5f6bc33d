//! JSON run configuration. Units are SI and dB; field names carry the unit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, Multipath, StraightGeometry};
use crate::error::{FpdError, Result};
use crate::geometry::{
    archimedean_spiral, circle_path, log_spiral, offset_exp_spiral, read_waypoints_csv, resample_by_arc_length,
    straight_path, DiscretizedPath, Point2,
};
use crate::mc::Monitoring;

fn config(msg: impl Into<String>) -> FpdError {
    FpdError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpiralForm {
    /// `r = a + b theta`.
    #[default]
    Linear,
    /// `r = a + b exp(theta)`.
    OffsetExp,
}

/// Path description in operator-centred coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    Straight {
        d_src_m: f64,
        theta_src_rad: f64,
        /// Defaults to the horizon.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        length_m: Option<f64>,
    },
    /// `x_m,y_m` CSV, resampled by arc length. Relative paths resolve against
    /// the config file's directory.
    Waypoints { file: PathBuf },
    ArchSpiral {
        a_m: f64,
        b_m: f64,
        theta_range_rad: [f64; 2],
        #[serde(default)]
        form: SpiralForm,
    },
    LogSpiral { a_m: f64, b_per_rad: f64, theta_range_rad: [f64; 2] },
    Circle { center_m: Point2, radius_m: f64, turns: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub eps_m: f64,
    pub eps_sigma: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { eps_m: 1e-3, eps_sigma: 1e-3 }
    }
}

/// Horizon is `n_steps * delta_d` when `n_steps` is given, else `d_max_m`
/// rounded up to an even number of steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max_m: Option<f64>,
    #[serde(default = "default_m_points")]
    pub m_points: usize,
}

fn default_m_points() -> usize {
    4096
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_steps: None, d_max_m: Some(60.0), m_points: default_m_points() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub trials: usize,
    pub seed: u64,
    /// Defaults to bridge monitoring without multipath, discrete with it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitoring: Option<Monitoring>,
}

impl Default for McSpec {
    fn default() -> Self {
        Self { trials: 100_000, seed: 1, monitoring: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub channel: ChannelParams,
    pub path: PathSpec,
    #[serde(default = "default_delta_d")]
    pub delta_d_m: f64,
    /// Upcrossing margin below threshold.
    #[serde(default = "default_epsilon")]
    pub epsilon_db: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_delta_d() -> f64 {
    0.03
}

fn default_epsilon() -> f64 {
    0.1
}

impl RunConfig {
    /// Straight path `d_src = 550 m`, `theta_src = 0`, 60 m horizon.
    pub fn straight_default() -> Self {
        Self {
            channel: ChannelParams::san_francisco(),
            path: PathSpec::Straight { d_src_m: 550.0, theta_src_rad: 0.0, length_m: None },
            delta_d_m: default_delta_d(),
            epsilon_db: default_epsilon(),
            tolerances: Tolerances::default(),
            grid: GridSpec::default(),
            mc: McSpec::default(),
            base_dir: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config(format!("parsing config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Number of `delta_d` steps on the horizon.
    pub fn n_steps(&self) -> Result<usize> {
        match (self.grid.n_steps, self.grid.d_max_m) {
            (Some(n), _) if n >= 2 => Ok(n),
            (Some(n), _) => Err(config(format!("grid.n_steps must be >= 2, got {n}"))),
            (None, Some(d)) if d > 0.0 && d.is_finite() => {
                // Rounded up to even so the Simpson marching scheme applies.
                let n = ((d / self.delta_d_m - 1e-9).ceil() as usize).max(2);
                Ok(n + n % 2)
            }
            (None, Some(d)) => Err(config(format!("grid.d_max_m must be > 0, got {d}"))),
            (None, None) => Err(config("grid needs n_steps or d_max_m")),
        }
    }

    pub fn horizon_m(&self) -> Result<f64> {
        Ok(self.n_steps()? as f64 * self.delta_d_m)
    }

    /// Precondition checks; every failure is a config error.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: FpdError| if e.is_config() { config(e.to_string()) } else { e };
        self.channel.validate().map_err(as_config)?;
        if !(self.delta_d_m > 0.0 && self.delta_d_m.is_finite()) {
            return Err(config(format!("delta_d_m must be > 0, got {}", self.delta_d_m)));
        }
        if !(self.epsilon_db > 0.0 && self.epsilon_db.is_finite()) {
            return Err(config(format!("epsilon_db must be > 0, got {}", self.epsilon_db)));
        }
        let t = self.tolerances;
        if !(t.eps_m > 0.0 && t.eps_sigma > 0.0) {
            return Err(config("tolerances must be > 0"));
        }
        if self.grid.m_points < 16 {
            return Err(config("grid.m_points must be >= 16"));
        }
        if self.mc.trials < 1 {
            return Err(config("mc.trials must be >= 1"));
        }
        self.n_steps()?;
        if let PathSpec::Waypoints { file } = &self.path {
            let f = self.resolve(file);
            if !f.is_file() {
                return Err(config(format!("waypoint file {} does not exist", f.display())));
            }
        }
        Ok(())
    }

    fn resolve(&self, file: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if file.is_relative() => dir.join(file),
            _ => file.to_path_buf(),
        }
    }

    /// Discretized path covering at least the horizon.
    pub fn build_path(&self) -> Result<DiscretizedPath> {
        self.validate()?;
        let dd = self.delta_d_m;
        let horizon = self.horizon_m()?;
        let path = match &self.path {
            PathSpec::Straight { d_src_m, theta_src_rad, length_m } => {
                let g = StraightGeometry::new(*d_src_m, *theta_src_rad).map_err(|e| config(e.to_string()))?;
                straight_path(g, length_m.unwrap_or(horizon), dd)
            }
            PathSpec::Waypoints { file } => {
                let f = self.resolve(file);
                let reader = std::fs::File::open(&f).map_err(|e| config(format!("opening {}: {e}", f.display())))?;
                resample_by_arc_length(&read_waypoints_csv(reader)?, dd)
            }
            PathSpec::ArchSpiral { a_m, b_m, theta_range_rad: [t0, t1], form } => match form {
                SpiralForm::Linear => archimedean_spiral(*a_m, *b_m, *t0, *t1, dd),
                SpiralForm::OffsetExp => offset_exp_spiral(*a_m, *b_m, *t0, *t1, dd),
            },
            PathSpec::LogSpiral { a_m, b_per_rad, theta_range_rad: [t0, t1] } => {
                log_spiral(*a_m, *b_per_rad, *t0, *t1, dd)
            }
            PathSpec::Circle { center_m, radius_m, turns } => circle_path(*center_m, *radius_m, *turns, dd),
        }
        .map_err(|e| if e.is_config() { config(e.to_string()) } else { e })?;
        if path.length() + 1e-9 * horizon < horizon {
            return Err(config(format!("path length {:.3} m is shorter than the {horizon:.3} m horizon", path.length())));
        }
        Ok(path)
    }
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    SigmaShSq,
    BetaSh,
    KRic,
}

impl SweepParameter {
    /// Expected monotone direction of the expected FPD: `+1` increasing, `-1` decreasing.
    pub fn expected_direction(self) -> i8 {
        match self {
            Self::SigmaShSq => -1,
            Self::BetaSh | Self::KRic => 1,
        }
    }

    pub fn apply(self, p: &ChannelParams, value: f64) -> ChannelParams {
        let mut q = *p;
        match self {
            Self::SigmaShSq => q.sigma_sh_sq = value,
            Self::BetaSh => q.beta_sh = value,
            Self::KRic => q.multipath = Multipath::Rician { k_ric: value },
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(config("sweep needs at least one value"));
        }
        if let Some(v) = self.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(config(format!("sweep values must be > 0, got {v}")));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config(format!("parsing sweep: {e}")))
    }
}
