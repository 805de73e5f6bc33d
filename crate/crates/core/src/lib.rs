//! First-passage distance of a robot's channel power below a connectivity threshold
//! under correlated shadowing and Rician multipath.
pub mod channel;
pub mod config;
pub mod error;
pub mod geometry;
pub mod markov;
pub mod mc;
pub mod multipath;
pub mod pipeline;
pub mod special;
pub mod volterra;

pub use channel::{ChannelParams, Multipath, PathLossProfile, StraightGeometry};
pub use config::{GridSpec, McSpec, PathSpec, RunConfig, SweepParameter, SweepSpec, Tolerances};
pub use error::{FpdError, Result};
pub use geometry::{DiscretizedPath, Point2};
pub use markov::{MarkovTolerance, PathCertificate};
pub use mc::{EmpiricalFpd, McConfig, Monitoring};
pub use multipath::{FirstPassagePmf, RecursionConfig};
pub use pipeline::{AnalyticFpd, Prepared, RunOptions, Solver};
pub use volterra::{FpdDensity, VolterraGrid};
