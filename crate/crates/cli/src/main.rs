//! `fpd`: path certification, first-passage densities, Monte Carlo validation
//! and parameter sweeps from a JSON run configuration.
//!
//! Exit codes: 0 ok, 2 certification rejection, 3 config error,
//! 4 numerical or oracle failure.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fpd_core::markov::{CurvatureBinding, PathCertificate};
use fpd_core::pipeline::{self, Prepared, RunOptions};
use fpd_core::{FpdError, Multipath, RunConfig, SweepParameter, SweepSpec};
use serde::Serialize;

const EXIT_REJECTED: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "fpd", version, about = "First-passage distance to connectivity along robot paths")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (CSV or JSON); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Compute densities for paths that fail certification.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the approximately-Markovian conditions; prints JSON diagnostics.
    Certify,
    /// Write `distance_m,pdf_per_m,cdf` rows.
    Fpd {
        /// Defaults to on when the channel config has multipath.
        #[arg(long, value_enum)]
        multipath: Option<OnOff>,
    },
    /// Compare the solver against Monte Carlo; prints a JSON report.
    Validate {
        #[arg(long, value_enum)]
        multipath: Option<OnOff>,
        /// Also dump `trial,crossing_step,crossing_distance_m,censored`.
        #[arg(long)]
        trials_out: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt_kernel: bool,
    },
    /// Expected FPD per parameter value; writes `value,expected_fpd_m,residual_mass`.
    Sweep {
        /// JSON sweep spec `{"parameter": ..., "values": [...]}`.
        #[arg(long, conflicts_with_all = ["parameter", "values"])]
        sweep: Option<PathBuf>,
        #[arg(long, value_enum, requires = "values")]
        parameter: Option<SweepParam>,
        #[arg(long, value_delimiter = ',', requires = "parameter")]
        values: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    SigmaShSq,
    BetaSh,
    KRic,
}

impl From<SweepParam> for SweepParameter {
    fn from(p: SweepParam) -> Self {
        match p {
            SweepParam::SigmaShSq => Self::SigmaShSq,
            SweepParam::BetaSh => Self::BetaSh,
            SweepParam::KRic => Self::KRic,
        }
    }
}

enum Failure {
    Rejected(String),
    Config(String),
    Numerical(String),
}

impl From<FpdError> for Failure {
    fn from(e: FpdError) -> Self {
        if e.is_config() {
            Self::Config(e.to_string())
        } else {
            Self::Numerical(e.to_string())
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Rejected(_) => EXIT_REJECTED,
            Self::Config(_) => EXIT_CONFIG,
            Self::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Rejected(m) | Self::Config(m) | Self::Numerical(m) => m,
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Serialize)]
struct CertifyOutput {
    certified: bool,
    verdict: &'static str,
    d_th_m: f64,
    kappa_th_per_m: f64,
    kappa_max_per_m: f64,
    curvature_ok: bool,
    loop_free: bool,
    first_violation_s_m: Option<[f64; 2]>,
    binding: CurvatureBinding,
    margin_per_m: f64,
    kl_only_kappa_limit_per_m: f64,
    eps_m: f64,
    eps_sigma: f64,
}

impl From<&PathCertificate> for CertifyOutput {
    fn from(c: &PathCertificate) -> Self {
        Self {
            certified: c.certified,
            verdict: if c.certified { "certified" } else { "rejected" },
            d_th_m: c.tolerance.d_th,
            kappa_th_per_m: c.tolerance.kappa_th,
            kappa_max_per_m: c.kappa_max,
            curvature_ok: c.curvature_ok,
            loop_free: c.loop_verdict.loop_free,
            first_violation_s_m: c.loop_verdict.first_violation.map(|(a, b)| [a, b]),
            binding: c.binding,
            margin_per_m: c.margin,
            kl_only_kappa_limit_per_m: c.kl_only_kappa_limit,
            eps_m: c.tolerance.eps_m,
            eps_sigma: c.tolerance.eps_sigma,
        }
    }
}

fn rejection_message(c: &PathCertificate) -> String {
    let mut parts = Vec::new();
    if !c.curvature_ok {
        parts.push(format!(
            "curvature {:.4} 1/m exceeds kappa_th {:.4} 1/m",
            c.kappa_max, c.tolerance.kappa_th
        ));
    }
    if !c.loop_verdict.loop_free {
        match c.loop_verdict.first_violation {
            Some((a, b)) => parts.push(format!("path re-enters the d_th ball: s = {a:.3} m near s = {b:.3} m")),
            None => parts.push("path is not d_th-loop-free".into()),
        }
    }
    format!("path rejected: {}", parts.join("; "))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let path = path.ok_or_else(|| Failure::Config("--config <file> is required".into()))?;
    let cfg = RunConfig::from_file(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match out {
        Some(p) => File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Failure::Config(format!("creating {}: {e}", p.display()))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn io_failure(e: impl std::fmt::Display) -> Failure {
    Failure::Numerical(format!("writing output: {e}"))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(io_failure)?;
    writeln!(io::stdout().lock(), "{text}").map_err(io_failure)?;
    if let Some(p) = out {
        std::fs::write(p, format!("{text}\n")).map_err(io_failure)?;
    }
    Ok(())
}

fn write_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, w: Box<dyn Write>) -> CmdResult {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(io_failure)?;
    }
    wtr.flush().map_err(io_failure)
}

fn multipath_mode(flag: Option<OnOff>, cfg: &RunConfig) -> bool {
    match flag {
        Some(OnOff::On) => true,
        Some(OnOff::Off) => false,
        None => cfg.channel.multipath != Multipath::None,
    }
}

fn cmd_certify(cli: &Cli) -> CmdResult {
    let cfg = load_config(cli.config.as_deref())?;
    let cert = pipeline::certify(&Prepared::new(&cfg)?)?;
    write_json(&CertifyOutput::from(&cert), cli.out.as_deref())?;
    if cert.certified {
        Ok(())
    } else {
        Err(Failure::Rejected(rejection_message(&cert)))
    }
}

fn cmd_fpd(cli: &Cli, multipath: Option<OnOff>) -> CmdResult {
    let cfg = load_config(cli.config.as_deref())?;
    let prep = Prepared::new(&cfg)?;
    let cert = pipeline::certify(&prep)?;
    if !cert.certified {
        if !cli.force {
            return Err(Failure::Rejected(format!("{} (use --force to compute anyway)", rejection_message(&cert))));
        }
        eprintln!("warning: {}; continuing because of --force", rejection_message(&cert));
    }
    let opts = RunOptions { multipath: multipath_mode(multipath, &cfg), corrupt_kernel: false };
    let fpd = pipeline::density(&prep, opts)?;
    let e = fpd.expected();
    eprintln!(
        "expected_fpd_m={:.6} residual_mass={:.6e} horizon_m={}",
        e.expected_fpd_m,
        e.residual_mass,
        prep.horizon_m()
    );
    write_csv(fpd.rows(), open_out(cli.out.as_deref())?)
}

fn cmd_validate(cli: &Cli, multipath: Option<OnOff>, trials_out: Option<&Path>, corrupt_kernel: bool) -> CmdResult {
    let cfg = load_config(cli.config.as_deref())?;
    let prep = Prepared::new(&cfg)?;
    let opts = RunOptions { multipath: multipath_mode(multipath, &cfg), corrupt_kernel };
    let (report, records) = pipeline::validate_with_trials(&prep, opts)?;
    write_json(&report, cli.out.as_deref())?;
    if let Some(p) = trials_out {
        let f = File::create(p).map_err(|e| Failure::Config(format!("creating {}: {e}", p.display())))?;
        let rows = records.iter().filter_map(|r| r.csv_row(cfg.delta_d_m, report.monitoring));
        write_csv(rows, Box::new(io::BufWriter::new(f)))?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("validation failed: KS {:.4} >= {}", report.ks, report.threshold)))
    }
}

fn cmd_sweep(cli: &Cli, sweep: Option<&Path>, parameter: Option<SweepParam>, values: Option<&[f64]>) -> CmdResult {
    let cfg = load_config(cli.config.as_deref())?;
    let spec = match (sweep, parameter, values) {
        (Some(p), _, _) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("reading {}: {e}", p.display())))?;
            SweepSpec::from_json_str(&text)?
        }
        (None, Some(parameter), Some(values)) => SweepSpec { parameter: parameter.into(), values: values.to_vec() },
        _ => return Err(Failure::Config("sweep needs --sweep <file> or --parameter with --values".into())),
    };
    let report = pipeline::sweep(&cfg, &spec)?;
    write_csv(report.rows.iter(), open_out(cli.out.as_deref())?)?;
    if report.monotone_as_expected {
        Ok(())
    } else {
        let dir = if spec.parameter.expected_direction() > 0 { "increasing" } else { "decreasing" };
        Err(Failure::Numerical(format!("expected FPD is not strictly {dir} in {:?}", spec.parameter)))
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Certify => cmd_certify(cli),
        Command::Fpd { multipath } => cmd_fpd(cli, *multipath),
        Command::Validate { multipath, trials_out, corrupt_kernel } => {
            cmd_validate(cli, *multipath, trials_out.as_deref(), *corrupt_kernel)
        }
        Command::Sweep { sweep, parameter, values } => cmd_sweep(cli, sweep.as_deref(), *parameter, values.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fpd: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
