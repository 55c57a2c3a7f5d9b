// Copyright 2026 The crossband Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Experiment runner for the cross-band modulation toolkit.
//!
//! Every subcommand emits CSV with a self-describing schema; the same
//! config and seed always reproduce identical output bytes (the timestamp
//! header is suppressible with `--no-timestamp`).

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crossband::analysis::{mi_lgcb, sep_approx_linear, sep_upper_bound, LgcbParams};
use crossband::estimate::{
    mi_continuous_nested, mi_discrete, run_confusion, sep_from_confusion, sep_stderr,
    ContinuousInputSpec, DetectorChoice,
};
use crossband::linopt::solve_p1;
use crossband::shaping::{train_shaper, LearnedConstellation, ShapingConfig};
use crossband::{Constellation3D, LinearMap, LinkSnr, QamGrid};

/// Machine-readable failure: printed to stderr as one JSON line.
#[derive(Debug)]
struct CliError {
    code: &'static str,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: "invalid-config", message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: "runtime", message: message.into() }
    }

    fn schema(message: impl Into<String>) -> Self {
        Self { code: "schema", message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Self { code: "io", message: message.into() }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "crossband", version, about = "Cross-band modulation experiment runner")]
struct Cli {
    /// JSON experiment config; CLI flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Quick mode: 10^6 Monte Carlo symbols instead of 10^7.
    #[arg(long, global = true)]
    quick: bool,

    /// Omit the timestamp header line for byte-reproducible files.
    #[arg(long, global = true)]
    no_timestamp: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo metric sweep over gamma1 for one scheme.
    Simulate(SweepArgs),
    /// Max-min mapping-angle optimization over a gamma1 sweep.
    OptimizeLinear(SweepArgs),
    /// Train the learned constellation at one SNR point and export it.
    ShapeDnn(ShapeArgs),
    /// Closed-form Gaussian-benchmark mutual information sweep.
    MiClosedForm(SweepArgs),
    /// Nested Monte Carlo mutual information for continuous inputs.
    MiContinuous(SweepArgs),
    /// Closed-form symbol-error approximation (or upper bound) sweep.
    SepApprox(SweepArgs),
    /// Export a constellation as CSV plus a JSON sidecar.
    ExportConstellation(ExportArgs),
    /// Horizontal dB gaps between two sweep files at target SEP levels.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    /// Scheme: linear | dnn-gen | mcbm | cbpam | lgcb | lxcb.
    #[arg(long)]
    scheme: Option<String>,

    /// Constellation order.
    #[arg(long)]
    m: Option<usize>,

    /// gamma1^2 sweep in dB: comma list ("0,5,10") or range ("0:25:1").
    #[arg(long, allow_hyphen_values = true)]
    gamma1_db: Option<String>,

    /// gamma2^2 in dB.
    #[arg(long, allow_hyphen_values = true)]
    gamma2_db: Option<f64>,

    /// Monte Carlo symbols per sweep point.
    #[arg(long)]
    n: Option<u64>,

    /// Detector: fast | ml.
    #[arg(long)]
    detector: Option<String>,

    /// Comma-separated metrics (simulate): sep-mc, sep-approx, mi-discrete.
    #[arg(long)]
    metrics: Option<String>,

    /// DC bias for continuous-input benchmarks.
    #[arg(long)]
    i_d: Option<f64>,

    /// Emit the union bound instead of the two-term approximation.
    #[arg(long)]
    bound: bool,

    /// Output CSV path (stdout when omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ShapeArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    gamma1_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma2_db: Option<f64>,
    /// Fine-tuning step budget.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Output prefix: writes <prefix>.csv, <prefix>.json, <prefix>.network.json.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ExportArgs {
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    gamma1_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma2_db: Option<f64>,
    /// Fixed mapping angle in radians; defaults to the optimized angle.
    #[arg(long)]
    theta: Option<f64>,
    /// Output prefix: writes <prefix>.csv and <prefix>.json.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct CompareArgs {
    /// Baseline sweep CSV (from `simulate`).
    #[arg(long)]
    baseline: PathBuf,
    /// Candidate sweep CSV.
    #[arg(long)]
    candidate: PathBuf,
    /// Metric column to compare.
    #[arg(long, default_value = "sep-mc")]
    metric: String,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// On-disk experiment description; any field may be overridden by a flag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentConfig {
    scheme: Option<String>,
    m: Option<usize>,
    gamma1_db: Option<SweepSpec>,
    gamma2_db: Option<f64>,
    n: Option<u64>,
    n_outer: Option<u64>,
    n_inner: Option<u64>,
    n_theta: Option<usize>,
    seed: Option<u64>,
    detector: Option<String>,
    metrics: Option<Vec<String>>,
    i_d: Option<f64>,
    theta: Option<f64>,
    shaping: Option<ShapingOverrides>,
    output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SweepSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl SweepSpec {
    fn values(&self) -> CliResult<Vec<f64>> {
        let v = match self {
            SweepSpec::List(v) => v.clone(),
            SweepSpec::Range { start, stop, step } => {
                if *step <= 0.0 || !step.is_finite() {
                    return Err(CliError::config(format!("sweep step must be > 0, got {step}")));
                }
                let count = ((stop - start) / step).round() as i64;
                (0..=count.max(0)).map(|i| start + i as f64 * step).collect()
            }
        };
        if v.is_empty() {
            return Err(CliError::config("gamma1_db sweep is empty"));
        }
        Ok(v)
    }
}

impl FromStr for SweepSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("bad sweep number {t:?}")))
        };
        if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(CliError::config(format!("range must be start:stop:step, got {s:?}")));
            }
            Ok(SweepSpec::Range {
                start: parse(parts[0])?,
                stop: parse(parts[1])?,
                step: parse(parts[2])?,
            })
        } else {
            Ok(SweepSpec::List(s.split(',').map(parse).collect::<CliResult<_>>()?))
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ShapingOverrides {
    kappa: Option<f64>,
    lambda: Option<f64>,
    learning_rate: Option<f64>,
    steps: Option<usize>,
    restarts: Option<usize>,
    hidden: Option<usize>,
}

impl ShapingOverrides {
    fn apply(&self, cfg: &mut ShapingConfig) {
        if let Some(v) = self.kappa {
            cfg.kappa = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.restarts {
            cfg.restarts = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Linear,
    DnnGen,
    Mcbm,
    Cbpam,
    Lgcb,
    Lxcb,
}

impl Scheme {
    fn as_str(self) -> &'static str {
        match self {
            Scheme::Linear => "linear",
            Scheme::DnnGen => "dnn-gen",
            Scheme::Mcbm => "mcbm",
            Scheme::Cbpam => "cbpam",
            Scheme::Lgcb => "lgcb",
            Scheme::Lxcb => "lxcb",
        }
    }

    fn is_discrete(self) -> bool {
        !matches!(self, Scheme::Lgcb | Scheme::Lxcb)
    }
}

impl FromStr for Scheme {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "linear" => Ok(Scheme::Linear),
            "dnn-gen" => Ok(Scheme::DnnGen),
            "mcbm" => Ok(Scheme::Mcbm),
            "cbpam" => Ok(Scheme::Cbpam),
            "lgcb" => Ok(Scheme::Lgcb),
            "lxcb" => Ok(Scheme::Lxcb),
            other => Err(CliError::config(format!(
                "unknown scheme {other:?}; expected linear|dnn-gen|mcbm|cbpam|lgcb|lxcb"
            ))),
        }
    }
}

/// Fully resolved settings: config file overlaid by flags overlaid by defaults.
struct Resolved {
    scheme: Scheme,
    m: usize,
    gamma1_db: Vec<f64>,
    gamma2_db: f64,
    n: u64,
    n_outer: u64,
    n_inner: u64,
    n_theta: usize,
    seed: u64,
    detector: DetectorChoice,
    metrics: Vec<String>,
    i_d: f64,
    theta: Option<f64>,
    shaping: ShapingOverrides,
    output: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> CliResult<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn resolve(cli: &Cli, args: &SweepArgs, mi_axis: bool) -> CliResult<Resolved> {
    let file = load_config(&cli.config)?;
    let scheme: Scheme = args
        .scheme
        .clone()
        .or(file.scheme.clone())
        .unwrap_or_else(|| "linear".to_string())
        .parse()?;
    let m = args.m.or(file.m).unwrap_or(16);
    if !(m >= 4 && (m as f64).sqrt().fract() == 0.0) {
        return Err(CliError::config(format!("m must be a square >= 4, got {m}")));
    }
    let sweep = match &args.gamma1_db {
        Some(s) => s.parse::<SweepSpec>()?,
        None => file.gamma1_db.clone().unwrap_or(if mi_axis {
            SweepSpec::Range { start: -20.0, stop: 20.0, step: 2.0 }
        } else {
            SweepSpec::Range { start: 0.0, stop: 34.0, step: 2.0 }
        }),
    };
    let n_default = if cli.quick { 1_000_000 } else { 10_000_000 };
    let detector = match args
        .detector
        .clone()
        .or(file.detector.clone())
        .unwrap_or_else(|| if scheme == Scheme::Linear { "fast" } else { "ml" }.to_string())
        .as_str()
    {
        "fast" => DetectorChoice::Fast,
        "ml" => DetectorChoice::Ml,
        other => {
            return Err(CliError::config(format!("unknown detector {other:?}; expected fast|ml")))
        }
    };
    let metrics = match &args.metrics {
        Some(s) => s.split(',').map(|t| t.trim().to_string()).collect(),
        None => file.metrics.clone().unwrap_or_else(|| vec!["sep-mc".to_string()]),
    };
    Ok(Resolved {
        scheme,
        m,
        gamma1_db: sweep.values()?,
        gamma2_db: args.gamma2_db.or(file.gamma2_db).unwrap_or(10.0),
        n: args.n.or(file.n).unwrap_or(n_default),
        n_outer: file.n_outer.unwrap_or(if cli.quick { 5_000 } else { 20_000 }),
        n_inner: file.n_inner.unwrap_or(if cli.quick { 5_000 } else { 20_000 }),
        n_theta: file.n_theta.unwrap_or(4096),
        seed: cli.seed.or(file.seed).unwrap_or(1),
        detector,
        metrics,
        i_d: args.i_d.or(file.i_d).unwrap_or(0.0),
        theta: file.theta,
        shaping: file.shaping.clone().unwrap_or_default(),
        output: args.output.clone().or(file.output.as_ref().map(PathBuf::from)),
    })
}

fn emit(output: &Option<PathBuf>, no_timestamp: bool, header: &str, body: &str) -> CliResult<()> {
    let mut text = String::new();
    if !no_timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(text, "# generated-at-unix {secs}").unwrap();
    }
    text.push_str(header);
    text.push('\n');
    text.push_str(body);
    match output {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(p) => fs::write(p, &text)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", p.display()))),
    }
}

/// Builds the discrete constellation for one sweep point; linear and learned
/// schemes are re-optimized at each point.
fn build_discrete(
    scheme: Scheme,
    m: usize,
    snr: LinkSnr,
    seed: u64,
    n_theta: usize,
    theta: Option<f64>,
    shaping: &ShapingOverrides,
) -> CliResult<(Constellation3D, Option<f64>)> {
    let grid = QamGrid::new(m).map_err(|e| CliError::config(e.to_string()))?;
    match scheme {
        Scheme::Linear => {
            let th = match theta {
                Some(t) => t,
                None => {
                    solve_p1(&grid, snr, n_theta)
                        .map_err(|e| CliError::runtime(e.to_string()))?
                        .theta_star
                }
            };
            let map = LinearMap::new(&grid, th).map_err(|e| CliError::config(e.to_string()))?;
            Ok((Constellation3D::linear(&grid, map), Some(th)))
        }
        Scheme::DnnGen => {
            let learned = train_dnn(&grid, snr, seed, shaping)?;
            let c = Constellation3D::learned(&grid, &learned.intensities)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            Ok((c, None))
        }
        Scheme::Mcbm => Ok((Constellation3D::mcbm(&grid), None)),
        Scheme::Cbpam => {
            let c = Constellation3D::cbpam(m).map_err(|e| CliError::config(e.to_string()))?;
            Ok((c, None))
        }
        Scheme::Lgcb | Scheme::Lxcb => Err(CliError::config(format!(
            "scheme {} has no discrete constellation; use mi-closed-form or mi-continuous",
            scheme.as_str()
        ))),
    }
}

fn train_dnn(
    grid: &QamGrid,
    snr: LinkSnr,
    seed: u64,
    overrides: &ShapingOverrides,
) -> CliResult<LearnedConstellation> {
    let mut cfg = ShapingConfig::new(snr, seed);
    overrides.apply(&mut cfg);
    train_shaper(grid, &cfg).map_err(|e| CliError::runtime(e.to_string()))
}

const SWEEP_HEADER: &str = "scheme,gamma1_db,gamma2_db,metric,value,stderr,n,seed";

fn cmd_simulate(cli: &Cli, args: &SweepArgs) -> CliResult<()> {
    let r = resolve(cli, args, false)?;
    if !r.scheme.is_discrete() {
        return Err(CliError::config(format!(
            "simulate needs a discrete scheme, got {}",
            r.scheme.as_str()
        )));
    }
    let wants_mc = r.metrics.iter().any(|m| m == "sep-mc" || m == "mi-discrete");
    if wants_mc && r.metrics.iter().any(|m| m == "sep-mc") && r.n < 10_000 {
        return Err(CliError::config(format!("n must be >= 10000 for SEP runs, got {}", r.n)));
    }
    for m in &r.metrics {
        if !matches!(m.as_str(), "sep-mc" | "sep-approx" | "mi-discrete") {
            return Err(CliError::config(format!("unknown simulate metric {m:?}")));
        }
    }
    if r.scheme != Scheme::Linear {
        if r.detector == DetectorChoice::Fast {
            return Err(CliError::config(
                "the fast detector only applies to the linear scheme; use --detector ml",
            ));
        }
        if r.metrics.iter().any(|m| m == "sep-approx") {
            return Err(CliError::config("sep-approx only applies to the linear scheme"));
        }
    }

    let mut body = String::new();
    for &g1 in &r.gamma1_db {
        let snr = LinkSnr::from_db(g1, r.gamma2_db).map_err(|e| CliError::config(e.to_string()))?;
        let (c, _) =
            build_discrete(r.scheme, r.m, snr, r.seed, r.n_theta, r.theta, &r.shaping)?;
        let cm = if wants_mc {
            Some(
                run_confusion(&c, snr, r.n, r.seed, r.detector)
                    .map_err(|e| CliError::runtime(e.to_string()))?,
            )
        } else {
            None
        };
        for metric in &r.metrics {
            let (value, stderr, n) = match metric.as_str() {
                "sep-mc" => {
                    let cm = cm.as_ref().unwrap();
                    (sep_from_confusion(cm), sep_stderr(cm), r.n)
                }
                "mi-discrete" => {
                    let cm = cm.as_ref().unwrap();
                    (mi_discrete(cm), 0.0, r.n)
                }
                "sep-approx" => {
                    let grid = QamGrid::new(r.m).map_err(|e| CliError::config(e.to_string()))?;
                    let sol = solve_p1(&grid, snr, r.n_theta)
                        .map_err(|e| CliError::runtime(e.to_string()))?;
                    (sep_approx_linear(&sol, r.m), 0.0, 0)
                }
                _ => unreachable!(),
            };
            writeln!(
                body,
                "{},{g1},{},{metric},{value},{stderr},{n},{}",
                r.scheme.as_str(),
                r.gamma2_db,
                r.seed
            )
            .unwrap();
        }
    }
    emit(&r.output, cli.no_timestamp, SWEEP_HEADER, &body)
}

fn cmd_optimize_linear(cli: &Cli, args: &SweepArgs) -> CliResult<()> {
    let r = resolve(cli, args, false)?;
    let grid = QamGrid::new(r.m).map_err(|e| CliError::config(e.to_string()))?;
    let mut body = String::new();
    for &g1 in &r.gamma1_db {
        let snr = LinkSnr::from_db(g1, r.gamma2_db).map_err(|e| CliError::config(e.to_string()))?;
        let sol = solve_p1(&grid, snr, r.n_theta).map_err(|e| CliError::runtime(e.to_string()))?;
        writeln!(
            body,
            "{g1},{},{},{},{},{},{},{},{}",
            r.gamma2_db,
            sol.theta_star,
            sol.first.k1,
            sol.first.k2,
            sol.second.k1,
            sol.second.k2,
            sol.dmin,
            sol.dsecond
        )
        .unwrap();
    }
    emit(
        &r.output,
        cli.no_timestamp,
        "gamma1_db,gamma2_db,theta_star,k1,k2,k1p,k2p,dmin,dsecond",
        &body,
    )
}

fn cmd_mi_closed_form(cli: &Cli, args: &SweepArgs) -> CliResult<()> {
    let r = resolve(cli, args, true)?;
    let mut body = String::new();
    for &g1 in &r.gamma1_db {
        let snr = LinkSnr::from_db(g1, r.gamma2_db).map_err(|e| CliError::config(e.to_string()))?;
        let p = LgcbParams::new(1.0, 1.0, 1.0, 1.0 / snr.gamma1_sq, 1.0 / snr.gamma2_sq, r.i_d)
            .map_err(|e| CliError::config(e.to_string()))?;
        let mi = mi_lgcb(&p).map_err(|e| CliError::runtime(e.to_string()))?;
        writeln!(body, "{g1},{},{mi}", r.gamma2_db).unwrap();
    }
    emit(&r.output, cli.no_timestamp, "gamma1_db,gamma2_db,value", &body)
}

fn cmd_mi_continuous(cli: &Cli, args: &SweepArgs) -> CliResult<()> {
    let r = resolve(cli, args, true)?;
    let spec = match r.scheme {
        Scheme::Lgcb => ContinuousInputSpec::gaussian(1.0, 1.0, 1.0, r.i_d),
        Scheme::Lxcb => ContinuousInputSpec::exponential_optical(1.0),
        other => {
            return Err(CliError::config(format!(
                "mi-continuous needs scheme lgcb or lxcb, got {}",
                other.as_str()
            )))
        }
    };
    let mut body = String::new();
    for &g1 in &r.gamma1_db {
        let snr = LinkSnr::from_db(g1, r.gamma2_db).map_err(|e| CliError::config(e.to_string()))?;
        let (mi, se) = mi_continuous_nested(&spec, snr, r.n_outer, r.n_inner, r.seed)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        writeln!(
            body,
            "{},{g1},{},mi-continuous,{mi},{se},{},{}",
            r.scheme.as_str(),
            r.gamma2_db,
            r.n_outer,
            r.seed
        )
        .unwrap();
    }
    emit(&r.output, cli.no_timestamp, SWEEP_HEADER, &body)
}

fn cmd_sep_approx(cli: &Cli, args: &SweepArgs) -> CliResult<()> {
    let r = resolve(cli, args, false)?;
    let grid = QamGrid::new(r.m).map_err(|e| CliError::config(e.to_string()))?;
    let mut body = String::new();
    for &g1 in &r.gamma1_db {
        let snr = LinkSnr::from_db(g1, r.gamma2_db).map_err(|e| CliError::config(e.to_string()))?;
        let value = if args.bound {
            // The bound is derived at theta = pi/4; use that map's DC bias.
            let map = LinearMap::new(&grid, std::f64::consts::FRAC_PI_4)
                .map_err(|e| CliError::config(e.to_string()))?;
            sep_upper_bound(snr, map.i_d, r.m)
        } else {
            let sol =
                solve_p1(&grid, snr, r.n_theta).map_err(|e| CliError::runtime(e.to_string()))?;
            sep_approx_linear(&sol, r.m)
        };
        writeln!(body, "{g1},{},{value}", r.gamma2_db).unwrap();
    }
    emit(&r.output, cli.no_timestamp, "gamma1_db,gamma2_db,value", &body)
}

fn cmd_shape_dnn(cli: &Cli, args: &ShapeArgs) -> CliResult<()> {
    let file = load_config(&cli.config)?;
    let m = args.m.or(file.m).unwrap_or(16);
    let g1 = args.gamma1_db.unwrap_or(12.0);
    let g2 = args.gamma2_db.or(file.gamma2_db).unwrap_or(20.0);
    let seed = cli.seed.or(file.seed).unwrap_or(1);
    let snr = LinkSnr::from_db(g1, g2).map_err(|e| CliError::config(e.to_string()))?;
    let grid = QamGrid::new(m).map_err(|e| CliError::config(e.to_string()))?;
    let mut overrides = file.shaping.unwrap_or_default();
    if args.steps.is_some() {
        overrides.steps = args.steps;
    }
    if args.restarts.is_some() {
        overrides.restarts = args.restarts;
    }
    if args.hidden.is_some() {
        overrides.hidden = args.hidden;
    }
    if args.kappa.is_some() {
        overrides.kappa = args.kappa;
    }
    if args.lambda.is_some() {
        overrides.lambda = args.lambda;
    }
    if args.learning_rate.is_some() {
        overrides.learning_rate = args.learning_rate;
    }
    if cli.quick && overrides.steps.is_none() {
        overrides.steps = Some(2_000);
        overrides.restarts = overrides.restarts.or(Some(2));
    }
    let learned = train_dnn(&grid, snr, seed, &overrides)?;
    let c = Constellation3D::learned(&grid, &learned.intensities)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    let prefix = args.output.display();
    let write = |suffix: &str, data: &str| -> CliResult<()> {
        let path = PathBuf::from(format!("{prefix}{suffix}"));
        fs::write(&path, data)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
    };
    write(".csv", &c.to_csv())?;
    write(".json", &c.sidecar_json())?;
    write(".network.json", &learned.network_json())?;
    println!(
        "trained scheme=dnn-gen m={m} gamma1_db={g1} gamma2_db={g2} seed={seed} \
         loss_distance={} loss_energy={} loss_total={}",
        learned.loss_distance, learned.loss_energy, learned.loss_total
    );
    Ok(())
}

fn cmd_export_constellation(cli: &Cli, args: &ExportArgs) -> CliResult<()> {
    let file = load_config(&cli.config)?;
    let scheme: Scheme = args
        .scheme
        .clone()
        .or(file.scheme.clone())
        .unwrap_or_else(|| "linear".to_string())
        .parse()?;
    let m = args.m.or(file.m).unwrap_or(16);
    let g1 = args.gamma1_db.unwrap_or(10.0);
    let g2 = args.gamma2_db.or(file.gamma2_db).unwrap_or(10.0);
    let seed = cli.seed.or(file.seed).unwrap_or(1);
    let snr = LinkSnr::from_db(g1, g2).map_err(|e| CliError::config(e.to_string()))?;
    let theta = args.theta.or(file.theta);
    let shaping = file.shaping.unwrap_or_default();
    let (c, _) = build_discrete(scheme, m, snr, seed, file.n_theta.unwrap_or(4096), theta, &shaping)?;

    let prefix = args.output.display();
    let csv_path = PathBuf::from(format!("{prefix}.csv"));
    fs::write(&csv_path, c.to_csv())
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", csv_path.display())))?;
    let json_path = PathBuf::from(format!("{prefix}.json"));
    fs::write(&json_path, c.sidecar_json())
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", json_path.display())))?;
    Ok(())
}

/// One curve from a sweep CSV: (gamma1_db, value) sorted by gamma1.
fn read_curve(path: &PathBuf, metric: &str) -> CliResult<(f64, Vec<(f64, f64)>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| CliError::schema("empty CSV"))?;
    if header != SWEEP_HEADER {
        return Err(CliError::schema(format!(
            "{}: expected header {SWEEP_HEADER:?}, got {header:?}",
            path.display()
        )));
    }
    let mut gamma2 = None;
    let mut curve = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(CliError::schema(format!("{}: bad row {line:?}", path.display())));
        }
        if f[3] != metric {
            continue;
        }
        let g1: f64 = f[1]
            .parse()
            .map_err(|_| CliError::schema(format!("bad gamma1_db {:?}", f[1])))?;
        let g2: f64 = f[2]
            .parse()
            .map_err(|_| CliError::schema(format!("bad gamma2_db {:?}", f[2])))?;
        let v: f64 =
            f[4].parse().map_err(|_| CliError::schema(format!("bad value {:?}", f[4])))?;
        match gamma2 {
            None => gamma2 = Some(g2),
            Some(prev) if prev != g2 => {
                return Err(CliError::schema(format!(
                    "{}: mixed gamma2_db values {prev} and {g2}",
                    path.display()
                )))
            }
            _ => {}
        }
        curve.push((g1, v));
    }
    if curve.is_empty() {
        return Err(CliError::schema(format!(
            "{}: no rows with metric {metric:?}",
            path.display()
        )));
    }
    curve.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok((gamma2.unwrap(), curve))
}

/// SNR (dB) at which a monotone-decreasing curve crosses `target`, by linear
/// interpolation of gamma1_db against log10(value).
fn crossing_db(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    let lt = target.log10();
    for w in curve.windows(2) {
        let (g0, v0) = w[0];
        let (g1, v1) = w[1];
        if v0 <= 0.0 || v1 <= 0.0 {
            continue;
        }
        let (l0, l1) = (v0.log10(), v1.log10());
        if (l0 - lt) * (l1 - lt) <= 0.0 && l0 != l1 {
            return Some(g0 + (g1 - g0) * (lt - l0) / (l1 - l0));
        }
    }
    None
}

fn cmd_compare(cli: &Cli, args: &CompareArgs) -> CliResult<()> {
    let (g2_base, base) = read_curve(&args.baseline, &args.metric)?;
    let (g2_cand, cand) = read_curve(&args.candidate, &args.metric)?;
    if g2_base != g2_cand {
        return Err(CliError::schema(format!(
            "gamma2_db mismatch: baseline {g2_base}, candidate {g2_cand}"
        )));
    }
    let mut body = String::new();
    for target in [1e-2, 1e-3] {
        let b = crossing_db(&base, target);
        let c = crossing_db(&cand, target);
        let gap = match (b, c) {
            (Some(b), Some(c)) => format!("{}", b - c),
            _ => "NaN".to_string(),
        };
        let fmt = |x: Option<f64>| x.map_or("NaN".to_string(), |v| format!("{v}"));
        writeln!(body, "{},{target},{},{},{gap}", args.metric, fmt(b), fmt(c)).unwrap();
    }
    emit(
        &args.output,
        cli.no_timestamp,
        "metric,target,baseline_db,candidate_db,gap_db",
        &body,
    )
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(w) = cli.workers {
        let threads = if w == 0 { num_threads_default() } else { w };
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::OptimizeLinear(a) => cmd_optimize_linear(cli, a),
        Command::ShapeDnn(a) => cmd_shape_dnn(cli, a),
        Command::MiClosedForm(a) => cmd_mi_closed_form(cli, a),
        Command::MiContinuous(a) => cmd_mi_continuous(cli, a),
        Command::SepApprox(a) => cmd_sep_approx(cli, a),
        Command::ExportConstellation(a) => cmd_export_constellation(cli, a),
        Command::Compare(a) => cmd_compare(cli, a),
    }
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!(
            "error: {}",
            serde_json::json!({ "code": e.code, "message": e.message })
        );
        std::process::exit(if e.code == "invalid-config" { 2 } else { 1 });
    }
}
