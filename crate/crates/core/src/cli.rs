//! Command-line front end: option resolution (flags over a key=value file),
//! command execution and the CSV/pretty table writers.

use std::collections::HashMap;
use std::f64::consts::E;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bounds::{
    exp_curve, exp_sup_curve, lower_clt_curve, lower_q1_curve, power_curve, power_sup_curve,
    BoundConfig, BoundCurve, BoundFamily, CurveN, DEFAULT_B_GRID, DEFAULT_KR,
};
use crate::dist::DistributionModel;
use crate::error::{Error, Result};
use crate::gls::{bphi_norm, bphi_tail_bound, gls_norm, gls_tail_bound, PhiFunction, PsiFunction};
use crate::mc::{empirical_tail, verify_bounds, with_workers, CellCheck, CheckStatus, MCConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// CSV columns, in output order.
pub const HEADER: [&str; 12] = [
    "dist",
    "n",
    "B",
    "family",
    "value",
    "optimizer",
    "theta_or_p_star",
    "n_star",
    "mc_point",
    "mc_ci_lo",
    "mc_ci_hi",
    "status",
];

/// Keys accepted in a config file; identical to the long flag names.
pub const CONFIG_KEYS: [&str; 15] = [
    "dist",
    "n",
    "B",
    "n-sup",
    "trials",
    "seed",
    "kr",
    "confidence",
    "chunk-size",
    "output",
    "format",
    "threads",
    "psi",
    "phi",
    "bound-scale",
];

#[derive(Parser, Debug)]
#[command(
    name = "selfnorm",
    version,
    about = "Tail bounds for self-normalized sums, checked against simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Exponential-level upper bounds
    BoundExp(Opts),
    /// Power-level upper bounds (B >= e; smaller B rows are marked SKIP)
    BoundPower(Opts),
    /// Lower bounds: Q_1(B) and the normal-limit values
    BoundLower(Opts),
    /// All bound families plus Monte Carlo, checked, in one table
    Sweep(Opts),
    /// Monte Carlo tail estimates only
    Mc(Opts),
    /// Check every bound against Monte Carlo; exit 1 on any FAIL
    Verify(Opts),
    /// Norm and tail bounds for a chosen psi or phi generator
    Gls(Opts),
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::BoundExp(_) => CommandKind::BoundExp,
            Command::BoundPower(_) => CommandKind::BoundPower,
            Command::BoundLower(_) => CommandKind::BoundLower,
            Command::Sweep(_) => CommandKind::Sweep,
            Command::Mc(_) => CommandKind::Mc,
            Command::Verify(_) => CommandKind::Verify,
            Command::Gls(_) => CommandKind::Gls,
        }
    }

    pub fn opts(&self) -> &Opts {
        match self {
            Command::BoundExp(o)
            | Command::BoundPower(o)
            | Command::BoundLower(o)
            | Command::Sweep(o)
            | Command::Mc(o)
            | Command::Verify(o)
            | Command::Gls(o) => o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    BoundExp,
    BoundPower,
    BoundLower,
    Sweep,
    Mc,
    Verify,
    Gls,
}

/// Raw option values. Everything is kept as text so that flags and config
/// file entries go through the same parser and error reporting.
#[derive(Args, Debug, Clone, Default)]
pub struct Opts {
    /// rademacher | gaussian | uniform:a=<a> | discrete:v1:p1,v2:p2,... | empirical:<path>
    #[arg(long)]
    pub dist: Option<String>,
    /// Comma-separated sample sizes [default: 1]
    #[arg(long)]
    pub n: Option<String>,
    /// Comma-separated thresholds; `e` is accepted [default: 0.25,0.5,1,1.5,2,e,3,5,10,20,50]
    #[arg(long = "B", value_name = "B")]
    pub b: Option<String>,
    /// Also report the maximum over n in LO:HI
    #[arg(long = "n-sup", value_name = "LO:HI")]
    pub n_sup: Option<String>,
    /// Monte Carlo trials per n [default: 1000000]
    #[arg(long)]
    pub trials: Option<String>,
    /// Monte Carlo seed [default: 0]
    #[arg(long)]
    pub seed: Option<String>,
    /// Rosenthal constant [default: 0.6379]
    #[arg(long)]
    pub kr: Option<String>,
    /// Confidence level of the Monte Carlo intervals [default: 0.999]
    #[arg(long)]
    pub confidence: Option<String>,
    /// Trials per random stream [default: 65536]
    #[arg(long = "chunk-size")]
    pub chunk_size: Option<String>,
    /// Output file [default: stdout]
    #[arg(long)]
    pub output: Option<String>,
    /// csv | pretty [default: csv]
    #[arg(long)]
    pub format: Option<String>,
    /// Worker threads (capped by SELFNORM_THREADS)
    #[arg(long)]
    pub threads: Option<String>,
    /// psi:degenerate:r=<r> | psi:power:m=<m>
    #[arg(long)]
    pub psi: Option<String>,
    /// phi:power:m=<m> | phi:natural
    #[arg(long)]
    pub phi: Option<String>,
    /// Key=value file with defaults for any of the options above
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "bound-scale", hide = true)]
    pub bound_scale: Option<String>,
}

impl Opts {
    fn entries(&self) -> [(&'static str, Option<&String>); 15] {
        [
            ("dist", self.dist.as_ref()),
            ("n", self.n.as_ref()),
            ("B", self.b.as_ref()),
            ("n-sup", self.n_sup.as_ref()),
            ("trials", self.trials.as_ref()),
            ("seed", self.seed.as_ref()),
            ("kr", self.kr.as_ref()),
            ("confidence", self.confidence.as_ref()),
            ("chunk-size", self.chunk_size.as_ref()),
            ("output", self.output.as_ref()),
            ("format", self.format.as_ref()),
            ("threads", self.threads.as_ref()),
            ("psi", self.psi.as_ref()),
            ("phi", self.phi.as_ref()),
            ("bound-scale", self.bound_scale.as_ref()),
        ]
    }
}

/// Where an option value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Flag,
    File { path: PathBuf, line: usize },
    Default,
}

/// A configuration problem tied to the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub source: Source,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Source::Flag => write!(f, "key `{}` (command line): {}", self.key, self.message),
            Source::File { path, line } => {
                write!(
                    f,
                    "key `{}` (line {} of {}): {}",
                    self.key,
                    line,
                    path.display(),
                    self.message
                )
            }
            Source::Default => write!(f, "key `{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Pretty,
}

/// A ψ or φ generator chosen for the `gls` command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    PsiDegenerate(f64),
    PsiPower(f64),
    PhiPower(f64),
    PhiNatural,
}

impl Generator {
    /// Parses `psi:degenerate:r=<r>`, `psi:power:m=<m>`, `phi:power:m=<m>`
    /// or `phi:natural`. The leading `psi:`/`phi:` may be left off when
    /// `expect` says which one is meant.
    pub fn parse(s: &str, expect: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let full = if s.starts_with("psi:") || s.starts_with("phi:") {
            s.to_string()
        } else {
            format!("{expect}:{s}")
        };
        let param = |rest: &str, name: &str| -> std::result::Result<f64, String> {
            let v = rest
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| format!("expected `{name}=<real>` in `{full}`"))?;
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{v}` is not a number"))
        };
        let g = if let Some(rest) = full.strip_prefix("psi:degenerate:") {
            Generator::PsiDegenerate(param(rest, "r")?)
        } else if let Some(rest) = full.strip_prefix("psi:power:") {
            Generator::PsiPower(param(rest, "m")?)
        } else if let Some(rest) = full.strip_prefix("phi:power:") {
            Generator::PhiPower(param(rest, "m")?)
        } else if full == "phi:natural" {
            Generator::PhiNatural
        } else {
            return Err(format!("unknown generator `{full}`"));
        };
        if !full.starts_with(expect) {
            return Err(format!("`{full}` is not a {expect} generator"));
        }
        Ok(g)
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub dist: DistributionModel,
    pub n_grid: Vec<u64>,
    pub b_grid: Vec<f64>,
    pub n_sup: Option<(u64, u64)>,
    pub trials: u64,
    pub seed: u64,
    pub kr: f64,
    pub confidence: f64,
    pub chunk_size: u64,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
    pub generator: Option<Generator>,
    /// Multiplies every computed bound; only useful as a negative control.
    pub bound_scale: f64,
}

struct Settings {
    values: HashMap<&'static str, (String, Source)>,
}

impl Settings {
    fn gather(opts: &Opts) -> std::result::Result<Self, ConfigError> {
        let mut values = HashMap::new();
        if let Some(path) = &opts.config {
            for (key, value, line) in read_config_file(path)? {
                values.insert(
                    key,
                    (
                        value,
                        Source::File {
                            path: path.clone(),
                            line,
                        },
                    ),
                );
            }
        }
        for (key, value) in opts.entries() {
            if let Some(v) = value {
                values.insert(key, (v.clone(), Source::Flag));
            }
        }
        Ok(Settings { values })
    }

    fn get<T>(
        &self,
        key: &'static str,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> std::result::Result<Option<T>, ConfigError> {
        match self.values.get(key) {
            None => Ok(None),
            Some((raw, source)) => parse(raw).map(Some).map_err(|message| ConfigError {
                key: key.to_string(),
                source: source.clone(),
                message,
            }),
        }
    }

    fn source(&self, key: &str) -> Source {
        self.values
            .get(key)
            .map_or(Source::Default, |(_, s)| s.clone())
    }
}

/// Reads a flat `key = value` file. Blank lines and `#` comments are
/// ignored; keys may carry a leading `--`.
pub fn read_config_file(
    path: &Path,
) -> std::result::Result<Vec<(&'static str, String, usize)>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        key: "config".into(),
        source: Source::Flag,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let source = Source::File {
            path: path.to_path_buf(),
            line: i + 1,
        };
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError {
                key: line.to_string(),
                source,
                message: "expected `key = value`".into(),
            });
        };
        let k = k.trim().trim_start_matches("--");
        let Some(&key) = CONFIG_KEYS.iter().find(|&&c| c == k) else {
            return Err(ConfigError {
                key: k.to_string(),
                source,
                message: "unknown key".into(),
            });
        };
        out.push((key, v.trim().to_string(), i + 1));
    }
    Ok(out)
}

fn parse_u64(s: &str) -> std::result::Result<u64, String> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| format!("`{}` is not a nonnegative integer", s.trim()))
}

fn parse_positive_u64(s: &str) -> std::result::Result<u64, String> {
    match parse_u64(s)? {
        0 => Err("must be at least 1".into()),
        v => Ok(v),
    }
}

fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    let v = if t == "e" {
        E
    } else {
        t.parse::<f64>()
            .map_err(|_| format!("`{t}` is not a number"))?
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{t}` is not finite"))
    }
}

fn parse_list<T>(
    s: &str,
    item: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Vec<T>, String> {
    let items: Vec<T> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(item)
        .collect::<std::result::Result<_, _>>()?;
    if items.is_empty() {
        Err("list is empty".into())
    } else {
        Ok(items)
    }
}

fn parse_b(s: &str) -> std::result::Result<f64, String> {
    let v = parse_real(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("B must be positive, got {v}"))
    }
}

fn parse_range(s: &str) -> std::result::Result<(u64, u64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got `{s}`"))?;
    let (lo, hi) = (parse_positive_u64(lo)?, parse_positive_u64(hi)?);
    if lo > hi {
        return Err(format!("empty range {lo}:{hi}"));
    }
    Ok((lo, hi))
}

impl RunConfig {
    /// Merges flags over the optional config file and validates the result.
    pub fn resolve(command: CommandKind, opts: &Opts) -> std::result::Result<Self, ConfigError> {
        let s = Settings::gather(opts)?;
        let dist = s
            .get("dist", |v| {
                v.parse::<DistributionModel>().map_err(|e| match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                })
            })?
            .ok_or_else(|| ConfigError {
                key: "dist".into(),
                source: Source::Default,
                message: "a distribution is required".into(),
            })?;
        let n_grid = s
            .get("n", |v| parse_list(v, parse_positive_u64))?
            .unwrap_or_else(|| vec![1]);
        let b_grid = s
            .get("B", |v| parse_list(v, parse_b))?
            .unwrap_or_else(|| DEFAULT_B_GRID.to_vec());
        let n_sup = s.get("n-sup", parse_range)?;
        let trials = s.get("trials", parse_positive_u64)?.unwrap_or(1_000_000);
        let seed = s.get("seed", parse_u64)?.unwrap_or(0);
        let kr = s
            .get("kr", |v| {
                let k = parse_real(v)?;
                if k > 0.0 {
                    Ok(k)
                } else {
                    Err("kr must be positive".into())
                }
            })?
            .unwrap_or(DEFAULT_KR);
        let confidence = s
            .get("confidence", |v| {
                let c = parse_real(v)?;
                if c > 0.0 && c < 1.0 {
                    Ok(c)
                } else {
                    Err("confidence must lie in (0, 1)".into())
                }
            })?
            .unwrap_or(0.999);
        let chunk_size = s.get("chunk-size", parse_positive_u64)?.unwrap_or(1 << 16);
        let output = s.get("output", |v| Ok(PathBuf::from(v.trim())))?;
        let format = s
            .get("format", |v| match v.trim() {
                "csv" => Ok(Format::Csv),
                "pretty" => Ok(Format::Pretty),
                other => Err(format!("unknown format `{other}`; use csv or pretty")),
            })?
            .unwrap_or(Format::Csv);
        let threads = s.get("threads", |v| parse_positive_u64(v).map(|t| t as usize))?;
        let bound_scale = s
            .get("bound-scale", |v| {
                let k = parse_real(v)?;
                if k > 0.0 {
                    Ok(k)
                } else {
                    Err("bound-scale must be positive".into())
                }
            })?
            .unwrap_or(1.0);
        let psi = s.get("psi", |v| Generator::parse(v, "psi"))?;
        let phi = s.get("phi", |v| Generator::parse(v, "phi"))?;
        let generator = match (psi, phi) {
            (Some(_), Some(_)) => {
                return Err(ConfigError {
                    key: "phi".into(),
                    source: s.source("phi"),
                    message: "give either psi or phi, not both".into(),
                })
            }
            (g, None) | (None, g) => g,
        };
        if command == CommandKind::Gls && generator.is_none() {
            return Err(ConfigError {
                key: "psi".into(),
                source: Source::Default,
                message: "the gls command needs --psi or --phi".into(),
            });
        }
        Ok(RunConfig {
            command,
            dist,
            n_grid,
            b_grid,
            n_sup,
            trials,
            seed,
            kr,
            confidence,
            chunk_size,
            output,
            format,
            threads,
            generator,
            bound_scale,
        })
    }

    fn mc_config(&self) -> MCConfig {
        MCConfig {
            n: 1,
            trials: self.trials,
            seed: self.seed,
            chunk_size: self.chunk_size,
            confidence: self.confidence,
            threads: self.threads,
        }
    }

    fn bound_config(&self) -> BoundConfig {
        BoundConfig {
            kr: self.kr,
            ..BoundConfig::default()
        }
    }
}

/// One output line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub dist: String,
    pub n: String,
    pub b: Option<f64>,
    pub family: String,
    pub value: Option<f64>,
    pub optimizer: String,
    pub arg: Option<f64>,
    pub n_star: Option<u64>,
    pub mc_point: Option<f64>,
    pub mc_ci_lo: Option<f64>,
    pub mc_ci_hi: Option<f64>,
    pub status: String,
}

impl Row {
    pub fn fields(&self) -> [String; 12] {
        let f = |x: Option<f64>| x.map(format_float).unwrap_or_default();
        [
            self.dist.clone(),
            self.n.clone(),
            f(self.b),
            self.family.clone(),
            f(self.value),
            self.optimizer.clone(),
            f(self.arg),
            self.n_star.map(|v| v.to_string()).unwrap_or_default(),
            f(self.mc_point),
            f(self.mc_ci_lo),
            f(self.mc_ci_hi),
            self.status.clone(),
        ]
    }

    pub fn from_fields(fields: &[&str]) -> Result<Self> {
        if fields.len() != HEADER.len() {
            return Err(Error::Config(format!(
                "expected {} columns, found {}",
                HEADER.len(),
                fields.len()
            )));
        }
        let float = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Config(format!("bad number `{s}`")))
            }
        };
        Ok(Row {
            dist: fields[0].to_string(),
            n: fields[1].to_string(),
            b: float(fields[2])?,
            family: fields[3].to_string(),
            value: float(fields[4])?,
            optimizer: fields[5].to_string(),
            arg: float(fields[6])?,
            n_star: if fields[7].is_empty() {
                None
            } else {
                Some(
                    fields[7]
                        .parse()
                        .map_err(|_| Error::Config(format!("bad n_star `{}`", fields[7])))?,
                )
            },
            mc_point: float(fields[8])?,
            mc_ci_lo: float(fields[9])?,
            mc_ci_hi: float(fields[10])?,
            status: fields[11].to_string(),
        })
    }
}

/// Formats with 15 significant digits, trailing zeros dropped; `inf` for +∞.
///
/// ```
/// use selfnorm::cli::format_float;
/// assert_eq!(format_float(0.5), "0.5");
/// assert_eq!(format_float(std::f64::consts::E), "2.71828182845905");
/// assert_eq!(format_float(1.0e-9), "1e-9");
/// assert_eq!(format_float(f64::INFINITY), "inf");
/// ```
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.14e}", x.abs());
    let (mant, exp) = sci
        .split_once('e')
        .expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = digits.trim_end_matches('0');
    let body = if (-5..15).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                format!("{digits}{}", "0".repeat(int_len - digits.len()))
            } else {
                format!("{}.{}", &digits[..int_len], &digits[int_len..])
            }
        } else {
            format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
        }
    } else if digits.len() > 1 {
        format!("{}.{}e{exp}", &digits[..1], &digits[1..])
    } else {
        format!("{digits}e{exp}")
    };
    if x < 0.0 {
        format!("-{body}")
    } else {
        body
    }
}

pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.fields()).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
        let fields: Vec<&str> = rec.iter().collect();
        rows.push(Row::from_fields(&fields)?);
    }
    Ok(rows)
}

/// Aligned-column text for terminals.
pub fn render_pretty(rows: &[Row]) -> String {
    let table: Vec<[String; 12]> = std::iter::once(HEADER.map(String::from))
        .chain(rows.iter().map(Row::fields))
        .collect();
    let mut widths = [0usize; 12];
    for r in &table {
        for (w, f) in widths.iter_mut().zip(r) {
            *w = (*w).max(f.chars().count());
        }
    }
    let mut out = String::new();
    for r in &table {
        let line: Vec<String> = r
            .iter()
            .zip(widths)
            .map(|(f, w)| format!("{f:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Rows produced by a command, and whether any check failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub failed: bool,
}

fn n_label(n: CurveN) -> String {
    match n {
        CurveN::Single(n) => n.to_string(),
        CurveN::SupOverRange(lo, hi) => format!("{lo}:{hi}"),
        CurveN::Limit => "inf".into(),
    }
}

fn optimizer_name(family: BoundFamily) -> &'static str {
    match family {
        BoundFamily::ExpLevel => "theta",
        BoundFamily::PowerLevel => "p",
        BoundFamily::LowerClt | BoundFamily::LowerQ1 => "",
    }
}

fn finite(x: f64) -> Option<f64> {
    (!x.is_nan()).then_some(x)
}

fn curve_rows(dist: &str, curve: &BoundCurve, b_grid: &[f64]) -> Vec<Row> {
    let mut rows = Vec::new();
    for &b in b_grid {
        let base = Row {
            dist: dist.to_string(),
            n: n_label(curve.n),
            b: Some(b),
            family: curve.family.as_str().to_string(),
            optimizer: optimizer_name(curve.family).to_string(),
            ..Row::default()
        };
        match curve.point_at(b) {
            Some(p) => {
                rows.push(Row {
                    value: Some(p.value),
                    arg: finite(p.optimizer.arg),
                    n_star: p.optimizer.n_star,
                    ..base.clone()
                });
                if let (BoundFamily::LowerClt, Some(aux)) = (curve.family, p.aux) {
                    rows.push(Row {
                        family: "lower_clt_printed".into(),
                        value: Some(aux),
                        ..base
                    });
                }
            }
            None if curve.family == BoundFamily::PowerLevel && b < E => rows.push(Row {
                status: "SKIP".into(),
                ..base
            }),
            None => {}
        }
    }
    rows
}

fn cell_rows(dist: &str, c: &CellCheck) -> Vec<Row> {
    let family = match c.curve_n {
        CurveN::SupOverRange(..) => format!("{}_sup", c.family.as_str()),
        _ => c.family.as_str().to_string(),
    };
    let row = Row {
        dist: dist.to_string(),
        n: c.estimate.n.to_string(),
        b: Some(c.estimate.b),
        family,
        value: Some(c.bound),
        optimizer: optimizer_name(c.family).to_string(),
        arg: finite(c.arg),
        n_star: c.n_star,
        mc_point: Some(c.estimate.point),
        mc_ci_lo: Some(c.estimate.ci_lo),
        mc_ci_hi: Some(c.estimate.ci_hi),
        status: c.status.as_str().to_string(),
    };
    let mut rows = vec![row.clone()];
    if let (BoundFamily::LowerClt, Some(aux)) = (c.family, c.aux) {
        rows.push(Row {
            family: "lower_clt_printed".into(),
            value: Some(aux),
            status: CheckStatus::Info.as_str().into(),
            ..row
        });
    }
    rows
}

fn scaled(mut curve: BoundCurve, k: f64) -> BoundCurve {
    if k != 1.0 {
        for p in &mut curve.points {
            p.value *= k;
        }
    }
    curve
}

fn upper_curves(cfg: &RunConfig, with_sup: bool) -> Result<Vec<BoundCurve>> {
    let bc = cfg.bound_config();
    let mut curves = Vec::new();
    for &n in &cfg.n_grid {
        curves.push(exp_curve(&cfg.dist, n, &cfg.b_grid, &bc)?);
    }
    if let (true, Some((lo, hi))) = (with_sup, cfg.n_sup) {
        curves.push(exp_sup_curve(&cfg.dist, lo, hi, &cfg.b_grid, &bc)?);
    }
    for &n in &cfg.n_grid {
        curves.push(power_curve(&cfg.dist, n, &cfg.b_grid, &bc)?);
    }
    if let (true, Some((lo, hi))) = (with_sup, cfg.n_sup) {
        curves.push(power_sup_curve(&cfg.dist, lo, hi, &cfg.b_grid, &bc)?);
    }
    Ok(curves
        .into_iter()
        .map(|c| scaled(c, cfg.bound_scale))
        .collect())
}

fn verification(cfg: &RunConfig, with_sup: bool) -> Result<(Vec<Row>, bool)> {
    let mut curves = upper_curves(cfg, with_sup)?;
    if cfg.n_grid.contains(&1) {
        curves.push(scaled(
            lower_q1_curve(&cfg.dist, &cfg.b_grid)?,
            cfg.bound_scale,
        ));
    }
    curves.push(lower_clt_curve(&cfg.b_grid));
    let report = verify_bounds(
        &cfg.dist,
        &cfg.n_grid,
        &cfg.b_grid,
        &cfg.mc_config(),
        &curves,
    )?;
    let label = cfg.dist.label();
    let mut rows: Vec<Row> = report
        .cells
        .iter()
        .flat_map(|c| cell_rows(label, c))
        .collect();
    if with_sup {
        for &n in &cfg.n_grid {
            for &b in cfg.b_grid.iter().filter(|&&b| b < E) {
                rows.push(Row {
                    dist: label.to_string(),
                    n: n.to_string(),
                    b: Some(b),
                    family: BoundFamily::PowerLevel.as_str().into(),
                    optimizer: "p".into(),
                    status: "SKIP".into(),
                    ..Row::default()
                });
            }
        }
        let n_pos = |r: &Row| {
            cfg.n_grid
                .iter()
                .position(|n| n.to_string() == r.n)
                .unwrap_or(usize::MAX)
        };
        let fam_rank = |r: &Row| match r.family.as_str() {
            "exp" => 0,
            "exp_sup" => 1,
            "power" => 2,
            "power_sup" => 3,
            "lower_q1" => 4,
            "lower_clt" => 5,
            _ => 6,
        };
        let b_pos = |r: &Row| {
            cfg.b_grid
                .iter()
                .position(|&b| Some(b) == r.b)
                .unwrap_or(usize::MAX)
        };
        rows.sort_by_key(|r| (n_pos(r), fam_rank(r), b_pos(r)));
    }
    Ok((rows, !report.passed()))
}

fn generator_rows(cfg: &RunConfig, g: Generator) -> Result<Vec<Row>> {
    let grid = cfg.bound_config().grid;
    let label = cfg.dist.label();
    let row = |family: &str, b: Option<f64>, value: f64, optimizer: &str, arg: f64| Row {
        dist: label.to_string(),
        b,
        family: family.to_string(),
        value: Some(value),
        optimizer: optimizer.to_string(),
        arg: finite(arg),
        ..Row::default()
    };
    let mut rows = Vec::new();
    match g {
        Generator::PsiDegenerate(_) | Generator::PsiPower(_) => {
            let psi = match g {
                Generator::PsiDegenerate(r) => PsiFunction::degenerate(r)?,
                Generator::PsiPower(m) => PsiFunction::power(m)?,
                _ => unreachable!(),
            };
            let d = &cfg.dist;
            let norm = gls_norm(|p| d.lp_norm(p).unwrap_or(f64::INFINITY), &psi, &grid)?;
            rows.push(row("gls_norm", None, norm.norm, "p", norm.arg));
            for &y in &cfg.b_grid {
                let t = gls_tail_bound(&psi, norm.norm, y, &grid);
                rows.push(row("gls_tail", Some(y), t.value, "p", t.arg));
            }
        }
        Generator::PhiPower(_) | Generator::PhiNatural => {
            let phi = match g {
                Generator::PhiPower(m) => PhiFunction::power(m)?,
                _ => PhiFunction::natural(&cfg.dist),
            };
            let d = &cfg.dist;
            let norm = bphi_norm(|l| d.log_mgf2(l, 0.0), &phi, &grid)?;
            rows.push(row("bphi_norm", None, norm.norm, "lambda", norm.arg));
            for &u in &cfg.b_grid {
                let t = bphi_tail_bound(&phi, norm.norm, u);
                rows.push(row("bphi_tail", Some(u), t.value, "lambda", t.arg));
            }
        }
    }
    Ok(rows)
}

/// Runs the configured command and returns its rows without writing them.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    with_workers(cfg.threads, || execute_inner(cfg))
}

fn execute_inner(cfg: &RunConfig) -> Result<Outcome> {
    let label = cfg.dist.label();
    let bc = cfg.bound_config();
    let mut rows = Vec::new();
    let mut failed = false;
    match cfg.command {
        CommandKind::BoundExp => {
            for &n in &cfg.n_grid {
                let c = scaled(exp_curve(&cfg.dist, n, &cfg.b_grid, &bc)?, cfg.bound_scale);
                rows.extend(curve_rows(label, &c, &cfg.b_grid));
            }
            if let Some((lo, hi)) = cfg.n_sup {
                let c = scaled(
                    exp_sup_curve(&cfg.dist, lo, hi, &cfg.b_grid, &bc)?,
                    cfg.bound_scale,
                );
                rows.extend(curve_rows(label, &c, &cfg.b_grid));
            }
        }
        CommandKind::BoundPower => {
            for &n in &cfg.n_grid {
                let c = scaled(
                    power_curve(&cfg.dist, n, &cfg.b_grid, &bc)?,
                    cfg.bound_scale,
                );
                rows.extend(curve_rows(label, &c, &cfg.b_grid));
            }
            if let Some((lo, hi)) = cfg.n_sup {
                let c = scaled(
                    power_sup_curve(&cfg.dist, lo, hi, &cfg.b_grid, &bc)?,
                    cfg.bound_scale,
                );
                rows.extend(curve_rows(label, &c, &cfg.b_grid));
            }
        }
        CommandKind::BoundLower => {
            let q1 = scaled(lower_q1_curve(&cfg.dist, &cfg.b_grid)?, cfg.bound_scale);
            rows.extend(curve_rows(label, &q1, &cfg.b_grid));
            rows.extend(curve_rows(
                label,
                &lower_clt_curve(&cfg.b_grid),
                &cfg.b_grid,
            ));
        }
        CommandKind::Mc => {
            for &n in &cfg.n_grid {
                let mc = MCConfig {
                    n,
                    ..cfg.mc_config()
                };
                for e in empirical_tail(&cfg.dist, &mc, &cfg.b_grid)? {
                    rows.push(Row {
                        dist: label.to_string(),
                        n: n.to_string(),
                        b: Some(e.b),
                        family: "mc".into(),
                        mc_point: Some(e.point),
                        mc_ci_lo: Some(e.ci_lo),
                        mc_ci_hi: Some(e.ci_hi),
                        ..Row::default()
                    });
                }
            }
        }
        CommandKind::Verify => (rows, failed) = verification(cfg, false)?,
        CommandKind::Sweep => (rows, failed) = verification(cfg, true)?,
        CommandKind::Gls => {
            let g = cfg
                .generator
                .ok_or_else(|| Error::Config("the gls command needs --psi or --phi".into()))?;
            rows = generator_rows(cfg, g)?;
        }
    }
    Ok(Outcome { rows, failed })
}

/// Serializes rows in the configured format.
pub fn render(rows: &[Row], format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(rows, &mut buf)?;
            Ok(buf)
        }
        Format::Pretty => Ok(render_pretty(rows).into_bytes()),
    }
}

/// Executes, writes the output and returns the process exit status.
pub fn run(cfg: &RunConfig) -> i32 {
    let outcome = match execute(cfg) {
        Ok(o) => o,
        Err(Error::Config(msg)) => {
            eprintln!("selfnorm: configuration error: {msg}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("selfnorm: {e}");
            return EXIT_FAIL;
        }
    };
    let written = render(&outcome.rows, cfg.format).and_then(|bytes| match &cfg.output {
        Some(path) => std::fs::write(path, bytes).map_err(Error::from),
        None => std::io::stdout()
            .lock()
            .write_all(&bytes)
            .map_err(Error::from),
    });
    if let Err(e) = written {
        eprintln!("selfnorm: {e}");
        return EXIT_FAIL;
    }
    if outcome.failed {
        eprintln!("selfnorm: verification found FAIL cells");
        EXIT_FAIL
    } else {
        EXIT_OK
    }
}

/// Entry point shared by the binary: resolve, run, map to an exit status.
pub fn main_with(cli: Cli) -> i32 {
    match RunConfig::resolve(cli.command.kind(), cli.command.opts()) {
        Ok(cfg) => run(&cfg),
        Err(e) => {
            eprintln!("selfnorm: configuration error: {e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(pairs: &[(&str, &str)]) -> Opts {
        let mut o = Opts::default();
        for &(k, v) in pairs {
            let v = Some(v.to_string());
            match k {
                "dist" => o.dist = v,
                "n" => o.n = v,
                "B" => o.b = v,
                "trials" => o.trials = v,
                "psi" => o.psi = v,
                "phi" => o.phi = v,
                _ => panic!("{k}"),
            }
        }
        o
    }

    #[test]
    fn float_format() {
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(-0.0625), "-0.0625");
        assert_eq!(format_float(123456.0), "123456");
        assert_eq!(format_float(1e15), "1e15");
        assert_eq!(format_float(2.5e-8), "2.5e-8");
        assert_eq!(format_float(0.1 + 0.2), "0.3");
        assert_eq!(format_float(f64::NEG_INFINITY), "-inf");
        assert_eq!(format_float(9.999_999_999_999_999e4), "100000");
        for x in [1.0 / 3.0, 0.082_230_487_743_394, 1.234e-300, 6.02e23] {
            let back: f64 = format_float(x).parse().unwrap();
            assert!((back / x - 1.0).abs() < 5e-15, "{x}");
        }
    }

    #[test]
    fn generator_strings() {
        assert_eq!(
            Generator::parse("psi:degenerate:r=4", "psi"),
            Ok(Generator::PsiDegenerate(4.0))
        );
        assert_eq!(
            Generator::parse("power:m=2", "psi"),
            Ok(Generator::PsiPower(2.0))
        );
        assert_eq!(
            Generator::parse("phi:natural", "phi"),
            Ok(Generator::PhiNatural)
        );
        assert!(Generator::parse("phi:power:m=2", "psi").is_err());
        assert!(Generator::parse("psi:power:r=2", "psi").is_err());
    }

    #[test]
    fn bad_distribution_names_the_key() {
        let e = RunConfig::resolve(CommandKind::BoundExp, &opts(&[("dist", "uniform:a=bogus")]))
            .unwrap_err();
        assert_eq!(e.key, "dist");
        assert_eq!(e.source, Source::Flag);
    }

    #[test]
    fn config_file_defaults_and_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# defaults\ndist = gaussian\n--n = 4,16\nB=1,e\n").unwrap();
        let mut o = opts(&[("n", "2")]);
        o.config = Some(path.clone());
        let cfg = RunConfig::resolve(CommandKind::BoundExp, &o).unwrap();
        assert_eq!(cfg.dist.label(), "gaussian");
        assert_eq!(cfg.n_grid, vec![2]);
        assert_eq!(cfg.b_grid, vec![1.0, E]);

        std::fs::write(&path, "dist = gaussian\n\ntrials = many\n").unwrap();
        let e = RunConfig::resolve(CommandKind::Mc, &o).unwrap_err();
        assert_eq!(e.key, "trials");
        assert_eq!(
            e.source,
            Source::File {
                path: path.clone(),
                line: 3
            }
        );
        assert!(e.to_string().contains("line 3"));

        std::fs::write(&path, "colour = blue\n").unwrap();
        let e = RunConfig::resolve(CommandKind::Mc, &o).unwrap_err();
        assert_eq!(e.key, "colour");
    }

    #[test]
    fn power_rows_below_e_are_skipped() {
        let cfg = RunConfig::resolve(
            CommandKind::BoundPower,
            &opts(&[("dist", "gaussian"), ("n", "16"), ("B", "1,3")]),
        )
        .unwrap();
        let out = execute(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].status, "SKIP");
        assert_eq!(out.rows[0].value, None);
        assert!(out.rows[1].value.is_some());
        assert!(out.rows[1].arg.unwrap().is_finite());
    }

    #[test]
    fn csv_round_trip() {
        let cfg = RunConfig::resolve(
            CommandKind::BoundLower,
            &opts(&[("dist", "discrete:-1:0.5,1:0.5"), ("B", "0.5,2")]),
        )
        .unwrap();
        let rows = execute(&cfg).unwrap().rows;
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dist,n,B,family,value,optimizer,theta_or_p_star,n_star,mc_point,mc_ci_lo,mc_ci_hi,status\n"));
        assert!(text.contains("\"discrete:-1:0.5,1:0.5\""));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.fields(), b.fields());
        }
    }

    #[test]
    fn gls_needs_a_generator() {
        assert!(RunConfig::resolve(CommandKind::Gls, &opts(&[("dist", "gaussian")])).is_err());
        let cfg = RunConfig::resolve(
            CommandKind::Gls,
            &opts(&[
                ("dist", "rademacher"),
                ("psi", "degenerate:r=2"),
                ("B", "3,10"),
            ]),
        )
        .unwrap();
        let rows = execute(&cfg).unwrap().rows;
        assert_eq!(rows[0].family, "gls_norm");
        assert!((rows[0].value.unwrap() - 1.0).abs() < 1e-9);
        assert!((rows[1].value.unwrap() - 1.0 / 9.0).abs() < 1e-9);
    }
}
