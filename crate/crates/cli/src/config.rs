//! Effective run configuration: defaults, then a `key = value` file, then
//! command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use spdec::decimation::{Guide, Order};
use spdec::message::IterationPolicy;
use spdec::quasi::AuditMode;
use spdec::RandomModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Uniform,
    Binomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineArg {
    Sp,
    Bp,
    Coin,
}

impl EngineArg {
    pub fn guide(self) -> Guide {
        match self {
            EngineArg::Sp => Guide::Sp,
            EngineArg::Bp => Guide::Bp,
            EngineArg::Coin => Guide::CoinFlip,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EngineArg::Sp => "sp",
            EngineArg::Bp => "bp",
            EngineArg::Coin => "coin",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderArg {
    Natural,
    Perm,
}

impl OrderArg {
    pub fn order(self) -> Order {
        match self {
            OrderArg::Natural => Order::Natural,
            OrderArg::Perm => Order::RandomPermutation,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OrderArg::Natural => "natural",
            OrderArg::Perm => "perm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditArg {
    Auto,
    Exhaustive,
    Sampled,
}

impl AuditArg {
    pub fn mode(self) -> AuditMode {
        match self {
            AuditArg::Auto => AuditMode::Auto,
            AuditArg::Exhaustive => AuditMode::Exhaustive,
            AuditArg::Sampled => AuditMode::Sampled,
        }
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to the defaults of [`ExperimentConfig`].
#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// Key-value config file; flags given here override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clause length.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of variables.
    #[arg(long)]
    pub n: Option<usize>,
    /// Clause density m/n.
    #[arg(long)]
    pub r: Option<f64>,
    /// Comma-separated densities for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub r_grid: Option<Vec<f64>>,
    /// Number of clauses; takes precedence over `--r`.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    #[arg(long, value_enum)]
    pub order: Option<OrderArg>,
    /// Maximum message-passing rounds per step (default ⌈4 ln n⌉).
    #[arg(long)]
    pub omega: Option<usize>,
    /// Residual tolerance for message passing.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Constant `c` of the bias schedule.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory; `-` writes to stdout where supported.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest `n` for brute-force enumeration.
    #[arg(long)]
    pub cap_bruteforce: Option<usize>,
    /// Treat a clause falsified during decimation as an error.
    #[arg(long)]
    pub strict: bool,
    /// DIMACS input instead of a generated formula.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Decimation time: variables 1..=t are fixed to true before diagnosis.
    #[arg(long)]
    pub t: Option<usize>,
    /// Message-passing levels for the certificate sets.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long, value_enum)]
    pub audit: Option<AuditArg>,
    /// Evaluation budget of an exhaustive quasirandomness audit.
    #[arg(long)]
    pub max_evals: Option<u128>,
    /// Number of random tree formulas for `covers`.
    #[arg(long)]
    pub trees: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub k: usize,
    pub n: usize,
    pub r: Option<f64>,
    pub r_grid: Vec<f64>,
    pub m: Option<usize>,
    pub model: ModelArg,
    pub engine: EngineArg,
    pub order: OrderArg,
    pub omega: Option<usize>,
    pub tol: f64,
    pub c: f64,
    pub trials: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub cap_bruteforce: usize,
    pub strict: bool,
    pub input: Option<PathBuf>,
    pub t: usize,
    pub levels: usize,
    pub audit: AuditArg,
    pub max_evals: u128,
    pub trees: Option<usize>,
}

impl ExperimentConfig {
    pub fn defaults(command: &str) -> Self {
        ExperimentConfig {
            command: command.to_string(),
            k: 3,
            n: 20,
            r: None,
            r_grid: Vec::new(),
            m: None,
            model: ModelArg::Uniform,
            engine: EngineArg::Sp,
            order: OrderArg::Natural,
            omega: None,
            tol: 1e-9,
            c: 0.1,
            trials: 20,
            seed: 0,
            out: None,
            cap_bruteforce: spdec::cover::DEFAULT_COVER_CAP,
            strict: false,
            input: None,
            t: 0,
            levels: 10,
            audit: AuditArg::Auto,
            max_evals: 2_000_000,
            trees: None,
        }
    }

    pub fn resolve(command: &str, flags: &Flags) -> Result<Self> {
        let mut cfg = Self::defaults(command);
        if let Some(path) = &flags.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        cfg.apply_flags(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value", i + 1);
            };
            self.set(key.trim(), value.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt = |v: &str| (!v.is_empty()).then(|| v.to_string());
        match key.replace('-', "_").as_str() {
            "command" => {
                if value != self.command {
                    bail!("config is for `{value}`, not `{}`", self.command);
                }
            }
            "k" => self.k = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "r" => self.r = opt(value).map(|v| parse(key, &v)).transpose()?,
            "r_grid" => {
                self.r_grid = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| parse(key, v))
                    .collect::<Result<_>>()?
            }
            "m" => self.m = opt(value).map(|v| parse(key, &v)).transpose()?,
            "model" => self.model = enum_value(key, value)?,
            "engine" => self.engine = enum_value(key, value)?,
            "order" => self.order = enum_value(key, value)?,
            "omega" => self.omega = opt(value).map(|v| parse(key, &v)).transpose()?,
            "tol" => self.tol = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = opt(value).map(PathBuf::from),
            "cap_bruteforce" => self.cap_bruteforce = parse(key, value)?,
            "strict" => self.strict = parse(key, value)?,
            "input" => self.input = opt(value).map(PathBuf::from),
            "t" => self.t = parse(key, value)?,
            "levels" => self.levels = parse(key, value)?,
            "audit" => self.audit = enum_value(key, value)?,
            "max_evals" => self.max_evals = parse(key, value)?,
            "trees" => self.trees = opt(value).map(|v| parse(key, &v)).transpose()?,
            _ => bail!("unknown key `{key}`"),
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Flags) {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = f.$field.clone() {
                    self.$field = v;
                }
            )*};
        }
        macro_rules! take_opt {
            ($($field:ident),*) => {$(
                if f.$field.is_some() {
                    self.$field = f.$field.clone();
                }
            )*};
        }
        take!(k, n, r_grid, model, engine, order, tol, c, trials, seed, cap_bruteforce, t, levels, audit, max_evals);
        take_opt!(r, m, omega, out, input, trees);
        self.strict |= f.strict;
    }

    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            bail!("k must be at least 1");
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            bail!("tol must be non-negative");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            bail!("c must be positive");
        }
        for &r in self.r.iter().chain(&self.r_grid) {
            if !(r >= 0.0 && r.is_finite()) {
                bail!("density {r} must be finite and non-negative");
            }
        }
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        Ok(())
    }

    /// Clause count of a generated formula at density `r`, or `m` if set.
    pub fn clauses(&self, r: Option<f64>) -> Result<usize> {
        match (self.m, r.or(self.r)) {
            (Some(m), _) => Ok(m),
            (None, Some(r)) => Ok(RandomModel::clauses_for_density(r, self.n)),
            (None, None) => bail!("one of --m or --r is required"),
        }
    }

    pub fn random_model(&self, m: usize) -> RandomModel {
        match self.model {
            ModelArg::Uniform => RandomModel::uniform(self.k, m),
            ModelArg::Binomial => RandomModel::binomial(self.k, m),
        }
    }

    pub fn iteration(&self, n: usize) -> IterationPolicy {
        let mut p = IterationPolicy::default_for(n);
        if let Some(omega) = self.omega {
            p.omega = omega;
        }
        p.residual_tol = self.tol;
        p
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    /// Canonical `key = value` text; feeding it back through `--config`
    /// reproduces this configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        let o = |v: Option<String>| v.unwrap_or_default();
        let p = |v: &Option<PathBuf>| o(v.as_deref().map(|p| p.display().to_string()));
        line("command", self.command.clone());
        line("k", self.k.to_string());
        line("n", self.n.to_string());
        line("r", o(self.r.map(|v| v.to_string())));
        line("r_grid", self.r_grid.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        line("m", o(self.m.map(|v| v.to_string())));
        line("model", enum_name(self.model));
        line("engine", enum_name(self.engine));
        line("order", enum_name(self.order));
        line("omega", o(self.omega.map(|v| v.to_string())));
        line("tol", self.tol.to_string());
        line("c", self.c.to_string());
        line("trials", self.trials.to_string());
        line("seed", self.seed.to_string());
        line("out", p(&self.out));
        line("cap_bruteforce", self.cap_bruteforce.to_string());
        line("strict", self.strict.to_string());
        line("input", p(&self.input));
        line("t", self.t.to_string());
        line("levels", self.levels.to_string());
        line("audit", enum_name(self.audit));
        line("max_evals", self.max_evals.to_string());
        line("trees", o(self.trees.map(|v| v.to_string())));
        s
    }

    /// SHA-256 of the canonical text without `out`, which names where data
    /// goes and not what it is.
    pub fn hash(&self) -> String {
        let text: String = self.to_text().lines().filter(|l| !l.starts_with("out ")).map(|l| format!("{l}\n")).collect();
        hex(&Sha256::digest(text.as_bytes()))
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow::anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

fn enum_value<T: ValueEnum>(key: &str, value: &str) -> Result<T> {
    T::from_str(value, true).map_err(|e| anyhow::anyhow!("`{key}`: {e}"))
}

fn enum_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}
