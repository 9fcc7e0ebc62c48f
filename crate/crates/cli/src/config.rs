//! Flag/config-file/environment resolution into one `ExperimentConfig`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use quadland::init::ScaleMode;
use quadland::Distribution;
use serde::Serialize;

use crate::CliError;

pub const SEED_ENV: &str = "QUADLAND_SEED";

#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// Input dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Teacher width.
    #[arg(long)]
    pub m: Option<usize>,
    /// Student width.
    #[arg(long = "m-hat")]
    pub m_hat: Option<usize>,
    /// Sample count.
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input law: gaussian, uniform, rademacher, custom(mu2,mu4).
    #[arg(long)]
    pub dist: Option<String>,
    /// Law of the teacher entries.
    #[arg(long = "teacher-dist")]
    pub teacher_dist: Option<String>,
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for trial-level parallelism (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Student initialization for gd-run: identity or random.
    #[arg(long)]
    pub init: Option<String>,
    /// Identity scale: m or m_plus_4d.
    #[arg(long = "scale-mode")]
    pub scale_mode: Option<String>,
    /// gd-run objective: empirical or population.
    #[arg(long)]
    pub objective: Option<String>,
    /// Step policy: backtracking, inverse_smoothness or fixed.
    #[arg(long)]
    pub step: Option<String>,
    /// Step size for the fixed policy.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long = "grad-tol")]
    pub grad_tol: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    #[arg(long = "record-every")]
    pub record_every: Option<usize>,
    /// geometry-check: use the prime Vandermonde design instead of random data.
    #[arg(long)]
    pub prime: bool,
}

const KEYS: &[&str] = &[
    "d",
    "m",
    "m_hat",
    "N",
    "trials",
    "seed",
    "dist",
    "teacher_dist",
    "out",
    "jobs",
    "init",
    "scale_mode",
    "objective",
    "step",
    "eta",
    "grad_tol",
    "max_iters",
    "record_every",
    "prime",
];

/// Parses `key = value` lines; `#` starts a comment. Dashes in keys are
/// read as underscores.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", lineno + 1)))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key '{key}'", lineno + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub d: usize,
    pub m: usize,
    pub m_hat: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(serialize_with = "as_tag")]
    pub dist: Distribution,
    #[serde(serialize_with = "as_tag")]
    pub teacher_dist: Distribution,
    pub out: PathBuf,
    pub jobs: usize,
    pub init: String,
    pub scale_mode: ScaleMode,
    pub objective: String,
    pub step: String,
    pub eta: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub record_every: usize,
    pub prime: bool,
}

fn as_tag<S: serde::Serializer>(dist: &Distribution, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(dist)
}

/// Per-command defaults that depend on `d`.
pub struct Defaults {
    pub m: fn(usize) -> usize,
    pub n: fn(usize) -> usize,
    pub trials: usize,
}

struct Resolver<'a> {
    file: &'a BTreeMap<String, String>,
}

impl Resolver<'_> {
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key '{key}': {e}"))),
            None => Ok(None),
        }
    }
}

fn parse_with<T: FromStr>(raw: &str, what: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

fn one_of(value: String, what: &str, allowed: &[&str]) -> Result<String, CliError> {
    if allowed.contains(&value.as_str()) {
        Ok(value)
    } else {
        Err(CliError::Usage(format!("{what} must be one of {allowed:?}, got '{value}'")))
    }
}

pub fn resolve(command: &str, flags: &Flags, defaults: &Defaults) -> Result<ExperimentConfig, CliError> {
    let file = match &flags.config {
        Some(path) => load_config(path)?,
        None => BTreeMap::new(),
    };
    let r = Resolver { file: &file };
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(raw) => Some(parse_with::<u64>(raw.trim(), SEED_ENV)?),
        Err(_) => None,
    };
    let d = r.get(flags.d, "d")?.unwrap_or(3);
    let m = r.get(flags.m, "m")?.unwrap_or((defaults.m)(d));
    let config = ExperimentConfig {
        command: command.to_string(),
        d,
        m,
        m_hat: r.get(flags.m_hat, "m_hat")?.unwrap_or(m),
        n: r.get(flags.n, "N")?.unwrap_or((defaults.n)(d)),
        trials: r.get(flags.trials, "trials")?.unwrap_or(defaults.trials),
        seed: r.get(flags.seed, "seed")?.or(env_seed).unwrap_or(0),
        dist: parse_with(&r.get(flags.dist.clone(), "dist")?.unwrap_or_else(|| "gaussian".into()), "dist")?,
        teacher_dist: parse_with(
            &r.get(flags.teacher_dist.clone(), "teacher_dist")?.unwrap_or_else(|| "gaussian".into()),
            "teacher-dist",
        )?,
        out: r.get(flags.out.clone(), "out")?.unwrap_or_else(|| PathBuf::from("quadland-out")),
        jobs: r.get(flags.jobs, "jobs")?.unwrap_or(0),
        init: one_of(
            r.get(flags.init.clone(), "init")?.unwrap_or_else(|| "identity".into()),
            "init",
            &["identity", "random"],
        )?,
        scale_mode: parse_with(
            &r.get(flags.scale_mode.clone(), "scale_mode")?.unwrap_or_else(|| "m".into()),
            "scale-mode",
        )?,
        objective: one_of(
            r.get(flags.objective.clone(), "objective")?.unwrap_or_else(|| "empirical".into()),
            "objective",
            &["empirical", "population"],
        )?,
        step: one_of(
            r.get(flags.step.clone(), "step")?.unwrap_or_else(|| "backtracking".into()),
            "step",
            &["backtracking", "inverse_smoothness", "fixed"],
        )?,
        eta: r.get(flags.eta, "eta")?.unwrap_or(1e-3),
        grad_tol: r.get(flags.grad_tol, "grad_tol")?.unwrap_or(1e-8),
        max_iters: r.get(flags.max_iters, "max_iters")?.unwrap_or(1_000_000),
        record_every: r.get(flags.record_every, "record_every")?.unwrap_or(100),
        prime: flags.prime || r.get(None, "prime")?.unwrap_or(false),
    };
    validate(&config)?;
    Ok(config)
}

fn load_config(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_file(&text)
}

fn validate(c: &ExperimentConfig) -> Result<(), CliError> {
    for (name, v) in [
        ("d", c.d),
        ("m", c.m),
        ("m-hat", c.m_hat),
        ("N", c.n),
        ("trials", c.trials),
        ("record-every", c.record_every),
    ] {
        if v == 0 {
            return Err(CliError::Usage(format!("{name} must be >= 1")));
        }
    }
    if c.grad_tol.is_nan() || c.grad_tol <= 0.0 || c.eta.is_nan() || c.eta <= 0.0 {
        return Err(CliError::Usage("grad-tol and eta must be positive".into()));
    }
    c.dist.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    c.teacher_dist.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> Defaults {
        Defaults {
            m: |d| 4 * d * d,
            n: |d| d * (d + 1) / 2,
            trials: 100,
        }
    }

    #[test]
    fn config_file_parsing() {
        let map = parse_config_file("# comment\nd = 4\nteacher-dist = uniform  # trailing\n\n").unwrap();
        assert_eq!(map["d"], "4");
        assert_eq!(map["teacher_dist"], "uniform");
        assert!(parse_config_file("nonsense").is_err());
        assert!(parse_config_file("colour = red").is_err());
    }

    #[test]
    fn flags_override_file_and_defaults_fill_in() {
        let dir = std::env::temp_dir().join(format!("quadland-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "d = 4\nseed = 9\ntrials = 7\n").unwrap();
        let flags = Flags {
            seed: Some(3),
            config: Some(path),
            ..Flags::default()
        };
        let c = resolve("spectrum", &flags, &defaults()).unwrap();
        assert_eq!((c.d, c.seed, c.trials, c.m), (4, 3, 7, 64));
        assert_eq!(c.dist, Distribution::standard_gaussian());
    }

    #[test]
    fn zero_counts_rejected() {
        let flags = Flags {
            d: Some(0),
            ..Flags::default()
        };
        assert!(matches!(resolve("spectrum", &flags, &defaults()), Err(CliError::Usage(_))));
    }
}
