//! Flat `key=value` run configuration. Precedence, lowest first: defaults,
//! config file, `--set` pairs, dedicated flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nmf,
    Ssnmf,
    Hnmf,
    Neural,
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nmf" => Method::Nmf,
            "ssnmf" => Method::Ssnmf,
            "hnmf" => Method::Hnmf,
            "neural" => Method::Neural,
            _ => bail!("unknown method {s:?}; expected nmf, ssnmf, hnmf or neural"),
        })
    }
}

/// Fraction of columns whose labels the model sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", content = "fraction", rename_all = "lowercase")]
pub enum Supervision {
    None,
    Semi(f64),
    Full,
}

impl Supervision {
    pub fn fraction(self) -> Option<f64> {
        match self {
            Supervision::None => None,
            Supervision::Semi(f) => Some(f),
            Supervision::Full => Some(1.0),
        }
    }
}

impl FromStr for Supervision {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Supervision::None),
            "full" => Ok(Supervision::Full),
            _ => {
                let f = s
                    .strip_prefix("semi:")
                    .ok_or_else(|| anyhow!("unknown supervision {s:?}; expected none, semi:F or full"))?;
                let f: f64 = f.parse().with_context(|| format!("bad label fraction in {s:?}"))?;
                if !(0.0..=1.0).contains(&f) {
                    bail!("label fraction {f} is outside [0, 1]");
                }
                Ok(Supervision::Semi(f))
            }
        }
    }
}

/// Unsupervised neural objective; supervised runs always add the
/// classification term to the final-layer reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    Final,
    AllLayers,
}

impl FromStr for LossChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(LossChoice::Final),
            "all_layers" => Ok(LossChoice::AllLayers),
            _ => bail!("unknown loss {s:?}; expected final or all_layers"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BPinv {
    Strict,
    Truncated,
}

impl FromStr for BPinv {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(BPinv::Strict),
            "truncated" => Ok(BPinv::Truncated),
            _ => bail!("unknown b_pinv {s:?}; expected strict or truncated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Probes {
    All,
    Sampled,
}

impl FromStr for Probes {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Probes::All),
            "sampled" => Ok(Probes::Sampled),
            _ => bail!("unknown probe mode {s:?}; expected all or sampled"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub trials: usize,
    pub out: PathBuf,
    /// Input matrix; the synthetic dataset drawn with `data_seed` when unset.
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub data_seed: u64,
    /// `generate` only: add the uniform noise term.
    pub noise: bool,
    pub model: Option<PathBuf>,

    pub method: Method,
    pub ranks: Vec<usize>,
    pub supervision: Supervision,
    pub lambda: f64,
    pub loss: LossChoice,
    pub clamp_b: bool,
    pub b_pinv: BPinv,

    pub gamma: f64,
    /// Neural NMF outer iterations.
    pub iters: usize,
    /// Multiplicative-update iterations per layer, also used for warm starts.
    pub mu_iters: usize,
    pub conv_tol: f64,
    pub kkt_tol: Option<f64>,

    pub check_rows: usize,
    pub check_cols: usize,
    pub check_ranks: Vec<usize>,
    pub h: f64,
    pub rtol: f64,
    pub probes: Probes,
    pub samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 1,
            out: PathBuf::from("out"),
            data: None,
            labels: None,
            data_seed: 0,
            noise: true,
            model: None,
            method: Method::Neural,
            ranks: vec![9],
            supervision: Supervision::None,
            lambda: 1.0,
            loss: LossChoice::Final,
            clamp_b: false,
            b_pinv: BPinv::Truncated,
            gamma: 1e-3,
            iters: 500,
            mu_iters: 1000,
            conv_tol: 1e-6,
            kkt_tol: None,
            check_rows: 12,
            check_cols: 10,
            check_ranks: vec![5, 3],
            h: 1e-6,
            rtol: 1e-5,
            probes: Probes::All,
            samples: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| anyhow!("invalid value {value:?} for {key}: {e}"))
}

fn parse_positive_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !(v.is_finite() && v > 0.0) {
        bail!("{key} must be a positive finite number, got {value:?}");
    }
    Ok(v)
}

fn parse_ranks(key: &str, value: &str) -> Result<Vec<usize>> {
    let ranks = value
        .split(',')
        .map(|r| parse::<usize>(key, r.trim()))
        .collect::<Result<Vec<_>>>()?;
    if ranks.is_empty() || ranks.contains(&0) {
        bail!("{key} must be a comma-separated list of positive ranks, got {value:?}");
    }
    Ok(ranks)
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed", "trials", "out", "data", "labels", "data_seed", "noise", "model", "method", "ranks",
        "supervision", "lambda", "loss", "clamp_b", "b_pinv", "gamma", "iters", "mu_iters", "conv_tol",
        "kkt_tol", "check_rows", "check_cols", "check_ranks", "h", "rtol", "probes", "samples",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "trials" => {
                let trials = parse(key, value)?;
                if trials == 0 {
                    bail!("trials must be at least 1");
                }
                self.trials = trials;
            }
            "out" => self.out = PathBuf::from(value),
            "data" => self.data = optional_path(value),
            "labels" => self.labels = optional_path(value),
            "data_seed" => self.data_seed = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "model" => self.model = optional_path(value),
            "method" => self.method = value.parse()?,
            "ranks" => self.ranks = parse_ranks(key, value)?,
            "supervision" => self.supervision = value.parse()?,
            "lambda" => {
                let lambda: f64 = parse(key, value)?;
                if !(lambda.is_finite() && lambda >= 0.0) {
                    bail!("lambda must be nonnegative, got {value:?}");
                }
                self.lambda = lambda;
            }
            "loss" => self.loss = value.parse()?,
            "clamp_b" => self.clamp_b = parse(key, value)?,
            "b_pinv" => self.b_pinv = value.parse()?,
            "gamma" => {
                let gamma: f64 = parse(key, value)?;
                if !(gamma.is_finite() && gamma >= 0.0) {
                    bail!("gamma must be nonnegative, got {value:?}");
                }
                self.gamma = gamma;
            }
            "iters" => self.iters = parse(key, value)?,
            "mu_iters" => self.mu_iters = parse(key, value)?,
            "conv_tol" => self.conv_tol = parse(key, value)?,
            "kkt_tol" => {
                self.kkt_tol = if value == "none" || value.is_empty() {
                    None
                } else {
                    Some(parse_positive_f64(key, value)?)
                }
            }
            "check_rows" => self.check_rows = parse(key, value)?,
            "check_cols" => self.check_cols = parse(key, value)?,
            "check_ranks" => self.check_ranks = parse_ranks(key, value)?,
            "h" => self.h = parse_positive_f64(key, value)?,
            "rtol" => self.rtol = parse_positive_f64(key, value)?,
            "probes" => self.probes = value.parse()?,
            "samples" => self.samples = parse(key, value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key=value, got {raw:?}", n + 1))?;
            self.set(key.trim(), value).with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got {pair:?}"))?;
        self.set(key.trim(), value)
    }

    /// Serialized form accepted back by `apply_text`.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let ranks = |r: &[usize]| r.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let supervision = match self.supervision {
            Supervision::None => "none".to_string(),
            Supervision::Full => "full".to_string(),
            Supervision::Semi(f) => format!("semi:{f}"),
        };
        let loss = match self.loss {
            LossChoice::Final => "final",
            LossChoice::AllLayers => "all_layers",
        };
        let lines = [
            ("seed", self.seed.to_string()),
            ("trials", self.trials.to_string()),
            ("out", self.out.display().to_string()),
            ("data", opt(&self.data)),
            ("labels", opt(&self.labels)),
            ("data_seed", self.data_seed.to_string()),
            ("noise", self.noise.to_string()),
            ("model", opt(&self.model)),
            ("method", format!("{:?}", self.method).to_lowercase()),
            ("ranks", ranks(&self.ranks)),
            ("supervision", supervision),
            ("lambda", self.lambda.to_string()),
            ("loss", loss.to_string()),
            ("clamp_b", self.clamp_b.to_string()),
            ("b_pinv", format!("{:?}", self.b_pinv).to_lowercase()),
            ("gamma", self.gamma.to_string()),
            ("iters", self.iters.to_string()),
            ("mu_iters", self.mu_iters.to_string()),
            ("conv_tol", self.conv_tol.to_string()),
            ("kkt_tol", self.kkt_tol.map(|t| t.to_string()).unwrap_or_else(|| "none".into())),
            ("check_rows", self.check_rows.to_string()),
            ("check_cols", self.check_cols.to_string()),
            ("check_ranks", ranks(&self.check_ranks)),
            ("h", self.h.to_string()),
            ("rtol", self.rtol.to_string()),
            ("probes", format!("{:?}", self.probes).to_lowercase()),
            ("samples", self.samples.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
