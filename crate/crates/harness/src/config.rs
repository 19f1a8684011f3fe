//! Experiment configuration: TOML file, `--set section.key=value` overrides
//! and built-in defaults, in decreasing order of precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nystrom_krr::synthetic::SpectrumSpec;

use crate::error::{HarnessError, Result};

pub const DEFAULT_SEED: u64 = 20_120_801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub fig1: Fig1Config,
    pub rates: RatesConfig,
    pub rank_ratio: RankRatioConfig,
    pub theorem: TheoremConfig,
    pub lemma: LemmaConfig,
    pub data: DataConfig,
    pub fit: FitConfig,
    pub cv: CvConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            out: None,
            fig1: Fig1Config::default(),
            rates: RatesConfig::default(),
            rank_ratio: RankRatioConfig::default(),
            theorem: TheoremConfig::default(),
            lemma: LemmaConfig::default(),
            data: DataConfig::default(),
            fit: FitConfig::default(),
            cv: CvConfig::default(),
        }
    }
}

/// Grid problem with `mu_i = i^{-2 beta}` and `nu_i = i^{-2 delta}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Family {
    pub beta: u32,
    pub delta: f64,
    pub sigma2: f64,
}

impl Family {
    pub fn spectrum(&self) -> SpectrumSpec {
        SpectrumSpec::polynomial(self.beta, self.delta)
    }

    pub fn label(&self) -> String {
        format!("beta{}-delta{}", self.beta, self.delta)
    }

    fn validate(&self, section: &str) -> Result<()> {
        self.spectrum()
            .validate()
            .map_err(|e| HarnessError::Config(format!("[{section}] {e}")))?;
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(HarnessError::Config(format!(
                "[{section}] sigma2 must be non-negative, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig1Config {
    pub n: usize,
    pub beta: u32,
    pub delta: f64,
    pub sigma2: f64,
    /// Fixed lambda; the error-minimizing value when absent.
    pub lambda: Option<f64>,
    pub p_grid: Option<Vec<usize>>,
    pub trials: usize,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            n: 400,
            beta: 1,
            delta: 8.0,
            sigma2: 1.0,
            lambda: None,
            p_grid: None,
            trials: 10,
        }
    }
}

impl Fig1Config {
    pub fn family(&self) -> Family {
        Family {
            beta: self.beta,
            delta: self.delta,
            sigma2: self.sigma2,
        }
    }

    /// Every rank up to 20, then about 25% steps up to `n`.
    pub fn ranks(&self) -> Vec<usize> {
        if let Some(g) = &self.p_grid {
            let mut g = g.clone();
            g.sort_unstable();
            g.dedup();
            return g;
        }
        let mut out: Vec<usize> = (1..=self.n.min(20)).collect();
        let mut p = 20.0f64;
        loop {
            p *= 1.25;
            let q = p.round() as usize;
            if q >= self.n {
                break;
            }
            out.push(q);
        }
        if *out.last().unwrap() != self.n {
            out.push(self.n);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub families: Vec<Family>,
    pub n_list: Vec<usize>,
    pub grid_points: usize,
    /// Smallest sizes left out of the exponent fits.
    pub drop_smallest: usize,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            families: vec![
                Family { beta: 4, delta: 8.0, sigma2: 1e-12 },
                Family { beta: 1, delta: 2.0, sigma2: 1e-2 },
                Family { beta: 8, delta: 8.0, sigma2: 1e-12 },
            ],
            n_list: vec![64, 128, 256, 512, 1024, 2048, 4096],
            grid_points: 40,
            drop_smallest: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankRatioConfig {
    pub n: usize,
    pub beta: u32,
    pub delta: f64,
    pub sigma2: f64,
    /// Explicit lambda grid; otherwise `lambda_points` log-spaced values over
    /// the range where the error stays within `regime_factor` of its minimum.
    pub lambdas: Option<Vec<f64>>,
    pub lambda_points: usize,
    pub regime_factor: f64,
    pub tol: f64,
    pub trials: usize,
}

impl Default for RankRatioConfig {
    fn default() -> Self {
        Self {
            n: 400,
            beta: 1,
            delta: 8.0,
            sigma2: 1.0,
            lambdas: None,
            lambda_points: 10,
            regime_factor: 2.0,
            tol: 0.01,
            trials: 10,
        }
    }
}

impl RankRatioConfig {
    pub fn family(&self) -> Family {
        Family {
            beta: self.beta,
            delta: self.delta,
            sigma2: self.sigma2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    pub n: usize,
    pub beta: u32,
    /// Signal decay.
    pub delta: f64,
    pub sigma2: f64,
    /// Slack parameter of the bound, in (0, 1).
    pub theorem_delta: f64,
    pub lambda: Option<f64>,
    pub trials: usize,
    /// Extra ranks checked from `4 d_max` up to `n`.
    pub sweep_points: usize,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            n: 400,
            beta: 1,
            delta: 8.0,
            sigma2: 1.0,
            theorem_delta: 0.25,
            lambda: None,
            trials: 50,
            sweep_points: 20,
        }
    }
}

impl TheoremConfig {
    pub fn family(&self) -> Family {
        Family {
            beta: self.beta,
            delta: self.delta,
            sigma2: self.sigma2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFamily {
    /// i.i.d. standard normal entries.
    Gaussian,
    /// Gaussian rows rescaled so a few rows dominate the norm.
    HeavyRows,
    /// Scaled leading eigenvectors of a kernel matrix on random inputs.
    KernelFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaConfig {
    pub n: usize,
    pub r: usize,
    pub p_list: Vec<usize>,
    pub families: Vec<MatrixFamily>,
    pub t_points: usize,
    pub trials: usize,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            n: 200,
            r: 20,
            p_list: vec![20, 40, 80],
            families: vec![
                MatrixFamily::Gaussian,
                MatrixFamily::HeavyRows,
                MatrixFamily::KernelFeatures,
            ],
            t_points: 10,
            trials: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub target: Option<String>,
    /// All non-target columns when absent.
    pub features: Option<Vec<String>>,
    pub max_rows: usize,
    /// Gaussian bandwidth; median pairwise distance on 500 points when absent.
    pub bandwidth: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            target: None,
            features: None,
            max_rows: 8192,
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Exact,
    Random,
    Pivoted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda: f64,
    pub method: FitMethod,
    /// Rank for low-rank methods; pivoted runs fall back to `trace_tol`.
    pub p: Option<usize>,
    /// Relative trace tolerance `tr(K - L) / tr(K)` for pivoted runs.
    pub trace_tol: f64,
    pub loss: nystrom_krr::Loss,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            method: FitMethod::Pivoted,
            p: None,
            trace_tol: 1e-3,
            loss: nystrom_krr::Loss::Square,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub lambdas: Option<Vec<f64>>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_points: usize,
    pub folds: usize,
    pub trace_tol: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            lambdas: None,
            lambda_min: 1e-8,
            lambda_max: 1.0,
            lambda_points: 17,
            folds: 5,
            trace_tol: 1e-3,
        }
    }
}

impl CvConfig {
    pub fn grid(&self) -> Vec<f64> {
        match &self.lambdas {
            Some(l) => l.clone(),
            None => nystrom_krr::statistics::log_grid(self.lambda_min, self.lambda_max, self.lambda_points),
        }
    }
}

fn positive(section: &str, name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("[{section}] {name} must be positive, got {v}")))
    }
}

fn at_least(section: &str, name: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("[{section}] {name} must be at least {min}, got {v}")))
    }
}

impl Config {
    /// Parse `path` (if any), apply `section.key=value` overrides and
    /// deserialize on top of the defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the effective configuration in canonical TOML. The
    /// output path does not enter the hash.
    pub fn hash(&self) -> String {
        let canonical = Config {
            out: None,
            ..self.clone()
        };
        let text = toml::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate_fig1(&self) -> Result<()> {
        let c = &self.fig1;
        c.family().validate("fig1")?;
        at_least("fig1", "n", c.n, 2)?;
        at_least("fig1", "trials", c.trials, 1)?;
        if let Some(l) = c.lambda {
            positive("fig1", "lambda", l)?;
        }
        let ranks = c.ranks();
        if ranks.is_empty() || ranks[0] == 0 || *ranks.last().unwrap() > c.n {
            return Err(HarnessError::Config(format!("[fig1] p_grid must lie in 1..={}", c.n)));
        }
        Ok(())
    }

    pub fn validate_rates(&self) -> Result<()> {
        let c = &self.rates;
        if c.families.is_empty() {
            return Err(HarnessError::Config("[rates] no families".into()));
        }
        for f in &c.families {
            f.validate("rates")?;
        }
        at_least("rates", "n_list length", c.n_list.len(), 5)?;
        at_least("rates", "grid_points", c.grid_points, 2)?;
        let ns = &c.n_list;
        if ns[0] < 2 {
            return Err(HarnessError::Config("[rates] sizes must be at least 2".into()));
        }
        let ratio = ns[1] as f64 / ns[0] as f64;
        let geometric = ratio > 1.0
            && ns
                .windows(2)
                .all(|w| ((w[1] as f64 / w[0] as f64) / ratio - 1.0).abs() < 0.05);
        if !geometric {
            return Err(HarnessError::Config(format!(
                "[rates] n_list must be increasing and geometrically spaced, got {ns:?}"
            )));
        }
        Ok(())
    }

    pub fn validate_rank_ratio(&self) -> Result<()> {
        let c = &self.rank_ratio;
        c.family().validate("rank_ratio")?;
        at_least("rank_ratio", "n", c.n, 2)?;
        at_least("rank_ratio", "trials", c.trials, 1)?;
        positive("rank_ratio", "tol", c.tol)?;
        if !(c.regime_factor > 1.0) {
            return Err(HarnessError::Config(format!(
                "[rank_ratio] regime_factor must exceed 1, got {}",
                c.regime_factor
            )));
        }
        match &c.lambdas {
            Some(l) if l.is_empty() => return Err(HarnessError::Config("[rank_ratio] empty lambdas".into())),
            Some(l) => {
                for &v in l {
                    positive("rank_ratio", "lambda", v)?;
                }
            }
            None => at_least("rank_ratio", "lambda_points", c.lambda_points, 1)?,
        }
        Ok(())
    }

    pub fn validate_theorem(&self) -> Result<()> {
        let c = &self.theorem;
        c.family().validate("theorem")?;
        at_least("theorem", "n", c.n, 2)?;
        at_least("theorem", "trials", c.trials, 1)?;
        if !(c.theorem_delta > 0.0 && c.theorem_delta < 1.0) {
            return Err(HarnessError::Config(format!(
                "[theorem] theorem_delta must lie in (0, 1), got {}",
                c.theorem_delta
            )));
        }
        if let Some(l) = c.lambda {
            positive("theorem", "lambda", l)?;
        }
        Ok(())
    }

    pub fn validate_lemma(&self) -> Result<()> {
        let c = &self.lemma;
        at_least("lemma", "n", c.n, 2)?;
        at_least("lemma", "r", c.r, 1)?;
        at_least("lemma", "t_points", c.t_points, 1)?;
        at_least("lemma", "trials", c.trials, 1)?;
        if c.r > c.n {
            return Err(HarnessError::Config("[lemma] r must not exceed n".into()));
        }
        if c.families.is_empty() || c.p_list.is_empty() {
            return Err(HarnessError::Config("[lemma] families and p_list must be non-empty".into()));
        }
        if c.p_list.iter().any(|&p| p == 0 || p > c.n) {
            return Err(HarnessError::Config(format!("[lemma] p_list entries must lie in 1..={}", c.n)));
        }
        Ok(())
    }

    pub fn validate_data(&self) -> Result<()> {
        let d = &self.data;
        if d.path.is_none() {
            return Err(HarnessError::Config("[data] path is required".into()));
        }
        if d.target.is_none() {
            return Err(HarnessError::Config("[data] target is required".into()));
        }
        at_least("data", "max_rows", d.max_rows, 10)?;
        if let Some(b) = d.bandwidth {
            positive("data", "bandwidth", b)?;
        }
        Ok(())
    }

    pub fn validate_fit(&self) -> Result<()> {
        self.validate_data()?;
        let c = &self.fit;
        positive("fit", "lambda", c.lambda)?;
        if c.method == FitMethod::Random && c.p.is_none() {
            return Err(HarnessError::Config("[fit] random sampling needs p".into()));
        }
        if c.method == FitMethod::Exact && c.loss != nystrom_krr::Loss::Square {
            return Err(HarnessError::Config("[fit] the exact solver supports the square loss only".into()));
        }
        if let Some(p) = c.p {
            at_least("fit", "p", p, 1)?;
        }
        positive("fit", "trace_tol", c.trace_tol)
    }

    pub fn validate_cv(&self) -> Result<()> {
        self.validate_data()?;
        let c = &self.cv;
        at_least("cv", "folds", c.folds, 2)?;
        positive("cv", "trace_tol", c.trace_tol)?;
        let grid = c.grid();
        if grid.is_empty() {
            return Err(HarnessError::Config("[cv] empty lambda grid".into()));
        }
        for &l in &grid {
            positive("cv", "lambda", l)?;
        }
        Ok(())
    }
}

/// `section.key=value`; the value is read as a TOML literal and falls back to
/// a plain string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {spec:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for part in path {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("{part:?} in {key:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
