//! Experiment configuration: a flat TOML document merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

pub const CONFIG_SCHEMA: &str = "gbdlab.config/1";

/// Every key a config file may set. Unknown keys are rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: Option<String>,
    /// Single input field.
    pub field: Option<PathBuf>,
    /// Input sequence `u_1..u_K`, in order.
    pub sequence: Option<Vec<PathBuf>>,
    /// Built-in acceptance suite instead of files.
    pub suite: Option<String>,
    /// Cells per side for suites.
    pub n: Option<usize>,
    /// Sequence length for suites.
    pub k: Option<usize>,
    /// Step of a suite used by single-field commands; defaults to the last.
    pub step: Option<usize>,
    pub partition: Option<PathBuf>,
    pub limit: Option<PathBuf>,
    pub cube_min: Option<Vec<f64>>,
    pub cube_max: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub directions: Option<usize>,
    pub sigma: Option<Vec<f64>>,
    pub eta: Option<f64>,
    pub delta0: Option<f64>,
    pub jmax: Option<usize>,
    pub p: Option<f64>,
    /// `"gbd"` or `"gsbd"`; suites carry their own.
    pub mode: Option<String>,
    pub c: Option<f64>,
    pub tau_bound: Option<f64>,
    pub tau_div: Option<f64>,
    pub budget: Option<usize>,
    /// Sup-norm noise bound `amplitude / k^power` for sequences read from files.
    pub noise_amplitude: Option<f64>,
    pub noise_power: Option<f64>,
    pub images: Option<bool>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| anyhow::anyhow!("usage error in {}: {}", path.display(), e.message()))?;
        match cfg.schema.as_deref() {
            Some(CONFIG_SCHEMA) => {}
            Some(other) => bail!("usage error: key `schema`: expected {CONFIG_SCHEMA}, found {other}"),
            None => bail!("usage error: key `schema` is required ({CONFIG_SCHEMA})"),
        }
        // config-relative paths
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let mut cfg = cfg;
        for p in [&mut cfg.field, &mut cfg.partition, &mut cfg.limit, &mut cfg.out].into_iter().flatten() {
            fix(p);
        }
        for p in cfg.sequence.iter_mut().flatten() {
            fix(p);
        }
        Ok(cfg)
    }

    /// Values set in `other` replace those in `self`.
    pub fn merge(self, other: ExperimentConfig) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { ExperimentConfig { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            schema, field, sequence, suite, n, k, step, partition, limit, cube_min, cube_max, out, seed, jobs, directions, sigma,
            eta, delta0, jmax, p, mode, c, tau_bound, tau_div, budget, noise_amplitude, noise_power, images
        )
    }

    pub fn validate(&self) -> Result<()> {
        fn range<T: PartialOrd + std::fmt::Display + Copy>(key: &str, v: Option<T>, ok: impl Fn(T) -> bool, doc: &str) -> Result<()> {
            match v {
                Some(x) if !ok(x) => bail!("usage error: key `{key}` = {x}: must be {doc}"),
                _ => Ok(()),
            }
        }
        range("n", self.n, |n| (4..=4096).contains(&n), "in 4..=4096")?;
        range("k", self.k, |k| (2..=10_000).contains(&k), "in 2..=10000")?;
        range("step", self.step, |s| s >= 1, "at least 1")?;
        range("jobs", self.jobs, |j| j >= 1, "at least 1")?;
        range("directions", self.directions, |d| (1..=4096).contains(&d), "in 1..=4096")?;
        range("eta", self.eta, |e| e > 0.0 && e <= 1.0, "in (0, 1]")?;
        range("delta0", self.delta0, |d| d > 0.0 && d.is_finite(), "positive")?;
        range("jmax", self.jmax, |j| j <= 20, "at most 20")?;
        range("p", self.p, |p| p >= 1.0 && p.is_finite(), "at least 1")?;
        range("c", self.c, |c| c > 0.0 && c.is_finite(), "positive")?;
        range("tau_bound", self.tau_bound, |t| t > 0.0, "positive")?;
        range("tau_div", self.tau_div, |t| t > 0.0, "positive")?;
        range("budget", self.budget, |b| b >= 1, "at least 1")?;
        range("noise_amplitude", self.noise_amplitude, |a| a >= 0.0, "nonnegative")?;
        range("noise_power", self.noise_power, |a| a >= 0.0, "nonnegative")?;
        if let (Some(tb), Some(td)) = (self.tau_bound, self.tau_div) {
            if !(td > tb) {
                bail!("usage error: key `tau_div` = {td}: must exceed tau_bound = {tb}");
            }
        }
        if let Some(s) = &self.sigma {
            if s.is_empty() || s.iter().any(|&x| !(x > 0.0 && x.is_finite())) || s.windows(2).any(|w| !(w[1] > w[0])) {
                bail!("usage error: key `sigma`: must be a nonempty, strictly increasing list of positive values");
            }
        }
        if let Some(m) = &self.mode {
            if m != "gbd" && m != "gsbd" {
                bail!("usage error: key `mode` = {m:?}: must be \"gbd\" or \"gsbd\"");
            }
        }
        for (key, v) in [("cube_min", &self.cube_min), ("cube_max", &self.cube_max)] {
            if let Some(v) = v {
                if !(2..=3).contains(&v.len()) || v.iter().any(|x| !x.is_finite()) {
                    bail!("usage error: key `{key}`: must list 2 or 3 finite coordinates");
                }
            }
        }
        if self.cube_min.is_some() != self.cube_max.is_some() {
            bail!("usage error: keys `cube_min` and `cube_max` must be given together");
        }
        let inputs = [self.field.is_some(), self.sequence.is_some(), self.suite.is_some()].iter().filter(|&&b| b).count();
        if inputs > 1 {
            bail!("usage error: keys `field`, `sequence` and `suite` are mutually exclusive");
        }
        if let Some(seq) = &self.sequence {
            if seq.len() < 2 {
                bail!("usage error: key `sequence`: needs at least two fields");
            }
        }
        Ok(())
    }
}

/// Parses `1,2,4.5` into a list.
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"))).collect()
}
