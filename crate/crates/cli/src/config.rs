//! TOML run configuration.
//!
//! Sections mirror the core types. `[experiment]` starts from a preset and
//! replaces whole sub-tables that the file provides:
//!
//! ```toml
//! [experiment]
//! d = 4
//! preset = "calibrated"
//! seed = 7
//! parity_points = 8
//!
//! [experiment.pulse_errors]
//! swap_infidelity = 0.05
//!
//! [run]
//! attempts = 1_000_000
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qudit_net::experiment::{AnalysisSchedule, ExperimentConfig, Mode, Stop, Timing};
use qudit_net::noise::{DephasingParams, FieldModel, NoiseConfig};
use qudit_net::protocol::{NodeParams, PulseErrorParams};
use qudit_net::ratemodel::EfficiencyBudget;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Ideal,
    Calibrated,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// A field model table, or `{ kind = "piecewise_file", path = "..." }`.
    pub field: Option<toml::Value>,
    pub exposure_s: Option<f64>,
    pub dephasing: Option<DephasingParams>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub d: u32,
    #[serde(default)]
    pub preset: Preset,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub node_a: Option<NodeParams>,
    pub node_b: Option<NodeParams>,
    pub pulse_errors: Option<PulseErrorParams>,
    pub noise: Option<NoiseSection>,
    pub timing: Option<Timing>,
    /// Shorthand for populations plus this many equally spaced parity phases.
    pub parity_points: Option<u32>,
    pub schedule: Option<AnalysisSchedule>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub attempts: Option<u64>,
    pub successes: Option<u64>,
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub window_s: f64,
    pub feed_forward: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { window_s: qudit_net::analysis::DEFAULT_WINDOW_S, feed_forward: false }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub budget_a: EfficiencyBudget,
    pub budget_b: EfficiencyBudget,
    /// Detection probabilities to use instead of the budget products.
    pub p_a: Option<f64>,
    pub p_b: Option<f64>,
    pub d_min: u32,
    pub d_max: u32,
    /// Linear period model; measured periods still override it for d = 2, 3, 4
    /// unless `linear_only` is set.
    pub tau0_us: f64,
    pub tau_bin_us: f64,
    pub linear_only: bool,
    /// Success fractions to use instead of `1 − 1/d`, keyed by `d`.
    pub fractions: BTreeMap<String, f64>,
}

impl Default for RateSection {
    fn default() -> Self {
        let t = Timing::measured(2);
        RateSection {
            budget_a: EfficiencyBudget::system_a(),
            budget_b: EfficiencyBudget::system_b(),
            p_a: None,
            p_b: None,
            d_min: 2,
            d_max: 8,
            tau0_us: t.tau0_us,
            tau_bin_us: t.tau_bin_us,
            linear_only: false,
            fractions: BTreeMap::new(),
        }
    }
}

impl RateSection {
    pub fn timing(&self, d: u32) -> Timing {
        let measured = Timing::measured(d);
        Timing {
            tau0_us: self.tau0_us,
            tau_bin_us: self.tau_bin_us,
            period_override_us: if self.linear_only { None } else { measured.period_override_us },
        }
    }

    pub fn fraction_overrides(&self) -> Result<BTreeMap<u32, f64>> {
        self.fractions
            .iter()
            .map(|(k, &v)| {
                let d = k.parse::<u32>().with_context(|| format!("rate.fractions: key `{k}` is not a dimension"))?;
                if !(0.0..=1.0).contains(&v) {
                    bail!("rate.fractions.{k} = {v} is outside [0, 1]");
                }
                Ok((d, v))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `d`, `seed`, `mode`, or a dotted path into the experiment config such as
    /// `pulse_errors.swap_infidelity`.
    pub parameter: String,
    pub values: Vec<toml::Value>,
}

/// Whole configuration file.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Option<ExperimentSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub rate: RateSection,
    pub sweep: Option<SweepSection>,
    /// Directory of the file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut file = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        file.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(file)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn stop(&self) -> Result<Stop> {
        match (self.run.attempts, self.run.successes) {
            (Some(_), Some(_)) => bail!("run: set only one of `attempts` and `successes`"),
            (Some(0), _) | (_, Some(0)) => bail!("run: stop count must be positive"),
            (Some(n), None) => Ok(Stop::Attempts(n)),
            (None, Some(n)) => Ok(Stop::Successes(n)),
            (None, None) => Ok(Stop::Attempts(100_000)),
        }
    }
}

impl ExperimentSection {
    /// Preset defaults for dimension `d`.
    pub fn new(d: u32) -> Self {
        ExperimentSection {
            d,
            preset: Preset::default(),
            mode: None,
            seed: None,
            node_a: None,
            node_b: None,
            pulse_errors: None,
            noise: None,
            timing: None,
            parity_points: None,
            schedule: None,
        }
    }

    /// Resolved configuration, validated.
    pub fn build(&self, base_dir: &Path) -> Result<ExperimentConfig> {
        let d = self.d;
        let mut cfg = match self.preset {
            Preset::Ideal => ExperimentConfig::ideal(d),
            Preset::Calibrated => ExperimentConfig::calibrated(d),
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.node_a {
            cfg.node_a = n;
        }
        if let Some(n) = self.node_b {
            cfg.node_b = n;
        }
        if let Some(p) = self.pulse_errors {
            cfg.pulse_errors = p;
        }
        if let Some(t) = self.timing {
            cfg.timing = t;
        }
        if let Some(noise) = &self.noise {
            cfg.noise = build_noise(noise, &cfg.noise, base_dir)?;
        }
        match (self.parity_points, &self.schedule) {
            (Some(_), Some(_)) => bail!("experiment: set only one of `parity_points` and `schedule`"),
            (Some(0), None) => cfg.schedule = AnalysisSchedule::population_only(),
            (Some(n), None) => cfg.schedule = AnalysisSchedule::population_and_parity(n),
            (None, Some(s)) => cfg.schedule = s.clone(),
            (None, None) => {}
        }
        cfg.validate().context("experiment")?;
        Ok(cfg)
    }
}

fn build_noise(section: &NoiseSection, base: &NoiseConfig, base_dir: &Path) -> Result<NoiseConfig> {
    let mut noise = base.clone();
    if let Some(field) = &section.field {
        noise.field = field_model(field, base_dir)?;
    }
    if let Some(t) = section.exposure_s {
        noise.exposure_s = t;
    }
    if let Some(dp) = section.dephasing {
        noise.dephasing = dp;
    }
    Ok(noise)
}

fn field_model(value: &toml::Value, base_dir: &Path) -> Result<FieldModel> {
    let kind = value.get("kind").and_then(toml::Value::as_str);
    if kind == Some("piecewise_file") {
        let table = value.as_table().context("experiment.noise.field must be a table")?;
        if let Some(extra) = table.keys().find(|k| *k != "kind" && *k != "path") {
            bail!("experiment.noise.field: unknown field `{extra}` for piecewise_file");
        }
        let path = table
            .get("path")
            .and_then(toml::Value::as_str)
            .context("experiment.noise.field: missing field `path`")?;
        let path = base_dir.join(path);
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read field file {}", path.display()))?;
        return Ok(FieldModel::Piecewise { points: parse_field_file(&text)? });
    }
    value.clone().try_into::<FieldModel>().context("experiment.noise.field")
}

/// Two whitespace- or comma-separated columns `time_s field_mG`; `#` starts a comment line.
pub fn parse_field_file(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if cols.len() != 2 {
            bail!("field file line {}: expected 2 columns, found {}", i + 1, cols.len());
        }
        let parse = |s: &str| s.parse::<f64>().with_context(|| format!("field file line {}: `{s}` is not a number", i + 1));
        points.push((parse(cols[0])?, parse(cols[1])?));
    }
    if points.is_empty() {
        bail!("field file has no data lines");
    }
    Ok(points)
}
