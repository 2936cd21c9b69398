//! Flat `key = value` configuration files.
//!
//! ```text
//! # ten nodes, two of them withhold their commitment
//! nodes = 10
//! weights = parametric
//! behavior = silent-setup x2
//! epochs = 3
//! threshold = 1/2
//! layers = 3
//! backend = mock
//! rng_seed = 7
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use verasel_core::adversary::{BehaviorProfile, Scenario};
use verasel_core::crypto::Backend;
use verasel_core::protocol::ProposerMode;
use verasel_core::stats::{self, BandwidthSource, LogNormalParams, SelectionArm};
use verasel_core::Threshold;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to one line.
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Parametric(LogNormalParams),
    Csv(PathBuf),
    List(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub nodes: usize,
    pub weights: WeightSpec,
    /// `(profile, count)` in file order; assigned to nodes from index 0.
    pub behaviors: Vec<(BehaviorProfile, usize)>,
    pub epochs: u64,
    pub threshold: Threshold,
    pub layers: u32,
    pub backend: Backend,
    pub clients: usize,
    pub proposer: ProposerMode,
    pub rng_seed: u64,
    pub trials_a: u64,
    pub trials_b: u64,
    pub alpha: f64,
    pub arm: ArmChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmChoice {
    Verasel,
    Uniform,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            nodes: 0,
            weights: WeightSpec::Parametric(LogNormalParams::default()),
            behaviors: Vec::new(),
            epochs: 1,
            threshold: Threshold::new(1, 2).expect("valid"),
            layers: 1,
            backend: Backend::default(),
            clients: 2,
            proposer: ProposerMode::Honest,
            rng_seed: 0,
            trials_a: 3000,
            trials_b: 3000,
            alpha: 0.05,
            arm: ArmChoice::Verasel,
        }
    }
}

const KEYS: &[&str] = &[
    "nodes",
    "weights",
    "lognormal_mu",
    "lognormal_sigma",
    "behavior",
    "epochs",
    "threshold",
    "layers",
    "backend",
    "clients",
    "proposer",
    "rng_seed",
    "trials_a",
    "trials_b",
    "alpha",
    "arm",
];

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::at(line, format!("`{key}` expects a number, got `{value}`")))
}

impl ScenarioConfig {
    pub fn from_str_in(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut seen = BTreeSet::new();
        let mut nodes_line = None;
        let mut mu = None;
        let mut sigma = None;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                ConfigError::at(line, format!("expected `key = value`, got `{content}`"))
            })?;
            let key = key.trim().replace(['.', '-'], "_");
            let key = if key == "tau" {
                "threshold".to_string()
            } else {
                key
            };
            let value = value.trim();
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::at(line, format!("unknown key `{key}`")));
            }
            if key != "behavior" && !seen.insert(key.clone()) {
                return Err(ConfigError::at(line, format!("`{key}` given twice")));
            }
            match key.as_str() {
                "nodes" => {
                    cfg.nodes = parse_num(line, &key, value)?;
                    nodes_line = Some(line);
                }
                "weights" => {
                    cfg.weights = if value == "parametric" {
                        WeightSpec::Parametric(LogNormalParams::default())
                    } else if let Some(path) = value.strip_prefix("csv:") {
                        WeightSpec::Csv(base.join(path.trim()))
                    } else {
                        let list = stats::parse_weights(&value.replace(',', "\n"))
                            .map_err(|e| ConfigError::at(line, format!("weights: {e}")))?;
                        if list.is_empty() {
                            return Err(ConfigError::at(line, "weights: empty list"));
                        }
                        WeightSpec::List(list)
                    }
                }
                "lognormal_mu" => mu = Some(parse_num::<f64>(line, &key, value)?),
                "lognormal_sigma" => {
                    let s: f64 = parse_num(line, &key, value)?;
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(ConfigError::at(line, "lognormal_sigma must be positive"));
                    }
                    sigma = Some(s);
                }
                "behavior" => {
                    let mut parts = value.split_whitespace();
                    let profile = parts
                        .next()
                        .unwrap_or("")
                        .parse::<BehaviorProfile>()
                        .map_err(|e| ConfigError::at(line, e))?;
                    let count = match parts.next() {
                        None => 1,
                        Some(c) => c
                            .strip_prefix('x')
                            .and_then(|c| c.parse().ok())
                            .ok_or_else(|| {
                                ConfigError::at(line, format!("expected `x<count>`, got `{c}`"))
                            })?,
                    };
                    if parts.next().is_some() {
                        return Err(ConfigError::at(
                            line,
                            "expected `behavior = <profile> [x<count>]`",
                        ));
                    }
                    cfg.behaviors.push((profile, count));
                }
                "epochs" => cfg.epochs = parse_num(line, &key, value)?,
                "threshold" => {
                    cfg.threshold = value.parse().map_err(|_| {
                        ConfigError::at(line, format!("threshold must be in (0, 1], got `{value}`"))
                    })?
                }
                "layers" => {
                    cfg.layers = parse_num(line, &key, value)?;
                    if cfg.layers == 0 {
                        return Err(ConfigError::at(line, "layers must be at least 1"));
                    }
                }
                "backend" => {
                    cfg.backend = value
                        .parse()
                        .map_err(|e| ConfigError::at(line, format!("{e}")))?
                }
                "clients" => {
                    cfg.clients = parse_num(line, &key, value)?;
                    if cfg.clients < 2 {
                        return Err(ConfigError::at(line, "clients must be at least 2"));
                    }
                }
                "proposer" => {
                    cfg.proposer = value
                        .parse()
                        .map_err(|e: String| ConfigError::at(line, e))?
                }
                "rng_seed" => cfg.rng_seed = parse_num(line, &key, value)?,
                "trials_a" => cfg.trials_a = parse_num(line, &key, value)?,
                "trials_b" => cfg.trials_b = parse_num(line, &key, value)?,
                "alpha" => {
                    cfg.alpha = parse_num(line, &key, value)?;
                    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
                        return Err(ConfigError::at(line, "alpha must be in (0, 1)"));
                    }
                }
                "arm" => {
                    cfg.arm = match value {
                        "verasel" => ArmChoice::Verasel,
                        "uniform" => ArmChoice::Uniform,
                        _ => return Err(ConfigError::at(line, format!("unknown arm `{value}`"))),
                    }
                }
                _ => unreachable!("key checked against KEYS"),
            }
        }

        if mu.is_some() || sigma.is_some() {
            match &mut cfg.weights {
                WeightSpec::Parametric(p) => {
                    if let Some(s) = sigma {
                        p.sigma = s;
                        p.mu = 9.97f64.ln() - s * s / 2.0;
                    }
                    if let Some(m) = mu {
                        p.mu = m;
                    }
                }
                _ => {
                    return Err(ConfigError::at(
                        0,
                        "lognormal_* only applies to parametric weights",
                    ))
                }
            }
        }
        if let WeightSpec::List(list) = &cfg.weights {
            if nodes_line.is_none() {
                cfg.nodes = list.len();
            } else if cfg.nodes != list.len() {
                return Err(ConfigError::at(
                    nodes_line.unwrap_or(0),
                    format!("nodes = {} but {} weights listed", cfg.nodes, list.len()),
                ));
            }
        }
        if cfg.nodes == 0 {
            return Err(ConfigError::at(
                nodes_line.unwrap_or(0),
                "at least one node is required",
            ));
        }
        let assigned: usize = cfg.behaviors.iter().map(|(_, c)| c).sum();
        if assigned > cfg.nodes {
            return Err(ConfigError::at(
                0,
                format!(
                    "behaviors cover {assigned} nodes but only {} exist",
                    cfg.nodes
                ),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at(0, format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_in(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn weights(&self) -> Result<Vec<u64>, ConfigError> {
        let source = match &self.weights {
            WeightSpec::List(list) => return Ok(list.clone()),
            WeightSpec::Parametric(p) => BandwidthSource::Parametric(*p),
            WeightSpec::Csv(path) => BandwidthSource::Csv(path.clone()),
        };
        stats::sample_bandwidths(self.nodes, &source, self.rng_seed)
            .map_err(|e| ConfigError::at(0, format!("weights: {e}")))
    }

    pub fn profiles(&self) -> Vec<BehaviorProfile> {
        let mut out: Vec<BehaviorProfile> = self
            .behaviors
            .iter()
            .flat_map(|&(p, c)| std::iter::repeat_n(p, c))
            .collect();
        out.resize(self.nodes, BehaviorProfile::Honest);
        out
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let nodes = self.weights()?.into_iter().zip(self.profiles()).collect();
        let mut s = Scenario::new(nodes, self.epochs);
        s.threshold = self.threshold;
        s.layers = self.layers;
        s.backend = self.backend;
        s.clients = self.clients;
        s.proposer = self.proposer;
        s.rng_seed = self.rng_seed;
        Ok(s)
    }

    pub fn selection_arm(&self) -> SelectionArm {
        match self.arm {
            ArmChoice::Verasel => SelectionArm::Verasel(self.backend),
            ArmChoice::Uniform => SelectionArm::UniformUnweighted,
        }
    }
}
