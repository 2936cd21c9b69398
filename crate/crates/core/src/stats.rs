//! Bandwidth sampling, the trusted-party oracle, selection frequencies, and
//! the statistical tests used to compare them.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::crypto::{Backend, KeyPair, NodeId};
use crate::protocol;
use crate::seedchain::Seed;
use crate::selection::{self, SelectionError, Threshold};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least one node")]
    NoNodes,
    #[error("empty sample")]
    EmptySample,
    #[error("need at least one trial")]
    NoTrials,
    #[error("need at least two buckets")]
    TooFewBuckets,
    #[error("weights must be positive (row {row})")]
    NonPositiveWeight { row: usize },
    #[error("row {row}: cannot parse `{text}` as a weight")]
    BadRow { row: usize, text: String },
    #[error("weight file has {found} rows, {wanted} requested")]
    TooFewRows { found: usize, wanted: usize },
    #[error("cannot read weight file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid log-normal parameters")]
    Distribution,
    #[error("run produced a node outside the profile")]
    UnknownNode,
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for LogNormalParams {
    /// Mean 9.97 per node, so 1000 nodes total about 9970.
    fn default() -> Self {
        let sigma = 0.8;
        Self {
            mu: 9.97f64.ln() - sigma * sigma / 2.0,
            sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthSource {
    Parametric(LogNormalParams),
    /// One weight per row; the first comma-separated field is used and
    /// a non-numeric first row is treated as a header.
    Csv(PathBuf),
}

pub fn sample_bandwidths(
    n: usize,
    source: &BandwidthSource,
    rng_seed: u64,
) -> Result<Vec<u64>, StatsError> {
    if n == 0 {
        return Err(StatsError::NoNodes);
    }
    match source {
        BandwidthSource::Parametric(p) => {
            let dist = LogNormal::new(p.mu, p.sigma).map_err(|_| StatsError::Distribution)?;
            let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
            Ok((0..n)
                .map(|_| (dist.sample(&mut rng).round() as u64).max(1))
                .collect())
        }
        BandwidthSource::Csv(path) => {
            let weights = parse_weights(&std::fs::read_to_string(path)?)?;
            if weights.len() < n {
                return Err(StatsError::TooFewRows {
                    found: weights.len(),
                    wanted: n,
                });
            }
            Ok(weights[..n].to_vec())
        }
    }
}

/// Parses a one-column weight listing.
pub fn parse_weights(text: &str) -> Result<Vec<u64>, StatsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() || field.starts_with('#') {
            continue;
        }
        match field.parse::<i128>() {
            Ok(w) if w <= 0 => return Err(StatsError::NonPositiveWeight { row }),
            Ok(w) => out.push(u64::try_from(w).map_err(|_| StatsError::BadRow {
                row,
                text: field.to_string(),
            })?),
            Err(_) if out.is_empty() && field.parse::<f64>().is_err() && i == 0 => {}
            Err(_) => {
                return Err(StatsError::BadRow {
                    row,
                    text: field.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Trusted-party benchmark: weighted sampling without replacement until the
/// threshold is met. Returns indices in draw order.
pub fn simple_weighted_select<R: Rng + ?Sized>(
    weights: &[u64],
    threshold: Threshold,
    rng: &mut R,
) -> Result<Vec<usize>, StatsError> {
    if weights.is_empty() {
        return Err(StatsError::NoNodes);
    }
    if let Some(row) = weights.iter().position(|&w| w == 0) {
        return Err(StatsError::NonPositiveWeight { row });
    }
    let total: u64 = weights.iter().sum();
    let mut left = weights.to_vec();
    let mut remaining = total;
    let mut cumulative = 0;
    let mut picked = Vec::new();
    while !threshold.is_met(cumulative, total) {
        let mut r = rng.gen_range(0..remaining);
        let i = left
            .iter()
            .position(|&w| {
                if r < w {
                    true
                } else {
                    r -= w;
                    false
                }
            })
            .expect("r < remaining");
        cumulative += left[i];
        remaining -= left[i];
        left[i] = 0;
        picked.push(i);
    }
    Ok(picked)
}

/// Per-node inclusion counts over a number of trials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyProfile<K> {
    pub ids: Vec<K>,
    pub trials: u64,
    pub counts: Vec<u64>,
}

impl<K> FrequencyProfile<K> {
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.trials as f64)
            .collect()
    }

    pub fn frequency(&self, i: usize) -> f64 {
        self.counts[i] as f64 / self.trials as f64
    }

    pub fn total_selections(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Runs `run(trial)` for each trial in parallel and tallies the nodes it
/// returns. `run` must derive all randomness from its trial index.
pub fn selection_frequencies<K, F>(
    ids: Vec<K>,
    trials: u64,
    run: F,
) -> Result<FrequencyProfile<K>, StatsError>
where
    K: Ord + Send + Sync,
    F: Fn(u64) -> Vec<K> + Sync,
{
    if trials == 0 {
        return Err(StatsError::NoTrials);
    }
    let index: BTreeMap<&K, usize> = ids.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let n = ids.len();
    let counts = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut c = vec![0u64; n];
            for k in run(t) {
                c[*index.get(&k).ok_or(StatsError::UnknownNode)?] += 1;
            }
            Ok::<_, StatsError>(c)
        })
        .try_reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(FrequencyProfile {
        ids,
        trials,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub accept: bool,
    pub n: usize,
    pub m: usize,
}

/// Asymptotic two-sample coefficient, `sqrt(-ln(alpha/2) / 2)`.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    ks_coefficient(alpha) * ((n + m) / (n * m)).sqrt()
}

pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<KsResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0f64;
    while i < n && j < m {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let critical = ks_critical_value(alpha, n, m);
    Ok(KsResult {
        statistic: d,
        critical,
        accept: d <= critical,
        n,
        m,
    })
}

/// Points `(x, F(x))` of the empirical CDF, one per distinct value.
pub fn ecdf(sample: &[f64]) -> Vec<(f64, f64)> {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in s.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = f,
            _ => out.push((*x, f)),
        }
    }
    out
}

/// `m(m-1) / 2^(n_bits+1)`, evaluated in log space.
pub fn collision_probability(m: u64, n_bits: u32) -> f64 {
    if m < 2 {
        return 0.0;
    }
    let m = m as f64;
    (m.log2() + (m - 1.0).log2() - (f64::from(n_bits) + 1.0)).exp2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
}

impl ChiSquare {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

pub fn chi_square_uniform(counts: &[u64]) -> Result<ChiSquare, StatsError> {
    if counts.len() < 2 {
        return Err(StatsError::TooFewBuckets);
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(StatsError::EmptySample);
    }
    let expected = total as f64 / counts.len() as f64;
    let statistic = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dof = counts.len() as u64 - 1;
    let dist = ChiSquared::new(dof as f64).expect("dof >= 1");
    Ok(ChiSquare {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoProportion {
    pub p1: f64,
    pub p2: f64,
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
    pub significant: bool,
}

/// Pooled two-proportion z-test.
pub fn two_proportion_test(x1: u64, n1: u64, x2: u64, n2: u64, alpha: f64) -> TwoProportion {
    let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = if se > 0.0 { (p1 - p2) / se } else { 0.0 };
    let p_value = 2.0 * Normal::standard().sf(z.abs());
    TwoProportion {
        p1,
        p2,
        z,
        p_value,
        significant: p_value < alpha,
    }
}

/// Whether `hits` out of `trials` lies within `k` binomial standard
/// deviations of `trials * p`.
pub fn within_sigmas(hits: u64, trials: u64, p: f64, k: f64) -> bool {
    let n = trials as f64;
    let sd = (n * p * (1.0 - p)).sqrt();
    (hits as f64 - n * p).abs() <= k * sd
}

/// What stands in for the verifiable arm of the validation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionArm {
    Verasel(Backend),
    /// Negative control: uniform draws that ignore weights.
    UniformUnweighted,
}

#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub weights: Vec<u64>,
    pub threshold: Threshold,
    pub trials_a: u64,
    pub trials_b: u64,
    pub alpha: f64,
    pub arm: SelectionArm,
    pub rng_seed: u64,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub node_ids: Vec<NodeId>,
    pub weights: Vec<u64>,
    pub verasel: FrequencyProfile<usize>,
    pub oracle: FrequencyProfile<usize>,
    /// Over per-node frequencies; this is the acceptance statistic.
    pub ks_frequency: KsResult,
    /// Over per-trial active set sizes.
    pub ks_per_run: KsResult,
    pub set_sizes_a: Vec<u64>,
    pub set_sizes_b: Vec<u64>,
}

fn trial_rng(rng_seed: u64, stream: u64, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    rng.set_stream((stream << 48) ^ trial);
    rng
}

fn uniform_select(weights: &[u64], threshold: Threshold, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let total: u64 = weights.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let mut cumulative = 0;
    let mut picked = Vec::new();
    for k in 0..order.len() {
        let j = rng.gen_range(k..order.len());
        order.swap(k, j);
        cumulative += weights[order[k]];
        picked.push(order[k]);
        if threshold.is_met(cumulative, total) {
            break;
        }
    }
    picked
}

/// Runs the verifiable arm (`trials_a`, a fresh seed per trial over fixed
/// keys) and the oracle arm (`trials_b`), then compares them.
pub fn run_validation(cfg: &ValidationConfig) -> Result<ValidationReport, StatsError> {
    let n = cfg.weights.len();
    if n == 0 {
        return Err(StatsError::NoNodes);
    }
    if let Some(row) = cfg.weights.iter().position(|&w| w == 0) {
        return Err(StatsError::NonPositiveWeight { row });
    }
    let mut key_rng = ChaCha20Rng::seed_from_u64(cfg.rng_seed);
    let nodes: Vec<(KeyPair, u64)> = cfg
        .weights
        .iter()
        .map(|&w| (KeyPair::generate(&mut key_rng), w))
        .collect();
    let position: BTreeMap<NodeId, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, (k, _))| (k.node_id(), i))
        .collect();

    let arm_a = |t: u64| -> Vec<usize> {
        let mut rng = trial_rng(cfg.rng_seed, 1, t);
        match cfg.arm {
            SelectionArm::Verasel(backend) => {
                let seed: Seed = rng.gen();
                let roster = protocol::honest_roster(&nodes, &seed, backend);
                let active = selection::select_active_set(&roster, cfg.threshold)
                    .expect("non-empty roster with positive weights");
                active
                    .selected
                    .iter()
                    .map(|s| position[&s.node_id])
                    .collect()
            }
            SelectionArm::UniformUnweighted => {
                uniform_select(&cfg.weights, cfg.threshold, &mut rng)
            }
        }
    };
    let arm_b = |t: u64| -> Vec<usize> {
        let mut rng = trial_rng(cfg.rng_seed, 2, t);
        simple_weighted_select(&cfg.weights, cfg.threshold, &mut rng).expect("validated weights")
    };

    let ids: Vec<usize> = (0..n).collect();
    let runs_a: Vec<Vec<usize>> = (0..cfg.trials_a).into_par_iter().map(arm_a).collect();
    let runs_b: Vec<Vec<usize>> = (0..cfg.trials_b).into_par_iter().map(arm_b).collect();
    let verasel = selection_frequencies(ids.clone(), cfg.trials_a, |t| runs_a[t as usize].clone())?;
    let oracle = selection_frequencies(ids, cfg.trials_b, |t| runs_b[t as usize].clone())?;
    let ks_frequency = ks_two_sample(&verasel.frequencies(), &oracle.frequencies(), cfg.alpha)?;
    let sizes = |runs: &[Vec<usize>]| runs.iter().map(|r| r.len() as u64).collect::<Vec<_>>();
    let set_sizes_a = sizes(&runs_a);
    let set_sizes_b = sizes(&runs_b);
    let as_f64 = |v: &[u64]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let ks_per_run = ks_two_sample(&as_f64(&set_sizes_a), &as_f64(&set_sizes_b), cfg.alpha)?;

    Ok(ValidationReport {
        node_ids: nodes.iter().map(|(k, _)| k.node_id()).collect(),
        weights: cfg.weights.clone(),
        verasel,
        oracle,
        ks_frequency,
        ks_per_run,
        set_sizes_a,
        set_sizes_b,
    })
}
