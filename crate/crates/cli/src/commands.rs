use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use verasel_core::adversary::{run_scenario, ScenarioTranscript};
use verasel_core::board::audit_transcript;
use verasel_core::crypto::{self, Backend, KeyPair};
use verasel_core::replay::{self, MemberRow, ReplayParams, SeedRow};
use verasel_core::stats::{self, ValidationConfig, ValidationReport};

use crate::config::ScenarioConfig;
use crate::output;

/// Exit statuses.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISMATCH: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

fn refuse_existing(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    if let Some(p) = paths.iter().find(|p| p.exists()) {
        bail!("{} exists; pass --force to overwrite", p.display());
    }
    Ok(())
}

/// Writes `count` key files `key-<i>.key` into `dir`. With `rng_seed` the
/// keys are derived deterministically.
pub fn keygen(
    dir: &Path,
    count: usize,
    backend: Backend,
    rng_seed: Option<u64>,
    force: bool,
) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = (0..count)
        .map(|i| dir.join(format!("key-{i}.key")))
        .collect();
    refuse_existing(&paths, force)?;
    if count > 0 {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    for (i, path) in paths.iter().enumerate() {
        let key: KeyPair = match rng_seed {
            Some(seed) => {
                let mut material = seed.to_be_bytes().to_vec();
                material.extend_from_slice(&(i as u64).to_be_bytes());
                crypto::keygen(Some(&material))
            }
            None => crypto::keygen(None),
        };
        std::fs::write(path, crypto::encode_key_file(&key, backend))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(paths)
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub backend: Option<Backend>,
    pub rng_seed: Option<u64>,
    pub trials_a: Option<u64>,
    pub trials_b: Option<u64>,
    pub alpha: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(s) = self.rng_seed {
            cfg.rng_seed = s;
        }
        if let Some(t) = self.trials_a {
            cfg.trials_a = t;
        }
        if let Some(t) = self.trials_b {
            cfg.trials_b = t;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
    }
}

pub struct SimulateOutcome {
    pub transcript: ScenarioTranscript,
    pub summary: String,
    pub exit_code: i32,
}

pub fn simulate_config(cfg: &ScenarioConfig, out: &Path, force: bool) -> Result<SimulateOutcome> {
    let paths: Vec<PathBuf> = output::SIMULATION_FILES
        .iter()
        .map(|f| out.join(f))
        .collect();
    refuse_existing(&paths, force)?;
    let scenario = cfg.scenario()?;
    let transcript = run_scenario(&scenario)?;
    let params = ReplayParams {
        threshold: cfg.threshold,
        layers: cfg.layers,
        backend: cfg.backend,
    };
    output::write_simulation(out, &transcript, &params)?;
    let summary = output::summary(&transcript, &params);
    let exit_code = if transcript.degenerate_epochs().is_empty() {
        EXIT_OK
    } else {
        EXIT_DEGENERATE
    };
    Ok(SimulateOutcome {
        transcript,
        summary,
        exit_code,
    })
}

pub fn simulate(
    config: &Path,
    out: &Path,
    overrides: &Overrides,
    force: bool,
) -> Result<SimulateOutcome> {
    let mut cfg = ScenarioConfig::load(config)?;
    overrides.apply(&mut cfg);
    simulate_config(&cfg, out, force)
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub lines: Vec<String>,
    pub all_match: bool,
}

impl VerifyReport {
    fn mismatch(mut lines: Vec<String>, reason: String) -> Self {
        lines.push(reason);
        lines.push("verdict: mismatch".into());
        Self {
            lines,
            all_match: false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_match {
            EXIT_OK
        } else {
            EXIT_MISMATCH
        }
    }

    pub fn text(&self) -> String {
        self.lines.iter().fold(String::new(), |mut s, l| {
            let _ = writeln!(s, "{l}");
            s
        })
    }
}

/// Recomputes every epoch from the board file and compares with the
/// result files next to it (or in `out`).
pub fn verify(
    board_file: &Path,
    out: Option<&Path>,
    epoch: Option<u64>,
    backend: Option<Backend>,
) -> Result<VerifyReport> {
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => board_file
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let params_path = dir.join(output::PARAMS_FILE);
    let mut params = output::parse_params(
        &std::fs::read_to_string(&params_path)
            .with_context(|| format!("reading {}", params_path.display()))?,
    )
    .with_context(|| params_path.display().to_string())?;
    if let Some(b) = backend {
        params.backend = b;
    }
    let recorded_members = output::read_member_rows(&dir.join(output::ACTIVE_SETS_FILE))?;
    let recorded_seeds = output::read_seed_rows(&dir.join(output::SEEDS_FILE))?;

    let bytes =
        std::fs::read(board_file).with_context(|| format!("reading {}", board_file.display()))?;
    let mut lines = Vec::new();
    let Ok(text) = String::from_utf8(bytes) else {
        return Ok(VerifyReport::mismatch(
            lines,
            "transcript is not valid UTF-8".into(),
        ));
    };
    let audit = match audit_transcript(&text) {
        Ok(a) => a,
        Err(e) => {
            return Ok(VerifyReport::mismatch(
                lines,
                format!("transcript unreadable: {e}"),
            ))
        }
    };
    let mut all_match = audit.issues.is_empty();
    for issue in &audit.issues {
        lines.push(format!("issue: {issue}"));
    }

    let replayed = match replay::replay_board(&audit.board, &params) {
        Ok(r) => r,
        Err(e) => return Ok(VerifyReport::mismatch(lines, format!("replay failed: {e}"))),
    };

    let mut members: BTreeMap<u64, Vec<MemberRow>> = BTreeMap::new();
    for r in recorded_members {
        members.entry(r.epoch).or_default().push(r);
    }
    let seeds: BTreeMap<u64, SeedRow> = recorded_seeds.into_iter().map(|s| (s.epoch, s)).collect();

    let last = replayed.len() as u64 - 1;
    let recorded_last = seeds
        .keys()
        .chain(members.keys())
        .max()
        .copied()
        .unwrap_or(0);
    if recorded_last != last {
        all_match = false;
        lines.push(format!(
            "recorded results cover epochs up to {recorded_last}, transcript up to {last}"
        ));
    }
    if let Some(e) = epoch {
        if e > last {
            bail!("epoch {e} is beyond the transcript (last epoch {last})");
        }
    }

    for r in &replayed {
        let e = r.epoch();
        if epoch.is_some_and(|want| want != e) {
            continue;
        }
        let rows = members.get(&e).map(Vec::as_slice).unwrap_or(&[]);
        let v = replay::compare_epoch(r, seeds.get(&e), rows);
        if v.is_match() {
            lines.push(format!(
                "epoch {e}: match (seed {}, {} selected)",
                r.seed.provenance.name(),
                r.active.selected.len()
            ));
        } else {
            all_match = false;
            let mut what = Vec::new();
            if !v.seed_match {
                what.push("seed");
            }
            if !v.members_match {
                what.push("active set");
            }
            let mut line = format!("epoch {e}: mismatch in {}", what.join(" and "));
            if !v.differing_nodes.is_empty() {
                let ids: Vec<String> = v.differing_nodes.iter().map(|n| n.to_string()).collect();
                let _ = write!(line, "; nodes {}", ids.join(" "));
            }
            lines.push(line);
        }
    }
    lines.push(format!(
        "verdict: {}",
        if all_match { "match" } else { "mismatch" }
    ));
    Ok(VerifyReport { lines, all_match })
}

pub struct ValidateOutcome {
    pub report: ValidationReport,
    pub summary: String,
    /// Whether the acceptance decision is meaningful (both arms > 1 trial).
    pub asserted: bool,
}

pub fn validate_config(cfg: &ScenarioConfig, out: &Path, force: bool) -> Result<ValidateOutcome> {
    let files = [
        "frequencies.csv",
        "ks.csv",
        "cdf_a.csv",
        "cdf_b.csv",
        "validation.txt",
    ];
    let paths: Vec<PathBuf> = files.iter().map(|f| out.join(f)).collect();
    refuse_existing(&paths, force)?;
    let report = stats::run_validation(&ValidationConfig {
        weights: cfg.weights()?,
        threshold: cfg.threshold,
        trials_a: cfg.trials_a,
        trials_b: cfg.trials_b,
        alpha: cfg.alpha,
        arm: cfg.selection_arm(),
        rng_seed: cfg.rng_seed,
    })?;
    std::fs::create_dir_all(out)?;

    let mut w = csv::Writer::from_path(&paths[0])?;
    w.write_record([
        "node_id", "weight", "count_a", "freq_a", "count_b", "freq_b",
    ])?;
    for i in 0..report.weights.len() {
        w.write_record([
            report.node_ids[i].to_hex(),
            report.weights[i].to_string(),
            report.verasel.counts[i].to_string(),
            format!("{:.6}", report.verasel.frequency(i)),
            report.oracle.counts[i].to_string(),
            format!("{:.6}", report.oracle.frequency(i)),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths[1])?;
    w.write_record(["reading", "n", "m", "statistic", "critical", "accept"])?;
    for (name, ks) in [
        ("per-node-frequency", report.ks_frequency),
        ("per-run-set-size", report.ks_per_run),
    ] {
        w.write_record([
            name.to_string(),
            ks.n.to_string(),
            ks.m.to_string(),
            format!("{:.6}", ks.statistic),
            format!("{:.6}", ks.critical),
            ks.accept.to_string(),
        ])?;
    }
    w.flush()?;

    for (path, profile) in [(&paths[2], &report.verasel), (&paths[3], &report.oracle)] {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["frequency", "cdf"])?;
        for (x, f) in stats::ecdf(&profile.frequencies()) {
            w.write_record([format!("{x:.6}"), format!("{f:.6}")])?;
        }
        w.flush()?;
    }

    let asserted = cfg.trials_a > 1 && cfg.trials_b > 1;
    let mut s = String::new();
    let total: u64 = report.weights.iter().sum();
    let _ = writeln!(
        s,
        "nodes: {}  total weight: {total}  threshold: {}",
        report.weights.len(),
        cfg.threshold
    );
    let _ = writeln!(
        s,
        "arm A: {} ({} trials)  arm B: oracle ({} trials)",
        match cfg.selection_arm() {
            stats::SelectionArm::Verasel(b) => format!("verasel/{b}"),
            stats::SelectionArm::UniformUnweighted => "uniform-unweighted".into(),
        },
        cfg.trials_a,
        cfg.trials_b
    );
    let _ = writeln!(
        s,
        "critical value at n = m = 3000, alpha = {}: {:.4}",
        cfg.alpha,
        stats::ks_critical_value(cfg.alpha, 3000, 3000)
    );
    for (name, ks) in [
        ("per-node frequency", report.ks_frequency),
        ("per-run set size", report.ks_per_run),
    ] {
        let _ = writeln!(
            s,
            "KS {name}: D = {:.4}, D_alpha = {:.4} (n = {}, m = {}) -> {}",
            ks.statistic,
            ks.critical,
            ks.n,
            ks.m,
            if ks.accept { "accept" } else { "reject" }
        );
    }
    let _ = writeln!(
        s,
        "decision: {}",
        match (asserted, report.ks_frequency.accept) {
            (false, _) => "not asserted (too few trials)",
            (true, true) => "accept",
            (true, false) => "reject",
        }
    );
    std::fs::write(&paths[4], &s)?;
    Ok(ValidateOutcome {
        report,
        summary: s,
        asserted,
    })
}

pub fn validate(
    config: &Path,
    out: &Path,
    overrides: &Overrides,
    force: bool,
) -> Result<ValidateOutcome> {
    let mut cfg = ScenarioConfig::load(config)?;
    overrides.apply(&mut cfg);
    validate_config(&cfg, out, force)
}
