//! Result files written by `simulate` and read back by `verify`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use verasel_core::adversary::ScenarioTranscript;
use verasel_core::crypto::{Backend, NodeId, PublicKey};
use verasel_core::replay::{member_rows, MemberRow, ReplayParams, SeedRow};
use verasel_core::Threshold;

pub const BOARD_FILE: &str = "board.txt";
pub const ACTIVE_SETS_FILE: &str = "active_sets.csv";
pub const SEEDS_FILE: &str = "seeds.csv";
pub const REJECTED_FILE: &str = "rejected.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PARAMS_FILE: &str = "params.conf";

pub const SIMULATION_FILES: [&str; 6] = [
    BOARD_FILE,
    ACTIVE_SETS_FILE,
    SEEDS_FILE,
    REJECTED_FILE,
    SUMMARY_FILE,
    PARAMS_FILE,
];

const MEMBER_HEADER: [&str; 6] = ["epoch", "node_id", "weight", "selected", "round", "layer"];
const SEED_HEADER: [&str; 4] = ["epoch", "seed", "provenance", "proposer"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_member_rows(path: &Path, rows: &[MemberRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MEMBER_HEADER)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.node_id.to_hex(),
            r.weight.to_string(),
            r.selected.to_string(),
            opt(r.round),
            opt(r.layer),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, what: &str) -> Result<&'a str> {
    rec.get(i).ok_or_else(|| anyhow!("missing {what} column"))
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| anyhow!("bad value `{s}`"))
    }
}

fn node(s: &str) -> Result<NodeId> {
    PublicKey::from_hex(s).map_err(|e| anyhow!("bad node id `{s}`: {e}"))
}

pub fn read_member_rows(path: &Path) -> Result<Vec<MemberRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = (|| -> Result<MemberRow> {
            Ok(MemberRow {
                epoch: field(&rec, 0, "epoch")?.parse()?,
                node_id: node(field(&rec, 1, "node_id")?)?,
                weight: field(&rec, 2, "weight")?.parse()?,
                selected: field(&rec, 3, "selected")?.parse()?,
                round: parse_opt(field(&rec, 4, "round")?)?,
                layer: parse_opt(field(&rec, 5, "layer")?)?,
            })
        })()
        .with_context(|| format!("{} row {}", path.display(), i + 2))?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_seed_rows(path: &Path, rows: &[SeedRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SEED_HEADER)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            hex::encode(r.seed),
            r.provenance.clone(),
            opt(r.proposer.map(|p| p.to_hex())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_seed_rows(path: &Path) -> Result<Vec<SeedRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = (|| -> Result<SeedRow> {
            let seed = hex::decode(field(&rec, 1, "seed")?)?;
            let proposer = field(&rec, 3, "proposer")?;
            Ok(SeedRow {
                epoch: field(&rec, 0, "epoch")?.parse()?,
                seed: seed
                    .try_into()
                    .map_err(|_| anyhow!("seed must be 32 bytes"))?,
                provenance: field(&rec, 2, "provenance")?.to_string(),
                proposer: if proposer.is_empty() {
                    None
                } else {
                    Some(node(proposer)?)
                },
            })
        })()
        .with_context(|| format!("{} row {}", path.display(), i + 2))?;
        out.push(row);
    }
    Ok(out)
}

pub fn params_text(p: &ReplayParams) -> String {
    format!(
        "threshold = {}\nlayers = {}\nbackend = {}\n",
        p.threshold, p.layers, p.backend
    )
}

pub fn parse_params(text: &str) -> Result<ReplayParams> {
    let mut threshold = None;
    let mut layers = None;
    let mut backend = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
        let v = v.trim();
        match k.trim() {
            "threshold" => {
                threshold = Some(
                    v.parse::<Threshold>()
                        .map_err(|e| anyhow!("line {}: {e}", i + 1))?,
                )
            }
            "layers" => {
                layers = Some(
                    v.parse::<u32>()
                        .map_err(|e| anyhow!("line {}: {e}", i + 1))?,
                )
            }
            "backend" => {
                backend = Some(
                    v.parse::<Backend>()
                        .map_err(|e| anyhow!("line {}: {e}", i + 1))?,
                )
            }
            other => bail!("line {}: unknown key `{other}`", i + 1),
        }
    }
    Ok(ReplayParams {
        threshold: threshold.ok_or_else(|| anyhow!("threshold missing"))?,
        layers: layers.ok_or_else(|| anyhow!("layers missing"))?,
        backend: backend.ok_or_else(|| anyhow!("backend missing"))?,
    })
}

fn ms(d: Duration) -> String {
    format!("{:.3} ms", d.as_secs_f64() * 1e3)
}

pub fn summary(t: &ScenarioTranscript, params: &ReplayParams) -> String {
    let mut s = String::new();
    let faulty = t.nodes.iter().filter(|n| n.profile.is_faulty()).count();
    let _ = writeln!(s, "nodes: {} ({} faulty)", t.nodes.len(), faulty);
    let _ = writeln!(
        s,
        "threshold: {}  layers: {}  backend: {}",
        params.threshold, params.layers, params.backend
    );
    let clients = t.epochs.first().map_or(0, |o| o.active_sets.len());
    let _ = writeln!(s, "clients per epoch: {clients}");
    let _ = writeln!(s, "client agreement: {}", t.clients_agree());
    let degenerate = t.degenerate_epochs();
    let _ = writeln!(
        s,
        "degenerate epochs: {}",
        if degenerate.is_empty() {
            "none".to_string()
        } else {
            degenerate
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        }
    );
    let mut max_setup = Duration::ZERO;
    let mut max_select = Duration::ZERO;
    for o in &t.epochs {
        let a = o.active_set();
        let _ = writeln!(
            s,
            "epoch {}: seed {} ({}), roster {}, rejected {}, selected {} weight {}/{}",
            o.epoch,
            &hex::encode(o.seed.seed)[..16],
            o.seed.provenance.name(),
            o.roster.len(),
            o.roster.rejected().len(),
            a.selected.len(),
            a.cumulative_weight,
            a.total_weight,
        );
        for (id, reason) in o.roster.rejected() {
            let profile = t.profile_of(id).map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(s, "  rejected {id} {reason} ({profile})");
        }
        let _ = writeln!(
            s,
            "  timing: post {}, setup {} (slowest node {}), select {} per client",
            ms(o.timing.post),
            ms(o.timing.setup_total),
            ms(o.timing.setup_max_node),
            ms(o.timing.select_max_client),
        );
        max_setup = max_setup.max(o.timing.setup_max_node);
        max_select = max_select.max(o.timing.select_max_client);
    }
    let _ = writeln!(s, "max per-node setup: {}", ms(max_setup));
    let _ = writeln!(s, "max client select: {}", ms(max_select));
    let _ = writeln!(
        s,
        "subsecond: {}",
        max_setup < Duration::from_secs(1) && max_select < Duration::from_secs(1)
    );
    s
}

/// Writes every simulation output into `dir`.
pub fn write_simulation(dir: &Path, t: &ScenarioTranscript, params: &ReplayParams) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    t.board.save(dir.join(BOARD_FILE))?;

    let rows: Vec<MemberRow> = t
        .epochs
        .iter()
        .flat_map(|o| member_rows(&o.roster, o.active_set()))
        .collect();
    write_member_rows(&dir.join(ACTIVE_SETS_FILE), &rows)?;

    let seeds: Vec<SeedRow> = t.chain.records().iter().map(SeedRow::from).collect();
    write_seed_rows(&dir.join(SEEDS_FILE), &seeds)?;

    let mut w = csv::Writer::from_path(dir.join(REJECTED_FILE))?;
    w.write_record(["epoch", "node_id", "reason"])?;
    for o in &t.epochs {
        for (id, reason) in o.roster.rejected() {
            w.write_record([o.epoch.to_string(), id.to_hex(), reason.to_string()])?;
        }
    }
    w.flush()?;

    std::fs::write(dir.join(PARAMS_FILE), params_text(params))?;
    std::fs::write(dir.join(SUMMARY_FILE), summary(t, params))?;
    Ok(())
}
