//! Metrics emission: per-round CSV, run summary, comparison and
//! early-stop tables, and the run manifest.

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::orchestrator::{ComparisonTable, EarlyStopRow, RoundRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CHAIN_FILE: &str = "chain.jsonl";
pub const AGENTS_FILE: &str = "agents.bin";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// CSV header: one row per (round, server).
pub const CSV_HEADER: &str = "round,miner,global_acc,server_id,local_acc,trust,reward,f_i,h_i1,a_i,w_i0,w_i1,b_i,pi,finalized,sim_time,example_visits";

/// Write the per-round CSV. Rows are ordered by round then server id.
pub fn write_metrics_csv<W: Write>(records: &[RoundRecord], mut w: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Scenario("no records to emit".into()));
    }
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        for s in &r.servers {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                r.miner,
                r.global_accuracy,
                s.server,
                s.local_accuracy,
                s.trust,
                s.reward,
                s.action[0],
                s.action[1],
                s.action[2],
                s.action[3],
                s.action[4],
                s.action[5],
                s.pi,
                r.finalized as u8,
                r.sim_time,
                r.cumulative_visits,
            )?;
        }
    }
    Ok(())
}

/// Count of finalized rounds each server mined.
pub fn miner_histogram(records: &[RoundRecord]) -> BTreeMap<usize, u64> {
    let mut hist = BTreeMap::new();
    for r in records {
        if r.finalized {
            *hist.entry(r.miner).or_insert(0) += 1;
        }
    }
    hist
}

/// Human- and machine-readable run summary: final accuracies and the
/// miner-count histogram.
pub fn write_summary<W: Write>(
    scenario: &str,
    seed: u64,
    records: &[RoundRecord],
    mut w: W,
) -> Result<()> {
    let last = records
        .last()
        .ok_or_else(|| Error::Scenario("no records to summarize".into()))?;
    writeln!(w, "scenario: {scenario}")?;
    writeln!(w, "seed: {seed}")?;
    writeln!(w, "rounds: {}", records.len())?;
    writeln!(
        w,
        "finalized_rounds: {}",
        records.iter().filter(|r| r.finalized).count()
    )?;
    writeln!(w, "final_global_accuracy: {}", last.global_accuracy)?;
    writeln!(w, "total_example_visits: {}", last.cumulative_visits)?;
    writeln!(w, "sim_time: {}", last.sim_time)?;
    for s in &last.servers {
        writeln!(
            w,
            "final_local_accuracy server={}: {}",
            s.server, s.local_accuracy
        )?;
    }
    for s in &last.servers {
        writeln!(w, "final_trust server={}: {}", s.server, s.trust)?;
    }
    let hist = miner_histogram(records);
    for (server, count) in &hist {
        writeln!(w, "miner_count server={server}: {count}")?;
    }
    Ok(())
}

/// Strategy comparison table as structured text.
pub fn write_comparison<W: Write>(table: &ComparisonTable, mut w: W) -> Result<()> {
    writeln!(w, "threshold: {}", table.threshold)?;
    for m in &table.modes {
        let rtt: Vec<String> = m
            .rounds_to_threshold
            .iter()
            .map(|r| match r {
                Some(k) => k.to_string(),
                None => "inf".into(),
            })
            .collect();
        writeln!(
            w,
            "mode={} final_mean={} final_sd={} rounds_to_threshold={}",
            m.mode,
            m.final_mean,
            m.final_sd,
            rtt.join("|")
        )?;
    }
    for m in &table.modes {
        let curve: Vec<String> = m.mean_curve.iter().map(|a| a.to_string()).collect();
        writeln!(w, "curve mode={}: {}", m.mode, curve.join(","))?;
    }
    Ok(())
}

/// Early-stop comparison as structured text.
pub fn write_early_stop<W: Write>(rows: &[EarlyStopRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "label,final_accuracy,sim_time,example_visits,aggregations"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.label, r.final_accuracy, r.sim_time, r.example_visits, r.aggregations
        )?;
    }
    Ok(())
}

/// Manifest tying a run's artifacts to its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(cfg: &ScenarioConfig, artifacts: Vec<String>) -> Result<Self> {
        Ok(Self {
            scenario: cfg.name.clone(),
            config_hash: cfg.config_hash()?,
            seed: cfg.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("manifest encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("manifest parse: {e}")))
    }
}

/// Resolve the output directory: an explicit flag wins, then the
/// `FEDSIM_OUT` environment variable, then `./out`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        return p;
    }
    if let Ok(env) = std::env::var("FEDSIM_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("out")
}

/// Create `dir` if needed and write `content` to `dir/name`.
pub fn write_artifact(dir: &Path, name: &str, content: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}
