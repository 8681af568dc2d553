//! CSV curves and JSON run summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::runner::{ConditionBundle, RunMetrics};
use super::{HarnessError, Scenario, SimConfig};

pub const CSV_HEADER: &str = "k,node,mse,stderr";

/// Label attached to every summary: the reference instance supplies the
/// graph and observation matrices, the remaining parameters are chosen here.
pub const ARTIFACT_LABEL: &str = "artifact choice: noise level, gains, graph process and x0 are not reference values";
pub const REFERENCE_LABEL: &str = "reference instance";

/// `k,node,mse,stderr` rows, one per node and one `network` row per k.
/// Values carry 17 significant digits.
pub fn write_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (k, (row, se)) in metrics.node_mse.iter().zip(&metrics.node_stderr).enumerate() {
        for (i, (m, s)) in row.iter().zip(se).enumerate() {
            let _ = writeln!(out, "{k},{i},{m:.16e},{s:.16e}");
        }
        let _ = writeln!(
            out,
            "{k},network,{:.16e},{:.16e}",
            metrics.network_mse[k], metrics.network_stderr[k]
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let io = |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

pub fn export_csv(metrics: &RunMetrics, path: &Path) -> Result<(), HarnessError> {
    write_file(path, &write_csv(metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedInfo {
    pub master_seed: u64,
    pub replicates: usize,
    /// How per-replicate streams are derived.
    pub stream_layout: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub gains_decay: bool,
    pub gains_square_summable: bool,
    pub gains_below_admissible_bound: bool,
    pub excitation: Option<bool>,
    pub switching_criteria: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalMse {
    pub nodes: Vec<f64>,
    pub network: f64,
    pub network_stderr: f64,
    pub initial_network: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: SimConfig,
    pub scenario: String,
    pub label: &'static str,
    pub seeds: SeedInfo,
    pub horizon: usize,
    pub admissible_gain_bound: f64,
    pub kappa_star: f64,
    pub verdicts: Verdicts,
    pub final_mse: FinalMse,
    pub conditions: Option<ConditionBundle>,
}

impl RunSummary {
    pub fn new(cfg: &SimConfig, scenario: &Scenario, metrics: &RunMetrics) -> Result<Self, HarnessError> {
        let gains = match &metrics.conditions {
            Some(c) => c.gains.clone(),
            None => scenario.gain_report(cfg.horizon)?,
        };
        Ok(Self {
            config: cfg.clone(),
            scenario: scenario.name.clone(),
            label: if scenario.reference_instance {
                REFERENCE_LABEL
            } else {
                ARTIFACT_LABEL
            },
            seeds: SeedInfo {
                master_seed: metrics.master_seed,
                replicates: metrics.replicates,
                stream_layout: "ChaCha8(master_seed), stream = replicate << 2 | {graph 0, noise 1, delay 2, aux 3}",
            },
            horizon: metrics.horizon,
            admissible_gain_bound: gains.gain_bound.bound,
            kappa_star: gains.gain_bound.kappa_star,
            verdicts: Verdicts {
                gains_decay: gains.decay_ok(),
                gains_square_summable: gains.square_summable_ok(),
                gains_below_admissible_bound: gains.below_gain_bound,
                excitation: metrics.conditions.as_ref().map(ConditionBundle::verdict),
                switching_criteria: metrics.conditions.as_ref().map(|c| c.switching.verdict),
            },
            final_mse: FinalMse {
                nodes: metrics.node_mse.last().cloned().unwrap_or_default(),
                network: metrics.final_network_mse(),
                network_stderr: *metrics.network_stderr.last().unwrap_or(&f64::NAN),
                initial_network: *metrics.network_mse.first().unwrap_or(&f64::NAN),
            },
            conditions: metrics.conditions.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Serialize(e.to_string()))
    }
}

pub fn export_summary(summary: &RunSummary, path: &Path) -> Result<(), HarnessError> {
    let mut text = summary.to_json()?;
    text.push('\n');
    write_file(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_metrics() -> RunMetrics {
        RunMetrics {
            scenario: "t".into(),
            horizon: 1,
            replicates: 2,
            master_seed: 3,
            node_mse: vec![vec![1.0, 0.1 + 0.2], vec![1.0 / 3.0, 2.0_f64.sqrt()]],
            node_stderr: vec![vec![0.0, 1e-300], vec![0.5, 0.25]],
            network_mse: vec![0.65, 0.8738],
            network_stderr: vec![0.0, 0.1],
            path_max_error: None,
            conditions: None,
        }
    }

    #[test]
    fn empty_metrics_give_header_only() {
        let mut m = tiny_metrics();
        m.node_mse.clear();
        m.node_stderr.clear();
        m.network_mse.clear();
        m.network_stderr.clear();
        assert_eq!(write_csv(&m), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_round_trips_exactly() {
        let m = tiny_metrics();
        let text = write_csv(&m);
        let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 6);
        for row in &rows {
            let k: usize = row[0].parse().unwrap();
            let (mse, se): (f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap());
            if row[1] == "network" {
                assert_eq!(mse, m.network_mse[k]);
                assert_eq!(se, m.network_stderr[k]);
            } else {
                let i: usize = row[1].parse().unwrap();
                assert_eq!(mse, m.node_mse[k][i]);
                assert_eq!(se, m.node_stderr[k][i]);
            }
        }
    }

    #[test]
    fn files_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_metrics();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("sub/b.csv"));
        export_csv(&m, &a).unwrap();
        export_csv(&m, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn summary_reports_bound_and_kappa() {
        let cfg = SimConfig::preset("remark5", 10, 2, 1);
        let s = cfg.resolve().unwrap();
        let metrics = super::super::monte_carlo(&cfg).unwrap();
        let summary = RunSummary::new(&cfg, &s, &metrics).unwrap();
        let v: serde_json::Value = serde_json::from_str(&summary.to_json().unwrap()).unwrap();
        assert!(v["admissible_gain_bound"].as_f64().unwrap() > 0.0);
        let kappa = v["kappa_star"].as_f64().unwrap();
        assert!(kappa > 0.0 && kappa < 1.0);
        assert_eq!(v["config"]["scenario"], "remark5");
        assert_eq!(v["seeds"]["master_seed"], 1);
        assert!(v["final_mse"]["network"].as_f64().is_some());
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = export_csv(&tiny_metrics(), &blocker.join("out.csv")).unwrap_err();
        assert!(err.to_string().contains("file"));
        assert_eq!(err.exit_code(), 2);
    }
}
