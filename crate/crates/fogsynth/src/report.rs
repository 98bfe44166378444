//! Structured run reports, plot-ready tables and run comparison.
//!
//! `report.json` (schema version [`SCHEMA_VERSION`]):
//!
//! | field         | content                                                   |
//! |---------------|-----------------------------------------------------------|
//! | `config`      | the effective run config                                  |
//! | `data`        | shard sizes, incoming and test counts                      |
//! | `train`       | per model version: round trace, byte overhead, privacy audit |
//! | `label`       | per version: BIC grid, chosen `k*`, pseudo-label counts    |
//! | `calibration` | per version: threshold and its ROC sweep                   |
//! | `eval`        | per version: pairwise and per-class metrics, confusion     |
//! | `update`      | per update cycle: outcome, monitoring log                  |
//!
//! Reports never hold absolute paths or timestamps; in deterministic mode all
//! wall times are zero, so two runs of one config give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Result};
use fogsynth_core::classifier::{ConfusionMatrix, EvalReport};
use fogsynth_core::dec::ClusterReport;
use fogsynth_core::evaluation::RoundMetrics;
use fogsynth_core::federation::{EnvelopeRecord, OverheadReport, Provenance};
use fogsynth_core::update::{Calibration, MonitorRecord, RocPoint};
use serde::{Deserialize, Serialize};

use crate::artifacts::read_json;
use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataReport {
    pub sample_len: usize,
    pub classes: Vec<u32>,
    pub unknown_classes: Vec<u32>,
    pub node_samples: Vec<usize>,
    pub incoming: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAudit {
    pub envelopes: u64,
    /// Envelopes whose payload is derived from real samples; must be zero.
    pub real_payload_envelopes: u64,
}

impl PrivacyAudit {
    pub fn from_log(log: &[EnvelopeRecord]) -> Self {
        Self {
            envelopes: log.len() as u64,
            real_payload_envelopes: log.iter().filter(|r| r.provenance == Provenance::Real).count() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub version: u32,
    pub protocol: String,
    pub nodes: usize,
    pub batch: usize,
    pub rounds: Vec<RoundMetrics>,
    pub overhead: OverheadReport,
    pub bytes_per_round: f64,
    pub wall_ms_per_round: f64,
    pub privacy: PrivacyAudit,
}

impl TrainReport {
    pub fn new(
        version: u32,
        protocol: &str,
        nodes: usize,
        batch: usize,
        rounds: Vec<RoundMetrics>,
        log: &[EnvelopeRecord],
    ) -> Self {
        let overhead = fogsynth_core::federation::overhead_report(log);
        let n = rounds.len().max(1) as f64;
        Self {
            version,
            protocol: protocol.to_string(),
            nodes,
            batch,
            bytes_per_round: overhead.total() as f64 / n,
            wall_ms_per_round: rounds.iter().map(|r| r.wall_ms).sum::<f64>() / n,
            privacy: PrivacyAudit::from_log(log),
            overhead,
            rounds,
        }
    }

    pub fn mmd_trace(&self) -> Vec<(u32, f64)> {
        self.rounds.iter().filter_map(|r| r.mmd.map(|m| (r.round, m))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub version: u32,
    pub synth_count: usize,
    pub cluster: ClusterReport,
    /// Pseudo-label histogram; absent for generations produced by the update cycle.
    pub label_counts: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub version: u32,
    pub alpha: f64,
    /// `None` when the threshold was fixed in the config.
    pub method: Option<Calibration>,
    pub validation_known: usize,
    pub validation_false_unknown: f64,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub alpha: f64,
    pub known: usize,
    pub unknown: usize,
    pub unknown_recall: f64,
    pub false_unknown_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub version: u32,
    /// Classes the classifier is expected to know at this version.
    pub classes: Vec<u32>,
    pub metrics: EvalReport,
    /// Test samples of classes the model has not seen, scored by the threshold.
    pub detection: Option<DetectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum UpdateSummary {
    NoOp {
        unknown: usize,
        needed: usize,
    },
    Updated {
        version: u32,
        unknown: usize,
        k_star: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub from_version: u32,
    pub alpha: f64,
    pub incoming: usize,
    pub summary: UpdateSummary,
    pub monitor: Vec<MonitorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub name: String,
    pub config: RunConfig,
    pub data: Option<DataReport>,
    pub train: Vec<TrainReport>,
    pub label: Vec<LabelReport>,
    pub calibration: Vec<CalibrationReport>,
    pub eval: Vec<EvalSection>,
    pub update: Vec<UpdateReport>,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let report: RunReport = read_json(path)?;
        ensure!(
            report.schema_version == SCHEMA_VERSION,
            "{} has schema version {}, expected {SCHEMA_VERSION}",
            path.display(),
            report.schema_version
        );
        Ok(report)
    }
}

/// `round,mmd` rows.
pub fn mmd_csv(trace: &[(u32, f64)]) -> String {
    let mut out = String::from("round,mmd\n");
    for (r, m) in trace {
        let _ = writeln!(out, "{r},{m}");
    }
    out
}

/// One row per true class, one column per predicted label.
pub fn confusion_csv(c: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\predicted");
    for p in &c.predicted {
        let _ = write!(out, ",{p}");
    }
    out.push('\n');
    for (t, row) in c.true_classes.iter().zip(&c.counts) {
        let _ = write!(out, "{t}");
        for n in row {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
    }
    out
}

/// One JSON object per line.
pub fn envelope_log_jsonl(log: &[EnvelopeRecord]) -> Result<String> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub protocol: String,
    pub nodes: usize,
    pub batch: usize,
    pub rounds: usize,
    pub bytes_per_round: f64,
    pub wall_ms_per_round: f64,
    pub mmd: Vec<(u32, f64)>,
}

impl RunSummary {
    /// Summarizes the first training run of a report.
    pub fn from_report(r: &RunReport) -> Result<Self> {
        let Some(t) = r.train.first() else {
            bail!("run `{}` has no training report", r.name);
        };
        Ok(Self {
            name: r.name.clone(),
            protocol: t.protocol.clone(),
            nodes: t.nodes,
            batch: t.batch,
            rounds: t.rounds.len(),
            bytes_per_round: t.bytes_per_round,
            wall_ms_per_round: t.wall_ms_per_round,
            mmd: t.mmd_trace(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdDelta {
    pub round: u32,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: RunSummary,
    pub b: RunSummary,
    /// `b / a`; 1 when both are zero.
    pub bytes_ratio: f64,
    pub bytes_delta: f64,
    pub wall_ms_delta: f64,
    /// Rounds probed in both runs.
    pub mmd: Vec<MmdDelta>,
}

pub fn compare(a: &RunReport, b: &RunReport) -> Result<Comparison> {
    ensure!(
        a.schema_version == b.schema_version,
        "incompatible report schemas {} and {}",
        a.schema_version,
        b.schema_version
    );
    let (a, b) = (RunSummary::from_report(a)?, RunSummary::from_report(b)?);
    let mmd = a
        .mmd
        .iter()
        .filter_map(|&(round, x)| {
            b.mmd.iter().find(|(r, _)| *r == round).map(|&(_, y)| MmdDelta {
                round,
                a: x,
                b: y,
                delta: y - x,
            })
        })
        .collect();
    Ok(Comparison {
        bytes_ratio: if a.bytes_per_round == 0.0 && b.bytes_per_round == 0.0 {
            1.0
        } else {
            b.bytes_per_round / a.bytes_per_round
        },
        bytes_delta: b.bytes_per_round - a.bytes_per_round,
        wall_ms_delta: b.wall_ms_per_round - a.wall_ms_per_round,
        mmd,
        a,
        b,
    })
}

impl Comparison {
    /// Side-by-side text table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let (a, b) = (&self.a, &self.b);
        let _ = writeln!(out, "{:<18} {:>16} {:>16} {:>14}", "", a.name, b.name, "delta");
        let _ = writeln!(out, "{:<18} {:>16} {:>16}", "protocol", a.protocol, b.protocol);
        let _ = writeln!(out, "{:<18} {:>16} {:>16}", "batch", a.batch, b.batch);
        let _ = writeln!(
            out,
            "{:<18} {:>16.0} {:>16.0} {:>14.0}",
            "bytes/round", a.bytes_per_round, b.bytes_per_round, self.bytes_delta
        );
        let _ = writeln!(
            out,
            "{:<18} {:>16.2} {:>16.2} {:>14.2}",
            "ms/round", a.wall_ms_per_round, b.wall_ms_per_round, self.wall_ms_delta
        );
        for d in &self.mmd {
            let _ = writeln!(
                out,
                "{:<18} {:>16.6} {:>16.6} {:>14.6}",
                format!("mmd@{}", d.round),
                d.a,
                d.b,
                d.delta
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(protocol: &str, bytes: u64, mmd: &[(u32, f64)]) -> RunReport {
        let rounds = mmd
            .iter()
            .map(|&(round, m)| RoundMetrics {
                round,
                gen_loss: 0.0,
                disc_loss: 0.0,
                bytes_up: bytes,
                bytes_down: 0,
                wall_ms: 1.0,
                mmd: Some(m),
            })
            .collect::<Vec<_>>();
        RunReport {
            schema_version: SCHEMA_VERSION,
            name: protocol.into(),
            config: RunConfig::default(),
            data: None,
            train: vec![TrainReport {
                version: 1,
                protocol: protocol.into(),
                nodes: 4,
                batch: 64,
                rounds,
                overhead: OverheadReport::default(),
                bytes_per_round: bytes as f64,
                wall_ms_per_round: 1.0,
                privacy: PrivacyAudit {
                    envelopes: 0,
                    real_payload_envelopes: 0,
                },
            }],
            label: vec![],
            calibration: vec![],
            eval: vec![],
            update: vec![],
        }
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let r = report("fgan1", 1000, &[(19, 0.5), (39, 0.25)]);
        let c = compare(&r, &r).unwrap();
        assert_eq!(c.bytes_ratio, 1.0);
        assert_eq!(c.bytes_delta, 0.0);
        assert!(c.mmd.iter().all(|d| d.delta == 0.0));
        assert_eq!(c.mmd.len(), 2);
        assert!(c.render().contains("mmd@39"));
    }

    #[test]
    fn comparison_aligns_rounds_and_checks_schema() {
        let a = report("fgan1", 1000, &[(19, 0.5), (39, 0.25)]);
        let b = report("fgan2", 3000, &[(39, 0.5)]);
        let c = compare(&a, &b).unwrap();
        assert_eq!(c.bytes_ratio, 3.0);
        assert_eq!(
            c.mmd,
            vec![MmdDelta {
                round: 39,
                a: 0.25,
                b: 0.5,
                delta: 0.25
            }]
        );
        let mut old = b.clone();
        old.schema_version = 0;
        assert!(compare(&a, &old).is_err());
    }

    #[test]
    fn csv_tables() {
        assert_eq!(mmd_csv(&[(19, 0.5)]), "round,mmd\n19,0.5\n");
        let c = ConfusionMatrix::new(&[0, 0, 1], &[2, 3, 3]).unwrap();
        assert_eq!(confusion_csv(&c), "true\\predicted,2,3\n0,1,1\n1,0,1\n");
    }
}
