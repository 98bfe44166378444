//! Unknown-service detection by classifier confidence and the
//! resynthesize, relabel, retrain update cycle.

use alloc::vec::Vec;

use crate::classifier::{ClassifierConfig, ClassifierModel};
use crate::data::{FogDataset, TrafficSample};
use crate::dec::{ClusterReport, DecConfig};
use crate::evaluation::RoundMetrics;
use crate::exec::{Clock, Executor};
use crate::federation::{FederationConfig, Transport};
use crate::gan::GanNetworks;
use crate::pipeline::{label_and_classify, train_federation, GanParams, Protocol};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Number of equal-width confidence bins in the monitoring histogram.
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct UpdatePolicy {
    /// Samples with confidence below `alpha` are unknown.
    pub alpha: f64,
    /// Monitoring batch size.
    pub batch_size: usize,
    /// Minimum unknown samples before a retrain is triggered.
    pub min_unknown: usize,
    /// Resume the GAN from its current parameters instead of reinitializing.
    pub warm_start: bool,
}

impl Default for UpdatePolicy {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            batch_size: 256,
            min_unknown: 32,
            warm_start: true,
        }
    }
}

impl UpdatePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig {
                key: "alpha",
                reason: "must lie strictly between 0 and 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                key: "batch_size",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// `o* = max(o)`.
pub fn confidence(o: &[f64]) -> f64 {
    o.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Row indices split by `o* < alpha` (unknown); `o* == alpha` stays known.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
    pub confidences: Vec<f64>,
}

pub fn split_by_confidence(confidences: &[f64], alpha: f64) -> Filtered {
    let (mut known, mut unknown) = (Vec::new(), Vec::new());
    for (i, &c) in confidences.iter().enumerate() {
        if c < alpha {
            unknown.push(i);
        } else {
            known.push(i);
        }
    }
    Filtered {
        known,
        unknown,
        confidences: confidences.to_vec(),
    }
}

pub fn confidences(model: &ClassifierModel, batch: &Matrix) -> Result<Vec<f64>> {
    Ok(model.predict_proba(batch)?.iter_rows().map(confidence).collect())
}

pub fn filter_unknown(model: &ClassifierModel, batch: &Matrix, alpha: f64) -> Result<Filtered> {
    Ok(split_by_confidence(&confidences(model, batch)?, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RocPoint {
    pub alpha: f64,
    /// Fraction of unknown-service samples flagged unknown.
    pub unknown_recall: f64,
    /// Fraction of known-service samples flagged unknown.
    pub false_unknown_rate: f64,
}

fn below(values: &[f64], alpha: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&c| c < alpha).count() as f64 / values.len() as f64
}

/// Detection trade-off at each candidate threshold.
pub fn roc_sweep(known: &[f64], unknown: &[f64], alphas: &[f64]) -> Vec<RocPoint> {
    alphas
        .iter()
        .map(|&alpha| RocPoint {
            alpha,
            unknown_recall: below(unknown, alpha),
            false_unknown_rate: below(known, alpha),
        })
        .collect()
}

/// Candidate thresholds: every observed confidence plus 1.
fn candidates(known: &[f64], unknown: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = known
        .iter()
        .chain(unknown)
        .copied()
        .filter(|c| *c > 0.0 && *c < 1.0)
        .collect();
    a.push(1.0 - f64::EPSILON);
    a.sort_by(f64::total_cmp);
    a.dedup();
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "method", rename_all = "snake_case"))]
pub enum Calibration {
    /// Largest threshold whose false-unknown rate on known validation
    /// samples stays at or below the target; needs no unknown samples.
    KnownQuantile { max_false_unknown: f64 },
    /// Threshold maximizing `unknown_recall - false_unknown_rate` on a
    /// validation split that contains labeled unknown samples.
    Youden,
}

/// Picks `alpha` from validation confidences. Returns the threshold and the
/// full sweep for reporting.
pub fn calibrate_alpha(known: &[f64], unknown: &[f64], method: Calibration) -> Result<(f64, Vec<RocPoint>)> {
    if known.is_empty() {
        return Err(Error::Empty("known validation confidences"));
    }
    let sweep = roc_sweep(known, unknown, &candidates(known, unknown));
    let chosen = match method {
        Calibration::KnownQuantile { max_false_unknown } => sweep
            .iter()
            .filter(|p| p.false_unknown_rate <= max_false_unknown)
            .map(|p| p.alpha)
            .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.max(a)))),
        Calibration::Youden => {
            if unknown.is_empty() {
                return Err(Error::Empty("unknown validation confidences"));
            }
            let mut best: Option<&RocPoint> = None;
            for p in &sweep {
                let j = p.unknown_recall - p.false_unknown_rate;
                if best.is_none_or(|b| j > b.unknown_recall - b.false_unknown_rate) {
                    best = Some(p);
                }
            }
            best.map(|p| p.alpha)
        }
    };
    let alpha = chosen.ok_or(Error::InvalidConfig {
        key: "alpha",
        reason: "no threshold satisfies the calibration target".into(),
    })?;
    Ok((alpha, sweep))
}

/// One monitored batch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MonitorRecord {
    pub version: u32,
    pub batch: u32,
    pub known: u64,
    pub unknown: u64,
    /// Counts of `o*` in `[i/10, (i+1)/10)`, the last bin closed at 1.
    pub histogram: [u64; HISTOGRAM_BINS],
}

fn histogram(conf: &[f64]) -> [u64; HISTOGRAM_BINS] {
    let mut h = [0; HISTOGRAM_BINS];
    for &c in conf {
        let bin = ((c * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        h[bin] += 1;
    }
    h
}

/// Traffic seen by one fog node.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub node_id: u32,
    pub sample: TrafficSample,
}

/// Everything the update cycle reads and replaces.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub version: u32,
    pub protocol: Protocol,
    pub nets: GanNetworks,
    pub federation: FederationConfig,
    pub dec: DecConfig,
    pub classifier_cfg: ClassifierConfig,
    pub policy: UpdatePolicy,
    /// Size of each synthesized corpus.
    pub synth_count: usize,
    pub datasets: Vec<FogDataset>,
    pub gan: GanParams,
    /// Global rounds run so far; the next training continues the numbering.
    pub rounds_done: u32,
    pub classifier: ClassifierModel,
    /// Earlier classifiers, oldest first.
    pub history: Vec<ClassifierModel>,
    pub monitor: Vec<MonitorRecord>,
}

impl PipelineState {
    /// Restores the previous classifier. Returns `false` if there is none.
    pub fn rollback(&mut self) -> bool {
        match self.history.pop() {
            Some(prev) => {
                self.classifier = prev;
                self.version -= 1;
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    /// Too few unknown samples; only the monitoring log changed.
    NoOp { unknown: usize, needed: usize },
    Updated {
        version: u32,
        unknown: usize,
        k_star: usize,
        trace: Vec<RoundMetrics>,
        cluster_report: ClusterReport,
    },
}

/// Monitors `incoming` with the current classifier. If enough unknown samples
/// turn up they are appended to the datasets of the nodes that observed them,
/// the GAN is retrained with the same protocol, the synthetic corpus is
/// relabeled and a new classifier replaces the old one (which is kept in
/// `history`).
pub fn update_cycle<E: Executor>(
    state: &mut PipelineState,
    incoming: &[Observation],
    transport: &mut dyn Transport,
    exec: &E,
    clock: &dyn Clock,
) -> Result<UpdateOutcome> {
    state.policy.validate()?;
    let len = state.classifier.sample_len();
    let mut unknown: Vec<&Observation> = Vec::new();
    for (b, chunk) in incoming.chunks(state.policy.batch_size).enumerate() {
        let x = Matrix::from_rows(chunk.iter().map(|o| o.sample.features()))?;
        if x.cols() != len {
            return Err(Error::DimensionMismatch {
                context: "monitored sample length",
                expected: len,
                actual: x.cols(),
            });
        }
        let f = filter_unknown(&state.classifier, &x, state.policy.alpha)?;
        state.monitor.push(MonitorRecord {
            version: state.version,
            batch: b as u32,
            known: f.known.len() as u64,
            unknown: f.unknown.len() as u64,
            histogram: histogram(&f.confidences),
        });
        unknown.extend(f.unknown.iter().map(|&i| &chunk[i]));
    }
    if unknown.is_empty() || unknown.len() < state.policy.min_unknown {
        return Ok(UpdateOutcome::NoOp {
            unknown: unknown.len(),
            needed: state.policy.min_unknown,
        });
    }

    let mut datasets = state.datasets.clone();
    for obs in &unknown {
        let ds = datasets
            .iter_mut()
            .find(|d| d.node_id == obs.node_id)
            .ok_or(Error::UnknownEndpoint(crate::federation::Endpoint::Node(obs.node_id)))?;
        ds.samples.push(obs.sample.clone());
    }
    let warm = state.policy.warm_start.then_some(&state.gan);
    let fed = train_federation(
        state.protocol,
        &state.nets,
        &datasets,
        &state.federation,
        warm,
        state.rounds_done,
        transport,
        exec,
        clock,
        None,
    )?;
    let labeled = label_and_classify(
        &state.nets,
        &fed.params.generator,
        state.synth_count,
        &state.dec,
        &state.classifier_cfg,
        exec,
    )?;

    let count = unknown.len();
    state.datasets = datasets;
    state.gan = fed.params;
    state.rounds_done += fed.trace.len() as u32;
    let previous = core::mem::replace(&mut state.classifier, labeled.classifier);
    state.history.push(previous);
    state.version += 1;
    Ok(UpdateOutcome::Updated {
        version: state.version,
        unknown: count,
        k_star: labeled.cluster_report.k_star,
        trace: fed.trace,
        cluster_report: labeled.cluster_report,
    })
}
