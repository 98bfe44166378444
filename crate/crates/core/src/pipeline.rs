//! End-to-end orchestration: federated synthesis, pseudo-labeling and
//! classifier training.

use alloc::vec::Vec;

use crate::classifier::{train_classifier, ClassifierConfig, ClassifierModel};
use crate::data::FogDataset;
use crate::dec::{assign_pseudo_labels, select_k, ClusterReport, DecConfig};
use crate::evaluation::{MmdProbe, RoundMetrics};
use crate::exec::{Clock, Executor};
use crate::federation::{FederationConfig, Transport};
use crate::fgan1::Fgan1;
use crate::fgan2::Fgan2;
use crate::gan::{gen_forward, sample_noise, BatchKind, GanNetworks};
use crate::nn::ModelParams;
use crate::rng::{self, Purpose};
use crate::tensor::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Protocol {
    #[default]
    Fgan1,
    Fgan2,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Fgan1 => "fgan1",
            Protocol::Fgan2 => "fgan2",
        }
    }
}

impl core::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgan1" => Ok(Protocol::Fgan1),
            "fgan2" => Ok(Protocol::Fgan2),
            other => Err(Error::InvalidConfig {
                key: "protocol",
                reason: alloc::format!("unknown protocol `{other}` (expected fgan1 or fgan2)"),
            }),
        }
    }
}

/// Parameters to resume from.
#[derive(Debug, Clone, PartialEq)]
pub struct GanParams {
    pub generator: ModelParams,
    /// One per node for FGAN-I, a single global vector for FGAN-II.
    pub discriminators: Vec<ModelParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationOutcome {
    pub protocol: Protocol,
    pub params: GanParams,
    pub trace: Vec<RoundMetrics>,
}

/// Runs `cfg.rounds` rounds of the chosen protocol, numbered from `first_round`.
#[allow(clippy::too_many_arguments)]
pub fn train_federation<E: Executor>(
    protocol: Protocol,
    nets: &GanNetworks,
    datasets: &[FogDataset],
    cfg: &FederationConfig,
    warm: Option<&GanParams>,
    first_round: u32,
    transport: &mut dyn Transport,
    exec: &E,
    clock: &dyn Clock,
    probe: Option<&MmdProbe>,
) -> Result<FederationOutcome> {
    let (w0, t0) = match warm {
        Some(p) => (p.generator.clone(), p.discriminators.clone()),
        None => {
            let (w, t) = nets.init(cfg.seed)?;
            (w, alloc::vec![t])
        }
    };
    match protocol {
        Protocol::Fgan1 => {
            let mut fed = Fgan1::from_params(nets.clone(), w0, &t0, datasets, cfg.clone())?.starting_at(first_round);
            let trace = fed.run(transport, exec, clock, probe)?;
            Ok(FederationOutcome {
                protocol,
                params: GanParams {
                    discriminators: fed.nodes.iter().map(|n| n.discriminator.clone()).collect(),
                    generator: fed.generator,
                },
                trace,
            })
        }
        Protocol::Fgan2 => {
            let theta = match t0.as_slice() {
                [one] => one.clone(),
                many => crate::fgan2::fedavg(&many.iter().collect::<Vec<_>>())?,
            };
            let mut fed = Fgan2::from_params(nets.clone(), w0, theta, datasets, cfg.clone())?.starting_at(first_round);
            let trace = fed.run(transport, exec, clock, probe)?;
            Ok(FederationOutcome {
                protocol,
                params: GanParams {
                    generator: fed.generator,
                    discriminators: alloc::vec![fed.discriminator],
                },
                trace,
            })
        }
    }
}

/// Draws the synthesized corpus `T` of `n` samples from the generator.
pub fn synthesize(nets: &GanNetworks, generator: &ModelParams, n: usize, seed: u64) -> Result<Matrix> {
    let mut rng = rng::stream(seed, Purpose::Synthesis, 0);
    let z = sample_noise(n, nets.noise, &mut rng)?;
    Ok(gen_forward(&nets.generator, generator, &z, BatchKind::FakeForGenerator)?.samples)
}

/// Output of pseudo-labeling and classifier training on a synthesized corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledModel {
    pub synthesized: Matrix,
    pub pseudo_labels: Vec<u32>,
    pub cluster_report: ClusterReport,
    pub classifier: ClassifierModel,
}

/// Synthesize, cluster with BIC-selected `k`, and train the classifier.
pub fn label_and_classify<E: Executor>(
    nets: &GanNetworks,
    generator: &ModelParams,
    synth_count: usize,
    dec: &DecConfig,
    clf: &ClassifierConfig,
    exec: &E,
) -> Result<LabeledModel> {
    let t = synthesize(nets, generator, synth_count, dec.seed)?;
    let sel = select_k(&t, dec, exec)?;
    let labels = assign_pseudo_labels(&t, &sel.fit.model)?;
    let classifier = train_classifier(&t, &labels, clf)?;
    Ok(LabeledModel {
        synthesized: t,
        pseudo_labels: labels,
        cluster_report: sel.report,
        classifier,
    })
}
