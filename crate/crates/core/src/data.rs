//! Traffic samples: byte ingestion, grids, fog partitioning and the
//! synthetic desk-scale corpus.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Matrix;
use crate::{rng, Error, Result};

/// Feature length of an ingested byte record (a 40 x 40 grid).
pub const DEFAULT_SAMPLE_LEN: usize = 1600;
/// Feature length of the synthetic corpus.
pub const DEFAULT_CORPUS_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrafficSample {
    features: Vec<f64>,
    pub true_class: Option<u32>,
    pub source_id: u64,
}

impl TrafficSample {
    /// Validates that every feature is a finite value in `[0, 1]`.
    pub fn new(features: Vec<f64>, true_class: Option<u32>, source_id: u64) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("sample features"));
        }
        if !features.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig {
                key: "features",
                reason: "feature values must lie in [0, 1]".into(),
            });
        }
        Ok(Self {
            features,
            true_class,
            source_id,
        })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn with_class(mut self, class: Option<u32>) -> Self {
        self.true_class = class;
        self
    }

    pub fn with_source(mut self, source_id: u64) -> Self {
        self.source_id = source_id;
        self
    }

    /// Quantizes back to bytes (`round(255 · v)`).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.features.iter().map(|v| libm::round(v * 255.0) as u8).collect()
    }
}

/// Truncates or zero-pads `raw` to `len` bytes and scales each byte by 1/255.
pub fn ingest_bytes(raw: &[u8], len: usize) -> Result<TrafficSample> {
    if raw.is_empty() {
        return Err(Error::Empty("raw record"));
    }
    if len == 0 {
        return Err(Error::InvalidConfig {
            key: "sample_len",
            reason: "must be positive".into(),
        });
    }
    let mut features = vec![0.0; len];
    for (f, &b) in features.iter_mut().zip(raw) {
        *f = f64::from(b) / 255.0;
    }
    TrafficSample::new(features, None, 0)
}

/// Row-major 2-D view of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn flatten(self) -> Vec<f64> {
        self.values
    }
}

pub fn reshape_grid(sample: &TrafficSample, height: usize, width: usize) -> Result<Grid> {
    if height * width != sample.len() {
        return Err(Error::DimensionMismatch {
            context: "grid size",
            expected: sample.len(),
            actual: height * width,
        });
    }
    Ok(Grid {
        height,
        width,
        values: sample.features.clone(),
    })
}

/// Square grid side for a sample length, if the length is a perfect square.
pub fn square_side(len: usize) -> Option<usize> {
    let side = libm::round(libm::sqrt(len as f64)) as usize;
    (side * side == len).then_some(side)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FogDataset {
    pub node_id: u32,
    pub samples: Vec<TrafficSample>,
}

impl FogDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Result<Matrix> {
        samples_matrix(&self.samples)
    }
}

/// Stacks sample features into a matrix, one row per sample.
pub fn samples_matrix(samples: &[TrafficSample]) -> Result<Matrix> {
    Matrix::from_rows(samples.iter().map(TrafficSample::features))
}

/// Uniformly random allocation to `nodes` shards whose sizes differ by at most one.
pub fn partition(samples: &[TrafficSample], nodes: usize, seed: u64) -> Result<Vec<FogDataset>> {
    check_partition_args(samples.len(), nodes)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::Purpose::Partition, 0));
    let base = samples.len() / nodes;
    let extra = samples.len() % nodes;
    let mut out = Vec::with_capacity(nodes);
    let mut cursor = 0;
    for node in 0..nodes {
        let size = base + usize::from(node < extra);
        out.push(FogDataset {
            node_id: node as u32,
            samples: order[cursor..cursor + size]
                .iter()
                .map(|&i| samples[i].clone())
                .collect(),
        });
        cursor += size;
    }
    Ok(out)
}

/// Non-IID allocation: node `n` only holds `classes_per_node` classes, taken
/// round-robin from the sorted class list starting at offset `n`. Each
/// sample goes to a random node among those holding its class.
pub fn partition_by_class(
    samples: &[TrafficSample],
    nodes: usize,
    classes_per_node: usize,
    seed: u64,
) -> Result<Vec<FogDataset>> {
    check_partition_args(samples.len(), nodes)?;
    let classes: Vec<u32> = samples
        .iter()
        .filter_map(|s| s.true_class)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.is_empty() || classes_per_node == 0 {
        return Err(Error::InvalidConfig {
            key: "classes_per_node",
            reason: "needs labeled samples and a positive class count".into(),
        });
    }
    let per = classes_per_node.min(classes.len());
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for node in 0..nodes {
        for j in 0..per {
            holders[(node + j) % classes.len()].push(node);
        }
    }
    let mut rng = rng::stream(seed, rng::Purpose::Partition, 1);
    let mut out: Vec<FogDataset> = (0..nodes)
        .map(|n| FogDataset {
            node_id: n as u32,
            samples: Vec::new(),
        })
        .collect();
    for s in samples {
        let class = s.true_class.ok_or(Error::InvalidConfig {
            key: "classes_per_node",
            reason: "every sample needs a class".into(),
        })?;
        let idx = classes.binary_search(&class).expect("class collected above");
        let candidates = &holders[idx];
        if candidates.is_empty() {
            return Err(Error::InvalidConfig {
                key: "classes_per_node",
                reason: "some class is held by no node".into(),
            });
        }
        let node = candidates[rng.random_range(0..candidates.len())];
        out[node].samples.push(s.clone());
    }
    if out.iter().any(FogDataset::is_empty) {
        return Err(Error::TooFewSamples {
            context: "class-restricted partition",
            needed: 1,
            available: 0,
        });
    }
    Ok(out)
}

fn check_partition_args(len: usize, nodes: usize) -> Result<()> {
    if nodes == 0 {
        return Err(Error::InvalidConfig {
            key: "N",
            reason: "at least one node is required".into(),
        });
    }
    if nodes > len {
        return Err(Error::TooFewSamples {
            context: "partition",
            needed: nodes,
            available: len,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Spread {
    /// Isotropic Gaussian, clipped to `[0, 1]`.
    Gaussian { sigma: f64 },
    /// Uniform box of the given half-width, clipped to `[0, 1]`.
    Uniform { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassProfile {
    pub center: Vec<f64>,
    pub spread: Spread,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusSpec {
    pub classes: Vec<ClassProfile>,
    pub samples_per_class: usize,
    pub unknown_classes: BTreeSet<u32>,
    pub seed: u64,
}

impl CorpusSpec {
    /// Random class centers drawn uniformly from `[0.15, 0.85]^dim`.
    pub fn random(num_classes: usize, dim: usize, samples_per_class: usize, sigma: f64, seed: u64) -> Self {
        Self::random_in(num_classes, dim, samples_per_class, sigma, 0.15, seed)
    }

    /// Random class centers drawn uniformly from `[margin, 1 - margin]^dim`.
    pub fn random_in(
        num_classes: usize,
        dim: usize,
        samples_per_class: usize,
        sigma: f64,
        margin: f64,
        seed: u64,
    ) -> Self {
        let mut rng = rng::stream(seed, rng::Purpose::Corpus, u64::MAX);
        let (low, high) = (margin.clamp(0.0, 0.5), 1.0 - margin.clamp(0.0, 0.5));
        let classes = (0..num_classes)
            .map(|_| ClassProfile {
                center: (0..dim)
                    .map(|_| if high > low { rng.random_range(low..high) } else { low })
                    .collect(),
                spread: Spread::Gaussian { sigma },
            })
            .collect();
        Self {
            classes,
            samples_per_class,
            unknown_classes: BTreeSet::new(),
            seed,
        }
    }

    pub fn with_unknown(mut self, unknown: impl IntoIterator<Item = u32>) -> Self {
        self.unknown_classes = unknown.into_iter().collect();
        self
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.center.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig {
                key: "num_classes",
                reason: "at least one class is required".into(),
            });
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidConfig {
                key: "samples_per_class",
                reason: "must be positive".into(),
            });
        }
        let dim = self.dim();
        for class in &self.classes {
            let spread_ok = match class.spread {
                Spread::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
                Spread::Uniform { half_width } => half_width >= 0.0 && half_width.is_finite(),
            };
            if dim == 0
                || class.center.len() != dim
                || !class.center.iter().all(|v| (0.0..=1.0).contains(v))
                || !spread_ok
            {
                return Err(Error::InvalidConfig {
                    key: "classes",
                    reason: "centers must share a positive dimension, lie in [0, 1] and have a valid spread".into(),
                });
            }
        }
        if let Some(&bad) = self.unknown_classes.iter().find(|&&c| c as usize >= self.classes.len()) {
            return Err(Error::InvalidConfig {
                key: "unknown_classes",
                reason: alloc::format!("class {bad} is out of range"),
            });
        }
        Ok(())
    }
}

/// Labeled samples, class by class; `source_id` is the running index.
pub fn synth_corpus(spec: &CorpusSpec) -> Result<Vec<TrafficSample>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    for (class, profile) in spec.classes.iter().enumerate() {
        let mut rng = rng::stream(spec.seed, rng::Purpose::Corpus, class as u64);
        for _ in 0..spec.samples_per_class {
            let features = profile
                .center
                .iter()
                .map(|&c| {
                    let offset = match profile.spread {
                        Spread::Gaussian { sigma } => {
                            sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                        }
                        Spread::Uniform { half_width } if half_width > 0.0 => rng.random_range(-half_width..half_width),
                        Spread::Uniform { .. } => 0.0,
                    };
                    (c + offset).clamp(0.0, 1.0)
                })
                .collect();
            let id = out.len() as u64;
            out.push(TrafficSample::new(features, Some(class as u32), id)?);
        }
    }
    Ok(out)
}

/// Splits by membership of the class in `unknown`; unlabeled samples count as known.
pub fn split_known_unknown(
    samples: &[TrafficSample],
    unknown: &BTreeSet<u32>,
) -> (Vec<TrafficSample>, Vec<TrafficSample>) {
    samples
        .iter()
        .cloned()
        .partition(|s| !s.true_class.is_some_and(|c| unknown.contains(&c)))
}
