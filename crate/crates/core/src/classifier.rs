//! Service classifier trained on pseudo-labeled synthetic traffic, plus the
//! evaluation metrics used to score it.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::assignment::max_score_assignment;
use crate::data::square_side;
use crate::nn::{init_model, Activation, Architecture, LayerSpec, ModelParams, Network, Role, Shape};
use crate::optim::{Direction, Optimizer, OptimizerKind};
use crate::rng::{self, Purpose};
use crate::tensor::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ClassifierArch {
    Mlp {
        hidden: Vec<usize>,
    },
    /// Two strided `1 x 5` convolutions (16 and 32 channels) and a dense head.
    Conv1d,
    /// Two strided `3 x 3` convolutions on the square sample grid and a dense head.
    Conv2d,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        ClassifierArch::Mlp { hidden: vec![128, 64] }
    }
}

impl ClassifierArch {
    /// Network producing `num_classes` logits for samples of length `sample_len`.
    pub fn build(&self, sample_len: usize, num_classes: usize) -> Result<Architecture> {
        let act = Activation::LeakyRelu;
        let head = LayerSpec::Dense {
            units: num_classes,
            activation: Activation::Identity,
        };
        let arch = match self {
            ClassifierArch::Mlp { hidden } => {
                Architecture::mlp(sample_len, hidden, act, num_classes, Activation::Identity)
            }
            ClassifierArch::Conv1d => {
                let conv = |channels| LayerSpec::Conv {
                    channels,
                    kernel: [1, 5],
                    stride: [1, 2],
                    padding: [0, 2],
                    activation: act,
                };
                Architecture {
                    input: Shape::grid(1, 1, sample_len),
                    layers: vec![conv(16), conv(32), head],
                }
            }
            ClassifierArch::Conv2d => {
                let side = square_side(sample_len).ok_or(Error::InvalidConfig {
                    key: "classifier.arch",
                    reason: "conv-2d needs a square sample length".into(),
                })?;
                let conv = |channels| LayerSpec::Conv {
                    channels,
                    kernel: [3, 3],
                    stride: [2, 2],
                    padding: [1, 1],
                    activation: act,
                };
                Architecture {
                    input: Shape::grid(1, side, side),
                    layers: vec![conv(16), conv(32), head],
                }
            }
        };
        arch.shapes()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ClassifierConfig {
    pub arch: ClassifierArch,
    pub epochs: u32,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            arch: ClassifierArch::default(),
            epochs: 30,
            lr: 1e-3,
            batch: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassifierModel {
    pub arch: ClassifierArch,
    pub network: Architecture,
    pub params: ModelParams,
    /// `classes[i]` is the label id of output `i`.
    pub classes: Vec<u32>,
}

/// Numerically stable softmax of each row.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

fn check_rows(x: &Matrix, labels: &[u32]) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            expected: x.rows(),
            actual: labels.len(),
        });
    }
    Ok(())
}

/// Softmax cross-entropy training with Adam; deterministic in `cfg.seed`.
pub fn train_classifier(x: &Matrix, labels: &[u32], cfg: &ClassifierConfig) -> Result<ClassifierModel> {
    check_rows(x, labels)?;
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidConfig {
            key: "classifier.batch",
            reason: "must be positive".into(),
        });
    }
    let index: BTreeMap<u32, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let targets: Vec<usize> = labels.iter().map(|l| index[l]).collect();
    let arch = cfg.arch.build(x.cols(), classes.len())?;
    let net = Network::new(arch.clone())?;
    let mut params = init_model(&arch, Role::Classifier, cfg.seed)?;
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.lr);
    let mut rng = rng::stream(cfg.seed, Purpose::Classifier, 0);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let c = classes.len();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let xb = x.select_rows(chunk);
            let trace = net.forward(&params, &xb)?;
            let mut grad = softmax_rows(trace.output());
            let inv = 1.0 / chunk.len() as f64;
            for (r, &i) in chunk.iter().enumerate() {
                let row = grad.row_mut(r);
                row[targets[i]] -= 1.0;
                row.iter_mut().for_each(|v| *v *= inv);
            }
            debug_assert_eq!(grad.cols(), c);
            let g = net.backward(&params, &trace, &grad, false)?;
            opt.step(&mut params, &g.params, Direction::Descend)?;
        }
    }
    Ok(ClassifierModel {
        arch: cfg.arch.clone(),
        network: arch,
        params,
        classes,
    })
}

impl ClassifierModel {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn sample_len(&self) -> usize {
        self.network.input_size()
    }

    /// Class probability rows.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.sample_len() {
            return Err(Error::DimensionMismatch {
                context: "sample length",
                expected: self.sample_len(),
                actual: x.cols(),
            });
        }
        let net = Network::new(self.network.clone())?;
        Ok(softmax_rows(&net.predict(&self.params, x)?))
    }

    /// Probability vector `o` for one sample.
    pub fn predict(&self, sample: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, sample.len(), sample.to_vec())?;
        Ok(self.predict_proba(&x)?.into_vec())
    }

    /// Most likely label id per row, ties to the lower output index.
    pub fn predict_labels(&self, x: &Matrix) -> Result<Vec<u32>> {
        let p = self.predict_proba(x)?;
        Ok(crate::dec::argmax_rows(&p)
            .into_iter()
            .map(|i| self.classes[i])
            .collect())
    }
}

/// Pair decisions: a pair is positive when both samples share a predicted
/// label and true when they share a ground-truth class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// `0 / 0` is read as a perfect score: there was nothing to get wrong.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl PairCounts {
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

/// Contingency table: rows are true classes, columns predicted labels, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionMatrix {
    pub true_classes: Vec<u32>,
    pub predicted: Vec<u32>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[u32], pred: &[u32]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::DimensionMismatch {
                context: "prediction count",
                expected: truth.len(),
                actual: pred.len(),
            });
        }
        let sorted = |v: &[u32]| {
            let mut s = v.to_vec();
            s.sort_unstable();
            s.dedup();
            s
        };
        let true_classes = sorted(truth);
        let predicted = sorted(pred);
        let mut counts = vec![vec![0u64; predicted.len()]; true_classes.len()];
        for (t, p) in truth.iter().zip(pred) {
            let i = true_classes.binary_search(t).expect("present");
            let j = predicted.binary_search(p).expect("present");
            counts[i][j] += 1;
        }
        Ok(Self {
            true_classes,
            predicted,
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn pair_counts(&self) -> PairCounts {
        let tp: u64 = self.counts.iter().flatten().map(|&n| pairs(n)).sum();
        let same_true: u64 = self.counts.iter().map(|r| pairs(r.iter().sum())).sum();
        let same_pred: u64 = (0..self.predicted.len())
            .map(|j| pairs(self.counts.iter().map(|r| r[j]).sum()))
            .sum();
        let all = pairs(self.total());
        PairCounts {
            tp,
            fp: same_pred - tp,
            fn_: same_true - tp,
            tn: all + tp - same_pred - same_true,
        }
    }

    /// Adjusted Rand index. Identical trivial partitions (`0/0`) score 1.
    pub fn adjusted_rand_index(&self) -> f64 {
        let pc = self.pair_counts();
        let index = pc.tp as f64;
        let same_true = (pc.tp + pc.fn_) as f64;
        let same_pred = (pc.tp + pc.fp) as f64;
        let all = pairs(self.total()) as f64;
        let expected = if all > 0.0 { same_true * same_pred / all } else { 0.0 };
        let max = 0.5 * (same_true + same_pred);
        if max == expected {
            return 1.0;
        }
        (index - expected) / (max - expected)
    }

    /// One-to-one matching of predicted labels to true classes maximizing
    /// the matched counts: `(predicted label, true class)` pairs.
    pub fn alignment(&self) -> Vec<(u32, u32)> {
        let (r, c) = (self.predicted.len(), self.true_classes.len());
        let mut score = Vec::with_capacity(r * c);
        for j in 0..r {
            for i in 0..c {
                score.push(self.counts[i][j] as f64);
            }
        }
        max_score_assignment(&score, r, c)
            .into_iter()
            .enumerate()
            .filter_map(|(j, m)| m.map(|i| (self.predicted[j], self.true_classes[i])))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassMetrics {
    pub class: u32,
    /// Predicted label matched to this class, if any.
    pub matched_label: Option<u32>,
    pub support: u64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Conventional per-class scores after aligning predicted labels to classes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerClassReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    /// Pairwise same-cluster decision scores.
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub pairs: PairCounts,
    pub per_class: PerClassReport,
    pub confusion: ConfusionMatrix,
    pub alignment: Vec<(u32, u32)>,
}

pub fn evaluate_predictions(truth: &[u32], pred: &[u32]) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let confusion = ConfusionMatrix::new(truth, pred)?;
    let pc = confusion.pair_counts();
    let alignment = confusion.alignment();
    let mut classes = Vec::with_capacity(confusion.true_classes.len());
    let mut correct = 0;
    for (i, &class) in confusion.true_classes.iter().enumerate() {
        let support: u64 = confusion.counts[i].iter().sum();
        let matched = alignment.iter().find(|(_, t)| *t == class).map(|(p, _)| *p);
        let (tp, predicted) = match matched {
            Some(label) => {
                let j = confusion.predicted.binary_search(&label).expect("present");
                (confusion.counts[i][j], confusion.counts.iter().map(|r| r[j]).sum())
            }
            None => (0, 0),
        };
        correct += tp;
        let recall = ratio(tp, support);
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        classes.push(ClassMetrics {
            class,
            matched_label: matched,
            support,
            recall,
            precision,
            f1: f1(precision, recall),
        });
    }
    let c = classes.len() as f64;
    let per_class = PerClassReport {
        macro_recall: classes.iter().map(|m| m.recall).sum::<f64>() / c,
        macro_precision: classes.iter().map(|m| m.precision).sum::<f64>() / c,
        macro_f1: classes.iter().map(|m| m.f1).sum::<f64>() / c,
        accuracy: correct as f64 / truth.len() as f64,
        classes,
    };
    Ok(EvalReport {
        recall: pc.recall(),
        precision: pc.precision(),
        f1: pc.f1(),
        pairs: pc,
        per_class,
        confusion,
        alignment,
    })
}

pub fn adjusted_rand_index(truth: &[u32], pred: &[u32]) -> Result<f64> {
    Ok(ConfusionMatrix::new(truth, pred)?.adjusted_rand_index())
}

pub fn evaluate(model: &ClassifierModel, x: &Matrix, truth: &[u32]) -> Result<EvalReport> {
    check_rows(x, truth)?;
    evaluate_predictions(truth, &model.predict_labels(x)?)
}

/// Fraction of rows whose label matches.
pub fn accuracy(truth: &[u32], pred: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
