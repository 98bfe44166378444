//! Pseudo-labeling of a synthesized corpus: autoencoder pretraining, deep
//! embedded clustering in latent space and BIC selection of the cluster count.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::exec::Executor;
use crate::kmeans::{kmeans, KMeansConfig};
use crate::nn::{init_model, Activation, Architecture, ModelParams, Network, Role};
use crate::optim::{Direction, Optimizer, OptimizerKind};
use crate::rng::{self, Purpose};
use crate::tensor::{sq_dist, Matrix};
use crate::{Error, Result};

/// Floor applied to `q_ij` inside the logarithm of the KL loss.
pub const KL_EPS: f64 = 1e-12;

/// Which `ΔBIC_k = BIC_k - BIC_{k-1}` wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BicRule {
    /// `argmin ΔBIC`: the k whose BIC drops the most.
    #[default]
    LargestDecrease,
    /// `argmax ΔBIC`.
    LargestIncrease,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DecConfig {
    pub k_max: usize,
    /// Stop once the fraction of changed labels is at most `delta`.
    pub delta: f64,
    pub max_iter: u32,
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub pretrain_epochs: u32,
    pub pretrain_lr: f64,
    pub cluster_lr: f64,
    pub batch: usize,
    pub kmeans_restarts: u32,
    pub bic_rule: BicRule,
    pub seed: u64,
}

impl Default for DecConfig {
    fn default() -> Self {
        Self {
            k_max: 20,
            delta: 0.001,
            max_iter: 100,
            latent_dim: 10,
            hidden: vec![128, 64],
            pretrain_epochs: 50,
            pretrain_lr: 1e-3,
            cluster_lr: 1e-3,
            batch: 64,
            kmeans_restarts: 10,
            bic_rule: BicRule::LargestDecrease,
            seed: 0,
        }
    }
}

impl DecConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(key: &'static str, reason: &str) -> Result<()> {
            Err(Error::InvalidConfig {
                key,
                reason: reason.into(),
            })
        }
        if self.k_max < 2 {
            return bad("k_max", "must be at least 2");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta", "must lie in (0, 1]");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim", "must be positive");
        }
        if self.batch == 0 {
            return bad("batch", "must be positive");
        }
        if !(self.pretrain_lr >= 0.0 && self.cluster_lr >= 0.0) {
            return bad("lr", "learning rates must be non-negative");
        }
        Ok(())
    }
}

/// Encoder half of the pretrained autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub arch: Architecture,
    pub params: ModelParams,
}

impl Encoder {
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        Network::new(self.arch.clone())?.predict(&self.params, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub encoder: Encoder,
    pub initial_mse: f64,
    pub final_mse: f64,
}

fn autoencoder_archs(input: usize, cfg: &DecConfig) -> (Architecture, Architecture) {
    let act = Activation::LeakyRelu;
    let enc = Architecture::mlp(input, &cfg.hidden, act, cfg.latent_dim, Activation::Identity);
    let rev: Vec<usize> = cfg.hidden.iter().rev().copied().collect();
    let dec = Architecture::mlp(cfg.latent_dim, &rev, act, input, Activation::Identity);
    (enc, dec)
}

fn reconstruction_mse(enc: &Network, we: &ModelParams, dec: &Network, wd: &ModelParams, x: &Matrix) -> Result<f64> {
    let z = enc.predict(we, x)?;
    let y = dec.predict(wd, &z)?;
    let s: f64 = y
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / x.as_slice().len() as f64)
}

/// Trains an autoencoder on `t` with mean squared reconstruction error and
/// keeps the encoder.
pub fn pretrain_encoder(t: &Matrix, cfg: &DecConfig) -> Result<Pretrained> {
    if t.rows() == 0 {
        return Err(Error::Empty("synthesized dataset"));
    }
    cfg.validate()?;
    let (ea, da) = autoencoder_archs(t.cols(), cfg);
    let enc = Network::new(ea.clone())?;
    let dec = Network::new(da)?;
    let mut we = init_model(&ea, Role::Encoder, cfg.seed)?;
    let mut wd = init_model(dec.architecture(), Role::Decoder, cfg.seed)?;
    let mut oe = Optimizer::new(OptimizerKind::adam(), cfg.pretrain_lr);
    let mut od = Optimizer::new(OptimizerKind::adam(), cfg.pretrain_lr);
    let initial_mse = reconstruction_mse(&enc, &we, &dec, &wd, t)?;
    let mut rng = rng::stream(cfg.seed, Purpose::Cluster, u64::from(u32::MAX));
    let mut order: Vec<usize> = (0..t.rows()).collect();
    for _ in 0..cfg.pretrain_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let x = t.select_rows(chunk);
            let te = enc.forward(&we, &x)?;
            let td = dec.forward(&wd, te.output())?;
            let scale = 2.0 / x.as_slice().len() as f64;
            let diff: Vec<f64> = td
                .output()
                .as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(y, v)| scale * (y - v))
                .collect();
            let g_out = Matrix::from_vec(x.rows(), x.cols(), diff)?;
            let gd = dec.backward(&wd, &td, &g_out, true)?;
            let ge = enc.backward(&we, &te, gd.input.as_ref().expect("requested"), false)?;
            od.step(&mut wd, &gd.params, Direction::Descend)?;
            oe.step(&mut we, &ge.params, Direction::Descend)?;
        }
    }
    let final_mse = reconstruction_mse(&enc, &we, &dec, &wd, t)?;
    Ok(Pretrained {
        encoder: Encoder { arch: ea, params: we },
        initial_mse,
        final_mse,
    })
}

fn check_latents(z: &Matrix, mu: &Matrix) -> Result<()> {
    if mu.rows() == 0 {
        return Err(Error::Empty("centroids"));
    }
    if z.cols() != mu.cols() {
        return Err(Error::DimensionMismatch {
            context: "latent width",
            expected: mu.cols(),
            actual: z.cols(),
        });
    }
    Ok(())
}

/// Student-t kernel values `a_ij = 1 / (1 + |z_i - mu_j|^2)`.
fn kernel_matrix(z: &Matrix, mu: &Matrix) -> Matrix {
    let mut a = Matrix::zeros(z.rows(), mu.rows());
    for (i, zi) in z.iter_rows().enumerate() {
        for (j, mj) in mu.iter_rows().enumerate() {
            a.set(i, j, 1.0 / (1.0 + sq_dist(zi, mj)));
        }
    }
    a
}

fn normalize_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
}

/// Soft assignment `q_ij` of latent rows to centroids.
pub fn soft_assign(z: &Matrix, mu: &Matrix) -> Result<Matrix> {
    check_latents(z, mu)?;
    let mut q = kernel_matrix(z, mu);
    normalize_rows(&mut q);
    Ok(q)
}

/// Target distribution `p_ij ∝ q_ij^2 / f_j` with `f_j = Σ_i q_ij`.
pub fn target_dist(q: &Matrix) -> Result<Matrix> {
    let k = q.cols();
    let mut f = vec![0.0; k];
    for row in q.iter_rows() {
        for (fj, v) in f.iter_mut().zip(row) {
            *fj += v;
        }
    }
    if let Some(j) = f.iter().position(|&fj| fj <= 0.0) {
        return Err(Error::EmptySoftCluster(j));
    }
    let mut p = q.clone();
    for i in 0..p.rows() {
        for (v, fj) in p.row_mut(i).iter_mut().zip(&f) {
            *v = *v * *v / fj;
        }
    }
    normalize_rows(&mut p);
    Ok(p)
}

/// `Σ_i Σ_j p_ij ln(p_ij / q_ij)`, with `0 ln 0 = 0` and `q` floored at [`KL_EPS`].
pub fn kl_loss(p: &Matrix, q: &Matrix) -> Result<f64> {
    p.check_same_shape(q)?;
    Ok(p.as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(&pv, &qv)| pv * libm::log(pv / qv.max(KL_EPS)))
        .sum())
}

/// Gradients of [`kl_loss`] with `p` held fixed:
/// `dL/dz_i = 2 Σ_j a_ij (p_ij - q_ij)(z_i - mu_j)` and
/// `dL/dmu_j = -2 Σ_i a_ij (p_ij - q_ij)(z_i - mu_j)`.
pub fn kl_grads(z: &Matrix, mu: &Matrix, p: &Matrix) -> Result<(Matrix, Matrix)> {
    check_latents(z, mu)?;
    let a = kernel_matrix(z, mu);
    let mut q = a.clone();
    normalize_rows(&mut q);
    p.check_same_shape(&q)?;
    let mut dz = Matrix::zeros(z.rows(), z.cols());
    let mut dmu = Matrix::zeros(mu.rows(), mu.cols());
    for i in 0..z.rows() {
        for j in 0..mu.rows() {
            let c = 2.0 * a.get(i, j) * (p.get(i, j) - q.get(i, j));
            for d in 0..z.cols() {
                let diff = c * (z.get(i, d) - mu.get(j, d));
                dz.row_mut(i)[d] += diff;
                dmu.row_mut(j)[d] -= diff;
            }
        }
    }
    Ok((dz, dmu))
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub encoder: Encoder,
    pub centroids: Matrix,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn soft_assign(&self, t: &Matrix) -> Result<Matrix> {
        soft_assign(&self.encoder.encode(t)?, &self.centroids)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecFit {
    pub model: ClusterModel,
    pub labels: Vec<usize>,
    pub iterations: u32,
    pub converged: bool,
}

fn rescue_empty(z: &Matrix, mu: &mut Matrix, labels: &mut [usize]) {
    let k = mu.rows();
    for j in 0..k {
        if labels.contains(&j) {
            continue;
        }
        let far = (0..z.rows()).max_by(|&a, &b| {
            let da = sq_dist(z.row(a), mu.row(labels[a]));
            let db = sq_dist(z.row(b), mu.row(labels[b]));
            da.total_cmp(&db).then(b.cmp(&a))
        });
        if let Some(i) = far {
            mu.row_mut(j).copy_from_slice(z.row(i));
            labels[i] = j;
        }
    }
}

/// DEC with `k` clusters starting from a pretrained encoder. Centroids are
/// initialized by k-means on the latents. Each iteration recomputes the target
/// distribution, relabels, stops once at most `delta` of the labels changed,
/// and otherwise runs one minibatch epoch on the encoder and centroids.
pub fn dec_train(t: &Matrix, k: usize, encoder: &Encoder, cfg: &DecConfig) -> Result<DecFit> {
    cfg.validate()?;
    if k == 0 || k > cfg.k_max {
        return Err(Error::InvalidConfig {
            key: "k",
            reason: "must lie in 1..=k_max".into(),
        });
    }
    if t.rows() < k {
        return Err(Error::TooFewSamples {
            context: "clustering",
            needed: k,
            available: t.rows(),
        });
    }
    let net = Network::new(encoder.arch.clone())?;
    let mut we = encoder.params.clone();
    let z0 = net.predict(&we, t)?;
    let init = kmeans(
        &z0,
        k,
        KMeansConfig {
            restarts: cfg.kmeans_restarts,
            seed: cfg.seed,
            ..KMeansConfig::default()
        },
    )?;
    let mut mu = init.centroids;
    let mut prev = init.labels;
    let mut oe = Optimizer::new(OptimizerKind::adam(), cfg.cluster_lr);
    let mut om = Optimizer::new(OptimizerKind::adam(), cfg.cluster_lr);
    let mu_layout = vec![crate::nn::LayoutEntry::new("centroids".into(), vec![k, mu.cols()])];
    let mut rng = rng::stream(cfg.seed, Purpose::Cluster, k as u64);
    let mut order: Vec<usize> = (0..t.rows()).collect();
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..cfg.max_iter {
        let z = net.predict(&we, t)?;
        let q = soft_assign(&z, &mu)?;
        let p = target_dist(&q)?;
        let mut labels = argmax_rows(&q);
        rescue_empty(&z, &mut mu, &mut labels);
        if it > 0 {
            let changed = labels.iter().zip(&prev).filter(|(a, b)| a != b).count();
            if changed as f64 / t.rows() as f64 <= cfg.delta {
                prev = labels;
                converged = true;
                break;
            }
        }
        prev = labels;
        iterations += 1;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let x = t.select_rows(chunk);
            let trace = net.forward(&we, &x)?;
            let pb = p.select_rows(chunk);
            let (mut dz, mut dmu) = kl_grads(trace.output(), &mu, &pb)?;
            let inv = 1.0 / chunk.len() as f64;
            dz.scale(inv);
            dmu.scale(inv);
            let ge = net.backward(&we, &trace, &dz, false)?;
            oe.step(&mut we, &ge.params, Direction::Descend)?;
            let mut mp = ModelParams::new(mu.clone().into_vec(), mu_layout.clone(), Role::Encoder)?;
            om.step(&mut mp, dmu.as_slice(), Direction::Descend)?;
            mu = Matrix::from_vec(k, mu.cols(), mp.into_values())?;
        }
    }
    let model = ClusterModel {
        encoder: Encoder {
            arch: encoder.arch.clone(),
            params: we,
        },
        centroids: mu,
    };
    if !converged {
        let q = model.soft_assign(t)?;
        prev = argmax_rows(&q);
    }
    Ok(DecFit {
        model,
        labels: prev,
        iterations,
        converged,
    })
}

/// `n ln(R / n) + k ln n`, with `R` the summed Euclidean distance of each
/// latent point to its assigned centroid and `k` the number of centroids.
pub fn bic(z: &Matrix, labels: &[usize], mu: &Matrix) -> Result<f64> {
    check_latents(z, mu)?;
    if labels.len() != z.rows() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            expected: z.rows(),
            actual: labels.len(),
        });
    }
    let mut r = 0.0;
    for (zi, &l) in z.iter_rows().zip(labels) {
        if l >= mu.rows() {
            return Err(Error::DimensionMismatch {
                context: "label index",
                expected: mu.rows(),
                actual: l,
            });
        }
        r += libm::sqrt(sq_dist(zi, mu.row(l)));
    }
    bic_from_r(r, z.rows(), mu.rows())
}

pub fn bic_from_r(r: f64, n: usize, k: usize) -> Result<f64> {
    if !(r > 0.0) || n == 0 {
        return Err(Error::DegenerateBic);
    }
    let n = n as f64;
    Ok(n * libm::log(r / n) + k as f64 * libm::log(n))
}

/// Picks `k*` from `BIC_1..BIC_K` (index `k - 1`). Ties go to the smallest k.
pub fn choose_k(bics: &[f64], rule: BicRule) -> Result<usize> {
    if bics.len() < 2 {
        return Err(Error::InvalidConfig {
            key: "k_max",
            reason: "at least two BIC values are needed".into(),
        });
    }
    let mut best = (2, bics[1] - bics[0]);
    for k in 3..=bics.len() {
        let d = bics[k - 1] - bics[k - 2];
        let better = match rule {
            BicRule::LargestDecrease => d < best.1,
            BicRule::LargestIncrease => d > best.1,
        };
        if better {
            best = (k, d);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClusterReport {
    pub ks: Vec<usize>,
    pub bic: Vec<f64>,
    /// `None` for k = 1.
    pub delta_bic: Vec<Option<f64>>,
    pub iterations: Vec<u32>,
    pub k_star: usize,
    pub rule: BicRule,
    pub pretrain_initial_mse: f64,
    pub pretrain_final_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub k_star: usize,
    pub fit: DecFit,
    pub report: ClusterReport,
}

/// Mean latent of each label; a label without members keeps a zero row.
pub fn cluster_means(z: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let mut mu = Matrix::zeros(k, z.cols());
    let mut counts = vec![0usize; k];
    for (row, &l) in z.iter_rows().zip(labels) {
        counts[l] += 1;
        for (m, v) in mu.row_mut(l).iter_mut().zip(row) {
            *m += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            mu.row_mut(j).iter_mut().for_each(|m| *m /= c as f64);
        }
    }
    mu
}

/// Pretrains one encoder, runs DEC for every `k` in `1..=k_max` (in parallel
/// through `exec`) and keeps the model chosen by the BIC rule.
///
/// Every `k` fine-tunes its own copy of the encoder, so BIC is scored in the
/// shared pretrained latent space: DEC labels, with centroids taken as the
/// per-label means of the pretrained latents.
pub fn select_k<E: Executor>(t: &Matrix, cfg: &DecConfig, exec: &E) -> Result<Selection> {
    cfg.validate()?;
    if t.rows() < cfg.k_max {
        return Err(Error::TooFewSamples {
            context: "synthesized dataset",
            needed: cfg.k_max,
            available: t.rows(),
        });
    }
    let pre = pretrain_encoder(t, cfg)?;
    let mut ks: Vec<usize> = (1..=cfg.k_max).collect();
    let z = pre.encoder.encode(t)?;
    let fits = exec.map_mut(&mut ks, |_, k| -> Result<(DecFit, f64)> {
        let fit = dec_train(t, *k, &pre.encoder, cfg)?;
        let mu = cluster_means(&z, &fit.labels, *k);
        let b = bic(&z, &fit.labels, &mu)?;
        Ok((fit, b))
    });
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let bics: Vec<f64> = fits.iter().map(|(_, b)| *b).collect();
    let k_star = choose_k(&bics, cfg.bic_rule)?;
    let report = ClusterReport {
        ks: ks.clone(),
        delta_bic: (0..bics.len())
            .map(|i| (i > 0).then(|| bics[i] - bics[i - 1]))
            .collect(),
        bic: bics,
        iterations: fits.iter().map(|(f, _)| f.iterations).collect(),
        k_star,
        rule: cfg.bic_rule,
        pretrain_initial_mse: pre.initial_mse,
        pretrain_final_mse: pre.final_mse,
    };
    let fit = fits.into_iter().nth(k_star - 1).expect("k* within range").0;
    Ok(Selection { k_star, fit, report })
}

/// `y_i = argmax_j q_ij`, ties to the lowest cluster index.
pub fn assign_pseudo_labels(t: &Matrix, model: &ClusterModel) -> Result<Vec<u32>> {
    Ok(argmax_rows(&model.soft_assign(t)?)
        .into_iter()
        .map(|l| l as u32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows.iter().copied()).unwrap()
    }

    #[test]
    fn soft_assign_examples() {
        let q = soft_assign(&m(&[&[0.0]]), &m(&[&[0.0], &[1.0]])).unwrap();
        assert!((q.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((q.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        let one = soft_assign(&m(&[&[0.3], &[5.0]]), &m(&[&[1.0]])).unwrap();
        assert_eq!(one.as_slice(), &[1.0, 1.0]);
        let eq = soft_assign(&m(&[&[0.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]])).unwrap();
        for v in eq.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn target_dist_examples() {
        let p = target_dist(&m(&[&[0.8, 0.2]])).unwrap();
        assert!((p.get(0, 0) - 0.8).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.2).abs() < 1e-15);
        let u = target_dist(&m(&[&[0.25; 4], &[0.25; 4]])).unwrap();
        assert!(u.as_slice().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let onehot = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(target_dist(&onehot).unwrap(), onehot);
        assert!(matches!(
            target_dist(&m(&[&[1.0, 0.0]])),
            Err(Error::EmptySoftCluster(1))
        ));
    }

    #[test]
    fn kl_examples() {
        let q = m(&[&[0.3, 0.7]]);
        assert_eq!(kl_loss(&q, &q).unwrap(), 0.0);
        let v = kl_loss(&m(&[&[1.0, 0.0]]), &m(&[&[0.5, 0.5]])).unwrap();
        assert!((v - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bic_examples() {
        assert!((bic_from_r(100.0, 100, 2).unwrap() - 2.0 * libm::log(100.0)).abs() < 1e-12);
        assert!((bic_from_r(100.0, 100, 1).unwrap() - 4.605170185988092).abs() < 1e-12);
        assert!(bic_from_r(0.0, 10, 1).is_err());
        let z = m(&[&[0.0], &[2.0]]);
        let mu = m(&[&[1.0]]);
        // R = 2, n = 2: 2 ln 1 + ln 2
        assert!((bic(&z, &[0, 0], &mu).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn choose_k_rules_and_ties() {
        let b = [10.0, 8.0, 2.0, 1.0];
        assert_eq!(choose_k(&b, BicRule::LargestDecrease).unwrap(), 3);
        assert_eq!(choose_k(&b, BicRule::LargestIncrease).unwrap(), 4);
        assert_eq!(choose_k(&[3.0, 2.0, 1.0], BicRule::LargestDecrease).unwrap(), 2);
        assert_eq!(choose_k(&[3.0, 2.0], BicRule::LargestDecrease).unwrap(), 2);
        assert!(choose_k(&[1.0], BicRule::LargestDecrease).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_rows(&m(&[&[0.5, 0.5], &[0.2, 0.8]])), vec![0, 1]);
    }

    #[test]
    fn kl_grads_match_finite_differences() {
        let z = m(&[&[0.1, -0.3], &[0.7, 0.2], &[-0.4, 0.5]]);
        let mu = m(&[&[0.0, 0.0], &[0.5, 0.5]]);
        let p = target_dist(&soft_assign(&z, &mu).unwrap()).unwrap();
        let (dz, dmu) = kl_grads(&z, &mu, &p).unwrap();
        let loss = |z: &Matrix, mu: &Matrix| kl_loss(&p, &soft_assign(z, mu).unwrap()).unwrap();
        let h = 1e-6;
        for i in 0..z.as_slice().len() {
            let (mut a, mut b) = (z.clone(), z.clone());
            a.as_mut_slice()[i] += h;
            b.as_mut_slice()[i] -= h;
            let fd = (loss(&a, &mu) - loss(&b, &mu)) / (2.0 * h);
            assert!((fd - dz.as_slice()[i]).abs() < 1e-7, "dz[{i}]");
        }
        for i in 0..mu.as_slice().len() {
            let (mut a, mut b) = (mu.clone(), mu.clone());
            a.as_mut_slice()[i] += h;
            b.as_mut_slice()[i] -= h;
            let fd = (loss(&z, &a) - loss(&z, &b)) / (2.0 * h);
            assert!((fd - dmu.as_slice()[i]).abs() < 1e-7, "dmu[{i}]");
        }
    }
}
