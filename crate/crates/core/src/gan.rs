//! Generator and discriminator models, the adversarial losses and their
//! gradients.
//!
//! When the discriminator ends in a sigmoid, the log-score terms are computed
//! from its logit `a` (`ln D = -softplus(-a)`, `ln(1 - D) = -softplus(a)`),
//! which keeps values and gradients finite for any score. Other output
//! activations fall back to scores clamped to `[SCORE_EPS, 1 - SCORE_EPS]`,
//! flat (zero gradient) where the clamp is active.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::{init_model, sigmoid, Activation, Architecture, ModelParams, Network, Role, Trace};
use crate::tensor::Matrix;
use crate::{rng, Error, Result};

pub const SCORE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSpec {
    pub dim: usize,
}

impl NoiseSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig {
                key: "noise_dim",
                reason: "must be positive".into(),
            });
        }
        Ok(Self { dim })
    }
}

/// `b x dim` standard-normal draws.
pub fn sample_noise<R: Rng + ?Sized>(b: usize, spec: NoiseSpec, rng: &mut R) -> Result<Matrix> {
    if b == 0 {
        return Err(Error::Empty("noise batch"));
    }
    let values = (0..b * spec.dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Matrix::from_vec(b, spec.dim, values)
}

pub fn sample_noise_seeded(b: usize, spec: NoiseSpec, seed: u64) -> Result<Matrix> {
    sample_noise(b, spec, &mut rng::stream(seed, rng::Purpose::Noise, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchKind {
    Real,
    FakeForDiscriminator,
    FakeForGenerator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: Matrix,
    pub kind: BatchKind,
}

impl Batch {
    pub fn new(samples: Matrix, kind: BatchKind) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::Empty("batch"));
        }
        Ok(Self { samples, kind })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    fn expect(&self, kind: BatchKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Protocol("batch of the wrong kind"));
        }
        Ok(())
    }
}

/// Form of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GeneratorLoss {
    /// `mean log(1 - D(x_g))`, descended.
    #[default]
    Saturating,
    /// `-mean log D(x_g)`, descended.
    NonSaturating,
}

/// `noise -> 256 -> 512 -> len`, LeakyReLU hidden units, sigmoid output.
pub fn default_generator_arch(noise_dim: usize, sample_len: usize) -> Architecture {
    Architecture::mlp(
        noise_dim,
        &[256, 512],
        Activation::LeakyRelu,
        sample_len,
        Activation::Sigmoid,
    )
}

/// `len -> 512 -> 256 -> 1`, LeakyReLU hidden units, sigmoid output.
pub fn default_discriminator_arch(sample_len: usize) -> Architecture {
    Architecture::mlp(sample_len, &[512, 256], Activation::LeakyRelu, 1, Activation::Sigmoid)
}

/// The generator/discriminator pair shared by every participant.
#[derive(Debug, Clone)]
pub struct GanNetworks {
    pub generator: Network,
    pub discriminator: Network,
    pub noise: NoiseSpec,
}

impl GanNetworks {
    pub fn new(generator: Architecture, discriminator: Architecture) -> Result<Self> {
        let noise = NoiseSpec::new(generator.input_size())?;
        let generator = Network::new(generator)?;
        let discriminator = Network::new(discriminator)?;
        if generator.output_size() != discriminator.input_size() {
            return Err(Error::DimensionMismatch {
                context: "generator output vs discriminator input",
                expected: discriminator.input_size(),
                actual: generator.output_size(),
            });
        }
        if discriminator.output_size() != 1 {
            return Err(Error::DimensionMismatch {
                context: "discriminator output",
                expected: 1,
                actual: discriminator.output_size(),
            });
        }
        Ok(Self {
            generator,
            discriminator,
            noise,
        })
    }

    pub fn with_defaults(noise_dim: usize, sample_len: usize) -> Result<Self> {
        Self::new(
            default_generator_arch(noise_dim, sample_len),
            default_discriminator_arch(sample_len),
        )
    }

    pub fn sample_len(&self) -> usize {
        self.discriminator.input_size()
    }

    /// Initial `(generator, discriminator)` parameters.
    pub fn init(&self, seed: u64) -> Result<(ModelParams, ModelParams)> {
        Ok((
            init_model(self.generator.architecture(), Role::Generator, seed)?,
            init_model(self.discriminator.architecture(), Role::Discriminator, seed)?,
        ))
    }
}

pub fn gen_forward(net: &Network, w: &ModelParams, z: &Matrix, kind: BatchKind) -> Result<Batch> {
    Batch::new(net.predict(w, z)?, kind)
}

/// Forward pass that keeps the activations for [`generator_grad`].
pub fn gen_forward_traced(net: &Network, w: &ModelParams, z: &Matrix, kind: BatchKind) -> Result<(Batch, Trace)> {
    let trace = net.forward(w, z)?;
    Ok((Batch::new(trace.output().clone(), kind)?, trace))
}

/// Chain rule through the generator: dL/dw from dL/d(generated samples).
pub fn generator_grad(net: &Network, w: &ModelParams, trace: &Trace, sample_grad: &Matrix) -> Result<Vec<f64>> {
    Ok(net.backward(w, trace, sample_grad, false)?.params)
}

#[inline]
fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

#[inline]
fn clamped(s: f64) -> bool {
    !(SCORE_EPS..=1.0 - SCORE_EPS).contains(&s)
}

/// Scores in `[SCORE_EPS, 1 - SCORE_EPS]`, one per row.
pub fn disc_forward(net: &Network, theta: &ModelParams, x: &Matrix) -> Result<Vec<f64>> {
    let out = net.predict(theta, x)?;
    Ok(out.as_slice().iter().map(|&s| clamp_score(s)).collect())
}

/// Log-score terms averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    /// `ln D(x)`
    LogD,
    /// `ln(1 - D(x))`
    LogOneMinusD,
    /// `-ln D(x)`
    NegLogD,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

impl Term {
    /// Value and derivative with respect to the logit.
    fn from_logit(self, a: f64) -> (f64, f64) {
        match self {
            Term::LogD => (-softplus(-a), sigmoid(-a)),
            Term::LogOneMinusD => (-softplus(a), -sigmoid(a)),
            Term::NegLogD => (softplus(-a), -sigmoid(-a)),
        }
    }

    /// Value and derivative with respect to a clamped score.
    fn from_score(self, s: f64) -> (f64, f64) {
        let c = clamp_score(s);
        let (v, d) = match self {
            Term::LogD => (libm::log(c), 1.0 / c),
            Term::LogOneMinusD => (libm::log(1.0 - c), -1.0 / (1.0 - c)),
            Term::NegLogD => (-libm::log(c), -1.0 / c),
        };
        (v, if clamped(s) { 0.0 } else { d })
    }
}

/// Mean of a log-score term over a batch plus, optionally, the gradient of
/// that mean with respect to the parameters and/or the inputs.
struct ScoreObjective {
    value: f64,
    params: Option<Vec<f64>>,
    input: Option<Matrix>,
}

fn score_objective(
    net: &Network,
    theta: &ModelParams,
    x: &Matrix,
    term: Term,
    want_params: bool,
    want_input: bool,
) -> Result<ScoreObjective> {
    let trace = net.forward(theta, x)?;
    let logits = net.architecture().layers.last().map(|l| l.activation()) == Some(Activation::Sigmoid);
    let source = if logits { trace.output_pre() } else { trace.output() };
    let b = source.rows() as f64;
    let (mut value, mut upstream) = (0.0, Vec::with_capacity(source.rows()));
    for &v in source.as_slice() {
        let (f, df) = if logits { term.from_logit(v) } else { term.from_score(v) };
        value += f;
        upstream.push(df / b);
    }
    value /= b;
    if !value.is_finite() {
        return Err(Error::NonFinite("discriminator objective"));
    }
    if !want_params && !want_input {
        return Ok(ScoreObjective {
            value,
            params: None,
            input: None,
        });
    }
    let upstream = Matrix::from_vec(upstream.len(), 1, upstream)?;
    let grads = if logits {
        net.backward_from_pre(theta, &trace, &upstream, want_input)?
    } else {
        net.backward(theta, &trace, &upstream, want_input)?
    };
    Ok(ScoreObjective {
        value,
        params: want_params.then_some(grads.params),
        input: grads.input,
    })
}

fn check_equal_batches(real: &Batch, fake: &Batch) -> Result<()> {
    if real.len() != fake.len() {
        return Err(Error::DimensionMismatch {
            context: "real vs fake batch size",
            expected: real.len(),
            actual: fake.len(),
        });
    }
    Ok(())
}

/// `(1/b) Σ log D(x_r) + (1/b) Σ log(1 - D(x_d))`; the discriminator ascends it.
pub fn disc_loss(net: &Network, theta: &ModelParams, real: &Batch, fake: &Batch) -> Result<f64> {
    real.expect(BatchKind::Real)?;
    fake.expect(BatchKind::FakeForDiscriminator)?;
    check_equal_batches(real, fake)?;
    let r = score_objective(net, theta, &real.samples, Term::LogD, false, false)?;
    let f = score_objective(net, theta, &fake.samples, Term::LogOneMinusD, false, false)?;
    Ok(r.value + f.value)
}

/// [`disc_loss`] together with its gradient with respect to `theta`.
pub fn disc_loss_grad(net: &Network, theta: &ModelParams, real: &Batch, fake: &Batch) -> Result<(f64, Vec<f64>)> {
    real.expect(BatchKind::Real)?;
    fake.expect(BatchKind::FakeForDiscriminator)?;
    check_equal_batches(real, fake)?;
    let r = score_objective(net, theta, &real.samples, Term::LogD, true, false)?;
    let f = score_objective(net, theta, &fake.samples, Term::LogOneMinusD, true, false)?;
    let mut grad = r.params.expect("requested");
    for (g, h) in grad.iter_mut().zip(f.params.expect("requested")) {
        *g += h;
    }
    Ok((r.value + f.value, grad))
}

fn gen_term(form: GeneratorLoss) -> Term {
    match form {
        GeneratorLoss::Saturating => Term::LogOneMinusD,
        GeneratorLoss::NonSaturating => Term::NegLogD,
    }
}

/// `(1/b) Σ log(1 - D(x_g))`; the generator descends it.
pub fn gen_loss_local(net: &Network, theta: &ModelParams, x_g: &Batch) -> Result<f64> {
    gen_loss(net, theta, x_g, GeneratorLoss::Saturating)
}

pub fn gen_loss(net: &Network, theta: &ModelParams, x_g: &Batch, form: GeneratorLoss) -> Result<f64> {
    x_g.expect(BatchKind::FakeForGenerator)?;
    Ok(score_objective(net, theta, &x_g.samples, gen_term(form), false, false)?.value)
}

/// Generator loss and its gradient with respect to the generated samples
/// (the discriminator is held fixed).
pub fn gen_loss_sample_grad(
    net: &Network,
    theta: &ModelParams,
    x_g: &Batch,
    form: GeneratorLoss,
) -> Result<(f64, Matrix)> {
    x_g.expect(BatchKind::FakeForGenerator)?;
    let obj = score_objective(net, theta, &x_g.samples, gen_term(form), false, true)?;
    Ok((obj.value, obj.input.expect("requested")))
}

/// One combined generator step target: loss and dL/dw through a traced forward pass.
pub fn gen_loss_param_grad(
    nets: &GanNetworks,
    w: &ModelParams,
    theta: &ModelParams,
    z: &Matrix,
    form: GeneratorLoss,
) -> Result<(f64, Vec<f64>)> {
    let (batch, trace) = gen_forward_traced(&nets.generator, w, z, BatchKind::FakeForGenerator)?;
    let (loss, sample_grad) = gen_loss_sample_grad(&nets.discriminator, theta, &batch, form)?;
    Ok((loss, generator_grad(&nets.generator, w, &trace, &sample_grad)?))
}

/// Draws `b` distinct rows of `data` as a real batch.
pub fn sample_real<R: Rng + ?Sized>(data: &Matrix, b: usize, rng: &mut R) -> Result<Batch> {
    if data.rows() < b {
        return Err(Error::TooFewSamples {
            context: "real batch",
            needed: b,
            available: data.rows(),
        });
    }
    let idx = rand::seq::index::sample(rng, data.rows(), b).into_vec();
    Batch::new(data.select_rows(&idx), BatchKind::Real)
}
