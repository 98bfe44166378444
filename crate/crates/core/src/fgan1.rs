//! FGAN-I: one global generator at the coordinator, one discriminator per
//! fog node. Nodes see only synthetic samples and return a scalar loss plus
//! the loss gradient with respect to those samples.

use alloc::vec::Vec;

use crate::data::FogDataset;
use crate::evaluation::{MmdProbe, RoundMetrics};
use crate::exec::{Clock, Executor};
use crate::federation::{drain_channels, Endpoint, Envelope, FederationConfig, Payload, Provenance, Transport};
use crate::gan::{
    disc_loss_grad, gen_forward, gen_forward_traced, gen_loss_sample_grad, generator_grad, sample_noise, sample_real,
    Batch, BatchKind, GanNetworks, GeneratorLoss,
};
use crate::nn::ModelParams;
use crate::optim::{Direction, Optimizer};
use crate::rng::{self, Purpose, Rng, COORDINATOR};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Coordinator broadcast for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Fgan1RoundMsgDown {
    pub round: u32,
    pub x_d: Batch,
    pub x_g: Batch,
}

/// A node's reply for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Fgan1RoundMsgUp {
    pub round: u32,
    pub node_id: u32,
    pub gen_loss: f64,
    pub sample_grad: Matrix,
    /// Last local discriminator objective; stays on the node.
    pub disc_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Fgan1Node {
    pub id: u32,
    pub discriminator: ModelParams,
    data: Matrix,
    opt: Optimizer,
    data_rng: Rng,
}

impl Fgan1Node {
    pub fn new(dataset: &FogDataset, discriminator: ModelParams, cfg: &FederationConfig) -> Result<Self> {
        Ok(Self {
            id: dataset.node_id,
            discriminator,
            data: dataset.features()?,
            opt: Optimizer::new(cfg.optimizer, cfg.lr_d),
            data_rng: rng::stream(cfg.seed, Purpose::Data, u64::from(dataset.node_id)),
        })
    }

    pub fn shard_len(&self) -> usize {
        self.data.rows()
    }
}

/// `E` ascent steps on the discriminator objective (the broadcast `x_d` is
/// reused, the real batch is fresh each step), then the generator loss and its
/// sample gradient under the final discriminator.
pub fn local_update_fgan1(
    nets: &GanNetworks,
    node: &mut Fgan1Node,
    msg: &Fgan1RoundMsgDown,
    epochs: u32,
    batch: usize,
    form: GeneratorLoss,
) -> Result<Fgan1RoundMsgUp> {
    if epochs == 0 {
        return Err(Error::InvalidConfig {
            key: "E",
            reason: "at least one local epoch is required".into(),
        });
    }
    if node.data.rows() < batch {
        return Err(Error::TooFewSamples {
            context: "fog node shard",
            needed: batch,
            available: node.data.rows(),
        });
    }
    let mut disc_loss = f64::NAN;
    for _ in 0..epochs {
        let x_r = sample_real(&node.data, batch, &mut node.data_rng)?;
        let (loss, grad) = disc_loss_grad(&nets.discriminator, &node.discriminator, &x_r, &msg.x_d)?;
        node.opt.step(&mut node.discriminator, &grad, Direction::Ascend)?;
        disc_loss = loss;
    }
    let (gen_loss, sample_grad) = gen_loss_sample_grad(&nets.discriminator, &node.discriminator, &msg.x_g, form)?;
    Ok(Fgan1RoundMsgUp {
        round: msg.round,
        node_id: node.id,
        gen_loss,
        sample_grad,
        disc_loss,
    })
}

/// Mean of the nodes' generator losses.
pub fn aggregate_gen_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Empty("generator losses"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("node generator loss"));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Full FGAN-I state: coordinator generator, per-node discriminators.
#[derive(Debug, Clone)]
pub struct Fgan1 {
    nets: GanNetworks,
    cfg: FederationConfig,
    pub generator: ModelParams,
    gen_opt: Optimizer,
    noise_rng: Rng,
    pub nodes: Vec<Fgan1Node>,
    next_round: u32,
}

impl Fgan1 {
    /// Fresh initialization from `cfg.seed`; every node starts from the same discriminator.
    pub fn new(nets: GanNetworks, datasets: &[FogDataset], cfg: FederationConfig) -> Result<Self> {
        let (w, theta) = nets.init(cfg.seed)?;
        Self::from_params(nets, w, &[theta], datasets, cfg)
    }

    /// Warm start. `discriminators` holds either one vector shared by every
    /// node or one per node.
    pub fn from_params(
        nets: GanNetworks,
        generator: ModelParams,
        discriminators: &[ModelParams],
        datasets: &[FogDataset],
        cfg: FederationConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if datasets.is_empty() {
            return Err(Error::Empty("fog nodes"));
        }
        if discriminators.len() != 1 && discriminators.len() != datasets.len() {
            return Err(Error::DimensionMismatch {
                context: "discriminator count",
                expected: datasets.len(),
                actual: discriminators.len(),
            });
        }
        if generator.len() != nets.generator.param_count()
            || discriminators
                .iter()
                .any(|d| d.len() != nets.discriminator.param_count())
        {
            return Err(Error::LayoutMismatch);
        }
        let nodes = datasets
            .iter()
            .enumerate()
            .map(|(i, d)| Fgan1Node::new(d, discriminators[i % discriminators.len()].clone(), &cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            gen_opt: Optimizer::new(cfg.optimizer, cfg.lr_g),
            noise_rng: rng::stream(cfg.seed, Purpose::Noise, COORDINATOR),
            nets,
            cfg,
            generator,
            nodes,
            next_round: 0,
        })
    }

    pub fn networks(&self) -> &GanNetworks {
        &self.nets
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn next_round(&self) -> u32 {
        self.next_round
    }

    /// Numbers rounds from `round` on, for continuing on a transport that
    /// already carried earlier rounds.
    pub fn starting_at(mut self, round: u32) -> Self {
        self.next_round = round;
        self
    }

    /// One global round through `transport`. Any failure aborts the round
    /// before aggregation; the generator is then left untouched and pending
    /// envelopes are discarded.
    pub fn round<E: Executor>(
        &mut self,
        transport: &mut dyn Transport,
        exec: &E,
        clock: &dyn Clock,
    ) -> Result<RoundMetrics> {
        let round = self.next_round;
        let (up0, down0) = transport.totals();
        let start = clock.now_ms();
        let result = self.round_inner(round, transport, exec);
        let (gen_loss, disc_loss) = match result {
            Ok(v) => v,
            Err(e) => {
                drain_channels(transport, self.nodes.len());
                return Err(e);
            }
        };
        self.next_round += 1;
        let (up1, down1) = transport.totals();
        Ok(RoundMetrics {
            round,
            gen_loss,
            disc_loss,
            bytes_up: up1 - up0,
            bytes_down: down1 - down0,
            wall_ms: clock.now_ms() - start,
            mmd: None,
        })
    }

    fn round_inner<E: Executor>(&mut self, round: u32, transport: &mut dyn Transport, exec: &E) -> Result<(f64, f64)> {
        let b = self.cfg.batch;
        let nets = &self.nets;
        let z_d = sample_noise(b, nets.noise, &mut self.noise_rng)?;
        let x_d = gen_forward(&nets.generator, &self.generator, &z_d, BatchKind::FakeForDiscriminator)?;
        let z_g = sample_noise(b, nets.noise, &mut self.noise_rng)?;
        let (x_g, trace) = gen_forward_traced(&nets.generator, &self.generator, &z_g, BatchKind::FakeForGenerator)?;

        for node in &self.nodes {
            for batch in [&x_d, &x_g] {
                transport.send(Envelope {
                    from: Endpoint::Coordinator,
                    to: Endpoint::Node(node.id),
                    round,
                    payload: Payload::Samples {
                        data: batch.samples.clone(),
                        provenance: Provenance::Synthetic,
                    },
                })?;
            }
        }
        let mut inbox = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let to = Endpoint::Node(node.id);
            let mut next = || match transport.recv(to, Endpoint::Coordinator).map(|e| e.payload) {
                Some(Payload::Samples { data, .. }) => Ok(data),
                _ => Err(Error::Protocol("expected a synthetic sample batch")),
            };
            let x_d = Batch::new(next()?, BatchKind::FakeForDiscriminator)?;
            let x_g = Batch::new(next()?, BatchKind::FakeForGenerator)?;
            inbox.push(Fgan1RoundMsgDown { round, x_d, x_g });
        }

        let (epochs, form) = (self.cfg.local_epochs, self.cfg.gen_loss);
        let replies = exec.map_mut(&mut self.nodes, |i, node| {
            local_update_fgan1(nets, node, &inbox[i], epochs, b, form)
        });
        let replies = replies.into_iter().collect::<Result<Vec<_>>>()?;

        for reply in &replies {
            let from = Endpoint::Node(reply.node_id);
            transport.send(Envelope {
                from,
                to: Endpoint::Coordinator,
                round,
                payload: Payload::Scalar(reply.gen_loss),
            })?;
            transport.send(Envelope {
                from,
                to: Endpoint::Coordinator,
                round,
                payload: Payload::SampleGradient(reply.sample_grad.clone()),
            })?;
        }
        let mut losses = Vec::with_capacity(replies.len());
        let mut grad_sum: Option<Matrix> = None;
        for node in &self.nodes {
            let from = Endpoint::Node(node.id);
            match transport.recv(Endpoint::Coordinator, from).map(|e| e.payload) {
                Some(Payload::Scalar(l)) => losses.push(l),
                _ => return Err(Error::Protocol("expected a scalar generator loss")),
            }
            let g = match transport.recv(Endpoint::Coordinator, from).map(|e| e.payload) {
                Some(Payload::SampleGradient(g)) => g,
                _ => return Err(Error::Protocol("expected a sample gradient")),
            };
            g.check_same_shape(&x_g.samples)?;
            match &mut grad_sum {
                None => grad_sum = Some(g),
                Some(s) => s.add_assign(&g)?,
            }
        }
        let gen_loss = aggregate_gen_loss(&losses)?;
        let mut grad = grad_sum.ok_or(Error::Empty("sample gradients"))?;
        grad.scale(1.0 / self.nodes.len() as f64);
        let g_w = generator_grad(&nets.generator, &self.generator, &trace, &grad)?;
        self.gen_opt.step(&mut self.generator, &g_w, Direction::Descend)?;
        let disc_loss = replies.iter().map(|r| r.disc_loss).sum::<f64>() / replies.len() as f64;
        Ok((gen_loss, disc_loss))
    }

    /// Runs `cfg.rounds` rounds, probing sample quality when due.
    pub fn run<E: Executor>(
        &mut self,
        transport: &mut dyn Transport,
        exec: &E,
        clock: &dyn Clock,
        probe: Option<&MmdProbe>,
    ) -> Result<Vec<RoundMetrics>> {
        let mut trace = Vec::with_capacity(self.cfg.rounds as usize);
        for _ in 0..self.cfg.rounds {
            let mut m = self.round(transport, exec, clock)?;
            if let Some(p) = probe.filter(|p| p.due(m.round)) {
                m.mmd = Some(p.measure(&self.nets, &self.generator, m.round)?);
            }
            trace.push(m);
        }
        Ok(trace)
    }
}
