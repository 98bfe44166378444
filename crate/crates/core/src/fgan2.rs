//! FGAN-II: every fog node trains a full generator/discriminator pair
//! locally and the coordinator averages parameters each round.

use alloc::vec::Vec;

use crate::data::FogDataset;
use crate::evaluation::{MmdProbe, RoundMetrics};
use crate::exec::{Clock, Executor};
use crate::federation::{drain_channels, Endpoint, Envelope, FederationConfig, Payload, Transport};
use crate::gan::{
    disc_loss_grad, gen_forward, gen_loss_param_grad, sample_noise, sample_real, BatchKind, GanNetworks, GeneratorLoss,
};
use crate::nn::ModelParams;
use crate::optim::{Direction, Optimizer};
use crate::rng::{self, Purpose, Rng};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Parameters uploaded by one node after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct Fgan2ParamMsg {
    pub round: u32,
    pub node_id: u32,
    pub generator: ModelParams,
    pub discriminator: ModelParams,
}

#[derive(Debug, Clone)]
pub struct Fgan2Node {
    pub id: u32,
    data: Matrix,
    gen_opt: Optimizer,
    disc_opt: Optimizer,
    noise_rng: Rng,
    data_rng: Rng,
}

impl Fgan2Node {
    pub fn new(dataset: &FogDataset, cfg: &FederationConfig) -> Result<Self> {
        let id = u64::from(dataset.node_id);
        Ok(Self {
            id: dataset.node_id,
            data: dataset.features()?,
            gen_opt: Optimizer::new(cfg.optimizer, cfg.lr_g),
            disc_opt: Optimizer::new(cfg.optimizer, cfg.lr_d),
            noise_rng: rng::stream(cfg.seed, Purpose::Noise, id),
            data_rng: rng::stream(cfg.seed, Purpose::Data, id),
        })
    }

    pub fn shard_len(&self) -> usize {
        self.data.rows()
    }
}

/// Result of local training on one node.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFgan2 {
    pub generator: ModelParams,
    pub discriminator: ModelParams,
    pub gen_loss: f64,
    pub disc_loss: f64,
}

/// `E` local epochs starting from copies of the global pair. Each epoch first
/// ascends the discriminator, then descends the generator against the
/// updated discriminator.
pub fn local_update_fgan2(
    nets: &GanNetworks,
    generator: &ModelParams,
    discriminator: &ModelParams,
    node: &mut Fgan2Node,
    epochs: u32,
    batch: usize,
    form: GeneratorLoss,
) -> Result<LocalFgan2> {
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
    let mut w = generator.clone();
    let mut theta = discriminator.clone();
    let (mut gen_loss, mut disc_loss) = (f64::NAN, f64::NAN);
    for _ in 0..epochs {
        let z_d = sample_noise(batch, nets.noise, &mut node.noise_rng)?;
        let x_d = gen_forward(&nets.generator, &w, &z_d, BatchKind::FakeForDiscriminator)?;
        let x_r = sample_real(&node.data, batch, &mut node.data_rng)?;
        let (ld, g_theta) = disc_loss_grad(&nets.discriminator, &theta, &x_r, &x_d)?;
        node.disc_opt.step(&mut theta, &g_theta, Direction::Ascend)?;
        let z_g = sample_noise(batch, nets.noise, &mut node.noise_rng)?;
        let (lg, g_w) = gen_loss_param_grad(nets, &w, &theta, &z_g, form)?;
        node.gen_opt.step(&mut w, &g_w, Direction::Descend)?;
        disc_loss = ld;
        gen_loss = lg;
    }
    Ok(LocalFgan2 {
        generator: w,
        discriminator: theta,
        gen_loss,
        disc_loss,
    })
}

/// Equal-weight parameter average.
pub fn fedavg(params: &[&ModelParams]) -> Result<ModelParams> {
    let n = params.len();
    fedavg_weighted(params, &alloc::vec![1.0; n])
}

/// Weighted parameter average; weights are normalized to sum to one.
pub fn fedavg_weighted(params: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = *params.first().ok_or(Error::Empty("parameter vectors"))?;
    if weights.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "fedavg weights",
            expected: params.len(),
            actual: weights.len(),
        });
    }
    if params.iter().any(|p| !p.same_layout(first)) {
        return Err(Error::LayoutMismatch);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidConfig {
            key: "weights",
            reason: "must be non-negative with a positive sum".into(),
        });
    }
    let mut acc = alloc::vec![0.0; first.len()];
    for (p, &wt) in params.iter().zip(weights) {
        let c = wt / total;
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += c * v;
        }
    }
    first.with_values(acc)
}

#[derive(Debug, Clone)]
pub struct Fgan2 {
    nets: GanNetworks,
    cfg: FederationConfig,
    pub generator: ModelParams,
    pub discriminator: ModelParams,
    pub nodes: Vec<Fgan2Node>,
    next_round: u32,
}

impl Fgan2 {
    pub fn new(nets: GanNetworks, datasets: &[FogDataset], cfg: FederationConfig) -> Result<Self> {
        let (w, theta) = nets.init(cfg.seed)?;
        Self::from_params(nets, w, theta, datasets, cfg)
    }

    pub fn from_params(
        nets: GanNetworks,
        generator: ModelParams,
        discriminator: ModelParams,
        datasets: &[FogDataset],
        cfg: FederationConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if datasets.is_empty() {
            return Err(Error::Empty("fog nodes"));
        }
        if generator.len() != nets.generator.param_count() || discriminator.len() != nets.discriminator.param_count() {
            return Err(Error::LayoutMismatch);
        }
        let nodes = datasets
            .iter()
            .map(|d| Fgan2Node::new(d, &cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nets,
            cfg,
            generator,
            discriminator,
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

    /// One global round. On failure the global pair is unchanged.
    pub fn round<E: Executor>(
        &mut self,
        transport: &mut dyn Transport,
        exec: &E,
        clock: &dyn Clock,
    ) -> Result<RoundMetrics> {
        let round = self.next_round;
        let (up0, down0) = transport.totals();
        let start = clock.now_ms();
        let (gen_loss, disc_loss) = match self.round_inner(round, transport, exec) {
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
        for node in &self.nodes {
            for p in [&self.generator, &self.discriminator] {
                transport.send(Envelope {
                    from: Endpoint::Coordinator,
                    to: Endpoint::Node(node.id),
                    round,
                    payload: Payload::Params(p.clone()),
                })?;
            }
        }
        let mut inbox = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let to = Endpoint::Node(node.id);
            let mut next = || match transport.recv(to, Endpoint::Coordinator).map(|e| e.payload) {
                Some(Payload::Params(p)) => Ok(p),
                _ => Err(Error::Protocol("expected a parameter vector")),
            };
            let w = next()?;
            let theta = next()?;
            inbox.push((w, theta));
        }

        let nets = &self.nets;
        let (epochs, b, form) = (self.cfg.local_epochs, self.cfg.batch, self.cfg.gen_loss);
        let results = exec.map_mut(&mut self.nodes, |i, node| {
            local_update_fgan2(nets, &inbox[i].0, &inbox[i].1, node, epochs, b, form)
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;

        for (node, r) in self.nodes.iter().zip(&results) {
            for p in [&r.generator, &r.discriminator] {
                transport.send(Envelope {
                    from: Endpoint::Node(node.id),
                    to: Endpoint::Coordinator,
                    round,
                    payload: Payload::Params(p.clone()),
                })?;
            }
        }
        let mut uploads = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let from = Endpoint::Node(node.id);
            let mut next = || match transport.recv(Endpoint::Coordinator, from).map(|e| e.payload) {
                Some(Payload::Params(p)) => Ok(p),
                _ => Err(Error::Protocol("expected a parameter vector")),
            };
            let generator = next()?;
            let discriminator = next()?;
            uploads.push(Fgan2ParamMsg {
                round,
                node_id: node.id,
                generator,
                discriminator,
            });
        }
        let weights: Vec<f64> = if self.cfg.weighted_average {
            self.nodes.iter().map(|n| n.shard_len() as f64).collect()
        } else {
            alloc::vec![1.0; self.nodes.len()]
        };
        let ws: Vec<&ModelParams> = uploads.iter().map(|u| &u.generator).collect();
        let ts: Vec<&ModelParams> = uploads.iter().map(|u| &u.discriminator).collect();
        let w = fedavg_weighted(&ws, &weights)?;
        let theta = fedavg_weighted(&ts, &weights)?;
        if !w.same_layout(&self.generator) || !theta.same_layout(&self.discriminator) {
            return Err(Error::LayoutMismatch);
        }
        self.generator = w;
        self.discriminator = theta;
        let n = results.len() as f64;
        Ok((
            results.iter().map(|r| r.gen_loss).sum::<f64>() / n,
            results.iter().map(|r| r.disc_loss).sum::<f64>() / n,
        ))
    }

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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayoutEntry, Role};
    use alloc::vec;

    fn p(v: &[f64]) -> ModelParams {
        ModelParams::new(
            v.to_vec(),
            vec![LayoutEntry::new("w".into(), vec![v.len()])],
            Role::Generator,
        )
        .unwrap()
    }

    #[test]
    fn fedavg_examples() {
        let avg = fedavg(&[&p(&[1.0, 3.0]), &p(&[3.0, 5.0])]).unwrap();
        assert_eq!(avg.values(), &[2.0, 4.0]);
        let one = p(&[0.3, -0.7]);
        assert_eq!(fedavg(&[&one]).unwrap(), one);
        assert!(fedavg(&[&p(&[1.0]), &p(&[1.0, 2.0])]).is_err());
        assert!(fedavg(&[]).is_err());
    }

    #[test]
    fn weighted_average() {
        let avg = fedavg_weighted(&[&p(&[0.0]), &p(&[4.0])], &[1.0, 3.0]).unwrap();
        assert_eq!(avg.values(), &[3.0]);
    }
}
