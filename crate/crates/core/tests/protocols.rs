use fogsynth_core::centralized::CentralizedGan;
use fogsynth_core::data::{partition, synth_corpus, CorpusSpec, FogDataset};
use fogsynth_core::exec::{NullClock, Sequential};
use fogsynth_core::federation::{
    Endpoint, FailureRule, FederationConfig, InProcessTransport, PayloadKind, Provenance, Transport, ValueWidth,
    HEADER_BYTES,
};
use fogsynth_core::fgan1::Fgan1;
use fogsynth_core::fgan2::Fgan2;
use fogsynth_core::gan::{GanNetworks, GeneratorLoss};
use fogsynth_core::nn::Activation;
use fogsynth_core::optim::OptimizerKind;
use fogsynth_core::rng::{stream, Purpose, COORDINATOR};
use fogsynth_core::Architecture;

const DIM: usize = 16;

fn small_nets() -> GanNetworks {
    let g = Architecture::mlp(4, &[12], Activation::LeakyRelu, DIM, Activation::Sigmoid);
    let d = Architecture::mlp(DIM, &[12], Activation::LeakyRelu, 1, Activation::Sigmoid);
    GanNetworks::new(g, d).unwrap()
}

fn shards(nodes: usize, seed: u64) -> Vec<FogDataset> {
    let corpus = synth_corpus(&CorpusSpec::random(2, DIM, 60, 0.05, seed)).unwrap();
    partition(&corpus, nodes, seed).unwrap()
}

fn cfg(optimizer: OptimizerKind, batch: usize) -> FederationConfig {
    FederationConfig {
        rounds: 50,
        local_epochs: 1,
        batch,
        lr_g: 0.05,
        lr_d: 0.05,
        optimizer,
        gen_loss: GeneratorLoss::Saturating,
        weighted_average: false,
        seed: 11,
    }
}

fn centralized(nets: &GanNetworks, cfg: &FederationConfig, noise_index: u64) -> CentralizedGan {
    let (w, t) = nets.init(cfg.seed).unwrap();
    CentralizedGan::new(
        w,
        t,
        cfg.optimizer,
        cfg.lr_g,
        cfg.lr_d,
        cfg.batch,
        cfg.gen_loss,
        stream(cfg.seed, Purpose::Noise, noise_index),
        stream(cfg.seed, Purpose::Data, 0),
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn single_node_fgan1_tracks_centralized_reference() {
    let nets = small_nets();
    let data = shards(1, 3);
    let x = data[0].features().unwrap();
    for opt in [OptimizerKind::Sgd, OptimizerKind::adam()] {
        let c = cfg(opt, 8);
        let mut fed = Fgan1::new(nets.clone(), &data, c.clone()).unwrap();
        let mut reference = centralized(&nets, &c, COORDINATOR);
        let mut transport = InProcessTransport::with_nodes(ValueWidth::F32, 1);
        for _ in 0..c.rounds {
            fed.round(&mut transport, &Sequential, &NullClock).unwrap();
            reference.step(&nets, &x).unwrap();
            assert!(max_abs_diff(fed.generator.values(), reference.generator.values()) <= 1e-12);
            assert!(max_abs_diff(fed.nodes[0].discriminator.values(), reference.discriminator.values()) <= 1e-12);
        }
    }
}

#[test]
fn single_node_fgan2_tracks_centralized_reference() {
    let nets = small_nets();
    let data = shards(1, 4);
    let x = data[0].features().unwrap();
    for opt in [OptimizerKind::Sgd, OptimizerKind::adam()] {
        let c = cfg(opt, 8);
        let mut fed = Fgan2::new(nets.clone(), &data, c.clone()).unwrap();
        let mut reference = centralized(&nets, &c, 0);
        let mut transport = InProcessTransport::with_nodes(ValueWidth::F32, 1);
        for _ in 0..c.rounds {
            fed.round(&mut transport, &Sequential, &NullClock).unwrap();
            reference.step(&nets, &x).unwrap();
            assert!(max_abs_diff(fed.generator.values(), reference.generator.values()) <= 1e-12);
            assert!(max_abs_diff(fed.discriminator.values(), reference.discriminator.values()) <= 1e-12);
        }
    }
}

fn bytes_per_round_fgan1(batch: usize, nodes: usize) -> Vec<u64> {
    let nets = small_nets();
    let mut c = cfg(OptimizerKind::Sgd, batch);
    c.rounds = 3;
    let mut fed = Fgan1::new(nets, &shards(nodes, 5), c).unwrap();
    let mut t = InProcessTransport::with_nodes(ValueWidth::F32, nodes);
    let trace = fed.run(&mut t, &Sequential, &NullClock, None).unwrap();
    trace.iter().map(|m| m.bytes_up + m.bytes_down).collect()
}

#[test]
fn fgan1_bytes_follow_the_envelope_formula() {
    let (b, n) = (8u64, 3u64);
    let per_round = bytes_per_round_fgan1(b as usize, n as usize);
    let h = HEADER_BYTES as u64;
    // down: two sample batches; up: scalar + sample gradient
    let expected = n * (2 * (h + b * DIM as u64 * 4) + (h + 4) + (h + b * DIM as u64 * 4));
    assert!(per_round.iter().all(|&v| v == expected), "{per_round:?} vs {expected}");
}

#[test]
fn fgan2_bytes_follow_the_envelope_formula() {
    let nets = small_nets();
    let params = (nets.generator.param_count() + nets.discriminator.param_count()) as u64;
    let n = 3u64;
    for batch in [4, 8] {
        let mut c = cfg(OptimizerKind::Sgd, batch);
        c.rounds = 3;
        let mut fed = Fgan2::new(nets.clone(), &shards(n as usize, 6), c).unwrap();
        let mut t = InProcessTransport::with_nodes(ValueWidth::F32, n as usize);
        let trace = fed.run(&mut t, &Sequential, &NullClock, None).unwrap();
        let expected = 2 * n * params * 4 + 4 * n * HEADER_BYTES as u64;
        assert!(trace.iter().all(|m| m.bytes_up + m.bytes_down == expected));
        let report = t.overhead_report();
        assert_eq!(report.total(), expected * 3);
    }
}

#[test]
fn no_real_samples_cross_the_transport() {
    let nets = small_nets();
    let data = shards(3, 7);
    let mut c = cfg(OptimizerKind::Sgd, 8);
    c.rounds = 4;
    let mut t1 = InProcessTransport::with_nodes(ValueWidth::F32, 3);
    Fgan1::new(nets.clone(), &data, c.clone())
        .unwrap()
        .run(&mut t1, &Sequential, &NullClock, None)
        .unwrap();
    let mut t2 = InProcessTransport::with_nodes(ValueWidth::F32, 3);
    Fgan2::new(nets, &data, c)
        .unwrap()
        .run(&mut t2, &Sequential, &NullClock, None)
        .unwrap();
    for log in [t1.log(), t2.log()] {
        assert!(!log.is_empty());
        assert!(log.iter().all(|r| r.provenance != Provenance::Real));
        assert!(log
            .iter()
            .filter(|r| r.kind == PayloadKind::Samples)
            .all(|r| r.provenance == Provenance::Synthetic && r.from == Endpoint::Coordinator));
    }
}

#[test]
fn node_failure_aborts_round_without_aggregation() {
    let nets = small_nets();
    let data = shards(3, 8);
    let c = cfg(OptimizerKind::Sgd, 8);

    let mut fed1 = Fgan1::new(nets.clone(), &data, c.clone()).unwrap();
    let mut t = InProcessTransport::with_nodes(ValueWidth::F32, 3);
    fed1.round(&mut t, &Sequential, &NullClock).unwrap();
    let before = fed1.generator.clone();
    t.inject_failure(FailureRule {
        endpoint: Endpoint::Node(2),
        round: Some(1),
    });
    assert!(fed1.round(&mut t, &Sequential, &NullClock).is_err());
    assert_eq!(fed1.generator, before);
    assert_eq!(fed1.next_round(), 1);
    t.clear_failures();
    fed1.round(&mut t, &Sequential, &NullClock).unwrap();

    let mut fed2 = Fgan2::new(nets, &data, c).unwrap();
    let mut t = InProcessTransport::with_nodes(ValueWidth::F32, 3);
    t.inject_failure(FailureRule {
        endpoint: Endpoint::Node(0),
        round: None,
    });
    let (w, theta) = (fed2.generator.clone(), fed2.discriminator.clone());
    assert!(fed2.round(&mut t, &Sequential, &NullClock).is_err());
    assert_eq!((fed2.generator.clone(), fed2.discriminator.clone()), (w, theta));
}

#[test]
fn too_small_shard_is_rejected() {
    let nets = small_nets();
    let data = shards(4, 9);
    let c = cfg(OptimizerKind::Sgd, 1000);
    let mut fed = Fgan1::new(nets, &data, c).unwrap();
    let mut t = InProcessTransport::with_nodes(ValueWidth::F32, 4);
    assert!(fed.round(&mut t, &Sequential, &NullClock).is_err());
}

#[test]
fn zero_epochs_is_rejected() {
    let mut c = cfg(OptimizerKind::Sgd, 8);
    c.local_epochs = 0;
    assert!(Fgan2::new(small_nets(), &shards(2, 1), c).is_err());
}
