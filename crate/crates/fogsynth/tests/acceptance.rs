//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use fogsynth::artifacts::RunDir;
use fogsynth::config::RunConfig;
use fogsynth::report::{EvalSection, UpdateReport, UpdateSummary};
use fogsynth::stages::run_all;
use fogsynth_core::centralized::CentralizedGan;
use fogsynth_core::classifier::{adjusted_rand_index, evaluate_predictions, ConfusionMatrix};
use fogsynth_core::data::{partition, samples_matrix, synth_corpus, CorpusSpec, FogDataset};
use fogsynth_core::dec::{bic, bic_from_r, kl_grads, kl_loss, select_k, soft_assign, target_dist, DecConfig};
use fogsynth_core::evaluation::{mmd2, KernelSpec, MmdProbe, RoundMetrics};
use fogsynth_core::exec::{NullClock, Sequential};
use fogsynth_core::federation::{EnvelopeRecord, FederationConfig, InProcessTransport, Provenance, ValueWidth};
use fogsynth_core::fgan1::Fgan1;
use fogsynth_core::fgan2::{fedavg, Fgan2};
use fogsynth_core::gan::{
    disc_loss, disc_loss_grad, gen_forward, gen_loss, gen_loss_local, gen_loss_param_grad, gen_loss_sample_grad, Batch,
    BatchKind, GanNetworks, GeneratorLoss,
};
use fogsynth_core::nn::Activation;
use fogsynth_core::optim::OptimizerKind;
use fogsynth_core::rng::{stream, Purpose, COORDINATOR};
use fogsynth_core::{Architecture, Matrix, ModelParams};
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Logs of every transport used by the suite, for the privacy check.
#[derive(Default)]
struct Logs {
    records: Vec<EnvelopeRecord>,
    files: Vec<std::path::PathBuf>,
}

// ---- 1: formula oracles -------------------------------------------------

fn brute_q(z: &Matrix, mu: &Matrix) -> Vec<Vec<f64>> {
    (0..z.rows())
        .map(|i| {
            let a: Vec<f64> = (0..mu.rows())
                .map(|j| {
                    let d2: f64 = (0..z.cols()).map(|d| (z.get(i, d) - mu.get(j, d)).powi(2)).sum();
                    1.0 / (1.0 + d2)
                })
                .collect();
            let s: f64 = a.iter().sum();
            a.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn brute_p(q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = q[0].len();
    let f: Vec<f64> = (0..k).map(|j| q.iter().map(|r| r[j]).sum()).collect();
    q.iter()
        .map(|r| {
            let u: Vec<f64> = (0..k).map(|j| r[j] * r[j] / f[j]).collect();
            let s: f64 = u.iter().sum();
            u.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn brute_pairs(truth: &[u32], pred: &[u32]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for i in 0..truth.len() {
        for j in i + 1..truth.len() {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    (tp, fp, fn_, tn)
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

fn formula_oracles() -> Check {
    let mut rng = stream(101, Purpose::Init, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let z = random_matrix(20, 3, &mut rng);
        let mu = random_matrix(5, 3, &mut rng);
        let q = soft_assign(&z, &mu).map_err(|e| e.to_string())?;
        let p = target_dist(&q).map_err(|e| e.to_string())?;
        let (bq, bp) = (brute_q(&z, &mu), brute_p(&brute_q(&z, &mu)));
        let mut kl = 0.0;
        for i in 0..20 {
            let (sq, sp): (f64, f64) = (q.row(i).iter().sum(), p.row(i).iter().sum());
            ensure((sq - 1.0).abs() < 1e-12 && (sp - 1.0).abs() < 1e-12, || {
                format!("row {i} does not sum to 1")
            })?;
            for j in 0..5 {
                worst = worst
                    .max((q.get(i, j) - bq[i][j]).abs())
                    .max((p.get(i, j) - bp[i][j]).abs());
                kl += bp[i][j] * (bp[i][j] / bq[i][j]).ln();
            }
        }
        worst = worst.max((kl_loss(&p, &q).map_err(|e| e.to_string())? - kl).abs());
    }
    ensure(worst <= 1e-9, || format!("DEC formulas off by {worst:e}"))?;

    let b = bic_from_r(100.0, 100, 2).map_err(|e| e.to_string())?;
    ensure(
        (b - 2.0 * 100f64.ln()).abs() <= 1e-9 && (b - 9.2103).abs() < 1e-4,
        || format!("bic {b}"),
    )?;
    let z = random_matrix(30, 4, &mut rng);
    let mu = random_matrix(3, 4, &mut rng);
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let r: f64 = (0..30)
        .map(|i| {
            (0..4)
                .map(|d| (z.get(i, d) - mu.get(i % 3, d)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    let direct = 30.0 * (r / 30.0).ln() + 3.0 * 30f64.ln();
    let got = bic(&z, &labels, &mu).map_err(|e| e.to_string())?;
    ensure((got - direct).abs() <= 1e-9, || format!("bic {got} vs {direct}"))?;

    let arch = Architecture::mlp(3, &[4], Activation::Tanh, 2, Activation::Identity);
    let base = fogsynth_core::nn::init_model(&arch, fogsynth_core::Role::Generator, 1).map_err(|e| e.to_string())?;
    let vecs: Vec<ModelParams> = (0..5)
        .map(|_| {
            base.with_values((0..base.len()).map(|_| rng.random_range(-3.0..3.0)).collect())
                .unwrap()
        })
        .collect();
    let refs: Vec<&ModelParams> = vecs.iter().collect();
    let avg = fedavg(&refs).map_err(|e| e.to_string())?;
    let mean: Vec<f64> = (0..base.len())
        .map(|i| vecs.iter().map(|v| v.values()[i]).sum::<f64>() / 5.0)
        .collect();
    ensure(max_abs_diff(avg.values(), &mean) <= 1e-12, || {
        "fedavg is not the elementwise mean".into()
    })?;
    let rev: Vec<&ModelParams> = vecs.iter().rev().collect();
    let avg_rev = fedavg(&rev).map_err(|e| e.to_string())?;
    ensure(max_abs_diff(avg.values(), avg_rev.values()) <= 1e-12, || {
        "fedavg depends on order".into()
    })?;

    for _ in 0..50 {
        let n = rng.random_range(2..40);
        let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let pred: Vec<u32> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let (tp, fp, fn_, tn) = brute_pairs(&truth, &pred);
        let pc = ConfusionMatrix::new(&truth, &pred)
            .map_err(|e| e.to_string())?
            .pair_counts();
        ensure((pc.tp, pc.fp, pc.fn_, pc.tn) == (tp, fp, fn_, tn), || {
            format!("pair counts {pc:?}")
        })?;
        let ev = evaluate_predictions(&truth, &pred).map_err(|e| e.to_string())?;
        let (r, p) = (ratio(tp, tp + fn_), ratio(tp, tp + fp));
        let f = if r + p == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ensure(ev.recall == r && ev.precision == p && ev.f1 == f, || {
            "pairwise scores differ".into()
        })?;
    }

    let x = random_matrix(40, 6, &mut rng);
    let y = random_matrix(30, 6, &mut rng);
    let k = KernelSpec::default();
    let same = mmd2(&x, &x, k).map_err(|e| e.to_string())?;
    let (xy, yx) = (mmd2(&x, &y, k).unwrap(), mmd2(&y, &x, k).unwrap());
    let lin = mmd2(
        &Matrix::from_vec(1, 1, vec![0.0]).unwrap(),
        &Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
        KernelSpec::Linear,
    )
    .unwrap();
    ensure(same.abs() <= 1e-9, || format!("mmd(x, x) = {same}"))?;
    ensure((xy - yx).abs() <= 1e-12, || format!("mmd asymmetric {xy} {yx}"))?;
    ensure((lin - 1.0).abs() <= 1e-12, || format!("linear mmd {lin}"))?;
    Ok(format!("max DEC deviation {worst:.1e}, bic {b:.4}"))
}

// ---- 2: gradient checks -------------------------------------------------

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            v[i] = x[i] + h;
            let up = f(&v);
            v[i] = x[i] - h;
            let down = f(&v);
            v[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn gradient_checks() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = stream(200 + seed, Purpose::Init, 0);
        let g = Architecture::mlp(3, &[6], Activation::Tanh, 4, Activation::Sigmoid);
        let d = Architecture::mlp(4, &[6], Activation::Tanh, 1, Activation::Sigmoid);
        let nets = GanNetworks::new(g, d).unwrap();
        let (w, theta) = nets.init(seed).unwrap();
        let real = Batch::new(random_matrix(8, 4, &mut rng), BatchKind::Real).unwrap();
        let fake = Batch::new(random_matrix(8, 4, &mut rng), BatchKind::FakeForDiscriminator).unwrap();
        let dnet = &nets.discriminator;

        let (_, analytic) = disc_loss_grad(dnet, &theta, &real, &fake).unwrap();
        let numeric = central_diff(theta.values(), |v| {
            disc_loss(dnet, &theta.with_values(v.to_vec()).unwrap(), &real, &fake).unwrap()
        });
        worst = worst.max(rel_err(&analytic, &numeric));

        let xg = random_matrix(8, 4, &mut rng);
        let batch = Batch::new(xg.clone(), BatchKind::FakeForGenerator).unwrap();
        let (_, analytic) = gen_loss_sample_grad(dnet, &theta, &batch, GeneratorLoss::Saturating).unwrap();
        let numeric = central_diff(xg.as_slice(), |v| {
            let b = Batch::new(Matrix::from_vec(8, 4, v.to_vec()).unwrap(), BatchKind::FakeForGenerator).unwrap();
            gen_loss_local(dnet, &theta, &b).unwrap()
        });
        worst = worst.max(rel_err(analytic.as_slice(), &numeric));

        let z = random_matrix(8, 3, &mut rng);
        for form in [GeneratorLoss::Saturating, GeneratorLoss::NonSaturating] {
            let (_, analytic) = gen_loss_param_grad(&nets, &w, &theta, &z, form).unwrap();
            let numeric = central_diff(w.values(), |v| {
                let wp = w.with_values(v.to_vec()).unwrap();
                let b = gen_forward(&nets.generator, &wp, &z, BatchKind::FakeForGenerator).unwrap();
                gen_loss(dnet, &theta, &b, form).unwrap()
            });
            worst = worst.max(rel_err(&analytic, &numeric));
        }

        let zl = random_matrix(12, 3, &mut rng);
        let mu = random_matrix(4, 3, &mut rng);
        let p = target_dist(&soft_assign(&zl, &mu).unwrap()).unwrap();
        let (dz, dmu) = kl_grads(&zl, &mu, &p).unwrap();
        let nz = central_diff(zl.as_slice(), |v| {
            let zz = Matrix::from_vec(12, 3, v.to_vec()).unwrap();
            kl_loss(&p, &soft_assign(&zz, &mu).unwrap()).unwrap()
        });
        let nmu = central_diff(mu.as_slice(), |v| {
            let mm = Matrix::from_vec(4, 3, v.to_vec()).unwrap();
            kl_loss(&p, &soft_assign(&zl, &mm).unwrap()).unwrap()
        });
        worst = worst
            .max(rel_err(dz.as_slice(), &nz))
            .max(rel_err(dmu.as_slice(), &nmu));
    }
    ensure(worst <= 1e-4, || format!("relative error {worst:.2e}"))?;
    Ok(format!("worst relative error {worst:.1e}"))
}

// ---- 3: protocol equivalence --------------------------------------------

const TOY_DIM: usize = 16;

fn toy_nets() -> GanNetworks {
    let g = Architecture::mlp(4, &[12], Activation::LeakyRelu, TOY_DIM, Activation::Sigmoid);
    let d = Architecture::mlp(TOY_DIM, &[12], Activation::LeakyRelu, 1, Activation::Sigmoid);
    GanNetworks::new(g, d).unwrap()
}

fn toy_shards(nodes: usize, seed: u64) -> Vec<FogDataset> {
    let corpus = synth_corpus(&CorpusSpec::random(2, TOY_DIM, 60, 0.05, seed)).unwrap();
    partition(&corpus, nodes, seed).unwrap()
}

fn toy_cfg(optimizer: OptimizerKind, batch: usize, rounds: u32) -> FederationConfig {
    FederationConfig {
        rounds,
        local_epochs: 1,
        batch,
        lr_g: 0.05,
        lr_d: 0.05,
        optimizer,
        gen_loss: GeneratorLoss::Saturating,
        weighted_average: false,
        seed: 17,
    }
}

fn reference(nets: &GanNetworks, cfg: &FederationConfig, noise_index: u64) -> CentralizedGan {
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

fn protocol_equivalence(logs: &mut Logs) -> Check {
    let nets = toy_nets();
    let data = toy_shards(1, 5);
    let x = data[0].features().unwrap();
    let mut worst: f64 = 0.0;
    for opt in [OptimizerKind::Sgd, OptimizerKind::adam()] {
        let c = toy_cfg(opt, 8, 50);
        let mut f1 = Fgan1::new(nets.clone(), &data, c.clone()).unwrap();
        let mut r1 = reference(&nets, &c, COORDINATOR);
        let mut t1 = InProcessTransport::with_nodes(ValueWidth::F32, 1);
        let mut f2 = Fgan2::new(nets.clone(), &data, c.clone()).unwrap();
        let mut r2 = reference(&nets, &c, 0);
        let mut t2 = InProcessTransport::with_nodes(ValueWidth::F32, 1);
        for _ in 0..c.rounds {
            f1.round(&mut t1, &Sequential, &NullClock).map_err(|e| e.to_string())?;
            r1.step(&nets, &x).unwrap();
            f2.round(&mut t2, &Sequential, &NullClock).map_err(|e| e.to_string())?;
            r2.step(&nets, &x).unwrap();
            worst = worst
                .max(max_abs_diff(f1.generator.values(), r1.generator.values()))
                .max(max_abs_diff(
                    f1.nodes[0].discriminator.values(),
                    r1.discriminator.values(),
                ))
                .max(max_abs_diff(f2.generator.values(), r2.generator.values()))
                .max(max_abs_diff(f2.discriminator.values(), r2.discriminator.values()));
        }
        logs.records.extend_from_slice(t1.log());
        logs.records.extend_from_slice(t2.log());
    }
    ensure(worst <= 1e-12, || format!("trajectories diverge by {worst:e}"))?;
    Ok(format!("50 rounds, SGD and Adam, max deviation {worst:.1e}"))
}

// ---- 4: communication pattern -------------------------------------------

fn bytes_per_round(trace: &[RoundMetrics]) -> Vec<f64> {
    trace.iter().map(|m| (m.bytes_up + m.bytes_down) as f64).collect()
}

fn communication(logs: &mut Logs) -> Check {
    let nodes = 4;
    let g = Architecture::mlp(16, &[128, 256], Activation::LeakyRelu, 64, Activation::Sigmoid);
    let d = Architecture::mlp(64, &[256, 128], Activation::LeakyRelu, 1, Activation::Sigmoid);
    let nets = GanNetworks::new(g, d).unwrap();
    let corpus = synth_corpus(&CorpusSpec::random(2, 64, 400, 0.05, 3)).unwrap();
    let data = partition(&corpus, nodes, 3).unwrap();
    let mut per = |fgan1: bool, batch: usize| -> Vec<f64> {
        let c = FederationConfig {
            lr_g: 0.002,
            lr_d: 0.002,
            ..toy_cfg(OptimizerKind::adam(), batch, 5)
        };
        let mut t = InProcessTransport::with_nodes(ValueWidth::F32, nodes);
        let trace = if fgan1 {
            Fgan1::new(nets.clone(), &data, c)
                .unwrap()
                .run(&mut t, &Sequential, &NullClock, None)
        } else {
            Fgan2::new(nets.clone(), &data, c)
                .unwrap()
                .run(&mut t, &Sequential, &NullClock, None)
        }
        .unwrap();
        logs.records.extend_from_slice(t.log());
        bytes_per_round(&trace)
    };
    let (a64, a128) = (per(true, 64), per(true, 128));
    let (b64, b128) = (per(false, 64), per(false, 128));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&a128) / mean(&a64);
    ensure((ratio - 2.0).abs() <= 0.02, || {
        format!("fgan1 b=128/b=64 ratio {ratio:.4}")
    })?;
    let all: Vec<f64> = b64.iter().chain(&b128).copied().collect();
    let (lo, hi) = all
        .iter()
        .fold((f64::INFINITY, 0f64), |(l, h), &v| (l.min(v), h.max(v)));
    let spread = (hi - lo) / lo;
    ensure(spread < 1e-3, || {
        format!("fgan2 bytes/round varies by {:.3}%", spread * 100.0)
    })?;
    Ok(format!(
        "fgan1 {:.0} -> {:.0} B/round (x{ratio:.3}), fgan2 {:.0} B/round (spread {:.2}%)",
        mean(&a64),
        mean(&a128),
        mean(&b64),
        spread * 100.0
    ))
}

// ---- 5: synthesis trend -------------------------------------------------

fn synthesis_trend(logs: &mut Logs) -> Check {
    let g = Architecture::mlp(16, &[128, 256], Activation::LeakyRelu, 64, Activation::Sigmoid);
    let d = Architecture::mlp(64, &[256, 128], Activation::LeakyRelu, 1, Activation::Sigmoid);
    let nets = GanNetworks::new(g, d).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for fgan1 in [true, false] {
        let mut ratios = Vec::new();
        for seed in 0..3u64 {
            let spec = CorpusSpec::random(2, 64, 400, 0.05, seed);
            let corpus = synth_corpus(&spec).unwrap();
            let held = synth_corpus(&CorpusSpec {
                seed: seed + 100,
                samples_per_class: 100,
                ..spec.clone()
            })
            .unwrap();
            let data = partition(&corpus, 4, seed).unwrap();
            let c = FederationConfig {
                rounds: 200,
                local_epochs: 1,
                batch: 64,
                lr_g: 0.002,
                lr_d: 0.002,
                optimizer: OptimizerKind::adam(),
                gen_loss: GeneratorLoss::NonSaturating,
                weighted_average: false,
                seed,
            };
            let probe = MmdProbe::new(samples_matrix(&held).unwrap(), KernelSpec::default(), 20, 200, seed).unwrap();
            let mut t = InProcessTransport::with_nodes(ValueWidth::F32, 4);
            let trace = if fgan1 {
                Fgan1::new(nets.clone(), &data, c)
                    .unwrap()
                    .run(&mut t, &Sequential, &NullClock, Some(&probe))
            } else {
                Fgan2::new(nets.clone(), &data, c)
                    .unwrap()
                    .run(&mut t, &Sequential, &NullClock, Some(&probe))
            }
            .map_err(|e| e.to_string())?;
            logs.records.extend_from_slice(t.log());
            let at = |r: u32| trace.iter().find(|m| m.round == r).and_then(|m| m.mmd).unwrap();
            ratios.push(at(199) / at(19));
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios[1];
        ok &= median <= 0.5;
        lines.push(format!(
            "{} median ratio {median:.3} (seeds {:.3} {:.3} {:.3})",
            if fgan1 { "fgan1" } else { "fgan2" },
            ratios[0],
            ratios[1],
            ratios[2]
        ));
    }
    let detail = lines.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 6: DEC + BIC recovery ----------------------------------------------

fn dec_recovery() -> Check {
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let corpus = synth_corpus(&CorpusSpec::random(3, 16, 200, 0.03, seed)).unwrap();
        let x = samples_matrix(&corpus).unwrap();
        let truth: Vec<u32> = corpus.iter().map(|s| s.true_class.unwrap()).collect();
        let cfg = DecConfig {
            k_max: 6,
            seed,
            ..DecConfig::default()
        };
        let sel = select_k(&x, &cfg, &Sequential).map_err(|e| e.to_string())?;
        let pred: Vec<u32> = sel.fit.labels.iter().map(|&l| l as u32).collect();
        let ari = adjusted_rand_index(&truth, &pred).unwrap();
        if sel.k_star == 3 && ari >= 0.9 {
            passed += 1;
        }
        lines.push(format!("k*={} ari={ari:.3}", sel.k_star));
    }
    let detail = format!("{passed}/5 seeds [{}]", lines.join(", "));
    if passed >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 7: unknown-service loop --------------------------------------------

const LOOP_SEEDS: [u64; 3] = [1, 2, 3];

fn unknown_loop(logs: &mut Logs, root: &Path) -> Check {
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in LOOP_SEEDS {
        let mut cfg = RunConfig {
            name: format!("unknown-{seed}"),
            seed,
            ..RunConfig::default()
        };
        cfg.gan.rounds = 6000;
        cfg.probe.every = 0;
        cfg.update.warm_start = false;
        let dir = RunDir::open(root, &cfg, &[]).map_err(|e| format!("{e:#}"))?;
        run_all(&dir, &cfg).map_err(|e| format!("{e:#}"))?;
        let v1: EvalSection = dir.read_report("eval_v1.json").map_err(|e| e.to_string())?;
        let det = v1.detection.ok_or("no detection report")?;
        let upd: UpdateReport = dir.read_report("update_v1.json").map_err(|e| e.to_string())?;
        let k_star = match upd.summary {
            UpdateSummary::Updated { k_star, .. } => Some(k_star),
            UpdateSummary::NoOp { .. } => None,
        };
        let new_class_recall = dir.read_report::<EvalSection>("eval_v2.json").ok().and_then(|e| {
            e.metrics
                .per_class
                .classes
                .iter()
                .find(|c| c.class == 4)
                .map(|c| c.recall)
        });
        let ok = det.unknown_recall >= 0.8
            && det.false_unknown_rate <= 0.2
            && k_star == Some(5)
            && new_class_recall.is_some_and(|r| r >= 0.8);
        passed += ok as usize;
        lines.push(format!(
            "seed {seed}: recall {:.2} false-unknown {:.2} k*={} new-class acc {} {}",
            det.unknown_recall,
            det.false_unknown_rate,
            k_star.map_or("-".into(), |k| k.to_string()),
            new_class_recall.map_or("-".into(), |r| format!("{r:.2}")),
            if ok { "ok" } else { "miss" }
        ));
        for v in 1..=2 {
            let f = dir.report_path(&format!("envelopes_v{v}.jsonl"));
            if f.exists() {
                logs.files.push(f);
            }
        }
    }
    let detail = format!("{passed}/{} seeds [{}]", LOOP_SEEDS.len(), lines.join("; "));
    if passed * 2 > LOOP_SEEDS.len() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 8: privacy ----------------------------------------------------------

fn privacy(logs: &Logs) -> Check {
    let mut total = logs.records.len();
    let mut real = logs.records.iter().filter(|r| r.provenance == Provenance::Real).count();
    for f in &logs.files {
        let text = std::fs::read_to_string(f).map_err(|e| e.to_string())?;
        for line in text.lines() {
            let rec: EnvelopeRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            total += 1;
            real += (rec.provenance == Provenance::Real) as usize;
        }
    }
    ensure(total > 0, || "no transport logs were collected".into())?;
    ensure(real == 0, || format!("{real} of {total} envelopes carry real samples"))?;
    Ok(format!(
        "{total} envelopes from {} log files and in-memory transports, none real",
        logs.files.len()
    ))
}

// ---- 9: determinism -----------------------------------------------------

fn determinism(logs: &mut Logs, root: &Path) -> Check {
    let desk = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml");
    let mut reports = Vec::new();
    for i in 0..2 {
        let artifacts = root.join(format!("det{i}"));
        let out = Command::new(env!("CARGO_BIN_EXE_fogsynth"))
            .env("FOGSYNTH_ARTIFACTS", &artifacts)
            .args(["run", "--config", desk.to_str().unwrap()])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })?;
        reports.push(std::fs::read(artifacts.join("desk/report.json")).map_err(|e| e.to_string())?);
        for v in 1..=2 {
            let f = artifacts.join(format!("desk/reports/envelopes_v{v}.jsonl"));
            if f.exists() {
                logs.files.push(f);
            }
        }
    }
    ensure(reports[0] == reports[1], || "report.json differs between runs".into())?;
    Ok(format!(
        "two CLI runs, report.json identical ({} bytes)",
        reports[0].len()
    ))
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut logs = Logs::default();
    let mut failed = 0;
    let names = [
        "formula oracles",
        "gradient checks",
        "protocol equivalence",
        "communication pattern",
        "synthesis trend",
        "DEC + BIC recovery",
        "unknown-service loop",
        "privacy",
        "determinism",
    ];
    for n in [1, 2, 3, 4, 5, 6, 7, 9, 8] {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => formula_oracles(),
            2 => gradient_checks(),
            3 => protocol_equivalence(&mut logs),
            4 => communication(&mut logs),
            5 => synthesis_trend(&mut logs),
            6 => dec_recovery(),
            7 => unknown_loop(&mut logs, tmp.path()),
            8 => privacy(&logs),
            _ => determinism(&mut logs, tmp.path()),
        }))
        .unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {tag} {} ({secs:.1}s): {detail}", names[n as usize - 1]);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
