//! Pipeline stages. Each reads its inputs from the run directory and writes
//! versioned artifacts plus a stage report back into it.

use std::collections::BTreeSet;
use std::fs;

use anyhow::{bail, ensure, Context, Result};
use fogsynth_core::classifier::{evaluate, train_classifier, ClassifierModel};
use fogsynth_core::data::{
    partition, partition_by_class, samples_matrix, split_known_unknown, synth_corpus, CorpusSpec, FogDataset,
    TrafficSample,
};
use fogsynth_core::dec::{assign_pseudo_labels, select_k};
use fogsynth_core::evaluation::{KernelSpec, MmdProbe};
use fogsynth_core::exec::{Clock, NullClock, Sequential};
use fogsynth_core::federation::InProcessTransport;
use fogsynth_core::gan::GanNetworks;
use fogsynth_core::pipeline::{synthesize, train_federation, GanParams};
use fogsynth_core::update::{calibrate_alpha, confidences, update_cycle, Observation, PipelineState, UpdateOutcome};
use fogsynth_core::ModelParams;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{RunDir, RunState};
use crate::config::RunConfig;
use crate::formats::{read_checkpoint, read_dataset, write_checkpoint, write_dataset};
use crate::report::{
    confusion_csv, envelope_log_jsonl, mmd_csv, CalibrationReport, DataReport, DetectionReport, EvalSection,
    LabelReport, RunReport, TrainReport, UpdateReport, UpdateSummary, SCHEMA_VERSION,
};
use crate::runtime::{RayonExecutor, WallClock};

/// Runs `$body` with `$exec`/`$clock` bound to the sequential or parallel runtime.
macro_rules! with_runtime {
    ($cfg:expr, |$exec:ident, $clock:ident| $body:expr) => {
        if $cfg.deterministic {
            let $exec = &Sequential;
            let $clock: &dyn Clock = &NullClock;
            $body
        } else {
            let $exec = &RayonExecutor;
            let wall = WallClock::new();
            let $clock: &dyn Clock = &wall;
            $body
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SynthData,
    Train,
    Label,
    Classify,
    Evaluate,
    Update,
    Report,
}

/// Full pipeline order used by `run`.
pub const PIPELINE: [Stage; 8] = [
    Stage::SynthData,
    Stage::Train,
    Stage::Label,
    Stage::Classify,
    Stage::Evaluate,
    Stage::Update,
    Stage::Evaluate,
    Stage::Report,
];

pub fn run_stage(dir: &RunDir, cfg: &RunConfig, stage: Stage) -> Result<()> {
    match stage {
        Stage::SynthData => synth_data(dir, cfg),
        Stage::Train => train(dir, cfg),
        Stage::Label => label(dir, cfg),
        Stage::Classify => classify(dir, cfg),
        Stage::Evaluate => evaluate_stage(dir, cfg),
        Stage::Update => update(dir, cfg),
        Stage::Report => report(dir, cfg).map(|_| ()),
    }
    .with_context(|| format!("stage {}", stage_name(stage)))
}

pub fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::SynthData => "synth-data",
        Stage::Train => "train",
        Stage::Label => "label",
        Stage::Classify => "classify",
        Stage::Evaluate => "evaluate",
        Stage::Update => "update",
        Stage::Report => "report",
    }
}

/// Generation state stored next to `state.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Scope {
    known_classes: Vec<u32>,
}

fn known_classes(dir: &RunDir, version: u32) -> Result<Vec<u32>> {
    let scope: Scope = dir.read_report(&format!("scope_v{version}.json"))?;
    Ok(scope.known_classes)
}

fn node_path(dir: &RunDir, version: u32, node: usize) -> Result<std::path::PathBuf> {
    Ok(dir.data_version(version)?.join(format!("node_{node}.fsd")))
}

fn load_nodes(dir: &RunDir, cfg: &RunConfig, version: u32) -> Result<Vec<FogDataset>> {
    (0..cfg.data.nodes)
        .map(|i| {
            Ok(FogDataset {
                node_id: i as u32,
                samples: read_dataset(&node_path(dir, version, i)?)?,
            })
        })
        .collect()
}

/// Validation (even positions) and test (odd positions) halves of the test file.
fn test_halves(dir: &RunDir) -> Result<(Vec<TrafficSample>, Vec<TrafficSample>)> {
    let all = read_dataset(&dir.data("test.fsd"))?;
    let validation = all.iter().step_by(2).cloned().collect();
    let test = all.iter().skip(1).step_by(2).cloned().collect();
    Ok((validation, test))
}

fn in_scope(samples: &[TrafficSample], known: &[u32]) -> (Vec<TrafficSample>, Vec<TrafficSample>) {
    samples
        .iter()
        .cloned()
        .partition(|s| s.true_class.is_some_and(|c| known.contains(&c)))
}

pub fn synth_data(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let d = &cfg.data;
    let unknown: BTreeSet<u32> = d.unknown_classes.iter().copied().collect();
    let (all, test) = match &d.dataset {
        None => {
            let spec = CorpusSpec::random_in(
                d.num_classes,
                d.dim,
                d.samples_per_class,
                d.sigma,
                d.center_margin,
                cfg.seed,
            )
            .with_unknown(unknown.iter().copied());
            let test_spec = CorpusSpec {
                samples_per_class: d.test_per_class,
                seed: cfg.seed.wrapping_add(1),
                ..spec.clone()
            };
            (synth_corpus(&spec)?, synth_corpus(&test_spec)?)
        }
        Some(path) => {
            // the first `test_per_class` samples of each labeled class form the test file
            let samples = read_dataset(path)?;
            let mut taken = std::collections::BTreeMap::<u32, usize>::new();
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for s in samples {
                match s.true_class {
                    Some(c) if *taken.entry(c).or_default() < d.test_per_class => {
                        *taken.get_mut(&c).expect("inserted") += 1;
                        test.push(s);
                    }
                    _ => train.push(s),
                }
            }
            (train, test)
        }
    };
    ensure!(!all.is_empty(), "no training samples");
    let sample_len = all[0].len();
    let (known, incoming) = split_known_unknown(&all, &unknown);
    let nodes = if d.classes_per_node == 0 {
        partition(&known, d.nodes, cfg.seed)?
    } else {
        partition_by_class(&known, d.nodes, d.classes_per_node, cfg.seed)?
    };
    for ds in &nodes {
        write_dataset(&node_path(dir, 1, ds.node_id as usize)?, &ds.samples)?;
    }
    write_dataset(&dir.data("incoming.fsd"), &incoming)?;
    write_dataset(&dir.data("test.fsd"), &test)?;
    let classes: BTreeSet<u32> = all.iter().chain(&test).filter_map(|s| s.true_class).collect();
    let known_classes: Vec<u32> = classes.iter().copied().filter(|c| !unknown.contains(c)).collect();
    dir.write_report("scope_v1.json", &Scope { known_classes })?;
    dir.write_report(
        "data.json",
        &DataReport {
            sample_len,
            classes: classes.into_iter().collect(),
            unknown_classes: unknown.into_iter().collect(),
            node_samples: nodes.iter().map(FogDataset::len).collect(),
            incoming: incoming.len(),
            validation: test.len().div_ceil(2),
            test: test.len() / 2,
        },
    )
}

fn sample_len(dir: &RunDir) -> Result<usize> {
    let data: DataReport = dir
        .read_report("data.json")
        .context("no data yet (run `synth-data` first)")?;
    Ok(data.sample_len)
}

fn save_gan(dir: &RunDir, version: u32, nets: &GanNetworks, params: &GanParams) -> Result<()> {
    let m = dir.models(version)?;
    write_checkpoint(
        &m.join("generator.ckpt"),
        &params.generator,
        &json!({ "architecture": nets.generator.architecture() }),
    )?;
    for (i, d) in params.discriminators.iter().enumerate() {
        write_checkpoint(
            &m.join(format!("discriminator_{i}.ckpt")),
            d,
            &json!({ "architecture": nets.discriminator.architecture() }),
        )?;
    }
    Ok(())
}

fn load_params(path: &std::path::Path, expected: &fogsynth_core::Architecture) -> Result<ModelParams> {
    let ckpt = read_checkpoint(path)?;
    ensure!(
        ckpt.params.layout() == expected.layout()?.as_slice(),
        "{} does not match the configured architecture",
        path.display()
    );
    Ok(ckpt.params)
}

fn load_gan(dir: &RunDir, version: u32, nets: &GanNetworks) -> Result<GanParams> {
    let m = dir.models(version)?;
    let generator = load_params(&m.join("generator.ckpt"), nets.generator.architecture())?;
    let mut discriminators = Vec::new();
    for i in 0.. {
        let p = m.join(format!("discriminator_{i}.ckpt"));
        if !p.exists() {
            break;
        }
        discriminators.push(load_params(&p, nets.discriminator.architecture())?);
    }
    ensure!(
        !discriminators.is_empty(),
        "no discriminator checkpoints in {}",
        m.display()
    );
    Ok(GanParams {
        generator,
        discriminators,
    })
}

fn save_classifier(dir: &RunDir, version: u32, model: &ClassifierModel) -> Result<()> {
    write_checkpoint(
        &dir.models(version)?.join("classifier.ckpt"),
        &model.params,
        &json!({ "arch": model.arch, "network": model.network, "classes": model.classes }),
    )
}

fn load_classifier(dir: &RunDir, version: u32) -> Result<ClassifierModel> {
    let ckpt = read_checkpoint(&dir.models(version)?.join("classifier.ckpt")).context("run `classify` first")?;
    let field = |k: &str| {
        ckpt.meta
            .get(k)
            .cloned()
            .with_context(|| format!("classifier checkpoint lacks `{k}`"))
    };
    let model = ClassifierModel {
        arch: serde_json::from_value(field("arch")?)?,
        network: serde_json::from_value(field("network")?)?,
        classes: serde_json::from_value(field("classes")?)?,
        params: ckpt.params,
    };
    ensure!(
        model.params.layout() == model.network.layout()?.as_slice(),
        "classifier checkpoint is inconsistent"
    );
    Ok(model)
}

fn write_train_outputs(dir: &RunDir, report: &TrainReport, transport: &InProcessTransport) -> Result<()> {
    let v = report.version;
    dir.write_report(&format!("train_v{v}.json"), report)?;
    fs::write(dir.report_path(&format!("mmd_v{v}.csv")), mmd_csv(&report.mmd_trace()))?;
    fs::write(
        dir.report_path(&format!("envelopes_v{v}.jsonl")),
        envelope_log_jsonl(transport.log())?,
    )?;
    Ok(())
}

fn mmd_probe(dir: &RunDir, cfg: &RunConfig) -> Result<Option<MmdProbe>> {
    if cfg.probe.every == 0 {
        return Ok(None);
    }
    let (validation, _) = test_halves(dir)?;
    let (known, _) = in_scope(&validation, &known_classes(dir, 1)?);
    ensure!(known.len() >= 2, "too few validation samples for the MMD reference");
    let step = (known.len() / cfg.probe.reference).max(1);
    let reference: Vec<TrafficSample> = known.iter().step_by(step).take(cfg.probe.reference).cloned().collect();
    Ok(Some(MmdProbe::new(
        samples_matrix(&reference)?,
        KernelSpec::default(),
        cfg.probe.every,
        cfg.probe.samples,
        cfg.seed,
    )?))
}

pub fn train(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let nets = cfg.networks(sample_len(dir)?)?;
    let datasets = load_nodes(dir, cfg, 1)?;
    let probe = mmd_probe(dir, cfg)?;
    let fed = cfg.federation();
    let protocol = cfg.protocol()?;
    let mut transport = InProcessTransport::with_nodes(cfg.gan.value_width, cfg.data.nodes);
    let out = with_runtime!(cfg, |exec, clock| train_federation(
        protocol,
        &nets,
        &datasets,
        &fed,
        None,
        0,
        &mut transport,
        exec,
        clock,
        probe.as_ref()
    ))?;
    save_gan(dir, 1, &nets, &out.params)?;
    let report = TrainReport::new(
        1,
        protocol.name(),
        cfg.data.nodes,
        cfg.gan.batch,
        out.trace,
        transport.log(),
    );
    write_train_outputs(dir, &report, &transport)?;
    dir.set_state(&RunState {
        version: 1,
        rounds_done: report.rounds.len() as u32,
        alpha: None,
    })
}

pub fn label(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let state = dir.state()?;
    let v = state.version;
    let nets = cfg.networks(sample_len(dir)?)?;
    let gan = load_gan(dir, v, &nets)?;
    let dec = cfg.dec_config();
    let t = synthesize(&nets, &gan.generator, cfg.dec.synth_count, dec.seed)?;
    let sel = with_runtime!(cfg, |exec, _clock| select_k(&t, &dec, exec))?;
    let labels = assign_pseudo_labels(&t, &sel.fit.model)?;
    let samples = t
        .iter_rows()
        .zip(&labels)
        .enumerate()
        .map(|(i, (row, &l))| TrafficSample::new(row.to_vec(), Some(l), i as u64))
        .collect::<fogsynth_core::Result<Vec<_>>>()?;
    write_dataset(&dir.data_version(v)?.join("t_new.csv"), &samples)?;
    let mut counts = vec![0u64; sel.k_star];
    for &l in &labels {
        counts[l as usize] += 1;
    }
    dir.write_report(
        &format!("label_v{v}.json"),
        &LabelReport {
            version: v,
            synth_count: cfg.dec.synth_count,
            cluster: sel.report,
            label_counts: Some(counts),
        },
    )
}

/// Threshold for `model`: fixed from the config or calibrated on validation samples.
fn calibrate(dir: &RunDir, cfg: &RunConfig, version: u32, model: &ClassifierModel) -> Result<CalibrationReport> {
    let (validation, _) = test_halves(dir)?;
    let (known, unseen) = in_scope(&validation, &known_classes(dir, version)?);
    ensure!(!known.is_empty(), "no validation samples of known classes");
    let ck = confidences(model, &samples_matrix(&known)?)?;
    let (alpha, method, roc) = match cfg.update.alpha {
        Some(a) => (a, None, Vec::new()),
        None => {
            let cu = if unseen.is_empty() {
                Vec::new()
            } else {
                confidences(model, &samples_matrix(&unseen)?)?
            };
            let (a, roc) = calibrate_alpha(&ck, &cu, cfg.update.calibration)?;
            (a, Some(cfg.update.calibration), roc)
        }
    };
    Ok(CalibrationReport {
        version,
        alpha,
        method,
        validation_known: known.len(),
        validation_false_unknown: ck.iter().filter(|&&c| c < alpha).count() as f64 / ck.len() as f64,
        roc,
    })
}

pub fn classify(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let mut state = dir.state()?;
    let v = state.version;
    let t_new = read_dataset(&dir.data_version(v)?.join("t_new.csv")).context("run `label` first")?;
    let labels: Vec<u32> = t_new
        .iter()
        .map(|s| s.true_class.context("pseudo-labeled corpus has an unlabeled row"))
        .collect::<Result<_>>()?;
    let model = train_classifier(&samples_matrix(&t_new)?, &labels, &cfg.classifier_config())?;
    save_classifier(dir, v, &model)?;
    let cal = calibrate(dir, cfg, v, &model)?;
    state.alpha = Some(cal.alpha);
    dir.write_report(&format!("calibration_v{v}.json"), &cal)?;
    dir.set_state(&state)
}

pub fn evaluate_stage(dir: &RunDir, _cfg: &RunConfig) -> Result<()> {
    let state = dir.state()?;
    let v = state.version;
    let model = load_classifier(dir, v)?;
    let known = known_classes(dir, v)?;
    let (_, test) = test_halves(dir)?;
    let (seen, unseen) = in_scope(&test, &known);
    ensure!(!seen.is_empty(), "no test samples of known classes");
    let truth: Vec<u32> = seen.iter().filter_map(|s| s.true_class).collect();
    let metrics = evaluate(&model, &samples_matrix(&seen)?, &truth)?;
    let detection = match (state.alpha, unseen.is_empty()) {
        (Some(alpha), false) => {
            let ck = confidences(&model, &samples_matrix(&seen)?)?;
            let cu = confidences(&model, &samples_matrix(&unseen)?)?;
            let below = |c: &[f64]| c.iter().filter(|&&x| x < alpha).count() as f64 / c.len() as f64;
            Some(DetectionReport {
                alpha,
                known: seen.len(),
                unknown: unseen.len(),
                unknown_recall: below(&cu),
                false_unknown_rate: below(&ck),
            })
        }
        _ => None,
    };
    fs::write(
        dir.report_path(&format!("confusion_v{v}.csv")),
        confusion_csv(&metrics.confusion),
    )?;
    dir.write_report(
        &format!("eval_v{v}.json"),
        &EvalSection {
            version: v,
            classes: known,
            metrics,
            detection,
        },
    )
}

pub fn update(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let state = dir.state()?;
    let v = state.version;
    let Some(alpha) = state.alpha else {
        bail!("no threshold yet (run `classify` first)");
    };
    let nets = cfg.networks(sample_len(dir)?)?;
    let incoming = read_dataset(&dir.data("incoming.fsd"))?;
    let observations: Vec<Observation> = incoming
        .iter()
        .enumerate()
        .map(|(i, s)| Observation {
            node_id: (i % cfg.data.nodes) as u32,
            sample: s.clone(),
        })
        .collect();
    let mut pipeline = PipelineState {
        version: v,
        protocol: cfg.protocol()?,
        federation: cfg.federation(),
        dec: cfg.dec_config(),
        classifier_cfg: cfg.classifier_config(),
        policy: cfg.policy(alpha),
        synth_count: cfg.dec.synth_count,
        datasets: load_nodes(dir, cfg, v)?,
        gan: load_gan(dir, v, &nets)?,
        rounds_done: state.rounds_done,
        classifier: load_classifier(dir, v)?,
        history: Vec::new(),
        monitor: Vec::new(),
        nets,
    };
    let mut transport = InProcessTransport::with_nodes(cfg.gan.value_width, cfg.data.nodes);
    let outcome = with_runtime!(cfg, |exec, clock| update_cycle(
        &mut pipeline,
        &observations,
        &mut transport,
        exec,
        clock
    ))?;
    let summary = match outcome {
        UpdateOutcome::NoOp { unknown, needed } => UpdateSummary::NoOp { unknown, needed },
        UpdateOutcome::Updated {
            version,
            unknown,
            k_star,
            trace,
            cluster_report,
        } => {
            save_gan(dir, version, &pipeline.nets, &pipeline.gan)?;
            save_classifier(dir, version, &pipeline.classifier)?;
            for ds in &pipeline.datasets {
                write_dataset(&node_path(dir, version, ds.node_id as usize)?, &ds.samples)?;
            }
            let report = TrainReport::new(
                version,
                pipeline.protocol.name(),
                cfg.data.nodes,
                cfg.gan.batch,
                trace,
                transport.log(),
            );
            write_train_outputs(dir, &report, &transport)?;
            dir.write_report(
                &format!("label_v{version}.json"),
                &LabelReport {
                    version,
                    synth_count: cfg.dec.synth_count,
                    cluster: cluster_report,
                    label_counts: None,
                },
            )?;
            let data: DataReport = dir.read_report("data.json")?;
            dir.write_report(
                &format!("scope_v{version}.json"),
                &Scope {
                    known_classes: data.classes,
                },
            )?;
            let cal = calibrate(dir, cfg, version, &pipeline.classifier)?;
            dir.write_report(&format!("calibration_v{version}.json"), &cal)?;
            dir.set_state(&RunState {
                version,
                rounds_done: pipeline.rounds_done,
                alpha: Some(cal.alpha),
            })?;
            UpdateSummary::Updated {
                version,
                unknown,
                k_star,
            }
        }
    };
    dir.write_report(
        &format!("update_v{v}.json"),
        &UpdateReport {
            from_version: v,
            alpha,
            incoming: observations.len(),
            summary,
            monitor: pipeline.monitor,
        },
    )
}

fn optional<T: serde::de::DeserializeOwned>(dir: &RunDir, file: &str) -> Result<Option<T>> {
    if dir.report_path(file).exists() {
        dir.read_report(file).map(Some)
    } else {
        Ok(None)
    }
}

/// Assembles `report.json` from the stage reports present.
pub fn report(dir: &RunDir, cfg: &RunConfig) -> Result<RunReport> {
    let last = dir.state().map(|s| s.version).unwrap_or(0);
    let mut r = RunReport {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        config: cfg.clone(),
        data: optional(dir, "data.json")?,
        train: Vec::new(),
        label: Vec::new(),
        calibration: Vec::new(),
        eval: Vec::new(),
        update: Vec::new(),
    };
    for v in 1..=last {
        r.train.extend(optional(dir, &format!("train_v{v}.json"))?);
        r.label.extend(optional(dir, &format!("label_v{v}.json"))?);
        r.calibration.extend(optional(dir, &format!("calibration_v{v}.json"))?);
        r.eval.extend(optional(dir, &format!("eval_v{v}.json"))?);
        r.update.extend(optional(dir, &format!("update_v{v}.json"))?);
    }
    crate::artifacts::write_json(&dir.root().join("report.json"), &r)?;
    Ok(r)
}

/// Runs every stage of [`PIPELINE`] in order.
pub fn run_all(dir: &RunDir, cfg: &RunConfig) -> Result<RunReport> {
    for stage in PIPELINE {
        if stage == Stage::Report {
            break;
        }
        run_stage(dir, cfg, stage)?;
    }
    report(dir, cfg)
}
