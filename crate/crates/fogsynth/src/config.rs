//! Run configuration: one TOML file per run, with dotted `--set` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fogsynth_core::classifier::{ClassifierArch, ClassifierConfig};
use fogsynth_core::dec::{BicRule, DecConfig};
use fogsynth_core::federation::{FederationConfig, ValueWidth};
use fogsynth_core::gan::{GanNetworks, GeneratorLoss};
use fogsynth_core::optim::OptimizerKind;
use fogsynth_core::pipeline::Protocol;
use fogsynth_core::update::{Calibration, UpdatePolicy};
use fogsynth_core::{Activation, Architecture};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Run directory name under the artifact root.
    pub name: String,
    /// Master seed; every stage derives its streams from it.
    pub seed: u64,
    /// Sequential node updates and a zero clock, so reports are byte-identical.
    pub deterministic: bool,
    pub data: DataConfig,
    pub gan: GanConfig,
    pub probe: ProbeConfig,
    pub dec: DecSection,
    pub classifier: ClassifierSection,
    pub update: UpdateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seed: 1,
            deterministic: true,
            data: DataConfig::default(),
            gan: GanConfig::default(),
            probe: ProbeConfig::default(),
            dec: DecSection::default(),
            classifier: ClassifierSection::default(),
            update: UpdateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Read samples from this dataset file instead of generating a corpus.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub sigma: f64,
    /// Class centers are drawn from `[center_margin, 1 - center_margin]^dim`.
    pub center_margin: f64,
    /// Held out of the fog datasets and replayed as incoming traffic.
    pub unknown_classes: Vec<u32>,
    #[serde(alias = "N")]
    pub nodes: usize,
    /// Restrict each node to this many classes; zero means uniform allocation.
    pub classes_per_node: usize,
    /// Per class, for the test and validation sets.
    pub test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            num_classes: 5,
            dim: 64,
            samples_per_class: 400,
            sigma: 0.03,
            center_margin: 0.05,
            unknown_classes: vec![4],
            nodes: 4,
            classes_per_node: 0,
            test_per_class: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub protocol: String,
    #[serde(alias = "I")]
    pub rounds: u32,
    #[serde(alias = "E")]
    pub local_epochs: u32,
    #[serde(alias = "b")]
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub optimizer: OptimizerName,
    pub gen_loss: GeneratorLoss,
    pub weighted_average: bool,
    pub value_width: ValueWidth,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            protocol: "fgan1".into(),
            rounds: 200,
            local_epochs: 1,
            batch: 64,
            lr_g: 0.002,
            lr_d: 0.0005,
            noise_dim: 16,
            generator_hidden: vec![128, 256],
            discriminator_hidden: vec![256, 128],
            optimizer: OptimizerName::Adam,
            gen_loss: GeneratorLoss::NonSaturating,
            weighted_average: false,
            value_width: ValueWidth::F32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Measure MMD after every `every` rounds; zero disables the probe.
    pub every: u32,
    pub samples: usize,
    /// Held-out real samples used as the MMD reference.
    pub reference: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            every: 20,
            samples: 256,
            reference: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecSection {
    /// Size of the synthesized corpus that gets pseudo-labeled.
    pub synth_count: usize,
    pub k_max: usize,
    pub delta: f64,
    pub max_iter: u32,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub pretrain_epochs: u32,
    pub pretrain_lr: f64,
    pub cluster_lr: f64,
    pub batch: usize,
    pub kmeans_restarts: u32,
    pub bic_rule: BicRule,
}

impl Default for DecSection {
    fn default() -> Self {
        let d = DecConfig::default();
        Self {
            synth_count: 600,
            k_max: 8,
            delta: d.delta,
            max_iter: d.max_iter,
            latent_dim: d.latent_dim,
            hidden: d.hidden,
            pretrain_epochs: 30,
            pretrain_lr: d.pretrain_lr,
            cluster_lr: d.cluster_lr,
            batch: d.batch,
            kmeans_restarts: d.kmeans_restarts,
            bic_rule: d.bic_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub arch: ClassifierArch,
    pub epochs: u32,
    pub lr: f64,
    pub batch: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            arch: ClassifierArch::Mlp { hidden: vec![64] },
            epochs: 20,
            lr: 1e-3,
            batch: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateSection {
    /// Fixed threshold; when absent it is calibrated on the validation split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub calibration: Calibration,
    pub batch_size: usize,
    pub min_unknown: usize,
    pub warm_start: bool,
}

impl Default for UpdateSection {
    fn default() -> Self {
        let p = UpdatePolicy::default();
        Self {
            alpha: None,
            calibration: Calibration::KnownQuantile { max_false_unknown: 0.1 },
            batch_size: 100,
            min_unknown: 20,
            warm_start: p.warm_start,
        }
    }
}

fn invalid(key: &str, reason: impl std::fmt::Display) -> anyhow::Error {
    anyhow::anyhow!("invalid config key `{key}`: {reason}")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("parsing run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// Reads `path` and applies `key=value` overrides before validation.
    pub fn load_with(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse_with(&text, overrides).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).context("parsing run config")?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc).try_into().context("parsing run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn protocol(&self) -> Result<Protocol> {
        self.gan.protocol.parse().map_err(|e| invalid("gan.protocol", e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(invalid("name", "must be a plain, non-empty directory name"));
        }
        self.protocol()?;
        let d = &self.data;
        if d.nodes == 0 {
            return Err(invalid("data.nodes", "must be positive"));
        }
        if d.dataset.is_none() {
            if d.num_classes == 0 || d.dim == 0 || d.samples_per_class == 0 {
                return Err(invalid(
                    "data",
                    "num_classes, dim and samples_per_class must be positive",
                ));
            }
            if !(0.0..0.5).contains(&d.center_margin) {
                return Err(invalid("data.center_margin", "must lie in [0, 0.5)"));
            }
            if !(d.sigma >= 0.0 && d.sigma.is_finite()) {
                return Err(invalid("data.sigma", "must be a non-negative finite number"));
            }
            if let Some(c) = d.unknown_classes.iter().find(|&&c| c as usize >= d.num_classes) {
                return Err(invalid("data.unknown_classes", format!("class {c} is out of range")));
            }
            if d.unknown_classes.len() >= d.num_classes {
                return Err(invalid("data.unknown_classes", "at least one class must stay known"));
            }
        }
        if d.test_per_class < 2 {
            return Err(invalid(
                "data.test_per_class",
                "needs at least 2 (validation and test halves)",
            ));
        }
        self.federation().validate().map_err(|e| invalid("gan", e))?;
        if self.gan.noise_dim == 0 {
            return Err(invalid("gan.noise_dim", "must be positive"));
        }
        if self.probe.every > 0 && (self.probe.samples == 0 || self.probe.reference < 2) {
            return Err(invalid("probe", "samples must be positive and reference at least 2"));
        }
        self.dec_config().validate().map_err(|e| invalid("dec", e))?;
        if self.dec.synth_count < self.dec.k_max {
            return Err(invalid("dec.synth_count", "must be at least k_max"));
        }
        let c = &self.classifier;
        if c.epochs == 0 || c.batch == 0 || !(c.lr > 0.0 && c.lr.is_finite()) {
            return Err(invalid("classifier", "epochs, batch and lr must be positive"));
        }
        if let Some(a) = self.update.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(invalid("update.alpha", "must lie in (0, 1)"));
            }
        }
        if let Calibration::KnownQuantile { max_false_unknown } = self.update.calibration {
            if !(0.0..1.0).contains(&max_false_unknown) {
                return Err(invalid("update.calibration.max_false_unknown", "must lie in [0, 1)"));
            }
        }
        self.policy(0.5).validate().map_err(|e| invalid("update", e))?;
        Ok(())
    }

    pub fn federation(&self) -> FederationConfig {
        let g = &self.gan;
        FederationConfig {
            rounds: g.rounds,
            local_epochs: g.local_epochs,
            batch: g.batch,
            lr_g: g.lr_g,
            lr_d: g.lr_d,
            optimizer: match g.optimizer {
                OptimizerName::Sgd => OptimizerKind::Sgd,
                OptimizerName::Adam => OptimizerKind::adam(),
            },
            gen_loss: g.gen_loss,
            weighted_average: g.weighted_average,
            seed: self.seed,
        }
    }

    pub fn networks(&self, sample_len: usize) -> Result<GanNetworks> {
        let g = &self.gan;
        let gen = Architecture::mlp(
            g.noise_dim,
            &g.generator_hidden,
            Activation::LeakyRelu,
            sample_len,
            Activation::Sigmoid,
        );
        let disc = Architecture::mlp(
            sample_len,
            &g.discriminator_hidden,
            Activation::LeakyRelu,
            1,
            Activation::Sigmoid,
        );
        Ok(GanNetworks::new(gen, disc)?)
    }

    pub fn dec_config(&self) -> DecConfig {
        let d = &self.dec;
        DecConfig {
            k_max: d.k_max,
            delta: d.delta,
            max_iter: d.max_iter,
            latent_dim: d.latent_dim,
            hidden: d.hidden.clone(),
            pretrain_epochs: d.pretrain_epochs,
            pretrain_lr: d.pretrain_lr,
            cluster_lr: d.cluster_lr,
            batch: d.batch,
            kmeans_restarts: d.kmeans_restarts,
            bic_rule: d.bic_rule,
            seed: self.seed,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let c = &self.classifier;
        ClassifierConfig {
            arch: c.arch.clone(),
            epochs: c.epochs,
            lr: c.lr,
            batch: c.batch,
            seed: self.seed,
        }
    }

    pub fn policy(&self, alpha: f64) -> UpdatePolicy {
        UpdatePolicy {
            alpha,
            batch_size: self.update.batch_size,
            min_unknown: self.update.min_unknown,
            warm_start: self.update.warm_start,
        }
    }
}

/// Sets a dotted key (`gan.rounds=50`). The value is read as a TOML literal
/// and falls back to a plain string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override `{assignment}` must look like key=value");
    };
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let value = parse_literal(raw.trim());
    let (last, path) = parts.split_last().expect("non-empty");
    let mut table = doc;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override key `{key}`: `{p}` is not a table"),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn short_key_aliases_are_accepted() {
        let cfg = RunConfig::from_toml("[gan]\nI = 7\nE = 2\nb = 16\n[data]\nN = 3\n").unwrap();
        assert_eq!(
            (cfg.gan.rounds, cfg.gan.local_epochs, cfg.gan.batch, cfg.data.nodes),
            (7, 2, 16, 3)
        );
    }

    #[test]
    fn errors_name_the_offending_key() {
        let err = format!(
            "{:#}",
            RunConfig::from_toml("[gan]\nprotocol = \"fgan3\"\n").unwrap_err()
        );
        assert!(err.contains("gan.protocol") && err.contains("fgan3"), "{err}");
        let err = format!("{:#}", RunConfig::from_toml("[gan]\nE = 0\n").unwrap_err());
        assert!(err.contains("`E`"), "{err}");
        let err = format!("{:#}", RunConfig::from_toml("[gan]\nrounds_typo = 3\n").unwrap_err());
        assert!(err.contains("rounds_typo"), "{err}");
        let err = format!("{:#}", RunConfig::from_toml("[update]\nalpha = 1.5\n").unwrap_err());
        assert!(err.contains("update.alpha"), "{err}");
    }

    #[test]
    fn overrides_win_and_parse_literals() {
        let cfg = RunConfig::parse_with(
            "[gan]\nrounds = 5\n",
            &[
                "gan.rounds=9".into(),
                "gan.protocol=fgan2".into(),
                "data.unknown_classes=[1, 2]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.gan.rounds, 9);
        assert_eq!(cfg.protocol().unwrap(), Protocol::Fgan2);
        assert_eq!(cfg.data.unknown_classes, vec![1, 2]);
        assert!(RunConfig::parse_with("", &["gan.rounds".into()]).is_err());
        assert!(RunConfig::parse_with("", &["seed.x=1".into()]).is_err());
    }
}
