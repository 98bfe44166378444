//! In-process message transport between the coordinator and fog nodes.
//!
//! Every envelope is sized by its wire encoding: a 24-byte little-endian
//! header followed by `rows * cols` fixed-width values. The transport keeps
//! an append-only log of envelope records from which the overhead report is
//! replayed, and it refuses to carry real-data samples.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use crate::nn::ModelParams;
use crate::tensor::Matrix;
use crate::{Error, Result};

pub const HEADER_BYTES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Endpoint {
    Coordinator,
    Node(u32),
}

impl Endpoint {
    /// Wire id: 0 for the coordinator, `n + 1` for node `n`.
    pub fn wire_id(self) -> u32 {
        match self {
            Endpoint::Coordinator => 0,
            Endpoint::Node(n) => n + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PayloadKind {
    Samples,
    Scalar,
    ParamVector,
    SampleGradient,
}

/// Where sample values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Provenance {
    /// Generator output.
    Synthetic,
    /// Rows of a fog dataset.
    Real,
    /// Losses, gradients and parameters.
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Samples { data: Matrix, provenance: Provenance },
    Scalar(f64),
    Params(ModelParams),
    SampleGradient(Matrix),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Samples { .. } => PayloadKind::Samples,
            Payload::Scalar(_) => PayloadKind::Scalar,
            Payload::Params(_) => PayloadKind::ParamVector,
            Payload::SampleGradient(_) => PayloadKind::SampleGradient,
        }
    }

    pub fn provenance(&self) -> Provenance {
        match self {
            Payload::Samples { provenance, .. } => *provenance,
            _ => Provenance::Derived,
        }
    }

    /// `(rows, cols)` of the value block.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Payload::Samples { data, .. } | Payload::SampleGradient(data) => (data.rows(), data.cols()),
            Payload::Scalar(_) => (1, 1),
            Payload::Params(p) => (1, p.len()),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Payload::Samples { data, .. } | Payload::SampleGradient(data) => data.as_slice(),
            Payload::Scalar(v) => core::slice::from_ref(v),
            Payload::Params(p) => p.values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub from: Endpoint,
    pub to: Endpoint,
    pub round: u32,
    pub payload: Payload,
}

/// Width of one encoded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ValueWidth {
    #[default]
    F32,
    F64,
}

impl ValueWidth {
    pub const fn bytes(self) -> usize {
        match self {
            ValueWidth::F32 => 4,
            ValueWidth::F64 => 8,
        }
    }
}

fn kind_code(kind: PayloadKind) -> u8 {
    match kind {
        PayloadKind::Samples => 1,
        PayloadKind::Scalar => 2,
        PayloadKind::ParamVector => 3,
        PayloadKind::SampleGradient => 4,
    }
}

fn provenance_code(p: Provenance) -> u8 {
    match p {
        Provenance::Synthetic => 1,
        Provenance::Real => 2,
        Provenance::Derived => 3,
    }
}

impl Envelope {
    pub fn direction(&self) -> Result<Direction> {
        match (self.from, self.to) {
            (Endpoint::Node(_), Endpoint::Coordinator) => Ok(Direction::Up),
            (Endpoint::Coordinator, Endpoint::Node(_)) => Ok(Direction::Down),
            (from, to) => Err(Error::InvalidRoute { from, to }),
        }
    }

    pub fn encoded_len(&self, width: ValueWidth) -> usize {
        let (r, c) = self.payload.dims();
        HEADER_BYTES + r * c * width.bytes()
    }

    /// Wire encoding. Header layout, all little-endian:
    /// kind u8, direction u8, value width u8, provenance u8, round u32,
    /// sender u32, receiver u32, rows u32, cols u32.
    pub fn encode(&self, width: ValueWidth) -> Result<Vec<u8>> {
        let direction = self.direction()?;
        let (rows, cols) = self.payload.dims();
        let mut out = Vec::with_capacity(self.encoded_len(width));
        out.push(kind_code(self.payload.kind()));
        out.push(match direction {
            Direction::Up => 1,
            Direction::Down => 2,
        });
        out.push(width.bytes() as u8);
        out.push(provenance_code(self.payload.provenance()));
        for field in [
            self.round,
            self.from.wire_id(),
            self.to.wire_id(),
            rows as u32,
            cols as u32,
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        debug_assert_eq!(out.len(), HEADER_BYTES);
        for &v in self.payload.values() {
            match width {
                ValueWidth::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                ValueWidth::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        Ok(out)
    }
}

/// Log entry: everything about an envelope except its values.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnvelopeRecord {
    pub seq: u64,
    pub round: u32,
    pub from: Endpoint,
    pub to: Endpoint,
    pub direction: Direction,
    pub kind: PayloadKind,
    pub provenance: Provenance,
    pub rows: u32,
    pub cols: u32,
    pub byte_size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub seq: u64,
    pub byte_size: u64,
}

/// Makes every send touching `endpoint` fail, in `round` or in every round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureRule {
    pub endpoint: Endpoint,
    pub round: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundBytes {
    pub round: u32,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub envelopes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OverheadReport {
    pub rounds: Vec<RoundBytes>,
    pub total_up: u64,
    pub total_down: u64,
}

impl OverheadReport {
    pub fn round(&self, round: u32) -> Option<&RoundBytes> {
        self.rounds.iter().find(|r| r.round == round)
    }

    pub fn total(&self) -> u64 {
        self.total_up + self.total_down
    }
}

/// Replays an envelope log into per-round, per-direction totals.
pub fn overhead_report(log: &[EnvelopeRecord]) -> OverheadReport {
    let mut per_round: BTreeMap<u32, RoundBytes> = BTreeMap::new();
    let mut report = OverheadReport::default();
    for rec in log {
        let entry = per_round.entry(rec.round).or_insert(RoundBytes {
            round: rec.round,
            ..RoundBytes::default()
        });
        entry.envelopes += 1;
        match rec.direction {
            Direction::Up => {
                entry.bytes_up += rec.byte_size;
                report.total_up += rec.byte_size;
            }
            Direction::Down => {
                entry.bytes_down += rec.byte_size;
                report.total_down += rec.byte_size;
            }
        }
    }
    report.rounds = per_round.into_values().collect();
    report
}

pub trait Transport {
    fn send(&mut self, envelope: Envelope) -> Result<Receipt>;

    /// Next envelope on the `from -> to` channel, FIFO.
    fn recv(&mut self, to: Endpoint, from: Endpoint) -> Option<Envelope>;

    fn records(&self) -> Vec<EnvelopeRecord>;

    /// Running `(up, down)` byte counters.
    fn totals(&self) -> (u64, u64);

    fn overhead_report(&self) -> OverheadReport {
        overhead_report(&self.records())
    }
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send(&mut self, envelope: Envelope) -> Result<Receipt> {
        (**self).send(envelope)
    }

    fn recv(&mut self, to: Endpoint, from: Endpoint) -> Option<Envelope> {
        (**self).recv(to, from)
    }

    fn records(&self) -> Vec<EnvelopeRecord> {
        (**self).records()
    }

    fn totals(&self) -> (u64, u64) {
        (**self).totals()
    }
}

/// Single-threaded mailbox transport with byte accounting.
#[derive(Debug, Clone, Default)]
pub struct InProcessTransport {
    width: ValueWidth,
    endpoints: BTreeSet<Endpoint>,
    queues: BTreeMap<(Endpoint, Endpoint), VecDeque<Envelope>>,
    last_round: BTreeMap<(Endpoint, Endpoint), u32>,
    log: Vec<EnvelopeRecord>,
    failures: Vec<FailureRule>,
    bytes_up: u64,
    bytes_down: u64,
}

impl InProcessTransport {
    pub fn new(width: ValueWidth) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }

    /// Coordinator plus nodes `0..nodes`.
    pub fn with_nodes(width: ValueWidth, nodes: usize) -> Self {
        let mut t = Self::new(width);
        t.register(Endpoint::Coordinator);
        for n in 0..nodes {
            t.register(Endpoint::Node(n as u32));
        }
        t
    }

    pub fn register(&mut self, endpoint: Endpoint) {
        self.endpoints.insert(endpoint);
    }

    pub fn inject_failure(&mut self, rule: FailureRule) {
        self.failures.push(rule);
    }

    pub fn clear_failures(&mut self) {
        self.failures.clear();
    }

    pub fn width(&self) -> ValueWidth {
        self.width
    }

    pub fn log(&self) -> &[EnvelopeRecord] {
        &self.log
    }

    /// Drops undelivered envelopes, e.g. after an aborted round.
    pub fn drain_queues(&mut self) {
        self.queues.clear();
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, envelope: Envelope) -> Result<Receipt> {
        for ep in [envelope.from, envelope.to] {
            if !self.endpoints.contains(&ep) {
                return Err(Error::UnknownEndpoint(ep));
            }
        }
        let direction = envelope.direction()?;
        if let Some(rule) = self.failures.iter().find(|r| {
            (r.endpoint == envelope.from || r.endpoint == envelope.to)
                && r.round.is_none_or(|round| round == envelope.round)
        }) {
            return Err(Error::InjectedFailure {
                endpoint: rule.endpoint,
                round: envelope.round,
            });
        }
        if envelope.payload.provenance() == Provenance::Real {
            return Err(Error::PrivacyViolation(envelope.from));
        }
        let channel = (envelope.from, envelope.to);
        if let Some(&last) = self.last_round.get(&channel) {
            if envelope.round < last {
                return Err(Error::RoundRegression {
                    from: envelope.from,
                    to: envelope.to,
                    round: envelope.round,
                    last,
                });
            }
        }
        let (rows, cols) = envelope.payload.dims();
        let byte_size = envelope.encoded_len(self.width) as u64;
        let seq = self.log.len() as u64;
        self.log.push(EnvelopeRecord {
            seq,
            round: envelope.round,
            from: envelope.from,
            to: envelope.to,
            direction,
            kind: envelope.payload.kind(),
            provenance: envelope.payload.provenance(),
            rows: rows as u32,
            cols: cols as u32,
            byte_size,
        });
        match direction {
            Direction::Up => self.bytes_up += byte_size,
            Direction::Down => self.bytes_down += byte_size,
        }
        self.last_round.insert(channel, envelope.round);
        self.queues.entry(channel).or_default().push_back(envelope);
        Ok(Receipt { seq, byte_size })
    }

    fn recv(&mut self, to: Endpoint, from: Endpoint) -> Option<Envelope> {
        self.queues.get_mut(&(from, to))?.pop_front()
    }

    fn records(&self) -> Vec<EnvelopeRecord> {
        self.log.clone()
    }

    fn totals(&self) -> (u64, u64) {
        (self.bytes_up, self.bytes_down)
    }
}

/// Hyperparameters shared by both federated GAN protocols.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FederationConfig {
    /// Global rounds `I`.
    pub rounds: u32,
    /// Local epochs `E`.
    pub local_epochs: u32,
    /// Batch size `b`.
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub optimizer: crate::optim::OptimizerKind,
    pub gen_loss: crate::gan::GeneratorLoss,
    /// FGAN-II only: weight node parameters by shard size instead of `1/N`.
    pub weighted_average: bool,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            local_epochs: 1,
            batch: 64,
            lr_g: 0.05,
            lr_d: 0.05,
            optimizer: crate::optim::OptimizerKind::Sgd,
            gen_loss: crate::gan::GeneratorLoss::Saturating,
            weighted_average: false,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(key: &'static str, reason: &str) -> Error {
            Error::InvalidConfig {
                key,
                reason: reason.into(),
            }
        }
        if self.local_epochs == 0 {
            return Err(bad("E", "at least one local epoch is required"));
        }
        if self.batch == 0 {
            return Err(bad("b", "batch size must be positive"));
        }
        if !(self.lr_g >= 0.0 && self.lr_g.is_finite()) {
            return Err(bad("lr_g", "must be a non-negative finite number"));
        }
        if !(self.lr_d >= 0.0 && self.lr_d.is_finite()) {
            return Err(bad("lr_d", "must be a non-negative finite number"));
        }
        Ok(())
    }
}

/// Empties every coordinator/node channel, used after an aborted round.
pub(crate) fn drain_channels(transport: &mut dyn Transport, nodes: usize) {
    for n in 0..nodes as u32 {
        while transport.recv(Endpoint::Node(n), Endpoint::Coordinator).is_some() {}
        while transport.recv(Endpoint::Coordinator, Endpoint::Node(n)).is_some() {}
    }
}
