//! Source, Alice, Bob and a referee as isolated state machines exchanging
//! messages over one-way channels, one time slot after another.
//!
//! Channels are declared per mode and checked on every send. In strict mode a
//! station learns nothing but the particle it receives, so its outcome can
//! only depend on its own coin toss and the hidden variable. Conspiratorial
//! mode adds station-to-source channels and lets the source pick the hidden
//! variable from the post-selected law.

mod message;
mod validate;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use message::{Message, MessageKind, MessageLog, NodeId};
pub use validate::{validate_log, validate_slot, ScheduleVerdict, Violation, ViolationRule};

use crate::error::{Error, Result};
use crate::models::{pearle_source, HiddenVariable, LhvModel, PearleModel};
use crate::rng::{StreamFactory, StreamRole, Substream};
use crate::types::{pair_cell, Direction, KeySpace, Outcome, SettingIndex, Side, Tally};

/// Rejection-sampling attempts allowed per slot in conspiratorial mode.
pub const DEFAULT_ATTEMPT_CAP: u64 = 1_000_000;

/// Events a single slot may generate before the run is aborted.
const MAX_EVENTS_PER_SLOT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarnessMode {
    Strict,
    Conspiratorial,
}

impl HarnessMode {
    fn channels(self) -> &'static [(NodeId, NodeId)] {
        use NodeId::*;
        match self {
            HarnessMode::Strict => &[(Source, Alice), (Source, Bob), (Alice, Referee), (Bob, Referee)],
            HarnessMode::Conspiratorial => &[
                (Source, Alice),
                (Source, Bob),
                (Alice, Referee),
                (Bob, Referee),
                (Alice, Source),
                (Bob, Source),
            ],
        }
    }
}

/// The two directions available to each station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationSettings {
    pub alice: [Direction; 2],
    pub bob: [Direction; 2],
}

impl StationSettings {
    pub fn planar(angles: [f64; 4]) -> Self {
        StationSettings {
            alice: [Direction::planar(angles[0]), Direction::planar(angles[1])],
            bob: [Direction::planar(angles[2]), Direction::planar(angles[3])],
        }
    }

    /// `a = 0, a′ = π/2, b = π/4, b′ = 3π/4`.
    pub fn optimal() -> Self {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        StationSettings::planar([0.0, FRAC_PI_2, FRAC_PI_4, 3.0 * FRAC_PI_4])
    }

    fn side(&self, side: Side) -> [Direction; 2] {
        match side {
            Side::Alice => self.alice,
            Side::Bob => self.bob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HarnessOptions {
    /// Keep every event in the returned log.
    pub keep_log: bool,
    pub attempt_cap: u64,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions {
            keep_log: true,
            attempt_cap: DEFAULT_ATTEMPT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessRun {
    pub mode: HarnessMode,
    pub tally: Tally,
    pub log: MessageLog,
    /// Records aggregated by the referee; one per slot.
    pub records: u64,
    /// Rejection-sampling attempts used by the source (conspiratorial mode).
    pub source_attempts: u64,
}

#[derive(Debug, Clone, Copy)]
enum Payload {
    Particle(HiddenVariable),
    Setting(SettingIndex),
    Commit(SettingIndex, Outcome),
}

#[derive(Debug, Clone, Copy)]
struct Envelope {
    msg: Message,
    payload: Payload,
}

/// What a node sees while handling an event.
struct Ctx<'a> {
    me: NodeId,
    slot: u64,
    now: u64,
    mode: HarnessMode,
    queue: &'a mut BinaryHeap<Reverse<(u64, u64, QueuedEnvelope)>>,
    seq: &'a mut u64,
    log: &'a mut Vec<Message>,
}

/// Heap entries compare by `(deliver time, sequence)` only.
#[derive(Debug, Clone, Copy)]
struct QueuedEnvelope(Envelope);

impl PartialEq for QueuedEnvelope {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl Eq for QueuedEnvelope {}
impl PartialOrd for QueuedEnvelope {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEnvelope {
    fn cmp(&self, _: &Self) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

impl Ctx<'_> {
    fn message(&self, to: NodeId, kind: MessageKind) -> Message {
        Message {
            slot: self.slot,
            from: self.me,
            to,
            kind,
            t: self.now,
        }
    }

    fn send(&mut self, to: NodeId, kind: MessageKind, payload: Payload) -> Result<()> {
        let msg = self.message(to, kind);
        if !self.mode.channels().contains(&(self.me, to)) {
            return Err(Error::ProtocolFault {
                slot: self.slot,
                reason: format!("no channel {:?} -> {:?} in {:?} mode", self.me, to, self.mode),
                message: Some(msg),
            });
        }
        self.log.push(msg);
        *self.seq += 1;
        self.queue.push(Reverse((
            self.now + 1,
            *self.seq,
            QueuedEnvelope(Envelope { msg, payload }),
        )));
        Ok(())
    }

    fn local(&mut self, kind: MessageKind) {
        let msg = self.message(self.me, kind);
        self.log.push(msg);
    }
}

trait Node {
    fn on_start(&mut self, _ctx: &mut Ctx<'_>) -> Result<()> {
        Ok(())
    }

    fn on_message(&mut self, env: &Envelope, ctx: &mut Ctx<'_>) -> Result<()>;
}

fn unexpected(env: &Envelope, reason: &str) -> Error {
    Error::ProtocolFault {
        slot: env.msg.slot,
        reason: reason.to_string(),
        message: Some(env.msg),
    }
}

enum SourceKind<'m> {
    /// Emits `λ` from the model's own law before anything else happens.
    Strict(&'m dyn LhvModel),
    /// Waits for both settings, then samples `λ` conditional on detection.
    Conspiratorial {
        model: &'m PearleModel,
        settings: StationSettings,
        cap: u64,
    },
}

struct SourceNode<'m> {
    kind: SourceKind<'m>,
    stream: Option<Substream>,
    reports: [Option<SettingIndex>; 2],
    attempts: u64,
}

impl SourceNode<'_> {
    fn emit(&mut self, lambda: HiddenVariable, ctx: &mut Ctx<'_>) -> Result<()> {
        ctx.send(NodeId::Alice, MessageKind::Particle, Payload::Particle(lambda))?;
        ctx.send(NodeId::Bob, MessageKind::Particle, Payload::Particle(lambda))
    }
}

impl Node for SourceNode<'_> {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) -> Result<()> {
        if let SourceKind::Strict(model) = self.kind {
            let lambda = model.source_sample(self.stream.as_mut().expect("slot started"));
            self.emit(lambda, ctx)?;
        }
        Ok(())
    }

    fn on_message(&mut self, env: &Envelope, ctx: &mut Ctx<'_>) -> Result<()> {
        let SourceKind::Conspiratorial { model, settings, cap } = self.kind else {
            return Err(unexpected(env, "strict source received a message"));
        };
        let (Payload::Setting(index), MessageKind::SettingReport) = (env.payload, env.msg.kind) else {
            return Err(unexpected(env, "source expects setting reports"));
        };
        match env.msg.from {
            NodeId::Alice => self.reports[0] = Some(index),
            NodeId::Bob => self.reports[1] = Some(index),
            _ => return Err(unexpected(env, "setting report from a non-station")),
        }
        let [Some(i), Some(j)] = self.reports else {
            return Ok(());
        };
        let a = settings.alice[i.offset()];
        let b = settings.bob[j.offset()];
        let stream = self.stream.as_mut().expect("slot started");
        for _ in 0..cap {
            self.attempts += 1;
            let lambda = pearle_source(stream);
            if model.detects(&a, &lambda)? && model.detects(&b, &lambda)? {
                return self.emit(lambda, ctx);
            }
        }
        Err(Error::ProtocolFault {
            slot: ctx.slot,
            reason: format!("source rejected {cap} candidates without a detected pair"),
            message: Some(env.msg),
        })
    }
}

struct StationNode<'m> {
    side: Side,
    directions: [Direction; 2],
    model: &'m dyn LhvModel,
    coin: Option<Substream>,
    setting: Option<SettingIndex>,
    report_setting: bool,
}

impl StationNode<'_> {
    fn id(&self) -> NodeId {
        match self.side {
            Side::Alice => NodeId::Alice,
            Side::Bob => NodeId::Bob,
        }
    }

    fn draw(&mut self, ctx: &mut Ctx<'_>) -> SettingIndex {
        let index = SettingIndex::from_coin(self.coin.as_mut().expect("slot started").gen());
        self.setting = Some(index);
        ctx.local(MessageKind::SettingDrawLocal);
        index
    }
}

impl Node for StationNode<'_> {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) -> Result<()> {
        if self.report_setting {
            let index = self.draw(ctx);
            ctx.send(NodeId::Source, MessageKind::SettingReport, Payload::Setting(index))?;
        }
        Ok(())
    }

    fn on_message(&mut self, env: &Envelope, ctx: &mut Ctx<'_>) -> Result<()> {
        let Payload::Particle(lambda) = env.payload else {
            return Err(unexpected(env, "stations only accept particles"));
        };
        let index = match self.setting {
            Some(i) => i,
            None => self.draw(ctx),
        };
        let outcome = self
            .model
            .station(self.side, &self.directions[index.offset()], &lambda)?;
        if self.report_setting && !outcome.is_detected() {
            return Err(unexpected(
                env,
                "conspiratorial source emitted an undetectable particle",
            ));
        }
        debug_assert_eq!(ctx.me, self.id());
        ctx.send(
            NodeId::Referee,
            MessageKind::OutcomeCommit,
            Payload::Commit(index, outcome),
        )
    }
}

struct RefereeNode {
    commits: [Option<(SettingIndex, Outcome)>; 2],
    tally: Tally,
    records: u64,
    recorded_this_slot: bool,
}

impl Node for RefereeNode {
    fn on_message(&mut self, env: &Envelope, ctx: &mut Ctx<'_>) -> Result<()> {
        let Payload::Commit(index, outcome) = env.payload else {
            return Err(unexpected(env, "referee only accepts outcome commits"));
        };
        let k = match env.msg.from {
            NodeId::Alice => 0,
            NodeId::Bob => 1,
            _ => return Err(unexpected(env, "commit from a non-station")),
        };
        if self.commits[k].replace((index, outcome)).is_some() {
            return Err(unexpected(env, "duplicate outcome commit"));
        }
        if let [Some((i, x)), Some((j, y))] = self.commits {
            ctx.local(MessageKind::Record);
            self.tally.record(pair_cell(i, j), x, y);
            self.records += 1;
            self.recorded_this_slot = true;
        }
        Ok(())
    }
}

struct Network<'m> {
    mode: HarnessMode,
    source: SourceNode<'m>,
    alice: StationNode<'m>,
    bob: StationNode<'m>,
    referee: RefereeNode,
}

impl Network<'_> {
    fn node(&mut self, id: NodeId) -> &mut dyn Node {
        match id {
            NodeId::Source => &mut self.source,
            NodeId::Alice => &mut self.alice,
            NodeId::Bob => &mut self.bob,
            NodeId::Referee => &mut self.referee,
        }
    }

    fn begin_slot(&mut self, slot: u64, streams: &StreamFactory) {
        self.source.stream = Some(streams.stream(slot, StreamRole::Source));
        self.source.reports = [None, None];
        self.alice.coin = Some(streams.stream(slot, StreamRole::AliceCoin));
        self.alice.setting = None;
        self.bob.coin = Some(streams.stream(slot, StreamRole::BobCoin));
        self.bob.setting = None;
        self.referee.commits = [None, None];
        self.referee.recorded_this_slot = false;
    }

    fn run_slot(&mut self, slot: u64, log: &mut Vec<Message>) -> Result<()> {
        let mut queue = BinaryHeap::new();
        let mut seq = 0;
        let mode = self.mode;
        for id in [NodeId::Source, NodeId::Alice, NodeId::Bob, NodeId::Referee] {
            let mut ctx = Ctx {
                me: id,
                slot,
                now: 0,
                mode,
                queue: &mut queue,
                seq: &mut seq,
                log,
            };
            self.node(id).on_start(&mut ctx)?;
        }
        while let Some(Reverse((at, _, QueuedEnvelope(env)))) = queue.pop() {
            if log.len() > MAX_EVENTS_PER_SLOT {
                return Err(Error::ProtocolFault {
                    slot,
                    reason: "slot did not quiesce".into(),
                    message: Some(env.msg),
                });
            }
            let mut ctx = Ctx {
                me: env.msg.to,
                slot,
                now: at,
                mode,
                queue: &mut queue,
                seq: &mut seq,
                log,
            };
            self.node(env.msg.to).on_message(&env, &mut ctx)?;
        }
        if !self.referee.recorded_this_slot {
            return Err(Error::ProtocolFault {
                slot,
                reason: "slot ended without a referee record".into(),
                message: log.last().copied(),
            });
        }
        Ok(())
    }
}

fn run(
    mode: HarnessMode,
    source: SourceKind<'_>,
    model: &dyn LhvModel,
    settings: &StationSettings,
    slots: u64,
    seed: u64,
    options: &HarnessOptions,
) -> Result<HarnessRun> {
    if slots == 0 {
        return Err(Error::Config("slots must be at least 1".into()));
    }
    let station = |side: Side| StationNode {
        side,
        directions: settings.side(side),
        model,
        coin: None,
        setting: None,
        report_setting: mode == HarnessMode::Conspiratorial,
    };
    let mut net = Network {
        mode,
        source: SourceNode {
            kind: source,
            stream: None,
            reports: [None, None],
            attempts: 0,
        },
        alice: station(Side::Alice),
        bob: station(Side::Bob),
        referee: RefereeNode {
            commits: [None, None],
            tally: Tally::empty(KeySpace::SettingPairs),
            records: 0,
            recorded_this_slot: false,
        },
    };
    let streams = StreamFactory::new(seed);
    let mut kept = Vec::new();
    let mut slot_log = Vec::with_capacity(MAX_EVENTS_PER_SLOT);
    for slot in 0..slots {
        slot_log.clear();
        net.begin_slot(slot, &streams);
        net.run_slot(slot, &mut slot_log)?;
        if mode == HarnessMode::Strict {
            if let Some(v) = validate_slot(&slot_log)?.into_iter().next() {
                return Err(Error::ProtocolFault {
                    slot,
                    reason: format!("schedule violation {:?}", v.rule),
                    message: Some(v.cited),
                });
            }
        }
        if options.keep_log {
            kept.extend_from_slice(&slot_log);
        }
    }
    Ok(HarnessRun {
        mode,
        tally: net.referee.tally,
        log: MessageLog::new(kept),
        records: net.referee.records,
        source_attempts: net.source.attempts,
    })
}

/// Runs `slots` time slots under the locality protocol.
pub fn run_strict(
    model: &dyn LhvModel,
    settings: &StationSettings,
    slots: u64,
    seed: u64,
    options: &HarnessOptions,
) -> Result<HarnessRun> {
    run(
        HarnessMode::Strict,
        SourceKind::Strict(model),
        model,
        settings,
        slots,
        seed,
        options,
    )
}

/// Runs the Pearle model with settings sent to the source first.
pub fn run_conspiratorial(
    model: &PearleModel,
    settings: &StationSettings,
    slots: u64,
    seed: u64,
    options: &HarnessOptions,
) -> Result<HarnessRun> {
    run(
        HarnessMode::Conspiratorial,
        SourceKind::Conspiratorial {
            model,
            settings: *settings,
            cap: options.attempt_cap,
        },
        model,
        settings,
        slots,
        seed,
        options,
    )
}
