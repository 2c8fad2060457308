//! Deterministic discrete-event kernel: a single time-ordered queue
//! connecting trainer and server actors, with Byzantine behavior applied
//! at the message bus.

use crate::data::Example;
use crate::error::{Error, Result};
use crate::ledger::{BlockHash, GlobalAggBlock, LocalAggTransaction};
use crate::params::ModelParams;
use crate::rng;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

/// Simulated time; finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimTime(pub f64);

/// Actor address: an edge server or one of its trainers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActorId {
    Server(usize),
    Trainer { server: usize, idx: usize },
}

impl std::fmt::Display for ActorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActorId::Server(s) => write!(f, "P{s}"),
            ActorId::Trainer { server, idx } => write!(f, "v{server}.{idx}"),
        }
    }
}

/// Fault behavior of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    #[default]
    Honest,
    /// Sends nothing at all: no reports, no transactions, no consensus
    /// messages. Subsumes `NoTrain`.
    Silent,
    /// Never trains (no local windows run) but follows consensus honestly.
    NoTrain,
    /// Every model it ships is replaced by seeded noise of the task
    /// dimension; one draw per (sender, nonce), identical to all
    /// recipients.
    RandomModel,
}

/// Behavior assignment for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultProfile {
    pub node: ActorId,
    pub behavior: Behavior,
}

/// Event kinds in fixed tie-break order: all training and aggregation at
/// a timestamp lands before a block is cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    TrainerReport,
    LocalAggregation,
    MessageDelivery,
    BlockTick,
    ScenarioEnd,
}

impl EventKind {
    pub fn rank(self) -> u8 {
        match self {
            EventKind::TrainerReport => 0,
            EventKind::LocalAggregation => 1,
            EventKind::MessageDelivery => 2,
            EventKind::BlockTick => 3,
            EventKind::ScenarioEnd => 4,
        }
    }
}

/// A trainer's end-of-window report to its server.
#[derive(Debug, Clone)]
pub struct TrainerReport<S: Scalar> {
    pub window_t: f64,
    pub params: ModelParams<S>,
    /// Examples left untrained this window, offered for offload.
    pub upload: Vec<Example<S>>,
    /// Indices of `upload` within the trainer's shard.
    pub upload_indices: Vec<usize>,
    /// Example visits spent this window.
    pub visits: u64,
}

/// Message payloads carried by the bus.
#[derive(Debug, Clone)]
pub enum MsgBody<S: Scalar> {
    Report(TrainerReport<S>),
    TxAnnounce(LocalAggTransaction<S>),
    PrePrepare { round: u64, block: GlobalAggBlock<S> },
    Prepare { round: u64, hash: BlockHash },
    Commit { round: u64, hash: BlockHash },
}

impl<S: Scalar> MsgBody<S> {
    /// Coarse phase label used by drop rules and the event log.
    pub fn phase(&self) -> &'static str {
        match self {
            MsgBody::Report(_) => "report",
            MsgBody::TxAnnounce(_) => "tx",
            MsgBody::PrePrepare { .. } => "pre-prepare",
            MsgBody::Prepare { .. } => "prepare",
            MsgBody::Commit { .. } => "commit",
        }
    }
}

/// Identity tag standing in for a signature: sender id plus a per-round
/// nonce. Honest nodes always stamp their own id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignerTag {
    pub id: ActorId,
    pub nonce: u64,
}

#[derive(Debug, Clone)]
pub struct Message<S: Scalar> {
    pub from: ActorId,
    pub to: ActorId,
    pub body: MsgBody<S>,
    pub signer_tag: SignerTag,
}

/// One scheduled event.
#[derive(Debug, Clone)]
pub struct SimEvent<S: Scalar> {
    pub at: SimTime,
    pub target: ActorId,
    pub kind: EventKind,
    pub payload: Payload<S>,
}

#[derive(Debug, Clone)]
pub enum Payload<S: Scalar> {
    /// Wake a trainer at a window end: train and report.
    TrainerWake { window: u64 },
    /// Server collects this window's reports and aggregates.
    LocalAgg { window: u64 },
    /// Global aggregation boundary.
    BlockTick { round: u64 },
    /// Consensus phase deadline check.
    Deadline { round: u64, phase: u8 },
    Msg(Message<S>),
    End,
}

struct Entry<S: Scalar> {
    at: f64,
    rank: u8,
    target: ActorId,
    seq: u64,
    event: SimEvent<S>,
}

impl<S: Scalar> PartialEq for Entry<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<S: Scalar> Eq for Entry<S> {}
impl<S: Scalar> PartialOrd for Entry<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<S: Scalar> Ord for Entry<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we need the least entry first.
        other
            .at
            .total_cmp(&self.at)
            .then_with(|| other.rank.cmp(&self.rank))
            .then_with(|| other.target.cmp(&self.target))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Delivery statistics; conservation checks read these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub honest_sent: u64,
    pub honest_delivered: u64,
    pub dropped_silent: u64,
    pub dropped_rule: u64,
    pub dropped_loss: u64,
    pub corrupted: u64,
}

/// The event kernel. Owns the queue, actor registry and message bus.
pub struct Kernel<S: Scalar> {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Entry<S>>,
    behaviors: BTreeMap<ActorId, Behavior>,
    default_latency: f64,
    link_latency: BTreeMap<(ActorId, ActorId), f64>,
    loss_prob: f64,
    loss_rng: rand_chacha::ChaCha8Rng,
    drop_rules: BTreeSet<(ActorId, ActorId, &'static str)>,
    root_seed: u64,
    model_dim: usize,
    pending_messages: usize,
    pub stats: KernelStats,
    log: Option<Vec<String>>,
}

impl<S: Scalar> Kernel<S> {
    pub fn new(root_seed: u64, model_dim: usize) -> Self {
        Self {
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            behaviors: BTreeMap::new(),
            default_latency: 0.0,
            link_latency: BTreeMap::new(),
            loss_prob: 0.0,
            loss_rng: rng::stream(root_seed, "noise/loss"),
            drop_rules: BTreeSet::new(),
            root_seed,
            model_dim,
            pending_messages: 0,
            stats: KernelStats::default(),
            log: None,
        }
    }

    pub fn register(&mut self, id: ActorId, behavior: Behavior) {
        self.behaviors.insert(id, behavior);
    }

    pub fn behavior(&self, id: ActorId) -> Behavior {
        self.behaviors.get(&id).copied().unwrap_or(Behavior::Honest)
    }

    pub fn is_registered(&self, id: ActorId) -> bool {
        self.behaviors.contains_key(&id)
    }

    pub fn set_default_latency(&mut self, latency: f64) {
        self.default_latency = latency;
    }

    pub fn set_link_latency(&mut self, from: ActorId, to: ActorId, latency: f64) {
        self.link_latency.insert((from, to), latency);
    }

    pub fn set_loss_prob(&mut self, p: f64) {
        self.loss_prob = p;
    }

    /// Install a selective drop of `phase` messages from `from` to `to`
    /// (fault injection for Byzantine senders).
    pub fn add_drop_rule(&mut self, from: ActorId, to: ActorId, phase: &'static str) {
        self.drop_rules.insert((from, to, phase));
    }

    pub fn record_log(&mut self, on: bool) {
        self.log = if on { Some(Vec::new()) } else { None };
    }

    pub fn take_log(&mut self) -> Vec<String> {
        self.log.take().unwrap_or_default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending_messages(&self) -> usize {
        self.pending_messages
    }

    fn latency(&self, from: ActorId, to: ActorId) -> f64 {
        self.link_latency
            .get(&(from, to))
            .copied()
            .unwrap_or(self.default_latency)
    }

    /// Enqueue an event. Rejects events scheduled before the current time.
    pub fn schedule(&mut self, event: SimEvent<S>) -> Result<()> {
        let at = event.at.0;
        if !at.is_finite() || at < self.now {
            return Err(Error::EventInPast { at, now: self.now });
        }
        if matches!(event.payload, Payload::Msg(_)) {
            self.pending_messages += 1;
        }
        self.seq += 1;
        self.queue.push(Entry {
            at,
            rank: event.kind.rank(),
            target: event.target,
            seq: self.seq,
            event,
        });
        Ok(())
    }

    /// Pop the globally least event and advance the clock. `None` signals
    /// scenario end (empty queue).
    pub fn advance(&mut self) -> Option<SimEvent<S>> {
        let entry = self.queue.pop()?;
        debug_assert!(entry.at >= self.now);
        self.now = entry.at;
        if matches!(entry.event.payload, Payload::Msg(_)) {
            self.pending_messages -= 1;
            if let Payload::Msg(m) = &entry.event.payload {
                if self.behavior(m.from) == Behavior::Honest {
                    self.stats.honest_delivered += 1;
                }
            }
        }
        if let Some(log) = &mut self.log {
            log.push(format!(
                "t={:.6} {:?} -> {} {}",
                entry.at,
                entry.event.kind,
                entry.event.target,
                match &entry.event.payload {
                    Payload::Msg(m) => format!("msg {} from {}", m.body.phase(), m.from),
                    p => format!("{p:?}")
                        .split_whitespace()
                        .next()
                        .unwrap_or("")
                        .to_string(),
                }
            ));
        }
        Some(entry.event)
    }

    /// Seeded replacement parameters for a `RandomModel` sender; one draw
    /// per (sender, nonce), shared by every recipient.
    pub fn noise_params(&self, sender: ActorId, nonce: u64, salt: u64) -> ModelParams<S> {
        let key = match sender {
            ActorId::Server(s) => s as u64,
            ActorId::Trainer { server, idx } => 1_000_000 + (server as u64) * 10_000 + idx as u64,
        };
        let mut r = rng::substream(self.root_seed, "noise/corrupt", &[key, nonce, salt]);
        let values = (0..self.model_dim).map(|_| S::sample_normal(&mut r)).collect();
        ModelParams::from_values(values)
    }

    /// Replace every model in a block with seeded noise and re-seal the
    /// content hash; what a `RandomModel` proposer ships. Deterministic in
    /// (sender, nonce), so re-applying it is a no-op.
    pub fn corrupt_block(&self, sender: ActorId, nonce: u64, block: &mut GlobalAggBlock<S>) {
        for (i, tx) in block.body.transactions.iter_mut().enumerate() {
            tx.params = self.noise_params(sender, nonce, 1 + i as u64);
        }
        block.body.global_params = self.noise_params(sender, nonce, 0);
        block.hash = block.content_hash();
    }

    fn corrupt_body(&mut self, sender: ActorId, nonce: u64, body: &mut MsgBody<S>) {
        match body {
            MsgBody::Report(r) => {
                r.params = self.noise_params(sender, nonce, 0);
                self.stats.corrupted += 1;
            }
            MsgBody::TxAnnounce(tx) => {
                tx.params = self.noise_params(sender, nonce, 0);
                self.stats.corrupted += 1;
            }
            MsgBody::PrePrepare { block, .. } => {
                let sealed = self.noise_params(sender, nonce, 0);
                if block.body.global_params != sealed {
                    self.corrupt_block(sender, nonce, block);
                }
                self.stats.corrupted += 1;
            }
            MsgBody::Prepare { .. } | MsgBody::Commit { .. } => {}
        }
    }

    /// Send a message through the bus. Applies the sender's fault
    /// behavior (silent drop, model corruption), selective drop rules,
    /// loss, and link latency, then schedules the delivery event.
    ///
    /// Trainer reports are scheduled as [`EventKind::TrainerReport`] so
    /// they land before the same-instant local aggregation; everything
    /// else is [`EventKind::MessageDelivery`].
    pub fn deliver(&mut self, mut msg: Message<S>, nonce: u64) -> Result<()> {
        if !self.is_registered(msg.from) {
            return Err(Error::UnknownActor(msg.from.to_string()));
        }
        if !self.is_registered(msg.to) {
            return Err(Error::UnknownActor(msg.to.to_string()));
        }
        let behavior = self.behavior(msg.from);
        if behavior == Behavior::Honest {
            self.stats.honest_sent += 1;
        }
        match behavior {
            Behavior::Silent => {
                self.stats.dropped_silent += 1;
                return Ok(());
            }
            Behavior::RandomModel => {
                self.corrupt_body(msg.from, nonce, &mut msg.body);
            }
            Behavior::Honest | Behavior::NoTrain => {}
        }
        if self
            .drop_rules
            .contains(&(msg.from, msg.to, msg.body.phase()))
        {
            self.stats.dropped_rule += 1;
            return Ok(());
        }
        if self.loss_prob > 0.0 {
            use rand::Rng;
            if self.loss_rng.gen::<f64>() < self.loss_prob {
                self.stats.dropped_loss += 1;
                return Ok(());
            }
        }
        msg.signer_tag = SignerTag {
            id: msg.from,
            nonce,
        };
        let kind = match msg.body {
            MsgBody::Report(_) => EventKind::TrainerReport,
            _ => EventKind::MessageDelivery,
        };
        let at = SimTime(self.now + self.latency(msg.from, msg.to));
        let target = msg.to;
        self.schedule(SimEvent {
            at,
            target,
            kind,
            payload: Payload::Msg(msg),
        })
    }
}
