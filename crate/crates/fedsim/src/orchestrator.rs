//! Scenario engine: drives training windows, local aggregations, block
//! ticks, consensus rounds, and the per-server agent bookkeeping through
//! the event kernel.

use crate::aggregation::{
    global_aggregate, local_aggregate, local_weights, offload_decision, StrategyParams,
};
use crate::config::{ScenarioConfig, StrategyMode};
use crate::consensus::{
    elect_miner, election_distribution, performance_increase, run_round, update_trust,
    Outcome, Role, RoundContext, TrustState,
};
use crate::data::{generate_task, partition_noniid, Dataset, Example};
use crate::drl::{compute_reward, AgentState, DdpgAgent, DdpgConfig, Experience, SharedReplayBuffer};
use crate::error::{Error, Result};
use crate::ledger::{make_block, make_transaction, validate_block, Chain, LedgerRules, LocalAggTransaction};
use crate::params::ModelParams;
use crate::rng;
use crate::scalar::Scalar;
use crate::sim::{
    ActorId, Behavior, EventKind, Kernel, KernelStats, Message, MsgBody, Payload, SignerTag,
    SimEvent, SimTime, TrainerReport,
};
use crate::training::{evaluate, train_sgd, ModelKind, ModelSpec};
use rand_chacha::ChaCha8Rng;

/// Per-server slice of a round record.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerRoundRecord {
    pub server: usize,
    pub local_accuracy: f64,
    pub pi: f64,
    pub trust: f64,
    pub action: [f64; 6],
    pub reward: f64,
}

/// One finalized or failed block interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub k: u64,
    pub miner: usize,
    pub finalized: bool,
    pub global_accuracy: f64,
    pub sim_time: f64,
    pub cumulative_visits: u64,
    pub servers: Vec<ServerRoundRecord>,
}

/// Everything a finished scenario hands back.
pub struct ScenarioOutput<S: Scalar> {
    pub records: Vec<RoundRecord>,
    /// Chain of the first non-silent server.
    pub chain: Chain<S>,
    /// Whether all non-silent servers ended with identical chains.
    pub honest_chains_equal: bool,
    pub final_accuracy: f64,
    pub buffer_len: usize,
    pub cumulative_visits: u64,
    pub agents: Vec<DdpgAgent<S>>,
    pub event_log: Vec<String>,
    pub kernel_stats: KernelStats,
}

struct TrainerState<S: Scalar> {
    cpu_speed: f64,
    shard: Vec<Example<S>>,
    model: ModelParams<S>,
}

struct ServerState<S: Scalar> {
    behavior: Behavior,
    trainers: Vec<TrainerState<S>>,
    local_model: ModelParams<S>,
    /// Local metric at the previous block tick.
    local_e_prev: f64,
    chain: Chain<S>,
    /// Transactions observed this interval (own and announced).
    tx_view: Vec<LocalAggTransaction<S>>,
    last_tx_t: Option<f64>,
    local_round: u64,
    inbox: Vec<(usize, TrainerReport<S>)>,
    agent: Option<DdpgAgent<S>>,
    action: StrategyParams<S>,
    state_curr: AgentState<S>,
    data_fraction: f64,
    trainer_fraction: f64,
}

impl<S: Scalar> ServerState<S> {
    /// Servers that run training windows and choose strategies.
    fn is_active(&self) -> bool {
        matches!(self.behavior, Behavior::Honest | Behavior::RandomModel)
    }

    /// Servers that follow the ledger (everyone but crashed ones).
    fn follows_chain(&self) -> bool {
        self.behavior != Behavior::Silent
    }
}

/// The scenario engine. One engine per scenario run; independent engines
/// may run in parallel.
pub struct Engine<S: Scalar> {
    cfg: ScenarioConfig,
    spec: ModelSpec,
    rules: LedgerRules,
    kernel: Kernel<S>,
    servers: Vec<ServerState<S>>,
    test_set: Dataset<S>,
    trust: TrustState<S>,
    buffer: SharedReplayBuffer<S>,
    global_model: ModelParams<S>,
    global_e: f64,
    records: Vec<RoundRecord>,
    election_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    cumulative_visits: u64,
    record_events: bool,
}

impl<S: Scalar> Engine<S> {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = match cfg.task.kind {
            ModelKind::Linear => ModelSpec::linear(cfg.task.dim, cfg.task.classes),
            ModelKind::Mlp => ModelSpec::mlp(cfg.task.dim, cfg.task.classes, cfg.task.hidden),
        };
        let (train, test) = generate_task::<S>(
            cfg.seed,
            cfg.task.classes,
            cfg.task.dim,
            cfg.task.train,
            cfg.task.test,
            cfg.task.separation,
            cfg.task.noise,
        )?;
        let total_trainers = cfg.total_trainers();
        let trainer_ids: Vec<usize> = (0..total_trainers).collect();
        let shards = partition_noniid(&train, &trainer_ids, cfg.task.partition_alpha, cfg.seed)?;

        let mut init_rng = rng::stream(cfg.seed, rng::STREAM_INIT);
        let initial: ModelParams<S> = spec.init_params(&mut init_rng);

        let mut kernel = Kernel::new(cfg.seed, spec.param_dim());
        let n = cfg.n_servers();
        let max_trainers = cfg
            .servers
            .iter()
            .map(|s| s.cpu_speeds.len())
            .max()
            .unwrap_or(1);

        let test_metric = evaluate(&spec, &initial, &test).accuracy;
        let mut servers = Vec::with_capacity(n);
        let mut shard_iter = shards.into_iter();
        let drl_cfg = DdpgConfig {
            gamma: cfg.drl.gamma,
            tau: cfg.drl.tau,
            batch_size: cfg.drl.batch,
            actor_lr: cfg.drl.actor_lr,
            critic_lr: cfg.drl.critic_lr,
            hidden: cfg.drl.hidden,
            noise_scale: cfg.drl.noise_scale,
        };
        for (sid, sc) in cfg.servers.iter().enumerate() {
            kernel.register(ActorId::Server(sid), sc.fault);
            let mut trainers = Vec::with_capacity(sc.cpu_speeds.len());
            for (tid, &cpu) in sc.cpu_speeds.iter().enumerate() {
                kernel.register(
                    ActorId::Trainer {
                        server: sid,
                        idx: tid,
                    },
                    Behavior::Honest,
                );
                trainers.push(TrainerState {
                    cpu_speed: cpu,
                    shard: shard_iter.next().expect("one shard per trainer").examples,
                    model: initial.clone(),
                });
            }
            let data: usize = trainers.iter().map(|t| t.shard.len()).sum();
            let data_fraction = data as f64 / cfg.task.train as f64;
            let trainer_fraction = sc.cpu_speeds.len() as f64 / max_trainers as f64;
            let agent = if cfg.strategy == StrategyMode::Learned {
                let mut r = rng::substream(cfg.seed, "init/agent", &[sid as u64]);
                Some(DdpgAgent::new(
                    drl_cfg,
                    S::real(cfg.consensus.block_interval),
                    &mut r,
                ))
            } else {
                None
            };
            servers.push(ServerState {
                behavior: sc.fault,
                trainers,
                local_model: initial.clone(),
                local_e_prev: test_metric,
                chain: Chain::genesis(initial.clone()),
                tx_view: Vec::new(),
                last_tx_t: None,
                local_round: 0,
                inbox: Vec::new(),
                agent,
                action: StrategyParams::fixed_baseline(),
                state_curr: AgentState::new(test_metric, test_metric, data_fraction, trainer_fraction)?,
                data_fraction,
                trainer_fraction,
            });
        }
        kernel.set_default_latency(cfg.network.latency);
        kernel.set_loss_prob(cfg.network.loss_prob);

        let rules = LedgerRules {
            block_interval: cfg.consensus.block_interval,
            param_dim: spec.param_dim(),
            norm_bound: cfg.consensus.anomaly_norm_bound,
        };
        let mut engine = Self {
            election_rng: rng::stream(cfg.seed, rng::STREAM_ELECTION),
            noise_rng: rng::stream(cfg.seed, rng::STREAM_NOISE),
            trust: TrustState::new(n),
            buffer: SharedReplayBuffer::new(cfg.drl.capacity),
            global_model: initial,
            global_e: test_metric,
            records: Vec::new(),
            cumulative_visits: 0,
            record_events: false,
            kernel,
            servers,
            test_set: test,
            spec,
            rules,
            cfg,
        };
        // First-interval strategies: the fixed baseline for fixed/random
        // modes, the (noisy) actor output for learned agents.
        engine.choose_actions(1)?;
        Ok(engine)
    }

    pub fn record_events(&mut self, on: bool) {
        self.record_events = on;
        self.kernel.record_log(on);
    }

    fn block_interval(&self) -> f64 {
        self.cfg.consensus.block_interval
    }

    /// Pick every active server's strategy for the coming interval.
    fn choose_actions(&mut self, upcoming_round: u64) -> Result<()> {
        let total = self.cfg.rounds;
        let big_f = S::real(self.block_interval());
        for sid in 0..self.servers.len() {
            if !self.servers[sid].is_active() {
                continue;
            }
            let action = match self.cfg.strategy {
                StrategyMode::Fixed => {
                    let mut a = StrategyParams::<S>::fixed_baseline();
                    a.f = a.f.min(big_f);
                    a
                }
                StrategyMode::Random => {
                    if upcoming_round <= 1 {
                        let mut a = StrategyParams::<S>::fixed_baseline();
                        a.f = a.f.min(big_f);
                        a
                    } else {
                        self.sample_random_action()
                    }
                }
                StrategyMode::Learned => {
                    // Exploration anneals linearly to zero by the final round.
                    let scale = 1.0 - (upcoming_round.saturating_sub(1)) as f64 / total as f64;
                    let st = self.servers[sid].state_curr;
                    let agent = self.servers[sid].agent.as_ref().expect("learned mode");
                    agent.select_action(&st, scale, &mut self.noise_rng)
                }
            };
            action.validate(big_f)?;
            self.servers[sid].action = action;
        }
        Ok(())
    }

    fn sample_random_action(&mut self) -> StrategyParams<S> {
        let bounds = StrategyParams::<S>::bounds(S::real(self.block_interval()));
        let open = StrategyParams::<S>::open_lower();
        let eps = S::real(crate::drl::OPEN_BOUND_EPS);
        let mut vals = [S::zero(); 6];
        for i in 0..6 {
            let (mut lo, hi) = bounds[i];
            if open[i] {
                lo = lo + eps;
            }
            let u = S::sample_unit(&mut self.noise_rng);
            vals[i] = lo + u * (hi - lo);
        }
        StrategyParams::from_array(vals)
    }

    /// Queue one interval's windows: per active server, local aggregations
    /// at `interval_start + m * f` with a trainer wake per report, skipping
    /// anything not strictly after `after`.
    fn schedule_interval(&mut self, round: u64, after: f64) -> Result<()> {
        let big_f = self.block_interval();
        let start = (round - 1) as f64 * big_f;
        let end = round as f64 * big_f;
        for sid in 0..self.servers.len() {
            if !self.servers[sid].is_active() {
                continue;
            }
            let f = self.servers[sid].action.f.to_f64_lossy();
            let count = ((big_f / f) + 1e-9).floor().max(1.0) as u64;
            for m in 1..=count {
                let mut t = start + m as f64 * f;
                if t > end - 1e-9 {
                    t = end;
                }
                if t <= after + 1e-12 {
                    continue;
                }
                for tid in 0..self.servers[sid].trainers.len() {
                    self.kernel.schedule(SimEvent {
                        at: SimTime(t),
                        target: ActorId::Trainer {
                            server: sid,
                            idx: tid,
                        },
                        kind: EventKind::TrainerReport,
                        payload: Payload::TrainerWake { window: m },
                    })?;
                }
                self.kernel.schedule(SimEvent {
                    at: SimTime(t),
                    target: ActorId::Server(sid),
                    kind: EventKind::LocalAggregation,
                    payload: Payload::LocalAgg { window: m },
                })?;
            }
        }
        self.kernel.schedule(SimEvent {
            at: SimTime(end),
            target: ActorId::Server(0),
            kind: EventKind::BlockTick,
            payload: Payload::BlockTick { round },
        })?;
        Ok(())
    }

    /// Run the whole scenario.
    pub fn run(mut self) -> Result<ScenarioOutput<S>> {
        self.schedule_interval(1, 0.0)?;
        loop {
            let Some(event) = self.kernel.advance() else {
                break;
            };
            match event.payload {
                Payload::TrainerWake { window } => {
                    let ActorId::Trainer { server, idx } = event.target else {
                        return Err(Error::Scenario("trainer wake at non-trainer".into()));
                    };
                    self.on_trainer_wake(server, idx, window)?;
                }
                Payload::LocalAgg { window } => {
                    let ActorId::Server(sid) = event.target else {
                        return Err(Error::Scenario("local agg at non-server".into()));
                    };
                    self.on_local_agg(sid, window, event.at.0)?;
                }
                Payload::Msg(msg) => self.on_message(msg)?,
                Payload::BlockTick { round } => {
                    let done = self.on_block_tick(round)?;
                    if done {
                        break;
                    }
                }
                Payload::Deadline { .. } => {} // stale deadline from a concluded round
                Payload::End => break,
            }
        }
        self.finish()
    }

    fn finish(self) -> Result<ScenarioOutput<S>> {
        let mut kernel = self.kernel;
        let honest_chains: Vec<&Chain<S>> = self
            .servers
            .iter()
            .filter(|s| s.follows_chain())
            .map(|s| &s.chain)
            .collect();
        let honest_chains_equal = honest_chains
            .windows(2)
            .all(|w| w[0].blocks().last().map(|b| b.hash) == w[1].blocks().last().map(|b| b.hash)
                && w[0].height() == w[1].height());
        let chain = (*honest_chains
            .first()
            .ok_or_else(|| Error::Scenario("no honest server".into()))?)
        .clone();
        let final_accuracy = self
            .records
            .last()
            .map(|r| r.global_accuracy)
            .unwrap_or(self.global_e);
        Ok(ScenarioOutput {
            records: self.records,
            chain,
            honest_chains_equal,
            final_accuracy,
            buffer_len: self.buffer.len(),
            cumulative_visits: self.cumulative_visits,
            agents: self
                .servers
                .into_iter()
                .filter_map(|s| s.agent)
                .collect(),
            kernel_stats: kernel.stats,
            event_log: kernel.take_log(),
        })
    }

    fn on_trainer_wake(&mut self, sid: usize, tid: usize, window: u64) -> Result<()> {
        let f = self.servers[sid].action.f.to_f64_lossy();
        let trainer = &self.servers[sid].trainers[tid];
        let epochs = trainer.cpu_speed * f;
        let mut train_rng = rng::substream(
            self.cfg.seed,
            "data/train",
            &[sid as u64, tid as u64, self.servers[sid].local_round, window],
        );
        let out = train_sgd(
            &self.spec,
            &trainer.model,
            &trainer.shard,
            epochs,
            self.cfg.task.lr,
            &mut train_rng,
        )?;
        self.cumulative_visits += out.visits;
        let upload_indices = if epochs < 1.0 { out.untrained.clone() } else { Vec::new() };
        let upload: Vec<Example<S>> = upload_indices
            .iter()
            .map(|&i| self.servers[sid].trainers[tid].shard[i].clone())
            .collect();
        let report = TrainerReport {
            window_t: self.kernel.now(),
            params: out.params.clone(),
            upload,
            upload_indices,
            visits: out.visits,
        };
        self.servers[sid].trainers[tid].model = out.params;
        let from = ActorId::Trainer { server: sid, idx: tid };
        self.kernel.deliver(
            Message {
                from,
                to: ActorId::Server(sid),
                body: MsgBody::Report(report),
                signer_tag: SignerTag { id: from, nonce: window },
            },
            window,
        )
    }

    fn on_message(&mut self, msg: Message<S>) -> Result<()> {
        if msg.signer_tag.id != msg.from {
            return Ok(()); // forged tag, dropped
        }
        let ActorId::Server(sid) = msg.to else {
            return Ok(());
        };
        match msg.body {
            MsgBody::Report(report) => {
                let ActorId::Trainer { server, idx } = msg.from else {
                    return Ok(());
                };
                if server != sid {
                    return Ok(());
                }
                if report.params.dim() != self.spec.param_dim() {
                    log::warn!("dropping report with wrong dimension from {}", msg.from);
                    return Ok(());
                }
                self.servers[sid].inbox.push((idx, report));
            }
            MsgBody::TxAnnounce(tx) => {
                if tx.params.dim() != self.spec.param_dim() {
                    log::warn!("dropping transaction with wrong dimension from {}", msg.from);
                    return Ok(());
                }
                // Announcements older than the head belong to an interval
                // that already closed (possible under nonzero latency).
                if self.servers[sid].follows_chain()
                    && tx.t > self.servers[sid].chain.head().header.time
                {
                    self.servers[sid].tx_view.push(tx);
                }
            }
            // Consensus traffic outside an active round is stale.
            MsgBody::PrePrepare { .. } | MsgBody::Prepare { .. } | MsgBody::Commit { .. } => {}
        }
        Ok(())
    }

    fn on_local_agg(&mut self, sid: usize, _window: u64, t: f64) -> Result<()> {
        let mut inbox = std::mem::take(&mut self.servers[sid].inbox);
        if inbox.is_empty() {
            return Ok(());
        }
        inbox.sort_by_key(|(idx, _)| *idx);

        let strategy = self.servers[sid].action;
        let sigma = S::real(self.cfg.aggregation.sigma);
        let mut kept_sizes = Vec::with_capacity(inbox.len());
        let mut metrics = Vec::with_capacity(inbox.len());
        let mut models = Vec::with_capacity(inbox.len());
        let mut accepted_uploads: Vec<Example<S>> = Vec::new();

        for (tid, report) in &inbox {
            let metric = evaluate(&self.spec, &report.params, &self.test_set).accuracy;
            let shard_len = self.servers[sid].trainers[*tid].shard.len();
            let upload_fraction = if shard_len == 0 {
                0.0
            } else {
                report.upload_indices.len() as f64 / shard_len as f64
            };
            let accept = !report.upload.is_empty()
                && offload_decision(
                    sigma,
                    S::real(upload_fraction),
                    S::real(metric),
                    strategy.h1,
                    strategy.a,
                );
            if accept {
                // Offloaded data leaves the trainer for good.
                let trainer = &mut self.servers[sid].trainers[*tid];
                let mut idxs = report.upload_indices.clone();
                idxs.sort_unstable_by(|a, b| b.cmp(a));
                for i in idxs {
                    trainer.shard.swap_remove(i);
                }
                accepted_uploads.extend(report.upload.iter().cloned());
            }
            kept_sizes.push(self.servers[sid].trainers[*tid].shard.len());
            metrics.push(S::real(metric));
            models.push(report.params.clone());
        }

        let weights = local_weights(&kept_sizes, &metrics, strategy.w0, strategy.w1, strategy.b)?;
        let mut aggregated = local_aggregate(&models, &weights)?;

        // Accepted offloads get exactly one epoch on the server before the
        // aggregate is published.
        if !accepted_uploads.is_empty() {
            let mut server_rng = rng::substream(
                self.cfg.seed,
                "data/server",
                &[sid as u64, self.servers[sid].local_round],
            );
            let out = train_sgd(
                &self.spec,
                &aggregated,
                &accepted_uploads,
                1.0,
                self.cfg.task.lr,
                &mut server_rng,
            )?;
            self.cumulative_visits += out.visits;
            aggregated = out.params;
        }

        let tx = make_transaction(
            sid,
            t,
            self.servers[sid].local_round,
            aggregated.clone(),
            self.spec.param_dim(),
            self.servers[sid].last_tx_t,
        )?;
        self.servers[sid].last_tx_t = Some(t);
        self.servers[sid].local_round += 1;
        self.servers[sid].local_model = aggregated.clone();
        for trainer in &mut self.servers[sid].trainers {
            trainer.model = aggregated.clone();
        }
        self.servers[sid].tx_view.push(tx.clone());
        let nonce = tx.local_round;
        for to in 0..self.servers.len() {
            if to == sid {
                continue;
            }
            self.kernel.deliver(
                Message {
                    from: ActorId::Server(sid),
                    to: ActorId::Server(to),
                    body: MsgBody::TxAnnounce(tx.clone()),
                    signer_tag: SignerTag {
                        id: ActorId::Server(sid),
                        nonce,
                    },
                },
                nonce,
            )?;
        }
        Ok(())
    }

    /// Global aggregation boundary: metrics, election, consensus, trust,
    /// rewards, and the next interval's schedule. Returns true after the
    /// final round.
    fn on_block_tick(&mut self, round: u64) -> Result<bool> {
        let n = self.servers.len();
        let tick_time = self.kernel.now();

        // Local metrics and performance increases at the boundary.
        let local_e: Vec<f64> = self
            .servers
            .iter()
            .map(|s| evaluate(&self.spec, &s.local_model, &self.test_set).accuracy)
            .collect();
        let pi: Vec<f64> = self
            .servers
            .iter()
            .zip(&local_e)
            .map(|(s, e)| performance_increase(*e, s.local_e_prev))
            .collect();

        // Miner election over the previous round's trust.
        let dist = election_distribution(&self.trust);
        let miner = elect_miner(&dist, &mut self.election_rng);

        // The miner packages its transaction view into a candidate block.
        let candidate = if self.servers[miner].behavior == Behavior::Silent {
            None
        } else {
            self.build_candidate(miner, round, tick_time)?
        };

        let mut outcome = {
            let rules = self.rules;
            let servers = &self.servers;
            let ctx = RoundContext {
                round,
                n,
                miner,
                candidate,
                distribution: dist.clone(),
                timeout: self.cfg.consensus.phase_timeout_frac * self.block_interval(),
            };
            run_round(&mut self.kernel, ctx, |sid, block| {
                validate_block(block, servers[sid].chain.head(), &rules)
            })?
        };

        let finalized_hash = outcome.finalized;
        let finalized_block = outcome.finalized_block().cloned();

        // FL traffic that crossed the tick boundary under latency.
        let deferred = std::mem::take(&mut outcome.deferred);
        for msg in deferred {
            self.on_message(msg)?;
        }

        // Commit and catch-up: completers append their hash, remaining
        // chain followers sync the finalized block.
        if let Some(block) = &finalized_block {
            for sid in 0..n {
                if !self.servers[sid].follows_chain() {
                    continue;
                }
                let target = outcome.completed[sid].or(finalized_hash);
                if let Some(h) = target {
                    if let Some(b) = outcome.blocks.get(&h) {
                        self.servers[sid].chain.append(b.clone())?;
                    }
                }
            }
            // Redistribute the agreed global model.
            let new_global = block.body.global_params.clone();
            for s in self.servers.iter_mut() {
                if !s.follows_chain() {
                    continue;
                }
                s.local_model = new_global.clone();
                for tr in s.trainers.iter_mut() {
                    tr.model = new_global.clone();
                }
            }
            self.global_model = new_global;
        }

        let global_e_prev = self.global_e;
        let global_e_now = if finalized_block.is_some() {
            evaluate(&self.spec, &self.global_model, &self.test_set).accuracy
        } else {
            global_e_prev
        };

        // Trust updates: the miner by block acceptance, peers by whether
        // their commit decision matched the final result.
        let d1 = S::real(self.cfg.consensus.delta1);
        let d2 = S::real(self.cfg.consensus.delta2);
        for sid in 0..n {
            let (role, outcome_for) = if sid == miner {
                (
                    Role::Miner,
                    if finalized_hash.is_some() {
                        Outcome::Accepted
                    } else {
                        Outcome::Rejected
                    },
                )
            } else {
                let consistent = match (outcome.sent_commit[sid], finalized_hash) {
                    (Some(h), Some(f)) => h == f,
                    (None, None) => true,
                    _ => false,
                };
                (
                    Role::Peer,
                    if consistent {
                        Outcome::Accepted
                    } else {
                        Outcome::Rejected
                    },
                )
            };
            update_trust(
                &mut self.trust,
                sid,
                role,
                outcome_for,
                S::real(pi[sid]),
                d1,
                d2,
            )?;
        }
        self.trust.set_round(round);

        // Rewards, experiences, agent updates, and the next actions.
        let mut server_records = Vec::with_capacity(n);
        for sid in 0..n {
            let reward = compute_reward(
                S::real(local_e[sid]),
                S::real(global_e_prev),
                S::real(global_e_now),
                S::real(global_e_prev),
                S::real(self.cfg.reward.p),
                S::real(self.cfg.reward.q),
            );
            server_records.push(ServerRoundRecord {
                server: sid,
                local_accuracy: local_e[sid],
                pi: pi[sid],
                trust: self.trust.score(sid).to_f64_lossy(),
                action: self.servers[sid]
                    .action
                    .as_array()
                    .map(|v| v.to_f64_lossy()),
                reward: reward.total.to_f64_lossy(),
            });
            if self.servers[sid].is_active() {
                let next_state = AgentState::new(
                    global_e_now,
                    local_e[sid],
                    self.servers[sid].data_fraction,
                    self.servers[sid].trainer_fraction,
                )?;
                self.buffer.store(Experience {
                    state: self.servers[sid].state_curr.as_array(),
                    action: self.servers[sid].action.as_array(),
                    reward: reward.total,
                    next_state: next_state.as_array(),
                });
                self.servers[sid].state_curr = next_state;
            }
            self.servers[sid].local_e_prev = local_e[sid];
        }

        if self.cfg.strategy == StrategyMode::Learned {
            for sid in 0..n {
                if !self.servers[sid].is_active() {
                    continue;
                }
                if self.buffer.len() >= self.cfg.drl.batch {
                    let agent = self.servers[sid].agent.as_mut().expect("learned mode");
                    agent.update(&self.buffer, &mut self.noise_rng)?;
                }
            }
        }

        self.records.push(RoundRecord {
            k: round,
            miner,
            finalized: finalized_hash.is_some(),
            global_accuracy: global_e_now,
            sim_time: outcome.concluded_at,
            cumulative_visits: self.cumulative_visits,
            servers: server_records,
        });
        self.global_e = global_e_now;

        if round >= self.cfg.rounds {
            return Ok(true);
        }
        self.choose_actions(round + 1)?;
        self.schedule_interval(round + 1, self.kernel.now())?;
        Ok(false)
    }

    fn build_candidate(
        &mut self,
        miner: usize,
        round: u64,
        tick_time: f64,
    ) -> Result<Option<crate::ledger::GlobalAggBlock<S>>> {
        let view = std::mem::take(&mut self.servers[miner].tx_view);
        // Every server's view resets each interval; the miner's is consumed
        // into the candidate.
        for (sid, s) in self.servers.iter_mut().enumerate() {
            if sid != miner {
                s.tx_view.clear();
            }
        }
        if view.is_empty() {
            return Ok(None);
        }
        let latest: Vec<ModelParams<S>> = crate::ledger::latest_per_server(&view)
            .into_iter()
            .map(|tx| tx.params.clone())
            .collect();
        let global = global_aggregate(&latest)?;
        let block = make_block(
            miner,
            round,
            tick_time,
            view,
            global,
            self.servers[miner].chain.head().hash,
        )?;
        Ok(Some(block))
    }
}

/// Run one scenario to completion.
pub fn run_scenario<S: Scalar>(cfg: ScenarioConfig) -> Result<ScenarioOutput<S>> {
    Engine::new(cfg)?.run()
}

/// Per-mode statistics of a strategy comparison.
#[derive(Debug, Clone)]
pub struct ModeStats {
    pub mode: StrategyMode,
    pub final_accuracies: Vec<f64>,
    pub final_mean: f64,
    pub final_sd: f64,
    /// Per seed: first round reaching the threshold, if ever.
    pub rounds_to_threshold: Vec<Option<u64>>,
    /// Mean accuracy per round across seeds.
    pub mean_curve: Vec<f64>,
}

/// Strategy comparison across seeds.
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    /// Accuracy threshold: 95% of the fixed baseline's mean final
    /// accuracy (or of the first listed mode when fixed is absent).
    pub threshold: f64,
    pub modes: Vec<ModeStats>,
}

/// Run `modes` over `repeats` seeds (`seed`, `seed+1`, ...) and tabulate
/// convergence statistics. Repeated modes reuse the same seeds and produce
/// identical rows.
pub fn compare_strategies<S: Scalar>(
    base: &ScenarioConfig,
    modes: &[StrategyMode],
    repeats: u64,
) -> Result<ComparisonTable> {
    if modes.len() < 2 {
        return Err(Error::Scenario("compare needs at least two modes".into()));
    }
    let mut curves: Vec<Vec<Vec<f64>>> = Vec::new(); // [mode][seed][round]
    for mode in modes {
        let mut mode_curves = Vec::new();
        for rep in 0..repeats {
            let mut cfg = base.clone();
            cfg.strategy = *mode;
            cfg.seed = base.seed + rep;
            let out = run_scenario::<S>(cfg)?;
            mode_curves.push(out.records.iter().map(|r| r.global_accuracy).collect());
        }
        curves.push(mode_curves);
    }

    let anchor = modes
        .iter()
        .position(|m| *m == StrategyMode::Fixed)
        .unwrap_or(0);
    let anchor_final_mean = mean(
        &curves[anchor]
            .iter()
            .map(|c| *c.last().unwrap_or(&0.0))
            .collect::<Vec<_>>(),
    );
    let threshold = 0.95 * anchor_final_mean;

    let mut stats = Vec::new();
    for (mi, mode) in modes.iter().enumerate() {
        let finals: Vec<f64> = curves[mi]
            .iter()
            .map(|c| *c.last().unwrap_or(&0.0))
            .collect();
        let rounds_to_threshold = curves[mi]
            .iter()
            .map(|c| {
                c.iter()
                    .position(|a| *a >= threshold)
                    .map(|i| i as u64 + 1)
            })
            .collect();
        let rounds = curves[mi].first().map(|c| c.len()).unwrap_or(0);
        let mean_curve = (0..rounds)
            .map(|r| mean(&curves[mi].iter().map(|c| c[r]).collect::<Vec<_>>()))
            .collect();
        stats.push(ModeStats {
            mode: *mode,
            final_mean: mean(&finals),
            final_sd: stddev(&finals),
            final_accuracies: finals,
            rounds_to_threshold,
            mean_curve,
        });
    }
    Ok(ComparisonTable {
        threshold,
        modes: stats,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// One row of the early-stop demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopRow {
    pub label: &'static str,
    pub final_accuracy: f64,
    pub sim_time: f64,
    pub example_visits: u64,
    pub aggregations: u32,
}

/// Single-aggregator comparison: trainers running to local convergence vs
/// a hard epoch cap, at equal aggregation counts.
pub fn early_stop_demo<S: Scalar>(cfg: &ScenarioConfig, cap_epochs: f64) -> Result<[EarlyStopRow; 2]> {
    if cap_epochs <= 0.0 {
        return Err(Error::Scenario("epoch cap must be positive".into()));
    }
    let spec = match cfg.task.kind {
        ModelKind::Linear => ModelSpec::linear(cfg.task.dim, cfg.task.classes),
        ModelKind::Mlp => ModelSpec::mlp(cfg.task.dim, cfg.task.classes, cfg.task.hidden),
    };
    let (train, test) = generate_task::<S>(
        cfg.seed,
        cfg.task.classes,
        cfg.task.dim,
        cfg.task.train,
        cfg.task.test,
        cfg.task.separation,
        cfg.task.noise,
    )?;
    let cpu: Vec<f64> = cfg
        .servers
        .iter()
        .flat_map(|s| s.cpu_speeds.iter().copied())
        .collect();
    let ids: Vec<usize> = (0..cpu.len()).collect();
    let shards = partition_noniid(&train, &ids, cfg.task.partition_alpha, cfg.seed)?;
    let es = &cfg.earlystop;

    let mut rows = Vec::with_capacity(2);
    for (label, capped) in [("till-converge", false), ("early-stop", true)] {
        let mut init_rng = rng::stream(cfg.seed, rng::STREAM_INIT);
        let mut global: ModelParams<S> = spec.init_params(&mut init_rng);
        let mut visits = 0u64;
        let mut sim_time = 0.0f64;
        for agg in 0..es.aggregations {
            let mut models = Vec::with_capacity(shards.len());
            let mut round_time = 0.0f64;
            for (tid, shard) in shards.iter().enumerate() {
                let mut model = global.clone();
                let mut epochs_done = 0.0f64;
                if capped {
                    let mut r = rng::substream(
                        cfg.seed,
                        "data/earlystop",
                        &[1, agg as u64, tid as u64],
                    );
                    let out = train_sgd(&spec, &model, &shard.examples, cap_epochs, cfg.task.lr, &mut r)?;
                    visits += out.visits;
                    epochs_done = cap_epochs;
                    model = out.params;
                } else {
                    let mut prev_loss = f64::INFINITY;
                    for epoch in 0..es.converge_max_epochs {
                        let mut r = rng::substream(
                            cfg.seed,
                            "data/earlystop",
                            &[0, agg as u64, tid as u64, epoch as u64],
                        );
                        let out =
                            train_sgd(&spec, &model, &shard.examples, 1.0, cfg.task.lr, &mut r)?;
                        visits += out.visits;
                        epochs_done += 1.0;
                        model = out.params;
                        let loss = out.mean_loss.unwrap_or(0.0);
                        if prev_loss - loss < es.converge_tol {
                            break;
                        }
                        prev_loss = loss;
                    }
                }
                round_time = round_time.max(epochs_done / cpu[tid]);
                models.push(model);
            }
            // Plain size-weighted averaging, the conventional aggregation.
            let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
            let metrics = vec![S::zero(); models.len()];
            let weights = local_weights(&sizes, &metrics, S::one(), S::zero(), S::zero())?;
            global = local_aggregate(&models, &weights)?;
            sim_time += round_time;
            let _ = agg;
        }
        rows.push(EarlyStopRow {
            label,
            final_accuracy: evaluate(&spec, &global, &test).accuracy,
            sim_time,
            example_visits: visits,
            aggregations: es.aggregations,
        });
    }
    Ok([rows[0].clone(), rows[1].clone()])
}
