//! Performance-weighted Byzantine consensus: trust scoring, probabilistic
//! miner election, and the weighted prepare/commit round.

use crate::error::{Error, Result};
use crate::ledger::{BlockHash, GlobalAggBlock};
use crate::scalar::Scalar;
use crate::sim::{ActorId, Behavior, EventKind, Kernel, Message, MsgBody, Payload, SignerTag, SimEvent, SimTime};
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Performance increase: round-over-round change of a server's local
/// model metric.
pub fn performance_increase<S: Scalar>(e_now: S, e_prev: S) -> S {
    e_now - e_prev
}

/// Role of a server in a finished round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Miner,
    Peer,
}

/// Outcome relative to the round's final result: for the miner, whether
/// its block was accepted; for a peer, whether its decision matched the
/// final result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Accepted,
    Rejected,
}

/// Per-server trust scores and last performance increases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustState<S: Scalar> {
    scores: Vec<S>,
    last_pi: Vec<S>,
    round: u64,
}

impl<S: Scalar> TrustState<S> {
    /// All scores and increases start at zero.
    pub fn new(n: usize) -> Self {
        Self {
            scores: vec![S::zero(); n],
            last_pi: vec![S::zero(); n],
            round: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score(&self, server: usize) -> S {
        self.scores[server]
    }

    pub fn scores(&self) -> &[S] {
        &self.scores
    }

    pub fn last_pi(&self, server: usize) -> S {
        self.last_pi[server]
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn set_round(&mut self, k: u64) {
        self.round = k;
    }

    /// Construct from explicit scores (tests and election fidelity checks).
    pub fn from_scores(scores: Vec<S>) -> Self {
        let n = scores.len();
        Self {
            scores,
            last_pi: vec![S::zero(); n],
            round: 0,
        }
    }
}

/// Apply one trust update. The additive cap/floor uses `delta1` for the
/// miner and `delta2` for peers; the performance increase is added outside
/// the cap and the result is floored at zero.
pub fn update_trust<S: Scalar>(
    state: &mut TrustState<S>,
    server: usize,
    role: Role,
    outcome: Outcome,
    pi: S,
    delta1: S,
    delta2: S,
) -> Result<()> {
    if !(delta1 > delta2 && delta2 > S::zero()) {
        return Err(Error::Consensus(format!(
            "need delta1 > delta2 > 0, got {delta1} and {delta2}"
        )));
    }
    let s = state.scores[server];
    let delta = match role {
        Role::Miner => delta1,
        Role::Peer => delta2,
    };
    let updated = match outcome {
        Outcome::Accepted => (s + delta).min(S::one()) + pi,
        Outcome::Rejected => (s - delta).max(S::zero()) + pi,
    };
    state.scores[server] = updated.max(S::zero());
    state.last_pi[server] = pi;
    Ok(())
}

/// Per-server miner election probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectionDistribution<S: Scalar> {
    probs: Vec<S>,
}

impl<S: Scalar> ElectionDistribution<S> {
    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    pub fn prob(&self, server: usize) -> S {
        self.probs[server]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Election probabilities proportional to trust scores; uniform when all
/// scores are zero (round one, or total collapse).
pub fn election_distribution<S: Scalar>(state: &TrustState<S>) -> ElectionDistribution<S> {
    let total: S = state.scores.iter().copied().sum();
    let n = state.scores.len();
    if total <= S::zero() {
        return ElectionDistribution {
            probs: vec![S::one() / S::real(n as f64); n],
        };
    }
    ElectionDistribution {
        probs: state.scores.iter().map(|&s| s / total).collect(),
    }
}

/// Categorical sample from the distribution; deterministic given the rng.
pub fn elect_miner<S: Scalar, R: Rng>(dist: &ElectionDistribution<S>, rng: &mut R) -> usize {
    let u = S::sample_unit(rng);
    let mut acc = S::zero();
    for (i, &p) in dist.probs.iter().enumerate() {
        acc = acc + p;
        if u < acc {
            return i;
        }
    }
    dist.probs.len() - 1
}

/// Quorum threshold: `(2 * floor((n-1)/3) + 1) / n`.
pub fn quorum_threshold(n: usize) -> f64 {
    (2.0 * ((n - 1) / 3) as f64 + 1.0) / n as f64
}

/// Weighted quorum test over the election probabilities of a responder
/// set (the caller includes its own weight when it responded).
pub fn quorum_met<S: Scalar>(weights: &[S], n: usize) -> bool {
    let sum: S = weights.iter().copied().sum();
    sum >= S::real(quorum_threshold(n))
}

/// Consensus phase of one server within a round; transitions only move
/// forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Elected,
    PrePrepared,
    Prepared,
    Committed,
    Rejected,
}

/// Per-server state for one consensus round.
#[derive(Debug, Clone)]
pub struct ServerRound<S: Scalar> {
    pub phase: Phase,
    /// Candidate block received in pre-prepare (the miner holds its own).
    pub candidate: Option<GlobalAggBlock<S>>,
    /// This server's validity verdict on the candidate.
    pub verdict: Option<bool>,
    /// Prepare senders per block hash (self included once sent).
    pub prepares: BTreeMap<BlockHash, BTreeSet<usize>>,
    /// Commit senders per block hash (self included once sent).
    pub commits: BTreeMap<BlockHash, BTreeSet<usize>>,
    pub sent_prepare: Option<BlockHash>,
    pub sent_commit: Option<BlockHash>,
    pub completed: Option<BlockHash>,
}

impl<S: Scalar> ServerRound<S> {
    fn new() -> Self {
        Self {
            phase: Phase::Elected,
            candidate: None,
            verdict: None,
            prepares: BTreeMap::new(),
            commits: BTreeMap::new(),
            sent_prepare: None,
            sent_commit: None,
            completed: None,
        }
    }
}

/// Inputs to one consensus round.
pub struct RoundContext<S: Scalar> {
    pub round: u64,
    pub n: usize,
    pub miner: usize,
    /// The miner's block, if it produced one. `None` models a silent or
    /// otherwise absent miner; the round then fails at the phase deadline.
    pub candidate: Option<GlobalAggBlock<S>>,
    pub distribution: ElectionDistribution<S>,
    /// Per-phase timeout in simulated time units.
    pub timeout: f64,
}

/// What one round produced, per server and overall.
#[derive(Debug, Clone)]
pub struct RoundOutcome<S: Scalar> {
    pub round: u64,
    pub miner: usize,
    /// Hash each server completed consensus on, if any.
    pub completed: Vec<Option<BlockHash>>,
    /// Commit each server broadcast, if any.
    pub sent_commit: Vec<Option<BlockHash>>,
    /// Whether the server received and examined a pre-prepare.
    pub participated: Vec<bool>,
    /// Block contents seen this round, keyed by hash (for fetch-on-complete).
    pub blocks: BTreeMap<BlockHash, GlobalAggBlock<S>>,
    /// Hash finalized by at least one honest server, with its weight-bearing
    /// content available in `blocks`.
    pub finalized: Option<BlockHash>,
    /// Simulated time at which the round concluded.
    pub concluded_at: f64,
    /// Non-consensus traffic (reports, transaction announcements) that
    /// arrived mid-round under nonzero latency; the caller replays it.
    pub deferred: Vec<Message<S>>,
}

impl<S: Scalar> RoundOutcome<S> {
    pub fn finalized_block(&self) -> Option<&GlobalAggBlock<S>> {
        self.finalized.and_then(|h| self.blocks.get(&h))
    }
}

fn weight_of<S: Scalar>(set: &BTreeSet<usize>, dist: &ElectionDistribution<S>) -> Vec<S> {
    set.iter().map(|&i| dist.prob(i)).collect()
}

/// Drive one full consensus round through the kernel: pre-prepare
/// broadcast, weighted prepare and commit exchanges, and phase deadlines.
/// `validate` is each server's own block check against its local chain.
///
/// The round concludes when no consensus messages remain in flight (once a
/// candidate exists) or at the final phase deadline; a round with no
/// candidate fails at the first deadline.
pub fn run_round<S: Scalar>(
    kernel: &mut Kernel<S>,
    mut ctx: RoundContext<S>,
    mut validate: impl FnMut(usize, &GlobalAggBlock<S>) -> bool,
) -> Result<RoundOutcome<S>> {
    let n = ctx.n;
    let mut states: Vec<ServerRound<S>> = (0..n).map(|_| ServerRound::new()).collect();
    let mut blocks: BTreeMap<BlockHash, GlobalAggBlock<S>> = BTreeMap::new();
    let start = kernel.now();

    // The miner packages and broadcasts the candidate; its pre-prepare
    // doubles as its prepare. A RandomModel miner's own copy is the same
    // corrupted block its peers receive (corruption is idempotent per
    // (sender, round)).
    let mut pending_sends: Vec<Message<S>> = Vec::new();
    if let Some(mut block) = ctx.candidate.take() {
        if kernel.behavior(ActorId::Server(ctx.miner)) == Behavior::RandomModel {
            // The miner's own copy is the same garbage it broadcasts.
            kernel.corrupt_block(ActorId::Server(ctx.miner), ctx.round, &mut block);
        }
        let hash = block.hash;
        blocks.insert(hash, block.clone());
        let miner_state = &mut states[ctx.miner];
        miner_state.candidate = Some(block.clone());
        miner_state.verdict = Some(true);
        miner_state.phase = Phase::PrePrepared;
        miner_state.sent_prepare = Some(hash);
        miner_state
            .prepares
            .entry(hash)
            .or_default()
            .insert(ctx.miner);
        for to in 0..n {
            if to == ctx.miner {
                continue;
            }
            pending_sends.push(Message {
                from: ActorId::Server(ctx.miner),
                to: ActorId::Server(to),
                body: MsgBody::PrePrepare {
                    round: ctx.round,
                    block: block.clone(),
                },
                signer_tag: SignerTag {
                    id: ActorId::Server(ctx.miner),
                    nonce: ctx.round,
                },
            });
        }
        // The miner's own weight may already clear the bar (always the
        // case for a single server).
        check_quorums(&mut states[ctx.miner], ctx.miner, n, &ctx, &mut pending_sends);
    }
    for msg in pending_sends {
        kernel.deliver(msg, ctx.round)?;
    }

    // Phase deadlines: one per protocol phase.
    for phase in 1..=3u8 {
        kernel.schedule(SimEvent {
            at: SimTime(start + ctx.timeout * phase as f64),
            target: ActorId::Server(ctx.miner),
            kind: EventKind::BlockTick,
            payload: Payload::Deadline {
                round: ctx.round,
                phase,
            },
        })?;
    }

    let candidate_exists = !blocks.is_empty();
    let mut deferred: Vec<Message<S>> = Vec::new();
    let concluded_at;
    loop {
        // Outcomes are final once no consensus message is in flight.
        if candidate_exists && kernel.pending_messages() == 0 {
            concluded_at = kernel.now();
            break;
        }
        let Some(event) = kernel.advance() else {
            concluded_at = kernel.now();
            break;
        };
        match event.payload {
            Payload::Deadline { round, phase } if round == ctx.round => {
                if !candidate_exists {
                    // No block was ever broadcast: the round fails here.
                    concluded_at = kernel.now();
                    break;
                }
                if phase == 3 || kernel.pending_messages() == 0 {
                    concluded_at = kernel.now();
                    break;
                }
            }
            Payload::Deadline { .. } => {} // stale deadline from an earlier round
            Payload::Msg(msg) => {
                // FL traffic crossing the tick boundary is not ours to
                // consume.
                if matches!(msg.body, MsgBody::Report(_) | MsgBody::TxAnnounce(_)) {
                    deferred.push(msg);
                    continue;
                }
                let ActorId::Server(me) = msg.to else {
                    return Err(Error::Consensus(
                        "consensus message addressed to a trainer".into(),
                    ));
                };
                // Crashed servers never react; stale or forged messages are
                // ignored.
                if kernel.behavior(ActorId::Server(me)) == Behavior::Silent {
                    continue;
                }
                if msg.signer_tag.id != msg.from {
                    continue;
                }
                let mut sends: Vec<Message<S>> = Vec::new();
                match msg.body {
                    MsgBody::PrePrepare { round, block } if round == ctx.round => {
                        let ActorId::Server(from) = msg.from else {
                            continue;
                        };
                        if from != ctx.miner {
                            continue; // only the elected miner may propose
                        }
                        let hash = block.hash;
                        blocks.entry(hash).or_insert_with(|| block.clone());
                        let st = &mut states[me];
                        if st.candidate.is_some() {
                            continue;
                        }
                        let valid = validate(me, &block);
                        st.candidate = Some(block);
                        st.verdict = Some(valid);
                        if st.phase < Phase::PrePrepared {
                            st.phase = Phase::PrePrepared;
                        }
                        st.prepares.entry(hash).or_default().insert(ctx.miner);
                        if valid && st.sent_prepare.is_none() {
                            st.sent_prepare = Some(hash);
                            st.prepares.entry(hash).or_default().insert(me);
                            for to in 0..n {
                                if to == me {
                                    continue;
                                }
                                sends.push(Message {
                                    from: ActorId::Server(me),
                                    to: ActorId::Server(to),
                                    body: MsgBody::Prepare {
                                        round: ctx.round,
                                        hash,
                                    },
                                    signer_tag: SignerTag {
                                        id: ActorId::Server(me),
                                        nonce: ctx.round,
                                    },
                                });
                            }
                        }
                        check_quorums(&mut states[me], me, n, &ctx, &mut sends);
                    }
                    MsgBody::Prepare { round, hash } if round == ctx.round => {
                        let ActorId::Server(from) = msg.from else {
                            continue;
                        };
                        states[me].prepares.entry(hash).or_default().insert(from);
                        check_quorums(&mut states[me], me, n, &ctx, &mut sends);
                    }
                    MsgBody::Commit { round, hash } if round == ctx.round => {
                        let ActorId::Server(from) = msg.from else {
                            continue;
                        };
                        states[me].commits.entry(hash).or_default().insert(from);
                        check_quorums(&mut states[me], me, n, &ctx, &mut sends);
                    }
                    _ => {} // stale round or non-consensus traffic
                }
                for s in sends {
                    kernel.deliver(s, ctx.round)?;
                }
            }
            other => {
                return Err(Error::Consensus(format!(
                    "unexpected event during consensus round: {other:?}"
                )));
            }
        }
    }

    let honest: Vec<bool> = (0..n)
        .map(|i| kernel.behavior(ActorId::Server(i)) != Behavior::Silent)
        .collect();
    let finalized = (0..n)
        .filter(|&i| honest[i] && kernel.behavior(ActorId::Server(i)) == Behavior::Honest)
        .find_map(|i| states[i].completed)
        .or_else(|| {
            // No strictly honest server: fall back to any non-silent one.
            (0..n)
                .filter(|&i| honest[i])
                .find_map(|i| states[i].completed)
        });

    for st in states.iter_mut() {
        if st.completed.is_none() && st.phase != Phase::Committed {
            st.phase = Phase::Rejected;
        }
    }

    Ok(RoundOutcome {
        round: ctx.round,
        miner: ctx.miner,
        completed: states.iter().map(|s| s.completed).collect(),
        sent_commit: states.iter().map(|s| s.sent_commit).collect(),
        participated: states.iter().map(|s| s.candidate.is_some()).collect(),
        blocks,
        finalized,
        concluded_at,
        deferred,
    })
}

/// Re-check prepare and commit quorums for `me`, emitting the commit
/// broadcast and completion transitions at most once each.
fn check_quorums<S: Scalar>(
    st: &mut ServerRound<S>,
    me: usize,
    n: usize,
    ctx: &RoundContext<S>,
    sends: &mut Vec<Message<S>>,
) {
    if st.sent_commit.is_none() {
        // Acceptance is by prepare weight, self included once sent.
        let quorum_hash = st
            .prepares
            .iter()
            .find(|(_, set)| quorum_met(&weight_of(set, &ctx.distribution), n))
            .map(|(h, _)| *h);
        if let Some(hash) = quorum_hash {
            st.sent_commit = Some(hash);
            st.commits.entry(hash).or_default().insert(me);
            if st.phase < Phase::Prepared {
                st.phase = Phase::Prepared;
            }
            for to in 0..n {
                if to == me {
                    continue;
                }
                sends.push(Message {
                    from: ActorId::Server(me),
                    to: ActorId::Server(to),
                    body: MsgBody::Commit {
                        round: ctx.round,
                        hash,
                    },
                    signer_tag: SignerTag {
                        id: ActorId::Server(me),
                        nonce: ctx.round,
                    },
                });
            }
        }
    }
    if st.completed.is_none() {
        let done = st
            .commits
            .iter()
            .find(|(_, set)| quorum_met(&weight_of(set, &ctx.distribution), n))
            .map(|(h, _)| *h);
        if let Some(hash) = done {
            st.completed = Some(hash);
            st.phase = Phase::Committed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{make_block, make_transaction, Chain};
    use crate::params::ModelParams;
    use crate::rng;

    #[test]
    fn performance_increase_examples() {
        assert!((performance_increase(0.9f64, 0.8) - 0.1).abs() < 1e-12);
        assert_eq!(performance_increase(0.5f64, 0.5), 0.0);
        assert!((performance_increase(0.3f64, 0.6) + 0.3).abs() < 1e-12);
    }

    #[test]
    fn trust_update_miner_accepted() {
        let mut st = TrustState::from_scores(vec![0.5f64]);
        update_trust(&mut st, 0, Role::Miner, Outcome::Accepted, 0.1, 2.0, 1.0).unwrap();
        assert!((st.score(0) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn trust_update_miner_rejected_floors_at_zero() {
        let mut st = TrustState::from_scores(vec![0.5f64]);
        update_trust(&mut st, 0, Role::Miner, Outcome::Rejected, 0.0, 2.0, 1.0).unwrap();
        assert_eq!(st.score(0), 0.0);
    }

    #[test]
    fn trust_update_peer_consistent_with_negative_pi() {
        let mut st = TrustState::from_scores(vec![0.0f64]);
        update_trust(&mut st, 0, Role::Peer, Outcome::Accepted, -0.2, 2.0, 1.0).unwrap();
        assert!((st.score(0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn trust_update_requires_ordered_deltas() {
        let mut st = TrustState::from_scores(vec![0.0f64]);
        assert!(update_trust(&mut st, 0, Role::Peer, Outcome::Accepted, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn trust_stays_bounded_under_unit_pi() {
        // |PI| <= 1 keeps S in [0, 2] under any update sequence.
        let mut st = TrustState::from_scores(vec![0.3f64]);
        let mut r = rng::stream(3, "trust");
        for i in 0..500 {
            let pi = (S_unit(&mut r) * 2.0) - 1.0;
            let role = if i % 3 == 0 { Role::Miner } else { Role::Peer };
            let outcome = if i % 2 == 0 {
                Outcome::Accepted
            } else {
                Outcome::Rejected
            };
            update_trust(&mut st, 0, role, outcome, pi, 2.0, 1.0).unwrap();
            assert!(st.score(0) >= 0.0 && st.score(0) <= 2.0, "S={}", st.score(0));
        }
    }

    fn S_unit(r: &mut impl Rng) -> f64 {
        r.gen::<f64>()
    }

    #[test]
    fn election_distribution_normalizes() {
        let st = TrustState::from_scores(vec![2.0f64, 1.0, 1.0]);
        let d = election_distribution(&st);
        assert_eq!(d.probs(), &[0.5, 0.25, 0.25]);
    }

    #[test]
    fn election_distribution_uniform_when_all_zero() {
        let st = TrustState::from_scores(vec![0.0f64; 3]);
        let d = election_distribution(&st);
        for p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn election_distribution_scale_invariant() {
        let a = election_distribution(&TrustState::from_scores(vec![2.0f64, 1.0, 1.0]));
        let b = election_distribution(&TrustState::from_scores(vec![20.0f64, 10.0, 10.0]));
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn elect_miner_degenerate_and_deterministic() {
        let d = ElectionDistribution {
            probs: vec![1.0f64, 0.0, 0.0],
        };
        let mut r = rng::stream(1, "e");
        for _ in 0..100 {
            assert_eq!(elect_miner(&d, &mut r), 0);
        }
        let d2 = ElectionDistribution {
            probs: vec![0.3f64, 0.3, 0.4],
        };
        let mut ra = rng::stream(5, "e");
        let mut rb = rng::stream(5, "e");
        assert_eq!(elect_miner(&d2, &mut ra), elect_miner(&d2, &mut rb));
    }

    #[test]
    fn elect_miner_frequencies_match_distribution() {
        let d = ElectionDistribution {
            probs: vec![0.5f64, 0.25, 0.25],
        };
        let mut r = rng::stream(11, "e");
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            counts[elect_miner(&d, &mut r)] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let freq = *c as f64 / draws as f64;
            assert!(
                (freq - d.probs()[i]).abs() <= 0.02,
                "server {i}: {freq} vs {}",
                d.probs()[i]
            );
        }
    }

    #[test]
    fn accepted_pi_increase_never_lowers_election_probability() {
        // Holding others fixed, a larger PI in an accepted round gives at
        // least the same next-round election probability.
        let base = vec![0.7f64, 1.2, 0.4, 0.9];
        for pi_pairs in [(0.0, 0.1), (-0.3, 0.2), (0.05, 0.9)] {
            let mut lo = TrustState::from_scores(base.clone());
            let mut hi = TrustState::from_scores(base.clone());
            update_trust(&mut lo, 0, Role::Miner, Outcome::Accepted, pi_pairs.0, 2.0, 1.0).unwrap();
            update_trust(&mut hi, 0, Role::Miner, Outcome::Accepted, pi_pairs.1, 2.0, 1.0).unwrap();
            let p_lo = election_distribution(&lo).prob(0);
            let p_hi = election_distribution(&hi).prob(0);
            assert!(p_hi >= p_lo, "PI {} -> {p_lo}, PI {} -> {p_hi}", pi_pairs.0, pi_pairs.1);
        }
    }

    #[test]
    fn quorum_threshold_examples() {
        assert_eq!(quorum_threshold(5), 0.6);
        assert_eq!(quorum_threshold(4), 0.75);
        assert_eq!(quorum_threshold(1), 1.0);
    }

    #[test]
    fn quorum_met_examples() {
        // Uniform 0.2 each: 3 of 5 meets, 2 of 5 does not.
        let st = TrustState::from_scores(vec![0.0f64; 5]);
        let d = election_distribution(&st);
        let three: Vec<f64> = (0..3).map(|i| d.prob(i)).collect();
        assert!(quorum_met(&three, 5));
        let two: Vec<f64> = (0..2).map(|i| d.prob(i)).collect();
        assert!(!quorum_met(&two, 5));
    }

    // --- round driver tests ---

    fn make_kernel(n: usize, behaviors: &[(usize, Behavior)]) -> Kernel<f64> {
        let mut k = Kernel::new(99, 2);
        for s in 0..n {
            k.register(ActorId::Server(s), Behavior::Honest);
        }
        for (s, b) in behaviors {
            k.register(ActorId::Server(*s), *b);
        }
        k
    }

    fn test_block(chain: &Chain<f64>, miner: usize, k: u64) -> GlobalAggBlock<f64> {
        let t = k as f64 * 2.0;
        let txs = vec![
            make_transaction(0, t - 1.0, k - 1, ModelParams::from_values(vec![1.0, 0.0]), 2, None)
                .unwrap(),
        ];
        make_block(
            miner,
            k,
            t,
            txs,
            ModelParams::from_values(vec![1.0, 0.0]),
            chain.head().hash,
        )
        .unwrap()
    }

    fn uniform_ctx(n: usize, miner: usize, candidate: Option<GlobalAggBlock<f64>>) -> RoundContext<f64> {
        RoundContext {
            round: 1,
            n,
            miner,
            candidate,
            distribution: election_distribution(&TrustState::from_scores(vec![0.0f64; n])),
            timeout: 0.5,
        }
    }

    #[test]
    fn all_honest_round_commits_everywhere() {
        let n = 5;
        let mut k = make_kernel(n, &[]);
        let chain = Chain::genesis(ModelParams::from_values(vec![0.0, 0.0]));
        let block = test_block(&chain, 0, 1);
        let hash = block.hash;
        let out = run_round(&mut k, uniform_ctx(n, 0, Some(block)), |_, _| true).unwrap();
        assert_eq!(out.finalized, Some(hash));
        for c in &out.completed {
            assert_eq!(*c, Some(hash));
        }
    }

    #[test]
    fn one_silent_peer_of_five_still_commits() {
        let n = 5;
        let mut k = make_kernel(n, &[(4, Behavior::Silent)]);
        let chain = Chain::genesis(ModelParams::from_values(vec![0.0, 0.0]));
        let block = test_block(&chain, 0, 1);
        let hash = block.hash;
        let out = run_round(&mut k, uniform_ctx(n, 0, Some(block)), |_, _| true).unwrap();
        // Remaining 4 with uniform weights carry 0.8 >= 0.6.
        assert_eq!(out.finalized, Some(hash));
        for s in 0..4 {
            assert_eq!(out.completed[s], Some(hash));
        }
        assert_eq!(out.completed[4], None);
    }

    #[test]
    fn silent_miner_fails_round_at_deadline() {
        let n = 5;
        let mut k = make_kernel(n, &[(2, Behavior::Silent)]);
        let out = run_round(&mut k, uniform_ctx(n, 2, None), |_, _| true).unwrap();
        assert_eq!(out.finalized, None);
        assert!(out.completed.iter().all(|c| c.is_none()));
        // Concluded at the first phase deadline.
        assert!((out.concluded_at - 0.5).abs() < 1e-9);
    }

    #[test]
    fn invalid_block_is_not_committed_by_honest_peers() {
        let n = 4;
        let mut k = make_kernel(n, &[]);
        let chain = Chain::genesis(ModelParams::from_values(vec![0.0, 0.0]));
        let block = test_block(&chain, 1, 1);
        // Every peer rejects the block; only the miner endorses it.
        let out = run_round(&mut k, uniform_ctx(n, 1, Some(block)), |_, _| false).unwrap();
        assert_eq!(out.finalized, None);
    }
}
