//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured values (run with `--nocapture` to see
//! them).

use fedsim::aggregation::{local_aggregate, local_weights};
use fedsim::config::{builtin, StrategyMode};
use fedsim::consensus::{
    elect_miner, election_distribution, quorum_threshold, run_round, ElectionDistribution,
    RoundContext, TrustState,
};
use fedsim::data::generate_task;
use fedsim::drl::{DdpgAgent, DdpgConfig, Experience, SharedReplayBuffer};
use fedsim::ledger::{make_block, make_transaction, BlockHash, Chain, GlobalAggBlock, LedgerRules};
use fedsim::metrics::{write_metrics_csv, write_summary};
use fedsim::orchestrator::{compare_strategies, early_stop_demo, run_scenario};
use fedsim::params::ModelParams;
use fedsim::rng;
use fedsim::sim::{ActorId, Behavior, Kernel};
use fedsim::training::ModelSpec;
use rand::Rng;

fn genesis_chain() -> Chain<f64> {
    Chain::genesis(ModelParams::from_values(vec![0.0, 0.0]))
}

fn valid_block(chain: &Chain<f64>, miner: usize, n: usize) -> GlobalAggBlock<f64> {
    let txs: Vec<_> = (0..n)
        .map(|s| {
            make_transaction(
                s,
                1.0 + s as f64 * 0.1,
                0,
                ModelParams::from_values(vec![s as f64, 1.0]),
                2,
                None,
            )
            .unwrap()
        })
        .collect();
    let mean0 = (0..n).map(|s| s as f64).sum::<f64>() / n as f64;
    make_block(
        miner,
        1,
        2.0,
        txs,
        ModelParams::from_values(vec![mean0, 1.0]),
        chain.head().hash,
    )
    .unwrap()
}

/// Criterion 1: with at most floor((N-1)/3) faulty servers, exhaustively
/// over fault profiles, miner choices, trust skews and faulty-message
/// drop subsets, no two honest servers ever complete consensus on
/// different blocks.
#[test]
fn criterion_1_consensus_safety_exhaustive() {
    let profiles = [Behavior::Silent, Behavior::NoTrain, Behavior::RandomModel];
    let mut rounds_checked: u64 = 0;
    let start = std::time::Instant::now();

    for n in [4usize, 5] {
        let trust_sets: Vec<Vec<f64>> = vec![
            vec![0.0; n],
            {
                // One dominant server.
                let mut v = vec![0.3; n];
                v[0] = 3.0;
                v
            },
            (1..=n).map(|i| i as f64).collect(),
        ];
        let rules = LedgerRules {
            block_interval: 2.0,
            param_dim: 2,
            norm_bound: 1e3,
        };

        let mut check = |behaviors: &[(usize, Behavior)],
                         miner: usize,
                         trust: &[f64],
                         drops: &[(usize, usize, &'static str)]| {
            let mut kernel: Kernel<f64> = Kernel::new(42, 2);
            for s in 0..n {
                kernel.register(ActorId::Server(s), Behavior::Honest);
            }
            for (s, b) in behaviors {
                kernel.register(ActorId::Server(*s), *b);
            }
            for (from, to, phase) in drops {
                kernel.add_drop_rule(ActorId::Server(*from), ActorId::Server(*to), phase);
            }
            let chain = genesis_chain();
            let candidate = if kernel.behavior(ActorId::Server(miner)) == Behavior::Silent {
                None
            } else {
                Some(valid_block(&chain, miner, n))
            };
            let dist = election_distribution(&TrustState::from_scores(trust.to_vec()));
            let ctx = RoundContext {
                round: 1,
                n,
                miner,
                candidate,
                distribution: dist.clone(),
                timeout: 0.5,
            };
            let head = chain.head().clone();
            let out = run_round(&mut kernel, ctx, |_, block| {
                fedsim::ledger::validate_block(block, &head, &rules)
            })
            .unwrap();
            // Safety: all honest completions agree.
            let honest_hashes: Vec<BlockHash> = (0..n)
                .filter(|s| kernel.behavior(ActorId::Server(*s)) == Behavior::Honest)
                .filter_map(|s| out.completed[s])
                .collect();
            for w in honest_hashes.windows(2) {
                assert_eq!(w[0], w[1], "honest servers committed different blocks");
            }
            // Liveness: a responsive miner with a valid block and no drops
            // commits whenever the responsive weight clears the bar.
            if drops.is_empty() {
                let miner_behavior = kernel.behavior(ActorId::Server(miner));
                let responsive_weight: f64 = (0..n)
                    .filter(|s| kernel.behavior(ActorId::Server(*s)) != Behavior::Silent)
                    .map(|s| dist.prob(s))
                    .sum();
                if miner_behavior != Behavior::Silent
                    && miner_behavior != Behavior::RandomModel
                    && responsive_weight >= quorum_threshold(n)
                {
                    assert!(out.finalized.is_some(), "live round failed to finalize");
                }
            }
            rounds_checked += 1;
        };

        // Fault-free baseline.
        for trust in &trust_sets {
            for miner in 0..n {
                check(&[], miner, trust, &[]);
            }
        }

        // One faulty server (the bound for N in {4, 5}).
        for faulty in 0..n {
            for profile in profiles {
                for miner in 0..n {
                    for trust in &trust_sets {
                        if profile == Behavior::Silent {
                            // A crashed node sends nothing; drop subsets are moot.
                            check(&[(faulty, profile)], miner, trust, &[]);
                            continue;
                        }
                        let peers: Vec<usize> = (0..n).filter(|s| *s != faulty).collect();
                        let masks = 1usize << peers.len();
                        let pre_masks = if faulty == miner { masks } else { 1 };
                        for pre_mask in 0..pre_masks {
                            for prep_mask in 0..masks {
                                for commit_mask in 0..masks {
                                    let mut drops = Vec::new();
                                    for (bit, to) in peers.iter().enumerate() {
                                        if pre_mask >> bit & 1 == 1 {
                                            drops.push((faulty, *to, "pre-prepare"));
                                        }
                                        if prep_mask >> bit & 1 == 1 {
                                            drops.push((faulty, *to, "prepare"));
                                        }
                                        if commit_mask >> bit & 1 == 1 {
                                            drops.push((faulty, *to, "commit"));
                                        }
                                    }
                                    check(&[(faulty, profile)], miner, trust, &drops);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "safety sweep took {elapsed:?}, budget is 60s"
    );
    println!(
        "criterion 1 (consensus safety): PASS — {rounds_checked} rounds checked exhaustively in {elapsed:?}, no divergent honest commits"
    );
}

/// Criterion 2: in the byzantine scenario over 40 intervals x 10 seeds,
/// the malicious server is elected miner in under 5% of intervals and
/// every honest server is elected at least once.
#[test]
fn criterion_2_malicious_miner_suppression() {
    let cfg = builtin("byzantine5");
    let n = cfg.n_servers();
    let mut elected = vec![0u64; n];
    let mut intervals = 0u64;
    for rep in 0..10 {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + rep;
        let out = run_scenario::<f64>(run_cfg).unwrap();
        assert_eq!(out.records.len(), 40);
        for r in &out.records {
            elected[r.miner] += 1;
        }
        intervals += out.records.len() as u64;
        assert!(out.honest_chains_equal);
    }
    let malicious_freq = elected[0] as f64 / intervals as f64;
    assert!(
        malicious_freq < 0.05,
        "malicious elected in {malicious_freq} of intervals"
    );
    for (server, count) in elected.iter().enumerate().skip(1) {
        assert!(*count >= 1, "honest server {server} never elected");
    }
    println!(
        "criterion 2 (malicious-miner suppression): PASS — malicious frequency {malicious_freq:.4} over {intervals} intervals, honest counts {:?}",
        &elected[1..]
    );
}

/// Criterion 3: empirical miner frequencies over 10^4 seeded draws match
/// the election distribution within +-0.02 per server.
#[test]
fn criterion_3_election_distribution_fidelity() {
    let cases: Vec<Vec<f64>> = vec![vec![2.0, 1.0, 1.0], vec![0.5, 1.5, 1.0, 0.25, 0.75]];
    let mut worst: f64 = 0.0;
    for scores in cases {
        let st = TrustState::from_scores(scores);
        let dist = election_distribution(&st);
        let mut r = rng::stream(2024, "election");
        let draws = 10_000;
        let mut counts = vec![0u64; dist.len()];
        for _ in 0..draws {
            counts[elect_miner(&dist, &mut r)] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let freq = *c as f64 / draws as f64;
            let dev = (freq - dist.prob(i)).abs();
            worst = worst.max(dev);
            assert!(
                dev <= 0.02,
                "server {i}: frequency {freq} vs probability {}",
                dist.prob(i)
            );
        }
    }
    println!("criterion 3 (election fidelity): PASS — worst deviation {worst:.4} <= 0.02");
}

/// Criterion 4: local aggregation matches an independently coded
/// weighted-sum oracle to 1e-12 on 100 random instances; weights sum to
/// one and ignore positive rescaling.
#[test]
fn criterion_4_aggregation_oracles() {
    let mut r = rng::stream(7, "agg-oracle");
    for trial in 0..100 {
        let dim = r.gen_range(1..16);
        let k = r.gen_range(1..8);
        let models: Vec<ModelParams<f64>> = (0..k)
            .map(|_| {
                ModelParams::from_values((0..dim).map(|_| r.gen::<f64>() * 4.0 - 2.0).collect())
            })
            .collect();
        let sizes: Vec<usize> = (0..k).map(|_| r.gen_range(1..100)).collect();
        let metrics: Vec<f64> = (0..k).map(|_| r.gen::<f64>()).collect();
        let (w0, w1, b) = (r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>());
        let weights = local_weights(&sizes, &metrics, w0, w1, b).unwrap();

        // Independent oracle: index-wise accumulation.
        let mut expect = vec![0.0f64; dim];
        for (m, w) in models.iter().zip(weights.values()) {
            for i in 0..dim {
                expect[i] += w * m.values()[i];
            }
        }
        let got = local_aggregate(&models, &weights).unwrap();
        for i in 0..dim {
            assert!(
                (got.values()[i] - expect[i]).abs() <= 1e-12,
                "trial {trial}, coordinate {i}"
            );
        }

        let sum: f64 = weights.values().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
        let c = 0.25 + r.gen::<f64>() * 10.0;
        let rescaled = local_weights(&sizes, &metrics, c * w0, c * w1, c * b).unwrap();
        for (a, s) in weights.values().iter().zip(rescaled.values()) {
            assert!((a - s).abs() <= 1e-9, "rescale changed weights");
        }
    }
    println!("criterion 4 (aggregation oracles): PASS — 100 random instances within 1e-12");
}

/// Criterion 5: analytic gradients match central finite differences —
/// 1e-4 relative for the task model, 1e-3 for the agent's actor/critic —
/// on at least 5 random probes each.
#[test]
fn criterion_5_gradient_checks() {
    // Task model.
    let (train, _) = generate_task::<f64>(5, 3, 4, 200, 50, 3.0, 1.0).unwrap();
    let spec = ModelSpec::linear(4, 3);
    let mut r = rng::stream(5, "probe");
    let mut params = ModelParams::<f64>::zeros(spec.param_dim());
    for v in params.values_mut() {
        *v = r.gen::<f64>() * 0.4 - 0.2;
    }
    let batch = &train.examples[..64];
    let (_, grad) = spec.batch_loss_grad(&params, batch);
    let h = 1e-5;
    let mut max_rel_model: f64 = 0.0;
    for _ in 0..6 {
        let i = r.gen_range(0..spec.param_dim());
        let mut plus = params.clone();
        plus.values_mut()[i] += h;
        let mut minus = params.clone();
        minus.values_mut()[i] -= h;
        let (lp, _) = spec.batch_loss_grad(&plus, batch);
        let (lm, _) = spec.batch_loss_grad(&minus, batch);
        let fd = (lp - lm) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / fd.abs().max(1e-8);
        max_rel_model = max_rel_model.max(rel);
        assert!(rel < 1e-4, "model param {i}: rel {rel}");
    }

    // Agent critic: loss vs finite differences through the flat params.
    let mut init = rng::stream(6, "agent");
    let agent: DdpgAgent<f64> = DdpgAgent::new(DdpgConfig::default(), 2.0, &mut init);
    let mut buf = SharedReplayBuffer::new(1000);
    for _ in 0..64 {
        buf.store(Experience {
            state: [r.gen(), r.gen(), r.gen(), r.gen()],
            action: [
                r.gen::<f64>() * 2.0,
                r.gen(),
                r.gen::<f64>() * 2.0 - 1.0,
                r.gen(),
                r.gen(),
                r.gen::<f64>() * 2.0 - 1.0,
            ],
            reward: r.gen::<f64>() * 0.2 - 0.1,
            next_state: [r.gen(), r.gen(), r.gen(), r.gen()],
        });
    }
    let batch = buf.sample(16, &mut r).unwrap();
    let critic_grad = {
        let mut grads = agent.critic.zero_grads();
        let scale = 1.0 / batch.len() as f64;
        for e in &batch {
            let y = e.reward
                + agent.config().gamma
                    * {
                        let na = {
                            let tr = agent.actor_target.forward(e.next_state.as_slice());
                            let mut a = [0.0f64; 6];
                            for i in 0..6 {
                                let (lo, hi) = agent.bounds()[i];
                                a[i] = lo + (tr.output()[i].tanh() + 1.0) * (hi - lo) / 2.0;
                            }
                            a
                        };
                        let mut x = e.next_state.to_vec();
                        x.extend_from_slice(&na);
                        agent.critic_target.forward(&x).output()[0]
                    };
            let mut x = e.state.to_vec();
            x.extend_from_slice(&e.action);
            let tr = agent.critic.forward(&x);
            let q = tr.output()[0];
            agent.critic.backward(&tr, &[(q - y) * 2.0 * scale], &mut grads);
        }
        grads
    };
    let flat = agent.critic.flat_params();
    let mut max_rel_critic: f64 = 0.0;
    for _ in 0..6 {
        let i = r.gen_range(0..flat.len());
        let mut cl = agent.clone();
        let mut fp = flat.clone();
        fp[i] += 1e-6;
        cl.critic.set_flat_params(&fp);
        let lp = cl.critic_loss(&batch);
        fp[i] -= 2e-6;
        cl.critic.set_flat_params(&fp);
        let lm = cl.critic_loss(&batch);
        let fd = (lp - lm) / 2e-6;
        let rel = (critic_grad.flat[i] - fd).abs() / fd.abs().max(1e-8);
        max_rel_critic = max_rel_critic.max(rel);
        assert!(rel < 1e-3, "critic param {i}: rel {rel}");
    }

    // Actor: ascent objective vs finite differences.
    let states: Vec<[f64; 4]> = batch.iter().map(|e| e.state).collect();
    let obj = |a: &DdpgAgent<f64>| a.actor_objective(&states);
    let aflat = agent.actor.flat_params();
    let mut max_rel_actor: f64 = 0.0;
    for _ in 0..6 {
        let i = r.gen_range(0..aflat.len());
        let mut cl = agent.clone();
        let mut fp = aflat.clone();
        fp[i] += 1e-6;
        cl.actor.set_flat_params(&fp);
        let op = obj(&cl);
        fp[i] -= 2e-6;
        cl.actor.set_flat_params(&fp);
        let om = obj(&cl);
        let fd = (op - om) / 2e-6;
        // Analytic gradient via one manual backward pass (ascent sign).
        let mut agrads = agent.actor.zero_grads();
        let scale = 1.0 / states.len() as f64;
        for s in &states {
            let atr = agent.actor.forward(s.as_slice());
            let raw = atr.output().to_vec();
            let mut a = [0.0f64; 6];
            for j in 0..6 {
                let (lo, hi) = agent.bounds()[j];
                a[j] = lo + (raw[j].tanh() + 1.0) * (hi - lo) / 2.0;
            }
            let mut x = s.to_vec();
            x.extend_from_slice(&a);
            let ctr = agent.critic.forward(&x);
            let mut sink = agent.critic.zero_grads();
            let dq_dx = agent.critic.backward(&ctr, &[scale], &mut sink);
            let mut dq_draw = vec![0.0f64; 6];
            for j in 0..6 {
                let (lo, hi) = agent.bounds()[j];
                let t = raw[j].tanh();
                dq_draw[j] = dq_dx[4 + j] * (1.0 - t * t) * (hi - lo) / 2.0;
            }
            agent.actor.backward(&atr, &dq_draw, &mut agrads);
        }
        let rel = (agrads.flat[i] - fd).abs() / fd.abs().max(1e-8);
        max_rel_actor = max_rel_actor.max(rel);
        assert!(rel < 1e-3, "actor param {i}: rel {rel}");
    }

    println!(
        "criterion 5 (gradient checks): PASS — worst rel err model {max_rel_model:.2e} (<1e-4), critic {max_rel_critic:.2e}, actor {max_rel_actor:.2e} (<1e-3)"
    );
}

/// Criterion 6: chain audits accept every honestly produced chain and
/// reject any single-bit tamper of a stored block (100 random trials).
#[test]
fn criterion_6_ledger_integrity() {
    let mut tiny = builtin("tiny");
    tiny.rounds = 4;
    let out = run_scenario::<f64>(tiny.clone()).unwrap();
    let rules = LedgerRules {
        block_interval: tiny.consensus.block_interval,
        param_dim: tiny.task.dim.checked_mul(tiny.task.classes).unwrap() + tiny.task.classes,
        norm_bound: tiny.consensus.anomaly_norm_bound,
    };
    out.chain.verify(&rules).expect("honest chain accepted");

    let mut paper = builtin("paper5");
    paper.rounds = 3;
    paper.strategy = StrategyMode::Fixed;
    let out2 = run_scenario::<f64>(paper.clone()).unwrap();
    let rules2 = LedgerRules {
        block_interval: paper.consensus.block_interval,
        param_dim: paper.task.dim * paper.task.classes + paper.task.classes,
        norm_bound: paper.consensus.anomaly_norm_bound,
    };
    out2.chain.verify(&rules2).expect("honest chain accepted");

    let mut r = rng::stream(99, "tamper");
    let mut rejected = 0;
    for trial in 0..100 {
        let mut blocks = out.chain.blocks().to_vec();
        let bi = r.gen_range(0..blocks.len());
        let block = &mut blocks[bi];
        match r.gen_range(0..6) {
            0 => {
                // Flip one bit of one model coordinate in a transaction.
                if let Some(tx) = block.body.transactions.first_mut() {
                    let vals = tx.params.values_mut();
                    let vi = r.gen_range(0..vals.len());
                    vals[vi] = f64::from_bits(vals[vi].to_bits() ^ (1u64 << r.gen_range(0..63)));
                } else {
                    let vals = block.body.global_params.values_mut();
                    let vi = r.gen_range(0..vals.len());
                    vals[vi] = f64::from_bits(vals[vi].to_bits() ^ (1u64 << r.gen_range(0..63)));
                }
            }
            1 => {
                let vals = block.body.global_params.values_mut();
                let vi = r.gen_range(0..vals.len());
                vals[vi] = f64::from_bits(vals[vi].to_bits() ^ (1u64 << r.gen_range(0..63)));
            }
            2 => block.header.k ^= 1 << r.gen_range(0..8),
            3 => {
                block.header.time =
                    f64::from_bits(block.header.time.to_bits() ^ (1u64 << r.gen_range(0..63)));
            }
            4 => block.header.prev_hash.0[r.gen_range(0..32)] ^= 1 << r.gen_range(0..8),
            _ => block.hash.0[r.gen_range(0..32)] ^= 1 << r.gen_range(0..8),
        }
        let tampered = Chain::from_blocks(blocks).unwrap();
        if tampered.verify(&rules).is_err() {
            rejected += 1;
        } else {
            panic!("tamper trial {trial} went undetected");
        }
    }
    assert_eq!(rejected, 100);
    println!("criterion 6 (ledger integrity): PASS — honest chains accepted, 100/100 tampers rejected");
}

/// Criterion 7: on the five-server topology over 10 seeds, every strategy
/// mode reaches 0.8 final accuracy; the learned mode is within 0.01 of
/// the random baseline or better; a learned 40-interval run stays under
/// 10 minutes.
#[test]
fn criterion_7_strategy_comparison() {
    let cfg = builtin("paper5");

    let start = std::time::Instant::now();
    let single = run_scenario::<f64>(cfg.clone()).unwrap();
    let learned_runtime = start.elapsed();
    assert!(
        learned_runtime.as_secs() < 600,
        "learned 40-interval run took {learned_runtime:?}"
    );
    assert_eq!(single.buffer_len, 5 * 40, "shared buffer growth");

    let modes = [
        StrategyMode::Fixed,
        StrategyMode::Random,
        StrategyMode::Learned,
    ];
    let table = compare_strategies::<f64>(&cfg, &modes, 10).unwrap();
    let mut finals = std::collections::BTreeMap::new();
    for m in &table.modes {
        assert!(
            m.final_mean >= 0.8,
            "{} final accuracy {} below 0.8",
            m.mode,
            m.final_mean
        );
        finals.insert(m.mode.to_string(), m.final_mean);
    }
    let learned = finals["learned"];
    let random = finals["random"];
    assert!(
        learned >= random - 0.01,
        "learned {learned} trails random {random} by more than 0.01"
    );
    println!(
        "criterion 7 (strategy comparison): PASS — finals fixed={:.4} random={:.4} learned={:.4}, learned run {learned_runtime:?}, threshold {:.4}",
        finals["fixed"], random, learned, table.threshold
    );
}

/// Criterion 8: the capped-epoch run spends strictly fewer example visits
/// than the till-converge run at the same aggregation count.
#[test]
fn criterion_8_early_stop() {
    let cfg = builtin("paper5");
    let rows = early_stop_demo::<f64>(&cfg, cfg.earlystop.cap_epochs).unwrap();
    let (converge, capped) = (&rows[0], &rows[1]);
    assert_eq!(converge.aggregations, capped.aggregations);
    assert!(
        capped.example_visits < converge.example_visits,
        "capped {} vs converge {}",
        capped.example_visits,
        converge.example_visits
    );
    for row in &rows {
        assert!((0.0..=1.0).contains(&row.final_accuracy));
    }
    println!(
        "criterion 8 (early stop): PASS — visits {} < {}, accuracies capped={:.4} converge={:.4}",
        capped.example_visits,
        converge.example_visits,
        capped.final_accuracy,
        converge.final_accuracy
    );
}

/// Criterion 9: identical config and seed reproduce byte-identical
/// metrics files.
#[test]
fn criterion_9_determinism() {
    for name in ["tiny", "byzantine5"] {
        let mut cfg = builtin(name);
        cfg.rounds = if name == "tiny" { 5 } else { 8 };
        cfg.seed = 17;
        let a = run_scenario::<f64>(cfg.clone()).unwrap();
        let b = run_scenario::<f64>(cfg.clone()).unwrap();

        let emit = |out: &fedsim::orchestrator::ScenarioOutput<f64>| {
            let mut csv = Vec::new();
            write_metrics_csv(&out.records, &mut csv).unwrap();
            let mut summary = Vec::new();
            write_summary(&cfg.name, cfg.seed, &out.records, &mut summary).unwrap();
            let mut chain = Vec::new();
            out.chain.dump(&mut chain).unwrap();
            (csv, summary, chain)
        };
        let fa = emit(&a);
        let fb = emit(&b);
        assert_eq!(fa.0, fb.0, "{name}: metrics bytes differ");
        assert_eq!(fa.1, fb.1, "{name}: summary bytes differ");
        assert_eq!(fa.2, fb.2, "{name}: chain bytes differ");
    }
    println!("criterion 9 (determinism): PASS — re-runs byte-identical for tiny and byzantine5");
}

/// Election distribution helper sanity used above.
#[test]
fn election_distribution_smoke() {
    let d: ElectionDistribution<f64> = election_distribution(&TrustState::from_scores(vec![1.0, 3.0]));
    assert!((d.prob(0) - 0.25).abs() < 1e-12);
}
