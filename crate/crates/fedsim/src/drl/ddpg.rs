//! Deterministic policy gradient agent: actor and critic with target
//! copies and soft updates.

use crate::aggregation::StrategyParams;
use crate::drl::net::{Adam, Mlp};
use crate::drl::replay::SharedReplayBuffer;
use crate::drl::AgentState;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;

/// Offset realizing open lower bounds: an open `(lo, hi]` interval is
/// emitted as `[lo + OPEN_BOUND_EPS, hi]`.
pub const OPEN_BOUND_EPS: f64 = 1e-3;

/// Agent hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct DdpgConfig {
    pub gamma: f64,
    /// Target soft-update factor.
    pub tau: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: usize,
    /// Exploration noise scale as a fraction of each dimension's range.
    pub noise_scale: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.01,
            batch_size: 32,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            hidden: 32,
            noise_scale: 0.1,
        }
    }
}

/// Diagnostics of one update step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

/// One server's strategy agent: actor maps the 4-component state to the
/// six bounded strategy values; critic scores (state, action) pairs.
#[derive(Debug, Clone)]
pub struct DdpgAgent<S: Scalar> {
    pub actor: Mlp<S>,
    pub critic: Mlp<S>,
    pub actor_target: Mlp<S>,
    pub critic_target: Mlp<S>,
    actor_opt: Adam<S>,
    critic_opt: Adam<S>,
    cfg: DdpgConfig,
    /// Per-dimension (lo, hi) after closing open bounds.
    bounds: [(S, S); 6],
}

impl<S: Scalar> DdpgAgent<S> {
    pub fn new<R: Rng>(cfg: DdpgConfig, block_interval: S, rng: &mut R) -> Self {
        let actor = Mlp::new(&[4, cfg.hidden, cfg.hidden, 6], rng);
        let critic = Mlp::new(&[10, cfg.hidden, cfg.hidden, 1], rng);
        let actor_target = actor.clone();
        let critic_target = critic.clone();
        let actor_opt = Adam::new(cfg.actor_lr, actor.param_count());
        let critic_opt = Adam::new(cfg.critic_lr, critic.param_count());
        let raw = StrategyParams::<S>::bounds(block_interval);
        let open = StrategyParams::<S>::open_lower();
        let eps = S::real(OPEN_BOUND_EPS);
        let mut bounds = raw;
        for (b, o) in bounds.iter_mut().zip(open) {
            if o {
                b.0 = b.0 + eps;
            }
        }
        Self {
            actor,
            critic,
            actor_target,
            critic_target,
            actor_opt,
            critic_opt,
            cfg,
            bounds,
        }
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.cfg
    }

    pub fn bounds(&self) -> &[(S, S); 6] {
        &self.bounds
    }

    /// Map a raw actor output (tanh-bounded) onto the action box.
    fn squash(&self, raw: &[S]) -> [S; 6] {
        let mut out = [S::zero(); 6];
        for i in 0..6 {
            let t = raw[i].tanh(); // (-1, 1)
            let (lo, hi) = self.bounds[i];
            let half = (hi - lo) / S::real(2.0);
            out[i] = lo + (t + S::one()) * half;
        }
        out
    }

    /// Clamp a vector into the action box.
    fn clamp(&self, mut a: [S; 6]) -> [S; 6] {
        for i in 0..6 {
            let (lo, hi) = self.bounds[i];
            a[i] = a[i].max(lo).min(hi);
        }
        a
    }

    /// Deterministic policy output for `state`, before exploration noise.
    pub fn policy(&self, state: &AgentState<S>) -> [S; 6] {
        let tr = self.actor.forward(&state.as_array());
        self.squash(tr.output())
    }

    fn target_policy(&self, state: &[S; 4]) -> [S; 6] {
        let tr = self.actor_target.forward(state.as_slice());
        // Target actor uses the same squash as the online actor.
        let mut out = [S::zero(); 6];
        for i in 0..6 {
            let t = tr.output()[i].tanh();
            let (lo, hi) = self.bounds[i];
            let half = (hi - lo) / S::real(2.0);
            out[i] = lo + (t + S::one()) * half;
        }
        out
    }

    /// Behavior policy: actor output plus Gaussian exploration noise
    /// (`exploration_scale` multiplies the configured per-dimension noise),
    /// clamped into bounds. `exploration_scale = 0` is the deterministic
    /// policy.
    pub fn select_action<R: Rng>(
        &self,
        state: &AgentState<S>,
        exploration_scale: f64,
        rng: &mut R,
    ) -> StrategyParams<S> {
        let mut a = self.policy(state);
        if exploration_scale > 0.0 {
            for i in 0..6 {
                let (lo, hi) = self.bounds[i];
                let sd = (hi - lo).to_f64_lossy() * self.cfg.noise_scale * exploration_scale;
                a[i] = a[i] + S::real(sd) * S::sample_normal(rng);
            }
            a = self.clamp(a);
        }
        StrategyParams::from_array(a)
    }

    fn critic_input(state: &[S; 4], action: &[S; 6]) -> Vec<S> {
        let mut x = Vec::with_capacity(10);
        x.extend_from_slice(state.as_slice());
        x.extend_from_slice(action.as_slice());
        x
    }

    /// Critic value for a (state, action) pair.
    pub fn q_value(&self, state: &[S; 4], action: &[S; 6]) -> S {
        self.critic.forward(&Self::critic_input(state, action)).output()[0]
    }

    /// Mean squared TD error of the critic on a batch against the frozen
    /// target `y = r + gamma * Q'(s', mu'(s'))`. Used by the update step
    /// and by gradient-check oracles.
    pub fn critic_loss(&self, batch: &[&crate::drl::replay::Experience<S>]) -> S {
        let scale = S::one() / S::real(batch.len() as f64);
        let mut loss = S::zero();
        for e in batch {
            let y = self.td_target(e);
            let q = self.q_value(&e.state, &e.action);
            let d = q - y;
            loss = loss + d * d * scale;
        }
        loss
    }

    fn td_target(&self, e: &crate::drl::replay::Experience<S>) -> S {
        let next_a = self.target_policy(&e.next_state);
        let qn = self
            .critic_target
            .forward(&Self::critic_input(&e.next_state, &next_a))
            .output()[0];
        e.reward + S::real(self.cfg.gamma) * qn
    }

    /// Mean critic value under the online actor, the actor's ascent
    /// objective.
    pub fn actor_objective(&self, states: &[[S; 4]]) -> S {
        let scale = S::one() / S::real(states.len() as f64);
        let mut total = S::zero();
        for s in states {
            let tr = self.actor.forward(s.as_slice());
            let a = self.squash(tr.output());
            total = total + self.q_value(s, &a) * scale;
        }
        total
    }

    /// One gradient step for critic and actor on a uniformly sampled
    /// shared batch, followed by target soft updates.
    pub fn update<R: Rng>(
        &mut self,
        buffer: &SharedReplayBuffer<S>,
        rng: &mut R,
    ) -> Result<UpdateDiagnostics> {
        if buffer.len() < self.cfg.batch_size {
            return Err(Error::Drl(format!(
                "buffer {} below batch size {}",
                buffer.len(),
                self.cfg.batch_size
            )));
        }
        let batch = buffer.sample(self.cfg.batch_size, rng)?;
        let scale = S::one() / S::real(batch.len() as f64);

        // Critic: minimize mean (Q - y)^2 with y frozen.
        let critic_loss = self.critic_loss(&batch);
        let mut cgrads = self.critic.zero_grads();
        for e in &batch {
            let y = self.td_target(e);
            let x = Self::critic_input(&e.state, &e.action);
            let tr = self.critic.forward(&x);
            let q = tr.output()[0];
            let dl = (q - y) * S::real(2.0) * scale;
            self.critic.backward(&tr, &[dl], &mut cgrads);
        }
        self.critic_opt.step(&mut self.critic, &cgrads);

        // Actor: ascend mean Q(s, squash(actor(s))) through the updated
        // critic.
        let states: Vec<[S; 4]> = batch.iter().map(|e| e.state).collect();
        let actor_objective = self.actor_objective(&states);
        let mut agrads = self.actor.zero_grads();
        for s in &states {
            let atr = self.actor.forward(s.as_slice());
            let raw = atr.output().to_vec();
            let a = self.squash(&raw);
            let x = Self::critic_input(s, &a);
            let ctr = self.critic.forward(&x);
            // dQ/d(input) -> take the action slice.
            let mut sink = self.critic.zero_grads();
            let dq_dx = self.critic.backward(&ctr, &[scale], &mut sink);
            // Chain through the squash: da/draw = (1 - tanh^2) * half-range.
            let mut dq_draw = vec![S::zero(); 6];
            for i in 0..6 {
                let (lo, hi) = self.bounds[i];
                let half = (hi - lo) / S::real(2.0);
                let t = raw[i].tanh();
                // Ascent: negate so the optimizer's descent step climbs Q.
                dq_draw[i] = -(dq_dx[4 + i] * (S::one() - t * t) * half);
            }
            self.actor.backward(&atr, &dq_draw, &mut agrads);
        }
        self.actor_opt.step(&mut self.actor, &agrads);

        // Targets track online copies.
        let tau = S::real(self.cfg.tau);
        self.actor_target.soft_update_from(&self.actor, tau);
        self.critic_target.soft_update_from(&self.critic, tau);

        Ok(UpdateDiagnostics {
            critic_loss: critic_loss.to_f64_lossy(),
            actor_objective: actor_objective.to_f64_lossy(),
        })
    }

    /// Replace both targets with exact copies (tau = 1 shortcut).
    pub fn sync_targets(&mut self) {
        self.actor_target.soft_update_from(&self.actor, S::one());
        self.critic_target.soft_update_from(&self.critic, S::one());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drl::replay::Experience;
    use crate::drl::AgentState;
    use crate::rng;

    fn agent(seed: u64) -> DdpgAgent<f64> {
        let mut r = rng::stream(seed, "init/agent");
        DdpgAgent::new(DdpgConfig::default(), 2.0, &mut r)
    }

    fn filled_buffer(seed: u64, n: usize) -> SharedReplayBuffer<f64> {
        use rand::Rng;
        let mut buf = SharedReplayBuffer::new(10_000);
        let mut r = rng::stream(seed, "buf");
        for _ in 0..n {
            let s = [r.gen(), r.gen(), r.gen(), r.gen()];
            let a = [
                r.gen::<f64>() * 2.0,
                r.gen(),
                r.gen::<f64>() * 2.0 - 1.0,
                r.gen(),
                r.gen(),
                r.gen::<f64>() * 2.0 - 1.0,
            ];
            buf.store(Experience {
                state: s,
                action: a,
                reward: r.gen::<f64>() * 0.1,
                next_state: [r.gen(), r.gen(), r.gen(), r.gen()],
            });
        }
        buf
    }

    #[test]
    fn zero_exploration_is_deterministic() {
        let a = agent(1);
        let st = AgentState::new(0.5, 0.4, 0.3, 0.6).unwrap();
        let mut r1 = rng::stream(2, "n");
        let mut r2 = rng::stream(3, "n");
        let x = a.select_action(&st, 0.0, &mut r1);
        let y = a.select_action(&st, 0.0, &mut r2);
        assert_eq!(x, y);
    }

    #[test]
    fn actions_respect_bounds_everywhere() {
        use rand::Rng;
        let a = agent(2);
        let mut r = rng::stream(4, "states");
        for _ in 0..10_000 {
            let st = AgentState::new(r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>())
                .unwrap();
            let act = a.select_action(&st, 1.0, &mut r);
            assert!(act.validate(2.0).is_ok(), "out of bounds: {act:?}");
            assert!(act.f > 0.0 && act.f <= 2.0);
        }
    }

    #[test]
    fn fresh_agent_f_strictly_positive() {
        let a = agent(3);
        let st = AgentState::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let act = a.select_action(&st, 0.0, &mut rng::stream(0, "n"));
        assert!(act.f >= OPEN_BOUND_EPS);
    }

    #[test]
    fn update_needs_full_batch() {
        let mut a = agent(4);
        let buf = filled_buffer(5, 10); // below batch size 32
        assert!(a.update(&buf, &mut rng::stream(0, "u")).is_err());
    }

    #[test]
    fn tau_one_copies_targets() {
        let mut a = agent(5);
        let buf = filled_buffer(6, 64);
        a.update(&buf, &mut rng::stream(1, "u")).unwrap();
        assert!(a.actor.max_param_distance(&a.actor_target) > 0.0);
        a.sync_targets();
        assert_eq!(a.actor.flat_params(), a.actor_target.flat_params());
        assert_eq!(a.critic.flat_params(), a.critic_target.flat_params());
    }

    #[test]
    fn gamma_zero_target_is_reward() {
        let mut cfg = DdpgConfig::default();
        cfg.gamma = 0.0;
        let mut r = rng::stream(7, "init/agent");
        let a: DdpgAgent<f64> = DdpgAgent::new(cfg, 2.0, &mut r);
        let e = Experience {
            state: [0.1, 0.2, 0.3, 0.4],
            action: [1.0, 0.5, 0.0, 0.5, 0.5, 0.0],
            reward: 0.7,
            next_state: [0.2, 0.3, 0.4, 0.5],
        };
        assert_eq!(a.td_target(&e), 0.7);
    }

    #[test]
    fn critic_gradient_matches_finite_difference() {
        let a = agent(8);
        let buf = filled_buffer(9, 40);
        let batch = buf.sample(16, &mut rng::stream(2, "s")).unwrap();

        // Analytic gradient of the critic loss.
        let mut grads = a.critic.zero_grads();
        let scale = 1.0 / batch.len() as f64;
        for e in &batch {
            let y = a.td_target(e);
            let x = DdpgAgent::critic_input(&e.state, &e.action);
            let tr = a.critic.forward(&x);
            let q = tr.output()[0];
            a.critic.backward(&tr, &[(q - y) * 2.0 * scale], &mut grads);
        }

        let h = 1e-6;
        let flat = a.critic.flat_params();
        for probe in 0..5 {
            let i = (probe * 97 + 11) % flat.len();
            let mut cl = a.clone();
            let mut fp = flat.clone();
            fp[i] += h;
            cl.critic.set_flat_params(&fp);
            let lp = cl.critic_loss(&batch);
            fp[i] -= 2.0 * h;
            cl.critic.set_flat_params(&fp);
            let lm = cl.critic_loss(&batch);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grads.flat[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-3, "critic param {i}: {} vs {fd}", grads.flat[i]);
        }
    }

    #[test]
    fn actor_gradient_matches_finite_difference() {
        let a = agent(10);
        let buf = filled_buffer(11, 40);
        let batch = buf.sample(16, &mut rng::stream(3, "s")).unwrap();
        let states: Vec<[f64; 4]> = batch.iter().map(|e| e.state).collect();

        // Analytic ascent gradient (negated, as in update()).
        let scale = 1.0 / states.len() as f64;
        let mut agrads = a.actor.zero_grads();
        for s in &states {
            let atr = a.actor.forward(s.as_slice());
            let raw = atr.output().to_vec();
            let act = a.squash(&raw);
            let x = DdpgAgent::critic_input(s, &act);
            let ctr = a.critic.forward(&x);
            let mut sink = a.critic.zero_grads();
            let dq_dx = a.critic.backward(&ctr, &[scale], &mut sink);
            let mut dq_draw = vec![0.0f64; 6];
            for i in 0..6 {
                let (lo, hi) = a.bounds[i];
                let half = (hi - lo) / 2.0;
                let t = raw[i].tanh();
                dq_draw[i] = -(dq_dx[4 + i] * (1.0 - t * t) * half);
            }
            a.actor.backward(&atr, &dq_draw, &mut agrads);
        }

        // agrads holds -d(objective)/d(actor params).
        let h = 1e-6;
        let flat = a.actor.flat_params();
        for probe in 0..5 {
            let i = (probe * 131 + 17) % flat.len();
            let mut cl = a.clone();
            let mut fp = flat.clone();
            fp[i] += h;
            cl.actor.set_flat_params(&fp);
            let op = cl.actor_objective(&states);
            fp[i] -= 2.0 * h;
            cl.actor.set_flat_params(&fp);
            let om = cl.actor_objective(&states);
            let fd = (op - om) / (2.0 * h);
            let rel = (-agrads.flat[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-3, "actor param {i}: {} vs {fd}", -agrads.flat[i]);
        }
    }
}
