//! Per-server strategy agents: DDPG actors/critics over a shared replay
//! buffer, with state descriptors that make experience transferable
//! across servers.

mod ddpg;
mod net;
mod replay;

pub use ddpg::{DdpgAgent, DdpgConfig, UpdateDiagnostics, OPEN_BOUND_EPS};
pub use net::{Adam, Gradients, Mlp};
pub use replay::{Experience, SharedReplayBuffer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::io::{Read, Write};

/// Agent observation: global model metric, own local model metric, own
/// share of the global training data, and own trainer count (normalized).
/// The last two are constants describing the server, which is what lets
/// other servers reuse the experience.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState<S: Scalar> {
    pub global_metric: S,
    pub local_metric: S,
    pub data_fraction: S,
    pub trainer_fraction: S,
}

impl<S: Scalar> AgentState<S> {
    pub fn new(
        global_metric: impl Into<f64>,
        local_metric: impl Into<f64>,
        data_fraction: impl Into<f64>,
        trainer_fraction: impl Into<f64>,
    ) -> Result<Self> {
        let vals = [
            global_metric.into(),
            local_metric.into(),
            data_fraction.into(),
            trainer_fraction.into(),
        ];
        for (i, v) in vals.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Drl(format!(
                    "state component {i} out of [0,1]: {v}"
                )));
            }
        }
        Ok(Self {
            global_metric: S::real(vals[0]),
            local_metric: S::real(vals[1]),
            data_fraction: S::real(vals[2]),
            trainer_fraction: S::real(vals[3]),
        })
    }

    pub fn as_array(&self) -> [S; 4] {
        [
            self.global_metric,
            self.local_metric,
            self.data_fraction,
            self.trainer_fraction,
        ]
    }
}

/// Reward components for one interval: local improvement, global
/// improvement, and their product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reward<S: Scalar> {
    pub local: S,
    pub global: S,
    pub total: S,
}

/// Reward after a global round. `e_loc_now` is the server's local model
/// metric; `e_loc_base` is what that model started from this interval
/// (the previous global model's metric); `e_glob_now`/`e_glob_prev` are
/// the global model metrics after and before the round. Improvements are
/// scaled by the achieved metric, so gains near the ceiling weigh more.
pub fn compute_reward<S: Scalar>(
    e_loc_now: S,
    e_loc_base: S,
    e_glob_now: S,
    e_glob_prev: S,
    p: S,
    q: S,
) -> Reward<S> {
    let local = p * (e_loc_now - e_loc_base) * e_loc_now;
    let global = q * (e_glob_now - e_glob_prev) * e_glob_now;
    Reward {
        local,
        global,
        total: local * global,
    }
}

/// Checkpoint all agents' network parameters to a structured binary
/// stream: a magic tag, the agent count, then per agent the four networks
/// as (layer count, per-layer dims, canonical-encoded parameters).
pub fn save_agents<S: Scalar, W: Write>(agents: &[DdpgAgent<S>], mut w: W) -> Result<()> {
    w.write_all(b"FSAG")?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(agents.len() as u32).to_le_bytes())?;
    for a in agents {
        for net in [&a.actor, &a.critic, &a.actor_target, &a.critic_target] {
            let mut buf = Vec::new();
            buf.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
            for l in &net.layers {
                buf.extend_from_slice(&(l.input as u32).to_le_bytes());
                buf.extend_from_slice(&(l.output as u32).to_le_bytes());
            }
            for v in net.flat_params() {
                v.write_canonical(&mut buf);
            }
            w.write_all(&(buf.len() as u64).to_le_bytes())?;
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Restore agent parameters saved by [`save_agents`] into freshly built
/// agents of the same shape.
pub fn load_agents<S: Scalar, R: Read>(agents: &mut [DdpgAgent<S>], mut r: R) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"FSAG" {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != 1 {
        return Err(Error::Checkpoint("unsupported version".into()));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    if count != agents.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {count} agents, scenario has {}",
            agents.len()
        )));
    }
    for a in agents.iter_mut() {
        for net in [
            &mut a.actor,
            &mut a.critic,
            &mut a.actor_target,
            &mut a.critic_target,
        ] {
            let mut lenbuf = [0u8; 8];
            r.read_exact(&mut lenbuf)?;
            let len = u64::from_le_bytes(lenbuf) as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let mut rest: &[u8] = &buf;
            let (nlayers, tail) = read_u32(rest)?;
            rest = tail;
            if nlayers as usize != net.layers.len() {
                return Err(Error::Checkpoint("layer count mismatch".into()));
            }
            for l in &net.layers {
                let (input, tail) = read_u32(rest)?;
                let (output, tail) = read_u32(tail)?;
                rest = tail;
                if input as usize != l.input || output as usize != l.output {
                    return Err(Error::Checkpoint("layer shape mismatch".into()));
                }
            }
            let mut flat = Vec::with_capacity(net.param_count());
            for _ in 0..net.param_count() {
                let (v, tail) = S::read_canonical(rest)
                    .ok_or_else(|| Error::Checkpoint("truncated parameters".into()))?;
                flat.push(v);
                rest = tail;
            }
            if !rest.is_empty() {
                return Err(Error::Checkpoint("trailing bytes in network".into()));
            }
            net.set_flat_params(&flat);
        }
    }
    Ok(())
}

fn read_u32(bytes: &[u8]) -> Result<(u32, &[u8])> {
    let (head, rest) = bytes
        .split_first_chunk::<4>()
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    Ok((u32::from_le_bytes(*head), rest))
}
