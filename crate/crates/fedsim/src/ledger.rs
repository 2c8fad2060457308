//! Hash-linked ledger of local-aggregation transactions and global
//! aggregation blocks.

use crate::aggregation::global_aggregate;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

/// Tolerance when re-deriving a block's global model from its transactions.
pub const RECOMPUTE_TOL: f64 = 1e-9;

/// 256-bit content digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BlockHash(pub [u8; 32]);

impl BlockHash {
    pub fn zero() -> Self {
        Self([0u8; 32])
    }

    pub fn to_hex(self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 64 {
            return Err(Error::Ledger(format!("bad hash length {}", s.len())));
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char)
                .to_digit(16)
                .ok_or_else(|| Error::Ledger("bad hash hex".into()))?;
            let lo = (chunk[1] as char)
                .to_digit(16)
                .ok_or_else(|| Error::Ledger("bad hash hex".into()))?;
            out[i] = (hi * 16 + lo) as u8;
        }
        Ok(Self(out))
    }
}

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl Serialize for BlockHash {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for BlockHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        BlockHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// One local aggregation record: the server's aggregated model at a point
/// in simulated time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LocalAggTransaction<S: Scalar> {
    pub server: usize,
    /// Simulated time of the aggregation.
    pub t: f64,
    /// Local round index (per-server counter).
    pub local_round: u64,
    pub params: ModelParams<S>,
}

impl<S: Scalar> LocalAggTransaction<S> {
    fn write_canonical(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.server as u64).to_le_bytes());
        out.extend_from_slice(&self.t.to_bits().to_le_bytes());
        out.extend_from_slice(&self.local_round.to_le_bytes());
        self.params.write_canonical(out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    /// Miner identity; `None` only for the genesis block.
    pub miner: Option<usize>,
    /// Global aggregation round index.
    pub k: u64,
    /// Simulated time the block was cut (`k * F`).
    pub time: f64,
    pub prev_hash: BlockHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BlockBody<S: Scalar> {
    /// All local aggregation transactions observed this interval.
    pub transactions: Vec<LocalAggTransaction<S>>,
    /// Global model: unweighted mean of the latest transaction per server.
    pub global_params: ModelParams<S>,
}

/// A global aggregation block. `hash` is the content digest over header
/// (minus the hash itself) and body, recomputable by any validator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GlobalAggBlock<S: Scalar> {
    pub header: BlockHeader,
    pub body: BlockBody<S>,
    pub hash: BlockHash,
}

impl<S: Scalar> GlobalAggBlock<S> {
    pub fn content_hash(&self) -> BlockHash {
        let mut bytes = Vec::new();
        match self.header.miner {
            Some(m) => {
                bytes.push(1);
                bytes.extend_from_slice(&(m as u64).to_le_bytes());
            }
            None => bytes.push(0),
        }
        bytes.extend_from_slice(&self.header.k.to_le_bytes());
        bytes.extend_from_slice(&self.header.time.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.header.prev_hash.0);
        bytes.extend_from_slice(&(self.body.transactions.len() as u64).to_le_bytes());
        for tx in &self.body.transactions {
            tx.write_canonical(&mut bytes);
        }
        self.body.global_params.write_canonical(&mut bytes);
        BlockHash(Sha256::digest(&bytes).into())
    }
}

/// Latest transaction per server, in server-id order.
pub fn latest_per_server<S: Scalar>(
    txs: &[LocalAggTransaction<S>],
) -> Vec<&LocalAggTransaction<S>> {
    let mut latest: BTreeMap<usize, &LocalAggTransaction<S>> = BTreeMap::new();
    for tx in txs {
        let slot = latest.entry(tx.server).or_insert(tx);
        if tx.t > slot.t || (tx.t == slot.t && tx.local_round > slot.local_round) {
            *slot = tx;
        }
    }
    latest.into_values().collect()
}

/// Build a transaction, enforcing strictly increasing per-server time.
/// `last_t` is the server's previous transaction time, if any.
pub fn make_transaction<S: Scalar>(
    server: usize,
    t: f64,
    local_round: u64,
    params: ModelParams<S>,
    expected_dim: usize,
    last_t: Option<f64>,
) -> Result<LocalAggTransaction<S>> {
    if let Some(last) = last_t {
        if t <= last {
            return Err(Error::TimeRegression { t, last });
        }
    }
    params.check_dim(expected_dim)?;
    Ok(LocalAggTransaction {
        server,
        t,
        local_round,
        params,
    })
}

/// Build a block from the interval's transactions. The global model must
/// equal the mean of the latest per-server transactions; it is passed in
/// (the miner computed it) and re-derived here as a self-check.
pub fn make_block<S: Scalar>(
    miner: usize,
    k: u64,
    time: f64,
    transactions: Vec<LocalAggTransaction<S>>,
    global_params: ModelParams<S>,
    prev_hash: BlockHash,
) -> Result<GlobalAggBlock<S>> {
    if transactions.is_empty() {
        return Err(Error::Ledger("block needs at least one transaction".into()));
    }
    let latest: Vec<ModelParams<S>> = latest_per_server(&transactions)
        .into_iter()
        .map(|tx| tx.params.clone())
        .collect();
    let expect = global_aggregate(&latest)?;
    if !params_close(&expect, &global_params, RECOMPUTE_TOL) {
        return Err(Error::Ledger(
            "global params do not match aggregate of transactions".into(),
        ));
    }
    let mut block = GlobalAggBlock {
        header: BlockHeader {
            miner: Some(miner),
            k,
            time,
            prev_hash,
        },
        body: BlockBody {
            transactions,
            global_params,
        },
        hash: BlockHash::zero(),
    };
    block.hash = block.content_hash();
    Ok(block)
}

fn params_close<S: Scalar>(a: &ModelParams<S>, b: &ModelParams<S>, tol: f64) -> bool {
    a.dim() == b.dim()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| (*x - *y).abs().to_f64_lossy() <= tol)
}

/// Validation rules shared by all servers in a scenario.
#[derive(Debug, Clone, Copy)]
pub struct LedgerRules {
    pub block_interval: f64,
    pub param_dim: usize,
    /// Largest tolerated absolute coordinate in any stored model.
    pub norm_bound: f64,
}

/// Full validity check of `block` against its predecessor: hash linkage,
/// recomputable content hash, timestamp spacing, parameter dimensions and
/// finiteness, norm bound, and global-model recomputation.
pub fn validate_block<S: Scalar>(
    block: &GlobalAggBlock<S>,
    prev: &GlobalAggBlock<S>,
    rules: &LedgerRules,
) -> bool {
    if block.header.prev_hash != prev.hash {
        return false;
    }
    if block.hash != block.content_hash() {
        return false;
    }
    if block.header.miner.is_none() {
        return false;
    }
    if block.header.k <= prev.header.k {
        return false;
    }
    // Blocks are cut on the interval grid; failed intervals leave gaps of
    // whole multiples of the interval.
    let expected_time = block.header.k as f64 * rules.block_interval;
    if block.header.time != expected_time {
        return false;
    }
    if block.body.transactions.is_empty() {
        return false;
    }
    let mut per_server_last: BTreeMap<usize, f64> = BTreeMap::new();
    for tx in &block.body.transactions {
        if tx.params.dim() != rules.param_dim
            || !tx.params.is_finite()
            || tx.params.linf_norm().to_f64_lossy() > rules.norm_bound
        {
            return false;
        }
        if tx.t <= prev.header.time || tx.t > block.header.time {
            return false;
        }
        if let Some(&last) = per_server_last.get(&tx.server) {
            if tx.t <= last {
                return false;
            }
        }
        per_server_last.insert(tx.server, tx.t);
    }
    let g = &block.body.global_params;
    if g.dim() != rules.param_dim
        || !g.is_finite()
        || g.linf_norm().to_f64_lossy() > rules.norm_bound
    {
        return false;
    }
    let latest: Vec<ModelParams<S>> = latest_per_server(&block.body.transactions)
        .into_iter()
        .map(|tx| tx.params.clone())
        .collect();
    match global_aggregate(&latest) {
        Ok(expect) => params_close(&expect, g, RECOMPUTE_TOL),
        Err(_) => false,
    }
}

/// An append-only chain of blocks starting at genesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Chain<S: Scalar> {
    blocks: Vec<GlobalAggBlock<S>>,
}

impl<S: Scalar> Chain<S> {
    /// Start a chain with the genesis block: height 0, zero previous hash,
    /// the task's initial parameters as the global model.
    pub fn genesis(initial_params: ModelParams<S>) -> Self {
        let mut block = GlobalAggBlock {
            header: BlockHeader {
                miner: None,
                k: 0,
                time: 0.0,
                prev_hash: BlockHash::zero(),
            },
            body: BlockBody {
                transactions: Vec::new(),
                global_params: initial_params,
            },
            hash: BlockHash::zero(),
        };
        block.hash = block.content_hash();
        Self {
            blocks: vec![block],
        }
    }

    pub fn head(&self) -> &GlobalAggBlock<S> {
        self.blocks.last().expect("chain always has genesis")
    }

    pub fn blocks(&self) -> &[GlobalAggBlock<S>] {
        &self.blocks
    }

    /// Number of blocks after genesis.
    pub fn height(&self) -> usize {
        self.blocks.len() - 1
    }

    /// Append a consensus-finalized block. Duplicate appends (same hash as
    /// head) are no-ops; anything that does not link onto the head is an
    /// error.
    pub fn append(&mut self, block: GlobalAggBlock<S>) -> Result<()> {
        let head = self.head();
        if block.hash == head.hash {
            return Ok(());
        }
        if block.header.k <= head.header.k {
            return Err(Error::Ledger(format!(
                "out-of-order append: block k={} onto head k={}",
                block.header.k, head.header.k
            )));
        }
        if block.header.prev_hash != head.hash {
            return Err(Error::Ledger(format!(
                "append does not link: block k={} prev_hash mismatch",
                block.header.k
            )));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Verify the whole chain; on failure, names the offending block.
    pub fn verify(&self, rules: &LedgerRules) -> Result<()> {
        let genesis = &self.blocks[0];
        if genesis.header.k != 0
            || genesis.header.prev_hash != BlockHash::zero()
            || genesis.hash != genesis.content_hash()
        {
            return Err(Error::Ledger("genesis block invalid".into()));
        }
        for i in 1..self.blocks.len() {
            if !validate_block(&self.blocks[i], &self.blocks[i - 1], rules) {
                return Err(Error::Ledger(format!(
                    "block k={} (index {i}) failed validation",
                    self.blocks[i].header.k
                )));
            }
        }
        Ok(())
    }

    /// Dump as line-delimited JSON, one block per line.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for b in &self.blocks {
            let line =
                serde_json::to_string(b).map_err(|e| Error::Ledger(format!("encode: {e}")))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Assemble a chain from raw blocks without verification (audits and
    /// tamper tests); run [`Chain::verify`] for integrity.
    pub fn from_blocks(blocks: Vec<GlobalAggBlock<S>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Ledger("chain needs a genesis block".into()));
        }
        Ok(Self { blocks })
    }

    /// Inverse of [`Chain::dump`]. Structural decode only; run
    /// [`Chain::verify`] for integrity.
    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut blocks = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let b: GlobalAggBlock<S> =
                serde_json::from_str(&line).map_err(|e| Error::Ledger(format!("decode: {e}")))?;
            blocks.push(b);
        }
        if blocks.is_empty() {
            return Err(Error::Ledger("empty chain dump".into()));
        }
        Ok(Self { blocks })
    }
}
