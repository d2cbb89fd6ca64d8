//! Versioned key-value store committed by a bucket Merkle tree.
//!
//! Every logical key `k` is materialised as a set of composite entries:
//! `k:1 .. k:n` hold the versions (value plus the block they were committed
//! in) and `k:latest` holds the newest version number. Composite entries are
//! hashed into a fixed number of buckets; each bucket keeps a 256-bit
//! additive accumulator of its entry digests so a put touches O(1) bucket
//! state, and the root is the binary Merkle root over bucket digests,
//! refreshed lazily along dirty paths.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, Write};

use primitive_types::U256;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decoder, Encoder};
use crate::hash::Hash256;
use crate::ledger::transaction::hex_bytes;

pub const DEFAULT_NUM_BUCKETS: usize = 1024;

const LATEST_SUFFIX: &[u8] = b":latest";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("stale commit: block {commit_block} precedes latest commit {latest_commit} of key {key}")]
    StaleCommit { key: String, commit_block: u64, latest_commit: u64 },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("unknown block {0}")]
    UnknownBlock(u64),
    #[error("invalid range [{start}, {end})")]
    InvalidRange { start: u64, end: u64 },
    #[error("corrupt record under {0}")]
    CorruptRecord(String),
    #[error("snapshot line {line}: {msg}")]
    Snapshot { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VersionRecord {
    pub value: Vec<u8>,
    pub commit_block: u64,
}

impl VersionRecord {
    fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(self.value.len() + 12);
        e.bytes(&self.value).u64(self.commit_block);
        e.finish()
    }

    fn decode(b: &[u8]) -> Option<Self> {
        let mut d = Decoder::new(b);
        let value = d.bytes().ok()?;
        let commit_block = d.u64().ok()?;
        d.finish().ok()?;
        Some(VersionRecord { value, commit_block })
    }
}

/// One line of the snapshot file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionedEntry {
    #[serde(with = "hex_bytes")]
    pub key: Vec<u8>,
    pub version: u64,
    #[serde(with = "hex_bytes")]
    pub value: Vec<u8>,
    pub commit_block: u64,
}

pub fn version_key(key: &[u8], version: u64) -> Vec<u8> {
    let mut k = Vec::with_capacity(key.len() + 21);
    k.extend_from_slice(key);
    k.push(b':');
    k.extend_from_slice(version.to_string().as_bytes());
    k
}

pub fn latest_key(key: &[u8]) -> Vec<u8> {
    let mut k = Vec::with_capacity(key.len() + LATEST_SUFFIX.len());
    k.extend_from_slice(key);
    k.extend_from_slice(LATEST_SUFFIX);
    k
}

enum Composite<'a> {
    Version(&'a [u8], u64),
    Latest(&'a [u8]),
}

fn parse_composite(raw: &[u8]) -> Option<Composite<'_>> {
    let sep = raw.iter().rposition(|&c| c == b':')?;
    let (key, suffix) = (&raw[..sep], &raw[sep + 1..]);
    if suffix == b"latest" {
        return Some(Composite::Latest(key));
    }
    if suffix.is_empty() || !suffix.iter().all(u8::is_ascii_digit) || suffix[0] == b'0' {
        return None;
    }
    let v: u64 = std::str::from_utf8(suffix).ok()?.parse().ok()?;
    Some(Composite::Version(key, v))
}

/// Digest of one composite entry; the unit summed into bucket accumulators.
pub fn entry_digest(composite_key: &[u8], record: &[u8]) -> Hash256 {
    Hash256::digest_parts(&[
        &(composite_key.len() as u32).to_be_bytes(),
        composite_key,
        record,
    ])
}

pub fn bucket_of(composite_key: &[u8], num_buckets: usize) -> usize {
    (Hash256::digest(composite_key).prefix_u64() % num_buckets as u64) as usize
}

pub fn bucket_digest(accumulator: &[u8; 32]) -> Hash256 {
    Hash256::digest_parts(&[b"bucket", accumulator])
}

fn encode_latest(v: u64) -> [u8; 8] {
    v.to_be_bytes()
}

/// Incrementally maintained binary Merkle tree with the same shape as
/// [`crate::hash::merkle_root`].
#[derive(Clone, Debug)]
struct MerkleLevels {
    levels: Vec<Vec<Hash256>>,
    dirty: BTreeSet<usize>,
}

impl MerkleLevels {
    fn new(leaves: Vec<Hash256>) -> Self {
        let mut levels = vec![leaves];
        while levels.last().unwrap().len() > 1 {
            let prev = levels.last().unwrap();
            let next = prev
                .chunks(2)
                .map(|p| Hash256::digest_parts(&[&p[0].0, &p.get(1).unwrap_or(&p[0]).0]))
                .collect();
            levels.push(next);
        }
        MerkleLevels { levels, dirty: BTreeSet::new() }
    }

    fn set_leaf(&mut self, i: usize, h: Hash256) {
        self.levels[0][i] = h;
        self.dirty.insert(i);
    }

    fn root(&mut self) -> Hash256 {
        if !self.dirty.is_empty() {
            let mut dirty = std::mem::take(&mut self.dirty);
            for lvl in 1..self.levels.len() {
                let parents: BTreeSet<usize> = dirty.iter().map(|i| i / 2).collect();
                for &p in &parents {
                    let below = &self.levels[lvl - 1];
                    let l = below[2 * p];
                    let r = below.get(2 * p + 1).copied().unwrap_or(l);
                    self.levels[lvl][p] = Hash256::digest_parts(&[&l.0, &r.0]);
                }
                dirty = parents;
            }
        }
        self.levels.last().unwrap()[0]
    }
}

#[derive(Clone, Debug)]
pub struct StateStore {
    num_buckets: usize,
    versions: HashMap<Vec<u8>, Vec<VersionRecord>>,
    accumulators: Vec<U256>,
    tree: MerkleLevels,
    entry_count: usize,
}

impl Default for StateStore {
    fn default() -> Self {
        Self::new(DEFAULT_NUM_BUCKETS)
    }
}

impl StateStore {
    pub fn new(num_buckets: usize) -> Self {
        assert!(num_buckets > 0, "num_buckets must be positive");
        let empty = bucket_digest(&[0u8; 32]);
        StateStore {
            num_buckets,
            versions: HashMap::new(),
            accumulators: vec![U256::zero(); num_buckets],
            tree: MerkleLevels::new(vec![empty; num_buckets]),
            entry_count: 0,
        }
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    /// Number of logical keys.
    pub fn key_count(&self) -> usize {
        self.versions.len()
    }

    /// Number of composite entries (versions plus latest pointers).
    pub fn entry_count(&self) -> usize {
        self.entry_count
    }

    fn add_entry(&mut self, composite: &[u8], record: &[u8], sign: bool) {
        let b = bucket_of(composite, self.num_buckets);
        let d = U256::from_big_endian(&entry_digest(composite, record).0);
        let acc = &mut self.accumulators[b];
        *acc = if sign { acc.overflowing_add(d).0 } else { acc.overflowing_sub(d).0 };
        let bytes = acc.to_big_endian();
        self.tree.set_leaf(b, bucket_digest(&bytes));
        if sign {
            self.entry_count += 1;
        } else {
            self.entry_count -= 1;
        }
    }

    pub fn latest_version(&self, key: &[u8]) -> Option<u64> {
        self.versions.get(key).map(|v| v.len() as u64)
    }

    /// Store a new version of `key`. Returns the version number.
    pub fn put(&mut self, key: &[u8], value: &[u8], commit_block: u64) -> Result<u64, StateError> {
        let prev = self.versions.get(key).map(|v| (v.len() as u64, v.last().unwrap().commit_block));
        if let Some((_, latest_commit)) = prev {
            if commit_block < latest_commit {
                return Err(StateError::StaleCommit {
                    key: String::from_utf8_lossy(key).into_owned(),
                    commit_block,
                    latest_commit,
                });
            }
        }
        let version = prev.map_or(1, |(v, _)| v + 1);
        let record = VersionRecord { value: value.to_vec(), commit_block };
        let lk = latest_key(key);
        if let Some((v, _)) = prev {
            self.add_entry(&lk, &encode_latest(v), false);
        }
        self.add_entry(&lk, &encode_latest(version), true);
        self.add_entry(&version_key(key, version), &record.encode(), true);
        self.versions.entry(key.to_vec()).or_default().push(record);
        Ok(version)
    }

    /// Remove the newest version of `key`; used to undo a block.
    pub fn pop_version(&mut self, key: &[u8]) -> Option<VersionRecord> {
        let versions = self.versions.get_mut(key)?;
        let version = versions.len() as u64;
        let record = versions.pop().expect("non-empty version list");
        let now_empty = versions.is_empty();
        if now_empty {
            self.versions.remove(key);
        }
        let lk = latest_key(key);
        self.add_entry(&version_key(key, version), &record.encode(), false);
        self.add_entry(&lk, &encode_latest(version), false);
        if !now_empty {
            self.add_entry(&lk, &encode_latest(version - 1), true);
        }
        Some(record)
    }

    pub fn get_latest(&self, key: &[u8]) -> Option<&[u8]> {
        self.versions.get(key).and_then(|v| v.last()).map(|r| r.value.as_slice())
    }

    pub fn get_version(&self, key: &[u8], version: u64) -> Option<&VersionRecord> {
        if version == 0 {
            return None;
        }
        self.versions.get(key).and_then(|v| v.get(version as usize - 1))
    }

    pub fn versions(&self, key: &[u8]) -> Option<&[VersionRecord]> {
        self.versions.get(key).map(|v| v.as_slice())
    }

    /// Read a composite entry by its raw key (`k:<n>` or `k:latest`),
    /// returning its encoded record.
    pub fn get_raw(&self, composite: &[u8]) -> Option<Vec<u8>> {
        match parse_composite(composite)? {
            Composite::Latest(k) => self.latest_version(k).map(|v| encode_latest(v).to_vec()),
            Composite::Version(k, v) => self.get_version(k, v).map(VersionRecord::encode),
        }
    }

    /// Every composite entry with its encoded record, in no particular order.
    pub fn raw_entries(&self) -> impl Iterator<Item = (Vec<u8>, Vec<u8>)> + '_ {
        self.versions.iter().flat_map(|(k, vs)| {
            let latest = (latest_key(k), encode_latest(vs.len() as u64).to_vec());
            std::iter::once(latest).chain(
                vs.iter()
                    .enumerate()
                    .map(move |(i, r)| (version_key(k, i as u64 + 1), r.encode())),
            )
        })
    }

    pub fn state_root(&mut self) -> Hash256 {
        self.tree.root()
    }

    /// Walk the versions of `key` from newest to oldest, collecting
    /// `(value, commit_block)` for commits in `[start_block, end_block)` and
    /// stopping at the first commit older than `start_block`. All reads go
    /// through the composite-key interface.
    pub fn query_account_block_range(
        &self,
        key: &[u8],
        start_block: u64,
        end_block: u64,
    ) -> Result<Vec<(Vec<u8>, u64)>, StateError> {
        if start_block > end_block {
            return Err(StateError::InvalidRange { start: start_block, end: end_block });
        }
        let name = || String::from_utf8_lossy(key).into_owned();
        let latest = self.get_raw(&latest_key(key)).ok_or_else(|| StateError::UnknownKey(name()))?;
        let mut version = u64::from_be_bytes(latest.as_slice().try_into().map_err(|_| StateError::CorruptRecord(name()))?);
        let mut out = Vec::new();
        while version > 0 {
            let raw = self
                .get_raw(&version_key(key, version))
                .ok_or_else(|| StateError::CorruptRecord(name()))?;
            let rec = VersionRecord::decode(&raw).ok_or_else(|| StateError::CorruptRecord(name()))?;
            if rec.commit_block >= start_block && rec.commit_block < end_block {
                out.push((rec.value, rec.commit_block));
            } else if rec.commit_block < start_block {
                break;
            }
            version -= 1;
        }
        Ok(out)
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut keys: Vec<&Vec<u8>> = self.versions.keys().collect();
        keys.sort();
        for k in keys {
            for (i, r) in self.versions[k].iter().enumerate() {
                let entry = VersionedEntry {
                    key: k.clone(),
                    version: i as u64 + 1,
                    value: r.value.clone(),
                    commit_block: r.commit_block,
                };
                serde_json::to_writer(&mut w, &entry)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// Rebuild a store from snapshot lines. Versions of a key must appear
    /// densely and in order.
    pub fn read_snapshot<R: BufRead>(r: R, num_buckets: usize) -> Result<Self, StateError> {
        let mut store = StateStore::new(num_buckets);
        for (i, line) in r.lines().enumerate() {
            let err = |msg: String| StateError::Snapshot { line: i + 1, msg };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: VersionedEntry = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let expected = store.latest_version(&e.key).unwrap_or(0) + 1;
            if e.version != expected {
                return Err(err(format!("version {} where {} expected", e.version, expected)));
            }
            store.put(&e.key, &e.value, e.commit_block).map_err(|e| err(e.to_string()))?;
        }
        Ok(store)
    }
}
