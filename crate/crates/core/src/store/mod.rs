//! A single storage node: per-key hash index of immutable records, reserved
//! regions with the SUCCESS/REDIRECT protocol, delta compression, and the
//! remote-predecessor cache.

mod cache;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cache::{CachedRecord, PredecessorCache, RecordRef, DEFAULT_CACHE_BYTES, MAX_PER_RECORD};

use crate::delta::{ByteDelta, DeltaCodec};
use crate::error::{Error, Result};
use crate::record::{NodeRecord, Payload};
use crate::ring::{NodeId, Ring};
use crate::version::{Digest, NodeTag, VersionId};

pub const DEFAULT_REGION_BYTES: u64 = 1 << 20;
const REDIRECT_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// The first node on the route; enforces the region and may redirect.
    Primary,
    /// A follower copy. Never redirects and is not charged to the region.
    Replica,
}

#[derive(Clone, Debug)]
pub struct WriteOpts {
    pub compress: bool,
    /// Node-tag of the new version; defaults to the (first) parent's tag.
    pub tag: Option<NodeTag>,
    pub role: Role,
}

impl Default for WriteOpts {
    fn default() -> Self {
        WriteOpts {
            compress: false,
            tag: None,
            role: Role::Primary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LocalWriteResult {
    Success(VersionId),
    Redirect(NodeTag),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScanTerminator {
    CountM,
    HitMerge,
    ReachedRoot,
    /// The next predecessor lives on another node.
    NeedRemote(VersionId),
    /// The requester may not read the next predecessor.
    Denied(VersionId),
}

#[derive(Clone, Debug)]
pub struct ScanOutcome {
    pub records: Vec<NodeRecord>,
    pub terminator: ScanTerminator,
    /// On `NeedRemote`, the local record whose parent is remote.
    pub boundary: Option<RecordRef>,
}

/// Where a record consulted during a scan came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Local,
    Cached { restricted: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionState {
    pub capacity: u64,
    pub used: u64,
}

struct Stored {
    record: NodeRecord,
    role: Role,
}

struct KeyShard {
    records: HashMap<Digest, Stored>,
    region: RegionState,
    replica_bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStats {
    pub used: u64,
    pub capacity: u64,
    pub records: u64,
    pub full_records: u64,
    pub delta_records: u64,
    pub replica_bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub keys: BTreeMap<String, KeyStats>,
    pub cache_entries: u64,
    pub cache_bytes: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl StoreStats {
    pub fn total_records(&self) -> u64 {
        self.keys.values().map(|k| k.records).sum()
    }

    /// Payload bytes resident on the node, primary and replica copies alike.
    pub fn resident_bytes(&self) -> u64 {
        self.keys.values().map(|k| k.used + k.replica_bytes).sum()
    }
}

pub struct NodeStore {
    node: NodeId,
    ring: Arc<Ring>,
    default_t: u64,
    shards: RwLock<HashMap<Vec<u8>, Arc<Mutex<KeyShard>>>>,
    cache: Mutex<PredecessorCache>,
    codec: Arc<dyn DeltaCodec>,
    rng: Mutex<ChaCha8Rng>,
}

impl NodeStore {
    pub fn new(node: NodeId, ring: Arc<Ring>, default_t: u64, cache_bytes: u64, seed: u64) -> Self {
        NodeStore {
            node,
            ring,
            default_t,
            shards: RwLock::new(HashMap::new()),
            cache: Mutex::new(PredecessorCache::new(cache_bytes)),
            codec: Arc::new(ByteDelta::default()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ (u64::from(node.0) << 32))),
        }
    }

    /// Replaces the compress/decompress pair used for new delta records.
    pub fn with_codec(mut self, codec: Arc<dyn DeltaCodec>) -> Self {
        self.codec = codec;
        self
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn ring(&self) -> &Arc<Ring> {
        &self.ring
    }

    fn shard(&self, key: &[u8]) -> Arc<Mutex<KeyShard>> {
        if let Some(s) = self.shards.read().get(key) {
            return s.clone();
        }
        let mut w = self.shards.write();
        w.entry(key.to_vec())
            .or_insert_with(|| {
                Arc::new(Mutex::new(KeyShard {
                    records: HashMap::new(),
                    region: RegionState {
                        capacity: self.default_t,
                        used: 0,
                    },
                    replica_bytes: 0,
                }))
            })
            .clone()
    }

    fn existing_shard(&self, key: &[u8]) -> Option<Arc<Mutex<KeyShard>>> {
        self.shards.read().get(key).cloned()
    }

    pub fn local_put(
        &self,
        key: &[u8],
        parent: &VersionId,
        value: &[u8],
        opts: &WriteOpts,
    ) -> Result<LocalWriteResult> {
        if !parent.is_well_formed() {
            return Err(Error::InvalidArgument("malformed parent version".into()));
        }
        let tag = opts.tag.clone().unwrap_or_else(|| parent.n.clone());
        let record = NodeRecord::put(key, parent.clone(), value.to_vec(), &tag);
        self.store(record, opts)
    }

    pub fn local_merge(
        &self,
        key: &[u8],
        v1: &VersionId,
        v2: &VersionId,
        value: &[u8],
        opts: &WriteOpts,
    ) -> Result<LocalWriteResult> {
        let tag = opts.tag.clone().unwrap_or_else(|| v1.n.clone());
        let record = NodeRecord::merge(key, v1.clone(), v2.clone(), value.to_vec(), &tag)?;
        self.store(record, opts)
    }

    fn store(&self, mut record: NodeRecord, opts: &WriteOpts) -> Result<LocalWriteResult> {
        let shard = self.shard(&record.key);
        let mut shard = shard.lock();
        if let Some(existing) = shard.records.get(&record.version.h) {
            let (role, size) = (existing.role, existing.record.payload.stored_len());
            // a replica copy left by a redirected write becomes the primary copy
            if role == Role::Replica && opts.role == Role::Primary {
                if shard.region.used + size > shard.region.capacity {
                    drop(shard);
                    return self
                        .redirect_tag(&record.key)
                        .map(LocalWriteResult::Redirect);
                }
                shard.region.used += size;
                shard.replica_bytes -= size;
            }
            let existing = shard.records.get_mut(&record.version.h).expect("present");
            if opts.role == Role::Primary {
                existing.role = Role::Primary;
            }
            // the latest write's tag is the one its client was given
            if opts.tag.is_some() {
                existing.record.version.n = record.version.n;
            }
            return Ok(LocalWriteResult::Success(existing.record.version.clone()));
        }
        if opts.compress {
            let Payload::Full(value) = &record.payload else {
                unreachable!("new records are materialized");
            };
            record.payload = self.compress_in(&shard, &record.parents, value);
        }
        let size = record.payload.stored_len();
        match opts.role {
            Role::Primary => {
                if shard.region.used + size > shard.region.capacity {
                    drop(shard);
                    return self
                        .redirect_tag(&record.key)
                        .map(LocalWriteResult::Redirect);
                }
                shard.region.used += size;
            }
            Role::Replica => shard.replica_bytes += size,
        }
        let version = record.version.clone();
        shard.records.insert(
            version.h,
            Stored {
                record,
                role: opts.role,
            },
        );
        Ok(LocalWriteResult::Success(version))
    }

    /// Random node-tag that places `key` on some other node.
    fn redirect_tag(&self, key: &[u8]) -> Result<NodeTag> {
        let mut rng = self.rng.lock();
        for _ in 0..REDIRECT_ATTEMPTS {
            let eta = rng.next_u64().to_be_bytes().to_vec();
            if self.ring.primary(key, &eta) != self.node {
                return Ok(eta);
            }
        }
        Err(Error::RegionExhaustedNoAlternative)
    }

    /// Chooses the payload for a new value derived from `parents`: a delta
    /// against the nearest full ancestor stored on this node, or the value
    /// itself when no such ancestor exists or the delta would not be smaller.
    pub fn compress_value(&self, key: &[u8], parents: &[VersionId], value: &[u8]) -> Payload {
        match self.existing_shard(key) {
            Some(s) => self.compress_in(&s.lock(), parents, value),
            None => Payload::Full(value.to_vec()),
        }
    }

    fn compress_in(&self, shard: &KeyShard, parents: &[VersionId], value: &[u8]) -> Payload {
        let Some(base) = nearest_full_ancestor(shard, parents) else {
            return Payload::Full(value.to_vec());
        };
        let Payload::Full(base_value) = &base.payload else {
            unreachable!()
        };
        let delta = self.codec.encode(base_value, value);
        if delta.len() < value.len() {
            Payload::Delta {
                base: base.version.clone(),
                delta,
            }
        } else {
            Payload::Full(value.to_vec())
        }
    }

    fn materialize(&self, shard: &KeyShard, record: &NodeRecord) -> Result<NodeRecord> {
        match &record.payload {
            Payload::Full(_) => Ok(record.clone()),
            Payload::Delta { base, delta } => {
                let base_rec = shard
                    .records
                    .get(&base.h)
                    .map(|s| &s.record)
                    .ok_or_else(|| Error::CorruptDelta(base.clone()))?;
                let Payload::Full(base_value) = &base_rec.payload else {
                    return Err(Error::CorruptDelta(base.clone()));
                };
                let value = self.codec.decode(base_value, delta)?;
                Ok(NodeRecord {
                    payload: Payload::Full(value),
                    ..record.clone()
                })
            }
        }
    }

    /// Materializes a stored record's value.
    pub fn decompress_value(&self, record: &NodeRecord) -> Result<Vec<u8>> {
        let full = match &record.payload {
            Payload::Full(v) => return Ok(v.clone()),
            Payload::Delta { base, .. } => {
                let shard = self
                    .existing_shard(&record.key)
                    .ok_or_else(|| Error::CorruptDelta(base.clone()))?;
                let shard = shard.lock();
                self.materialize(&shard, record)?
            }
        };
        Ok(full.value().unwrap().to_vec())
    }

    fn lookup(&self, key: &[u8], v: &VersionId) -> Result<Option<NodeRecord>> {
        let Some(shard) = self.existing_shard(key) else {
            return Ok(None);
        };
        let shard = shard.lock();
        match shard.records.get(&v.h) {
            Some(s) if s.record.version.l == v.l => Ok(Some(self.materialize(&shard, &s.record)?)),
            _ => Ok(None),
        }
    }

    /// The stored record for `v`, materialized.
    pub fn get_record(&self, key: &[u8], v: &VersionId) -> Result<NodeRecord> {
        if v.is_root() {
            return Err(Error::NotFound);
        }
        self.lookup(key, v)?.ok_or(Error::NotFound)
    }

    pub fn local_get(&self, key: &[u8], v: &VersionId) -> Result<Vec<u8>> {
        let r = self.get_record(key, v)?;
        Ok(r.value().unwrap().to_vec())
    }

    pub fn contains(&self, key: &[u8], v: &VersionId) -> bool {
        self.existing_shard(key).is_some_and(|s| {
            s.lock()
                .records
                .get(&v.h)
                .is_some_and(|r| r.record.version.l == v.l)
        })
    }

    /// The raw stored record, payload left as stored.
    pub fn stored_record(&self, key: &[u8], v: &VersionId) -> Option<NodeRecord> {
        let shard = self.existing_shard(key)?;
        let shard = shard.lock();
        shard
            .records
            .get(&v.h)
            .filter(|s| s.record.version.l == v.l)
            .map(|s| s.record.clone())
    }

    fn lookup_cached(&self, key: &[u8], v: &VersionId) -> Option<CachedRecord> {
        self.cache
            .lock()
            .get(&(key.to_vec(), v.h))
            .filter(|c| c.record.version.l == v.l)
    }

    /// Resolves a version locally or from the cache, subject to `readable`.
    fn resolve(
        &self,
        key: &[u8],
        v: &VersionId,
        readable: &dyn Fn(&NodeRecord, Source) -> bool,
    ) -> Result<Resolved> {
        if let Some(r) = self.lookup(key, v)? {
            return Ok(if readable(&r, Source::Local) {
                Resolved::Record(r)
            } else {
                Resolved::Denied
            });
        }
        if let Some(c) = self.lookup_cached(key, v) {
            let src = Source::Cached {
                restricted: c.restricted,
            };
            if readable(&c.record, src) {
                return Ok(Resolved::Record(c.record));
            }
        }
        Ok(Resolved::Missing)
    }

    /// Walks single-parent predecessors of `start`.
    ///
    /// With `inclusive`, `start` itself is the first record of the result;
    /// peers use this to continue a scan that crossed onto them. Stops after
    /// `m` records, right after a merge record, at ROOT, or when the next
    /// predecessor is neither stored nor cached here.
    pub fn local_scan_k(
        &self,
        key: &[u8],
        start: &VersionId,
        m: usize,
        inclusive: bool,
        readable: &dyn Fn(&NodeRecord, Source) -> bool,
    ) -> Result<ScanOutcome> {
        if m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        let mut records = Vec::new();
        let first = match self.resolve(key, start, readable)? {
            Resolved::Record(r) => r,
            Resolved::Denied if inclusive => {
                return Ok(ScanOutcome {
                    records,
                    terminator: ScanTerminator::Denied(start.clone()),
                    boundary: None,
                })
            }
            Resolved::Denied => self.lookup(key, start)?.ok_or(Error::NotFound)?,
            Resolved::Missing => return Err(Error::NotFound),
        };
        let done = |records: &Vec<NodeRecord>, r: &NodeRecord| {
            if r.is_merge() {
                Some(ScanTerminator::HitMerge)
            } else if records.len() >= m {
                Some(ScanTerminator::CountM)
            } else {
                None
            }
        };
        let mut cur = first;
        if inclusive {
            records.push(cur.clone());
            if let Some(t) = done(&records, &cur) {
                return Ok(ScanOutcome {
                    records,
                    terminator: t,
                    boundary: None,
                });
            }
        } else if cur.is_merge() {
            return Ok(ScanOutcome {
                records,
                terminator: ScanTerminator::HitMerge,
                boundary: None,
            });
        }
        loop {
            let parent = cur.parents[0].clone();
            if parent.is_root() {
                return Ok(ScanOutcome {
                    records,
                    terminator: ScanTerminator::ReachedRoot,
                    boundary: None,
                });
            }
            let next = match self.resolve(key, &parent, readable)? {
                Resolved::Record(r) => r,
                Resolved::Denied => {
                    return Ok(ScanOutcome {
                        records,
                        terminator: ScanTerminator::Denied(parent),
                        boundary: None,
                    })
                }
                Resolved::Missing => {
                    return Ok(ScanOutcome {
                        records,
                        terminator: ScanTerminator::NeedRemote(parent),
                        boundary: Some((key.to_vec(), cur.version.h)),
                    })
                }
            };
            records.push(next.clone());
            if let Some(t) = done(&records, &next) {
                return Ok(ScanOutcome {
                    records,
                    terminator: t,
                    boundary: None,
                });
            }
            cur = next;
        }
    }

    /// Immediate predecessors of `v` (ROOT omitted), from the local index or
    /// the cache. `Err(NeedRemote)`-style misses are reported per parent.
    pub fn local_previous(
        &self,
        key: &[u8],
        v: &VersionId,
        readable: &dyn Fn(&NodeRecord, Source) -> bool,
    ) -> Result<(NodeRecord, Vec<PrevLookup>)> {
        let rec = self.get_record(key, v)?;
        let mut out = Vec::new();
        for p in rec.parents.iter().filter(|p| !p.is_root()) {
            out.push(match self.resolve(key, p, readable)? {
                Resolved::Record(r) => PrevLookup::Found(r),
                Resolved::Denied => PrevLookup::Denied(p.clone()),
                Resolved::Missing => PrevLookup::Remote(p.clone()),
            });
        }
        Ok((rec, out))
    }

    /// Caches remote predecessors of the local record `owner`. Records whose
    /// primary placement is this node, or that are stored here, are skipped.
    pub fn cache_remote(&self, owner: &RecordRef, records: &[CachedRecord]) -> usize {
        let mut cache = self.cache.lock();
        let mut n = 0;
        for c in records.iter().take(MAX_PER_RECORD) {
            let r = &c.record;
            if !r.payload.is_full()
                || self.ring.primary(&r.key, &r.version.n) == self.node
                || self.contains(&r.key, &r.version)
            {
                continue;
            }
            if cache.insert(owner.clone(), c.clone()) {
                n += 1;
            }
        }
        n
    }

    pub fn set_region_capacity(&self, key: &[u8], new_t: u64) -> Result<()> {
        if new_t == 0 {
            return Err(Error::InvalidArgument("capacity must be positive".into()));
        }
        let shard = self.shard(key);
        let mut shard = shard.lock();
        if new_t < shard.region.used {
            return Err(Error::BelowUsage {
                requested: new_t,
                used: shard.region.used,
            });
        }
        shard.region.capacity = new_t;
        Ok(())
    }

    pub fn region(&self, key: &[u8]) -> RegionState {
        match self.existing_shard(key) {
            Some(s) => s.lock().region.clone(),
            None => RegionState {
                capacity: self.default_t,
                used: 0,
            },
        }
    }

    pub fn stats(&self) -> StoreStats {
        let mut keys = BTreeMap::new();
        for (k, s) in self.shards.read().iter() {
            let s = s.lock();
            let full = s
                .records
                .values()
                .filter(|r| r.record.payload.is_full())
                .count() as u64;
            keys.insert(
                String::from_utf8_lossy(k).into_owned(),
                KeyStats {
                    used: s.region.used,
                    capacity: s.region.capacity,
                    records: s.records.len() as u64,
                    full_records: full,
                    delta_records: s.records.len() as u64 - full,
                    replica_bytes: s.replica_bytes,
                },
            );
        }
        let cache = self.cache.lock();
        StoreStats {
            keys,
            cache_entries: cache.len() as u64,
            cache_bytes: cache.bytes(),
            cache_hits: cache.hits(),
            cache_misses: cache.misses(),
        }
    }

    /// Every stored record of `key`, payloads as stored. Sorted by version.
    pub fn records(&self, key: &[u8]) -> Vec<NodeRecord> {
        let mut out: Vec<NodeRecord> = match self.existing_shard(key) {
            Some(s) => s
                .lock()
                .records
                .values()
                .map(|s| s.record.clone())
                .collect(),
            None => Vec::new(),
        };
        out.sort_by(|a, b| a.version.cmp(&b.version));
        out
    }

    pub fn keys(&self) -> Vec<Vec<u8>> {
        let mut k: Vec<_> = self.shards.read().keys().cloned().collect();
        k.sort();
        k
    }

    /// Whether the stored copy of `v` was written in the primary role.
    pub fn is_primary_copy(&self, key: &[u8], v: &VersionId) -> bool {
        self.existing_shard(key).is_some_and(|s| {
            s.lock()
                .records
                .get(&v.h)
                .is_some_and(|r| r.role == Role::Primary)
        })
    }

    /// Drops all state (crash with data loss).
    pub fn erase(&self) {
        self.shards.write().clear();
        self.cache.lock().clear();
    }
}

enum Resolved {
    Record(NodeRecord),
    Denied,
    Missing,
}

#[derive(Clone, Debug)]
pub enum PrevLookup {
    Found(NodeRecord),
    Denied(VersionId),
    Remote(VersionId),
}

fn nearest_full_ancestor<'a>(shard: &'a KeyShard, parents: &[VersionId]) -> Option<&'a NodeRecord> {
    let mut queue: VecDeque<&VersionId> = parents.iter().collect();
    let mut seen = std::collections::HashSet::new();
    while let Some(v) = queue.pop_front() {
        if v.is_root() || !seen.insert(v.h) {
            continue;
        }
        let Some(s) = shard.records.get(&v.h) else {
            continue;
        };
        if s.record.payload.is_full() {
            return Some(&s.record);
        }
        queue.extend(s.record.parents.iter());
    }
    None
}
