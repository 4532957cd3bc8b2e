//! Bounded cache of remote predecessors fetched during scans.
//!
//! Records are immutable, so a cached copy never goes stale. Each locally
//! stored record may have at most two cached predecessors attributed to it;
//! eviction is LRU over the whole cache under a byte budget.

use std::collections::{BTreeMap, HashMap};

use crate::record::NodeRecord;
use crate::version::Digest;

pub const DEFAULT_CACHE_BYTES: u64 = 4 << 20;
pub const MAX_PER_RECORD: usize = 2;

pub type RecordRef = (Vec<u8>, Digest);

#[derive(Clone, Debug)]
pub struct CachedRecord {
    pub record: NodeRecord,
    /// The key was access-controlled at the node that served the record.
    pub restricted: bool,
}

struct Entry {
    cached: CachedRecord,
    tick: u64,
    size: u64,
    owner: RecordRef,
}

pub struct PredecessorCache {
    budget: u64,
    used: u64,
    tick: u64,
    entries: HashMap<RecordRef, Entry>,
    lru: BTreeMap<u64, RecordRef>,
    attributed: HashMap<RecordRef, Vec<RecordRef>>,
    hits: u64,
    misses: u64,
}

fn entry_size(r: &NodeRecord) -> u64 {
    r.payload.stored_len() + r.key.len() as u64 + 64
}

impl PredecessorCache {
    pub fn new(budget: u64) -> Self {
        PredecessorCache {
            budget,
            used: 0,
            tick: 0,
            entries: HashMap::new(),
            lru: BTreeMap::new(),
            attributed: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn get(&mut self, id: &RecordRef) -> Option<CachedRecord> {
        self.tick += 1;
        let tick = self.tick;
        match self.entries.get_mut(id) {
            Some(e) => {
                self.lru.remove(&e.tick);
                e.tick = tick;
                self.lru.insert(tick, id.clone());
                self.hits += 1;
                Some(e.cached.clone())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn contains(&self, id: &RecordRef) -> bool {
        self.entries.contains_key(id)
    }

    /// Caches `cached` as a remote predecessor of the local record `owner`.
    /// Returns false when the owner already has its quota or the record does
    /// not fit the budget at all.
    pub fn insert(&mut self, owner: RecordRef, cached: CachedRecord) -> bool {
        let id = (cached.record.key.clone(), cached.record.version.h);
        if self.entries.contains_key(&id) {
            return true;
        }
        let slots = self.attributed.entry(owner.clone()).or_default();
        if slots.len() >= MAX_PER_RECORD {
            return false;
        }
        let size = entry_size(&cached.record);
        if size > self.budget {
            return false;
        }
        slots.push(id.clone());
        self.tick += 1;
        self.lru.insert(self.tick, id.clone());
        self.used += size;
        self.entries.insert(
            id,
            Entry {
                cached,
                tick: self.tick,
                size,
                owner,
            },
        );
        while self.used > self.budget {
            let (_, victim) = self.lru.pop_first().expect("non-empty while over budget");
            self.evict(&victim);
        }
        true
    }

    fn evict(&mut self, id: &RecordRef) {
        if let Some(e) = self.entries.remove(id) {
            self.used -= e.size;
            if let Some(slots) = self.attributed.get_mut(&e.owner) {
                slots.retain(|s| s != id);
                if slots.is_empty() {
                    self.attributed.remove(&e.owner);
                }
            }
        }
    }

    pub fn attributed_to(&self, owner: &RecordRef) -> usize {
        self.attributed.get(owner).map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bytes(&self) -> u64 {
        self.used
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn clear(&mut self) {
        *self = PredecessorCache::new(self.budget);
    }
}
