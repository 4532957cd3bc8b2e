//! Snapshot-isolation transactions over the versioned store.
//!
//! A coordinator hands out transaction ids and snapshots; an active version
//! table (AV) maps each key to its latest committed version and the id of
//! the transaction that committed it, guarded by queue-less latches. Writes
//! go to the store immediately as private branches and become visible only
//! when commit installs them in the AV.

mod coordinator;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use coordinator::{Coordinator, CoordinatorStats};

use crate::error::{Error, Result};
use crate::version::VersionId;

pub type TxnId = u64;

/// Committed transactions visible to a snapshot: every tid up to
/// `high_water` except those in `excluded`. Tid 0 stands for "never written"
/// and is visible to everyone.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub high_water: TxnId,
    pub excluded: BTreeSet<TxnId>,
}

impl Snapshot {
    pub fn contains(&self, tid: TxnId) -> bool {
        tid == 0 || (tid <= self.high_water && !self.excluded.contains(&tid))
    }
}

/// Coordinator and active-version-table operations.
pub trait TxnService {
    fn start_txn(&self) -> Result<(TxnId, Snapshot)>;
    fn set_committed(&self, tid: TxnId) -> Result<()>;
    fn set_aborted(&self, tid: TxnId) -> Result<()>;
    fn get_latest_version(&self, key: &[u8]) -> Result<(VersionId, TxnId)>;
    /// Caller must hold the key's latch.
    fn set_latest_version(&self, key: &[u8], version: &VersionId, tid: TxnId) -> Result<()>;
    /// Non-blocking; `false` on contention.
    fn acquire_version_lock(&self, key: &[u8], tid: TxnId) -> Result<bool>;
    /// No-op unless `tid` holds the latch.
    fn release_version_lock(&self, key: &[u8], tid: TxnId) -> Result<()>;
}

/// The storage operations transactions need.
pub trait VersionedStore {
    fn put(&self, key: &[u8], parent: &VersionId, value: &[u8]) -> Result<VersionId>;
    fn get(&self, key: &[u8], version: &VersionId) -> Result<Vec<u8>>;
    fn merge(&self, key: &[u8], v1: &VersionId, v2: &VersionId, value: &[u8]) -> Result<VersionId>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxnState {
    Active,
    Committed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteEntry {
    /// Latest committed version the write was based on.
    pub base: VersionId,
    /// Private version returned by the store.
    pub version: VersionId,
    pub value: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct TxnContext {
    pub tid: TxnId,
    pub snapshot: Snapshot,
    pub write_set: BTreeMap<Vec<u8>, WriteEntry>,
    pub state: TxnState,
    held: Vec<Vec<u8>>,
}

impl TxnContext {
    pub fn new(tid: TxnId, snapshot: Snapshot) -> Self {
        TxnContext {
            tid,
            snapshot,
            write_set: BTreeMap::new(),
            state: TxnState::Active,
            held: Vec::new(),
        }
    }

    fn ensure_active(&self) -> Result<()> {
        match self.state {
            TxnState::Active => Ok(()),
            TxnState::Aborted => Err(Error::TxnAborted),
            TxnState::Committed => Err(Error::AlreadyTerminal(self.tid)),
        }
    }

    /// Latches currently held (between commit phases).
    pub fn held_latches(&self) -> &[Vec<u8>] {
        &self.held
    }
}

/// Runs transaction primitives against a coordinator and a store.
pub struct TxnDriver<'a> {
    pub svc: &'a dyn TxnService,
    pub store: &'a dyn VersionedStore,
}

impl<'a> TxnDriver<'a> {
    pub fn new(svc: &'a dyn TxnService, store: &'a dyn VersionedStore) -> Self {
        TxnDriver { svc, store }
    }

    pub fn begin(&self) -> Result<TxnContext> {
        let (tid, snapshot) = self.svc.start_txn()?;
        Ok(TxnContext::new(tid, snapshot))
    }

    pub fn read(&self, ctx: &mut TxnContext, key: &[u8]) -> Result<Vec<u8>> {
        ctx.ensure_active()?;
        if let Some(w) = ctx.write_set.get(key) {
            return Ok(w.value.clone());
        }
        let (latest, commit_tid) = self.svc.get_latest_version(key)?;
        if !ctx.snapshot.contains(commit_tid) {
            self.abort(ctx)?;
            return Err(Error::TxnAborted);
        }
        if latest.is_root() {
            return Err(Error::KeyUninitialized);
        }
        self.store.get(key, &latest)
    }

    pub fn write(&self, ctx: &mut TxnContext, key: &[u8], value: &[u8]) -> Result<()> {
        ctx.ensure_active()?;
        let base = match ctx.write_set.get(key) {
            Some(w) => w.base.clone(),
            None => {
                let (latest, commit_tid) = self.svc.get_latest_version(key)?;
                if !ctx.snapshot.contains(commit_tid) {
                    self.abort(ctx)?;
                    return Err(Error::TxnAborted);
                }
                latest
            }
        };
        let version = self.store.put(key, &base, value)?;
        ctx.write_set.insert(
            key.to_vec(),
            WriteEntry {
                base,
                version,
                value: value.to_vec(),
            },
        );
        Ok(())
    }

    fn release_all(&self, ctx: &mut TxnContext) -> Result<()> {
        for key in std::mem::take(&mut ctx.held) {
            self.svc.release_version_lock(&key, ctx.tid)?;
        }
        Ok(())
    }

    fn fail_commit(&self, ctx: &mut TxnContext) -> Result<TxnState> {
        self.release_all(ctx)?;
        self.abort(ctx)?;
        Ok(TxnState::Aborted)
    }

    /// Commit phase 1: latch every written key in key order. A single
    /// failed try-lock aborts the transaction.
    pub fn commit_acquire(&self, ctx: &mut TxnContext) -> Result<TxnState> {
        ctx.ensure_active()?;
        let keys: Vec<Vec<u8>> = ctx.write_set.keys().cloned().collect();
        for key in keys {
            if self.svc.acquire_version_lock(&key, ctx.tid)? {
                ctx.held.push(key);
            } else {
                return self.fail_commit(ctx);
            }
        }
        Ok(TxnState::Active)
    }

    /// Commit phase 2: validate every key against the snapshot, then
    /// install the new versions. Validation completes before any install so
    /// a failed check never leaves a partial commit behind.
    pub fn commit_install(&self, ctx: &mut TxnContext) -> Result<TxnState> {
        ctx.ensure_active()?;
        let mut latest = Vec::with_capacity(ctx.write_set.len());
        for key in ctx.write_set.keys() {
            let (v, commit_tid) = self.svc.get_latest_version(key)?;
            if !ctx.snapshot.contains(commit_tid) {
                return self.fail_commit(ctx);
            }
            latest.push(v);
        }
        for ((key, w), latest) in ctx.write_set.iter().zip(latest) {
            let installed = if latest.same_content(&w.base) || latest.same_content(&w.version) {
                w.version.clone()
            } else {
                // choose-one in favour of this transaction's value
                self.store.merge(key, &latest, &w.version, &w.value)?
            };
            self.svc.set_latest_version(key, &installed, ctx.tid)?;
        }
        Ok(TxnState::Active)
    }

    /// Commit phase 3: release latches and report the commit.
    pub fn commit_finish(&self, ctx: &mut TxnContext) -> Result<TxnState> {
        ctx.ensure_active()?;
        self.release_all(ctx)?;
        self.svc.set_committed(ctx.tid)?;
        ctx.state = TxnState::Committed;
        Ok(TxnState::Committed)
    }

    pub fn commit(&self, ctx: &mut TxnContext) -> Result<TxnState> {
        for phase in [
            Self::commit_acquire,
            Self::commit_install,
            Self::commit_finish,
        ] {
            if phase(self, ctx)? == TxnState::Aborted {
                return Ok(TxnState::Aborted);
            }
        }
        Ok(TxnState::Committed)
    }

    /// Marks the transaction aborted. Its private versions stay in the
    /// store as unreferenced branches; the AV is untouched.
    pub fn abort(&self, ctx: &mut TxnContext) -> Result<()> {
        if ctx.state != TxnState::Active {
            return Ok(());
        }
        self.release_all(ctx)?;
        ctx.state = TxnState::Aborted;
        self.svc.set_aborted(ctx.tid)
    }
}

/// A single node used directly as the transaction store.
impl VersionedStore for crate::store::NodeStore {
    fn put(&self, key: &[u8], parent: &VersionId, value: &[u8]) -> Result<VersionId> {
        match self.local_put(key, parent, value, &Default::default())? {
            crate::store::LocalWriteResult::Success(v) => Ok(v),
            crate::store::LocalWriteResult::Redirect(_) => Err(Error::RegionExhaustedNoAlternative),
        }
    }

    fn get(&self, key: &[u8], version: &VersionId) -> Result<Vec<u8>> {
        self.local_get(key, version)
    }

    fn merge(&self, key: &[u8], v1: &VersionId, v2: &VersionId, value: &[u8]) -> Result<VersionId> {
        match self.local_merge(key, v1, v2, value, &Default::default())? {
            crate::store::LocalWriteResult::Success(v) => Ok(v),
            crate::store::LocalWriteResult::Redirect(_) => Err(Error::RegionExhaustedNoAlternative),
        }
    }
}

#[cfg(test)]
mod tests;
