use std::collections::{BTreeSet, HashMap};

use parking_lot::Mutex;

use super::{Snapshot, TxnId, TxnService};
use crate::error::{Error, Result};
use crate::version::VersionId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Active,
    Committed,
    Aborted,
}

#[derive(Clone, Debug)]
struct AvEntry {
    version: VersionId,
    tid: TxnId,
    /// Queue-less latch: the holder, if any.
    latch: Option<TxnId>,
}

impl Default for AvEntry {
    fn default() -> Self {
        AvEntry {
            version: VersionId::ROOT,
            tid: 0,
            latch: None,
        }
    }
}

#[derive(Default)]
struct Inner {
    last_tid: TxnId,
    outcomes: HashMap<TxnId, Outcome>,
    max_committed: TxnId,
    /// Issued tids that have not committed (active or aborted).
    uncommitted: BTreeSet<TxnId>,
    av: HashMap<Vec<u8>, AvEntry>,
}

/// Transaction coordinator and active version table in one linearizable
/// service: every call takes a single lock for its whole duration.
#[derive(Default)]
pub struct Coordinator {
    inner: Mutex<Inner>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CoordinatorStats {
    pub started: u64,
    pub committed: u64,
    pub aborted: u64,
    pub active: u64,
    pub av_rows: u64,
}

impl Coordinator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> CoordinatorStats {
        let g = self.inner.lock();
        let count = |o| g.outcomes.values().filter(|&&x| x == o).count() as u64;
        CoordinatorStats {
            started: g.last_tid,
            committed: count(Outcome::Committed),
            aborted: count(Outcome::Aborted),
            active: count(Outcome::Active),
            av_rows: g.av.len() as u64,
        }
    }

    /// Current latch holder of `key`, for invariant checks.
    pub fn latch_holder(&self, key: &[u8]) -> Option<TxnId> {
        self.inner.lock().av.get(key).and_then(|e| e.latch)
    }

    fn finish(&self, tid: TxnId, to: Outcome) -> Result<()> {
        let mut g = self.inner.lock();
        match g.outcomes.get(&tid) {
            None => Err(Error::UnknownTid(tid)),
            Some(Outcome::Active) => {
                g.outcomes.insert(tid, to);
                if to == Outcome::Committed {
                    g.uncommitted.remove(&tid);
                    g.max_committed = g.max_committed.max(tid);
                }
                Ok(())
            }
            Some(_) => Err(Error::AlreadyTerminal(tid)),
        }
    }
}

impl TxnService for Coordinator {
    fn start_txn(&self) -> Result<(TxnId, Snapshot)> {
        let mut g = self.inner.lock();
        let high_water = g.max_committed;
        let excluded = g.uncommitted.range(..=high_water).copied().collect();
        g.last_tid += 1;
        let tid = g.last_tid;
        g.outcomes.insert(tid, Outcome::Active);
        g.uncommitted.insert(tid);
        Ok((
            tid,
            Snapshot {
                high_water,
                excluded,
            },
        ))
    }

    fn set_committed(&self, tid: TxnId) -> Result<()> {
        self.finish(tid, Outcome::Committed)
    }

    fn set_aborted(&self, tid: TxnId) -> Result<()> {
        self.finish(tid, Outcome::Aborted)
    }

    fn get_latest_version(&self, key: &[u8]) -> Result<(VersionId, TxnId)> {
        let g = self.inner.lock();
        Ok(g.av
            .get(key)
            .map_or((VersionId::ROOT, 0), |e| (e.version.clone(), e.tid)))
    }

    fn set_latest_version(&self, key: &[u8], version: &VersionId, tid: TxnId) -> Result<()> {
        let mut g = self.inner.lock();
        let e = g.av.entry(key.to_vec()).or_default();
        if e.latch != Some(tid) {
            return Err(Error::LatchNotHeld(
                String::from_utf8_lossy(key).into_owned(),
            ));
        }
        e.version = version.clone();
        e.tid = tid;
        Ok(())
    }

    fn acquire_version_lock(&self, key: &[u8], tid: TxnId) -> Result<bool> {
        let mut g = self.inner.lock();
        let e = g.av.entry(key.to_vec()).or_default();
        match e.latch {
            None => {
                e.latch = Some(tid);
                Ok(true)
            }
            Some(holder) => Ok(holder == tid),
        }
    }

    fn release_version_lock(&self, key: &[u8], tid: TxnId) -> Result<()> {
        let mut g = self.inner.lock();
        if let Some(e) = g.av.get_mut(key) {
            if e.latch == Some(tid) {
                e.latch = None;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_snapshot_is_empty() {
        let c = Coordinator::new();
        let (tid, s) = c.start_txn().unwrap();
        assert_eq!(tid, 1);
        assert!(!s.contains(1));
        assert!(s.contains(0));
    }

    #[test]
    fn committed_is_visible_to_later_begins() {
        let c = Coordinator::new();
        let (t1, _) = c.start_txn().unwrap();
        let (t2, _) = c.start_txn().unwrap();
        c.set_committed(t2).unwrap();
        let (_, s) = c.start_txn().unwrap();
        assert!(s.contains(t2));
        assert!(!s.contains(t1));
        c.set_aborted(t1).unwrap();
        let (_, s) = c.start_txn().unwrap();
        assert!(!s.contains(t1));
        assert!(s.contains(t2));
    }

    #[test]
    fn terminal_states_are_absorbing() {
        let c = Coordinator::new();
        let (t, _) = c.start_txn().unwrap();
        c.set_committed(t).unwrap();
        assert_eq!(c.set_committed(t), Err(Error::AlreadyTerminal(t)));
        assert_eq!(c.set_aborted(t), Err(Error::AlreadyTerminal(t)));
        assert_eq!(c.set_committed(99), Err(Error::UnknownTid(99)));
    }

    #[test]
    fn latches_are_try_locks() {
        let c = Coordinator::new();
        assert!(c.acquire_version_lock(b"k", 1).unwrap());
        assert!(!c.acquire_version_lock(b"k", 2).unwrap());
        // a non-holder release leaves the latch alone
        c.release_version_lock(b"k", 2).unwrap();
        assert_eq!(c.latch_holder(b"k"), Some(1));
        c.release_version_lock(b"k", 1).unwrap();
        assert!(c.acquire_version_lock(b"k", 2).unwrap());
    }

    #[test]
    fn set_latest_requires_latch() {
        let c = Coordinator::new();
        let v = crate::version::derive_put_version(b"k", &VersionId::ROOT, b"x", b"");
        assert!(c.set_latest_version(b"k", &v, 1).is_err());
        c.acquire_version_lock(b"k", 1).unwrap();
        c.set_latest_version(b"k", &v, 1).unwrap();
        assert_eq!(c.get_latest_version(b"k").unwrap(), (v, 1));
        assert_eq!(c.get_latest_version(b"new").unwrap(), (VersionId::ROOT, 0));
    }

    #[test]
    fn concurrent_begins_get_distinct_tids() {
        let c = std::sync::Arc::new(Coordinator::new());
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let c = c.clone();
                std::thread::spawn(move || {
                    (0..125)
                        .map(|_| c.start_txn().unwrap().0)
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<u64> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 1000);
    }
}
