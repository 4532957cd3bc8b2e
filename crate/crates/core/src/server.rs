//! A storage server: request dispatch over a node store, access control,
//! the notification broker and (on one designated node) the transaction
//! coordinator.
//!
//! Locks are never held across calls to other servers.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::client::{Client, ClusterParams};
use crate::error::{Error, Result};
use crate::record::NodeRecord;
use crate::ring::{NodeId, Ring};
use crate::store::{
    CachedRecord, LocalWriteResult, NodeStore, PrevLookup, RecordRef, ScanTerminator, Source,
    StoreStats, WriteOpts,
};
use crate::transport::{rpc, Endpoint, Transport};
use crate::txn::{
    Coordinator, CoordinatorStats, TxnContext, TxnDriver, TxnId, TxnService, TxnState,
};
use crate::version::{derive_merge_version, derive_put_version, VersionId};
use crate::view::acl::{AclStats, AclTable, Policy};
use crate::view::notify::{Broker, BrokerStats};
use crate::wire::{Body, Reply, Request, Response, TxnEndMode, WireRecord};

#[derive(Clone, Debug)]
pub struct ServerOptions {
    pub default_t: u64,
    pub cache_bytes: u64,
    pub seed: u64,
    pub host_coordinator: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerStats {
    pub node: u32,
    pub store: StoreStats,
    pub acl: AclStats,
    pub notify: BrokerStats,
    pub coordinator: Option<CoordinatorStats>,
    pub open_sessions: u64,
}

pub struct Server {
    id: NodeId,
    store: NodeStore,
    params: ClusterParams,
    acl: RwLock<AclTable>,
    broker: Mutex<Broker>,
    coordinator: Option<Coordinator>,
    sessions: Mutex<HashMap<TxnId, TxnContext>>,
}

impl Server {
    pub fn new(id: NodeId, ring: Arc<Ring>, params: ClusterParams, opts: &ServerOptions) -> Server {
        Server {
            id,
            store: NodeStore::new(id, ring, opts.default_t, opts.cache_bytes, opts.seed),
            params,
            acl: RwLock::new(AclTable::new()),
            broker: Mutex::new(Broker::new()),
            coordinator: opts.host_coordinator.then(Coordinator::new),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn store(&self) -> &NodeStore {
        &self.store
    }

    pub fn broker(&self) -> &Mutex<Broker> {
        &self.broker
    }

    pub fn coordinator(&self) -> Option<&Coordinator> {
        self.coordinator.as_ref()
    }

    pub fn stats(&self) -> ServerStats {
        ServerStats {
            node: self.id.0,
            store: self.store.stats(),
            acl: self.acl.read().stats(),
            notify: self.broker.lock().stats(),
            coordinator: self.coordinator.as_ref().map(Coordinator::stats),
            open_sessions: self.sessions.lock().len() as u64,
        }
    }

    /// Decodes a request frame, serves it and encodes the response.
    pub fn handle_frame(&self, frame: &[u8], net: &dyn Transport) -> Vec<u8> {
        let resp = match Request::decode(frame) {
            Ok(req) => self.handle(&req, net),
            Err(e) => Response::from_error(&e),
        };
        resp.encode()
    }

    pub fn handle(&self, req: &Request, net: &dyn Transport) -> Response {
        log::trace!("{} <- {:?}", self.id, req.body.opcode());
        match self.dispatch(req, net) {
            Ok(r) => r,
            Err(e) => Response::from_error(&e),
        }
    }

    fn dispatch(&self, req: &Request, net: &dyn Transport) -> Result<Response> {
        let user = req.user.as_str();
        let ok = |r: Reply| Ok(Response::Ok(r));
        match &req.body {
            Body::Put {
                key,
                parent,
                value,
                compress,
                tag,
                role,
            } => {
                let tag = tag.clone().unwrap_or_else(|| parent.n.clone());
                let v = derive_put_version(key, parent, value, &tag);
                let opts = WriteOpts {
                    compress: *compress,
                    tag: Some(tag),
                    role: *role,
                };
                self.write(key, &v, || self.store.local_put(key, parent, value, &opts))
            }
            Body::Merge {
                key,
                v1,
                v2,
                value,
                compress,
                tag,
                role,
            } => {
                let tag = tag.clone().unwrap_or_else(|| v1.n.clone());
                let v = derive_merge_version(key, v1, v2, value, &tag)?;
                let opts = WriteOpts {
                    compress: *compress,
                    tag: Some(tag),
                    role: *role,
                };
                self.write(key, &v, || {
                    self.store.local_merge(key, v1, v2, value, &opts)
                })
            }
            Body::Get { key, version } => {
                let r = self.store.get_record(key, version)?;
                if !self.acl.read().check_read(user, key, version) {
                    return Err(Error::Denied);
                }
                ok(Reply::Value(r.value().unwrap().to_vec()))
            }
            Body::GetPrev { key, version } => self.get_previous(user, key, version, net),
            Body::GetKPrev {
                key,
                version,
                m,
                inclusive,
            } => self.scan(user, key, version, *m as usize, *inclusive, net),
            Body::Subscribe { app_id, key } => {
                self.broker.lock().subscribe(app_id, key);
                ok(Reply::Ack)
            }
            Body::PolicyPut {
                key,
                grantee,
                versions,
            } => {
                let policy = Policy {
                    user: grantee.clone(),
                    versions: versions.clone(),
                };
                self.acl
                    .write()
                    .put_policy(user, key, policy, |v| self.store.contains(key, v))?;
                ok(Reply::Ack)
            }
            Body::AdminSetT { key, capacity } => {
                let t = match capacity {
                    0 => self.store.region(key).capacity.saturating_mul(2),
                    &c => c,
                };
                self.store.set_region_capacity(key, t)?;
                ok(Reply::Ack)
            }
            Body::Stats => ok(Reply::Stats(serde_json::to_string(&self.stats())?)),
            _ => self.dispatch_txn(&req.body, net),
        }
    }

    fn write(
        &self,
        key: &[u8],
        expected: &VersionId,
        op: impl FnOnce() -> Result<LocalWriteResult>,
    ) -> Result<Response> {
        let fresh = !self.store.contains(key, expected);
        match op()? {
            LocalWriteResult::Success(v) => {
                if fresh {
                    self.broker.lock().publish(key, &v);
                }
                Ok(Response::Ok(Reply::Version(v)))
            }
            LocalWriteResult::Redirect(eta) => Ok(Response::Redirect(eta)),
        }
    }

    fn wire(&self, records: Vec<NodeRecord>) -> Vec<WireRecord> {
        let restricted = records
            .first()
            .is_some_and(|r| self.acl.read().is_restricted(&r.key));
        records
            .into_iter()
            .map(|record| WireRecord { record, restricted })
            .collect()
    }

    /// Read rule for records consulted by scans: local copies follow the
    /// local policies; cached copies of restricted keys need a local grant,
    /// otherwise they are treated as absent and fetched from their home.
    fn readable<'s>(
        &'s self,
        acl: &'s AclTable,
        user: &'s str,
    ) -> impl Fn(&NodeRecord, Source) -> bool + 's {
        move |r, src| match src {
            Source::Local => acl.check_read(user, &r.key, &r.version),
            Source::Cached { restricted } => {
                if restricted || acl.is_restricted(&r.key) {
                    acl.grants(user, &r.key, &r.version)
                } else {
                    true
                }
            }
        }
    }

    fn cache(&self, owner: &RecordRef, records: &[WireRecord]) {
        let cached: Vec<CachedRecord> = records
            .iter()
            .map(|w| CachedRecord {
                record: w.record.clone(),
                restricted: w.restricted,
            })
            .collect();
        self.store.cache_remote(owner, &cached);
    }

    /// Continues a scan at `next` on the nodes that store it.
    fn forward_scan(
        &self,
        user: &str,
        key: &[u8],
        next: &VersionId,
        m: usize,
        net: &dyn Transport,
    ) -> Option<(Vec<WireRecord>, ScanTerminator)> {
        for node in self.store.ring().route(key, &next.n, self.params.n) {
            if node == self.id {
                continue;
            }
            let req = Request::new(
                user,
                Body::GetKPrev {
                    key: key.to_vec(),
                    version: next.clone(),
                    m: m as u32,
                    inclusive: true,
                },
            );
            match rpc(net, Endpoint::Node(self.id), node, &req) {
                Ok(Response::Ok(Reply::Scan {
                    records,
                    terminator,
                })) => return Some((records, terminator)),
                Ok(Response::Denied) => {
                    return Some((Vec::new(), ScanTerminator::Denied(next.clone())))
                }
                _ => {}
            }
        }
        None
    }

    fn scan(
        &self,
        user: &str,
        key: &[u8],
        start: &VersionId,
        m: usize,
        inclusive: bool,
        net: &dyn Transport,
    ) -> Result<Response> {
        let outcome = {
            let acl = self.acl.read();
            let readable = self.readable(&acl, user);
            self.store
                .local_scan_k(key, start, m, inclusive, &readable)?
        };
        if inclusive && outcome.records.is_empty() {
            if let ScanTerminator::Denied(_) = outcome.terminator {
                return Err(Error::Denied);
            }
        }
        let mut records = self.wire(outcome.records);
        let mut terminator = outcome.terminator;
        if let (ScanTerminator::NeedRemote(next), Some(boundary)) = (&terminator, &outcome.boundary)
        {
            if let Some((more, t)) = self.forward_scan(user, key, next, m - records.len(), net) {
                self.cache(boundary, &more);
                records.extend(more);
                terminator = t;
            }
        }
        Ok(Response::Ok(Reply::Scan {
            records,
            terminator,
        }))
    }

    fn get_previous(
        &self,
        user: &str,
        key: &[u8],
        v: &VersionId,
        net: &dyn Transport,
    ) -> Result<Response> {
        let (rec, lookups) = {
            let acl = self.acl.read();
            let readable = self.readable(&acl, user);
            self.store.local_previous(key, v, &readable)?
        };
        let owner: RecordRef = (key.to_vec(), rec.version.h);
        let mut out = Vec::new();
        for l in lookups {
            match l {
                PrevLookup::Found(r) => out.extend(self.wire(vec![r])),
                PrevLookup::Denied(_) => return Err(Error::Denied),
                PrevLookup::Remote(p) => match self.forward_scan(user, key, &p, 1, net) {
                    Some((rs, _)) if !rs.is_empty() => {
                        self.cache(&owner, &rs[..1]);
                        out.push(rs[0].clone());
                    }
                    Some((_, ScanTerminator::Denied(_))) => return Err(Error::Denied),
                    _ => return Err(Error::NotFound),
                },
            }
        }
        Ok(Response::Ok(Reply::Records(out)))
    }

    fn dispatch_txn(&self, body: &Body, net: &dyn Transport) -> Result<Response> {
        let coord = self.coordinator.as_ref().ok_or(Error::NoCoordinator)?;
        let ok = |r: Reply| Ok(Response::Ok(r));
        match body {
            Body::TxnBegin => {
                let (tid, snapshot) = coord.start_txn()?;
                self.sessions
                    .lock()
                    .insert(tid, TxnContext::new(tid, snapshot.clone()));
                ok(Reply::TxnStarted { tid, snapshot })
            }
            Body::TxnRead { tid, key } => {
                let v = self.with_session(*tid, net, |d, ctx| d.read(ctx, key))?;
                ok(Reply::Value(v))
            }
            Body::TxnWrite { tid, key, value } => {
                self.with_session(*tid, net, |d, ctx| d.write(ctx, key, value))?;
                ok(Reply::Ack)
            }
            Body::TxnCommit { tid, mode } => match mode {
                TxnEndMode::MarkOnly => {
                    self.sessions.lock().remove(tid);
                    coord.set_committed(*tid)?;
                    ok(Reply::Flag(true))
                }
                TxnEndMode::Session => {
                    let state = self.with_session(*tid, net, |d, ctx| d.commit(ctx))?;
                    self.sessions.lock().remove(tid);
                    ok(Reply::Flag(state == TxnState::Committed))
                }
            },
            Body::TxnAbort { tid, mode } => {
                match mode {
                    TxnEndMode::MarkOnly => coord.set_aborted(*tid)?,
                    TxnEndMode::Session => self.with_session(*tid, net, |d, ctx| d.abort(ctx))?,
                }
                self.sessions.lock().remove(tid);
                ok(Reply::Ack)
            }
            Body::AvGet { key } => {
                let (version, tid) = coord.get_latest_version(key)?;
                ok(Reply::Latest { version, tid })
            }
            Body::AvSet { key, version, tid } => {
                coord.set_latest_version(key, version, *tid)?;
                ok(Reply::Ack)
            }
            Body::AvLock { key, tid } => ok(Reply::Flag(coord.acquire_version_lock(key, *tid)?)),
            Body::AvUnlock { key, tid } => {
                coord.release_version_lock(key, *tid)?;
                ok(Reply::Ack)
            }
            other => Err(Error::Malformed(format!(
                "opcode {:#04x} not handled",
                other.opcode()
            ))),
        }
    }

    /// Runs `f` on a hosted transaction. The context is taken out of the
    /// session table for the duration so no lock spans store calls.
    fn with_session<T>(
        &self,
        tid: TxnId,
        net: &dyn Transport,
        f: impl FnOnce(&TxnDriver<'_>, &mut TxnContext) -> Result<T>,
    ) -> Result<T> {
        let coord = self.coordinator.as_ref().ok_or(Error::NoCoordinator)?;
        let mut ctx = self
            .sessions
            .lock()
            .remove(&tid)
            .ok_or(Error::UnknownTid(tid))?;
        let client =
            Client::new(net, self.store.ring().clone(), self.params.clone(), "").acting_as(self.id);
        let out = f(&TxnDriver::new(coord, &client), &mut ctx);
        self.sessions.lock().insert(tid, ctx);
        out
    }
}
