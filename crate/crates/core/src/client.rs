//! Cluster client: routing, quorum writes with the redirect loop, replica
//! fallback reads and multi-node scans.

use std::cell::Cell;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::NodeRecord;
use crate::ring::{NodeId, Ring};
use crate::server::ServerStats;
use crate::store::{Role, ScanTerminator};
use crate::transport::{rpc, Endpoint, Transport};
use crate::txn::{Snapshot, TxnId, TxnService, VersionedStore};
use crate::version::{NodeTag, VersionId};
use crate::view::DagReader;
use crate::wire::{Body, ErrorCode, Reply, Request, Response, TxnEndMode};

pub const DEFAULT_REDIRECT_LIMIT: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Replica count.
    pub n: usize,
    /// Write quorum.
    pub w: usize,
    /// Redirects followed before asking the primary to grow its region.
    pub redirect_limit: usize,
    /// Node hosting the transaction coordinator.
    pub coordinator: Option<NodeId>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            n: 3,
            w: 2,
            redirect_limit: DEFAULT_REDIRECT_LIMIT,
            coordinator: None,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.w == 0 || self.w > self.n {
            return Err(Error::ConfigInvalid(format!(
                "need 1 <= W <= N, got N={} W={}",
                self.n, self.w
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    pub round_trips: u64,
    pub redirects: u64,
    pub capacity_grows: u64,
}

/// A client session. Not thread-safe; open one per execution stream.
pub struct Client<'a> {
    net: &'a dyn Transport,
    ring: Arc<Ring>,
    params: ClusterParams,
    user: String,
    from: Endpoint,
    grow_on_redirect: bool,
    stats: Cell<ClientStats>,
}

enum WriteKind<'v> {
    Put(&'v VersionId),
    Merge(&'v VersionId, &'v VersionId),
}

impl<'a> Client<'a> {
    pub fn new(net: &'a dyn Transport, ring: Arc<Ring>, params: ClusterParams, user: &str) -> Self {
        Client {
            net,
            ring,
            params,
            user: user.to_string(),
            from: Endpoint::Client,
            grow_on_redirect: false,
            stats: Cell::new(ClientStats::default()),
        }
    }

    /// Marks requests as sent by a server acting on a client's behalf.
    pub fn acting_as(mut self, node: NodeId) -> Self {
        self.from = Endpoint::Node(node);
        self
    }

    /// On REDIRECT, grow the primary's region instead of moving to another
    /// node. Keeps content-addressed writes under their predictable tag.
    pub fn grow_on_redirect(mut self, yes: bool) -> Self {
        self.grow_on_redirect = yes;
        self
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn ring(&self) -> &Arc<Ring> {
        &self.ring
    }

    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    pub fn stats(&self) -> ClientStats {
        self.stats.get()
    }

    fn bump(&self, f: impl FnOnce(&mut ClientStats)) {
        let mut s = self.stats.get();
        f(&mut s);
        self.stats.set(s);
    }

    fn request(&self, to: NodeId, body: Body) -> Result<Response> {
        self.bump(|s| s.round_trips += 1);
        rpc(
            self.net,
            self.from,
            to,
            &Request::new(self.user.clone(), body),
        )
    }

    pub fn route(&self, key: &[u8], tag: &[u8]) -> Vec<NodeId> {
        self.ring.route(key, tag, self.params.n)
    }

    pub fn put(
        &self,
        key: &[u8],
        parent: &VersionId,
        value: &[u8],
        compress: bool,
    ) -> Result<VersionId> {
        self.write(key, WriteKind::Put(parent), value, compress)
    }

    /// Merge of `v1` and `v2`, routed by `v1`'s tag.
    pub fn merge(
        &self,
        key: &[u8],
        v1: &VersionId,
        v2: &VersionId,
        value: &[u8],
        compress: bool,
    ) -> Result<VersionId> {
        if v1.same_content(v2) {
            return Err(Error::EqualParents);
        }
        self.write(key, WriteKind::Merge(v1, v2), value, compress)
    }

    fn write(
        &self,
        key: &[u8],
        kind: WriteKind<'_>,
        value: &[u8],
        compress: bool,
    ) -> Result<VersionId> {
        let (mut tag, op) = match kind {
            WriteKind::Put(p) => (p.n.clone(), crate::wire::opcode::PUT),
            WriteKind::Merge(v1, _) => (v1.n.clone(), crate::wire::opcode::MERGE),
        };
        let mut redirects = 0;
        loop {
            let route = self.route(key, &tag);
            let body = |role: Role| match kind {
                WriteKind::Put(parent) => Body::Put {
                    key: key.to_vec(),
                    parent: parent.clone(),
                    value: value.to_vec(),
                    compress,
                    tag: Some(tag.clone()),
                    role,
                },
                WriteKind::Merge(v1, v2) => Body::Merge {
                    key: key.to_vec(),
                    v1: v1.clone(),
                    v2: v2.clone(),
                    value: value.to_vec(),
                    compress,
                    tag: Some(tag.clone()),
                    role,
                },
            };
            let request = |i: usize| {
                let role = if i == 0 { Role::Primary } else { Role::Replica };
                Request::new(self.user.clone(), body(role)).encode()
            };
            // the primary decides placement before any replica stores a copy
            self.bump(|s| s.round_trips += 1);
            let mut results = vec![self.net.call(self.from, route[0], &request(0))];
            let mut redirect: Option<NodeTag> = None;
            let mut exhausted = false;
            if let Ok(frame) = &results[0] {
                match Response::decode(op, frame)? {
                    Response::Redirect(eta) => redirect = Some(eta),
                    Response::Error(ErrorCode::RegionExhausted, _) => exhausted = true,
                    _ => {}
                }
            }
            if redirect.is_none() && !exhausted {
                let calls: Vec<(NodeId, Vec<u8>)> = route
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, &node)| (node, request(i)))
                    .collect();
                self.bump(|s| s.round_trips += calls.len() as u64);
                results.extend(self.net.call_many(self.from, &calls));
            }
            let mut acked = 0;
            let mut version = None;
            for r in results {
                let Ok(frame) = r else { continue };
                match Response::decode(op, &frame)? {
                    Response::Ok(Reply::Version(v)) => {
                        acked += 1;
                        version.get_or_insert(v);
                    }
                    Response::Error(ErrorCode::EqualParents, _) => return Err(Error::EqualParents),
                    Response::Error(ErrorCode::InvalidArgument, m) => {
                        return Err(Error::InvalidArgument(m))
                    }
                    _ => {}
                }
            }
            if let Some(eta) = redirect {
                redirects += 1;
                self.bump(|s| s.redirects += 1);
                if self.grow_on_redirect || redirects > self.params.redirect_limit {
                    self.grow_region(route[0], key)?;
                } else {
                    tag = eta;
                }
                continue;
            }
            if exhausted {
                self.grow_region(route[0], key)?;
                continue;
            }
            let required = self.params.w;
            return match version {
                Some(v) if acked >= required => Ok(v.with_tag(tag)),
                _ => Err(Error::QuorumUnavailable { acked, required }),
            };
        }
    }

    /// Doubles `key`'s region on `node`.
    pub fn grow_region(&self, node: NodeId, key: &[u8]) -> Result<()> {
        self.bump(|s| s.capacity_grows += 1);
        self.set_capacity(node, key, 0)
    }

    /// Sets `key`'s region capacity on `node`; 0 doubles it.
    pub fn set_capacity(&self, node: NodeId, key: &[u8], capacity: u64) -> Result<()> {
        self.request(
            node,
            Body::AdminSetT {
                key: key.to_vec(),
                capacity,
            },
        )?
        .into_reply()
        .map(|_| ())
    }

    pub fn get(&self, key: &[u8], v: &VersionId) -> Result<Vec<u8>> {
        for node in self.route(key, &v.n) {
            let body = Body::Get {
                key: key.to_vec(),
                version: v.clone(),
            };
            match self.request(node, body) {
                Ok(Response::Ok(Reply::Value(value))) => return Ok(value),
                Ok(Response::Denied) => return Err(Error::Denied),
                _ => {}
            }
        }
        Err(Error::NotFoundEverywhere)
    }

    /// Immediate predecessors of `v` with their values; ROOT omitted.
    pub fn get_previous(&self, key: &[u8], v: &VersionId) -> Result<Vec<(VersionId, Vec<u8>)>> {
        Ok(self
            .previous_records(key, v)?
            .into_iter()
            .map(|r| {
                let value = r.value().unwrap_or_default().to_vec();
                (r.version, value)
            })
            .collect())
    }

    fn previous_records(&self, key: &[u8], v: &VersionId) -> Result<Vec<NodeRecord>> {
        for node in self.route(key, &v.n) {
            let body = Body::GetPrev {
                key: key.to_vec(),
                version: v.clone(),
            };
            match self.request(node, body) {
                Ok(Response::Ok(Reply::Records(rs))) => {
                    return Ok(rs.into_iter().map(|r| r.record).collect())
                }
                Ok(Response::Denied) => return Err(Error::Denied),
                _ => {}
            }
        }
        Err(Error::NotFoundEverywhere)
    }

    fn scan_once(
        &self,
        key: &[u8],
        start: &VersionId,
        m: usize,
        inclusive: bool,
    ) -> Result<(Vec<NodeRecord>, ScanTerminator)> {
        for node in self.route(key, &start.n) {
            let body = Body::GetKPrev {
                key: key.to_vec(),
                version: start.clone(),
                m: m as u32,
                inclusive,
            };
            match self.request(node, body) {
                Ok(Response::Ok(Reply::Scan {
                    records,
                    terminator,
                })) => return Ok((records.into_iter().map(|r| r.record).collect(), terminator)),
                Ok(Response::Denied) => return Err(Error::Denied),
                _ => {}
            }
        }
        Err(Error::NotFoundEverywhere)
    }

    /// Up to `m` predecessors of `v`, following single-parent links and
    /// stopping after a merge record, at ROOT, or at an unreadable version.
    /// Servers continue across nodes themselves; the client only resumes
    /// when a server could not reach the next node.
    pub fn get_k_previous(
        &self,
        key: &[u8],
        v: &VersionId,
        m: usize,
    ) -> Result<(Vec<NodeRecord>, ScanTerminator)> {
        if m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        let mut out = Vec::new();
        let mut start = v.clone();
        let mut inclusive = false;
        loop {
            let (records, term) = match self.scan_once(key, &start, m - out.len(), inclusive) {
                Ok(r) => r,
                // a later version is unreachable or hidden: return what we have
                Err(Error::NotFoundEverywhere) if inclusive => {
                    return Ok((out, ScanTerminator::NeedRemote(start)))
                }
                Err(Error::Denied) if inclusive => return Ok((out, ScanTerminator::Denied(start))),
                Err(e) => return Err(e),
            };
            out.extend(records);
            match term {
                ScanTerminator::NeedRemote(next) if out.len() < m => {
                    start = next;
                    inclusive = true;
                }
                t => return Ok((out, t)),
            }
        }
    }

    /// Grants `grantee` read access to `versions`. Sent to every server;
    /// each keeps the grant only if it stores one of the versions.
    pub fn put_policy(&self, key: &[u8], grantee: &str, versions: &[VersionId]) -> Result<()> {
        let mut ok = false;
        for &node in self.ring.nodes() {
            let body = Body::PolicyPut {
                key: key.to_vec(),
                grantee: grantee.to_string(),
                versions: versions.to_vec(),
            };
            match self.request(node, body) {
                Ok(Response::Ok(_)) => ok = true,
                Ok(Response::Error(ErrorCode::NotOwner, _)) => return Err(Error::NotOwner),
                Ok(Response::Error(ErrorCode::InvalidArgument, m)) => {
                    return Err(Error::InvalidArgument(m))
                }
                _ => {}
            }
        }
        if ok {
            Ok(())
        } else {
            Err(Error::Transport("no server accepted the policy".into()))
        }
    }

    /// Registers `app_id` for new versions of `key` on every server.
    /// Returns how many servers accepted.
    pub fn subscribe(&self, app_id: &str, key: &[u8]) -> usize {
        self.ring
            .nodes()
            .iter()
            .filter(|&&node| {
                let body = Body::Subscribe {
                    app_id: app_id.to_string(),
                    key: key.to_vec(),
                };
                matches!(self.request(node, body), Ok(Response::Ok(_)))
            })
            .count()
    }

    pub fn server_stats(&self, node: NodeId) -> Result<ServerStats> {
        match self.request(node, Body::Stats)?.into_reply()? {
            Reply::Stats(json) => Ok(serde_json::from_str(&json)?),
            other => Err(Error::Malformed(format!("unexpected reply {other:?}"))),
        }
    }

    fn coordinator(&self) -> Result<NodeId> {
        self.params.coordinator.ok_or(Error::NoCoordinator)
    }

    fn txn_request(&self, body: Body) -> Result<Reply> {
        self.request(self.coordinator()?, body)?.into_reply()
    }

    /// Opens a transaction hosted by the coordinator's server.
    pub fn txn_begin(&self) -> Result<(TxnId, Snapshot)> {
        match self.txn_request(Body::TxnBegin)? {
            Reply::TxnStarted { tid, snapshot } => Ok((tid, snapshot)),
            other => Err(Error::Malformed(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn txn_read(&self, tid: TxnId, key: &[u8]) -> Result<Vec<u8>> {
        match self.txn_request(Body::TxnRead {
            tid,
            key: key.to_vec(),
        })? {
            Reply::Value(v) => Ok(v),
            other => Err(Error::Malformed(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn txn_write(&self, tid: TxnId, key: &[u8], value: &[u8]) -> Result<()> {
        self.txn_request(Body::TxnWrite {
            tid,
            key: key.to_vec(),
            value: value.to_vec(),
        })
        .map(|_| ())
    }

    /// Returns whether the transaction committed.
    pub fn txn_commit(&self, tid: TxnId) -> Result<bool> {
        match self.txn_request(Body::TxnCommit {
            tid,
            mode: TxnEndMode::Session,
        })? {
            Reply::Flag(b) => Ok(b),
            other => Err(Error::Malformed(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn txn_abort(&self, tid: TxnId) -> Result<()> {
        self.txn_request(Body::TxnAbort {
            tid,
            mode: TxnEndMode::Session,
        })
        .map(|_| ())
    }
}

impl VersionedStore for Client<'_> {
    fn put(&self, key: &[u8], parent: &VersionId, value: &[u8]) -> Result<VersionId> {
        Client::put(self, key, parent, value, false)
    }

    fn get(&self, key: &[u8], version: &VersionId) -> Result<Vec<u8>> {
        Client::get(self, key, version)
    }

    fn merge(&self, key: &[u8], v1: &VersionId, v2: &VersionId, value: &[u8]) -> Result<VersionId> {
        Client::merge(self, key, v1, v2, value, false)
    }
}

impl DagReader for Client<'_> {
    fn parents(&self, key: &[u8], v: &VersionId) -> Result<Vec<VersionId>> {
        Ok(self
            .previous_records(key, v)?
            .into_iter()
            .map(|r| r.version)
            .collect())
    }

    fn value(&self, key: &[u8], v: &VersionId) -> Result<Vec<u8>> {
        self.get(key, v)
    }

    fn merge(&self, key: &[u8], v1: &VersionId, v2: &VersionId, value: &[u8]) -> Result<VersionId> {
        Client::merge(self, key, v1, v2, value, false)
    }
}

/// The coordinator and active version table reached over the wire.
impl TxnService for Client<'_> {
    fn start_txn(&self) -> Result<(TxnId, Snapshot)> {
        self.txn_begin()
    }

    fn set_committed(&self, tid: TxnId) -> Result<()> {
        self.txn_request(Body::TxnCommit {
            tid,
            mode: TxnEndMode::MarkOnly,
        })
        .map(|_| ())
    }

    fn set_aborted(&self, tid: TxnId) -> Result<()> {
        self.txn_request(Body::TxnAbort {
            tid,
            mode: TxnEndMode::MarkOnly,
        })
        .map(|_| ())
    }

    fn get_latest_version(&self, key: &[u8]) -> Result<(VersionId, TxnId)> {
        match self.txn_request(Body::AvGet { key: key.to_vec() })? {
            Reply::Latest { version, tid } => Ok((version, tid)),
            other => Err(Error::Malformed(format!("unexpected reply {other:?}"))),
        }
    }

    fn set_latest_version(&self, key: &[u8], version: &VersionId, tid: TxnId) -> Result<()> {
        self.txn_request(Body::AvSet {
            key: key.to_vec(),
            version: version.clone(),
            tid,
        })
        .map(|_| ())
    }

    fn acquire_version_lock(&self, key: &[u8], tid: TxnId) -> Result<bool> {
        match self.txn_request(Body::AvLock {
            key: key.to_vec(),
            tid,
        })? {
            Reply::Flag(b) => Ok(b),
            other => Err(Error::Malformed(format!("unexpected reply {other:?}"))),
        }
    }

    fn release_version_lock(&self, key: &[u8], tid: TxnId) -> Result<()> {
        self.txn_request(Body::AvUnlock {
            key: key.to_vec(),
            tid,
        })
        .map(|_| ())
    }
}
