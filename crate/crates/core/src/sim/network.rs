//! Deterministic in-process network of servers.
//!
//! Frames are handed to servers synchronously in call order, so a run is a
//! pure function of its inputs. The network counts every frame, applies a
//! logical-time fault schedule and can drop frames at a seeded rate.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::{Client, ClusterParams};
use crate::error::{Error, Result};
use crate::ring::{NodeId, Ring};
use crate::server::{Server, ServerOptions};
use crate::transport::{Endpoint, Transport};
use crate::view::notify::Aggregator;
use crate::wire::split_frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Partitioned: frames to and from the node are lost; state survives.
    Down,
    /// Loses all state at `from`, unreachable until `to`.
    CrashErase,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub node: u32,
    pub from: u64,
    pub to: u64,
    pub kind: FaultKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NetCounters {
    /// Frames sent by clients (each is one client round trip).
    pub client_frames: u64,
    /// Frames one server sent to another.
    pub server_frames: u64,
    /// Frames lost to down nodes.
    pub refused: u64,
    /// Frames lost to the random drop rate.
    pub dropped: u64,
    pub bytes: u64,
    pub by_opcode: BTreeMap<String, u64>,
}

struct NetState {
    clock: u64,
    faults: Vec<Fault>,
    erased: BTreeSet<usize>,
    manual_down: BTreeSet<NodeId>,
    drop_rate: f64,
    rng: ChaCha8Rng,
    counters: NetCounters,
}

impl NetState {
    fn is_down(&self, node: NodeId) -> bool {
        self.manual_down.contains(&node)
            || self
                .faults
                .iter()
                .any(|f| f.node == node.0 && f.from <= self.clock && self.clock < f.to)
    }
}

pub struct SimNetwork {
    servers: BTreeMap<NodeId, Arc<Server>>,
    ring: Arc<Ring>,
    params: ClusterParams,
    state: Mutex<NetState>,
}

pub(crate) fn opcode_name(op: u8) -> String {
    use crate::wire::opcode::*;
    match op {
        PUT => "put",
        GET => "get",
        MERGE => "merge",
        GETPREV => "get_prev",
        GETKPREV => "get_k_prev",
        SUBSCRIBE => "subscribe",
        POLICY_PUT => "policy_put",
        ADMIN_SET_T => "admin_set_t",
        STATS => "stats",
        TXN_BEGIN => "txn_begin",
        TXN_READ => "txn_read",
        TXN_WRITE => "txn_write",
        TXN_COMMIT => "txn_commit",
        TXN_ABORT => "txn_abort",
        AV_GET => "av_get",
        AV_SET => "av_set",
        AV_LOCK => "av_lock",
        AV_UNLOCK => "av_unlock",
        _ => "unknown",
    }
    .to_string()
}

#[derive(Clone, Debug)]
pub struct ClusterSpec {
    pub nodes: u32,
    pub params: ClusterParams,
    pub virtual_points: usize,
    pub server: ServerOptions,
}

impl SimNetwork {
    /// Nodes `0..spec.nodes`; node 0 hosts the coordinator when
    /// `spec.server.host_coordinator` is set.
    pub fn new(spec: &ClusterSpec) -> Result<SimNetwork> {
        spec.params.validate()?;
        let ids: Vec<NodeId> = (0..spec.nodes).map(NodeId).collect();
        let ring = Arc::new(Ring::new(&ids, spec.virtual_points)?);
        let mut params = spec.params.clone();
        if spec.server.host_coordinator {
            params.coordinator = Some(NodeId(0));
        }
        let servers = ids
            .iter()
            .map(|&id| {
                let opts = ServerOptions {
                    host_coordinator: spec.server.host_coordinator && id.0 == 0,
                    ..spec.server.clone()
                };
                (
                    id,
                    Arc::new(Server::new(id, ring.clone(), params.clone(), &opts)),
                )
            })
            .collect();
        Ok(SimNetwork {
            servers,
            ring,
            params,
            state: Mutex::new(NetState {
                clock: 0,
                faults: Vec::new(),
                erased: BTreeSet::new(),
                manual_down: BTreeSet::new(),
                drop_rate: 0.0,
                rng: ChaCha8Rng::seed_from_u64(spec.server.seed),
                counters: NetCounters::default(),
            }),
        })
    }

    pub fn ring(&self) -> &Arc<Ring> {
        &self.ring
    }

    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    pub fn client(&self, user: &str) -> Client<'_> {
        Client::new(self, self.ring.clone(), self.params.clone(), user)
    }

    pub fn server(&self, id: NodeId) -> &Arc<Server> {
        &self.servers[&id]
    }

    pub fn servers(&self) -> impl Iterator<Item = &Arc<Server>> {
        self.servers.values()
    }

    pub fn set_faults(&self, faults: Vec<Fault>) {
        self.state.lock().faults = faults;
        self.apply_faults();
    }

    pub fn set_drop_rate(&self, rate: f64) {
        self.state.lock().drop_rate = rate;
    }

    pub fn set_down(&self, node: NodeId, down: bool) {
        let mut s = self.state.lock();
        if down {
            s.manual_down.insert(node);
        } else {
            s.manual_down.remove(&node);
        }
    }

    /// Wipes a node's stored records, as after a crash without persistence.
    pub fn erase(&self, node: NodeId) {
        self.servers[&node].store().erase();
    }

    pub fn is_down(&self, node: NodeId) -> bool {
        self.state.lock().is_down(node)
    }

    pub fn clock(&self) -> u64 {
        self.state.lock().clock
    }

    /// Advances logical time and applies any crash that is now due.
    pub fn set_clock(&self, t: u64) {
        self.state.lock().clock = t;
        self.apply_faults();
    }

    fn apply_faults(&self) {
        let due: Vec<NodeId> = {
            let mut s = self.state.lock();
            let clock = s.clock;
            let due: Vec<(usize, u32)> = s
                .faults
                .iter()
                .enumerate()
                .filter(|(i, f)| {
                    f.kind == FaultKind::CrashErase && f.from <= clock && !s.erased.contains(i)
                })
                .map(|(i, f)| (i, f.node))
                .collect();
            due.into_iter()
                .map(|(i, n)| {
                    s.erased.insert(i);
                    NodeId(n)
                })
                .collect()
        };
        for n in due {
            if self.servers.contains_key(&n) {
                self.erase(n);
            }
        }
    }

    pub fn counters(&self) -> NetCounters {
        self.state.lock().counters.clone()
    }

    pub fn reset_counters(&self) {
        self.state.lock().counters = NetCounters::default();
    }

    /// Delivers queued notifications from every reachable server. Each
    /// delivery and each acknowledgement is lost with probability
    /// `drop_rate`; unacknowledged events are offered again next time.
    pub fn pump_notifications(
        &self,
        aggregators: &mut BTreeMap<String, Aggregator>,
        drop_rate: f64,
    ) {
        for (&id, server) in &self.servers {
            if self.is_down(id) {
                continue;
            }
            let apps = server.broker().lock().apps_with_pending();
            for app in apps {
                let events = server.broker().lock().pending(&app, usize::MAX);
                let mut acked = BTreeSet::new();
                for e in events {
                    let (delivered, ack_ok) = {
                        let mut s = self.state.lock();
                        let d = !s.rng.random_bool(drop_rate);
                        (d, d && !s.rng.random_bool(drop_rate))
                    };
                    if delivered {
                        aggregators
                            .entry(app.clone())
                            .or_default()
                            .deliver(&e.key, &e.version);
                    }
                    if ack_ok {
                        acked.insert(e.seq);
                    }
                }
                server.broker().lock().ack(&app, &acked);
            }
        }
    }
}

impl Transport for SimNetwork {
    fn call(&self, from: Endpoint, to: NodeId, frame: &[u8]) -> Result<Vec<u8>> {
        let server = self
            .servers
            .get(&to)
            .ok_or_else(|| Error::Transport(format!("unknown node {to}")))?;
        {
            let mut s = self.state.lock();
            let op = split_frame(frame).map(|(op, _)| op).unwrap_or(0);
            let c = &mut s.counters;
            match from {
                Endpoint::Client => c.client_frames += 1,
                Endpoint::Node(_) => c.server_frames += 1,
            }
            c.bytes += frame.len() as u64;
            *c.by_opcode.entry(opcode_name(op)).or_default() += 1;
            let sender_down = matches!(from, Endpoint::Node(n) if s.is_down(n));
            if sender_down || s.is_down(to) {
                s.counters.refused += 1;
                return Err(Error::Transport(format!("{to} unreachable")));
            }
            if s.drop_rate > 0.0 {
                let rate = s.drop_rate;
                if s.rng.random_bool(rate) {
                    s.counters.dropped += 1;
                    return Err(Error::Transport("frame dropped".into()));
                }
            }
        }
        Ok(server.handle_frame(frame, self))
    }
}
