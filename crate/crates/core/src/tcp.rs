//! TCP transport and server loop.
//!
//! Connections carry the same frames as the simulator. A connection that
//! sends SUBSCRIBE turns into a one-way stream of event frames.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::Mutex;

use crate::config::ServerConfig;
use crate::error::{Error, Result};
use crate::ring::NodeId;
use crate::server::Server;
use crate::sim::NetCounters;
use crate::transport::{Endpoint, Transport};
use crate::version::VersionId;
use crate::wire::{self, read_frame, write_frame, Body, Request, Response};

pub const RPC_TIMEOUT: Duration = Duration::from_secs(1);
const PUSH_IDLE: Duration = Duration::from_millis(10);

pub struct TcpTransport {
    addrs: BTreeMap<NodeId, SocketAddr>,
    timeout: Duration,
    pool: Mutex<HashMap<NodeId, Vec<TcpStream>>>,
    counters: Mutex<NetCounters>,
}

impl TcpTransport {
    pub fn new(addrs: BTreeMap<NodeId, SocketAddr>) -> Self {
        TcpTransport {
            addrs,
            timeout: RPC_TIMEOUT,
            pool: Mutex::new(HashMap::new()),
            counters: Mutex::new(NetCounters::default()),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn addr(&self, node: NodeId) -> Option<SocketAddr> {
        self.addrs.get(&node).copied()
    }

    pub fn counters(&self) -> NetCounters {
        self.counters.lock().clone()
    }

    pub fn reset_counters(&self) {
        *self.counters.lock() = NetCounters::default();
    }

    fn connect(&self, to: NodeId) -> Result<TcpStream> {
        if let Some(s) = self.pool.lock().get_mut(&to).and_then(Vec::pop) {
            return Ok(s);
        }
        let addr = self
            .addrs
            .get(&to)
            .ok_or_else(|| Error::Transport(format!("no address for {to}")))?;
        let s = TcpStream::connect_timeout(addr, self.timeout)
            .map_err(|e| Error::Transport(format!("{to}: {e}")))?;
        s.set_nodelay(true)?;
        s.set_read_timeout(Some(self.timeout))?;
        s.set_write_timeout(Some(self.timeout))?;
        Ok(s)
    }

    fn exchange(&self, to: NodeId, frame: &[u8]) -> Result<Vec<u8>> {
        let mut s = self.connect(to)?;
        let io = |e: Error| Error::Transport(format!("{to}: {e}"));
        write_frame(&mut s, frame).map_err(io)?;
        let resp = read_frame(&mut s).map_err(io)?;
        self.pool.lock().entry(to).or_default().push(s);
        Ok(resp)
    }
}

impl Transport for TcpTransport {
    fn call(&self, from: Endpoint, to: NodeId, frame: &[u8]) -> Result<Vec<u8>> {
        {
            let mut c = self.counters.lock();
            match from {
                Endpoint::Client => c.client_frames += 1,
                Endpoint::Node(_) => c.server_frames += 1,
            }
            c.bytes += frame.len() as u64;
            let op = wire::split_frame(frame).map(|(op, _)| op).unwrap_or(0);
            *c.by_opcode
                .entry(crate::sim::network::opcode_name(op))
                .or_default() += 1;
        }
        let r = self.exchange(to, frame);
        if r.is_err() {
            self.counters.lock().refused += 1;
        }
        r
    }

    fn call_many(&self, from: Endpoint, calls: &[(NodeId, Vec<u8>)]) -> Vec<Result<Vec<u8>>> {
        thread::scope(|scope| {
            let handles: Vec<_> = calls
                .iter()
                .map(|(to, f)| scope.spawn(move || self.call(from, *to, f)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Transport("sender panicked".into())))
                })
                .collect()
        })
    }
}

/// A running server. Dropping the handle does not stop it; call `stop`.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub server: Arc<Server>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stop(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Serves `server` on `listener` until stopped. Peers are reached through
/// `net`.
pub fn serve(
    server: Arc<Server>,
    listener: TcpListener,
    net: Arc<TcpTransport>,
) -> Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let accept = {
        let (server, stop) = (server.clone(), stop.clone());
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let (server, net, stop) = (server.clone(), net.clone(), stop.clone());
                thread::spawn(move || {
                    if let Err(e) = connection(&server, conn, &*net, &stop) {
                        log::debug!("{}: connection closed: {e}", server.id());
                    }
                });
            }
        })
    };
    Ok(ServerHandle {
        addr,
        server,
        stop,
        accept: Some(accept),
    })
}

fn connection(
    server: &Server,
    conn: TcpStream,
    net: &dyn Transport,
    stop: &AtomicBool,
) -> Result<()> {
    conn.set_nodelay(true)?;
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut writer = BufWriter::new(conn);
    while !stop.load(Ordering::SeqCst) {
        let frame = read_frame(&mut reader)?;
        let req = match Request::decode(&frame) {
            Ok(r) => r,
            Err(e) => {
                write_frame(&mut writer, &Response::from_error(&e).encode())?;
                continue;
            }
        };
        let resp = server.handle(&req, net);
        write_frame(&mut writer, &resp.encode())?;
        if let (Body::Subscribe { app_id, .. }, Response::Ok(_)) = (&req.body, &resp) {
            return push_events(server, app_id, &mut writer, stop);
        }
    }
    Ok(())
}

fn push_events<W: std::io::Write>(
    server: &Server,
    app: &str,
    w: &mut W,
    stop: &AtomicBool,
) -> Result<()> {
    while !stop.load(Ordering::SeqCst) {
        let events = server.broker().lock().pending(app, 256);
        if events.is_empty() {
            thread::sleep(PUSH_IDLE);
            continue;
        }
        let mut sent = BTreeSet::new();
        for e in &events {
            write_frame(w, &wire::encode_event(&e.key, &e.version))?;
            sent.insert(e.seq);
        }
        server.broker().lock().ack(app, &sent);
    }
    Ok(())
}

/// Client end of a subscription stream on one server.
pub struct Subscription {
    stream: BufReader<TcpStream>,
}

impl Subscription {
    pub fn open(addr: SocketAddr, user: &str, app_id: &str, key: &[u8]) -> Result<Subscription> {
        let mut s = TcpStream::connect_timeout(&addr, RPC_TIMEOUT)?;
        s.set_read_timeout(Some(RPC_TIMEOUT))?;
        let req = Request::new(
            user,
            Body::Subscribe {
                app_id: app_id.to_string(),
                key: key.to_vec(),
            },
        );
        write_frame(&mut s, &req.encode())?;
        let resp = Response::decode(wire::opcode::SUBSCRIBE, &read_frame(&mut s)?)?;
        resp.into_reply()?;
        Ok(Subscription {
            stream: BufReader::new(s),
        })
    }

    /// Next event, waiting up to `timeout`.
    pub fn next_event(&mut self, timeout: Duration) -> Result<(Vec<u8>, VersionId)> {
        self.stream.get_ref().set_read_timeout(Some(timeout))?;
        wire::decode_event(&read_frame(&mut self.stream)?)
    }
}

/// Starts the node described by `cfg`.
pub fn run_server(cfg: &ServerConfig) -> Result<ServerHandle> {
    cfg.validate()?;
    let ring = cfg.ring()?;
    let net = Arc::new(TcpTransport::new(cfg.addrs()?));
    let server = Arc::new(Server::new(
        NodeId(cfg.node_id),
        ring,
        cfg.params(),
        &cfg.options(),
    ));
    let listener = TcpListener::bind(&cfg.listen_addr)?;
    serve(server, listener, net)
}

/// Starts `nodes` servers on loopback ports. Node 0 hosts the coordinator
/// when `params.coordinator` is set.
pub fn local_cluster(
    nodes: u32,
    params: &crate::client::ClusterParams,
    virtual_points: usize,
    opts: &crate::server::ServerOptions,
) -> Result<(Vec<ServerHandle>, Arc<TcpTransport>)> {
    let listeners: Vec<TcpListener> = (0..nodes)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<_>>()?;
    let addrs: BTreeMap<NodeId, SocketAddr> = listeners
        .iter()
        .enumerate()
        .map(|(i, l)| Ok((NodeId(i as u32), l.local_addr()?)))
        .collect::<Result<_>>()?;
    let ids: Vec<NodeId> = addrs.keys().copied().collect();
    let ring = Arc::new(crate::ring::Ring::new(&ids, virtual_points)?);
    let net = Arc::new(TcpTransport::new(addrs));
    let handles = listeners
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let id = NodeId(i as u32);
            let opts = crate::server::ServerOptions {
                host_coordinator: params.coordinator == Some(id),
                ..opts.clone()
            };
            let server = Arc::new(Server::new(id, ring.clone(), params.clone(), &opts));
            serve(server, l, net.clone())
        })
        .collect::<Result<_>>()?;
    Ok((handles, net))
}
