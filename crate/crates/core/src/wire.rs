//! Binary request/response protocol shared by the TCP server and the
//! in-process simulator.
//!
//! Every frame is `len:u32be ∥ tag:u8 ∥ body`, where `len` counts the tag
//! and the body. Requests carry an opcode in the tag byte and start their
//! body with the length-prefixed user id; responses carry a status byte.
//! Variable-length fields are `u32be` length-prefixed; versions use their
//! fixed wire form.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::record::{NodeRecord, Payload};
use crate::store::{Role, ScanTerminator};
use crate::txn::Snapshot;
use crate::version::{NodeTag, VersionId};

pub const MAX_FRAME: usize = 256 << 20;

pub mod opcode {
    pub const PUT: u8 = 0x01;
    pub const GET: u8 = 0x02;
    pub const MERGE: u8 = 0x03;
    pub const GETPREV: u8 = 0x04;
    pub const GETKPREV: u8 = 0x05;
    pub const SUBSCRIBE: u8 = 0x06;
    pub const POLICY_PUT: u8 = 0x07;
    pub const ADMIN_SET_T: u8 = 0x08;
    pub const STATS: u8 = 0x09;
    pub const TXN_BEGIN: u8 = 0x0A;
    pub const TXN_READ: u8 = 0x0B;
    pub const TXN_WRITE: u8 = 0x0C;
    pub const TXN_COMMIT: u8 = 0x0D;
    pub const TXN_ABORT: u8 = 0x0E;
    pub const AV_GET: u8 = 0x0F;
    pub const AV_SET: u8 = 0x10;
    pub const AV_LOCK: u8 = 0x11;
    pub const AV_UNLOCK: u8 = 0x12;
}

pub mod status {
    pub const SUCCESS: u8 = 0x00;
    pub const REDIRECT: u8 = 0x01;
    pub const NOTFOUND: u8 = 0x02;
    pub const DENIED: u8 = 0x03;
    pub const ERROR: u8 = 0x04;
}

/// How TXN_COMMIT / TXN_ABORT treat the transaction id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnEndMode {
    /// Run the commit/abort of a transaction hosted by the server.
    Session = 0,
    /// Only record the outcome with the coordinator; the caller ran the
    /// transaction itself.
    MarkOnly = 1,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Put {
        key: Vec<u8>,
        parent: VersionId,
        value: Vec<u8>,
        compress: bool,
        tag: Option<NodeTag>,
        role: Role,
    },
    Get {
        key: Vec<u8>,
        version: VersionId,
    },
    Merge {
        key: Vec<u8>,
        v1: VersionId,
        v2: VersionId,
        value: Vec<u8>,
        compress: bool,
        tag: Option<NodeTag>,
        role: Role,
    },
    GetPrev {
        key: Vec<u8>,
        version: VersionId,
    },
    GetKPrev {
        key: Vec<u8>,
        version: VersionId,
        m: u32,
        /// Include `version` itself; used when one node continues a scan
        /// on behalf of another.
        inclusive: bool,
    },
    Subscribe {
        app_id: String,
        key: Vec<u8>,
    },
    PolicyPut {
        key: Vec<u8>,
        grantee: String,
        versions: Vec<VersionId>,
    },
    AdminSetT {
        key: Vec<u8>,
        capacity: u64,
    },
    Stats,
    TxnBegin,
    TxnRead {
        tid: u64,
        key: Vec<u8>,
    },
    TxnWrite {
        tid: u64,
        key: Vec<u8>,
        value: Vec<u8>,
    },
    TxnCommit {
        tid: u64,
        mode: TxnEndMode,
    },
    TxnAbort {
        tid: u64,
        mode: TxnEndMode,
    },
    AvGet {
        key: Vec<u8>,
    },
    AvSet {
        key: Vec<u8>,
        version: VersionId,
        tid: u64,
    },
    AvLock {
        key: Vec<u8>,
        tid: u64,
    },
    AvUnlock {
        key: Vec<u8>,
        tid: u64,
    },
}

impl Body {
    pub fn opcode(&self) -> u8 {
        use opcode::*;
        match self {
            Body::Put { .. } => PUT,
            Body::Get { .. } => GET,
            Body::Merge { .. } => MERGE,
            Body::GetPrev { .. } => GETPREV,
            Body::GetKPrev { .. } => GETKPREV,
            Body::Subscribe { .. } => SUBSCRIBE,
            Body::PolicyPut { .. } => POLICY_PUT,
            Body::AdminSetT { .. } => ADMIN_SET_T,
            Body::Stats => STATS,
            Body::TxnBegin => TXN_BEGIN,
            Body::TxnRead { .. } => TXN_READ,
            Body::TxnWrite { .. } => TXN_WRITE,
            Body::TxnCommit { .. } => TXN_COMMIT,
            Body::TxnAbort { .. } => TXN_ABORT,
            Body::AvGet { .. } => AV_GET,
            Body::AvSet { .. } => AV_SET,
            Body::AvLock { .. } => AV_LOCK,
            Body::AvUnlock { .. } => AV_UNLOCK,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub user: String,
    pub body: Body,
}

impl Request {
    pub fn new(user: impl Into<String>, body: Body) -> Self {
        Request {
            user: user.into(),
            body,
        }
    }
}

/// A materialized record as it travels on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireRecord {
    pub record: NodeRecord,
    /// The serving node holds an access-control object for the key.
    pub restricted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reply {
    Version(VersionId),
    Value(Vec<u8>),
    Records(Vec<WireRecord>),
    Scan {
        records: Vec<WireRecord>,
        terminator: ScanTerminator,
    },
    Ack,
    Stats(String),
    TxnStarted {
        tid: u64,
        snapshot: Snapshot,
    },
    Latest {
        version: VersionId,
        tid: u64,
    },
    Flag(bool),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    Internal = 0,
    Malformed = 1,
    EqualParents = 2,
    RegionExhausted = 3,
    BelowUsage = 4,
    CorruptDelta = 5,
    NotOwner = 6,
    TxnAborted = 7,
    UnknownTid = 8,
    AlreadyTerminal = 9,
    KeyUninitialized = 10,
    NoCoordinator = 11,
    InvalidArgument = 12,
    LatchNotHeld = 13,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response {
    Ok(Reply),
    Redirect(NodeTag),
    NotFound,
    Denied,
    Error(ErrorCode, String),
}

impl Response {
    pub fn from_error(e: &Error) -> Response {
        let code = match e {
            Error::NotFound | Error::NotFoundEverywhere => return Response::NotFound,
            Error::Denied => return Response::Denied,
            Error::Malformed(_) => ErrorCode::Malformed,
            Error::EqualParents => ErrorCode::EqualParents,
            Error::RegionExhaustedNoAlternative => ErrorCode::RegionExhausted,
            Error::BelowUsage { .. } => ErrorCode::BelowUsage,
            Error::CorruptDelta(_) => ErrorCode::CorruptDelta,
            Error::NotOwner => ErrorCode::NotOwner,
            Error::TxnAborted => ErrorCode::TxnAborted,
            Error::UnknownTid(_) => ErrorCode::UnknownTid,
            Error::AlreadyTerminal(_) => ErrorCode::AlreadyTerminal,
            Error::KeyUninitialized => ErrorCode::KeyUninitialized,
            Error::NoCoordinator => ErrorCode::NoCoordinator,
            Error::InvalidArgument(_) => ErrorCode::InvalidArgument,
            Error::LatchNotHeld(_) => ErrorCode::LatchNotHeld,
            _ => ErrorCode::Internal,
        };
        Response::Error(code, e.to_string())
    }

    /// Maps non-success statuses back to errors.
    pub fn into_reply(self) -> Result<Reply> {
        match self {
            Response::Ok(r) => Ok(r),
            Response::Redirect(_) => Err(Error::Malformed("unexpected redirect".into())),
            Response::NotFound => Err(Error::NotFound),
            Response::Denied => Err(Error::Denied),
            Response::Error(code, msg) => Err(match code {
                ErrorCode::EqualParents => Error::EqualParents,
                ErrorCode::RegionExhausted => Error::RegionExhaustedNoAlternative,
                ErrorCode::NotOwner => Error::NotOwner,
                ErrorCode::TxnAborted => Error::TxnAborted,
                ErrorCode::KeyUninitialized => Error::KeyUninitialized,
                ErrorCode::NoCoordinator => Error::NoCoordinator,
                ErrorCode::Malformed => Error::Malformed(msg),
                ErrorCode::InvalidArgument => Error::InvalidArgument(msg),
                _ => Error::Remote(msg),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// primitive codec

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn version(&mut self, v: &VersionId) -> &mut Self {
        v.encode_into(&mut self.buf);
        self
    }

    pub fn versions(&mut self, vs: &[VersionId]) -> &mut Self {
        self.u32(vs.len() as u32);
        for v in vs {
            self.version(v);
        }
        self
    }

    fn opt_tag(&mut self, tag: &Option<NodeTag>) -> &mut Self {
        match tag {
            Some(t) => self.u8(1).bytes(t),
            None => self.u8(0),
        }
    }

    fn record(&mut self, r: &WireRecord) -> &mut Self {
        let rec = &r.record;
        let value = rec.value().expect("wire records are materialized");
        self.bytes(&rec.key).version(&rec.version);
        self.u8(rec.parents.len() as u8);
        for p in &rec.parents {
            self.version(p);
        }
        let flags = u8::from(rec.created_by_merge) | (u8::from(r.restricted) << 1);
        self.bytes(value).u8(flags)
    }

    fn records(&mut self, rs: &[WireRecord]) -> &mut Self {
        self.u32(rs.len() as u32);
        for r in rs {
            self.record(r);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Malformed("truncated frame".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Malformed(format!("bad boolean {b}"))),
        }
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?).map_err(|_| Error::Malformed("invalid utf-8".into()))
    }

    pub fn version(&mut self) -> Result<VersionId> {
        let (v, used) = VersionId::decode(&self.buf[self.pos..])?;
        self.pos += used;
        Ok(v)
    }

    pub fn versions(&mut self) -> Result<Vec<VersionId>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.version()).collect()
    }

    fn opt_tag(&mut self) -> Result<Option<NodeTag>> {
        Ok(if self.bool()? {
            Some(self.bytes()?)
        } else {
            None
        })
    }

    fn role(&mut self) -> Result<Role> {
        match self.u8()? {
            0 => Ok(Role::Primary),
            1 => Ok(Role::Replica),
            b => Err(Error::Malformed(format!("bad role {b}"))),
        }
    }

    fn record(&mut self) -> Result<WireRecord> {
        let key = self.bytes()?;
        let version = self.version()?;
        let np = self.u8()? as usize;
        if np == 0 || np > 2 {
            return Err(Error::Malformed(format!("record with {np} parents")));
        }
        let parents = (0..np)
            .map(|_| self.version())
            .collect::<Result<Vec<_>>>()?;
        let value = self.bytes()?;
        let flags = self.u8()?;
        Ok(WireRecord {
            record: NodeRecord {
                key,
                version,
                parents,
                payload: Payload::Full(value),
                created_by_merge: flags & 1 != 0,
            },
            restricted: flags & 2 != 0,
        })
    }

    fn records(&mut self) -> Result<Vec<WireRecord>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.record()).collect()
    }

    fn end_mode(&mut self) -> Result<TxnEndMode> {
        match self.u8()? {
            0 => Ok(TxnEndMode::Session),
            1 => Ok(TxnEndMode::MarkOnly),
            b => Err(Error::Malformed(format!("bad txn mode {b}"))),
        }
    }

    pub fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Malformed("trailing bytes".into()))
        }
    }
}

fn role_byte(r: Role) -> u8 {
    match r {
        Role::Primary => 0,
        Role::Replica => 1,
    }
}

fn frame(tag: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + body.len());
    out.extend_from_slice(&((body.len() + 1) as u32).to_be_bytes());
    out.push(tag);
    out.extend_from_slice(body);
    out
}

/// Splits a complete frame into its tag byte and body.
pub fn split_frame(frame: &[u8]) -> Result<(u8, &[u8])> {
    if frame.len() < 5 {
        return Err(Error::Malformed("short frame".into()));
    }
    let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    if len == 0 || len != frame.len() - 4 {
        return Err(Error::Malformed("frame length mismatch".into()));
    }
    Ok((frame[4], &frame[5..]))
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let n = u32::from_be_bytes(len) as usize;
    if n == 0 || n > MAX_FRAME {
        return Err(Error::Malformed(format!("frame length {n}")));
    }
    let mut out = vec![0u8; 4 + n];
    out[..4].copy_from_slice(&len);
    r.read_exact(&mut out[4..])?;
    Ok(out)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> Result<()> {
    w.write_all(frame)?;
    w.flush()?;
    Ok(())
}

impl Request {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(self.user.as_bytes());
        match &self.body {
            Body::Put {
                key,
                parent,
                value,
                compress,
                tag,
                role,
            } => {
                w.bytes(key)
                    .version(parent)
                    .bytes(value)
                    .u8(u8::from(*compress));
                w.opt_tag(tag).u8(role_byte(*role));
            }
            Body::Get { key, version } | Body::GetPrev { key, version } => {
                w.bytes(key).version(version);
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
                w.bytes(key).version(v1).version(v2).bytes(value);
                w.u8(u8::from(*compress)).opt_tag(tag).u8(role_byte(*role));
            }
            Body::GetKPrev {
                key,
                version,
                m,
                inclusive,
            } => {
                w.bytes(key)
                    .version(version)
                    .u32(*m)
                    .u8(u8::from(*inclusive));
            }
            Body::Subscribe { app_id, key } => {
                w.bytes(app_id.as_bytes()).bytes(key);
            }
            Body::PolicyPut {
                key,
                grantee,
                versions,
            } => {
                w.bytes(key).bytes(grantee.as_bytes()).versions(versions);
            }
            Body::AdminSetT { key, capacity } => {
                w.bytes(key).u64(*capacity);
            }
            Body::Stats | Body::TxnBegin => {}
            Body::TxnRead { tid, key } => {
                w.u64(*tid).bytes(key);
            }
            Body::TxnWrite { tid, key, value } => {
                w.u64(*tid).bytes(key).bytes(value);
            }
            Body::TxnCommit { tid, mode } | Body::TxnAbort { tid, mode } => {
                w.u64(*tid).u8(*mode as u8);
            }
            Body::AvGet { key } => {
                w.bytes(key);
            }
            Body::AvSet { key, version, tid } => {
                w.bytes(key).version(version).u64(*tid);
            }
            Body::AvLock { key, tid } | Body::AvUnlock { key, tid } => {
                w.bytes(key).u64(*tid);
            }
        }
        frame(self.body.opcode(), &w.finish())
    }

    pub fn decode(frame_bytes: &[u8]) -> Result<Request> {
        let (op, body) = split_frame(frame_bytes)?;
        let mut r = Reader::new(body);
        let user = r.string()?;
        use opcode::*;
        let body = match op {
            PUT => Body::Put {
                key: r.bytes()?,
                parent: r.version()?,
                value: r.bytes()?,
                compress: r.bool()?,
                tag: r.opt_tag()?,
                role: r.role()?,
            },
            GET => Body::Get {
                key: r.bytes()?,
                version: r.version()?,
            },
            MERGE => Body::Merge {
                key: r.bytes()?,
                v1: r.version()?,
                v2: r.version()?,
                value: r.bytes()?,
                compress: r.bool()?,
                tag: r.opt_tag()?,
                role: r.role()?,
            },
            GETPREV => Body::GetPrev {
                key: r.bytes()?,
                version: r.version()?,
            },
            GETKPREV => Body::GetKPrev {
                key: r.bytes()?,
                version: r.version()?,
                m: r.u32()?,
                inclusive: r.bool()?,
            },
            SUBSCRIBE => Body::Subscribe {
                app_id: r.string()?,
                key: r.bytes()?,
            },
            POLICY_PUT => Body::PolicyPut {
                key: r.bytes()?,
                grantee: r.string()?,
                versions: r.versions()?,
            },
            ADMIN_SET_T => Body::AdminSetT {
                key: r.bytes()?,
                capacity: r.u64()?,
            },
            STATS => Body::Stats,
            TXN_BEGIN => Body::TxnBegin,
            TXN_READ => Body::TxnRead {
                tid: r.u64()?,
                key: r.bytes()?,
            },
            TXN_WRITE => Body::TxnWrite {
                tid: r.u64()?,
                key: r.bytes()?,
                value: r.bytes()?,
            },
            TXN_COMMIT => Body::TxnCommit {
                tid: r.u64()?,
                mode: r.end_mode()?,
            },
            TXN_ABORT => Body::TxnAbort {
                tid: r.u64()?,
                mode: r.end_mode()?,
            },
            AV_GET => Body::AvGet { key: r.bytes()? },
            AV_SET => Body::AvSet {
                key: r.bytes()?,
                version: r.version()?,
                tid: r.u64()?,
            },
            AV_LOCK => Body::AvLock {
                key: r.bytes()?,
                tid: r.u64()?,
            },
            AV_UNLOCK => Body::AvUnlock {
                key: r.bytes()?,
                tid: r.u64()?,
            },
            other => return Err(Error::Malformed(format!("unknown opcode {other:#04x}"))),
        };
        r.finish()?;
        Ok(Request { user, body })
    }
}

fn encode_terminator(w: &mut Writer, t: &ScanTerminator) {
    match t {
        ScanTerminator::CountM => {
            w.u8(0);
        }
        ScanTerminator::HitMerge => {
            w.u8(1);
        }
        ScanTerminator::ReachedRoot => {
            w.u8(2);
        }
        ScanTerminator::NeedRemote(v) => {
            w.u8(3).version(v);
        }
        ScanTerminator::Denied(v) => {
            w.u8(4).version(v);
        }
    }
}

fn decode_terminator(r: &mut Reader<'_>) -> Result<ScanTerminator> {
    Ok(match r.u8()? {
        0 => ScanTerminator::CountM,
        1 => ScanTerminator::HitMerge,
        2 => ScanTerminator::ReachedRoot,
        3 => ScanTerminator::NeedRemote(r.version()?),
        4 => ScanTerminator::Denied(r.version()?),
        b => return Err(Error::Malformed(format!("bad terminator {b}"))),
    })
}

fn encode_snapshot(w: &mut Writer, s: &Snapshot) {
    w.u64(s.high_water);
    w.u32(s.excluded.len() as u32);
    for t in &s.excluded {
        w.u64(*t);
    }
}

fn decode_snapshot(r: &mut Reader<'_>) -> Result<Snapshot> {
    let high_water = r.u64()?;
    let n = r.u32()? as usize;
    let excluded = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
    Ok(Snapshot {
        high_water,
        excluded,
    })
}

impl Response {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        let st = match self {
            Response::Ok(reply) => {
                match reply {
                    Reply::Version(v) => {
                        w.version(v);
                    }
                    Reply::Value(v) => {
                        w.bytes(v);
                    }
                    Reply::Records(rs) => {
                        w.records(rs);
                    }
                    Reply::Scan {
                        records,
                        terminator,
                    } => {
                        w.records(records);
                        encode_terminator(&mut w, terminator);
                    }
                    Reply::Ack => {}
                    Reply::Stats(s) => {
                        w.bytes(s.as_bytes());
                    }
                    Reply::TxnStarted { tid, snapshot } => {
                        w.u64(*tid);
                        encode_snapshot(&mut w, snapshot);
                    }
                    Reply::Latest { version, tid } => {
                        w.version(version).u64(*tid);
                    }
                    Reply::Flag(b) => {
                        w.u8(u8::from(*b));
                    }
                }
                status::SUCCESS
            }
            Response::Redirect(eta) => {
                w.bytes(eta);
                status::REDIRECT
            }
            Response::NotFound => status::NOTFOUND,
            Response::Denied => status::DENIED,
            Response::Error(code, msg) => {
                w.u8(*code as u8).bytes(msg.as_bytes());
                status::ERROR
            }
        };
        frame(st, &w.finish())
    }

    /// Decodes a response to a request with opcode `op`.
    pub fn decode(op: u8, frame_bytes: &[u8]) -> Result<Response> {
        let (st, body) = split_frame(frame_bytes)?;
        let mut r = Reader::new(body);
        let resp = match st {
            status::SUCCESS => {
                use opcode::*;
                let reply = match op {
                    PUT | MERGE => Reply::Version(r.version()?),
                    GET | TXN_READ => Reply::Value(r.bytes()?),
                    GETPREV => Reply::Records(r.records()?),
                    GETKPREV => Reply::Scan {
                        records: r.records()?,
                        terminator: decode_terminator(&mut r)?,
                    },
                    STATS => Reply::Stats(r.string()?),
                    TXN_BEGIN => Reply::TxnStarted {
                        tid: r.u64()?,
                        snapshot: decode_snapshot(&mut r)?,
                    },
                    AV_GET => Reply::Latest {
                        version: r.version()?,
                        tid: r.u64()?,
                    },
                    AV_LOCK | TXN_COMMIT => Reply::Flag(r.bool()?),
                    SUBSCRIBE | POLICY_PUT | ADMIN_SET_T | TXN_WRITE | TXN_ABORT | AV_SET
                    | AV_UNLOCK => Reply::Ack,
                    other => return Err(Error::Malformed(format!("unknown opcode {other:#04x}"))),
                };
                Response::Ok(reply)
            }
            status::REDIRECT => Response::Redirect(r.bytes()?),
            status::NOTFOUND => Response::NotFound,
            status::DENIED => Response::Denied,
            status::ERROR => {
                let code = r.u8()?;
                let msg = r.string()?;
                let code = ERROR_CODES
                    .iter()
                    .copied()
                    .find(|c| *c as u8 == code)
                    .unwrap_or(ErrorCode::Internal);
                Response::Error(code, msg)
            }
            s => return Err(Error::Malformed(format!("unknown status {s:#04x}"))),
        };
        r.finish()?;
        Ok(resp)
    }
}

const ERROR_CODES: [ErrorCode; 14] = [
    ErrorCode::Internal,
    ErrorCode::Malformed,
    ErrorCode::EqualParents,
    ErrorCode::RegionExhausted,
    ErrorCode::BelowUsage,
    ErrorCode::CorruptDelta,
    ErrorCode::NotOwner,
    ErrorCode::TxnAborted,
    ErrorCode::UnknownTid,
    ErrorCode::AlreadyTerminal,
    ErrorCode::KeyUninitialized,
    ErrorCode::NoCoordinator,
    ErrorCode::InvalidArgument,
    ErrorCode::LatchNotHeld,
];

/// Server-push notification frame on a subscription stream.
pub fn encode_event(key: &[u8], version: &VersionId) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(key).version(version);
    frame(status::SUCCESS, &w.finish())
}

pub fn decode_event(frame_bytes: &[u8]) -> Result<(Vec<u8>, VersionId)> {
    let (st, body) = split_frame(frame_bytes)?;
    if st != status::SUCCESS {
        return Err(Error::Malformed("bad event status".into()));
    }
    let mut r = Reader::new(body);
    let out = (r.bytes()?, r.version()?);
    r.finish()?;
    Ok(out)
}
