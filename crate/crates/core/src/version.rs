//! Version identifiers and their derivation.
//!
//! A version is the triple `(h, l, n)`: a SHA-256 digest over the key, the
//! parent version(s) and the value; the depth of the node in the version DAG;
//! and a node-tag used only for routing. The node-tag never enters the digest,
//! so two copies of the same logical write stored under different tags share
//! `h`.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};

/// Length of a version digest in bytes.
pub const DIGEST_LEN: usize = 32;

/// Size of the fixed part of the wire form: `h ∥ l ∥ len(n)`.
pub const VERSION_WIRE_FIXED: usize = DIGEST_LEN + 8 + 4;

pub type Digest = [u8; DIGEST_LEN];

/// Routing salt carried in `VersionId::n`.
pub type NodeTag = Vec<u8>;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionId {
    #[serde(with = "hex_digest")]
    pub h: Digest,
    pub l: u64,
    #[serde(with = "hex_bytes")]
    pub n: NodeTag,
}

impl VersionId {
    /// The distinguished root version every top-level branch starts from.
    pub const ROOT: VersionId = VersionId {
        h: [0; DIGEST_LEN],
        l: 0,
        n: Vec::new(),
    };

    pub fn is_root(&self) -> bool {
        self.l == 0 && self.h == [0; DIGEST_LEN] && self.n.is_empty()
    }

    /// A well-formed version is either ROOT or has depth at least one.
    pub fn is_well_formed(&self) -> bool {
        self.is_root() || self.l >= 1
    }

    /// Same `(h, l)`; the node-tag is routing metadata only.
    pub fn same_content(&self, other: &VersionId) -> bool {
        self.h == other.h && self.l == other.l
    }

    pub fn with_tag(mut self, tag: NodeTag) -> VersionId {
        self.n = tag;
        self
    }

    pub fn short(&self) -> String {
        if self.is_root() {
            "ROOT".to_string()
        } else {
            hex::encode(&self.h[..6])
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.h);
        out.extend_from_slice(&self.l.to_be_bytes());
        out.extend_from_slice(&(self.n.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.n);
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(VERSION_WIRE_FIXED + self.n.len());
        self.encode_into(&mut out);
        out
    }

    /// Decodes one version from the front of `buf`, returning it and the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(VersionId, usize)> {
        if buf.len() < VERSION_WIRE_FIXED {
            return Err(Error::Malformed("truncated version".into()));
        }
        let mut h = [0u8; DIGEST_LEN];
        h.copy_from_slice(&buf[..DIGEST_LEN]);
        let l = u64::from_be_bytes(buf[DIGEST_LEN..DIGEST_LEN + 8].try_into().unwrap());
        let n_len = u32::from_be_bytes(buf[DIGEST_LEN + 8..VERSION_WIRE_FIXED].try_into().unwrap())
            as usize;
        let end = VERSION_WIRE_FIXED
            .checked_add(n_len)
            .filter(|&e| e <= buf.len())
            .ok_or_else(|| Error::Malformed("truncated version tag".into()))?;
        let v = VersionId {
            h,
            l,
            n: buf[VERSION_WIRE_FIXED..end].to_vec(),
        };
        if !v.is_well_formed() {
            return Err(Error::Malformed("version with zero depth".into()));
        }
        Ok((v, end))
    }
}

impl fmt::Debug for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            return f.write_str("ROOT");
        }
        write!(f, "{}@{}", self.short(), self.l)?;
        if !self.n.is_empty() {
            write!(f, "/{}", hex::encode(&self.n))?;
        }
        Ok(())
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            return f.write_str("ROOT");
        }
        write!(
            f,
            "{}:{}:{}",
            hex::encode(self.h),
            self.l,
            hex::encode(&self.n)
        )
    }
}

impl std::str::FromStr for VersionId {
    type Err = Error;

    /// Parses the `Display` form `hex(h):l:hex(n)` or the literal `ROOT`.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("root") {
            return Ok(VersionId::ROOT);
        }
        let bad = || Error::Malformed(format!("bad version string {s:?}"));
        let mut parts = s.split(':');
        let h = parts.next().ok_or_else(bad)?;
        let l = parts.next().ok_or_else(bad)?;
        let n = parts.next().unwrap_or("");
        let h: Digest = hex::decode(h)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(bad)?;
        let l: u64 = l.parse().map_err(|_| bad())?;
        let n = hex::decode(n).map_err(|_| bad())?;
        let v = VersionId { h, l, n };
        if !v.is_well_formed() || parts.next().is_some() {
            return Err(bad());
        }
        Ok(v)
    }
}

/// Length-prefixed field concatenation used as hash input.
///
/// Every field is written as a 4-byte big-endian length followed by its bytes,
/// which makes the encoding injective over the field tuple.
#[derive(Default)]
pub struct CanonicalEncoder {
    buf: Vec<u8>,
}

impl CanonicalEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, bytes: &[u8]) -> Self {
        self.buf
            .extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Digest and depth of a parent. ROOT's digest is the empty field.
    pub fn parent(self, v: &VersionId) -> Self {
        let h: &[u8] = if v.is_root() { &[] } else { &v.h };
        self.field(h).field(&v.l.to_be_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub fn put_preimage(key: &[u8], parent: &VersionId, value: &[u8]) -> Vec<u8> {
    CanonicalEncoder::new()
        .field(key)
        .parent(parent)
        .field(value)
        .finish()
}

pub fn merge_preimage(key: &[u8], v1: &VersionId, v2: &VersionId, value: &[u8]) -> Vec<u8> {
    CanonicalEncoder::new()
        .field(key)
        .parent(v1)
        .parent(v2)
        .field(value)
        .finish()
}

fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

/// Version of the record created by `Put(key, parent, value)` when it is
/// stored under node-tag `tag`.
pub fn derive_put_version(key: &[u8], parent: &VersionId, value: &[u8], tag: &[u8]) -> VersionId {
    VersionId {
        h: sha256(&put_preimage(key, parent, value)),
        l: parent.l + 1,
        n: tag.to_vec(),
    }
}

/// Version of the record created by merging `v1` and `v2` into `value`.
/// The digest is sensitive to the order of the two parents.
pub fn derive_merge_version(
    key: &[u8],
    v1: &VersionId,
    v2: &VersionId,
    value: &[u8],
    tag: &[u8],
) -> Result<VersionId> {
    if v1.same_content(v2) {
        return Err(Error::EqualParents);
    }
    if v1.is_root() || v2.is_root() {
        return Err(Error::InvalidArgument(
            "merge parents must not be ROOT".into(),
        ));
    }
    Ok(VersionId {
        h: sha256(&merge_preimage(key, v1, v2, value)),
        l: v1.l.max(v2.l) + 1,
        n: tag.to_vec(),
    })
}

mod hex_digest {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(h: &super::Digest, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(h))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<super::Digest, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s)
            .map_err(D::Error::custom)?
            .try_into()
            .map_err(|_| D::Error::custom("digest must be 32 bytes"))
    }
}

mod hex_bytes {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(D::Error::custom)
    }
}
