//! The stored unit of the version DAG.

use serde::{Deserialize, Serialize};

use crate::version::{derive_merge_version, derive_put_version, VersionId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Full(Vec<u8>),
    /// Patch against `base`, which is always stored as `Full` on the same node.
    Delta {
        base: VersionId,
        delta: Vec<u8>,
    },
}

impl Payload {
    /// Bytes charged against a region.
    pub fn stored_len(&self) -> u64 {
        match self {
            Payload::Full(v) => v.len() as u64,
            Payload::Delta { delta, .. } => delta.len() as u64,
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Payload::Full(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub key: Vec<u8>,
    pub version: VersionId,
    /// One parent for put-derived records (possibly ROOT), two for merges.
    pub parents: Vec<VersionId>,
    pub payload: Payload,
    pub created_by_merge: bool,
}

impl NodeRecord {
    pub fn put(key: &[u8], parent: VersionId, value: Vec<u8>, tag: &[u8]) -> NodeRecord {
        let version = derive_put_version(key, &parent, &value, tag);
        NodeRecord {
            key: key.to_vec(),
            version,
            parents: vec![parent],
            payload: Payload::Full(value),
            created_by_merge: false,
        }
    }

    pub fn merge(
        key: &[u8],
        v1: VersionId,
        v2: VersionId,
        value: Vec<u8>,
        tag: &[u8],
    ) -> crate::Result<NodeRecord> {
        let version = derive_merge_version(key, &v1, &v2, &value, tag)?;
        Ok(NodeRecord {
            key: key.to_vec(),
            version,
            parents: vec![v1, v2],
            payload: Payload::Full(value),
            created_by_merge: true,
        })
    }

    pub fn is_merge(&self) -> bool {
        self.parents.len() == 2
    }

    /// The full value, if this record is materialized.
    pub fn value(&self) -> Option<&[u8]> {
        match &self.payload {
            Payload::Full(v) => Some(v),
            Payload::Delta { .. } => None,
        }
    }
}

/// Recomputes the version of a materialized record from its key, parents and
/// value. Any tampering with those, or a delta payload, yields `false`.
pub fn verify_record(r: &NodeRecord) -> bool {
    let Some(value) = r.value() else {
        return false;
    };
    if r.created_by_merge != (r.parents.len() == 2) {
        return false;
    }
    let expected = match r.parents.as_slice() {
        [p] => derive_put_version(&r.key, p, value, &r.version.n),
        [a, b] => match derive_merge_version(&r.key, a, b, value, &r.version.n) {
            Ok(v) => v,
            Err(_) => return false,
        },
        _ => return false,
    };
    expected.same_content(&r.version)
}
