//! Consistent-hash ring with virtual points.
//!
//! Requests are placed by hashing `key ∥ node_tag`; the first physical node
//! clockwise is the primary and the next distinct nodes are its replicas.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_VIRTUAL_POINTS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node-{}", self.0)
    }
}

/// First 8 bytes of SHA-256, big-endian.
pub fn hash64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_be_bytes(d[..8].try_into().unwrap())
}

fn placement_input(key: &[u8], tag: &[u8]) -> Vec<u8> {
    let mut x = Vec::with_capacity(key.len() + tag.len());
    x.extend_from_slice(key);
    x.extend_from_slice(tag);
    x
}

#[derive(Clone, Debug)]
pub struct Ring {
    points: BTreeMap<u64, NodeId>,
    nodes: Vec<NodeId>,
}

impl Ring {
    pub fn new(nodes: &[NodeId], virtual_points: usize) -> Result<Ring> {
        if nodes.is_empty() {
            return Err(Error::ConfigInvalid("ring needs at least one node".into()));
        }
        if virtual_points == 0 {
            return Err(Error::ConfigInvalid(
                "virtual_points must be positive".into(),
            ));
        }
        let mut sorted = nodes.to_vec();
        sorted.sort();
        sorted.dedup();
        let mut points = BTreeMap::new();
        for &node in &sorted {
            for i in 0..virtual_points as u32 {
                let mut label = b"vnode".to_vec();
                label.extend_from_slice(&node.0.to_be_bytes());
                label.extend_from_slice(&i.to_be_bytes());
                // Collisions between 64-bit points are astronomically rare;
                // the lower node id keeps the slot deterministically.
                points.entry(hash64(&label)).or_insert(node);
            }
        }
        Ok(Ring {
            points,
            nodes: sorted,
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn clockwise(&self, point: u64) -> impl Iterator<Item = NodeId> + '_ {
        self.points
            .range(point..)
            .chain(self.points.range(..point))
            .map(|(_, &n)| n)
    }

    /// Primary node for a raw placement input.
    pub fn lookup(&self, x: &[u8]) -> NodeId {
        self.clockwise(hash64(x))
            .next()
            .expect("ring is never empty")
    }

    pub fn primary(&self, key: &[u8], tag: &[u8]) -> NodeId {
        self.lookup(&placement_input(key, tag))
    }

    /// Primary followed by up to `replicas - 1` distinct successors.
    pub fn route(&self, key: &[u8], tag: &[u8], replicas: usize) -> Vec<NodeId> {
        let want = replicas.clamp(1, self.nodes.len());
        let mut out = Vec::with_capacity(want);
        for n in self.clockwise(hash64(&placement_input(key, tag))) {
            if !out.contains(&n) {
                out.push(n);
                if out.len() == want {
                    break;
                }
            }
        }
        out
    }
}
