//! Reusable version-DAG fixtures for tests, the simulator and benches.

use std::collections::BTreeMap;

use rand::Rng;

use crate::version::{derive_merge_version, derive_put_version, VersionId};

/// One node of a DAG description: parents are indices into the node list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DagNode {
    Put {
        parent: Option<usize>,
        value: Vec<u8>,
    },
    Merge {
        parents: (usize, usize),
        value: Vec<u8>,
    },
}

impl DagNode {
    pub fn parent_indices(&self) -> Vec<usize> {
        match self {
            DagNode::Put { parent, .. } => parent.iter().copied().collect(),
            DagNode::Merge { parents, .. } => vec![parents.0, parents.1],
        }
    }

    pub fn value(&self) -> &[u8] {
        match self {
            DagNode::Put { value, .. } | DagNode::Merge { value, .. } => value,
        }
    }
}

/// The nine-version example DAG: two top-level branches `v1 <- v2` and
/// `v3 <- v4`, merged into `v5`; `v2` is also extended to `v7 <- v8`, and
/// `v5 <- v6 <- v9`. Index `i` holds `v{i+1}`.
pub fn figure_dag() -> Vec<DagNode> {
    let put = |p: Option<usize>, s: &str| DagNode::Put {
        parent: p,
        value: s.as_bytes().to_vec(),
    };
    vec![
        put(None, "v1"),
        put(Some(0), "v2"),
        put(None, "v3"),
        put(Some(2), "v4"),
        DagNode::Merge {
            parents: (1, 3),
            value: b"v5".to_vec(),
        },
        put(Some(4), "v6"),
        put(Some(1), "v7"),
        put(Some(6), "v8"),
        put(Some(5), "v9"),
    ]
}

/// Random DAG in topological order. Roughly one node in `merge_every`
/// is a merge of two distinct earlier nodes; values are unique.
pub fn random_dag<R: Rng>(rng: &mut R, nodes: usize, merge_every: u32) -> Vec<DagNode> {
    let mut out = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let value = format!("node-{i}-{}", rng.random::<u32>()).into_bytes();
        if i >= 2 && merge_every > 0 && rng.random_ratio(1, merge_every) {
            let a = rng.random_range(0..i);
            let mut b = rng.random_range(0..i - 1);
            if b >= a {
                b += 1;
            }
            out.push(DagNode::Merge {
                parents: (a, b),
                value,
            });
        } else if i == 0 || rng.random_ratio(1, 20) {
            out.push(DagNode::Put {
                parent: None,
                value,
            });
        } else {
            // bias toward recent nodes so chains are long
            let lo = i.saturating_sub(8);
            let p = if rng.random_ratio(3, 4) {
                rng.random_range(lo..i)
            } else {
                rng.random_range(0..i)
            };
            out.push(DagNode::Put {
                parent: Some(p),
                value,
            });
        }
    }
    out
}

/// Written DAG: versions by node index plus a reverse map.
#[derive(Clone, Debug, Default)]
pub struct WrittenDag {
    pub versions: Vec<VersionId>,
    pub parents: BTreeMap<VersionId, Vec<VersionId>>,
}

impl WrittenDag {
    pub fn record(&mut self, v: VersionId, parents: Vec<VersionId>) {
        self.versions.push(v.clone());
        self.parents.insert(v, parents);
    }
}

/// Derives every version of `dag` under `key` without storing anything.
pub fn derive_dag(key: &[u8], dag: &[DagNode], tag: &[u8]) -> WrittenDag {
    let mut out = WrittenDag::default();
    for n in dag {
        let (v, ps) = match n {
            DagNode::Put { parent, value } => {
                let p = parent.map_or(VersionId::ROOT, |i| out.versions[i].clone());
                (derive_put_version(key, &p, value, tag), vec![p])
            }
            DagNode::Merge { parents, value } => {
                let (a, b) = (
                    out.versions[parents.0].clone(),
                    out.versions[parents.1].clone(),
                );
                let v = derive_merge_version(key, &a, &b, value, tag).expect("distinct parents");
                (v, vec![a, b])
            }
        };
        out.record(v, ps);
    }
    out
}
