//! Three-way merge: closest common ancestor search and merge functions.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::version::{Digest, VersionId};

/// `f(ancestor, v1, v2)` producing the merged value.
pub type MergeFn = Arc<dyn Fn(&[u8], &[u8], &[u8]) -> Result<Vec<u8>> + Send + Sync>;

pub const APPEND: &str = "append";
pub const AGGREGATION: &str = "aggregation";
pub const CHOOSE_ONE: &str = "choose-one";

/// Appends both sides' additions to the ancestor when both extend it, else
/// concatenates the two values in argument order.
pub fn append(v0: &[u8], v1: &[u8], v2: &[u8]) -> Result<Vec<u8>> {
    match (v1.strip_prefix(v0), v2.strip_prefix(v0)) {
        (Some(a), Some(b)) => Ok([v0, a, b].concat()),
        _ => Ok([v1, v2].concat()),
    }
}

fn as_i64(v: &[u8]) -> Result<i64> {
    match v.len() {
        0 => Ok(0),
        8 => Ok(i64::from_be_bytes(v.try_into().unwrap())),
        n => Err(Error::Conflict(format!(
            "aggregation needs 8-byte integers, got {n} bytes"
        ))),
    }
}

/// Integer sum of both sides' changes: `v0 + (v1 - v0) + (v2 - v0)`.
/// Values are 8-byte big-endian; the empty value counts as 0.
pub fn aggregation(v0: &[u8], v1: &[u8], v2: &[u8]) -> Result<Vec<u8>> {
    let (a, b, c) = (as_i64(v0)?, as_i64(v1)?, as_i64(v2)?);
    let sum = b
        .wrapping_sub(a)
        .wrapping_add(c.wrapping_sub(a))
        .wrapping_add(a);
    Ok(sum.to_be_bytes().to_vec())
}

pub fn choose_one(_: &[u8], v1: &[u8], _: &[u8]) -> Result<Vec<u8>> {
    Ok(v1.to_vec())
}

#[derive(Clone)]
pub struct MergeRegistry {
    fns: BTreeMap<String, MergeFn>,
}

impl Default for MergeRegistry {
    fn default() -> Self {
        let mut r = MergeRegistry {
            fns: BTreeMap::new(),
        };
        r.register(APPEND, Arc::new(append));
        r.register(AGGREGATION, Arc::new(aggregation));
        r.register(CHOOSE_ONE, Arc::new(choose_one));
        r
    }
}

impl MergeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, f: MergeFn) {
        self.fns.insert(name.to_string(), f);
    }

    pub fn get(&self, name: &str) -> Result<MergeFn> {
        self.fns
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownMergeFunction(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.fns.keys().map(String::as_str).collect()
    }
}

#[derive(PartialEq, Eq)]
struct ByDepth(VersionId);

impl Ord for ByDepth {
    fn cmp(&self, other: &Self) -> Ordering {
        // deepest first, then smallest digest
        (self.0.l, Reverse(self.0.h)).cmp(&(other.0.l, Reverse(other.0.h)))
    }
}

impl PartialOrd for ByDepth {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Closest common ancestor of `v1` and `v2` (either may be the ancestor of
/// the other): maximal depth, ties broken by the smallest digest. ROOT when
/// the histories only meet there.
///
/// Versions are expanded deepest-first, so by the time a version is popped
/// every descendant reachable from either side has already propagated its
/// colour to it.
pub fn closest_common_ancestor(
    v1: &VersionId,
    v2: &VersionId,
    parents_of: &mut dyn FnMut(&VersionId) -> Result<Vec<VersionId>>,
) -> Result<VersionId> {
    const LEFT: u8 = 1;
    const RIGHT: u8 = 2;
    let mut colour: HashMap<Digest, u8> = HashMap::new();
    let mut heap = BinaryHeap::new();
    for (v, c) in [(v1, LEFT), (v2, RIGHT)] {
        if v.is_root() {
            return Ok(VersionId::ROOT);
        }
        let e = colour.entry(v.h).or_insert(0);
        if *e == 0 {
            heap.push(ByDepth(v.clone()));
        }
        *e |= c;
    }
    while let Some(ByDepth(v)) = heap.pop() {
        let c = colour[&v.h];
        if c == LEFT | RIGHT {
            return Ok(v);
        }
        for p in parents_of(&v)? {
            if p.is_root() {
                continue;
            }
            if p.l >= v.l {
                return Err(Error::NoCommonAncestor);
            }
            let e = colour.entry(p.h).or_insert(0);
            if *e == 0 {
                heap.push(ByDepth(p.clone()));
            }
            *e |= c;
        }
    }
    Ok(VersionId::ROOT)
}

/// What a three-way merge needs from the store.
pub trait DagReader {
    fn parents(&self, key: &[u8], v: &VersionId) -> Result<Vec<VersionId>>;
    fn value(&self, key: &[u8], v: &VersionId) -> Result<Vec<u8>>;
    fn merge(&self, key: &[u8], v1: &VersionId, v2: &VersionId, value: &[u8]) -> Result<VersionId>;
}

/// Merges `v1` and `v2` with the registered function `fm`, writing the
/// result as a merge record. A conflict writes nothing.
pub fn three_way_merge(
    store: &dyn DagReader,
    registry: &MergeRegistry,
    key: &[u8],
    v1: &VersionId,
    v2: &VersionId,
    fm: &str,
) -> Result<VersionId> {
    let f = registry.get(fm)?;
    let v0 = closest_common_ancestor(v1, v2, &mut |v| store.parents(key, v))?;
    let base = if v0.is_root() {
        Vec::new()
    } else {
        store.value(key, &v0)?
    };
    let merged = f(&base, &store.value(key, v1)?, &store.value(key, v2)?)?;
    store.merge(key, v1, v2, &merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{derive_dag, figure_dag, random_dag};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn ancestors(
        v: &VersionId,
        parents: &BTreeMap<VersionId, Vec<VersionId>>,
    ) -> BTreeSet<VersionId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![v.clone()];
        while let Some(x) = stack.pop() {
            if x.is_root() || !out.insert(x.clone()) {
                continue;
            }
            stack.extend(parents[&x].iter().cloned());
        }
        out
    }

    fn oracle(
        a: &VersionId,
        b: &VersionId,
        parents: &BTreeMap<VersionId, Vec<VersionId>>,
    ) -> VersionId {
        let common: Vec<_> = ancestors(a, parents)
            .intersection(&ancestors(b, parents))
            .cloned()
            .collect();
        common
            .into_iter()
            .min_by(|x, y| y.l.cmp(&x.l).then(x.h.cmp(&y.h)))
            .unwrap_or(VersionId::ROOT)
    }

    #[test]
    fn figure_ancestors() {
        let w = derive_dag(b"k", &figure_dag(), b"");
        let (vs, parents) = (w.versions, w.parents);
        let mut p = |v: &VersionId| Ok(parents[v].clone());
        // v2 and v4 only meet at ROOT
        assert_eq!(
            closest_common_ancestor(&vs[1], &vs[3], &mut p).unwrap(),
            VersionId::ROOT
        );
        // v8 and v9 meet at v2
        assert_eq!(
            closest_common_ancestor(&vs[7], &vs[8], &mut p).unwrap(),
            vs[1]
        );
        // v1 is an ancestor of v8
        assert_eq!(
            closest_common_ancestor(&vs[0], &vs[7], &mut p).unwrap(),
            vs[0]
        );
    }

    #[test]
    fn random_dags_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let dag = random_dag(&mut rng, 120, 5);
            let w = derive_dag(b"k", &dag, b"");
            let (vs, parents) = (&w.versions, &w.parents);
            for i in (0..vs.len()).step_by(7) {
                for j in (0..vs.len()).step_by(11) {
                    let mut p = |v: &VersionId| Ok(parents[v].clone());
                    let got = closest_common_ancestor(&vs[i], &vs[j], &mut p).unwrap();
                    assert_eq!(got, oracle(&vs[i], &vs[j], parents));
                }
            }
        }
    }

    #[test]
    fn builtin_functions() {
        assert_eq!(append(b"", b"A", b"B").unwrap(), b"AB");
        assert_eq!(append(b"x", b"xA", b"xB").unwrap(), b"xAB");
        assert_eq!(append(b"x", b"A", b"B").unwrap(), b"AB");
        let n = |x: i64| x.to_be_bytes().to_vec();
        assert_eq!(aggregation(&n(10), &n(13), &n(15)).unwrap(), n(18));
        assert_eq!(aggregation(b"", &n(2), &n(3)).unwrap(), n(5));
        assert!(matches!(
            aggregation(b"", b"abc", &n(1)),
            Err(Error::Conflict(_))
        ));
        assert_eq!(choose_one(b"0", b"1", b"2").unwrap(), b"1");
    }

    #[test]
    fn unknown_function() {
        let r = MergeRegistry::new();
        assert_eq!(r.names(), vec![AGGREGATION, APPEND, CHOOSE_ONE]);
        assert!(matches!(r.get("nope"), Err(Error::UnknownMergeFunction(_))));
    }
}
