//! Per-server read access control.
//!
//! A key becomes private once someone writes a policy for it; that first
//! writer is its owner. Grants are append-only `(user, versions)` records,
//! kept only on servers that store at least one of the granted versions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::version::{Digest, VersionId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub user: String,
    pub versions: Vec<VersionId>,
}

#[derive(Debug, Default)]
struct AcuObject {
    owner: String,
    policies: Vec<Policy>,
    /// (user, digest) pairs granted by any local policy.
    granted: BTreeSet<(String, Digest)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclStats {
    pub restricted_keys: u64,
    pub policy_records: u64,
}

#[derive(Debug, Default)]
pub struct AclTable {
    objects: BTreeMap<Vec<u8>, AcuObject>,
}

impl AclTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies a grant. `stored` tells whether this server holds a version;
    /// the policy record is kept only if it covers some local version.
    /// Returns whether a record was appended.
    pub fn put_policy(
        &mut self,
        requester: &str,
        key: &[u8],
        policy: Policy,
        stored: impl Fn(&VersionId) -> bool,
    ) -> Result<bool> {
        if policy.versions.is_empty() {
            return Err(Error::InvalidArgument("empty policy".into()));
        }
        let obj = self
            .objects
            .entry(key.to_vec())
            .or_insert_with(|| AcuObject {
                owner: requester.to_string(),
                ..Default::default()
            });
        if obj.owner != requester {
            return Err(Error::NotOwner);
        }
        if !policy.versions.iter().any(&stored) {
            return Ok(false);
        }
        for v in &policy.versions {
            obj.granted.insert((policy.user.clone(), v.h));
        }
        obj.policies.push(policy);
        Ok(true)
    }

    pub fn is_restricted(&self, key: &[u8]) -> bool {
        self.objects.contains_key(key)
    }

    pub fn owner(&self, key: &[u8]) -> Option<&str> {
        self.objects.get(key).map(|o| o.owner.as_str())
    }

    /// Allowed iff the key is public here, `user` owns it, or a local
    /// policy grants `user` this version.
    pub fn check_read(&self, user: &str, key: &[u8], v: &VersionId) -> bool {
        match self.objects.get(key) {
            None => true,
            Some(o) => o.owner == user || o.granted.contains(&(user.to_string(), v.h)),
        }
    }

    /// Like `check_read`, but only positive local evidence counts: used for
    /// cached copies of records whose home server restricts the key.
    pub fn grants(&self, user: &str, key: &[u8], v: &VersionId) -> bool {
        self.objects
            .get(key)
            .is_some_and(|o| o.owner == user || o.granted.contains(&(user.to_string(), v.h)))
    }

    pub fn stats(&self) -> AclStats {
        AclStats {
            restricted_keys: self.objects.len() as u64,
            policy_records: self.objects.values().map(|o| o.policies.len() as u64).sum(),
        }
    }
}
