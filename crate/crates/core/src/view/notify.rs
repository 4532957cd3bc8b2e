//! Publish/subscribe notifications for new versions.
//!
//! Each server runs a broker. A write enqueues one event per subscriber of
//! the key; events stay queued until the subscriber acknowledges them, so
//! lost deliveries are retried and delivery is at-least-once. The outbox is
//! bounded: beyond `OUTBOX_LIMIT` queued events the oldest are dropped and
//! counted. Clients merge the streams of all servers in an `Aggregator`,
//! which removes duplicates.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::version::VersionId;

pub const OUTBOX_LIMIT: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub app_id: String,
    pub key: Vec<u8>,
    pub version: VersionId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerStats {
    pub subscriptions: u64,
    pub published: u64,
    pub pending: u64,
    pub dropped: u64,
}

#[derive(Debug, Default)]
pub struct Broker {
    subscribers: BTreeMap<Vec<u8>, BTreeSet<String>>,
    outbox: VecDeque<Event>,
    next_seq: u64,
    published: u64,
    dropped: u64,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&mut self, app_id: &str, key: &[u8]) {
        self.subscribers
            .entry(key.to_vec())
            .or_default()
            .insert(app_id.to_string());
    }

    pub fn publish(&mut self, key: &[u8], version: &VersionId) {
        let Some(apps) = self.subscribers.get(key) else {
            return;
        };
        for app in apps {
            self.next_seq += 1;
            self.outbox.push_back(Event {
                seq: self.next_seq,
                app_id: app.clone(),
                key: key.to_vec(),
                version: version.clone(),
            });
            self.published += 1;
        }
        while self.outbox.len() > OUTBOX_LIMIT {
            self.outbox.pop_front();
            self.dropped += 1;
        }
    }

    /// Unacknowledged events for `app_id`, oldest first.
    pub fn pending(&self, app_id: &str, limit: usize) -> Vec<Event> {
        self.outbox
            .iter()
            .filter(|e| e.app_id == app_id)
            .take(limit)
            .cloned()
            .collect()
    }

    /// Apps with queued events.
    pub fn apps_with_pending(&self) -> BTreeSet<String> {
        self.outbox.iter().map(|e| e.app_id.clone()).collect()
    }

    pub fn ack(&mut self, app_id: &str, seqs: &BTreeSet<u64>) {
        self.outbox
            .retain(|e| !(e.app_id == app_id && seqs.contains(&e.seq)));
    }

    pub fn stats(&self) -> BrokerStats {
        BrokerStats {
            subscriptions: self.subscribers.values().map(|s| s.len() as u64).sum(),
            published: self.published,
            pending: self.outbox.len() as u64,
            dropped: self.dropped,
        }
    }
}

/// Client-side merge of the event streams of every server.
#[derive(Debug, Default)]
pub struct Aggregator {
    pub raw_deliveries: u64,
    seen: BTreeSet<(Vec<u8>, VersionId)>,
    order: Vec<(Vec<u8>, VersionId)>,
}

impl Aggregator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns whether the event was new.
    pub fn deliver(&mut self, key: &[u8], version: &VersionId) -> bool {
        self.raw_deliveries += 1;
        let id = (key.to_vec(), version.clone());
        if self.seen.insert(id.clone()) {
            self.order.push(id);
            true
        } else {
            false
        }
    }

    /// Distinct events in first-arrival order.
    pub fn events(&self) -> &[(Vec<u8>, VersionId)] {
        &self.order
    }

    pub fn distinct(&self) -> &BTreeSet<(Vec<u8>, VersionId)> {
        &self.seen
    }
}
