//! An immutable, versioned, distributed key-value store.
//!
//! Every write creates a new immutable record whose version is derived from
//! the key, its parent version(s) and its value, so versions double as
//! integrity proofs. Records of one key form a DAG that is partitioned across
//! nodes with a locality-preserving consistent-hash scheme and replicated
//! with a write quorum.

pub mod client;
pub mod config;
pub mod delta;
pub mod error;
pub mod fixtures;
pub mod record;
pub mod ring;
pub mod server;
pub mod sim;
pub mod store;
pub mod tcp;
pub mod transport;
pub mod txn;
pub mod ugit;
pub mod version;
pub mod view;
pub mod wire;

pub use client::{Client, ClusterParams};
pub use error::{Error, Result};
pub use record::{verify_record, NodeRecord, Payload};
pub use ring::{NodeId, Ring};
pub use server::{Server, ServerOptions};
pub use transport::{Endpoint, Transport};
pub use version::{derive_merge_version, derive_put_version, VersionId};
