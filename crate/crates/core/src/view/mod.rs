//! Application-facing services layered on the store: read access control,
//! three-way merge, and change notifications.

pub mod acl;
pub mod merge;
pub mod notify;

pub use acl::{AclTable, Policy};
pub use merge::{closest_common_ancestor, three_way_merge, DagReader, MergeFn, MergeRegistry};
pub use notify::{Aggregator, Broker, Event};
