use std::sync::Arc;

use super::*;
use crate::ring::{NodeId, Ring};
use crate::store::NodeStore;

fn setup() -> (Coordinator, NodeStore) {
    let ring = Arc::new(Ring::new(&[NodeId(0)], 8).unwrap());
    (
        Coordinator::new(),
        NodeStore::new(NodeId(0), ring, 1 << 30, 0, 1),
    )
}

fn commit_value(d: &TxnDriver<'_>, key: &[u8], value: &[u8]) {
    let mut t = d.begin().unwrap();
    d.write(&mut t, key, value).unwrap();
    assert_eq!(d.commit(&mut t).unwrap(), TxnState::Committed);
}

#[test]
fn uninitialized_key() {
    let (c, s) = setup();
    let d = TxnDriver::new(&c, &s);
    let mut t = d.begin().unwrap();
    assert_eq!(d.read(&mut t, b"x"), Err(Error::KeyUninitialized));
    // not sticky
    d.write(&mut t, b"x", b"1").unwrap();
    assert_eq!(d.read(&mut t, b"x").unwrap(), b"1");
}

#[test]
fn read_your_writes_and_second_write_keeps_base() {
    let (c, s) = setup();
    let d = TxnDriver::new(&c, &s);
    commit_value(&d, b"k", b"0");
    let base = c.get_latest_version(b"k").unwrap().0;
    let mut t = d.begin().unwrap();
    d.write(&mut t, b"k", b"1").unwrap();
    d.write(&mut t, b"k", b"2").unwrap();
    assert_eq!(d.read(&mut t, b"k").unwrap(), b"2");
    assert_eq!(t.write_set[&b"k".to_vec()].base, base);
    assert_eq!(d.commit(&mut t).unwrap(), TxnState::Committed);
    let (v, tid) = c.get_latest_version(b"k").unwrap();
    assert_eq!(tid, t.tid);
    assert_eq!(s.local_get(b"k", &v).unwrap(), b"2");
    assert_eq!(v.l, base.l + 1);
}

#[test]
fn post_snapshot_commit_aborts_reader() {
    let (c, s) = setup();
    let d = TxnDriver::new(&c, &s);
    commit_value(&d, b"k", b"0");
    let mut t1 = d.begin().unwrap();
    commit_value(&d, b"k", b"1");
    assert_eq!(d.read(&mut t1, b"k"), Err(Error::TxnAborted));
    assert_eq!(t1.state, TxnState::Aborted);
    assert_eq!(d.read(&mut t1, b"other"), Err(Error::TxnAborted));
    assert_eq!(d.write(&mut t1, b"other", b""), Err(Error::TxnAborted));
}

#[test]
fn first_committer_wins() {
    let (c, s) = setup();
    let d = TxnDriver::new(&c, &s);
    commit_value(&d, b"k", b"0");
    let mut a = d.begin().unwrap();
    let mut b = d.begin().unwrap();
    d.write(&mut a, b"k", b"a").unwrap();
    d.write(&mut b, b"k", b"b").unwrap();
    assert_eq!(d.commit(&mut a).unwrap(), TxnState::Committed);
    assert_eq!(d.commit(&mut b).unwrap(), TxnState::Aborted);
    let (v, _) = c.get_latest_version(b"k").unwrap();
    assert_eq!(s.local_get(b"k", &v).unwrap(), b"a");
}

#[test]
fn latch_contention_aborts_immediately() {
    let (c, s) = setup();
    let d = TxnDriver::new(&c, &s);
    let mut a = d.begin().unwrap();
    let mut b = d.begin().unwrap();
    d.write(&mut a, b"k", b"a").unwrap();
    d.write(&mut b, b"k", b"b").unwrap();
    assert_eq!(d.commit_acquire(&mut a).unwrap(), TxnState::Active);
    assert_eq!(d.commit_acquire(&mut b).unwrap(), TxnState::Aborted);
    assert_eq!(c.latch_holder(b"k"), Some(a.tid));
    assert_eq!(d.commit_install(&mut a).unwrap(), TxnState::Active);
    assert_eq!(d.commit_finish(&mut a).unwrap(), TxnState::Committed);
    assert_eq!(c.latch_holder(b"k"), None);
}

#[test]
fn disjoint_writers_both_commit() {
    let (c, s) = setup();
    let d = TxnDriver::new(&c, &s);
    let mut a = d.begin().unwrap();
    let mut b = d.begin().unwrap();
    d.write(&mut a, b"x", b"1").unwrap();
    d.write(&mut b, b"y", b"2").unwrap();
    assert_eq!(d.commit(&mut a).unwrap(), TxnState::Committed);
    assert_eq!(d.commit(&mut b).unwrap(), TxnState::Committed);
}

#[test]
fn abort_leaves_av_untouched() {
    let (c, s) = setup();
    let d = TxnDriver::new(&c, &s);
    commit_value(&d, b"k", b"0");
    let before = c.get_latest_version(b"k").unwrap();
    let records = s.stats().total_records();
    let mut t = d.begin().unwrap();
    d.write(&mut t, b"k", b"1").unwrap();
    d.abort(&mut t).unwrap();
    assert_eq!(c.get_latest_version(b"k").unwrap(), before);
    // the private branch stays behind
    assert_eq!(s.stats().total_records(), records + 1);
    assert_eq!(d.read(&mut t, b"k"), Err(Error::TxnAborted));
    assert_eq!(c.stats().aborted, 1);
}

#[test]
fn terminal_after_commit() {
    let (c, s) = setup();
    let d = TxnDriver::new(&c, &s);
    let mut t = d.begin().unwrap();
    d.write(&mut t, b"k", b"1").unwrap();
    d.commit(&mut t).unwrap();
    assert_eq!(
        d.write(&mut t, b"k", b"2"),
        Err(Error::AlreadyTerminal(t.tid))
    );
}
