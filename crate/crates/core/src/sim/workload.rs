//! Seeded workload generators. Each runs against an [`Env`], records
//! metrics and checks its own invariants.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::client::{Client, ClusterParams};
use crate::error::{Error, Result};
use crate::ring::{NodeId, Ring};
use crate::transport::Transport;
use crate::txn::{Snapshot, TxnContext, TxnDriver, TxnId, TxnService, TxnState};
use crate::version::VersionId;
use crate::view::notify::Aggregator;

use super::config::{SimConfig, WorkloadSpec};
use super::metrics::MetricsReport;
use super::network::NetCounters;

/// A cluster a workload can drive.
pub trait Env {
    fn transport(&self) -> &dyn Transport;
    fn ring(&self) -> Arc<Ring>;
    fn params(&self) -> ClusterParams;
    fn nodes(&self) -> Vec<NodeId>;
    fn counters(&self) -> NetCounters;
    fn reset_counters(&self);

    /// Advances logical time. Wall-clock environments ignore it.
    fn tick(&self, _t: u64) {}

    /// Delivers queued notifications once and returns how many are still
    /// pending on reachable nodes.
    fn pump(&self, _aggs: &mut BTreeMap<String, Aggregator>) -> Result<u64> {
        Err(Error::ConfigInvalid(
            "notification workloads need the simulator".into(),
        ))
    }
}

fn client<'a>(env: &'a dyn Env, user: &str) -> Client<'a> {
    Client::new(env.transport(), env.ring(), env.params(), user)
}

/// Runs `cfg.workload`, returning the number of logical operations issued.
pub fn run_workload(env: &dyn Env, cfg: &SimConfig, report: &mut MetricsReport) -> Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match &cfg.workload {
        WorkloadSpec::MixedRw {
            ops,
            keys,
            read_fraction,
            record_size,
        } => Ok(mixed_rw(
            env,
            &mut rng,
            *ops,
            *keys,
            *read_fraction,
            *record_size,
            report,
        )),
        WorkloadSpec::ScanChain {
            chain_len,
            m,
            naive,
        } => Ok(scan_chain(env, *chain_len, *m, *naive, report)),
        WorkloadSpec::Delta {
            versions,
            record_size,
            max_edit,
            full_every,
        } => {
            let mut next = random_bytes(&mut rng, *record_size);
            let max_edit = *max_edit;
            let gen = move |rng: &mut ChaCha8Rng, i: u32| {
                if i > 0 {
                    let len = rng.random_range(1..=max_edit);
                    let at = rng.random_range(0..=next.len() - len);
                    rng.fill(&mut next[at..at + len]);
                }
                next.clone()
            };
            Ok(compression(
                env,
                &mut rng,
                "dw",
                *versions,
                *full_every,
                gen,
                report,
            ))
        }
        WorkloadSpec::Random {
            versions,
            record_size,
        } => {
            let size = *record_size;
            let gen = move |rng: &mut ChaCha8Rng, _| random_bytes(rng, size);
            Ok(compression(
                env,
                &mut rng,
                "rw",
                *versions,
                u32::MAX,
                gen,
                report,
            ))
        }
        WorkloadSpec::TxnIncrement {
            txns,
            keys,
            zipf,
            concurrency,
        } => txn_increment(env, &mut rng, *txns, *keys, *zipf, *concurrency, report),
        WorkloadSpec::Notify { keys, writes, apps } => {
            notify(env, &mut rng, *keys, *writes, *apps, report)
        }
    }
}

fn random_bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    rng.fill(&mut v[..]);
    v
}

fn mixed_rw(
    env: &dyn Env,
    rng: &mut ChaCha8Rng,
    ops: u64,
    keys: u32,
    read_fraction: f64,
    record_size: usize,
    report: &mut MetricsReport,
) -> u64 {
    let c = client(env, "bench");
    let mut written: Vec<Vec<(VersionId, Vec<u8>)>> = vec![Vec::new(); keys as usize];
    let (mut reads, mut writes, mut read_errors, mut write_errors) = (0u64, 0u64, 0u64, 0u64);
    for op in 0..ops {
        env.tick(op);
        let k = rng.random_range(0..keys) as usize;
        let key = format!("k{k:05}");
        if rng.random_bool(read_fraction) && !written[k].is_empty() {
            reads += 1;
            let (v, expect) = &written[k][rng.random_range(0..written[k].len())];
            match c.get(key.as_bytes(), v) {
                Ok(got) if &got == expect => {}
                Ok(_) => report.violation(format!("read of {key}@{v} returned the wrong value")),
                Err(_) => read_errors += 1,
            }
        } else {
            writes += 1;
            let parent = written[k]
                .last()
                .map_or(VersionId::ROOT, |(v, _)| v.clone());
            let mut value = random_bytes(rng, record_size.max(8));
            value[..8].copy_from_slice(&op.to_be_bytes());
            match c.put(key.as_bytes(), &parent, &value, false) {
                Ok(v) => written[k].push((v, value)),
                Err(_) => write_errors += 1,
            }
        }
    }
    report.set("ops", ops);
    report.set("reads", reads);
    report.set("writes", writes);
    report.set("read_errors", read_errors);
    report.set("write_errors", write_errors);
    report.set("errors", read_errors + write_errors);
    let s = c.stats();
    report.set("redirects", s.redirects);
    report.set("capacity_grows", s.capacity_grows);
    ops
}

fn scan_chain(
    env: &dyn Env,
    chain_len: u32,
    m: u32,
    naive: bool,
    report: &mut MetricsReport,
) -> u64 {
    let c = client(env, "bench");
    let key = b"chain";
    let mut chain = Vec::with_capacity(chain_len as usize + 1);
    let mut parent = VersionId::ROOT;
    for i in 0..=chain_len {
        env.tick(i as u64);
        let mut value = vec![b'.'; 64];
        value[..4].copy_from_slice(&i.to_be_bytes());
        match c.put(key, &parent, &value, false) {
            Ok(v) => {
                parent = v.clone();
                chain.push(v);
            }
            Err(e) => {
                report.violation(format!("chain write {i} failed: {e}"));
                return i as u64;
            }
        }
    }
    report.set("colocated", chain.iter().all(|v| v.n.is_empty()));
    report.set("redirects", c.stats().redirects);

    let expect: Vec<VersionId> = chain
        .iter()
        .rev()
        .skip(1)
        .take(m as usize)
        .cloned()
        .collect();
    let tip = chain.last().expect("chain is non-empty").clone();
    env.reset_counters();
    let got: Result<Vec<VersionId>> = if naive {
        let mut out = Vec::new();
        let mut cur = tip;
        for _ in 0..m {
            match c.get_previous(key, &cur) {
                Ok(prev) => match prev.into_iter().next() {
                    Some((v, _)) => {
                        out.push(v.clone());
                        cur = v;
                    }
                    None => break,
                },
                Err(e) => {
                    report.violation(format!("get_previous failed: {e}"));
                    break;
                }
            }
        }
        Ok(out)
    } else {
        c.get_k_previous(key, &tip, m as usize)
            .map(|(rs, _)| rs.into_iter().map(|r| r.version).collect())
    };
    let n = env.counters();
    report.set("client_round_trips", n.client_frames);
    report.set("server_hops", n.server_frames);
    match got {
        Ok(got) => {
            report.set("records_returned", got.len() as u64);
            if got != expect {
                report.violation("scan returned the wrong predecessors");
            }
        }
        Err(e) => report.violation(format!("scan failed: {e}")),
    }
    chain_len as u64 + 1
}

/// Writes the same value sequence to a compressed and a plain key and
/// compares resident bytes.
fn compression(
    env: &dyn Env,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    versions: u32,
    full_every: u32,
    mut gen: impl FnMut(&mut ChaCha8Rng, u32) -> Vec<u8>,
    report: &mut MetricsReport,
) -> u64 {
    let c = client(env, "bench");
    let ck = format!("{prefix}/compressed");
    let pk = format!("{prefix}/plain");
    let (mut cv, mut pv) = (VersionId::ROOT, VersionId::ROOT);
    let mut written = Vec::with_capacity(versions as usize);
    let mut errors = 0u64;
    for i in 0..versions {
        env.tick(i as u64);
        let value = gen(rng, i);
        let compress = i % full_every != 0;
        match (
            c.put(ck.as_bytes(), &cv, &value, compress),
            c.put(pk.as_bytes(), &pv, &value, false),
        ) {
            (Ok(a), Ok(b)) => {
                cv = a;
                pv = b;
                written.push((cv.clone(), value));
            }
            _ => {
                errors += 1;
                break;
            }
        }
    }
    for (v, value) in &written {
        match c.get(ck.as_bytes(), v) {
            Ok(got) if &got == value => {}
            _ => {
                report.violation(format!("{ck}@{v} does not read back"));
                break;
            }
        }
    }
    let (mut cb, mut pb, mut deltas) = (0u64, 0u64, 0u64);
    for node in env.nodes() {
        let Ok(s) = c.server_stats(node) else {
            continue;
        };
        if let Some(k) = s.store.keys.get(&ck) {
            cb += k.used + k.replica_bytes;
            deltas += k.delta_records;
        }
        if let Some(k) = s.store.keys.get(&pk) {
            pb += k.used + k.replica_bytes;
        }
    }
    report.set("versions", written.len() as u64);
    report.set("write_errors", errors);
    report.set("compressed_bytes", cb);
    report.set("uncompressed_bytes", pb);
    report.set("delta_records", deltas);
    report.set(
        "compression_ratio",
        if pb == 0 { 0.0 } else { cb as f64 / pb as f64 },
    );
    versions as u64
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Begin,
    Read,
    Write,
    Acquire,
    Install,
    Finish,
}

struct Slot {
    key: Vec<u8>,
    step: Step,
    ctx: Option<TxnContext>,
    value: u64,
}

enum Outcome {
    Running,
    Committed(TxnId, Snapshot),
    Aborted,
    Failed,
}

fn advance(d: &TxnDriver<'_>, s: &mut Slot) -> Result<Outcome> {
    let step = s.step;
    if step == Step::Begin {
        s.ctx = Some(d.begin()?);
        s.step = Step::Read;
        return Ok(Outcome::Running);
    }
    let ctx = s.ctx.as_mut().expect("begun");
    let state = match step {
        Step::Read => match d.read(ctx, &s.key) {
            Ok(v) => {
                let bytes: [u8; 8] = v
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Malformed("counter is not 8 bytes".into()))?;
                s.value = u64::from_be_bytes(bytes);
                TxnState::Active
            }
            Err(Error::KeyUninitialized) => {
                s.value = 0;
                TxnState::Active
            }
            Err(Error::TxnAborted) => TxnState::Aborted,
            Err(e) => return Err(e),
        },
        Step::Write => match d.write(ctx, &s.key, &(s.value + 1).to_be_bytes()) {
            Ok(()) => TxnState::Active,
            Err(Error::TxnAborted) => TxnState::Aborted,
            Err(e) => return Err(e),
        },
        Step::Acquire => d.commit_acquire(ctx)?,
        Step::Install => d.commit_install(ctx)?,
        Step::Finish => d.commit_finish(ctx)?,
        Step::Begin => unreachable!(),
    };
    s.step = match step {
        Step::Read => Step::Write,
        Step::Write => Step::Acquire,
        Step::Acquire => Step::Install,
        _ => Step::Finish,
    };
    Ok(match state {
        TxnState::Aborted => Outcome::Aborted,
        TxnState::Committed => Outcome::Committed(ctx.tid, ctx.snapshot.clone()),
        TxnState::Active => Outcome::Running,
    })
}

/// Read-increment-write transactions interleaved step by step across
/// `concurrency` open transactions.
fn txn_increment(
    env: &dyn Env,
    rng: &mut ChaCha8Rng,
    txns: u32,
    keys: u32,
    s: f64,
    concurrency: u32,
    report: &mut MetricsReport,
) -> Result<u64> {
    let c = client(env, "bench");
    let driver = TxnDriver::new(&c, &c);
    let zipf = Zipf::new(keys as f64, s).map_err(|e| Error::ConfigInvalid(format!("zipf: {e}")))?;
    let key_of = |i: u64| format!("ctr/{i:04}").into_bytes();
    let fresh = |rng: &mut ChaCha8Rng| Slot {
        key: key_of(zipf.sample(rng) as u64 - 1),
        step: Step::Begin,
        ctx: None,
        value: 0,
    };

    let mut slots: Vec<Slot> = Vec::new();
    let mut started = 0u32;
    let (mut aborted, mut errors) = (0u64, 0u64);
    let mut increments: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    let mut committed: Vec<(TxnId, Snapshot, Vec<u8>)> = Vec::new();
    let mut tick = 0u64;
    loop {
        while slots.len() < concurrency as usize && started < txns {
            slots.push(fresh(rng));
            started += 1;
        }
        if slots.is_empty() {
            break;
        }
        env.tick(tick);
        tick += 1;
        let i = rng.random_range(0..slots.len());
        let outcome = advance(&driver, &mut slots[i]).unwrap_or(Outcome::Failed);
        match outcome {
            Outcome::Running => continue,
            Outcome::Committed(tid, snap) => {
                *increments.entry(slots[i].key.clone()).or_default() += 1;
                committed.push((tid, snap, slots[i].key.clone()));
            }
            Outcome::Aborted => aborted += 1,
            Outcome::Failed => {
                errors += 1;
                if let Some(ctx) = slots[i].ctx.as_mut() {
                    let _ = driver.abort(ctx);
                }
            }
        }
        slots.swap_remove(i);
    }

    let n_committed = committed.len() as u64;
    report.set("txns", txns as u64);
    report.set("committed", n_committed);
    report.set("aborted", aborted);
    report.set("txn_errors", errors);
    let decided = n_committed + aborted;
    report.set(
        "abort_rate",
        if decided == 0 {
            0.0
        } else {
            aborted as f64 / decided as f64
        },
    );

    // first committer wins: two committed writers of one key never overlap
    let mut writers: BTreeMap<&[u8], Vec<TxnId>> = BTreeMap::new();
    for (tid, _, key) in &committed {
        writers.entry(key.as_slice()).or_default().push(*tid);
    }
    for w in writers.values_mut() {
        w.sort_unstable();
    }
    let mut overlaps = 0u64;
    for (tid, snap, key) in &committed {
        let w = &writers[key.as_slice()];
        let lo = w.partition_point(|t| *t <= snap.high_water);
        let hi = w.partition_point(|t| t < tid);
        overlaps += hi.saturating_sub(lo) as u64;
        overlaps += snap
            .excluded
            .iter()
            .filter(|t| **t < *tid && w.binary_search(t).is_ok())
            .count() as u64;
    }
    report.set("fcw_violations", overlaps);
    if overlaps > 0 {
        report.violation(format!(
            "{overlaps} concurrent committed writers of one key"
        ));
    }

    // the counters must equal the committed increments
    if errors == 0 {
        for (key, want) in &increments {
            let got = c.get_latest_version(key).and_then(|(v, _)| c.get(key, &v));
            match got {
                Ok(v) if v.as_slice() == want.to_be_bytes() => {}
                _ => report.violation(format!(
                    "counter {} does not equal its {want} committed increments",
                    String::from_utf8_lossy(key)
                )),
            }
        }
    }
    Ok(tick)
}

fn notify(
    env: &dyn Env,
    rng: &mut ChaCha8Rng,
    keys: u32,
    writes: u32,
    apps: u32,
    report: &mut MetricsReport,
) -> Result<u64> {
    let c = client(env, "bench");
    let key_of = |k: u32| format!("n{k:04}").into_bytes();
    let subscribed = |app: u32, k: u32| apps == 1 || !(k + app).is_multiple_of(apps + 1);
    for app in 0..apps {
        for k in (0..keys).filter(|&k| subscribed(app, k)) {
            c.subscribe(&format!("app{app}"), &key_of(k));
        }
    }
    let mut aggs: BTreeMap<String, Aggregator> = BTreeMap::new();
    let mut latest = vec![VersionId::ROOT; keys as usize];
    let mut acked: Vec<(u32, VersionId)> = Vec::new();
    let mut write_errors = 0u64;
    for i in 0..writes {
        env.tick(i as u64);
        let k = rng.random_range(0..keys);
        let value = (i as u64).to_be_bytes();
        match c.put(&key_of(k), &latest[k as usize], &value, false) {
            Ok(v) => {
                latest[k as usize] = v.clone();
                acked.push((k, v));
            }
            Err(_) => write_errors += 1,
        }
        env.pump(&mut aggs)?;
    }
    env.tick(writes as u64);
    let mut rounds = 0u64;
    while env.pump(&mut aggs)? > 0 {
        rounds += 1;
        if rounds > 10_000 {
            report.violation("notifications never drained");
            break;
        }
    }

    let (mut expected, mut distinct, mut raw, mut missing, mut extra) =
        (0u64, 0u64, 0u64, 0u64, 0u64);
    for app in 0..apps {
        let want: BTreeSet<(Vec<u8>, VersionId)> = acked
            .iter()
            .filter(|(k, _)| subscribed(app, *k))
            .map(|(k, v)| (key_of(*k), v.clone()))
            .collect();
        let empty = Aggregator::default();
        let agg = aggs.get(&format!("app{app}")).unwrap_or(&empty);
        expected += want.len() as u64;
        distinct += agg.distinct().len() as u64;
        raw += agg.raw_deliveries;
        missing += want.difference(agg.distinct()).count() as u64;
        extra += agg.distinct().difference(&want).count() as u64;
    }
    report.set("writes", acked.len() as u64);
    report.set("write_errors", write_errors);
    report.set("expected_events", expected);
    report.set("distinct_events", distinct);
    report.set("raw_deliveries", raw);
    report.set("missing_events", missing);
    report.set("unacked_events", extra);
    report.set("drain_rounds", rounds);
    if missing > 0 {
        report.violation(format!(
            "{missing} written versions never reached a subscriber"
        ));
    }
    Ok(writes as u64)
}

/// Frame counters and per-node statistics for the whole cluster.
pub fn cluster_metrics(env: &dyn Env, report: &mut MetricsReport) {
    let n = env.counters();
    report.set("net.client_frames", n.client_frames);
    report.set("net.server_frames", n.server_frames);
    report.set("net.refused", n.refused);
    report.set("net.dropped", n.dropped);
    report.set("net.bytes", n.bytes);
    for (op, count) in &n.by_opcode {
        report.set(format!("net.frames.{op}"), *count);
    }
    let c = client(env, "stats");
    let (mut resident, mut records, mut hits, mut misses, mut unreachable) =
        (0u64, 0u64, 0u64, 0u64, 0u64);
    for node in env.nodes() {
        match c.server_stats(node) {
            Ok(s) => {
                resident += s.store.resident_bytes();
                records += s.store.total_records();
                hits += s.store.cache_hits;
                misses += s.store.cache_misses;
            }
            Err(_) => unreachable += 1,
        }
    }
    report.set("store.resident_bytes", resident);
    report.set("store.records", records);
    report.set("cache.hits", hits);
    report.set("cache.misses", misses);
    report.set(
        "cache.hit_rate",
        if hits + misses == 0 {
            0.0
        } else {
            hits as f64 / (hits + misses) as f64
        },
    );
    report.set("stats_unreachable", unreachable);
}
