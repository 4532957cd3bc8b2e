//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use vstore::client::ClusterParams;
use vstore::delta::{ByteDelta, DeltaCodec};
use vstore::fixtures::{derive_dag, figure_dag, random_dag, DagNode};
use vstore::record::Payload;
use vstore::server::ServerOptions;
use vstore::sim::{run_sim, ClusterSpec, MetricsReport, SimConfig, SimNetwork};
use vstore::store::NodeStore;
use vstore::txn::Coordinator;
use vstore::txn::{TxnContext, TxnDriver, TxnService, TxnState};
use vstore::ugit::{snapshot_dir, Repo};
use vstore::version::{merge_preimage, put_preimage};
use vstore::view::merge::{aggregation, append, choose_one, closest_common_ancestor};
use vstore::view::MergeRegistry;
use vstore::{verify_record, Client, Error, NodeId, NodeRecord, Ring, VersionId};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn cluster(nodes: u32, n: usize, w: usize, t: u64) -> SimNetwork {
    SimNetwork::new(&ClusterSpec {
        nodes,
        params: ClusterParams {
            n,
            w,
            ..Default::default()
        },
        virtual_points: 64,
        server: ServerOptions {
            default_t: t,
            cache_bytes: 1 << 20,
            seed: 3,
            host_coordinator: false,
        },
    })
    .expect("cluster")
}

fn sim(json: &str) -> Result<MetricsReport, String> {
    let cfg = SimConfig::parse(json).map_err(|e| e.to_string())?;
    let r = run_sim(&cfg).map_err(|e| e.to_string())?;
    if !r.is_ok() {
        return Err(format!("violations: {:?}", r.violations));
    }
    Ok(r)
}

fn metric(r: &MetricsReport, name: &str) -> Result<u64, String> {
    r.u64(name).ok_or_else(|| format!("missing metric {name}"))
}

fn write_dag(c: &Client<'_>, key: &[u8], dag: &[DagNode]) -> Result<Vec<VersionId>, String> {
    let mut vs: Vec<VersionId> = Vec::with_capacity(dag.len());
    for n in dag {
        let v = match n {
            DagNode::Put { parent, value } => {
                let p = parent.map_or(VersionId::ROOT, |i| vs[i].clone());
                c.put(key, &p, value, false)
            }
            DagNode::Merge { parents, value } => {
                c.merge(key, &vs[parents.0], &vs[parents.1], value, false)
            }
        }
        .map_err(|e| format!("write failed: {e}"))?;
        vs.push(v);
    }
    Ok(vs)
}

fn scan_ids(c: &Client<'_>, key: &[u8], v: &VersionId, m: usize) -> Result<Vec<VersionId>, String> {
    c.get_k_previous(key, v, m)
        .map(|(rs, _)| rs.into_iter().map(|r| r.version).collect())
        .map_err(|e| format!("scan failed: {e}"))
}

fn c1_scan_round_trips() -> Outcome {
    let base = r#"{"nodes": 4, "seed": 1, "N": 1, "W": 1, "default_t": 1048576, "workload":"#;
    let k = sim(&format!(
        r#"{base} {{"kind": "scan_chain", "chain_len": 32, "m": 32}}}}"#
    ))?;
    let naive = sim(&format!(
        r#"{base} {{"kind": "scan_chain", "chain_len": 32, "m": 32, "naive": true}}}}"#
    ))?;
    let (a, b) = (
        metric(&k, "client_round_trips")?,
        metric(&naive, "client_round_trips")?,
    );
    ensure!(
        a == 1 && b == 32,
        "round trips {a} (want 1) and {b} (want 32)"
    );
    ensure!(
        k.get("colocated") == Some(&true.into()),
        "chain was not colocated"
    );
    Ok(format!("batched={a} naive={b}"))
}

/// Reference scan over the whole DAG.
fn oracle_scan(
    parents: &BTreeMap<VersionId, Vec<VersionId>>,
    start: &VersionId,
    m: usize,
) -> Vec<VersionId> {
    let mut out = Vec::new();
    if parents[start].len() == 2 {
        return out;
    }
    let mut cur = start.clone();
    while out.len() < m {
        let p = parents[&cur][0].clone();
        if p.is_root() {
            break;
        }
        out.push(p.clone());
        if parents[&p].len() == 2 {
            break;
        }
        cur = p;
    }
    out
}

fn c2_scan_examples() -> Outcome {
    let net = cluster(3, 3, 3, 1 << 20);
    let c = net.client("u");
    let vs = write_dag(&c, b"fig", &figure_dag())?;
    let got = scan_ids(&c, b"fig", &vs[7], 3)?;
    ensure!(
        got == [vs[6].clone(), vs[1].clone(), vs[0].clone()],
        "GetKPrevious(v8,3) wrong"
    );
    let got = scan_ids(&c, b"fig", &vs[8], 3)?;
    ensure!(
        got == [vs[5].clone(), vs[4].clone()],
        "GetKPrevious(v9,3) wrong"
    );

    // small regions force spills, so scans resume across nodes
    let net = cluster(4, 2, 1, 2048);
    let c = net.client("u");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut queries = 0;
    for d in 0..100 {
        let size = rng.random_range(1..=1000);
        let dag = random_dag(&mut rng, size, 12);
        let key = format!("dag{d}");
        let vs = write_dag(&c, key.as_bytes(), &dag)?;
        let derived = derive_dag(key.as_bytes(), &dag, b"");
        let parents: BTreeMap<VersionId, Vec<VersionId>> = vs
            .iter()
            .zip(&dag)
            .map(|(v, n)| {
                let ps = match n {
                    DagNode::Put { parent: None, .. } => vec![VersionId::ROOT],
                    _ => n.parent_indices().iter().map(|&i| vs[i].clone()).collect(),
                };
                (v.clone(), ps)
            })
            .collect();
        for (v, w) in vs.iter().zip(&derived.versions) {
            ensure!(v.same_content(w), "stored version differs from derivation");
        }
        for _ in 0..10 {
            let start = &vs[rng.random_range(0..vs.len())];
            let m = rng.random_range(1..=64);
            let mut want = oracle_scan(&parents, start, m);
            for p in want.iter_mut() {
                // parents recorded in the DAG carry the tag of the stored copy
                *p = vs
                    .iter()
                    .find(|v| v.same_content(p))
                    .expect("known")
                    .clone();
            }
            let got = scan_ids(&c, key.as_bytes(), start, m)?;
            ensure!(
                got == want,
                "dag {d}: scan of {start} m={m} differs from oracle: got {} {:?} want {} {:?}",
                got.len(),
                got.iter().map(|v| (v.l, v.n.len())).collect::<Vec<_>>(),
                want.len(),
                want.iter().map(|v| (v.l, v.n.len())).collect::<Vec<_>>()
            );
            queries += 1;
        }
    }
    Ok(format!(
        "figure exact, {queries} oracle queries on 100 DAGs"
    ))
}

fn c3_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen: HashMap<[u8; 32], Vec<u8>> = HashMap::new();
    let mut records: Vec<NodeRecord> = Vec::new();
    let mut collisions = 0;
    for i in 0..10_000u32 {
        let key = format!("k{}", rng.random_range(0..50)).into_bytes();
        let mut value = vec![0u8; rng.random_range(0..64)];
        rng.fill(&mut value[..]);
        let pick = |rng: &mut ChaCha8Rng, rs: &[NodeRecord]| {
            if rs.is_empty() || rng.random_ratio(1, 10) {
                VersionId::ROOT
            } else {
                rs[rng.random_range(0..rs.len())].version.clone()
            }
        };
        let p1 = pick(&mut rng, &records);
        let r = if i % 3 == 0 && records.len() > 2 {
            let p2 = pick(&mut rng, &records);
            match NodeRecord::merge(&key, p1.clone(), p2, value.clone(), b"") {
                Ok(r) => r,
                Err(_) => NodeRecord::put(&key, p1, value, b""),
            }
        } else {
            NodeRecord::put(&key, p1, value, b"")
        };
        let value = r.value().expect("full");
        let preimage = match r.parents.as_slice() {
            [p] => put_preimage(&r.key, p, value),
            [a, b] => merge_preimage(&r.key, a, b, value),
            _ => unreachable!(),
        };
        if let Some(prev) = seen.insert(r.version.h, preimage.clone()) {
            if prev != preimage {
                collisions += 1;
            }
        }
        records.push(r);
    }
    ensure!(collisions == 0, "{collisions} digest collisions");
    let honest = records.iter().filter(|r| verify_record(r)).count();
    ensure!(
        honest == records.len(),
        "{} honest records failed",
        records.len() - honest
    );

    let mut detected = 0;
    let mut trials = 0;
    for r in &records {
        // value byte
        if let Payload::Full(v) = &r.payload {
            if !v.is_empty() {
                let mut t = r.clone();
                let Payload::Full(tv) = &mut t.payload else {
                    unreachable!()
                };
                let i = rng.random_range(0..tv.len());
                tv[i] ^= 1 << rng.random_range(0..8);
                trials += 1;
                detected += usize::from(!verify_record(&t));
            }
        }
        // parent byte
        let mut t = r.clone();
        let pi = rng.random_range(0..t.parents.len());
        let i = rng.random_range(0..32);
        t.parents[pi].h[i] ^= 1 << rng.random_range(0..8);
        trials += 1;
        detected += usize::from(!verify_record(&t));
    }
    ensure!(
        detected == trials,
        "{} of {trials} tamperings undetected",
        trials - detected
    );
    Ok(format!(
        "10000 derivations, {trials} tamperings all detected"
    ))
}

fn c4_locality() -> Outcome {
    let net = cluster(4, 1, 1, 1000);
    let c = net.client("u");
    let home = net.ring().primary(b"chain", b"");
    let mut chain = Vec::new();
    let mut parent = VersionId::ROOT;
    for i in 0..60u32 {
        let mut value = vec![b'.'; 100];
        value[..4].copy_from_slice(&i.to_be_bytes());
        parent = c
            .put(b"chain", &parent, &value, false)
            .map_err(|e| e.to_string())?;
        chain.push((parent.clone(), value, c.stats().redirects));
    }
    let first = chain
        .iter()
        .position(|(_, _, r)| *r > 0)
        .ok_or("chain never redirected")?;
    for (v, _, _) in &chain[..first] {
        ensure!(v.n.is_empty(), "pre-redirect version {v} carries a tag");
        ensure!(
            net.server(home).store().contains(b"chain", v),
            "{v} not on the home node"
        );
    }
    let mut spilled = 0;
    for (v, value, _) in &chain[first..] {
        ensure!(!v.n.is_empty(), "post-redirect version {v} has no tag");
        net.reset_counters();
        let got = c.get(b"chain", v).map_err(|e| e.to_string())?;
        ensure!(&got == value, "wrong value for {v}");
        let n = net.counters();
        ensure!(
            n.client_frames == 1 && n.server_frames == 0,
            "read of {v} took {} client and {} server frames",
            n.client_frames,
            n.server_frames
        );
        spilled += 1;
    }
    Ok(format!(
        "{first} colocated before redirect, {spilled} spilled reads at 1 hop"
    ))
}

fn c5_replication() -> Outcome {
    let mut cells = 0;
    for w in 1..=3usize {
        for down_before in [true, false] {
            let net = cluster(5, 3, w, 1 << 20);
            let c = net.client("u");
            let key = format!("w{w}{down_before}");
            let route = net.ring().route(key.as_bytes(), b"", 3);
            if down_before {
                net.set_down(route[1], true);
            }
            let live = if down_before { 2 } else { 3 };
            let r = c.put(key.as_bytes(), &VersionId::ROOT, b"value", false);
            ensure!(
                r.is_ok() == (live >= w),
                "W={w} live={live}: write returned {r:?}"
            );
            net.set_down(route[1], false);
            if !down_before {
                net.set_down(route[1], true);
                net.set_down(route[1], false);
            }
            if let (Ok(v), true) = (&r, w >= 2) {
                for x in 0..5 {
                    net.set_down(NodeId(x), true);
                    let got = c.get(key.as_bytes(), v);
                    net.set_down(NodeId(x), false);
                    ensure!(
                        got.as_deref() == Ok(&b"value"[..]),
                        "W={w}: unreadable with node {x} down"
                    );
                }
            }
            cells += 1;
        }
    }
    Ok(format!("{cells} grid cells"))
}

fn c6_compression() -> Outcome {
    let base = r#"{"nodes": 3, "seed": 6, "N": 1, "W": 1, "default_t": 134217728, "workload":"#;
    let dw = sim(&format!(
        r#"{base} {{"kind": "delta", "versions": 10000, "record_size": 1024, "max_edit": 32, "full_every": 8}}}}"#
    ))?;
    let rw = sim(&format!(
        r#"{base} {{"kind": "random", "versions": 10000, "record_size": 1024}}}}"#
    ))?;
    let d = dw.f64("compression_ratio").ok_or("no ratio")?;
    let r = rw.f64("compression_ratio").ok_or("no ratio")?;
    ensure!(d < 0.30, "DW ratio {d:.4} >= 0.30");
    ensure!(r <= 1.10, "RW ratio {r:.4} > 1.10");

    let codec = ByteDelta::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..10_000 {
        let mut base = vec![0u8; rng.random_range(0..2048)];
        rng.fill(&mut base[..]);
        let mut target = base.clone();
        match i % 4 {
            0 => {
                let mut t = vec![0u8; rng.random_range(0..2048)];
                rng.fill(&mut t[..]);
                target = t;
            }
            _ => {
                for _ in 0..rng.random_range(0..8) {
                    let at = rng.random_range(0..=target.len());
                    match rng.random_range(0..3) {
                        0 => {
                            let mut ins = vec![0u8; rng.random_range(1..40)];
                            rng.fill(&mut ins[..]);
                            target.splice(at..at, ins);
                        }
                        1 if at < target.len() => {
                            let end = (at + rng.random_range(1..40)).min(target.len());
                            target.drain(at..end);
                        }
                        _ if at < target.len() => target[at] ^= 0xff,
                        _ => {}
                    }
                }
            }
        }
        let delta = codec.encode(&base, &target);
        let back = codec
            .decode(&base, &delta)
            .map_err(|e| format!("case {i}: {e}"))?;
        ensure!(back == target, "case {i}: decode(encode) differs");
    }
    Ok(format!(
        "DW {:.1}%, RW {:.1}%, 10000 codec round trips",
        d * 100.0,
        r * 100.0
    ))
}

#[derive(Clone, Copy, Debug)]
struct Program {
    read: u8,
    write: u8,
}

fn key(k: u8) -> Vec<u8> {
    vec![b'x' + k]
}

fn decode(v: &[u8]) -> u64 {
    u64::from_be_bytes(v.try_into().expect("8 bytes"))
}

/// Runs one schedule of two read-increment-write transactions. `order[i]`
/// names the transaction taking step `i`.
fn run_schedule(progs: [Program; 2], order: &[usize]) -> Result<(), String> {
    let ring = Arc::new(Ring::new(&[NodeId(0)], 8).expect("ring"));
    let store = NodeStore::new(NodeId(0), ring, 1 << 20, 0, 0);
    let coord = Coordinator::new();
    let d = TxnDriver::new(&coord, &store);
    let mut init = d.begin().map_err(|e| e.to_string())?;
    for k in 0..2 {
        d.write(&mut init, &key(k), &0u64.to_be_bytes())
            .map_err(|e| e.to_string())?;
    }
    d.commit(&mut init).map_err(|e| e.to_string())?;

    let mut ctx: [Option<TxnContext>; 2] = [None, None];
    let mut step = [0usize; 2];
    let mut read = [0u64; 2];
    let mut done = [false; 2];
    for &t in order {
        if done[t] {
            continue;
        }
        let p = progs[t];
        let s = step[t];
        step[t] += 1;
        if s == 0 {
            ctx[t] = Some(d.begin().map_err(|e| e.to_string())?);
            continue;
        }
        let c = ctx[t].as_mut().expect("begun");
        let state = match s {
            1 => match d.read(c, &key(p.read)) {
                Ok(v) => {
                    read[t] = decode(&v);
                    TxnState::Active
                }
                Err(Error::TxnAborted) => TxnState::Aborted,
                Err(e) => return Err(e.to_string()),
            },
            2 => match d.write(c, &key(p.write), &(read[t] + 1).to_be_bytes()) {
                Ok(()) => TxnState::Active,
                Err(Error::TxnAborted) => TxnState::Aborted,
                Err(e) => return Err(e.to_string()),
            },
            3 => d.commit_acquire(c).map_err(|e| e.to_string())?,
            4 => d.commit_install(c).map_err(|e| e.to_string())?,
            _ => d.commit_finish(c).map_err(|e| e.to_string())?,
        };
        if state != TxnState::Active {
            done[t] = true;
        }
    }
    let committed: Vec<usize> = (0..2)
        .filter(|&t| {
            ctx[t]
                .as_ref()
                .is_some_and(|c| c.state == TxnState::Committed)
        })
        .collect();
    if committed.len() == 2 && progs[0].write == progs[1].write {
        let (a, b) = (ctx[0].as_ref().unwrap(), ctx[1].as_ref().unwrap());
        let serial = b.snapshot.contains(a.tid) || a.snapshot.contains(b.tid);
        if !serial {
            return Err(format!(
                "{progs:?} {order:?}: concurrent writers both committed"
            ));
        }
    }
    // lost update: increments of one key must all be visible
    if progs.iter().all(|p| p.read == p.write) && progs[0].write == progs[1].write {
        let k = key(progs[0].write);
        let (v, _) = coord.get_latest_version(&k).map_err(|e| e.to_string())?;
        let got =
            decode(&vstore::txn::VersionedStore::get(&store, &k, &v).map_err(|e| e.to_string())?);
        if got != committed.len() as u64 {
            return Err(format!(
                "{progs:?} {order:?}: counter {got} after {} commits",
                committed.len()
            ));
        }
    }
    Ok(())
}

/// All interleavings of two sequences of `n` steps each.
fn interleavings(n: usize) -> Vec<Vec<usize>> {
    fn go(a: usize, b: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if a == 0 && b == 0 {
            out.push(cur.clone());
            return;
        }
        for (t, left) in [(0, a), (1, b)] {
            if left > 0 {
                cur.push(t);
                if t == 0 {
                    go(a - 1, b, cur, out);
                } else {
                    go(a, b - 1, cur, out);
                }
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(n, n, &mut Vec::new(), &mut out);
    out
}

fn c7_snapshot_isolation() -> Outcome {
    let orders = interleavings(6);
    let progs: Vec<Program> = (0..4)
        .map(|i| Program {
            read: i / 2,
            write: i % 2,
        })
        .collect();
    let mut schedules = 0;
    for &p0 in &progs {
        for &p1 in &progs {
            for order in &orders {
                run_schedule([p0, p1], order)?;
                schedules += 1;
            }
        }
    }

    let base = r#"{"nodes": 3, "seed": 7, "N": 2, "W": 2, "workload":"#;
    let big = sim(&format!(
        r#"{base} {{"kind": "txn_increment", "txns": 10000, "keys": 50, "zipf": 1.0, "concurrency": 8}}}}"#
    ))?;
    ensure!(
        metric(&big, "txn_errors")? == 0,
        "transaction errors in the randomized run"
    );
    let rate = |z: f64| -> Result<f64, String> {
        let r = sim(&format!(
            r#"{base} {{"kind": "txn_increment", "txns": 2000, "keys": 100, "zipf": {z}, "concurrency": 8}}}}"#
        ))?;
        r.f64("abort_rate")
            .ok_or_else(|| "no abort rate".to_string())
    };
    let (uniform, skewed) = (rate(0.0)?, rate(1.5)?);
    ensure!(
        skewed > uniform,
        "abort rate at zipf 1.5 ({skewed}) <= zipf 0 ({uniform})"
    );
    Ok(format!(
        "{schedules} schedules, {} committed increments exact, abort rate {uniform:.3} -> {skewed:.3}",
        metric(&big, "committed")?
    ))
}

struct AclRun {
    checks: usize,
    cache_hits: u64,
    max_records: u64,
    holders: u64,
}

/// Owner writes 20 versions and grants two users overlapping subsets, then
/// every user reads and scans every version with each node down in turn.
fn acl_fixture(
    net: &SimNetwork,
    down_during: Option<std::ops::Range<u32>>,
) -> Result<AclRun, String> {
    let owner = net.client("owner");
    let home = net.ring().primary(b"secret", b"");
    let mut vs = Vec::new();
    let mut p = VersionId::ROOT;
    for i in 0..20u32 {
        let down = down_during.as_ref().is_some_and(|r| r.contains(&i));
        net.set_down(home, down);
        p = owner
            .put(
                b"secret",
                &p,
                format!("value-{i:03}-{}", "x".repeat(80)).as_bytes(),
                false,
            )
            .map_err(|e| e.to_string())?;
        vs.push(p.clone());
    }
    net.set_down(home, false);
    let policy_records = || -> u64 { net.servers().map(|s| s.stats().acl.policy_records).sum() };
    let grants: BTreeMap<&str, BTreeSet<usize>> = [
        ("alice", (0..20).filter(|i| i % 2 == 0).collect()),
        ("bob", (0..20).filter(|i| i % 3 == 0).collect()),
    ]
    .into();
    let (mut max_records, mut holders) = (0, 0);
    for (user, idx) in &grants {
        let before = policy_records();
        let batch: Vec<VersionId> = idx.iter().map(|&i| vs[i].clone()).collect();
        owner
            .put_policy(b"secret", user, &batch)
            .map_err(|e| e.to_string())?;
        let added = policy_records() - before;
        let held = net
            .servers()
            .filter(|s| batch.iter().any(|v| s.store().contains(b"secret", v)))
            .count() as u64;
        ensure!(
            added == held,
            "grant to {user} wrote {added} records, {held} nodes hold its versions"
        );
        max_records = max_records.max(added);
        holders = holders.max(held);
    }
    let allowed = |user: &str, v: &VersionId| {
        user == "owner"
            || grants
                .get(user)
                .is_some_and(|g| g.iter().any(|&i| vs[i] == *v))
    };
    // an outage may hide a version, but never grants access to one
    let reachable = |v: &VersionId| {
        net.servers()
            .any(|s| !net.is_down(s.id()) && s.store().contains(b"secret", v))
    };
    let mut checks = 0;
    let mut check_reads = |label: &str| -> Result<(), String> {
        for user in ["owner", "alice", "bob"] {
            let c = net.client(user);
            for v in &vs {
                let r = c.get(b"secret", v);
                if allowed(user, v) {
                    ensure!(
                        r.is_ok() || !reachable(v),
                        "{label}: {user} read of {v} gave {r:?}"
                    );
                } else {
                    ensure!(r.is_err(), "{label}: {user} read {v} without a grant");
                }
                checks += 1;
            }
            for v in &vs {
                for _ in 0..2 {
                    let got = match c.get_k_previous(b"secret", v, 20) {
                        Ok((rs, _)) => rs.into_iter().map(|r| r.version).collect::<Vec<_>>(),
                        Err(_) if !reachable(v) => continue,
                        Err(e) => return Err(format!("{label}: {user} scan from {v} failed: {e}")),
                    };
                    for g in &got {
                        ensure!(allowed(user, g), "{label}: {user} scan leaked {g}");
                    }
                    checks += got.len() + 1;
                }
            }
        }
        Ok(())
    };
    check_reads("all up")?;
    for x in 0..3 {
        net.set_down(NodeId(x), true);
        let r = check_reads(&format!("node {x} down"));
        net.set_down(NodeId(x), false);
        r?;
    }
    let cache_hits = net.servers().map(|s| s.stats().store.cache_hits).sum();
    Ok(AclRun {
        checks,
        cache_hits,
        max_records,
        holders,
    })
}

fn c8_access_control() -> Outcome {
    const N: u64 = 2;
    // the key stays on its N replicas; the primary is down for versions
    // 5..12, so reads fall back to the other replica
    let colocated = acl_fixture(&cluster(3, N as usize, 1, 1 << 20), Some(5..13))?;
    ensure!(
        colocated.max_records <= N,
        "a batched grant wrote {} policy records (N={N})",
        colocated.max_records
    );
    // small regions spill the chain across all three nodes, so scans cross
    // nodes and fill the predecessor cache
    let spilled = acl_fixture(&cluster(3, N as usize, 1, 800), None)?;
    ensure!(
        spilled.cache_hits > 0,
        "the spilled layout never used the cache"
    );
    Ok(format!(
        "{} checks, 0 unauthorized, <= {} policy records per grant; \
         spilled layout: {} checks, 0 unauthorized, {} cache hits, {} records per grant over {} holder nodes",
        colocated.checks,
        colocated.max_records,
        spilled.checks,
        spilled.cache_hits,
        spilled.max_records,
        spilled.holders
    ))
}

/// Ancestors of `v`, itself included.
fn ancestors(parents: &BTreeMap<VersionId, Vec<VersionId>>, v: &VersionId) -> BTreeSet<VersionId> {
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

fn c9_merge() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pairs = 0;
    for _ in 0..100 {
        let size = rng.random_range(2..=200);
        let dag = random_dag(&mut rng, size, 6);
        let w = derive_dag(b"k", &dag, b"");
        for _ in 0..30 {
            let a = &w.versions[rng.random_range(0..size)];
            let b = &w.versions[rng.random_range(0..size)];
            let common: Vec<VersionId> = ancestors(&w.parents, a)
                .intersection(&ancestors(&w.parents, b))
                .cloned()
                .collect();
            let want = common
                .into_iter()
                .min_by(|x, y| y.l.cmp(&x.l).then(x.h.cmp(&y.h)))
                .unwrap_or(VersionId::ROOT);
            let got = closest_common_ancestor(a, b, &mut |v| Ok(w.parents[v].clone()))
                .map_err(|e| e.to_string())?;
            ensure!(got == want, "LCA({a}, {b}) = {got}, oracle {want}");
            pairs += 1;
        }
    }
    let i = |x: i64| x.to_be_bytes().to_vec();
    let cases: [(&str, Vec<u8>, Vec<u8>); 5] = [
        (
            "append",
            append(b"ab", b"abc", b"abd").unwrap(),
            b"abcd".to_vec(),
        ),
        ("append", append(b"ab", b"x", b"y").unwrap(), b"xy".to_vec()),
        (
            "aggregation",
            aggregation(&i(10), &i(13), &i(7)).unwrap(),
            i(10),
        ),
        ("aggregation", aggregation(b"", &i(2), &i(5)).unwrap(), i(7)),
        (
            "choose-one",
            choose_one(b"a", b"b", b"c").unwrap(),
            b"b".to_vec(),
        ),
    ];
    let reg = MergeRegistry::new();
    for (name, got, want) in &cases {
        ensure!(got == want, "{name} produced {got:?}, want {want:?}");
    }
    for name in ["append", "aggregation", "choose-one"] {
        let f = reg.get(name).map_err(|e| e.to_string())?;
        let args: (&[u8], &[u8], &[u8]) = (&i(1), &i(4), &i(9));
        ensure!(
            f(args.0, args.1, args.2).ok() == f(args.0, args.1, args.2).ok(),
            "{name} is not deterministic"
        );
    }
    Ok(format!(
        "{pairs} LCA pairs match the oracle, builtins exact"
    ))
}

fn c10_notification() -> Outcome {
    let r = sim(
        r#"{"nodes": 5, "seed": 10, "N": 3, "W": 2, "notify_drop_rate": 0.3,
            "faults": [{"node": 2, "from": 50, "to": 150, "kind": "down"}],
            "workload": {"kind": "notify", "keys": 12, "writes": 400, "apps": 3}}"#,
    )?;
    let (missing, extra) = (metric(&r, "missing_events")?, metric(&r, "unacked_events")?);
    ensure!(
        missing == 0 && extra == 0,
        "{missing} missing, {extra} unexpected events"
    );
    let (distinct, expected) = (
        metric(&r, "distinct_events")?,
        metric(&r, "expected_events")?,
    );
    ensure!(
        distinct == expected,
        "delivered {distinct} distinct events, want {expected}"
    );
    Ok(format!(
        "{distinct} events from {} raw deliveries",
        metric(&r, "raw_deliveries")?
    ))
}

fn put_file(root: &Path, rel: &str, body: &[u8]) {
    let p = root.join(rel);
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(p, body).unwrap();
}

fn c11_ugit() -> Outcome {
    let net = cluster(3, 2, 2, 1 << 20);
    let err = |e: Error| e.to_string();
    let work = TempDir::new().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..50 {
        let mut body = vec![0u8; rng.random_range(0..4096)];
        rng.fill(&mut body[..]);
        put_file(
            work.path(),
            &format!("d{}/s{}/f{i}.bin", i % 5, i % 3),
            &body,
        );
    }

    // long history ending at the same content as a single commit
    let long = Repo::open(net.client("dev"), "long");
    let mut head = VersionId::ROOT;
    let scratch = TempDir::new().map_err(|e| e.to_string())?;
    for i in 0..99 {
        put_file(scratch.path(), "f", format!("step {i}").as_bytes());
        head = long
            .commit(scratch.path(), "step", "dev", &head, i)
            .map_err(err)?;
    }
    head = long
        .commit(work.path(), "final", "dev", &head, 99)
        .map_err(err)?;
    let short = Repo::open(net.client("dev"), "short");
    let one = short
        .commit(work.path(), "only", "dev", &VersionId::ROOT, 0)
        .map_err(err)?;

    let out = TempDir::new().map_err(|e| e.to_string())?;
    long.reset_counters();
    short.reset_counters();
    let n = long
        .checkout(&head, &out.path().join("long"))
        .map_err(err)?;
    short
        .checkout(&one, &out.path().join("short"))
        .map_err(err)?;
    ensure!(n == 50, "checked out {n} files");
    let want = snapshot_dir(work.path()).map_err(err)?;
    ensure!(
        snapshot_dir(&out.path().join("long")).map_err(err)? == want,
        "checkout differs from the tree"
    );
    let (a, b) = (
        long.counters().objects_fetched,
        short.counters().objects_fetched,
    );
    ensure!(
        a == b,
        "100-commit checkout fetched {a} objects, 1-commit fetched {b}"
    );

    // history with one merge: the first scan batch ends at the merge commit
    let repo = Repo::open(net.client("dev"), "merged");
    let w = TempDir::new().map_err(|e| e.to_string())?;
    put_file(w.path(), "x", b"0");
    put_file(w.path(), "y", b"0");
    let base = repo
        .commit(w.path(), "base", "dev", &VersionId::ROOT, 0)
        .map_err(err)?;
    put_file(w.path(), "x", b"1");
    let left = repo
        .commit(w.path(), "left", "dev", &base, 1)
        .map_err(err)?;
    put_file(w.path(), "x", b"0");
    put_file(w.path(), "y", b"1");
    let right = repo
        .commit(w.path(), "right", "dev", &base, 2)
        .map_err(err)?;
    let merge = repo.merge(&left, &right, "merge", "dev", 3).map_err(err)?;
    let mut tip = merge.clone();
    for i in 0..3 {
        put_file(w.path(), "z", format!("{i}").as_bytes());
        tip = repo
            .commit(w.path(), "after", "dev", &tip, 4 + i)
            .map_err(err)?;
    }
    let (batch, _) = repo
        .client()
        .get_k_previous(&repo.key("commit"), &tip, 32)
        .map_err(err)?;
    ensure!(
        batch.last().map(|r| &r.version) == Some(&merge),
        "first batch did not stop at the merge commit"
    );
    ensure!(batch.len() == 3, "first batch had {} commits", batch.len());
    let log = repo.log(&tip, 32).map_err(err)?;
    ensure!(log.len() == 6, "log returned {} commits", log.len());
    Ok(format!(
        "50 files exact, {a} fetches for both histories, batch stops at merge"
    ))
}

fn c12_determinism() -> Outcome {
    let configs = [
        r#"{"nodes": 5, "seed": 12, "N": 3, "W": 2, "drop_rate": 0.02,
            "faults": [{"node": 1, "from": 100, "to": 400, "kind": "down"},
                       {"node": 3, "from": 700, "to": 701, "kind": "crash_erase"}],
            "workload": {"kind": "mixed_rw", "ops": 1500, "keys": 30, "read_fraction": 0.5, "record_size": 200}}"#,
        r#"{"nodes": 3, "seed": 12, "N": 2, "W": 2,
            "workload": {"kind": "txn_increment", "txns": 1000, "keys": 20, "zipf": 1.2, "concurrency": 6}}"#,
        r#"{"nodes": 4, "seed": 12, "N": 2, "W": 1, "notify_drop_rate": 0.2,
            "workload": {"kind": "notify", "keys": 8, "writes": 200, "apps": 2}}"#,
        r#"{"nodes": 3, "seed": 12, "N": 1, "W": 1, "default_t": 65536,
            "workload": {"kind": "delta", "versions": 500, "record_size": 1024, "max_edit": 32, "full_every": 8}}"#,
    ];
    for json in configs {
        let cfg = SimConfig::parse(json).map_err(|e| e.to_string())?;
        let a = run_sim(&cfg).map_err(|e| e.to_string())?.to_ndjson();
        let b = run_sim(&cfg).map_err(|e| e.to_string())?.to_ndjson();
        ensure!(a == b, "reports differ for {json}");
    }
    Ok(format!("{} configs byte-identical", configs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("scan round trips", c1_scan_round_trips),
        ("scan examples", c2_scan_examples),
        ("version integrity", c3_integrity),
        ("locality", c4_locality),
        ("replication", c5_replication),
        ("compression", c6_compression),
        ("snapshot isolation", c7_snapshot_isolation),
        ("access control", c8_access_control),
        ("merge", c9_merge),
        ("notification", c10_notification),
        ("ugit", c11_ugit),
        ("determinism", c12_determinism),
    ];
    let total = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!(
        "{} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        total.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
