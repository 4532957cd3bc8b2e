//! Deterministic simulator, seeded workloads and the TCP benchmark driver.

pub mod config;
pub mod metrics;
pub mod network;
pub mod workload;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

pub use config::{SimConfig, WorkloadSpec};
pub use metrics::MetricsReport;
pub use network::{ClusterSpec, Fault, FaultKind, NetCounters, SimNetwork};
pub use workload::{cluster_metrics, run_workload, Env};

use crate::client::ClusterParams;
use crate::error::{Error, Result};
use crate::ring::{NodeId, Ring};
use crate::tcp::{local_cluster, TcpTransport};
use crate::transport::Transport;
use crate::view::notify::Aggregator;

struct SimEnv {
    net: SimNetwork,
    notify_drop_rate: f64,
}

impl Env for SimEnv {
    fn transport(&self) -> &dyn Transport {
        &self.net
    }

    fn ring(&self) -> Arc<Ring> {
        self.net.ring().clone()
    }

    fn params(&self) -> ClusterParams {
        self.net.params().clone()
    }

    fn nodes(&self) -> Vec<NodeId> {
        self.net.servers().map(|s| s.id()).collect()
    }

    fn counters(&self) -> NetCounters {
        self.net.counters()
    }

    fn reset_counters(&self) {
        self.net.reset_counters()
    }

    fn tick(&self, t: u64) {
        self.net.set_clock(t)
    }

    fn pump(&self, aggs: &mut BTreeMap<String, Aggregator>) -> Result<u64> {
        self.net.pump_notifications(aggs, self.notify_drop_rate);
        Ok(self
            .net
            .servers()
            .filter(|s| !self.net.is_down(s.id()))
            .map(|s| s.broker().lock().stats().pending)
            .sum())
    }
}

/// Runs `cfg` on an in-process cluster. The report is a pure function of
/// `cfg`.
pub fn run_sim(cfg: &SimConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let net = SimNetwork::new(&cfg.cluster_spec())?;
    net.set_faults(cfg.faults.clone());
    net.set_drop_rate(cfg.drop_rate);
    let env = SimEnv {
        net,
        notify_drop_rate: cfg.notify_drop_rate,
    };
    let mut report = MetricsReport::default();
    report.set("mode", "sim");
    let ticks = run_workload(&env, cfg, &mut report)?;
    // clear the drop rate so final statistics are complete
    env.net.set_drop_rate(0.0);
    env.tick(ticks);
    cluster_metrics(&env, &mut report);
    Ok(report)
}

struct TcpEnv {
    net: Arc<TcpTransport>,
    ring: Arc<Ring>,
    params: ClusterParams,
}

impl Env for TcpEnv {
    fn transport(&self) -> &dyn Transport {
        &*self.net
    }

    fn ring(&self) -> Arc<Ring> {
        self.ring.clone()
    }

    fn params(&self) -> ClusterParams {
        self.params.clone()
    }

    fn nodes(&self) -> Vec<NodeId> {
        self.ring.nodes().to_vec()
    }

    fn counters(&self) -> NetCounters {
        self.net.counters()
    }

    fn reset_counters(&self) {
        self.net.reset_counters()
    }
}

/// Runs `cfg` against real TCP servers started on loopback ports. Adds
/// wall-clock throughput to the report, so reports are not reproducible.
pub fn run_bench(cfg: &SimConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if !cfg.faults.is_empty() || cfg.drop_rate > 0.0 {
        return Err(Error::ConfigInvalid(
            "fault injection needs the simulator".into(),
        ));
    }
    let mut params = cfg.params();
    if cfg.coordinator {
        params.coordinator = Some(NodeId(0));
    }
    let (handles, net) = local_cluster(
        cfg.nodes,
        &params,
        cfg.virtual_points,
        &cfg.server_options(),
    )?;
    let ring = handles[0].server.store().ring().clone();
    let env = TcpEnv { net, ring, params };
    let mut report = MetricsReport::default();
    report.set("mode", "tcp");
    let start = Instant::now();
    let result = run_workload(&env, cfg, &mut report);
    let elapsed = start.elapsed().as_secs_f64();
    if let Ok(ops) = &result {
        report.set("elapsed_ms", elapsed * 1e3);
        report.set(
            "ops_per_sec",
            if elapsed > 0.0 {
                *ops as f64 / elapsed
            } else {
                0.0
            },
        );
        cluster_metrics(&env, &mut report);
    }
    for h in handles {
        h.stop();
    }
    result.map(|_| report)
}
