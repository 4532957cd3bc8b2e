use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::{ClusterParams, DEFAULT_REDIRECT_LIMIT};
use crate::error::{Error, Result};
use crate::ring::DEFAULT_VIRTUAL_POINTS;
use crate::server::ServerOptions;
use crate::store::{DEFAULT_CACHE_BYTES, DEFAULT_REGION_BYTES};

use super::network::{ClusterSpec, Fault};

fn default_t() -> u64 {
    DEFAULT_REGION_BYTES
}

fn default_cache() -> u64 {
    DEFAULT_CACHE_BYTES
}

fn default_vpoints() -> usize {
    DEFAULT_VIRTUAL_POINTS
}

fn default_redirects() -> usize {
    DEFAULT_REDIRECT_LIMIT
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub nodes: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "N", alias = "n")]
    pub n: usize,
    #[serde(rename = "W", alias = "w")]
    pub w: usize,
    #[serde(default = "default_t")]
    pub default_t: u64,
    #[serde(default = "default_vpoints")]
    pub virtual_points: usize,
    #[serde(default = "default_cache")]
    pub cache_bytes: u64,
    #[serde(default = "default_redirects")]
    pub redirect_limit: usize,
    /// Host the transaction coordinator on node 0.
    #[serde(default = "yes")]
    pub coordinator: bool,
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// Probability that any RPC frame is lost.
    #[serde(default)]
    pub drop_rate: f64,
    /// Probability that a notification delivery, or its ack, is lost.
    #[serde(default)]
    pub notify_drop_rate: f64,
    pub workload: WorkloadSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    MixedRw {
        ops: u64,
        keys: u32,
        read_fraction: f64,
        record_size: usize,
    },
    ScanChain {
        /// Predecessors available behind the start version.
        chain_len: u32,
        m: u32,
        #[serde(default)]
        naive: bool,
    },
    Delta {
        versions: u32,
        record_size: usize,
        max_edit: usize,
        /// Every `full_every`-th version is stored uncompressed.
        full_every: u32,
    },
    Random {
        versions: u32,
        record_size: usize,
    },
    TxnIncrement {
        txns: u32,
        keys: u32,
        zipf: f64,
        concurrency: u32,
    },
    Notify {
        keys: u32,
        writes: u32,
        apps: u32,
    },
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::ConfigInvalid(m) => Error::ConfigInvalid(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn parse(text: &str) -> Result<SimConfig> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.nodes == 0 {
            return bad("nodes must be positive");
        }
        self.params().validate()?;
        if self.n > self.nodes as usize {
            return bad("N exceeds node count");
        }
        if self.default_t == 0 {
            return bad("default_t must be positive");
        }
        for r in [self.drop_rate, self.notify_drop_rate] {
            if !(0.0..1.0).contains(&r) {
                return bad("drop rates must be in [0, 1)");
            }
        }
        if self
            .faults
            .iter()
            .any(|f| f.node >= self.nodes || f.from > f.to)
        {
            return bad("fault names an unknown node or an empty interval");
        }
        match &self.workload {
            WorkloadSpec::MixedRw {
                keys,
                read_fraction,
                ..
            } => {
                if *keys == 0 || !(0.0..=1.0).contains(read_fraction) {
                    return bad("mixed_rw needs keys > 0 and read_fraction in [0, 1]");
                }
            }
            WorkloadSpec::Delta {
                record_size,
                max_edit,
                full_every,
                ..
            } => {
                if *max_edit == 0 || max_edit > record_size || *full_every == 0 {
                    return bad("delta needs 0 < max_edit <= record_size and full_every > 0");
                }
            }
            WorkloadSpec::TxnIncrement {
                keys,
                zipf,
                concurrency,
                ..
            } => {
                if !self.coordinator {
                    return bad("txn_increment needs a coordinator");
                }
                if *keys == 0 || *concurrency == 0 || !(*zipf >= 0.0) {
                    return bad("txn_increment needs keys > 0, concurrency > 0, zipf >= 0");
                }
            }
            WorkloadSpec::Notify { keys, apps, .. } => {
                if *keys == 0 || *apps == 0 {
                    return bad("notify needs keys > 0 and apps > 0");
                }
            }
            WorkloadSpec::ScanChain { .. } | WorkloadSpec::Random { .. } => {}
        }
        Ok(())
    }

    pub fn params(&self) -> ClusterParams {
        ClusterParams {
            n: self.n,
            w: self.w,
            redirect_limit: self.redirect_limit,
            coordinator: None,
        }
    }

    pub fn server_options(&self) -> ServerOptions {
        ServerOptions {
            default_t: self.default_t,
            cache_bytes: self.cache_bytes,
            seed: self.seed,
            host_coordinator: self.coordinator,
        }
    }

    pub fn cluster_spec(&self) -> ClusterSpec {
        ClusterSpec {
            nodes: self.nodes,
            params: self.params(),
            virtual_points: self.virtual_points,
            server: self.server_options(),
        }
    }
}
