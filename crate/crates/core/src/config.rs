//! Server configuration files.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::client::{ClusterParams, DEFAULT_REDIRECT_LIMIT};
use crate::error::{Error, Result};
use crate::ring::{NodeId, Ring, DEFAULT_VIRTUAL_POINTS};
use crate::server::ServerOptions;
use crate::store::{DEFAULT_CACHE_BYTES, DEFAULT_REGION_BYTES};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Peer {
    pub node_id: u32,
    pub addr: String,
}

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

/// One node's view of a static cluster. `peers` lists the other nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub node_id: u32,
    pub listen_addr: String,
    #[serde(default)]
    pub peers: Vec<Peer>,
    #[serde(rename = "N", alias = "n")]
    pub n: usize,
    #[serde(rename = "W", alias = "w")]
    pub w: usize,
    #[serde(default = "default_t")]
    pub default_t_bytes: u64,
    #[serde(default = "default_cache")]
    pub cache_bytes: u64,
    #[serde(default = "default_vpoints")]
    pub virtual_points: usize,
    #[serde(default = "default_redirects")]
    pub redirect_limit: usize,
    /// Node that hosts the transaction coordinator, if any.
    #[serde(default)]
    pub coordinator: Option<u32>,
    #[serde(default)]
    pub seed: u64,
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<ServerConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ServerConfig = serde_json::from_str(&text)
            .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        if self.default_t_bytes == 0 {
            return Err(Error::ConfigInvalid(
                "default_t_bytes must be positive".into(),
            ));
        }
        let addrs = self.addrs()?;
        if addrs.len() != self.peers.len() + 1 {
            return Err(Error::ConfigInvalid("duplicate node ids".into()));
        }
        if let Some(c) = self.coordinator {
            if !addrs.contains_key(&NodeId(c)) {
                return Err(Error::ConfigInvalid(format!(
                    "coordinator {c} is not a cluster node"
                )));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> ClusterParams {
        ClusterParams {
            n: self.n,
            w: self.w,
            redirect_limit: self.redirect_limit,
            coordinator: self.coordinator.map(NodeId),
        }
    }

    pub fn options(&self) -> ServerOptions {
        ServerOptions {
            default_t: self.default_t_bytes,
            cache_bytes: self.cache_bytes,
            seed: self.seed,
            host_coordinator: self.coordinator == Some(self.node_id),
        }
    }

    /// Every node's address, this one included.
    pub fn addrs(&self) -> Result<BTreeMap<NodeId, SocketAddr>> {
        let parse = |s: &str| {
            s.parse::<SocketAddr>()
                .map_err(|e| Error::ConfigInvalid(format!("bad address {s:?}: {e}")))
        };
        let mut out = BTreeMap::new();
        out.insert(NodeId(self.node_id), parse(&self.listen_addr)?);
        for p in &self.peers {
            out.insert(NodeId(p.node_id), parse(&p.addr)?);
        }
        Ok(out)
    }

    pub fn ring(&self) -> Result<Arc<Ring>> {
        let ids: Vec<NodeId> = self.addrs()?.into_keys().collect();
        Ok(Arc::new(Ring::new(&ids, self.virtual_points)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_shape() {
        let cfg: ServerConfig = serde_json::from_str(
            r#"{"node_id": 1, "listen_addr": "127.0.0.1:7001",
                "peers": [{"node_id": 2, "addr": "127.0.0.1:7002"}],
                "N": 2, "W": 1, "default_t_bytes": 4096, "cache_bytes": 0,
                "virtual_points": 16, "coordinator": 1}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.ring().unwrap().len(), 2);
        assert!(cfg.options().host_coordinator);
    }

    #[test]
    fn rejects_bad_quorum() {
        let cfg: ServerConfig =
            serde_json::from_str(r#"{"node_id": 0, "listen_addr": "127.0.0.1:1", "N": 1, "W": 2}"#)
                .unwrap();
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }
}
