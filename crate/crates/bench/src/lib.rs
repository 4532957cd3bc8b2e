//! Benchmarks live in `benches/`. Run them with `cargo bench -p vstore-bench`.

use vstore::sim::{ClusterSpec, SimNetwork};
use vstore::{Client, ClusterParams, VersionId};

/// A simulated cluster with room for long colocated chains.
pub fn cluster(nodes: u32, n: usize, w: usize) -> SimNetwork {
    let spec = ClusterSpec {
        nodes,
        params: ClusterParams {
            n,
            w,
            ..ClusterParams::default()
        },
        virtual_points: 128,
        server: vstore::ServerOptions {
            default_t: 64 << 20,
            cache_bytes: 4 << 20,
            seed: 1,
            host_coordinator: false,
        },
    };
    SimNetwork::new(&spec).expect("cluster")
}

/// Writes `len` versions of `key` in a single chain and returns the tip.
pub fn chain(client: &Client<'_>, key: &[u8], len: usize, size: usize) -> VersionId {
    let mut v = VersionId::ROOT;
    for i in 0..len {
        let mut value = vec![b'x'; size];
        value[..8].copy_from_slice(&(i as u64).to_be_bytes());
        v = client.put(key, &v, &value, true).expect("put");
    }
    v
}
