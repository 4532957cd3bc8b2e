//! Request/response transport between clients and servers.

use crate::error::Result;
use crate::ring::NodeId;
use crate::wire::{Request, Response};

/// Who sends a frame: an external client or a server forwarding work.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Endpoint {
    Client,
    Node(NodeId),
}

pub trait Transport: Send + Sync {
    /// Sends one request frame and waits for the response frame.
    fn call(&self, from: Endpoint, to: NodeId, frame: &[u8]) -> Result<Vec<u8>>;

    /// Sends several requests "in parallel". The default runs them in
    /// order, which keeps simulated runs deterministic.
    fn call_many(&self, from: Endpoint, calls: &[(NodeId, Vec<u8>)]) -> Vec<Result<Vec<u8>>> {
        calls
            .iter()
            .map(|(to, f)| self.call(from, *to, f))
            .collect()
    }
}

/// Encodes `req`, sends it and decodes the response.
pub fn rpc(net: &dyn Transport, from: Endpoint, to: NodeId, req: &Request) -> Result<Response> {
    let frame = net.call(from, to, &req.encode())?;
    Response::decode(req.body.opcode(), &frame)
}
