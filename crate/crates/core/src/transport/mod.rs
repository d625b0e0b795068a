//! Envelope movement between processes.
//!
//! Two implementations sit behind one abstraction: an in-memory transport
//! for local mode and a TCP transport for cluster mode. Both guarantee
//! per-(source, destination) FIFO delivery into the destination mailbox,
//! with no loss or duplication on healthy connections.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::wire::{Envelope, FrameKind, FRAME_KIND_COUNT};

mod local;
pub(crate) mod tcp;

pub use local::LocalTransport;
pub use tcp::{TcpTransport, WorkerEvent};

/// Routing and connection failures surfaced to the job.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// The destination rank does not exist in the current job.
    #[error("no rank {rank} in a world of size {world_size}")]
    UnknownRank { rank: u32, world_size: u32 },
    /// A connection or control exchange failed beyond retry.
    #[error("transport failure: {0}")]
    Failure(String),
}

/// Moves envelopes toward destination mailboxes and performs the few
/// master-backed control exchanges the communicator layer needs.
pub trait Transport: Send + Sync {
    /// Route one envelope toward its destination rank's mailbox.
    ///
    /// The caller is never blocked awaiting the receiver; completion of
    /// `deliver` does not imply receipt.
    fn deliver(&self, env: Envelope) -> Result<(), TransportError>;

    /// Reserve `count` fresh communicator context ids, returning the first.
    /// Ids are unique for the lifetime of the job's coordinator and never
    /// include 0, the world context.
    fn allocate_context_ids(&self, count: u32) -> Result<u64, TransportError>;

    /// Cumulative per-kind counts of frames this transport instance has
    /// written to the network.
    fn counters(&self) -> &FrameCounters;
}

/// Per-frame-kind counters of network frames sent.
///
/// The in-memory transport never writes frames, so its counters stay zero;
/// tests use that to show same-worker delivery emits no network traffic.
#[derive(Debug, Default)]
pub struct FrameCounters {
    sent: [AtomicU64; FRAME_KIND_COUNT],
}

impl FrameCounters {
    pub fn new() -> FrameCounters {
        FrameCounters::default()
    }

    pub fn record_sent(&self, kind: FrameKind) {
        self.sent[kind.index()].fetch_add(1, Ordering::Relaxed);
    }

    pub fn sent(&self, kind: FrameKind) -> u64 {
        self.sent[kind.index()].load(Ordering::Relaxed)
    }

    pub fn total_sent(&self) -> u64 {
        self.sent.iter().map(|c| c.load(Ordering::Relaxed)).sum()
    }
}
