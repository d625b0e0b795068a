//! A self-contained distributed runtime for ranked parallel closures.
//!
//! Parallel sections are plain functions of one [`Communicator`]. The
//! driver turns a function into a deferred job, executes it across `n`
//! ranked logical processes, and returns the per-rank results once every
//! rank has finished. Ranks talk through an MPI-like API: point-to-point
//! send/receive, futures-style nonblocking receive, communicator split,
//! broadcast, and all-reduce.
//!
//! Two deployment modes share one programming model. Local mode runs every
//! rank as a thread over an in-memory transport. Cluster mode runs a master
//! (the driver) plus long-running workers connected over TCP, with user
//! messages routed either directly between workers (P2P) or through the
//! master (MASTER_RELAY). The wire protocol is documented in `PROTOCOL.md`.
//!
//! ```no_run
//! use std::sync::Arc;
//! use mpignite::{FunctionRegistry, LocalRuntime, Value};
//!
//! let rt = LocalRuntime::new(Arc::new(FunctionRegistry::new()));
//! let results = rt
//!     .parallelize_fn(|world, _| Ok(Value::I32(world.rank() as i32)))
//!     .execute(4)
//!     .unwrap();
//! assert_eq!(results.len(), 4);
//! ```

mod bytesio;

pub mod codec;
pub mod comm;
pub mod examples;
pub mod mailbox;
pub mod runtime;
pub mod transport;
pub mod wire;

pub use codec::{decode, decode_value, encode, CodecError, Kind, PayloadBytes, Value};
pub use comm::{CommError, Communicator, Ticket};
pub use mailbox::{Mailbox, ReceiveAborted, ReceiveTicket};
pub use runtime::worker::WorkerHandle;
pub use runtime::{
    FunctionRegistry, JobHandle, LocalRuntime, Master, ParallelJob, RankFailure, RuntimeError,
    Worker,
};
pub use transport::{FrameCounters, LocalTransport, TcpTransport, Transport, TransportError};
pub use wire::{Envelope, FrameKind, JobSpec, RankMap, RankMapEntry, RoutingMode, WireError};
