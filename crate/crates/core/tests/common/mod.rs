//! Shared helpers for integration tests: loopback clusters and byte-level
//! result comparison.

use std::sync::Arc;
use std::time::Duration;

use mpignite::{encode, FunctionRegistry, Master, Value, Worker, WorkerHandle};

pub struct Cluster {
    pub master: Master,
    pub workers: Vec<WorkerHandle>,
}

impl Cluster {
    /// Start a master plus `n` workers on loopback. Workers are spawned
    /// sequentially so worker ids follow spawn order.
    pub fn start(n: usize, registry: Arc<FunctionRegistry>) -> Cluster {
        Cluster::start_split(n, registry.clone(), registry)
    }

    /// Same, with different registries for master and workers.
    pub fn start_split(
        n: usize,
        master_registry: Arc<FunctionRegistry>,
        worker_registry: Arc<FunctionRegistry>,
    ) -> Cluster {
        let master = Master::bind("127.0.0.1:0", master_registry).expect("bind master");
        let addr = master.addr().to_string();
        let workers = (0..n)
            .map(|_| {
                Worker::spawn(&addr, "127.0.0.1:0", worker_registry.clone()).expect("spawn worker")
            })
            .collect();
        master
            .wait_for_workers(n, Duration::from_secs(30))
            .expect("workers register");
        Cluster { master, workers }
    }

    pub fn shutdown(self) {
        self.master.shutdown().expect("shutdown master");
        for w in self.workers {
            w.join().expect("worker exits cleanly");
        }
    }
}

/// Byte form of a result array, for byte-identity comparisons.
pub fn encoded(results: &[Value]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in results {
        out.extend_from_slice(encode(v).as_bytes());
    }
    out
}
