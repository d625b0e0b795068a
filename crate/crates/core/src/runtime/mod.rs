//! Driver and worker execution engine.
//!
//! A parallel function takes a world [`Communicator`] (plus an optional
//! parameter value shipped with the job) and is executed by `n` ranked
//! logical processes. `execute` returns only after every rank finishes —
//! the implicit barrier — with the return values ordered by rank.
//!
//! In local mode all ranks run as threads of the driver process over the
//! in-memory transport. In cluster mode the same application binary runs as
//! a master (driver) and workers; functions are shipped by registry name,
//! so driver and workers must be built from the same registry.

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;

use thiserror::Error;

use crate::codec::Value;
use crate::comm::{CommError, Communicator, RankNode};
use crate::transport::{LocalTransport, Transport};
use crate::wire::RoutingMode;

pub mod master;
pub mod worker;

pub use master::Master;
pub use worker::Worker;

/// A parallel function body: one communicator in, one value out.
pub type ParallelFn =
    dyn Fn(&Communicator, Option<&Value>) -> Result<Value, CommError> + Send + Sync;

/// Errors surfaced by the driver API.
#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("process count must be at least 1")]
    InvalidProcessCount,
    #[error("no workers registered")]
    NoWorkers,
    #[error("another job is already in progress")]
    JobInProgress,
    #[error("job failed at rank {}: {}", .failures[0].rank, .failures[0].message)]
    JobFailed { failures: Vec<RankFailure> },
    #[error("master: {0}")]
    Master(String),
    #[error("worker: {0}")]
    Worker(String),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
}

/// One rank's failure diagnostic. The first entry of a
/// [`RuntimeError::JobFailed`] is the originating failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankFailure {
    pub rank: u32,
    pub message: String,
}

impl fmt::Display for RankFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rank {}: {}", self.rank, self.message)
    }
}

/// Name-keyed registry of parallel functions, compiled into both driver
/// and workers.
#[derive(Default, Clone)]
pub struct FunctionRegistry {
    funcs: BTreeMap<String, Arc<ParallelFn>>,
}

impl FunctionRegistry {
    pub fn new() -> FunctionRegistry {
        FunctionRegistry::default()
    }

    /// Register `f` under `name`. Re-registering a name replaces it.
    pub fn register<F>(&mut self, name: &str, f: F) -> &mut Self
    where
        F: Fn(&Communicator, Option<&Value>) -> Result<Value, CommError> + Send + Sync + 'static,
    {
        self.funcs.insert(name.to_string(), Arc::new(f));
        self
    }

    pub fn get(&self, name: &str) -> Option<Arc<ParallelFn>> {
        self.funcs.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.funcs.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.funcs.keys().map(String::as_str)
    }
}

/// Local-mode driver: runs jobs as ranked threads in this process.
pub struct LocalRuntime {
    registry: Arc<FunctionRegistry>,
}

impl LocalRuntime {
    pub fn new(registry: Arc<FunctionRegistry>) -> LocalRuntime {
        LocalRuntime { registry }
    }

    /// Look `name` up in the registry and wrap it in a deferred job.
    pub fn parallelize_func(&self, name: &str) -> Result<ParallelJob<'static>, RuntimeError> {
        let func = self
            .registry
            .get(name)
            .ok_or_else(|| RuntimeError::UnknownFunction(name.to_string()))?;
        Ok(ParallelJob {
            backend: JobBackend::Local(func),
            params: None,
            routing: RoutingMode::PeerToPeer,
        })
    }

    /// Wrap a callable directly — local-mode privilege, no registration
    /// needed.
    pub fn parallelize_fn<F>(&self, f: F) -> ParallelJob<'static>
    where
        F: Fn(&Communicator, Option<&Value>) -> Result<Value, CommError> + Send + Sync + 'static,
    {
        ParallelJob {
            backend: JobBackend::Local(Arc::new(f)),
            params: None,
            routing: RoutingMode::PeerToPeer,
        }
    }
}

/// A deferred parallel execution: holds the function reference, spawns
/// nothing until [`execute`](ParallelJob::execute).
pub struct ParallelJob<'a> {
    pub(crate) backend: JobBackend<'a>,
    pub(crate) params: Option<Value>,
    pub(crate) routing: RoutingMode,
}

pub(crate) enum JobBackend<'a> {
    Local(Arc<ParallelFn>),
    Cluster {
        master: &'a Master,
        function_name: String,
    },
}

impl ParallelJob<'_> {
    /// Ship an encoded parameter value with the job; every rank's function
    /// receives it.
    pub fn with_params(mut self, params: Value) -> Self {
        self.params = Some(params);
        self
    }

    /// Select how user messages are routed in cluster mode. Local mode has
    /// a single in-memory path, so the setting has no effect there.
    pub fn with_routing(mut self, routing: RoutingMode) -> Self {
        self.routing = routing;
        self
    }

    /// Launch `n` ranked logical processes and wait for all of them.
    pub fn execute(&self, n: u32) -> Result<Vec<Value>, RuntimeError> {
        self.submit(n)?.collect()
    }

    /// Launch without waiting. The returned handle's `collect` enforces the
    /// barrier.
    pub fn submit(&self, n: u32) -> Result<JobHandle, RuntimeError> {
        if n == 0 {
            return Err(RuntimeError::InvalidProcessCount);
        }
        match &self.backend {
            JobBackend::Local(func) => Ok(JobHandle {
                inner: HandleImpl::Local(run_local_job(func.clone(), self.params.clone(), n)),
            }),
            JobBackend::Cluster {
                master,
                function_name,
            } => master.submit(function_name, n, self.params.as_ref(), self.routing),
        }
    }
}

/// A running job. Dropping the handle without calling
/// [`collect`](JobHandle::collect) detaches from the job's outcome.
pub struct JobHandle {
    pub(crate) inner: HandleImpl,
}

pub(crate) enum HandleImpl {
    Local(LocalJob),
    Cluster(master::ClusterJob),
}

impl JobHandle {
    /// Block until every rank of the job has finished, then return the
    /// per-rank results ordered by rank.
    pub fn collect(self) -> Result<Vec<Value>, RuntimeError> {
        match self.inner {
            HandleImpl::Local(job) => job.collect(),
            HandleImpl::Cluster(job) => job.collect(),
        }
    }
}

pub(crate) struct LocalJob {
    world_size: u32,
    transport: Arc<LocalTransport>,
    outcomes: mpsc::Receiver<(u32, Result<Value, String>)>,
    joins: Vec<thread::JoinHandle<()>>,
}

fn run_local_job(func: Arc<ParallelFn>, params: Option<Value>, n: u32) -> LocalJob {
    let transport = LocalTransport::new(n);
    let (tx, rx) = mpsc::channel();
    let mut joins = Vec::with_capacity(n as usize);
    for rank in 0..n {
        let func = func.clone();
        let params = params.clone();
        let tx = tx.clone();
        let node = Arc::new(RankNode::new(
            rank,
            transport.mailbox(rank),
            transport.clone() as Arc<dyn Transport>,
        ));
        let handle = thread::Builder::new()
            .name(format!("rank-{rank}"))
            .spawn(move || {
                let comm = Communicator::world(node, n);
                let outcome = run_rank_body(&*func, &comm, params.as_ref());
                let _ = tx.send((rank, outcome));
            })
            .expect("spawn rank thread");
        joins.push(handle);
    }
    LocalJob {
        world_size: n,
        transport,
        outcomes: rx,
        joins,
    }
}

/// Run one rank's function, converting panics into failures.
pub(crate) fn run_rank_body(
    func: &ParallelFn,
    comm: &Communicator,
    params: Option<&Value>,
) -> Result<Value, String> {
    match catch_unwind(AssertUnwindSafe(|| func(comm, params))) {
        Ok(Ok(value)) => Ok(value),
        Ok(Err(err)) => Err(err.to_string()),
        Err(panic) => Err(panic_message(&*panic)),
    }
}

pub(crate) fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}

impl LocalJob {
    fn collect(self) -> Result<Vec<Value>, RuntimeError> {
        let mut slots: Vec<Option<Value>> = (0..self.world_size).map(|_| None).collect();
        let mut failures: Vec<RankFailure> = Vec::new();
        for _ in 0..self.world_size {
            let (rank, outcome) = self
                .outcomes
                .recv()
                .expect("rank threads outlive the channel");
            match outcome {
                Ok(value) => slots[rank as usize] = Some(value),
                Err(message) => {
                    // Fail fast: unblock every other rank's receives so the
                    // barrier still completes.
                    if failures.is_empty() {
                        self.transport
                            .abort_all(&format!("job failed at rank {rank}"));
                    }
                    failures.push(RankFailure { rank, message });
                }
            }
        }
        for join in self.joins {
            let _ = join.join();
        }
        if failures.is_empty() {
            Ok(slots
                .into_iter()
                .map(|s| s.expect("all ranks reported"))
                .collect())
        } else {
            Err(RuntimeError::JobFailed { failures })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Kind;

    fn runtime() -> LocalRuntime {
        LocalRuntime::new(Arc::new(FunctionRegistry::new()))
    }

    #[test]
    fn results_are_indexed_by_rank() {
        let rt = runtime();
        let results = rt
            .parallelize_fn(|world, _| Ok(Value::I32((world.rank() * world.rank()) as i32)))
            .execute(4)
            .unwrap();
        assert_eq!(
            results,
            vec![Value::I32(0), Value::I32(1), Value::I32(4), Value::I32(9)]
        );
    }

    #[test]
    fn single_process_world() {
        let rt = runtime();
        let results = rt
            .parallelize_fn(|world, _| {
                assert_eq!(world.rank(), 0);
                assert_eq!(world.size(), 1);
                Ok(Value::I32(world.rank() as i32))
            })
            .execute(1)
            .unwrap();
        assert_eq!(results, vec![Value::I32(0)]);
    }

    #[test]
    fn unit_returning_function_yields_units() {
        let rt = runtime();
        let results = rt
            .parallelize_fn(|_, _| Ok(Value::Unit))
            .execute(3)
            .unwrap();
        assert_eq!(results, vec![Value::Unit; 3]);
    }

    #[test]
    fn failing_rank_names_itself() {
        let rt = runtime();
        let err = rt
            .parallelize_fn(|world, _| {
                if world.rank() == 2 {
                    Err(CommError::app("boom"))
                } else {
                    // Would block forever without fail-fast abort.
                    world.receive(0, 7, Kind::I32)?;
                    Ok(Value::Unit)
                }
            })
            .execute(4)
            .unwrap_err();
        match err {
            RuntimeError::JobFailed { failures } => {
                assert_eq!(failures[0].rank, 2);
                assert!(failures[0].message.contains("boom"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn panicking_rank_fails_the_job() {
        let rt = runtime();
        let err = rt
            .parallelize_fn(|world, _| {
                if world.rank() == 0 {
                    panic!("deliberate");
                }
                Ok(Value::Unit)
            })
            .execute(2)
            .unwrap_err();
        assert!(err.to_string().contains("rank 0"));
        assert!(err.to_string().contains("deliberate"));
    }

    #[test]
    fn zero_processes_is_an_error() {
        let rt = runtime();
        assert!(matches!(
            rt.parallelize_fn(|_, _| Ok(Value::Unit)).execute(0),
            Err(RuntimeError::InvalidProcessCount)
        ));
    }

    #[test]
    fn unknown_function_is_a_registry_error() {
        let rt = runtime();
        assert!(matches!(
            rt.parallelize_func("nope"),
            Err(RuntimeError::UnknownFunction(_))
        ));
    }

    #[test]
    fn params_reach_every_rank() {
        let rt = runtime();
        let results = rt
            .parallelize_fn(|_, params| Ok(params.cloned().unwrap_or(Value::Unit)))
            .with_params(Value::I64(99))
            .execute(2)
            .unwrap();
        assert_eq!(results, vec![Value::I64(99), Value::I64(99)]);
    }

    #[test]
    fn builder_without_execute_spawns_nothing() {
        use std::sync::atomic::{AtomicU32, Ordering};
        let rt = runtime();
        let spawned = Arc::new(AtomicU32::new(0));
        let witness = spawned.clone();
        let _job = rt.parallelize_fn(move |_, _| {
            witness.fetch_add(1, Ordering::SeqCst);
            Ok(Value::Unit)
        });
        assert_eq!(spawned.load(Ordering::SeqCst), 0);
    }
}
