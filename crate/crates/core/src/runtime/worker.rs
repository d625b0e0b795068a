//! The worker role: a long-running process that executes assigned ranks.
//!
//! After the HELLO handshake the worker serves TASK_ASSIGN frames by
//! spawning one logical process per assigned rank, reports a RESULT per
//! rank, tears jobs down on JOB_DONE, and exits on SHUTDOWN.

use std::collections::HashMap;
use std::sync::{mpsc, Arc};
use std::thread;

use crate::codec::{decode_value, encode};
use crate::comm::{Communicator, RankNode};
use crate::mailbox::Mailbox;
use crate::runtime::{run_rank_body, FunctionRegistry, RuntimeError};
use crate::transport::tcp::JobRouting;
use crate::transport::{TcpTransport, Transport, WorkerEvent};
use crate::wire::{JobSpec, TaskResult};

/// A connected worker, ready to serve.
pub struct Worker {
    transport: Arc<TcpTransport>,
    events: mpsc::Receiver<WorkerEvent>,
    registry: Arc<FunctionRegistry>,
}

/// A worker running on a background thread, for in-process clusters.
pub struct WorkerHandle {
    transport: Arc<TcpTransport>,
    join: thread::JoinHandle<Result<(), RuntimeError>>,
}

impl WorkerHandle {
    pub fn worker_id(&self) -> u64 {
        self.transport.worker_id()
    }

    /// The worker transport, exposing its frame counters.
    pub fn transport(&self) -> &Arc<TcpTransport> {
        &self.transport
    }

    /// Wait for the worker loop to exit (it does on SHUTDOWN).
    pub fn join(self) -> Result<(), RuntimeError> {
        self.join
            .join()
            .unwrap_or_else(|_| Err(RuntimeError::Worker("worker loop panicked".to_string())))
    }
}

struct RunningJob {
    job_id: u64,
    joins: Vec<thread::JoinHandle<()>>,
}

impl Worker {
    /// Register with the master and bind a peer listener.
    pub fn connect(
        master_addr: &str,
        listen_addr: &str,
        registry: Arc<FunctionRegistry>,
    ) -> Result<Worker, RuntimeError> {
        let (tx, rx) = mpsc::channel();
        let transport = TcpTransport::connect(master_addr, listen_addr, tx)
            .map_err(|e| RuntimeError::Worker(e.to_string()))?;
        log::info!(
            "worker={} registered with master at {master_addr}",
            transport.worker_id()
        );
        Ok(Worker {
            transport,
            events: rx,
            registry,
        })
    }

    /// Connect and serve on a background thread.
    pub fn spawn(
        master_addr: &str,
        listen_addr: &str,
        registry: Arc<FunctionRegistry>,
    ) -> Result<WorkerHandle, RuntimeError> {
        let worker = Worker::connect(master_addr, listen_addr, registry)?;
        let transport = worker.transport.clone();
        let join = thread::Builder::new()
            .name(format!("worker-{}", transport.worker_id()))
            .spawn(move || worker.run())
            .map_err(|e| RuntimeError::Worker(e.to_string()))?;
        Ok(WorkerHandle { transport, join })
    }

    pub fn worker_id(&self) -> u64 {
        self.transport.worker_id()
    }

    /// Serve until the master sends SHUTDOWN (`Ok`) or the connection is
    /// lost (`Err`).
    pub fn run(self) -> Result<(), RuntimeError> {
        let mut current: Option<RunningJob> = None;
        loop {
            let Ok(event) = self.events.recv() else {
                self.teardown(&mut current, "worker stopping");
                self.transport.shutdown();
                return Err(RuntimeError::Worker(
                    "event channel closed without shutdown".to_string(),
                ));
            };
            match event {
                WorkerEvent::Task(spec) => {
                    // One job at a time; a fresh assignment implies the
                    // previous job is already done on the master's side.
                    self.teardown(&mut current, "superseded by new job");
                    current = Some(self.start_job(spec));
                }
                WorkerEvent::JobDone(job_id) => {
                    if current.as_ref().is_some_and(|j| j.job_id == job_id) {
                        self.teardown(&mut current, "job done");
                    }
                }
                WorkerEvent::Shutdown => {
                    self.teardown(&mut current, "worker shutting down");
                    self.transport.shutdown();
                    log::info!("worker={} shut down", self.transport.worker_id());
                    return Ok(());
                }
                WorkerEvent::MasterLost(reason) => {
                    self.teardown(&mut current, "master connection lost");
                    self.transport.shutdown();
                    return Err(RuntimeError::Worker(format!(
                        "master connection lost: {reason}"
                    )));
                }
            }
        }
    }

    fn start_job(&self, spec: JobSpec) -> RunningJob {
        let worker_id = self.transport.worker_id();
        log::info!(
            "worker={worker_id} job={} fn={} ranks={:?}",
            spec.job_id,
            spec.function_name,
            spec.assigned_ranks
        );

        let func = match self.registry.get(&spec.function_name) {
            Some(f) => f,
            None => {
                self.fail_all_ranks(&spec, format!("unknown function {:?}", spec.function_name));
                return RunningJob {
                    job_id: spec.job_id,
                    joins: Vec::new(),
                };
            }
        };
        let params = match spec.params.as_ref().map(decode_value).transpose() {
            Ok(p) => p,
            Err(e) => {
                self.fail_all_ranks(&spec, format!("undecodable job parameters: {e}"));
                return RunningJob {
                    job_id: spec.job_id,
                    joins: Vec::new(),
                };
            }
        };

        let mailboxes: HashMap<u32, Arc<Mailbox>> = spec
            .assigned_ranks
            .iter()
            .map(|&r| (r, Arc::new(Mailbox::new(r))))
            .collect();
        self.transport.set_job(JobRouting {
            world_size: spec.world_size,
            routing: spec.routing,
            rank_worker: spec
                .rank_map
                .entries()
                .iter()
                .map(|e| e.worker_id)
                .collect(),
            mailboxes: mailboxes.clone(),
        });

        let mut joins = Vec::with_capacity(spec.assigned_ranks.len());
        for &rank in &spec.assigned_ranks {
            let func = func.clone();
            let params = params.clone();
            let transport = self.transport.clone();
            let mailbox = mailboxes[&rank].clone();
            let world_size = spec.world_size;
            let job_id = spec.job_id;
            let join = thread::Builder::new()
                .name(format!("rank-{rank}"))
                .spawn(move || {
                    let node = Arc::new(RankNode::new(
                        rank,
                        mailbox,
                        transport.clone() as Arc<dyn Transport>,
                    ));
                    let comm = Communicator::world(node, world_size);
                    let outcome =
                        run_rank_body(&*func, &comm, params.as_ref()).map(|value| encode(&value));
                    let result = TaskResult {
                        job_id,
                        rank,
                        outcome,
                    };
                    if let Err(e) = transport.send_result(&result) {
                        log::error!("rank={rank} failed to report result: {e}");
                    }
                })
                .expect("spawn rank thread");
            joins.push(join);
        }
        RunningJob {
            job_id: spec.job_id,
            joins,
        }
    }

    fn fail_all_ranks(&self, spec: &JobSpec, message: String) {
        log::error!(
            "worker={} job={}: {message}",
            self.transport.worker_id(),
            spec.job_id
        );
        for &rank in &spec.assigned_ranks {
            let result = TaskResult {
                job_id: spec.job_id,
                rank,
                outcome: Err(message.clone()),
            };
            if let Err(e) = self.transport.send_result(&result) {
                log::error!("worker: failed to report failure for rank {rank}: {e}");
            }
        }
    }

    /// Abort the current job's mailboxes and join its rank threads; each
    /// thread reports its RESULT on the way out.
    fn teardown(&self, current: &mut Option<RunningJob>, reason: &str) {
        if let Some(job) = current.take() {
            self.transport.clear_job(reason);
            for join in job.joins {
                let _ = join.join();
            }
        }
    }
}
