//! The cluster driver: accepts worker registrations, assigns ranks
//! round-robin, dispatches jobs, hosts the address directory and the
//! context-id allocator, forwards user messages in MASTER_RELAY mode, and
//! collects per-rank results.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::codec::{decode_value, encode, PayloadBytes, Value};
use crate::runtime::{
    FunctionRegistry, HandleImpl, JobBackend, JobHandle, ParallelJob, RankFailure, RuntimeError,
};
use crate::transport::FrameCounters;
use crate::wire::{
    self, Envelope, FrameKind, Hello, JobSpec, RankMap, RankMapEntry, RoutingMode, TaskResult,
};

struct WorkerLink {
    worker_id: u64,
    host: String,
    port: u16,
    write: Mutex<TcpStream>,
    alive: AtomicBool,
}

impl WorkerLink {
    fn send(&self, counters: &FrameCounters, kind: FrameKind, body: &[u8]) -> bool {
        let mut stream = self.write.lock().unwrap();
        counters.record_sent(kind);
        match wire::write_frame_to(&mut *stream, kind, body) {
            Ok(()) => true,
            Err(e) => {
                log::error!(
                    "master: send {kind} to worker={} failed: {e}",
                    self.worker_id
                );
                false
            }
        }
    }
}

struct ActiveJob {
    job_id: u64,
    world_size: u32,
    rank_map: RankMap,
    slots: Vec<Option<Result<PayloadBytes, String>>>,
    remaining: u32,
    first_failure: Option<u32>,
    done_sent: bool,
}

struct MasterState {
    registry: Arc<FunctionRegistry>,
    workers: Mutex<Vec<Arc<WorkerLink>>>,
    workers_cv: Condvar,
    next_worker_id: AtomicU64,
    next_context_id: AtomicU64,
    next_job_id: AtomicU64,
    job: Mutex<Option<ActiveJob>>,
    job_cv: Condvar,
    counters: FrameCounters,
    stop: AtomicBool,
    addr: SocketAddr,
}

/// A running master. One job executes at a time; `shutdown` (or drop)
/// releases the workers.
pub struct Master {
    state: Arc<MasterState>,
}

impl Master {
    /// Bind the listener and start accepting worker registrations.
    pub fn bind(
        listen_addr: &str,
        registry: Arc<FunctionRegistry>,
    ) -> Result<Master, RuntimeError> {
        let listener = TcpListener::bind(listen_addr)
            .map_err(|e| RuntimeError::Master(format!("bind {listen_addr}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| RuntimeError::Master(e.to_string()))?;
        let state = Arc::new(MasterState {
            registry,
            workers: Mutex::new(Vec::new()),
            workers_cv: Condvar::new(),
            next_worker_id: AtomicU64::new(1),
            next_context_id: AtomicU64::new(1),
            next_job_id: AtomicU64::new(1),
            job: Mutex::new(None),
            job_cv: Condvar::new(),
            counters: FrameCounters::new(),
            stop: AtomicBool::new(false),
            addr,
        });
        let accept_state = state.clone();
        thread::Builder::new()
            .name("master-acceptor".to_string())
            .spawn(move || accept_state.accept_loop(listener))
            .map_err(|e| RuntimeError::Master(e.to_string()))?;
        log::info!("master: listening on {addr}");
        Ok(Master { state })
    }

    /// The bound address, useful with an ephemeral listen port.
    pub fn addr(&self) -> SocketAddr {
        self.state.addr
    }

    /// Frames this master has written, by kind.
    pub fn counters(&self) -> &FrameCounters {
        &self.state.counters
    }

    pub fn worker_count(&self) -> usize {
        self.state.workers.lock().unwrap().len()
    }

    /// Block until at least `count` workers have registered.
    pub fn wait_for_workers(&self, count: usize, timeout: Duration) -> Result<(), RuntimeError> {
        let deadline = Instant::now() + timeout;
        let mut workers = self.state.workers.lock().unwrap();
        while workers.len() < count {
            let now = Instant::now();
            if now >= deadline {
                return Err(RuntimeError::Master(format!(
                    "timed out waiting for {count} workers ({} registered)",
                    workers.len()
                )));
            }
            let (guard, _) = self
                .state
                .workers_cv
                .wait_timeout(workers, deadline - now)
                .unwrap();
            workers = guard;
        }
        Ok(())
    }

    /// Look `name` up in the registry and wrap it in a deferred cluster job.
    pub fn parallelize_func(&self, name: &str) -> Result<ParallelJob<'_>, RuntimeError> {
        if !self.state.registry.contains(name) {
            return Err(RuntimeError::UnknownFunction(name.to_string()));
        }
        Ok(ParallelJob {
            backend: JobBackend::Cluster {
                master: self,
                function_name: name.to_string(),
            },
            params: None,
            routing: RoutingMode::PeerToPeer,
        })
    }

    pub(crate) fn submit(
        &self,
        name: &str,
        n: u32,
        params: Option<&Value>,
        routing: RoutingMode,
    ) -> Result<JobHandle, RuntimeError> {
        let state = &self.state;
        if !state.registry.contains(name) {
            return Err(RuntimeError::UnknownFunction(name.to_string()));
        }
        let workers: Vec<Arc<WorkerLink>> = state
            .workers
            .lock()
            .unwrap()
            .iter()
            .filter(|w| w.alive.load(Ordering::SeqCst))
            .cloned()
            .collect();
        if workers.is_empty() {
            return Err(RuntimeError::NoWorkers);
        }

        let job_id = state.next_job_id.fetch_add(1, Ordering::Relaxed);
        let entries: Vec<RankMapEntry> = (0..n)
            .map(|rank| {
                let w = &workers[rank as usize % workers.len()];
                RankMapEntry {
                    world_rank: rank,
                    worker_id: w.worker_id,
                    host: w.host.clone(),
                    port: w.port,
                }
            })
            .collect();
        let rank_map = RankMap::new(entries).expect("constructed one entry per rank");

        {
            let mut job = state.job.lock().unwrap();
            if job.is_some() {
                return Err(RuntimeError::JobInProgress);
            }
            *job = Some(ActiveJob {
                job_id,
                world_size: n,
                rank_map: rank_map.clone(),
                slots: (0..n).map(|_| None).collect(),
                remaining: n,
                first_failure: None,
                done_sent: false,
            });
        }

        let params = params.map(encode);
        log::info!(
            "master: job={job_id} fn={name} n={n} routing={routing} workers={}",
            workers.len()
        );
        for w in &workers {
            let assigned: Vec<u32> = (0..n)
                .filter(|r| rank_map.worker_of(*r) == Some(w.worker_id))
                .collect();
            if assigned.is_empty() {
                continue;
            }
            let spec = JobSpec {
                job_id,
                function_name: name.to_string(),
                world_size: n,
                assigned_ranks: assigned,
                rank_map: rank_map.clone(),
                routing,
                params: params.clone(),
            };
            if !w.send(&state.counters, FrameKind::TaskAssign, &spec.encode()) {
                state.worker_lost(w);
            }
        }
        Ok(JobHandle {
            inner: HandleImpl::Cluster(ClusterJob {
                state: state.clone(),
                job_id,
            }),
        })
    }

    /// Release all workers and stop accepting registrations.
    pub fn shutdown(self) -> Result<(), RuntimeError> {
        self.state.shutdown();
        Ok(())
    }
}

impl Drop for Master {
    fn drop(&mut self) {
        self.state.shutdown();
    }
}

pub(crate) struct ClusterJob {
    state: Arc<MasterState>,
    job_id: u64,
}

impl ClusterJob {
    pub(crate) fn collect(self) -> Result<Vec<Value>, RuntimeError> {
        let mut job = self.state.job.lock().unwrap();
        loop {
            match &*job {
                Some(j) if j.job_id == self.job_id && j.remaining == 0 => break,
                Some(j) if j.job_id == self.job_id => {
                    job = self.state.job_cv.wait(job).unwrap();
                }
                _ => {
                    return Err(RuntimeError::Master(
                        "job state lost before collection".to_string(),
                    ))
                }
            }
        }
        let done = job.take().expect("checked above");
        drop(job);

        let mut failures: Vec<RankFailure> = Vec::new();
        let mut values: Vec<Value> = Vec::with_capacity(done.world_size as usize);
        for (rank, slot) in done.slots.into_iter().enumerate() {
            match slot.expect("remaining == 0 means every slot is filled") {
                Ok(payload) => match decode_value(&payload) {
                    Ok(v) => values.push(v),
                    Err(e) => failures.push(RankFailure {
                        rank: rank as u32,
                        message: format!("undecodable result: {e}"),
                    }),
                },
                Err(message) => failures.push(RankFailure {
                    rank: rank as u32,
                    message,
                }),
            }
        }
        if failures.is_empty() {
            Ok(values)
        } else {
            // Put the originating failure first.
            if let Some(first) = done.first_failure {
                if let Some(pos) = failures.iter().position(|f| f.rank == first) {
                    failures.rotate_left(pos);
                }
            }
            Err(RuntimeError::JobFailed { failures })
        }
    }
}

impl MasterState {
    fn accept_loop(self: Arc<Self>, listener: TcpListener) {
        loop {
            match listener.accept() {
                Ok((stream, peer)) => {
                    if self.stop.load(Ordering::SeqCst) {
                        return;
                    }
                    stream.set_nodelay(true).ok();
                    let state = self.clone();
                    if thread::Builder::new()
                        .name("master-conn".to_string())
                        .spawn(move || state.serve_worker(stream, peer))
                        .is_err()
                    {
                        log::error!("master: failed to spawn connection thread");
                    }
                }
                Err(e) => {
                    if self.stop.load(Ordering::SeqCst) {
                        return;
                    }
                    log::error!("master: accept failed: {e}");
                }
            }
        }
    }

    fn serve_worker(self: Arc<Self>, mut stream: TcpStream, peer: SocketAddr) {
        let hello = match wire::read_frame(&mut stream) {
            Ok((FrameKind::Hello, body)) => match Hello::decode(&body) {
                Ok(h) => h,
                Err(e) => {
                    log::error!("master: bad HELLO from {peer}: {e}");
                    return;
                }
            },
            Ok((kind, _)) => {
                log::error!("master: connection from {peer} opened with {kind}, closing");
                return;
            }
            Err(e) => {
                log::debug!("master: connection from {peer} ended before HELLO: {e}");
                return;
            }
        };

        // A worker bound to the unspecified address announces a host its
        // peers cannot dial; the observed source address is authoritative
        // in that case.
        let host = if hello.host.is_empty() || hello.host == "0.0.0.0" || hello.host == "::" {
            peer.ip().to_string()
        } else {
            hello.host.clone()
        };
        let worker_id = self.next_worker_id.fetch_add(1, Ordering::Relaxed);
        let write_half = match stream.try_clone() {
            Ok(s) => s,
            Err(e) => {
                log::error!("master: clone stream for worker at {peer}: {e}");
                return;
            }
        };
        let link = Arc::new(WorkerLink {
            worker_id,
            host,
            port: hello.port,
            write: Mutex::new(write_half),
            alive: AtomicBool::new(true),
        });
        let reply = Hello {
            worker_id,
            host: link.host.clone(),
            port: link.port,
        };
        if !link.send(&self.counters, FrameKind::Hello, &reply.encode()) {
            return;
        }
        {
            let mut workers = self.workers.lock().unwrap();
            workers.push(link.clone());
            self.workers_cv.notify_all();
        }
        log::info!(
            "master: worker={worker_id} registered at {}:{}",
            link.host,
            link.port
        );

        loop {
            match wire::read_frame(&mut stream) {
                Ok((FrameKind::Result, body)) => match TaskResult::decode(&body) {
                    Ok(result) => self.handle_result(result),
                    Err(e) => log::error!("master: bad RESULT from worker={worker_id}: {e}"),
                },
                Ok((FrameKind::AddrReq, body)) => match wire::decode_addr_req(&body) {
                    Ok(rank) => self.handle_addr_req(&link, rank),
                    Err(e) => log::error!("master: bad ADDR_REQ from worker={worker_id}: {e}"),
                },
                Ok((FrameKind::CtxAllocReq, body)) => match wire::decode_ctx_alloc_req(&body) {
                    Ok(count) => {
                        let first = self
                            .next_context_id
                            .fetch_add(count as u64, Ordering::Relaxed);
                        link.send(
                            &self.counters,
                            FrameKind::CtxAllocReply,
                            &wire::encode_ctx_alloc_reply(first, count),
                        );
                    }
                    Err(e) => log::error!("master: bad CTX_ALLOC_REQ from worker={worker_id}: {e}"),
                },
                Ok((FrameKind::UserMsg, body)) => self.relay(&body),
                Ok((kind, _)) => {
                    log::warn!("master: unexpected {kind} from worker={worker_id}");
                }
                Err(e) => {
                    if !self.stop.load(Ordering::SeqCst) {
                        log::warn!("master: worker={worker_id} connection ended: {e}");
                        self.worker_lost(&link);
                    }
                    return;
                }
            }
        }
    }

    /// Answer an address lookup from the current job's directory.
    fn handle_addr_req(&self, from: &WorkerLink, rank: u32) {
        let entry = {
            let job = self.job.lock().unwrap();
            job.as_ref().and_then(|j| j.rank_map.entry(rank).cloned())
        };
        match entry {
            Some(entry) => {
                from.send(&self.counters, FrameKind::AddrReply, &entry.encode());
            }
            None => {
                // No reply frame exists for a bad lookup; the worker's
                // control exchange times out and fails the job.
                log::error!(
                    "master: ADDR_REQ for unknown rank {rank} from worker={}",
                    from.worker_id
                );
            }
        }
    }

    /// Forward a user message toward the worker hosting its destination.
    fn relay(&self, body: &[u8]) {
        let env = match Envelope::decode(body) {
            Ok(env) => env,
            Err(e) => {
                log::error!("master: undecodable relayed envelope: {e}");
                return;
            }
        };
        let target = {
            let job = self.job.lock().unwrap();
            job.as_ref().and_then(|j| j.rank_map.worker_of(env.dst))
        };
        let Some(worker_id) = target else {
            log::warn!(
                "master: dropping relayed envelope for unknown rank {}",
                env.dst
            );
            return;
        };
        let link = self
            .workers
            .lock()
            .unwrap()
            .iter()
            .find(|w| w.worker_id == worker_id && w.alive.load(Ordering::SeqCst))
            .cloned();
        match link {
            Some(link) => {
                link.send(&self.counters, FrameKind::UserMsg, body);
            }
            None => log::warn!(
                "master: dropping relayed envelope for rank {}: worker={worker_id} gone",
                env.dst
            ),
        }
    }

    fn handle_result(&self, result: TaskResult) {
        let mut job = self.job.lock().unwrap();
        let Some(j) = job.as_mut() else {
            log::debug!("master: late RESULT for job={}", result.job_id);
            return;
        };
        if j.job_id != result.job_id {
            log::debug!("master: stale RESULT for job={}", result.job_id);
            return;
        }
        let slot = &mut j.slots[result.rank as usize];
        if slot.is_some() {
            log::warn!("master: duplicate RESULT for rank {}", result.rank);
            return;
        }
        let failed = result.outcome.is_err();
        *slot = Some(result.outcome);
        j.remaining -= 1;
        if failed && j.first_failure.is_none() {
            j.first_failure = Some(result.rank);
            // Fail fast: tell every worker the job is over so blocked
            // ranks abort and report.
            self.send_job_done(j);
        }
        if j.remaining == 0 {
            self.send_job_done(j);
            self.job_cv.notify_all();
        }
    }

    fn send_job_done(&self, job: &mut ActiveJob) {
        if job.done_sent {
            return;
        }
        job.done_sent = true;
        let body = wire::encode_job_done(job.job_id);
        for w in self.workers.lock().unwrap().iter() {
            if w.alive.load(Ordering::SeqCst) {
                w.send(&self.counters, FrameKind::JobDone, &body);
            }
        }
    }

    /// A worker connection dropped: fail its unfinished ranks.
    fn worker_lost(&self, link: &Arc<WorkerLink>) {
        link.alive.store(false, Ordering::SeqCst);
        let mut job = self.job.lock().unwrap();
        if let Some(j) = job.as_mut() {
            let lost: Vec<u32> = (0..j.world_size)
                .filter(|r| {
                    j.rank_map.worker_of(*r) == Some(link.worker_id)
                        && j.slots[*r as usize].is_none()
                })
                .collect();
            if !lost.is_empty() {
                for rank in lost {
                    j.slots[rank as usize] =
                        Some(Err(format!("worker {} disconnected", link.worker_id)));
                    j.remaining -= 1;
                    if j.first_failure.is_none() {
                        j.first_failure = Some(rank);
                    }
                }
                self.send_job_done(j);
                if j.remaining == 0 {
                    self.job_cv.notify_all();
                }
            }
        }
    }

    fn shutdown(&self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Workers close their connections on SHUTDOWN, which drains the
        // per-connection reader threads here.
        let workers = self.workers.lock().unwrap().clone();
        for w in &workers {
            if w.alive.load(Ordering::SeqCst) {
                w.send(&self.counters, FrameKind::Shutdown, &[]);
            }
        }
        // Unblock the acceptor.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        log::info!("master: shut down");
    }
}
