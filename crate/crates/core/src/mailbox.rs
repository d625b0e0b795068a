//! Receiver-side message buffering and matching.
//!
//! Every logical process owns one mailbox. Inbound envelopes that match a
//! posted receive complete it immediately; everything else waits in an
//! unbounded buffer, so receiving a previously delivered message needs no
//! further transport activity. Matching is exact on the triple
//! (context id, source rank, tag) — there are no wildcards — and is FIFO
//! within each matching class.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::PayloadBytes;
use crate::wire::Envelope;

/// Buffered-message count above which a diagnostic warning is logged once.
pub const DEFAULT_BUFFER_WATERMARK: usize = 8192;

/// A receive ended because the job was shut down or failed.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("receive aborted: {0}")]
pub struct ReceiveAborted(pub String);

type ReceiveOutcome = Result<PayloadBytes, ReceiveAborted>;
type Callback = Box<dyn FnOnce(ReceiveOutcome) + Send + 'static>;

enum TicketState {
    Pending(Vec<Callback>),
    Completed(PayloadBytes),
    Failed(ReceiveAborted),
}

struct TicketShared {
    state: Mutex<TicketState>,
    cv: Condvar,
}

/// A read-only placeholder for one asynchronous receive.
///
/// A ticket completes exactly once. It can be awaited from the logical
/// process that created it, and completion callbacks can be registered;
/// callbacks run on a runtime-internal execution context, never on the
/// sender's or receiver's logical process.
#[derive(Clone)]
pub struct ReceiveTicket {
    shared: Arc<TicketShared>,
}

impl ReceiveTicket {
    fn new(state: TicketState) -> ReceiveTicket {
        ReceiveTicket {
            shared: Arc::new(TicketShared {
                state: Mutex::new(state),
                cv: Condvar::new(),
            }),
        }
    }

    /// Block the calling logical process until the ticket completes.
    pub fn wait(&self) -> ReceiveOutcome {
        let mut state = self.shared.state.lock().unwrap();
        loop {
            match &*state {
                TicketState::Completed(p) => return Ok(p.clone()),
                TicketState::Failed(e) => return Err(e.clone()),
                TicketState::Pending(_) => state = self.shared.cv.wait(state).unwrap(),
            }
        }
    }

    /// Like [`wait`](Self::wait) with a deadline; `None` means still pending.
    pub(crate) fn wait_timeout(&self, dur: Duration) -> Option<ReceiveOutcome> {
        let deadline = Instant::now() + dur;
        let mut state = self.shared.state.lock().unwrap();
        loop {
            match &*state {
                TicketState::Completed(p) => return Some(Ok(p.clone())),
                TicketState::Failed(e) => return Some(Err(e.clone())),
                TicketState::Pending(_) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return None;
                    }
                    let (guard, _) = self.shared.cv.wait_timeout(state, deadline - now).unwrap();
                    state = guard;
                }
            }
        }
    }

    /// Register a completion callback. If the ticket is already terminal the
    /// callback is dispatched immediately.
    pub fn on_complete<F>(&self, f: F)
    where
        F: FnOnce(ReceiveOutcome) + Send + 'static,
    {
        let mut state = self.shared.state.lock().unwrap();
        let outcome = match &mut *state {
            TicketState::Pending(callbacks) => {
                callbacks.push(Box::new(f));
                return;
            }
            TicketState::Completed(p) => Ok(p.clone()),
            TicketState::Failed(e) => Err(e.clone()),
        };
        drop(state);
        dispatch(Box::new(f), outcome);
    }

    pub fn is_complete(&self) -> bool {
        !matches!(*self.shared.state.lock().unwrap(), TicketState::Pending(_))
    }

    /// Transition to a terminal state, returning callbacks for dispatch.
    /// A ticket completes at most once; later transitions are ignored.
    fn settle(&self, outcome: &ReceiveOutcome) -> Vec<Callback> {
        let mut state = self.shared.state.lock().unwrap();
        let callbacks = match &mut *state {
            TicketState::Pending(callbacks) => std::mem::take(callbacks),
            _ => return Vec::new(),
        };
        *state = match outcome {
            Ok(p) => TicketState::Completed(p.clone()),
            Err(e) => TicketState::Failed(e.clone()),
        };
        drop(state);
        self.shared.cv.notify_all();
        callbacks
    }

    fn same_ticket(&self, other: &ReceiveTicket) -> bool {
        Arc::ptr_eq(&self.shared, &other.shared)
    }
}

fn dispatch(callback: Callback, outcome: ReceiveOutcome) {
    // Runtime-internal execution context for completion callbacks.
    std::thread::spawn(move || callback(outcome));
}

fn dispatch_all(callbacks: Vec<Callback>, outcome: &ReceiveOutcome) {
    for cb in callbacks {
        dispatch(cb, outcome.clone());
    }
}

struct PendingReceive {
    context_id: u64,
    src: u32,
    tag: i32,
    ticket: ReceiveTicket,
}

struct MailState {
    buffered: VecDeque<Envelope>,
    pending: VecDeque<PendingReceive>,
    aborted: Option<String>,
    watermark_logged: bool,
}

/// Per-rank buffer of unmatched messages and unmatched receive requests.
pub struct Mailbox {
    owner: u32,
    watermark: usize,
    state: Mutex<MailState>,
}

impl Mailbox {
    pub fn new(owner: u32) -> Mailbox {
        Mailbox::with_watermark(owner, DEFAULT_BUFFER_WATERMARK)
    }

    pub fn with_watermark(owner: u32, watermark: usize) -> Mailbox {
        Mailbox {
            owner,
            watermark,
            state: Mutex::new(MailState {
                buffered: VecDeque::new(),
                pending: VecDeque::new(),
                aborted: None,
                watermark_logged: false,
            }),
        }
    }

    /// The world rank this mailbox belongs to.
    pub fn owner(&self) -> u32 {
        self.owner
    }

    /// Hand an inbound envelope to this mailbox.
    ///
    /// If a posted receive matches exactly, the earliest such receive
    /// completes with the payload; otherwise the envelope is buffered.
    /// Messages for an aborted mailbox are discarded.
    pub fn enqueue(&self, env: Envelope) {
        debug_assert_eq!(env.dst, self.owner, "envelope routed to wrong mailbox");
        let mut state = self.state.lock().unwrap();
        if state.aborted.is_some() {
            log::debug!(
                "rank={} dropping message for aborted mailbox (ctx={} src={} tag={})",
                self.owner,
                env.context_id,
                env.src,
                env.tag
            );
            return;
        }
        let matched = state
            .pending
            .iter()
            .position(|p| p.context_id == env.context_id && p.src == env.src && p.tag == env.tag);
        match matched {
            Some(idx) => {
                let pending = state.pending.remove(idx).expect("index from position");
                let outcome = Ok(env.payload);
                // Settle under the mailbox lock so cancellation can never
                // observe a removed-but-unsettled ticket.
                let callbacks = pending.ticket.settle(&outcome);
                drop(state);
                dispatch_all(callbacks, &outcome);
            }
            None => {
                state.buffered.push_back(env);
                if state.buffered.len() > self.watermark && !state.watermark_logged {
                    state.watermark_logged = true;
                    log::warn!(
                        "rank={} mailbox buffered {} messages (watermark {})",
                        self.owner,
                        state.buffered.len(),
                        self.watermark
                    );
                }
            }
        }
    }

    /// Post an asynchronous receive for exactly (context id, src, tag).
    ///
    /// Returns a completed ticket immediately when a buffered envelope
    /// already matches; otherwise the receive joins the pending queue.
    pub fn receive_async(&self, context_id: u64, src: u32, tag: i32) -> ReceiveTicket {
        let mut state = self.state.lock().unwrap();
        if let Some(reason) = &state.aborted {
            return ReceiveTicket::new(TicketState::Failed(ReceiveAborted(reason.clone())));
        }
        let matched = state
            .buffered
            .iter()
            .position(|env| env.context_id == context_id && env.src == src && env.tag == tag);
        match matched {
            Some(idx) => {
                let env = state.buffered.remove(idx).expect("index from position");
                ReceiveTicket::new(TicketState::Completed(env.payload))
            }
            None => {
                let ticket = ReceiveTicket::new(TicketState::Pending(Vec::new()));
                state.pending.push_back(PendingReceive {
                    context_id,
                    src,
                    tag,
                    ticket: ticket.clone(),
                });
                ticket
            }
        }
    }

    /// Blocking receive: post and wait.
    pub fn receive_blocking(
        &self,
        context_id: u64,
        src: u32,
        tag: i32,
    ) -> Result<PayloadBytes, ReceiveAborted> {
        self.receive_async(context_id, src, tag).wait()
    }

    /// Blocking receive with a deadline, used by internal protocol steps
    /// that must detect missing participants. On timeout the posted receive
    /// is withdrawn.
    pub(crate) fn receive_deadline(
        &self,
        context_id: u64,
        src: u32,
        tag: i32,
        dur: Duration,
    ) -> Result<Option<PayloadBytes>, ReceiveAborted> {
        let ticket = self.receive_async(context_id, src, tag);
        if let Some(outcome) = ticket.wait_timeout(dur) {
            return outcome.map(Some);
        }
        // Timed out: withdraw the pending receive under the mailbox lock.
        let mut state = self.state.lock().unwrap();
        let idx = state
            .pending
            .iter()
            .position(|p| p.ticket.same_ticket(&ticket));
        match idx {
            Some(i) => {
                state.pending.remove(i);
                Ok(None)
            }
            // The receive was consumed between the timeout and the lock;
            // its settled outcome is authoritative.
            None => {
                drop(state);
                ticket.wait().map(Some)
            }
        }
    }

    /// Fail every pending receive, discard buffered messages, and refuse
    /// all further traffic.
    pub fn abort(&self, reason: &str) {
        let mut state = self.state.lock().unwrap();
        if state.aborted.is_some() {
            return;
        }
        state.aborted = Some(reason.to_string());
        state.buffered.clear();
        let pending = std::mem::take(&mut state.pending);
        drop(state);
        let outcome: ReceiveOutcome = Err(ReceiveAborted(reason.to_string()));
        for p in pending {
            let callbacks = p.ticket.settle(&outcome);
            dispatch_all(callbacks, &outcome);
        }
    }

    /// Number of messages currently buffered (diagnostics).
    pub fn buffered_len(&self) -> usize {
        self.state.lock().unwrap().buffered.len()
    }
}
