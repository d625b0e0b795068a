//! In-memory transport for local mode: delivery is a direct enqueue into
//! the destination rank's mailbox, with observable semantics identical to
//! the TCP transport.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::mailbox::Mailbox;
use crate::transport::{FrameCounters, Transport, TransportError};
use crate::wire::Envelope;

pub struct LocalTransport {
    mailboxes: Vec<Arc<Mailbox>>,
    next_context_id: AtomicU64,
    counters: FrameCounters,
}

impl LocalTransport {
    /// Build a transport hosting all `world_size` ranks in this process.
    pub fn new(world_size: u32) -> Arc<LocalTransport> {
        Arc::new(LocalTransport {
            mailboxes: (0..world_size).map(|r| Arc::new(Mailbox::new(r))).collect(),
            next_context_id: AtomicU64::new(1),
            counters: FrameCounters::new(),
        })
    }

    pub fn world_size(&self) -> u32 {
        self.mailboxes.len() as u32
    }

    pub fn mailbox(&self, rank: u32) -> Arc<Mailbox> {
        self.mailboxes[rank as usize].clone()
    }

    /// Abort every rank's mailbox, failing all pending receives.
    pub fn abort_all(&self, reason: &str) {
        for mb in &self.mailboxes {
            mb.abort(reason);
        }
    }
}

impl Transport for LocalTransport {
    fn deliver(&self, env: Envelope) -> Result<(), TransportError> {
        let mailbox = self
            .mailboxes
            .get(env.dst as usize)
            .ok_or(TransportError::UnknownRank {
                rank: env.dst,
                world_size: self.world_size(),
            })?;
        mailbox.enqueue(env);
        Ok(())
    }

    fn allocate_context_ids(&self, count: u32) -> Result<u64, TransportError> {
        Ok(self
            .next_context_id
            .fetch_add(count as u64, Ordering::Relaxed))
    }

    fn counters(&self) -> &FrameCounters {
        &self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode, encode, Kind, Value};

    fn env(dst: u32, v: i32) -> Envelope {
        Envelope {
            context_id: 0,
            src: 0,
            dst,
            tag: 0,
            payload: encode(&Value::I32(v)),
        }
    }

    #[test]
    fn self_send_is_receivable() {
        let t = LocalTransport::new(1);
        t.deliver(env(0, 41)).unwrap();
        let p = t.mailbox(0).receive_blocking(0, 0, 0).unwrap();
        assert_eq!(decode(&p, Kind::I32).unwrap(), Value::I32(41));
    }

    #[test]
    fn deliver_past_world_size_is_routing_error() {
        let t = LocalTransport::new(4);
        assert_eq!(
            t.deliver(env(4, 0)),
            Err(TransportError::UnknownRank {
                rank: 4,
                world_size: 4
            })
        );
    }

    #[test]
    fn local_delivery_emits_no_frames() {
        let t = LocalTransport::new(2);
        t.deliver(env(1, 1)).unwrap();
        t.deliver(env(1, 2)).unwrap();
        assert_eq!(t.counters().total_sent(), 0);
    }

    #[test]
    fn context_ids_are_unique_blocks_and_never_zero() {
        let t = LocalTransport::new(1);
        let a = t.allocate_context_ids(3).unwrap();
        let b = t.allocate_context_ids(1).unwrap();
        assert!(a >= 1);
        assert_eq!(b, a + 3);
    }
}
