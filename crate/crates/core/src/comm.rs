//! The user-facing communicator: rank and size queries, typed send and
//! receive (blocking and ticket-based), the color/key split protocol, and
//! the collectives `broadcast` and `all_reduce`.
//!
//! A communicator names a process group. Every message carries the group's
//! context id and is matched against it at the receiver, so traffic never
//! crosses communicators. The world communicator has context id 0; each
//! split group receives a fresh id from the job coordinator.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::codec::{decode, decode_value, encode, CodecError, Kind, PayloadBytes, Value};
use crate::mailbox::{Mailbox, ReceiveAborted, ReceiveTicket};
use crate::transport::{Transport, TransportError};
use crate::wire::Envelope;

/// Reserved internal tags. User tags are non-negative; everything the
/// protocol sends on its own behalf uses these.
const TAG_SPLIT_GATHER: i32 = -1;
const TAG_SPLIT_ASSIGN: i32 = -2;
const TAG_BCAST: i32 = -3;
const TAG_REDUCE_GATHER: i32 = -4;
const TAG_REDUCE_RESULT: i32 = -5;

/// How long the split root waits for each participant before declaring the
/// split mismatched and aborting.
pub const DEFAULT_SPLIT_TIMEOUT: Duration = Duration::from_secs(30);

/// Errors surfaced by communicator operations.
#[derive(Debug, Error)]
pub enum CommError {
    #[error("invalid rank {rank} for communicator of size {size}")]
    InvalidRank { rank: u32, size: u32 },
    #[error("invalid tag {0}: user tags must be non-negative")]
    InvalidTag(i32),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    ReceiveAborted(#[from] ReceiveAborted),
    #[error("split protocol failed: {0}")]
    SplitProtocol(String),
    #[error("collective aborted: {0}")]
    CollectiveAborted(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    App(String),
}

impl CommError {
    /// Application-level failure raised from inside a parallel function.
    pub fn app(msg: impl Into<String>) -> CommError {
        CommError::App(msg.into())
    }
}

/// Everything one logical process needs to talk to the outside world:
/// its world rank, its mailbox, and the job's transport.
pub(crate) struct RankNode {
    pub world_rank: u32,
    pub mailbox: Arc<Mailbox>,
    pub transport: Arc<dyn Transport>,
    pub split_timeout: Duration,
}

impl RankNode {
    pub fn new(world_rank: u32, mailbox: Arc<Mailbox>, transport: Arc<dyn Transport>) -> RankNode {
        RankNode {
            world_rank,
            mailbox,
            transport,
            split_timeout: DEFAULT_SPLIT_TIMEOUT,
        }
    }
}

/// A process-group handle owned by exactly one logical process.
pub struct Communicator {
    context_id: u64,
    local_to_world: Arc<Vec<u32>>,
    local_rank: u32,
    split_epoch: Cell<u64>,
    node: Arc<RankNode>,
}

impl Communicator {
    /// Color value that opts the caller out of a split.
    pub const UNDEFINED_COLOR: i32 = -1;

    /// The world communicator for one rank of a job of `world_size` ranks.
    pub(crate) fn world(node: Arc<RankNode>, world_size: u32) -> Communicator {
        debug_assert!(node.world_rank < world_size);
        Communicator {
            context_id: 0,
            local_to_world: Arc::new((0..world_size).collect()),
            local_rank: node.world_rank,
            split_epoch: Cell::new(0),
            node,
        }
    }

    /// This process's rank within the communicator.
    pub fn rank(&self) -> u32 {
        self.local_rank
    }

    /// Number of members in the communicator.
    pub fn size(&self) -> u32 {
        self.local_to_world.len() as u32
    }

    /// The context id stamped on every message this communicator sends.
    pub fn context_id(&self) -> u64 {
        self.context_id
    }

    /// Number of splits this communicator has completed.
    pub fn split_epoch(&self) -> u64 {
        self.split_epoch.get()
    }

    /// This process's rank in the world communicator.
    pub fn world_rank(&self) -> u32 {
        self.node.world_rank
    }

    fn world_of(&self, local: u32) -> Result<u32, CommError> {
        self.local_to_world
            .get(local as usize)
            .copied()
            .ok_or(CommError::InvalidRank {
                rank: local,
                size: self.size(),
            })
    }

    /// Send `value` to local rank `dst`, tagged `tag`. Never blocks awaiting
    /// the receiver.
    pub fn send(&self, dst: u32, tag: i32, value: &Value) -> Result<(), CommError> {
        if tag < 0 {
            return Err(CommError::InvalidTag(tag));
        }
        self.send_payload(dst, tag, encode(value))
    }

    /// Block until a message from local rank `src` with `tag` arrives, then
    /// decode it as `kind`.
    pub fn receive(&self, src: u32, tag: i32, kind: Kind) -> Result<Value, CommError> {
        if tag < 0 {
            return Err(CommError::InvalidTag(tag));
        }
        let payload = self.receive_payload(src, tag)?;
        Ok(decode(&payload, kind)?)
    }

    /// Post an asynchronous receive and return its ticket immediately.
    pub fn receive_async(&self, src: u32, tag: i32, kind: Kind) -> Result<Ticket, CommError> {
        if tag < 0 {
            return Err(CommError::InvalidTag(tag));
        }
        let world_src = self.world_of(src)?;
        let raw = self
            .node
            .mailbox
            .receive_async(self.context_id, world_src, tag);
        Ok(Ticket { raw, kind })
    }

    fn send_payload(&self, dst: u32, tag: i32, payload: PayloadBytes) -> Result<(), CommError> {
        let world_dst = self.world_of(dst)?;
        let env = Envelope {
            context_id: self.context_id,
            src: self.node.world_rank,
            dst: world_dst,
            tag,
            payload,
        };
        self.node.transport.deliver(env)?;
        Ok(())
    }

    fn receive_payload(&self, src: u32, tag: i32) -> Result<PayloadBytes, CommError> {
        let world_src = self.world_of(src)?;
        Ok(self
            .node
            .mailbox
            .receive_blocking(self.context_id, world_src, tag)?)
    }

    fn receive_payload_deadline(
        &self,
        src: u32,
        tag: i32,
        dur: Duration,
    ) -> Result<Option<PayloadBytes>, CommError> {
        let world_src = self.world_of(src)?;
        Ok(self
            .node
            .mailbox
            .receive_deadline(self.context_id, world_src, tag, dur)?)
    }

    /// Partition the communicator by `color`, ordering each partition by
    /// `(key, parent rank)`. Collective: every member must call it.
    ///
    /// Members sharing a color receive a new communicator with a fresh,
    /// globally unique context id; callers passing
    /// [`UNDEFINED_COLOR`](Self::UNDEFINED_COLOR) receive `None`.
    pub fn split(&self, color: i32, key: i32) -> Result<Option<Communicator>, CommError> {
        if color < Self::UNDEFINED_COLOR {
            return Err(CommError::Usage(format!(
                "split color must be non-negative or {} to opt out, got {color}",
                Self::UNDEFINED_COLOR
            )));
        }

        // Parent local rank 0 coordinates the split, whether or not it
        // joins a group itself.
        let assignment = if self.local_rank == 0 {
            self.split_coordinate(color, key)?
        } else {
            self.send_payload(
                0,
                TAG_SPLIT_GATHER,
                encode(&Value::ArrayI32(vec![color, key])),
            )?;
            let payload = self.receive_payload(0, TAG_SPLIT_ASSIGN)?;
            SplitAssignment::from_value(&decode(&payload, Kind::ArrayI64)?)?
        };

        self.split_epoch.set(self.split_epoch.get() + 1);

        Ok(assignment.map(|a| Communicator {
            context_id: a.context_id,
            local_rank: a.local_rank,
            local_to_world: Arc::new(a.local_to_world),
            split_epoch: Cell::new(0),
            node: self.node.clone(),
        }))
    }

    /// Root side of the split: gather (color, key) from every member, group
    /// and sort, fetch fresh context ids, scatter assignments.
    fn split_coordinate(
        &self,
        my_color: i32,
        my_key: i32,
    ) -> Result<Option<SplitAssignment>, CommError> {
        struct Entry {
            parent_rank: u32,
            color: i32,
            key: i32,
        }

        let size = self.size();
        let mut entries = Vec::with_capacity(size as usize);
        entries.push(Entry {
            parent_rank: 0,
            color: my_color,
            key: my_key,
        });
        for p in 1..size {
            let payload = self
                .receive_payload_deadline(p, TAG_SPLIT_GATHER, self.node.split_timeout)?
                .ok_or_else(|| {
                    CommError::SplitProtocol(format!(
                        "timed out waiting for split participation from rank {p}"
                    ))
                })?;
            let pair = decode(&payload, Kind::ArrayI32)?;
            let (color, key) = match pair {
                Value::ArrayI32(v) if v.len() == 2 => (v[0], v[1]),
                other => {
                    return Err(CommError::SplitProtocol(format!(
                        "bad split gather message from rank {p}: {other}"
                    )))
                }
            };
            entries.push(Entry {
                parent_rank: p,
                color,
                key,
            });
        }

        // Group by color in ascending order; sort members by (key, parent
        // rank). Context ids are assigned per group in the same order.
        let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.color != Self::UNDEFINED_COLOR {
                groups.entry(e.color).or_default().push(i);
            }
        }
        for members in groups.values_mut() {
            members.sort_by_key(|&i| (entries[i].key, entries[i].parent_rank));
        }

        let first_id = if groups.is_empty() {
            0
        } else {
            self.node
                .transport
                .allocate_context_ids(groups.len() as u32)?
        };

        let mut per_member: Vec<Option<SplitAssignment>> =
            (0..size as usize).map(|_| None).collect();
        for (group_idx, members) in groups.values().enumerate() {
            let context_id = first_id + group_idx as u64;
            let local_to_world: Vec<u32> = members
                .iter()
                .map(|&i| self.local_to_world[entries[i].parent_rank as usize])
                .collect();
            for (new_rank, &i) in members.iter().enumerate() {
                per_member[entries[i].parent_rank as usize] = Some(SplitAssignment {
                    context_id,
                    local_rank: new_rank as u32,
                    local_to_world: local_to_world.clone(),
                });
            }
        }

        for p in 1..size {
            let msg = SplitAssignment::to_value(per_member[p as usize].as_ref());
            self.send_payload(p, TAG_SPLIT_ASSIGN, encode(&msg))?;
        }
        Ok(per_member[0].take())
    }

    /// Return the root's value at every member. Collective; exactly the
    /// root passes `Some`.
    pub fn broadcast(
        &self,
        root: u32,
        value_at_root: Option<&Value>,
        kind: Kind,
    ) -> Result<Value, CommError> {
        if root >= self.size() {
            return Err(CommError::InvalidRank {
                rank: root,
                size: self.size(),
            });
        }
        if self.local_rank == root {
            let value = value_at_root.ok_or_else(|| {
                CommError::Usage("broadcast root must supply a value".to_string())
            })?;
            if value.kind() != kind {
                return Err(CodecError::KindMismatch {
                    expected: kind,
                    found: value.kind(),
                }
                .into());
            }
            let payload = encode(value);
            for p in 0..self.size() {
                if p != self.local_rank {
                    self.send_payload(p, TAG_BCAST, payload.clone())?;
                }
            }
            Ok(value.clone())
        } else {
            if value_at_root.is_some() {
                return Err(CommError::Usage(
                    "only the broadcast root supplies a value".to_string(),
                ));
            }
            let payload = self
                .receive_payload(root, TAG_BCAST)
                .map_err(collective_abort("broadcast"))?;
            Ok(decode(&payload, kind)?)
        }
    }

    /// Fold every member's value with `f` in local-rank order and return
    /// the result at every member. Collective.
    ///
    /// The fold is `f(f(…f(v0, v1)…), v_{size-1})`, so results are
    /// deterministic even for non-commutative `f`.
    pub fn all_reduce<F>(&self, value: &Value, f: F) -> Result<Value, CommError>
    where
        F: Fn(Value, Value) -> Value,
    {
        if self.local_rank == 0 {
            let mut acc = value.clone();
            for p in 1..self.size() {
                let payload = self
                    .receive_payload(p, TAG_REDUCE_GATHER)
                    .map_err(collective_abort("all_reduce"))?;
                acc = f(acc, decode_value(&payload)?);
            }
            let payload = encode(&acc);
            for p in 1..self.size() {
                self.send_payload(p, TAG_REDUCE_RESULT, payload.clone())?;
            }
            Ok(acc)
        } else {
            self.send_payload(0, TAG_REDUCE_GATHER, encode(value))?;
            let payload = self
                .receive_payload(0, TAG_REDUCE_RESULT)
                .map_err(collective_abort("all_reduce"))?;
            Ok(decode_value(&payload)?)
        }
    }
}

fn collective_abort(op: &'static str) -> impl Fn(CommError) -> CommError {
    move |err| match err {
        CommError::ReceiveAborted(e) => CommError::CollectiveAborted(format!("{op}: {e}")),
        other => other,
    }
}

/// The root's answer to one split participant.
struct SplitAssignment {
    context_id: u64,
    local_rank: u32,
    local_to_world: Vec<u32>,
}

impl SplitAssignment {
    /// Wire form: empty array means "opted out"; otherwise
    /// `[context id, member rank, world rank 0, world rank 1, …]`.
    fn to_value(assignment: Option<&SplitAssignment>) -> Value {
        match assignment {
            None => Value::ArrayI64(Vec::new()),
            Some(a) => {
                let mut v = Vec::with_capacity(2 + a.local_to_world.len());
                v.push(a.context_id as i64);
                v.push(a.local_rank as i64);
                v.extend(a.local_to_world.iter().map(|&w| w as i64));
                Value::ArrayI64(v)
            }
        }
    }

    fn from_value(value: &Value) -> Result<Option<SplitAssignment>, CommError> {
        let raw = match value {
            Value::ArrayI64(v) => v,
            other => {
                return Err(CommError::SplitProtocol(format!(
                    "bad split assignment message: {other}"
                )))
            }
        };
        if raw.is_empty() {
            return Ok(None);
        }
        if raw.len() < 3 {
            return Err(CommError::SplitProtocol(
                "split assignment shorter than one member".to_string(),
            ));
        }
        Ok(Some(SplitAssignment {
            context_id: raw[0] as u64,
            local_rank: raw[1] as u32,
            local_to_world: raw[2..].iter().map(|&w| w as u32).collect(),
        }))
    }
}

/// A typed pending receive: the mailbox ticket plus the kind the payload
/// decodes to on completion.
pub struct Ticket {
    raw: ReceiveTicket,
    kind: Kind,
}

impl Ticket {
    /// Block until the matching message arrives, then decode it.
    pub fn wait(&self) -> Result<Value, CommError> {
        let payload = self.raw.wait()?;
        Ok(decode(&payload, self.kind)?)
    }

    /// Register a completion callback, run on a runtime-internal execution
    /// context with the decoded value.
    pub fn on_complete<F>(&self, f: F)
    where
        F: FnOnce(Result<Value, CommError>) + Send + 'static,
    {
        let kind = self.kind;
        self.raw.on_complete(move |outcome| {
            let result = outcome
                .map_err(CommError::from)
                .and_then(|p| decode(&p, kind).map_err(CommError::from));
            f(result)
        });
    }

    pub fn is_complete(&self) -> bool {
        self.raw.is_complete()
    }
}

#[cfg(test)]
impl Communicator {
    /// Test hook: same communicator with a short split timeout.
    fn clone_for_short_split_timeout(&self) -> Communicator {
        let node = RankNode {
            world_rank: self.node.world_rank,
            mailbox: self.node.mailbox.clone(),
            transport: self.node.transport.clone(),
            split_timeout: Duration::from_millis(100),
        };
        Communicator {
            context_id: self.context_id,
            local_to_world: self.local_to_world.clone(),
            local_rank: self.local_rank,
            split_epoch: Cell::new(self.split_epoch.get()),
            node: Arc::new(node),
        }
    }
}
