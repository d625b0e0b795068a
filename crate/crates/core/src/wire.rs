//! Frame formats for every message that crosses a process boundary: user
//! messages, control traffic, job dispatch, and results.
//!
//! A frame is `magic (u32) | version (u8) | kind (u8) | body-length (u32) |
//! body`, integers little-endian. The layout and the per-kind body formats
//! are normative and documented in `PROTOCOL.md`.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::bytesio::{Reader, ShortInput, WriteLe};
use crate::codec::PayloadBytes;

/// Leading frame constant, `"MPIG"` read as a little-endian `u32`.
pub const FRAME_MAGIC: u32 = 0x4D50_4947;
/// The only wire version this build speaks.
pub const WIRE_VERSION: u8 = 1;
/// Frame header size in bytes: magic, version, kind, body length.
pub const FRAME_HEADER_LEN: usize = 10;

/// Errors raised while framing or parsing wire traffic.
#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame body too large: {0} bytes")]
    FrameTooLarge(usize),
    #[error("bad frame magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown frame kind {0}")]
    UnknownFrameKind(u8),
    /// Clean end of stream at a frame boundary.
    #[error("connection closed")]
    Closed,
    /// The stream ended partway through a frame.
    #[error("connection lost mid-frame")]
    ConnectionLost,
    #[error("malformed {kind} body: {detail}")]
    MalformedBody { kind: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl WireError {
    fn malformed(kind: &'static str, detail: impl Into<String>) -> Self {
        WireError::MalformedBody {
            kind,
            detail: detail.into(),
        }
    }
}

fn short(kind: &'static str) -> impl Fn(ShortInput) -> WireError + Copy {
    move |s| {
        WireError::malformed(
            kind,
            format!("needed {} more bytes, found {}", s.need, s.have),
        )
    }
}

/// The enumerated frame kinds. Unknown kinds are rejected at read time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    /// Worker-id handshake and peer identification.
    Hello = 0,
    /// Job dispatch carrying a [`JobSpec`].
    TaskAssign = 1,
    /// Per-rank outcome of a job.
    Result = 2,
    /// A routed user message carrying an [`Envelope`].
    UserMsg = 3,
    /// Address lookup request for a world rank.
    AddrReq = 4,
    /// Address lookup reply carrying a [`RankMapEntry`].
    AddrReply = 5,
    /// Context-id block allocation request.
    CtxAllocReq = 6,
    /// Context-id block allocation reply.
    CtxAllocReply = 7,
    /// Orderly teardown of a worker.
    Shutdown = 8,
    /// Job completion notice from the master.
    JobDone = 9,
}

/// Number of defined frame kinds; used to size per-kind counters.
pub const FRAME_KIND_COUNT: usize = 10;

impl FrameKind {
    pub fn from_u8(v: u8) -> Result<FrameKind, WireError> {
        Ok(match v {
            0 => FrameKind::Hello,
            1 => FrameKind::TaskAssign,
            2 => FrameKind::Result,
            3 => FrameKind::UserMsg,
            4 => FrameKind::AddrReq,
            5 => FrameKind::AddrReply,
            6 => FrameKind::CtxAllocReq,
            7 => FrameKind::CtxAllocReply,
            8 => FrameKind::Shutdown,
            9 => FrameKind::JobDone,
            other => return Err(WireError::UnknownFrameKind(other)),
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FrameKind::Hello => "HELLO",
            FrameKind::TaskAssign => "TASK_ASSIGN",
            FrameKind::Result => "RESULT",
            FrameKind::UserMsg => "USER_MSG",
            FrameKind::AddrReq => "ADDR_REQ",
            FrameKind::AddrReply => "ADDR_REPLY",
            FrameKind::CtxAllocReq => "CTX_ALLOC_REQ",
            FrameKind::CtxAllocReply => "CTX_ALLOC_REPLY",
            FrameKind::Shutdown => "SHUTDOWN",
            FrameKind::JobDone => "JOB_DONE",
        };
        f.write_str(name)
    }
}

/// Serialize one frame into a byte vector.
pub fn write_frame(kind: FrameKind, body: &[u8]) -> Result<Vec<u8>, WireError> {
    if body.len() > u32::MAX as usize {
        return Err(WireError::FrameTooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len());
    out.put_u32(FRAME_MAGIC);
    out.put_u8(WIRE_VERSION);
    out.put_u8(kind as u8);
    out.put_u32(body.len() as u32);
    out.extend_from_slice(body);
    Ok(out)
}

/// Write one frame to a stream.
pub fn write_frame_to<W: Write>(w: &mut W, kind: FrameKind, body: &[u8]) -> Result<(), WireError> {
    let frame = write_frame(kind, body)?;
    w.write_all(&frame)?;
    Ok(())
}

/// Read exactly one frame from a stream positioned at a frame boundary.
///
/// A clean end of stream before the first header byte is [`WireError::Closed`];
/// an end of stream anywhere inside a frame is [`WireError::ConnectionLost`].
pub fn read_frame<R: Read>(r: &mut R) -> Result<(FrameKind, Vec<u8>), WireError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    // Read the first byte separately so a clean close is distinguishable
    // from a mid-frame loss.
    match r.read(&mut header[..1]) {
        Ok(0) => return Err(WireError::Closed),
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::Interrupted => return read_frame(r),
        Err(e) => return Err(WireError::Io(e)),
    }
    read_exact_or_lost(r, &mut header[1..])?;

    let mut h = Reader::new(&header);
    let magic = h.u32().expect("header buffer");
    if magic != FRAME_MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = h.u8().expect("header buffer");
    if version != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let kind = FrameKind::from_u8(h.u8().expect("header buffer"))?;
    let body_len = h.u32().expect("header buffer") as usize;

    let mut body = vec![0u8; body_len];
    read_exact_or_lost(r, &mut body)?;
    Ok((kind, body))
}

fn read_exact_or_lost<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), WireError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WireError::ConnectionLost
        } else {
            WireError::Io(e)
        }
    })
}

/// Whether user messages travel worker-to-worker or through the master.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum RoutingMode {
    #[default]
    PeerToPeer = 0,
    MasterRelay = 1,
}

impl RoutingMode {
    fn from_u8(v: u8) -> Result<RoutingMode, WireError> {
        match v {
            0 => Ok(RoutingMode::PeerToPeer),
            1 => Ok(RoutingMode::MasterRelay),
            other => Err(WireError::malformed(
                "routing-mode",
                format!("unknown routing mode {other}"),
            )),
        }
    }
}

impl fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoutingMode::PeerToPeer => f.write_str("p2p"),
            RoutingMode::MasterRelay => f.write_str("relay"),
        }
    }
}

/// A routed user message.
///
/// `context_id` names the communicator generation the message belongs to;
/// the world communicator is context 0. User-visible tags are non-negative;
/// negative tags are reserved for internal protocol traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub context_id: u64,
    pub src: u32,
    pub dst: u32,
    pub tag: i32,
    pub payload: PayloadBytes,
}

impl Envelope {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.put_u64(self.context_id);
        out.put_u32(self.src);
        out.put_u32(self.dst);
        out.put_i32(self.tag);
        out.put_len_prefixed(self.payload.as_bytes());
        out
    }

    pub fn decode(body: &[u8]) -> Result<Envelope, WireError> {
        let e = short("envelope");
        let mut r = Reader::new(body);
        let env = Envelope {
            context_id: r.u64().map_err(e)?,
            src: r.u32().map_err(e)?,
            dst: r.u32().map_err(e)?,
            tag: r.i32().map_err(e)?,
            payload: PayloadBytes::from_vec(r.len_prefixed().map_err(e)?.to_vec()),
        };
        expect_consumed(&r, "envelope")?;
        Ok(env)
    }
}

/// One world rank's placement: the worker hosting it and that worker's
/// listen address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMapEntry {
    pub world_rank: u32,
    pub worker_id: u64,
    pub host: String,
    pub port: u16,
}

impl RankMapEntry {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.put_u32(self.world_rank);
        out.put_u64(self.worker_id);
        out.put_len_prefixed(self.host.as_bytes());
        out.put_u16(self.port);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<RankMapEntry, WireError> {
        let e = short("rank-map entry");
        Ok(RankMapEntry {
            world_rank: r.u32().map_err(e)?,
            worker_id: r.u64().map_err(e)?,
            host: read_string(r, "rank-map entry")?,
            port: r.u16().map_err(e)?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode(body: &[u8]) -> Result<RankMapEntry, WireError> {
        let mut r = Reader::new(body);
        let entry = RankMapEntry::decode_from(&mut r)?;
        expect_consumed(&r, "rank-map entry")?;
        Ok(entry)
    }
}

/// World-rank to worker placement for one job, distributed with every task
/// assignment. Entries are stored sorted by world rank, one per rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMap {
    entries: Vec<RankMapEntry>,
}

impl RankMap {
    /// Build a rank map, requiring exactly one entry per world rank
    /// `0..entries.len()` (in any input order).
    pub fn new(mut entries: Vec<RankMapEntry>) -> Result<RankMap, WireError> {
        entries.sort_by_key(|e| e.world_rank);
        for (i, entry) in entries.iter().enumerate() {
            if entry.world_rank as usize != i {
                return Err(WireError::malformed(
                    "rank-map",
                    format!(
                        "expected exactly one entry per rank, found rank {} at position {i}",
                        entry.world_rank
                    ),
                ));
            }
        }
        Ok(RankMap { entries })
    }

    pub fn world_size(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn entry(&self, world_rank: u32) -> Option<&RankMapEntry> {
        self.entries.get(world_rank as usize)
    }

    pub fn worker_of(&self, world_rank: u32) -> Option<u64> {
        self.entry(world_rank).map(|e| e.worker_id)
    }

    pub fn entries(&self) -> &[RankMapEntry] {
        &self.entries
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.put_u32(self.entries.len() as u32);
        for entry in &self.entries {
            entry.encode_into(out);
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<RankMap, WireError> {
        let n = r.u32().map_err(short("rank-map"))? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            entries.push(RankMapEntry::decode_from(r)?);
        }
        RankMap::new(entries)
    }
}

/// One parallel execution, as dispatched to a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub job_id: u64,
    pub function_name: String,
    pub world_size: u32,
    /// World ranks the receiving worker hosts.
    pub assigned_ranks: Vec<u32>,
    pub rank_map: RankMap,
    pub routing: RoutingMode,
    /// Optional encoded parameter blob handed to every rank's function.
    pub params: Option<PayloadBytes>,
}

impl JobSpec {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.put_u64(self.job_id);
        out.put_len_prefixed(self.function_name.as_bytes());
        out.put_u32(self.world_size);
        out.put_u32(self.assigned_ranks.len() as u32);
        for r in &self.assigned_ranks {
            out.put_u32(*r);
        }
        self.rank_map.encode_into(&mut out);
        out.put_u8(self.routing as u8);
        match &self.params {
            None => out.put_u8(0),
            Some(p) => {
                out.put_u8(1);
                out.put_len_prefixed(p.as_bytes());
            }
        }
        out
    }

    pub fn decode(body: &[u8]) -> Result<JobSpec, WireError> {
        let e = short("job-spec");
        let mut r = Reader::new(body);
        let job_id = r.u64().map_err(e)?;
        let function_name = read_string(&mut r, "job-spec")?;
        let world_size = r.u32().map_err(e)?;
        let n_assigned = r.u32().map_err(e)? as usize;
        let mut assigned_ranks = Vec::with_capacity(n_assigned.min(1 << 16));
        for _ in 0..n_assigned {
            assigned_ranks.push(r.u32().map_err(e)?);
        }
        let rank_map = RankMap::decode_from(&mut r)?;
        let routing = RoutingMode::from_u8(r.u8().map_err(e)?)?;
        let params = match r.u8().map_err(e)? {
            0 => None,
            1 => Some(PayloadBytes::from_vec(
                r.len_prefixed().map_err(e)?.to_vec(),
            )),
            other => {
                return Err(WireError::malformed(
                    "job-spec",
                    format!("bad params flag {other}"),
                ))
            }
        };
        expect_consumed(&r, "job-spec")?;

        if rank_map.world_size() != world_size {
            return Err(WireError::malformed(
                "job-spec",
                format!(
                    "rank map covers {} ranks, world size is {world_size}",
                    rank_map.world_size()
                ),
            ));
        }
        if assigned_ranks.iter().any(|r| *r >= world_size) {
            return Err(WireError::malformed(
                "job-spec",
                "assigned rank outside world".to_string(),
            ));
        }
        Ok(JobSpec {
            job_id,
            function_name,
            world_size,
            assigned_ranks,
            rank_map,
            routing,
            params,
        })
    }
}

/// One rank's outcome, reported from a worker to the master.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub job_id: u64,
    pub rank: u32,
    pub outcome: Result<PayloadBytes, String>,
}

impl TaskResult {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.put_u64(self.job_id);
        out.put_u32(self.rank);
        match &self.outcome {
            Ok(payload) => {
                out.put_u8(1);
                out.put_len_prefixed(payload.as_bytes());
            }
            Err(message) => {
                out.put_u8(0);
                out.put_len_prefixed(message.as_bytes());
            }
        }
        out
    }

    pub fn decode(body: &[u8]) -> Result<TaskResult, WireError> {
        let e = short("result");
        let mut r = Reader::new(body);
        let job_id = r.u64().map_err(e)?;
        let rank = r.u32().map_err(e)?;
        let outcome = match r.u8().map_err(e)? {
            1 => Ok(PayloadBytes::from_vec(
                r.len_prefixed().map_err(e)?.to_vec(),
            )),
            0 => Err(read_string(&mut r, "result")?),
            other => {
                return Err(WireError::malformed(
                    "result",
                    format!("bad outcome flag {other}"),
                ))
            }
        };
        expect_consumed(&r, "result")?;
        Ok(TaskResult {
            job_id,
            rank,
            outcome,
        })
    }
}

/// HELLO body: worker identity and listen address.
///
/// A worker announces itself to the master with `worker_id` 0; the master's
/// reply carries the assigned id. On peer connections the dialing worker
/// sends its own id and address so the acceptor can attribute the stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub worker_id: u64,
    pub host: String,
    pub port: u16,
}

impl Hello {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.put_u64(self.worker_id);
        out.put_len_prefixed(self.host.as_bytes());
        out.put_u16(self.port);
        out
    }

    pub fn decode(body: &[u8]) -> Result<Hello, WireError> {
        let e = short("hello");
        let mut r = Reader::new(body);
        let hello = Hello {
            worker_id: r.u64().map_err(e)?,
            host: read_string(&mut r, "hello")?,
            port: r.u16().map_err(e)?,
        };
        expect_consumed(&r, "hello")?;
        Ok(hello)
    }
}

pub fn encode_addr_req(world_rank: u32) -> Vec<u8> {
    world_rank.to_le_bytes().to_vec()
}

pub fn decode_addr_req(body: &[u8]) -> Result<u32, WireError> {
    decode_single_u32(body, "addr-req")
}

pub fn encode_ctx_alloc_req(count: u32) -> Vec<u8> {
    count.to_le_bytes().to_vec()
}

pub fn decode_ctx_alloc_req(body: &[u8]) -> Result<u32, WireError> {
    decode_single_u32(body, "ctx-alloc-req")
}

pub fn encode_ctx_alloc_reply(first_id: u64, count: u32) -> Vec<u8> {
    let mut out = Vec::new();
    out.put_u64(first_id);
    out.put_u32(count);
    out
}

pub fn decode_ctx_alloc_reply(body: &[u8]) -> Result<(u64, u32), WireError> {
    let e = short("ctx-alloc-reply");
    let mut r = Reader::new(body);
    let first = r.u64().map_err(e)?;
    let count = r.u32().map_err(e)?;
    expect_consumed(&r, "ctx-alloc-reply")?;
    Ok((first, count))
}

pub fn encode_job_done(job_id: u64) -> Vec<u8> {
    job_id.to_le_bytes().to_vec()
}

pub fn decode_job_done(body: &[u8]) -> Result<u64, WireError> {
    let e = short("job-done");
    let mut r = Reader::new(body);
    let id = r.u64().map_err(e)?;
    expect_consumed(&r, "job-done")?;
    Ok(id)
}

fn decode_single_u32(body: &[u8], kind: &'static str) -> Result<u32, WireError> {
    let mut r = Reader::new(body);
    let v = r.u32().map_err(short(kind))?;
    expect_consumed(&r, kind)?;
    Ok(v)
}

fn read_string(r: &mut Reader<'_>, kind: &'static str) -> Result<String, WireError> {
    let bytes = r.len_prefixed().map_err(short(kind))?;
    String::from_utf8(bytes.to_vec())
        .map_err(|_| WireError::malformed(kind, "string is not valid UTF-8".to_string()))
}

fn expect_consumed(r: &Reader<'_>, kind: &'static str) -> Result<(), WireError> {
    if r.is_empty() {
        Ok(())
    } else {
        Err(WireError::malformed(
            kind,
            format!("{} trailing bytes", r.remaining()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use proptest::prelude::*;

    use super::*;
    use crate::codec::{encode as encode_value, Value};

    #[test]
    fn empty_body_frame_is_ten_bytes() {
        let frame = write_frame(FrameKind::Shutdown, &[]).unwrap();
        assert_eq!(frame.len(), FRAME_HEADER_LEN);
        let (kind, body) = read_frame(&mut Cursor::new(frame)).unwrap();
        assert_eq!(kind, FrameKind::Shutdown);
        assert!(body.is_empty());
    }

    #[test]
    fn two_concatenated_frames_read_in_order() {
        let mut stream = write_frame(FrameKind::AddrReq, &encode_addr_req(7)).unwrap();
        stream.extend(write_frame(FrameKind::JobDone, &encode_job_done(3)).unwrap());
        let mut cursor = Cursor::new(stream);
        let (k1, b1) = read_frame(&mut cursor).unwrap();
        let (k2, b2) = read_frame(&mut cursor).unwrap();
        assert_eq!((k1, decode_addr_req(&b1).unwrap()), (FrameKind::AddrReq, 7));
        assert_eq!((k2, decode_job_done(&b2).unwrap()), (FrameKind::JobDone, 3));
        assert!(matches!(read_frame(&mut cursor), Err(WireError::Closed)));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut frame = write_frame(FrameKind::Shutdown, &[]).unwrap();
        frame[0] ^= 0xFF;
        assert!(matches!(
            read_frame(&mut Cursor::new(frame)),
            Err(WireError::BadMagic(_))
        ));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut frame = write_frame(FrameKind::Shutdown, &[]).unwrap();
        frame[4] = 9;
        assert!(matches!(
            read_frame(&mut Cursor::new(frame)),
            Err(WireError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let mut frame = write_frame(FrameKind::Shutdown, &[]).unwrap();
        frame[5] = 255;
        assert!(matches!(
            read_frame(&mut Cursor::new(frame)),
            Err(WireError::UnknownFrameKind(255))
        ));
    }

    #[test]
    fn truncation_mid_body_is_connection_lost() {
        let frame = write_frame(FrameKind::UserMsg, &[1, 2, 3, 4]).unwrap();
        let cut = &frame[..frame.len() - 2];
        assert!(matches!(
            read_frame(&mut Cursor::new(cut.to_vec())),
            Err(WireError::ConnectionLost)
        ));
    }

    #[test]
    fn truncation_mid_header_is_connection_lost() {
        let frame = write_frame(FrameKind::Shutdown, &[]).unwrap();
        let cut = &frame[..5];
        assert!(matches!(
            read_frame(&mut Cursor::new(cut.to_vec())),
            Err(WireError::ConnectionLost)
        ));
    }

    #[test]
    fn envelope_round_trip() {
        let env = Envelope {
            context_id: 42,
            src: 3,
            dst: 7,
            tag: -2,
            payload: encode_value(&Value::Str("hi".into())),
        };
        assert_eq!(Envelope::decode(&env.encode()).unwrap(), env);
    }

    fn sample_rank_map() -> RankMap {
        RankMap::new(
            (0..6u32)
                .map(|r| RankMapEntry {
                    world_rank: r,
                    worker_id: (r % 3) as u64 + 1,
                    host: format!("10.0.0.{}", r % 3 + 1),
                    port: 9000 + (r % 3) as u16,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn job_spec_round_trip() {
        let spec = JobSpec {
            job_id: 11,
            function_name: "ring".into(),
            world_size: 6,
            assigned_ranks: vec![0, 3],
            rank_map: sample_rank_map(),
            routing: RoutingMode::MasterRelay,
            params: Some(encode_value(&Value::I32(5))),
        };
        assert_eq!(JobSpec::decode(&spec.encode()).unwrap(), spec);
    }

    #[test]
    fn rank_map_requires_one_entry_per_rank() {
        let mut entries: Vec<_> = sample_rank_map().entries().to_vec();
        entries[2].world_rank = 4; // duplicate 4, missing 2
        assert!(RankMap::new(entries).is_err());
    }

    #[test]
    fn task_result_round_trips_both_outcomes() {
        let ok = TaskResult {
            job_id: 1,
            rank: 2,
            outcome: Ok(encode_value(&Value::I64(-9))),
        };
        let err = TaskResult {
            job_id: 1,
            rank: 3,
            outcome: Err("boom".into()),
        };
        assert_eq!(TaskResult::decode(&ok.encode()).unwrap(), ok);
        assert_eq!(TaskResult::decode(&err.encode()).unwrap(), err);
    }

    #[test]
    fn hello_round_trip() {
        let hello = Hello {
            worker_id: 0,
            host: "127.0.0.1".into(),
            port: 0,
        };
        assert_eq!(Hello::decode(&hello.encode()).unwrap(), hello);
    }

    proptest! {
        #[test]
        fn frame_round_trip(kind_idx in 0u8..FRAME_KIND_COUNT as u8,
                            body in proptest::collection::vec(any::<u8>(), 0..512)) {
            let kind = FrameKind::from_u8(kind_idx).unwrap();
            let frame = write_frame(kind, &body).unwrap();
            let (k, b) = read_frame(&mut Cursor::new(frame)).unwrap();
            prop_assert_eq!(k, kind);
            prop_assert_eq!(b, body);
        }

        #[test]
        fn envelope_round_trip_prop(ctx in any::<u64>(), src in any::<u32>(),
                                    dst in any::<u32>(), tag in any::<i32>(),
                                    payload in proptest::collection::vec(any::<u8>(), 0..128)) {
            let env = Envelope {
                context_id: ctx,
                src,
                dst,
                tag,
                payload: PayloadBytes::from_vec(payload),
            };
            prop_assert_eq!(Envelope::decode(&env.encode()).unwrap(), env);
        }
    }
}
