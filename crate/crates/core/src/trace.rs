//! Event data model and the line-based per-rank trace format.
//!
//! A trace file holds one event per line:
//!
//! ```text
//! # comment
//! COMPUTE <ins> <cyc> <lst> <l1dcm> <brcn> <msp>
//! SEND vol=1024 peer=+1 tag=0 comm=0
//! IRECV vol=64 peer=r3 tag=7 comm=0 req=140211
//! WAIT req=140211
//! BARRIER comm=0
//! BCAST vol=8 peer=r0 comm=0
//! ```
//!
//! Peers are either relative offsets (`+k`, `-k`), absolute ranks (`r<k>`)
//! or `-` for "any source". Fields may appear in any order on input; output
//! always uses the canonical order so that the serialized line doubles as the
//! terminal key.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use thiserror::Error;

/// Number of hardware metrics attached to a compute event.
pub const METRIC_COUNT: usize = 6;

/// Metric names in storage order.
pub const METRIC_NAMES: [&str; METRIC_COUNT] = ["INS", "CYC", "LST", "L1_DCM", "BR_CN", "MSP"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unsupported event `{verb}`")]
    UnsupportedEvent { line: usize, verb: String },
    #[error("line {line}: invalid metrics: {msg}")]
    InvalidMetrics { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

/// MPI functions the toolchain can record and replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Send,
    Recv,
    Isend,
    Irecv,
    Wait,
    Barrier,
    Allreduce,
    Bcast,
    Reduce,
    Alltoall,
    Sendrecv,
    CommSplit,
    CommDup,
    CommFree,
}

impl Func {
    pub const ALL: [Func; 14] = [
        Func::Send,
        Func::Recv,
        Func::Isend,
        Func::Irecv,
        Func::Wait,
        Func::Barrier,
        Func::Allreduce,
        Func::Bcast,
        Func::Reduce,
        Func::Alltoall,
        Func::Sendrecv,
        Func::CommSplit,
        Func::CommDup,
        Func::CommFree,
    ];

    pub fn verb(self) -> &'static str {
        match self {
            Func::Send => "SEND",
            Func::Recv => "RECV",
            Func::Isend => "ISEND",
            Func::Irecv => "IRECV",
            Func::Wait => "WAIT",
            Func::Barrier => "BARRIER",
            Func::Allreduce => "ALLREDUCE",
            Func::Bcast => "BCAST",
            Func::Reduce => "REDUCE",
            Func::Alltoall => "ALLTOALL",
            Func::Sendrecv => "SENDRECV",
            Func::CommSplit => "COMM_SPLIT",
            Func::CommDup => "COMM_DUP",
            Func::CommFree => "COMM_FREE",
        }
    }

    pub fn from_verb(verb: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.verb() == verb)
    }

    /// Point-to-point calls whose peer is stored as a relative offset.
    pub fn is_point_to_point(self) -> bool {
        matches!(
            self,
            Func::Send | Func::Recv | Func::Isend | Func::Irecv | Func::Sendrecv
        )
    }

    pub fn is_nonblocking(self) -> bool {
        matches!(self, Func::Isend | Func::Irecv)
    }

    /// Calls that block until their data transfer completes. These are the
    /// calls whose volume is shrunk when a scaling factor is applied.
    pub fn is_blocking_transfer(self) -> bool {
        matches!(
            self,
            Func::Send
                | Func::Recv
                | Func::Sendrecv
                | Func::Allreduce
                | Func::Bcast
                | Func::Reduce
                | Func::Alltoall
        )
    }

    pub fn is_collective(self) -> bool {
        matches!(
            self,
            Func::Barrier | Func::Allreduce | Func::Bcast | Func::Reduce | Func::Alltoall
        )
    }

    /// Rooted collectives keep their root as an absolute rank.
    pub fn is_rooted(self) -> bool {
        matches!(self, Func::Bcast | Func::Reduce)
    }

    fn schema(self) -> Schema {
        use Need::*;
        // vol, peer, src, tag, color, comm, newcomm, req
        let s = |vol, peer, src, tag, color, comm, newcomm, req| Schema {
            vol,
            peer,
            src,
            tag,
            color,
            comm,
            newcomm,
            req,
        };
        match self {
            Func::Send => s(Req, Req, No, Req, No, Req, No, No),
            Func::Recv => s(Req, Req, No, Req, No, Req, No, No),
            Func::Isend | Func::Irecv => s(Req, Req, No, Req, No, Req, No, Req),
            Func::Sendrecv => s(Req, Req, Req, Req, No, Req, No, No),
            Func::Wait => s(No, No, No, No, No, No, No, Req),
            Func::Barrier | Func::CommFree => s(No, No, No, No, No, Req, No, No),
            Func::Allreduce | Func::Alltoall => s(Req, No, No, No, No, Req, No, No),
            Func::Bcast | Func::Reduce => s(Req, Req, No, No, No, Req, No, No),
            Func::CommSplit => s(No, No, No, No, Req, Req, Req, No),
            Func::CommDup => s(No, No, No, No, No, Req, Req, No),
        }
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.verb())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Need {
    Req,
    No,
}

struct Schema {
    vol: Need,
    peer: Need,
    src: Need,
    tag: Need,
    color: Need,
    comm: Need,
    newcomm: Need,
    req: Need,
}

/// Communication partner of an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Peer {
    /// Offset from the calling rank (`+k` / `-k`).
    Relative(i64),
    /// Absolute rank (`r<k>`).
    Absolute(u32),
    /// No specific partner (`-`), e.g. a wildcard receive.
    Any,
}

impl fmt::Display for Peer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Peer::Relative(k) if *k >= 0 => write!(f, "+{k}"),
            Peer::Relative(k) => write!(f, "{k}"),
            Peer::Absolute(r) => write!(f, "r{r}"),
            Peer::Any => f.write_str("-"),
        }
    }
}

impl FromStr for Peer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "-" {
            return Ok(Peer::Any);
        }
        if let Some(abs) = s.strip_prefix('r') {
            return abs
                .parse::<u32>()
                .map(Peer::Absolute)
                .map_err(|_| format!("bad absolute peer `{s}`"));
        }
        if s.starts_with('+') || s.starts_with('-') {
            return s
                .parse::<i64>()
                .map(Peer::Relative)
                .map_err(|_| format!("bad relative peer `{s}`"));
        }
        Err(format!("peer `{s}` must be `+k`, `-k`, `r<k>` or `-`"))
    }
}

/// A recorded MPI call. Only the fields required by `func` are populated;
/// the rest stay `None`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CommEvent {
    pub func: Func,
    /// Bytes in the data buffer. Contents are never recorded.
    pub volume: Option<u64>,
    /// Destination for sends, source for receives, root for rooted collectives.
    pub peer: Option<Peer>,
    /// Receive source of a `SENDRECV`.
    pub src: Option<Peer>,
    /// Message tag; `Some(None)` is the wildcard tag `-`.
    pub tag: Option<Option<i64>>,
    /// Split color of a `COMM_SPLIT`.
    pub color: Option<i64>,
    pub comm: Option<u64>,
    /// Communicator created by `COMM_SPLIT` / `COMM_DUP`.
    pub newcomm: Option<u64>,
    pub req: Option<u64>,
}

impl CommEvent {
    fn empty(func: Func) -> Self {
        CommEvent {
            func,
            volume: None,
            peer: None,
            src: None,
            tag: None,
            color: None,
            comm: None,
            newcomm: None,
            req: None,
        }
    }

    fn p2p(func: Func, volume: u64, peer: Peer, tag: Option<i64>, comm: u64) -> Self {
        CommEvent {
            volume: Some(volume),
            peer: Some(peer),
            tag: Some(tag),
            comm: Some(comm),
            ..CommEvent::empty(func)
        }
    }

    pub fn send(volume: u64, peer: Peer, tag: i64, comm: u64) -> Self {
        Self::p2p(Func::Send, volume, peer, Some(tag), comm)
    }

    pub fn recv(volume: u64, peer: Peer, tag: Option<i64>, comm: u64) -> Self {
        Self::p2p(Func::Recv, volume, peer, tag, comm)
    }

    pub fn isend(volume: u64, peer: Peer, tag: i64, comm: u64, req: u64) -> Self {
        CommEvent {
            req: Some(req),
            ..Self::p2p(Func::Isend, volume, peer, Some(tag), comm)
        }
    }

    pub fn irecv(volume: u64, peer: Peer, tag: Option<i64>, comm: u64, req: u64) -> Self {
        CommEvent {
            req: Some(req),
            ..Self::p2p(Func::Irecv, volume, peer, tag, comm)
        }
    }

    pub fn sendrecv(volume: u64, dest: Peer, src: Peer, tag: i64, comm: u64) -> Self {
        CommEvent {
            src: Some(src),
            ..Self::p2p(Func::Sendrecv, volume, dest, Some(tag), comm)
        }
    }

    pub fn wait(req: u64) -> Self {
        CommEvent {
            req: Some(req),
            ..CommEvent::empty(Func::Wait)
        }
    }

    pub fn barrier(comm: u64) -> Self {
        CommEvent {
            comm: Some(comm),
            ..CommEvent::empty(Func::Barrier)
        }
    }

    pub fn allreduce(volume: u64, comm: u64) -> Self {
        CommEvent {
            volume: Some(volume),
            comm: Some(comm),
            ..CommEvent::empty(Func::Allreduce)
        }
    }

    pub fn alltoall(volume: u64, comm: u64) -> Self {
        CommEvent {
            volume: Some(volume),
            comm: Some(comm),
            ..CommEvent::empty(Func::Alltoall)
        }
    }

    pub fn bcast(volume: u64, root: u32, comm: u64) -> Self {
        CommEvent {
            volume: Some(volume),
            peer: Some(Peer::Absolute(root)),
            comm: Some(comm),
            ..CommEvent::empty(Func::Bcast)
        }
    }

    pub fn reduce(volume: u64, root: u32, comm: u64) -> Self {
        CommEvent {
            volume: Some(volume),
            peer: Some(Peer::Absolute(root)),
            comm: Some(comm),
            ..CommEvent::empty(Func::Reduce)
        }
    }

    pub fn comm_split(comm: u64, color: i64, newcomm: u64) -> Self {
        CommEvent {
            comm: Some(comm),
            color: Some(color),
            newcomm: Some(newcomm),
            ..CommEvent::empty(Func::CommSplit)
        }
    }

    pub fn comm_dup(comm: u64, newcomm: u64) -> Self {
        CommEvent {
            comm: Some(comm),
            newcomm: Some(newcomm),
            ..CommEvent::empty(Func::CommDup)
        }
    }

    pub fn comm_free(comm: u64) -> Self {
        CommEvent {
            comm: Some(comm),
            ..CommEvent::empty(Func::CommFree)
        }
    }

    /// Checks that exactly the fields required by `func` are present.
    pub fn validate(&self) -> Result<(), String> {
        let schema = self.func.schema();
        let check = |name: &str, need: Need, present: bool| -> Result<(), String> {
            match (need, present) {
                (Need::Req, false) => Err(format!("{} requires `{name}=`", self.func)),
                (Need::No, true) => Err(format!("{} does not take `{name}=`", self.func)),
                _ => Ok(()),
            }
        };
        check("vol", schema.vol, self.volume.is_some())?;
        check("peer", schema.peer, self.peer.is_some())?;
        check("src", schema.src, self.src.is_some())?;
        check("tag", schema.tag, self.tag.is_some())?;
        check("color", schema.color, self.color.is_some())?;
        check("comm", schema.comm, self.comm.is_some())?;
        check("newcomm", schema.newcomm, self.newcomm.is_some())?;
        check("req", schema.req, self.req.is_some())?;
        if let Some(peer) = self.peer {
            let wildcard_ok = matches!(self.func, Func::Recv | Func::Irecv);
            if peer == Peer::Any && !wildcard_ok {
                return Err(format!("{} needs a concrete peer", self.func));
            }
            if self.func.is_rooted() && !matches!(peer, Peer::Absolute(_)) {
                return Err(format!("{} root must be absolute (`r<k>`)", self.func));
            }
        }
        if self.tag == Some(None) && !matches!(self.func, Func::Recv | Func::Irecv) {
            return Err(format!("{} needs a concrete tag", self.func));
        }
        Ok(())
    }
}

impl fmt::Display for CommEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.func.verb())?;
        if let Some(v) = self.volume {
            write!(f, " vol={v}")?;
        }
        if let Some(p) = self.peer {
            write!(f, " peer={p}")?;
        }
        if let Some(p) = self.src {
            write!(f, " src={p}")?;
        }
        match self.tag {
            Some(Some(t)) => write!(f, " tag={t}")?,
            Some(None) => f.write_str(" tag=-")?,
            None => {}
        }
        if let Some(c) = self.color {
            write!(f, " color={c}")?;
        }
        if let Some(c) = self.comm {
            write!(f, " comm={c}")?;
        }
        if let Some(c) = self.newcomm {
            write!(f, " newcomm={c}")?;
        }
        if let Some(r) = self.req {
            write!(f, " req={r}")?;
        }
        Ok(())
    }
}

/// Hardware-counter summary of the computation between two MPI calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ComputeEvent {
    /// INS, CYC, LST, L1_DCM, BR_CN, MSP.
    pub metrics: [u64; METRIC_COUNT],
}

impl ComputeEvent {
    pub fn new(metrics: [u64; METRIC_COUNT]) -> Self {
        ComputeEvent { metrics }
    }

    pub fn ins(&self) -> u64 {
        self.metrics[0]
    }
    pub fn cyc(&self) -> u64 {
        self.metrics[1]
    }
    pub fn lst(&self) -> u64 {
        self.metrics[2]
    }
    pub fn l1_dcm(&self) -> u64 {
        self.metrics[3]
    }
    pub fn br_cn(&self) -> u64 {
        self.metrics[4]
    }
    pub fn msp(&self) -> u64 {
        self.metrics[5]
    }

    /// INS ≥ BR_CN ≥ MSP and LST ≥ L1_DCM.
    pub fn validate(&self) -> Result<(), String> {
        if self.ins() < self.br_cn() {
            return Err(format!("INS {} < BR_CN {}", self.ins(), self.br_cn()));
        }
        if self.br_cn() < self.msp() {
            return Err(format!("BR_CN {} < MSP {}", self.br_cn(), self.msp()));
        }
        if self.lst() < self.l1_dcm() {
            return Err(format!("LST {} < L1_DCM {}", self.lst(), self.l1_dcm()));
        }
        Ok(())
    }

    pub fn accumulate(&mut self, other: &ComputeEvent) {
        for (a, b) in self.metrics.iter_mut().zip(other.metrics) {
            *a += b;
        }
    }
}

impl fmt::Display for ComputeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.metrics;
        write!(
            f,
            "COMPUTE {} {} {} {} {} {}",
            m[0], m[1], m[2], m[3], m[4], m[5]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Event {
    Comm(CommEvent),
    Compute(ComputeEvent),
}

impl Event {
    pub fn as_compute(&self) -> Option<&ComputeEvent> {
        match self {
            Event::Compute(c) => Some(c),
            Event::Comm(_) => None,
        }
    }

    pub fn as_comm(&self) -> Option<&CommEvent> {
        match self {
            Event::Comm(c) => Some(c),
            Event::Compute(_) => None,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Comm(c) => c.fmt(f),
            Event::Compute(c) => c.fmt(f),
        }
    }
}

impl From<CommEvent> for Event {
    fn from(c: CommEvent) -> Self {
        Event::Comm(c)
    }
}

impl From<ComputeEvent> for Event {
    fn from(c: ComputeEvent) -> Self {
        Event::Compute(c)
    }
}

/// Ordered event stream of one rank.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub rank: u32,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new(rank: u32) -> Self {
        Trace {
            rank,
            events: Vec::new(),
        }
    }

    /// Appends an event, folding a compute event into a directly preceding
    /// one. Returns `true` when a fold happened.
    pub fn push(&mut self, event: Event) -> bool {
        if let (Event::Compute(next), Some(Event::Compute(last))) = (&event, self.events.last_mut())
        {
            last.accumulate(next);
            return true;
        }
        self.events.push(event);
        false
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// True when no two compute events are adjacent.
    pub fn is_alternating(&self) -> bool {
        self.events
            .windows(2)
            .all(|w| !(matches!(w[0], Event::Compute(_)) && matches!(w[1], Event::Compute(_))))
    }
}

/// Parses one non-comment, non-empty line.
pub fn parse_event(line: &str, line_no: usize) -> Result<Event, TraceError> {
    let perr = |msg: String| TraceError::Parse { line: line_no, msg };
    let mut tokens = line.split_whitespace();
    let verb = tokens.next().ok_or_else(|| perr("empty line".into()))?;

    if verb == "COMPUTE" {
        let mut metrics = [0u64; METRIC_COUNT];
        for (i, slot) in metrics.iter_mut().enumerate() {
            let tok = tokens
                .next()
                .ok_or_else(|| perr(format!("COMPUTE needs 6 counts, got {i}")))?;
            *slot = tok
                .parse()
                .map_err(|_| perr(format!("bad {} count `{tok}`", METRIC_NAMES[i])))?;
        }
        if tokens.next().is_some() {
            return Err(perr("COMPUTE takes exactly 6 counts".into()));
        }
        let ev = ComputeEvent::new(metrics);
        ev.validate().map_err(|msg| TraceError::InvalidMetrics { line: line_no, msg })?;
        return Ok(Event::Compute(ev));
    }

    let func = Func::from_verb(verb).ok_or_else(|| TraceError::UnsupportedEvent {
        line: line_no,
        verb: verb.to_string(),
    })?;
    let mut ev = CommEvent::empty(func);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| perr(format!("expected key=value, got `{tok}`")))?;
        let int = |v: &str| v.parse::<u64>().map_err(|_| perr(format!("bad {key} `{v}`")));
        let signed = |v: &str| v.parse::<i64>().map_err(|_| perr(format!("bad {key} `{v}`")));
        let dup = |present: bool| {
            if present {
                Err(perr(format!("duplicate field `{key}`")))
            } else {
                Ok(())
            }
        };
        match key {
            "vol" => {
                dup(ev.volume.is_some())?;
                ev.volume = Some(int(value)?);
            }
            "peer" => {
                dup(ev.peer.is_some())?;
                ev.peer = Some(value.parse().map_err(perr)?);
            }
            "src" => {
                dup(ev.src.is_some())?;
                ev.src = Some(value.parse().map_err(perr)?);
            }
            "tag" => {
                dup(ev.tag.is_some())?;
                ev.tag = Some(if value == "-" { None } else { Some(signed(value)?) });
            }
            "color" => {
                dup(ev.color.is_some())?;
                ev.color = Some(signed(value)?);
            }
            "comm" => {
                dup(ev.comm.is_some())?;
                ev.comm = Some(int(value)?);
            }
            "newcomm" => {
                dup(ev.newcomm.is_some())?;
                ev.newcomm = Some(int(value)?);
            }
            "req" => {
                dup(ev.req.is_some())?;
                ev.req = Some(int(value)?);
            }
            _ => return Err(perr(format!("unknown field `{key}`"))),
        }
    }
    ev.validate().map_err(perr)?;
    Ok(Event::Comm(ev))
}

/// Reads a trace from a line-oriented reader.
///
/// Adjacent compute events cannot be produced by a well-behaved tracer; if
/// they appear anyway they are merged by summing their metrics and a warning
/// is logged.
pub fn read_trace<R: BufRead>(rank: u32, reader: R) -> Result<Trace, TraceError> {
    let mut trace = Trace::new(rank);
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TraceError::Io(e.to_string()))?;
        let line_no = idx + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let event = parse_event(text, line_no)?;
        if trace.push(event) {
            log::warn!("rank {rank} line {line_no}: adjacent COMPUTE events merged");
        }
    }
    Ok(trace)
}

pub fn parse_trace(rank: u32, input: &str) -> Result<Trace, TraceError> {
    read_trace(rank, input.as_bytes())
}

pub fn serialize_trace(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.events.len() * 32);
    for ev in &trace.events {
        use std::fmt::Write;
        let _ = writeln!(out, "{ev}");
    }
    out
}

/// Size in bytes of the serialized trace without materializing it.
pub fn serialized_len(trace: &Trace) -> u64 {
    trace
        .events
        .iter()
        .map(|e| e.to_string().len() as u64 + 1)
        .sum()
}

/// File name of rank `rank`'s trace.
pub fn trace_file_name(rank: u32) -> String {
    format!("trace.{rank}.txt")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compute_line_maps_fields() {
        let t = parse_trace(0, "COMPUTE 100 200 30 4 10 1\n").unwrap();
        assert_eq!(
            t.events,
            vec![Event::Compute(ComputeEvent::new([100, 200, 30, 4, 10, 1]))]
        );
    }

    #[test]
    fn send_line_maps_fields() {
        let t = parse_trace(0, "SEND vol=1024 peer=+1 tag=0 comm=0").unwrap();
        let ev = t.events[0].as_comm().unwrap();
        assert_eq!(ev.func, Func::Send);
        assert_eq!(ev.volume, Some(1024));
        assert_eq!(ev.peer, Some(Peer::Relative(1)));
        assert_eq!(ev.tag, Some(Some(0)));
        assert_eq!(ev.comm, Some(0));
        assert_eq!(ev.req, None);
    }

    #[test]
    fn field_order_is_free_on_input() {
        let a = parse_event("ISEND req=9 comm=0 tag=3 peer=r2 vol=8", 1).unwrap();
        let b = parse_event("ISEND vol=8 peer=r2 tag=3 comm=0 req=9", 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "ISEND vol=8 peer=r2 tag=3 comm=0 req=9");
    }

    #[test]
    fn empty_input_is_empty_trace() {
        assert!(parse_trace(3, "").unwrap().is_empty());
        assert!(parse_trace(3, "# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn unknown_verb_is_rejected() {
        let err = parse_trace(0, "BARRIER comm=0\nFILE_OPEN comm=0\n").unwrap_err();
        assert_eq!(
            err,
            TraceError::UnsupportedEvent {
                line: 2,
                verb: "FILE_OPEN".into()
            }
        );
    }

    #[test]
    fn malformed_lines_report_line_number() {
        for (text, line) in [
            ("SEND vol=1 peer=+1 tag=0\n", 1),
            ("BARRIER comm=0\nSEND vol=x peer=+1 tag=0 comm=0\n", 2),
            ("COMPUTE 1 2 3\n", 1),
            ("BARRIER comm=0 comm=1\n", 1),
            ("BARRIER comm=0 vol=3\n", 1),
            ("SEND vol=1 peer=7 tag=0 comm=0\n", 1),
            ("SEND vol=1 peer=- tag=0 comm=0\n", 1),
            ("BCAST vol=1 peer=+0 comm=0\n", 1),
        ] {
            match parse_trace(0, text) {
                Err(TraceError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn metric_ordering_is_enforced() {
        let err = parse_trace(0, "COMPUTE 5 10 3 1 6 1").unwrap_err();
        assert!(matches!(err, TraceError::InvalidMetrics { line: 1, .. }));
        let err = parse_trace(0, "COMPUTE 50 10 3 4 6 1").unwrap_err();
        assert!(matches!(err, TraceError::InvalidMetrics { .. }));
    }

    #[test]
    fn adjacent_computes_are_summed() {
        let t = parse_trace(0, "COMPUTE 10 20 3 1 2 1\nCOMPUTE 1 2 3 1 1 0\nBARRIER comm=0\n")
            .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(
            t.events[0],
            Event::Compute(ComputeEvent::new([11, 22, 6, 2, 3, 1]))
        );
        assert!(t.is_alternating());
    }

    #[test]
    fn alternating_trace_serializes_line_per_event() {
        let mut t = Trace::new(0);
        for _ in 0..1000 {
            t.push(CommEvent::send(8, Peer::Relative(1), 0, 0).into());
            t.push(ComputeEvent::new([9, 9, 2, 1, 1, 0]).into());
        }
        let text = serialize_trace(&t);
        assert_eq!(text.lines().count(), 2000);
        assert_eq!(serialized_len(&t), text.len() as u64);
        assert_eq!(parse_trace(0, &text).unwrap(), t);
    }

    #[test]
    fn wildcard_receive_round_trips() {
        let ev: Event = CommEvent::recv(4, Peer::Any, None, 0).into();
        assert_eq!(ev.to_string(), "RECV vol=4 peer=- tag=- comm=0");
        assert_eq!(parse_event(&ev.to_string(), 1).unwrap(), ev);
    }
}
