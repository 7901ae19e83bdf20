//! Rewrites raw traces into low-entropy canonical form.
//!
//! Raw MPI handles are arbitrary runtime values, so they are renumbered with
//! free-number pools. Point-to-point peers become offsets from the calling
//! rank so that SPMD neighbours produce identical events. Noisy compute
//! events are clustered, and the result is interned into a terminal table.

use std::collections::{BTreeSet, HashSet};

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::trace::{parse_event, ComputeEvent, Event, Func, Peer, Trace, METRIC_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum CanonError {
    #[error("event {index}: {kind} handle {handle} was never created")]
    DanglingHandle {
        index: usize,
        kind: &'static str,
        handle: u64,
    },
    #[error("event {index}: {kind} handle {handle} released twice")]
    DoubleFree {
        index: usize,
        kind: &'static str,
        handle: u64,
    },
    #[error("event {index}: {kind} handle {handle} created while still live")]
    DuplicateHandle {
        index: usize,
        kind: &'static str,
        handle: u64,
    },
    #[error("event {index}: the world communicator cannot be freed")]
    FreeWorld { index: usize },
    #[error("event {index}: peer rank {peer} outside world of size {world_size}")]
    InvalidRank {
        index: usize,
        peer: i64,
        world_size: u32,
    },
    #[error("pool number {0} is not allocated")]
    NotAllocated(u64),
    #[error("cluster threshold must be a finite non-negative number, got {0}")]
    BadThreshold(f64),
    #[error("invalid terminal key `{key}`: {msg}")]
    BadKey { key: String, msg: String },
}

/// Hands out the smallest free number, starting from zero.
#[derive(Debug, Clone, Default)]
pub struct HandlePool {
    free: BTreeSet<u64>,
    next_fresh: u64,
}

impl HandlePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn allocate(&mut self) -> u64 {
        if let Some(n) = self.free.pop_first() {
            return n;
        }
        let n = self.next_fresh;
        self.next_fresh += 1;
        n
    }

    pub fn release(&mut self, n: u64) -> Result<(), CanonError> {
        if n >= self.next_fresh || !self.free.insert(n) {
            return Err(CanonError::NotAllocated(n));
        }
        // Keep the free set small by shrinking the high-water mark.
        while self.next_fresh > 0 && self.free.remove(&(self.next_fresh - 1)) {
            self.next_fresh -= 1;
        }
        Ok(())
    }

    pub fn is_live(&self, n: u64) -> bool {
        n < self.next_fresh && !self.free.contains(&n)
    }
}

/// Raw handle value to pool number, with enough history to tell a dangling
/// reference from a double release.
struct HandleMap {
    kind: &'static str,
    pool: HandlePool,
    live: FxHashMap<u64, u64>,
    released: HashSet<u64>,
}

impl HandleMap {
    fn new(kind: &'static str) -> Self {
        HandleMap {
            kind,
            pool: HandlePool::new(),
            live: FxHashMap::default(),
            released: HashSet::new(),
        }
    }

    fn create(&mut self, raw: u64, index: usize) -> Result<u64, CanonError> {
        if self.live.contains_key(&raw) {
            return Err(CanonError::DuplicateHandle {
                index,
                kind: self.kind,
                handle: raw,
            });
        }
        let n = self.pool.allocate();
        self.live.insert(raw, n);
        self.released.remove(&raw);
        Ok(n)
    }

    fn lookup(&self, raw: u64, index: usize) -> Result<u64, CanonError> {
        self.live.get(&raw).copied().ok_or_else(|| self.missing(raw, index))
    }

    fn release(&mut self, raw: u64, index: usize) -> Result<u64, CanonError> {
        let n = self.live.remove(&raw).ok_or_else(|| self.missing(raw, index))?;
        self.pool.release(n)?;
        self.released.insert(raw);
        Ok(n)
    }

    fn missing(&self, raw: u64, index: usize) -> CanonError {
        if self.released.contains(&raw) {
            CanonError::DoubleFree {
                index,
                kind: self.kind,
                handle: raw,
            }
        } else {
            CanonError::DanglingHandle {
                index,
                kind: self.kind,
                handle: raw,
            }
        }
    }
}

/// Raw communicator value that denotes the world communicator.
pub const WORLD_COMM: u64 = 0;

/// Renumbers request and communicator handles through free-number pools.
///
/// The world communicator is raw value 0, maps to pool number 0 and is never
/// released. A `WAIT` releases its request; `COMM_FREE` releases its
/// communicator.
pub fn canonicalize_handles(trace: &Trace) -> Result<Trace, CanonError> {
    let mut reqs = HandleMap::new("request");
    let mut comms = HandleMap::new("communicator");
    comms.create(WORLD_COMM, 0)?;

    let mut out = Trace::new(trace.rank);
    out.events.reserve(trace.events.len());
    for (index, event) in trace.events.iter().enumerate() {
        let Event::Comm(ev) = event else {
            out.events.push(event.clone());
            continue;
        };
        let mut ev = ev.clone();
        match ev.func {
            Func::Wait => {
                let raw = ev.req.expect("validated");
                ev.req = Some(reqs.release(raw, index)?);
            }
            Func::CommFree => {
                let raw = ev.comm.expect("validated");
                if raw == WORLD_COMM {
                    return Err(CanonError::FreeWorld { index });
                }
                ev.comm = Some(comms.release(raw, index)?);
            }
            _ => {
                if let Some(raw) = ev.comm {
                    ev.comm = Some(comms.lookup(raw, index)?);
                }
                if let Some(raw) = ev.newcomm {
                    ev.newcomm = Some(comms.create(raw, index)?);
                }
                if let Some(raw) = ev.req {
                    ev.req = Some(reqs.create(raw, index)?);
                }
            }
        }
        out.events.push(Event::Comm(ev));
    }
    Ok(out)
}

fn check_rank(index: usize, rank: i64, world_size: u32) -> Result<u32, CanonError> {
    if rank < 0 || rank >= world_size as i64 {
        return Err(CanonError::InvalidRank {
            index,
            peer: rank,
            world_size,
        });
    }
    Ok(rank as u32)
}

/// Stores point-to-point peers as `target - my_rank`. Collective roots stay
/// absolute. No wraparound is applied.
pub fn encode_relative_ranks(
    trace: &Trace,
    my_rank: u32,
    world_size: u32,
) -> Result<Trace, CanonError> {
    check_rank(0, my_rank as i64, world_size)?;
    let me = my_rank as i64;
    let encode = |index: usize, peer: Peer, p2p: bool| -> Result<Peer, CanonError> {
        let target = match peer {
            Peer::Any => return Ok(Peer::Any),
            Peer::Absolute(a) => a as i64,
            Peer::Relative(k) => me + k,
        };
        check_rank(index, target, world_size)?;
        Ok(if p2p {
            Peer::Relative(target - me)
        } else {
            Peer::Absolute(target as u32)
        })
    };

    let mut out = trace.clone();
    for (index, event) in out.events.iter_mut().enumerate() {
        if let Event::Comm(ev) = event {
            let p2p = ev.func.is_point_to_point();
            if let Some(p) = ev.peer {
                ev.peer = Some(encode(index, p, p2p)?);
            }
            if let Some(p) = ev.src {
                ev.src = Some(encode(index, p, p2p)?);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`encode_relative_ranks`].
pub fn decode_relative_ranks(trace: &Trace, my_rank: u32) -> Trace {
    let decode = |p: Peer| match p {
        Peer::Relative(k) => Peer::Absolute((my_rank as i64 + k) as u32),
        other => other,
    };
    let mut out = trace.clone();
    for event in &mut out.events {
        if let Event::Comm(ev) = event {
            ev.peer = ev.peer.map(decode);
            ev.src = ev.src.map(decode);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    threshold: f64,
}

impl ClusterConfig {
    pub const DEFAULT_THRESHOLD: f64 = 0.05;

    pub fn new(threshold: f64) -> Result<Self, CanonError> {
        if !threshold.is_finite() || threshold < 0.0 {
            return Err(CanonError::BadThreshold(threshold));
        }
        Ok(ClusterConfig { threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            threshold: Self::DEFAULT_THRESHOLD,
        }
    }
}

/// `max_i |t_i - r_i| / max(r_i, 1)`.
pub fn relative_distance(t: &[u64; METRIC_COUNT], r: &[u64; METRIC_COUNT]) -> f64 {
    t.iter()
        .zip(r)
        .map(|(&a, &b)| a.abs_diff(b) as f64 / (b.max(1)) as f64)
        .fold(0.0, f64::max)
}

/// Single-pass greedy clustering. An event joins the first representative
/// within the threshold; otherwise it becomes a new representative.
///
/// Assignments depend only on the vector and the representatives that exist
/// when it is first seen, and the representative list only grows, so a
/// vector's assignment is memoized.
#[derive(Debug, Clone)]
pub struct ComputeClusterer {
    cfg: ClusterConfig,
    reps: Vec<ComputeEvent>,
    seen: FxHashMap<[u64; METRIC_COUNT], usize>,
    /// Used when the threshold is in (0, 1); otherwise reps are scanned.
    tree: Option<RepTree>,
}

/// Insert-only k-d tree over representatives. Node `i` is representative
/// `i`, and every node is older than its descendants.
#[derive(Debug, Clone, Default)]
struct RepTree {
    children: Vec<[Option<u32>; 2]>,
}

impl RepTree {
    fn insert(&mut self, reps: &[ComputeEvent], idx: usize) {
        let p = &reps[idx].metrics;
        self.children.push([None, None]);
        if idx == 0 {
            return;
        }
        let (mut node, mut depth) = (0usize, 0usize);
        loop {
            let dim = depth % METRIC_COUNT;
            let side = usize::from(p[dim] >= reps[node].metrics[dim]);
            match self.children[node][side] {
                Some(next) => {
                    node = next as usize;
                    depth += 1;
                }
                None => {
                    self.children[node][side] = Some(idx as u32);
                    return;
                }
            }
        }
    }

    /// Lowest index inside `[lo, hi]` that also passes `accept`.
    fn first_in_box(
        &self,
        reps: &[ComputeEvent],
        lo: &[u64; METRIC_COUNT],
        hi: &[u64; METRIC_COUNT],
        accept: impl Fn(usize) -> bool,
    ) -> Option<usize> {
        if self.children.is_empty() {
            return None;
        }
        let mut best: Option<usize> = None;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            if best.is_some_and(|b| b < node) {
                continue;
            }
            let m = &reps[node].metrics;
            if (0..METRIC_COUNT).all(|i| lo[i] <= m[i] && m[i] <= hi[i]) && accept(node) {
                best = Some(node);
                continue;
            }
            let dim = depth % METRIC_COUNT;
            let [left, right] = self.children[node];
            if let Some(l) = left.filter(|_| lo[dim] < m[dim]) {
                stack.push((l as usize, depth + 1));
            }
            if let Some(r) = right.filter(|_| hi[dim] >= m[dim]) {
                stack.push((r as usize, depth + 1));
            }
        }
        best
    }
}

impl ComputeClusterer {
    pub fn new(cfg: ClusterConfig) -> Self {
        let t = cfg.threshold;
        let tree = (t > 0.0 && t < 1.0).then(RepTree::default);
        ComputeClusterer {
            cfg,
            reps: Vec::new(),
            seen: FxHashMap::default(),
            tree,
        }
    }

    fn find(&self, m: &[u64; METRIC_COUNT]) -> Option<usize> {
        let t = self.cfg.threshold;
        let within = |idx: usize| relative_distance(m, &self.reps[idx].metrics) <= t;
        match &self.tree {
            None if t == 0.0 => None,
            None => (0..self.reps.len()).find(|&i| within(i)),
            Some(tree) => {
                // A nonzero count r matches v iff v/(1+t) <= r <= v/(1-t), and
                // zero only matches zero. The box is padded against rounding;
                // `within` has the final say.
                let lo = m.map(|v| if v == 0 { 0 } else { ((v as f64 / (1.0 + t)) * (1.0 - 1e-9)).floor().max(1.0) as u64 });
                let hi = m.map(|v| if v == 0 { 0 } else { ((v as f64 / (1.0 - t)) * (1.0 + 1e-9)).ceil() as u64 });
                tree.first_in_box(&self.reps, &lo, &hi, within)
            }
        }
    }

    pub fn assign(&mut self, event: &ComputeEvent) -> usize {
        if let Some(&idx) = self.seen.get(&event.metrics) {
            return idx;
        }
        let idx = match self.find(&event.metrics) {
            Some(idx) => idx,
            None => {
                self.reps.push(*event);
                let idx = self.reps.len() - 1;
                if let Some(tree) = &mut self.tree {
                    tree.insert(&self.reps, idx);
                }
                idx
            }
        };
        self.seen.insert(event.metrics, idx);
        idx
    }

    pub fn representative(&self, idx: usize) -> &ComputeEvent {
        &self.reps[idx]
    }

    pub fn representatives(&self) -> &[ComputeEvent] {
        &self.reps
    }

    /// Replaces every compute event of `trace` with its representative.
    pub fn apply(&mut self, trace: &mut Trace) {
        for event in &mut trace.events {
            if let Event::Compute(c) = event {
                let idx = self.assign(c);
                *c = self.reps[idx];
            }
        }
    }
}

pub fn cluster_compute_events(
    events: &[ComputeEvent],
    cfg: ClusterConfig,
) -> (Vec<ComputeEvent>, Vec<usize>) {
    let mut clusterer = ComputeClusterer::new(cfg);
    let assignment = events.iter().map(|e| clusterer.assign(e)).collect();
    (clusterer.reps, assignment)
}

/// Bijection between canonical event keys and dense terminal ids.
///
/// The key of an event is its serialized trace line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TerminalTable {
    keys: Vec<String>,
    events: Vec<Event>,
    index: FxHashMap<String, u32>,
}

impl TerminalTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a table from keys listed in id order.
    pub fn from_keys<I, S>(keys: I) -> Result<Self, CanonError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut table = TerminalTable::new();
        for key in keys {
            let key = key.as_ref();
            let event = parse_event(key, 0).map_err(|e| CanonError::BadKey {
                key: key.to_string(),
                msg: e.to_string(),
            })?;
            if event.to_string() != key {
                return Err(CanonError::BadKey {
                    key: key.to_string(),
                    msg: format!("not in canonical form (expected `{event}`)"),
                });
            }
            let expected = table.len() as u32;
            if table.intern(&event) != expected {
                return Err(CanonError::BadKey {
                    key: key.to_string(),
                    msg: "duplicate key".into(),
                });
            }
        }
        Ok(table)
    }

    pub fn intern(&mut self, event: &Event) -> u32 {
        let key = event.to_string();
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.index.insert(key.clone(), id);
        self.keys.push(key);
        self.events.push(event.clone());
        id
    }

    /// Adds every key of `other` not yet present, in `other`'s id order.
    pub fn absorb(&mut self, other: &TerminalTable) {
        for (key, event) in other.keys.iter().zip(&other.events) {
            if !self.index.contains_key(key) {
                self.index.insert(key.clone(), self.keys.len() as u32);
                self.keys.push(key.clone());
                self.events.push(event.clone());
            }
        }
    }

    pub fn id_of(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: u32) -> &str {
        &self.keys[id as usize]
    }

    pub fn event(&self, id: u32) -> &Event {
        &self.events[id as usize]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Maps a canonical trace to terminal ids, extending `table` as needed.
pub fn intern_events(trace: &Trace, table: &mut TerminalTable) -> Vec<u32> {
    trace.events.iter().map(|e| table.intern(e)).collect()
}

/// Handle renumbering followed by relative-rank encoding.
pub fn canonicalize(trace: &Trace, world_size: u32) -> Result<Trace, CanonError> {
    let handles = canonicalize_handles(trace)?;
    encode_relative_ranks(&handles, trace.rank, world_size)
}
