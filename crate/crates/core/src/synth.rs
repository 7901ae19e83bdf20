//! Synthetic SPMD trace generator.
//!
//! Every rank runs the same skeleton: `outer_iterations` passes over the
//! phases, each phase repeating compute followed by one communication
//! pattern. Peers depend on the rank, compute metrics are a base vector
//! scaled by independent uniform jitter per metric.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), seeded with
//! `seed_from_u64(seed)` and switched to stream `rank`, so every rank's trace
//! can be produced on its own and is reproducible across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{CommEvent, ComputeEvent, Event, Peer, Trace, METRIC_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("world size must be at least 1")]
    EmptyWorld,
    #[error("phase {phase}: jitter must lie in [0, 1), got {jitter}")]
    BadJitter { phase: usize, jitter: f64 },
    #[error("phase {phase}: base metrics violate INS >= BR_CN >= MSP or LST >= L1_DCM")]
    BadBase { phase: usize },
    #[error("perturbed rank {0} is outside the world")]
    BadPerturbation(u32),
    #[error("invalid spec: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// Blocking exchange around a periodic ring: even ranks send first.
    Ring,
    /// Non-blocking exchange with both neighbors on an open line.
    #[serde(rename = "halo-1d")]
    Halo1d,
    Allreduce,
    /// Non-blocking exchange on an open 2-D grid followed by a small
    /// allreduce.
    Stencil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub iterations: u64,
    pub pattern: Pattern,
    /// Message size in bytes.
    pub volume: u64,
    /// INS, CYC, LST, L1_DCM, BR_CN, MSP before jitter.
    pub compute: [u64; METRIC_COUNT],
    #[serde(default)]
    pub jitter: f64,
}

/// Extra self-messages appended to one rank's trace, which makes its main
/// rule differ from the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub rank: u32,
    pub extra_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub world_size: u32,
    pub seed: u64,
    #[serde(default = "one")]
    pub outer_iterations: u64,
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
}

fn one() -> u64 {
    1
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.world_size == 0 {
            return Err(SynthError::EmptyWorld);
        }
        for (i, p) in self.phases.iter().enumerate() {
            if !(0.0..1.0).contains(&p.jitter) {
                return Err(SynthError::BadJitter {
                    phase: i,
                    jitter: p.jitter,
                });
            }
            if ComputeEvent::new(p.compute).validate().is_err() {
                return Err(SynthError::BadBase { phase: i });
            }
        }
        if let Some(pert) = &self.perturbation {
            if pert.rank >= self.world_size {
                return Err(SynthError::BadPerturbation(pert.rank));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = serde_json::from_str(text).map_err(|e| SynthError::Json(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Grid shape for the stencil pattern: the most square factorization.
fn grid_shape(p: u32) -> (u32, u32) {
    let mut px = (p as f64).sqrt() as u32;
    while px > 1 && p % px != 0 {
        px -= 1;
    }
    let px = px.max(1);
    (px, p / px)
}

struct RankGen {
    rank: u32,
    world: u32,
    rng: ChaCha8Rng,
    next_req: u64,
    trace: Trace,
}

impl RankGen {
    fn push(&mut self, ev: impl Into<Event>) {
        self.trace.push(ev.into());
    }

    /// Opaque, increasing request tokens like the addresses a tracer sees.
    fn fresh_req(&mut self) -> u64 {
        self.next_req += 16;
        self.next_req
    }

    fn compute(&mut self, base: &[u64; METRIC_COUNT], jitter: f64) {
        let mut m = [0u64; METRIC_COUNT];
        for (slot, &b) in m.iter_mut().zip(base) {
            let f = if jitter > 0.0 {
                1.0 + self.rng.random_range(-jitter..jitter)
            } else {
                1.0
            };
            *slot = (b as f64 * f).round() as u64;
        }
        // Jitter can break the counter ordering; restore it.
        m[4] = m[4].min(m[0]);
        m[5] = m[5].min(m[4]);
        m[3] = m[3].min(m[2]);
        self.push(ComputeEvent::new(m));
    }

    fn nonblocking_exchange(&mut self, neighbors: &[u32], volume: u64) {
        let mut reqs = Vec::with_capacity(2 * neighbors.len());
        for &n in neighbors {
            let req = self.fresh_req();
            self.push(CommEvent::irecv(volume, Peer::Absolute(n), Some(0), 0, req));
            reqs.push(req);
        }
        for &n in neighbors {
            let req = self.fresh_req();
            self.push(CommEvent::isend(volume, Peer::Absolute(n), 0, 0, req));
            reqs.push(req);
        }
        for req in reqs {
            self.push(CommEvent::wait(req));
        }
    }

    fn pattern(&mut self, pattern: Pattern, volume: u64) {
        let (r, p) = (self.rank, self.world);
        match pattern {
            Pattern::Ring => {
                if p == 1 {
                    return;
                }
                let next = Peer::Absolute((r + 1) % p);
                let prev = Peer::Absolute((r + p - 1) % p);
                let send = CommEvent::send(volume, next, 0, 0);
                let recv = CommEvent::recv(volume, prev, Some(0), 0);
                if r % 2 == 0 {
                    self.push(send);
                    self.push(recv);
                } else {
                    self.push(recv);
                    self.push(send);
                }
            }
            Pattern::Halo1d => {
                let mut n = Vec::new();
                if r > 0 {
                    n.push(r - 1);
                }
                if r + 1 < p {
                    n.push(r + 1);
                }
                self.nonblocking_exchange(&n, volume);
            }
            Pattern::Allreduce => self.push(CommEvent::allreduce(volume, 0)),
            Pattern::Stencil => {
                let (px, py) = grid_shape(p);
                let (x, y) = (r % px, r / px);
                let mut n = Vec::new();
                if x > 0 {
                    n.push(r - 1);
                }
                if x + 1 < px {
                    n.push(r + 1);
                }
                if y > 0 {
                    n.push(r - px);
                }
                if y + 1 < py {
                    n.push(r + px);
                }
                self.nonblocking_exchange(&n, volume);
                self.push(CommEvent::allreduce(8, 0));
            }
        }
    }
}

/// The raw (uncanonicalized) trace of one rank.
pub fn generate_rank(spec: &SynthSpec, rank: u32) -> Result<Trace, SynthError> {
    spec.validate()?;
    if rank >= spec.world_size {
        return Err(SynthError::BadPerturbation(rank));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(rank as u64);
    let mut g = RankGen {
        rank,
        world: spec.world_size,
        rng,
        next_req: 0x7f00_0000 + rank as u64 * 0x1_0000,
        trace: Trace::new(rank),
    };
    for _ in 0..spec.outer_iterations {
        for phase in &spec.phases {
            for _ in 0..phase.iterations {
                g.compute(&phase.compute, phase.jitter);
                g.pattern(phase.pattern, phase.volume);
            }
        }
    }
    if let Some(pert) = &spec.perturbation {
        if pert.rank == rank {
            for k in 0..pert.extra_events {
                let me = Peer::Absolute(rank);
                g.push(CommEvent::sendrecv(64 + k % 3, me, me, 99, 0));
            }
        }
    }
    Ok(g.trace)
}

/// Raw traces of all ranks.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Trace>, SynthError> {
    (0..spec.world_size).map(|r| generate_rank(spec, r)).collect()
}
