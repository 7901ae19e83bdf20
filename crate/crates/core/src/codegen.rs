//! C source generation for a merged program.
//!
//! Every terminal becomes a `static void t<id>(void)` function, every rule a
//! `static void r<id>(void)` function, and the merged main rule becomes the
//! body of `main` with rank guards. Functions are emitted callees first, so
//! the file needs no prototypes.
//!
//! Each terminal function starts with `PROXY_LOG("<terminal key>")`, which
//! expands to nothing unless the including build defines it. The logging
//! shim in `shim/mpi.h` defines it to print the key, which lets tests replay
//! a program without an MPI installation.

use std::fmt::Write;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{rule_depths, GrammarError, Rule, Symbol, SymbolId};
use crate::merge::MergedProgram;
use crate::ranklist::RankList;
use crate::solver::{ProxyCombination, OVERHEAD_BLOCK};
use crate::trace::{CommEvent, Event, Func, Peer};

#[derive(Debug, Error, PartialEq)]
pub enum CodegenError {
    #[error("scaling factor must be a finite number >= 1, got {0}")]
    BadScale(f64),
    #[error("cannot fit a communication model: {0}")]
    DegenerateFit(String),
    #[error("invalid communication model: {0}")]
    BadModel(String),
    #[error("t{terminal}: peer {peer} is outside the world for rank {rank}")]
    PeerOutOfRange { terminal: u32, rank: u32, peer: i64 },
    #[error("t{0}: compute terminal has no solved combination")]
    MissingCombination(u32),
    #[error("t{terminal}: {msg}")]
    Unsupported { terminal: u32, msg: String },
    #[error("main rule symbol {0} has an empty rank list")]
    EmptyRankList(usize),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

/// Blocking-call time as a linear function of message volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommTimeModel {
    pub intercept: f64,
    pub slope: f64,
}

impl CommTimeModel {
    /// 1 us latency, 1 GB/s.
    pub const DEFAULT: CommTimeModel = CommTimeModel {
        intercept: 1e-6,
        slope: 1e-9,
    };

    pub fn validate(&self) -> Result<(), CodegenError> {
        if !self.intercept.is_finite() || !self.slope.is_finite() {
            return Err(CodegenError::BadModel("non-finite coefficient".into()));
        }
        if self.slope < 0.0 {
            return Err(CodegenError::BadModel(format!("negative slope {}", self.slope)));
        }
        Ok(())
    }

    pub fn time(&self, volume: f64) -> f64 {
        self.intercept + self.slope * volume
    }

    /// Volume whose predicted time is the original time divided by `scale`,
    /// clamped at zero. A flat model cannot be shrunk through the volume and
    /// yields zero.
    pub fn scaled_volume(&self, volume: u64, scale: f64) -> f64 {
        if scale == 1.0 {
            return volume as f64;
        }
        if self.slope == 0.0 {
            return 0.0;
        }
        let v = (self.time(volume as f64) / scale - self.intercept) / self.slope;
        v.max(0.0)
    }
}

/// Ordinary least squares of `seconds` on `volume`, slope clamped at zero.
pub fn fit_comm_model(samples: &[(f64, f64)]) -> Result<CommTimeModel, CodegenError> {
    if samples.iter().any(|(v, t)| !v.is_finite() || !t.is_finite()) {
        return Err(CodegenError::DegenerateFit("non-finite sample".into()));
    }
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return Err(CodegenError::DegenerateFit("need at least two samples".into()));
    }
    let mean_v = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_t = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mean_v).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CodegenError::DegenerateFit("all volumes are equal".into()));
    }
    let sxy: f64 = samples.iter().map(|s| (s.0 - mean_v) * (s.1 - mean_t)).sum();
    let slope = (sxy / sxx).max(0.0);
    Ok(CommTimeModel {
        intercept: mean_t - slope * mean_v,
        slope,
    })
}

/// Models per call family. Point-to-point calls share one model so that a
/// send and its matching receive shrink to the same count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommModels {
    #[serde(default = "default_model")]
    pub default: CommTimeModel,
    #[serde(default)]
    pub point_to_point: Option<CommTimeModel>,
    #[serde(default)]
    pub collective: Option<CommTimeModel>,
}

fn default_model() -> CommTimeModel {
    CommTimeModel::DEFAULT
}

impl Default for CommModels {
    fn default() -> Self {
        CommModels::uniform(CommTimeModel::DEFAULT)
    }
}

/// Timing samples per family, `[volume, seconds]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleFile {
    #[serde(default)]
    default: Vec<(f64, f64)>,
    #[serde(default)]
    point_to_point: Vec<(f64, f64)>,
    #[serde(default)]
    collective: Vec<(f64, f64)>,
}

impl CommModels {
    pub fn uniform(model: CommTimeModel) -> Self {
        CommModels {
            default: model,
            point_to_point: None,
            collective: None,
        }
    }

    pub fn for_func(&self, func: Func) -> &CommTimeModel {
        let family = if func.is_collective() {
            &self.collective
        } else {
            &self.point_to_point
        };
        family.as_ref().unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<(), CodegenError> {
        self.default.validate()?;
        for m in self.point_to_point.iter().chain(&self.collective) {
            m.validate()?;
        }
        Ok(())
    }

    /// Reads either fitted models or raw samples.
    ///
    /// ```json
    /// {"default": {"intercept": 1e-6, "slope": 1e-9},
    ///  "collective": {"intercept": 4e-6, "slope": 2e-9}}
    /// {"samples": {"point_to_point": [[8, 1.1e-6], [65536, 6.7e-5]]}}
    /// ```
    ///
    /// A family fitted from samples replaces the corresponding model.
    pub fn from_json(text: &str) -> Result<Self, CodegenError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            default: Option<CommTimeModel>,
            point_to_point: Option<CommTimeModel>,
            collective: Option<CommTimeModel>,
            samples: Option<SampleFile>,
        }
        let file: File =
            serde_json::from_str(text).map_err(|e| CodegenError::BadModel(e.to_string()))?;
        let mut models = CommModels {
            default: file.default.unwrap_or(CommTimeModel::DEFAULT),
            point_to_point: file.point_to_point,
            collective: file.collective,
        };
        if let Some(s) = file.samples {
            if !s.default.is_empty() {
                models.default = fit_comm_model(&s.default)?;
            }
            if !s.point_to_point.is_empty() {
                models.point_to_point = Some(fit_comm_model(&s.point_to_point)?);
            }
            if !s.collective.is_empty() {
                models.collective = Some(fit_comm_model(&s.collective)?);
            }
        }
        models.validate()?;
        Ok(models)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodegenConfig {
    pub scale: f64,
}

pub const DEFAULT_SCALE: f64 = 10.0;

impl Default for CodegenConfig {
    fn default() -> Self {
        CodegenConfig {
            scale: DEFAULT_SCALE,
        }
    }
}

impl CodegenConfig {
    pub fn new(scale: f64) -> Result<Self, CodegenError> {
        if !scale.is_finite() || scale < 1.0 {
            return Err(CodegenError::BadScale(scale));
        }
        Ok(CodegenConfig { scale })
    }
}

/// What the generator did with one communication terminal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommReport {
    pub terminal: u32,
    pub key: String,
    pub volume: Option<u64>,
    /// Volume after model inversion, before rounding.
    pub scaled_volume: Option<f64>,
    /// Count written into the C call.
    pub emitted_volume: Option<u64>,
    pub model: Option<CommTimeModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputeReport {
    pub terminal: u32,
    pub key: String,
    pub target: [f64; 6],
    pub counts: [u64; 11],
    pub relative_errors: [f64; 6],
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodegenReport {
    pub scale: f64,
    pub world_size: u32,
    pub terminals: usize,
    pub rules: usize,
    pub functions: usize,
    pub guards: usize,
    pub comm: Vec<CommReport>,
    pub compute: Vec<ComputeReport>,
}

impl CodegenReport {
    pub fn max_relative_error(&self) -> f64 {
        self.compute
            .iter()
            .map(|c| c.max_relative_error)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedProgram {
    pub source: String,
    pub report: CodegenReport,
}

const PRELUDE: &str = r#"#include <mpi.h>
#include <stdio.h>
#include <stdlib.h>

#ifndef PROXY_LOG
#define PROXY_LOG(key) ((void)0)
#endif

#define PROXY_MEM_WORDS (1u << 20)

static int proxy_rank;
static int proxy_size;
static char *sbuf;
static char *rbuf;
static unsigned long long proxy_mem[PROXY_MEM_WORDS];
static volatile unsigned long long proxy_sink;

/* One macro per code block; the argument is the repetition count. Results
   land in a volatile sink so the compiler keeps the work. */
#define BLOCK1(n) do { unsigned long long i_, a_ = proxy_sink; \
    for (i_ = 0; i_ < (n); i_++) { a_ += i_ ^ (a_ >> 3); } proxy_sink = a_; } while (0)
#define BLOCK2(n) do { unsigned long long i_, a_ = proxy_sink | 1u; \
    for (i_ = 0; i_ < (n); i_++) { a_ = (a_ << 1) ^ (a_ >> 7) ^ i_; } proxy_sink = a_; } while (0)
#define BLOCK3(n) do { unsigned long long i_, a_ = 0; \
    for (i_ = 0; i_ < (n); i_++) { a_ += proxy_mem[i_ & 1023u] + proxy_mem[(i_ + 512u) & 1023u]; } \
    proxy_sink = a_; } while (0)
#define BLOCK4(n) do { unsigned long long i_; \
    for (i_ = 0; i_ < (n); i_++) { proxy_mem[i_ & 1023u] = i_; proxy_mem[(i_ + 512u) & 1023u] = i_ + 1u; } \
    proxy_sink = proxy_mem[0]; } while (0)
#define BLOCK5(n) do { unsigned long long i_, a_ = 0; \
    for (i_ = 0; i_ < (n); i_++) { a_ += proxy_mem[(i_ * 4099u) & (PROXY_MEM_WORDS - 1u)]; } \
    proxy_sink = a_; } while (0)
#define BLOCK6(n) do { unsigned long long i_, a_ = 0; \
    for (i_ = 0; i_ < (n); i_++) { if (i_ & 1u) a_ += 3u; else a_ ^= 5u; } proxy_sink = a_; } while (0)
#define BLOCK7(n) do { unsigned long long i_, a_ = 0, s_ = proxy_sink | 1u; \
    for (i_ = 0; i_ < (n); i_++) { s_ = s_ * 6364136223846793005ULL + 1442695040888963407ULL; \
        if (s_ >> 63) a_ += 3u; else a_ ^= 5u; } proxy_sink = a_; } while (0)
#define BLOCK8(n) do { unsigned long long i_, a_ = 0; \
    for (i_ = 0; i_ < (n); i_++) { unsigned long long v_ = proxy_mem[(i_ * 7u) & 4095u]; \
        if (v_ & 1u) a_ += v_; else a_ ^= i_; } proxy_sink = a_; } while (0)
#define BLOCK9(n) do { unsigned long long i_, a_ = proxy_sink | 1u; \
    for (i_ = 0; i_ < (n); i_++) { a_ = a_ * 2862933555777941757ULL + 3037000493ULL; } proxy_sink = a_; } while (0)
#define BLOCK10(n) do { volatile unsigned long long i_; for (i_ = 0; i_ < (n); i_++) { } } while (0)
#define BLOCK11(n) do { volatile unsigned long long i_; for (i_ = 0; i_ < (n); i_++) { } } while (0)
"#;

/// Escapes a terminal key for a C string literal. Keys are plain ASCII
/// without quotes, so this is defensive.
fn c_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if c.is_ascii_graphic() || c == ' ' => out.push(c),
            c => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
        }
    }
    out.push('"');
    out
}

fn peer_expr(p: Peer) -> String {
    match p {
        Peer::Any => "MPI_ANY_SOURCE".into(),
        Peer::Absolute(r) => r.to_string(),
        Peer::Relative(0) => "proxy_rank".into(),
        Peer::Relative(k) if k > 0 => format!("proxy_rank + {k}"),
        Peer::Relative(k) => format!("proxy_rank - {}", -k),
    }
}

fn tag_expr(tag: Option<Option<i64>>) -> String {
    match tag.flatten() {
        Some(t) => t.to_string(),
        None => "MPI_ANY_TAG".into(),
    }
}

/// Emits one communication terminal; returns its report entry.
fn emit_comm(
    out: &mut String,
    id: u32,
    key: &str,
    ev: &CommEvent,
    cfg: &CodegenConfig,
    models: &CommModels,
) -> Result<CommReport, CodegenError> {
    let mut report = CommReport {
        terminal: id,
        key: key.to_string(),
        volume: ev.volume,
        scaled_volume: None,
        emitted_volume: None,
        model: None,
    };
    let count = match ev.volume {
        Some(v) if ev.func.is_blocking_transfer() => {
            let model = *models.for_func(ev.func);
            let scaled = model.scaled_volume(v, cfg.scale);
            let emitted = scaled.round() as u64;
            report.scaled_volume = Some(scaled);
            report.emitted_volume = Some(emitted);
            report.model = Some(model);
            emitted
        }
        Some(v) => {
            report.scaled_volume = Some(v as f64);
            report.emitted_volume = Some(v);
            v
        }
        None => 0,
    };
    let comm = |c: Option<u64>| format!("comms[{}]", c.unwrap_or(0));
    let missing = |what: &str| CodegenError::Unsupported {
        terminal: id,
        msg: format!("{} without {what}", ev.func.verb()),
    };
    let peer = ev.peer.ok_or_else(|| missing("peer"));
    let req = ev.req.ok_or_else(|| missing("req"));
    let call = match ev.func {
        Func::Send => format!(
            "MPI_Send(sbuf, {count}, MPI_BYTE, {}, {}, {});",
            peer_expr(peer?),
            tag_expr(ev.tag),
            comm(ev.comm)
        ),
        Func::Recv => format!(
            "MPI_Recv(rbuf, {count}, MPI_BYTE, {}, {}, {}, MPI_STATUS_IGNORE);",
            peer_expr(peer?),
            tag_expr(ev.tag),
            comm(ev.comm)
        ),
        Func::Isend => format!(
            "MPI_Isend(sbuf, {count}, MPI_BYTE, {}, {}, {}, &reqs[{}]);",
            peer_expr(peer?),
            tag_expr(ev.tag),
            comm(ev.comm),
            req?
        ),
        // Pending receives must not share memory, so each request slot gets
        // its own region past the one used by blocking calls.
        Func::Irecv => {
            let req = req?;
            format!(
                "MPI_Irecv(rbuf + (PROXY_WORLD + {req}) * PROXY_SLOT_BYTES, {count}, MPI_BYTE, {}, {}, {}, &reqs[{req}]);",
                peer_expr(peer?),
                tag_expr(ev.tag),
                comm(ev.comm),
            )
        }
        Func::Wait => format!("MPI_Wait(&reqs[{}], MPI_STATUS_IGNORE);", req?),
        Func::Sendrecv => {
            let src = ev.src.ok_or_else(|| missing("src"))?;
            let tag = tag_expr(ev.tag);
            format!(
                "MPI_Sendrecv(sbuf, {count}, MPI_BYTE, {}, {tag}, rbuf, {count}, MPI_BYTE, {}, {tag}, {}, MPI_STATUS_IGNORE);",
                peer_expr(peer?),
                peer_expr(src),
                comm(ev.comm)
            )
        }
        Func::Barrier => format!("MPI_Barrier({});", comm(ev.comm)),
        Func::Allreduce => format!(
            "MPI_Allreduce(sbuf, rbuf, {count}, MPI_BYTE, MPI_BOR, {});",
            comm(ev.comm)
        ),
        Func::Alltoall => format!(
            "MPI_Alltoall(sbuf, {count}, MPI_BYTE, rbuf, {count}, MPI_BYTE, {});",
            comm(ev.comm)
        ),
        Func::Bcast => format!(
            "MPI_Bcast(sbuf, {count}, MPI_BYTE, {}, {});",
            peer_expr(peer?),
            comm(ev.comm)
        ),
        Func::Reduce => format!(
            "MPI_Reduce(sbuf, rbuf, {count}, MPI_BYTE, MPI_BOR, {}, {});",
            peer_expr(peer?),
            comm(ev.comm)
        ),
        Func::CommSplit => {
            let color = ev.color.ok_or_else(|| missing("color"))?;
            let color = if color < 0 {
                "MPI_UNDEFINED".to_string()
            } else {
                color.to_string()
            };
            format!(
                "MPI_Comm_split({}, {color}, proxy_rank, &comms[{}]);",
                comm(ev.comm),
                ev.newcomm.ok_or_else(|| missing("newcomm"))?
            )
        }
        Func::CommDup => format!(
            "MPI_Comm_dup({}, &comms[{}]);",
            comm(ev.comm),
            ev.newcomm.ok_or_else(|| missing("newcomm"))?
        ),
        Func::CommFree => format!("MPI_Comm_free(&comms[{}]);", ev.comm.unwrap_or(0)),
    };
    let _ = writeln!(
        out,
        "static void t{id}(void)\n{{\n    PROXY_LOG({});\n    {call}\n}}\n",
        c_string(key)
    );
    Ok(report)
}

/// Emits one compute terminal. Blocks 1-9 each run in their own loop, whose
/// iterations block 11 accounts for; block 11 itself only runs the spare
/// iterations.
pub fn emit_compute(out: &mut String, id: u32, key: &str, combo: &ProxyCombination) {
    let _ = writeln!(out, "static void t{id}(void)\n{{\n    PROXY_LOG({});", c_string(key));
    for (j, &n) in combo.counts.iter().enumerate() {
        let n = if j == OVERHEAD_BLOCK {
            combo.spare_overhead()
        } else {
            n
        };
        if n > 0 {
            let _ = writeln!(out, "    BLOCK{}({n}ULL);", j + 1);
        }
    }
    out.push_str("}\n\n");
}

fn call_stmt(sym: Symbol, indent: &str) -> String {
    let name = match sym.id {
        SymbolId::Terminal(t) => format!("t{t}()"),
        SymbolId::Rule(r) => format!("r{r}()"),
    };
    if sym.exp == 1 {
        format!("{indent}{name};\n")
    } else {
        format!(
            "{indent}{{ unsigned long long k_; for (k_ = 0; k_ < {}ULL; k_++) {name}; }}\n",
            sym.exp
        )
    }
}

pub fn emit_rule(out: &mut String, id: u32, rule: &Rule) {
    let _ = writeln!(out, "static void r{id}(void)\n{{");
    for &sym in &rule.body {
        out.push_str(&call_stmt(sym, "    "));
    }
    out.push_str("}\n\n");
}

fn guard_expr(ranks: &RankList) -> String {
    ranks
        .intervals()
        .iter()
        .map(|&(lo, hi)| {
            if lo == hi {
                format!("proxy_rank == {lo}")
            } else if lo == 0 {
                format!("proxy_rank <= {hi}")
            } else {
                format!("(proxy_rank >= {lo} && proxy_rank <= {hi})")
            }
        })
        .collect::<Vec<_>>()
        .join(" || ")
}

/// Main body: consecutive symbols with equal rank lists share a guard, and
/// the full rank list needs none. Returns the number of guards.
pub fn emit_main_body(
    out: &mut String,
    main: &[crate::merge::RankedSymbol],
    world_size: u32,
) -> Result<usize, CodegenError> {
    let mut guards = 0;
    let mut i = 0;
    while i < main.len() {
        let ranks = &main[i].ranks;
        if ranks.is_empty() {
            return Err(CodegenError::EmptyRankList(i));
        }
        let mut j = i + 1;
        while j < main.len() && &main[j].ranks == ranks {
            j += 1;
        }
        if ranks.is_full(world_size) {
            for s in &main[i..j] {
                out.push_str(&call_stmt(s.sym, "    "));
            }
        } else {
            guards += 1;
            let _ = writeln!(out, "    if ({}) {{", guard_expr(ranks));
            for s in &main[i..j] {
                out.push_str(&call_stmt(s.sym, "        "));
            }
            out.push_str("    }\n");
        }
        i = j;
    }
    Ok(guards)
}

/// Per terminal, the ranks that may execute it.
fn terminal_ranks(p: &MergedProgram) -> Vec<RankList> {
    let mut rule_terms: Vec<Option<Vec<u32>>> = vec![None; p.rules.len()];
    fn collect(rules: &[Rule], memo: &mut Vec<Option<Vec<u32>>>, r: usize) -> Vec<u32> {
        if let Some(v) = &memo[r] {
            return v.clone();
        }
        let mut acc = Vec::new();
        for s in &rules[r].body {
            match s.id {
                SymbolId::Terminal(t) => acc.push(t),
                SymbolId::Rule(k) => acc.extend(collect(rules, memo, k as usize)),
            }
        }
        acc.sort_unstable();
        acc.dedup();
        memo[r] = Some(acc.clone());
        acc
    }
    let mut out = vec![RankList::empty(); p.table.len()];
    for s in &p.main {
        let terms = match s.sym.id {
            SymbolId::Terminal(t) => vec![t],
            SymbolId::Rule(r) => collect(&p.rules, &mut rule_terms, r as usize),
        };
        for t in terms {
            out[t as usize] = out[t as usize].union(&s.ranks);
        }
    }
    out
}

fn check_peers(id: u32, ev: &CommEvent, ranks: &RankList, world: u32) -> Result<(), CodegenError> {
    let offsets = [ev.peer, ev.src].into_iter().flatten().filter_map(|p| match p {
        Peer::Relative(k) => Some(k),
        _ => None,
    });
    for k in offsets {
        for &(lo, hi) in ranks.intervals() {
            for r in [lo, hi] {
                let peer = r as i64 + k;
                if peer < 0 || peer >= world as i64 {
                    return Err(CodegenError::PeerOutOfRange {
                        terminal: id,
                        rank: r,
                        peer,
                    });
                }
            }
        }
    }
    for p in [ev.peer, ev.src].into_iter().flatten() {
        if let Peer::Absolute(a) = p {
            if a >= world {
                return Err(CodegenError::PeerOutOfRange {
                    terminal: id,
                    rank: ranks.iter().next().unwrap_or(0),
                    peer: a as i64,
                });
            }
        }
    }
    Ok(())
}

/// Builds the complete C translation unit.
///
/// `combos` maps compute terminal ids to their solved combinations.
pub fn generate_program(
    p: &MergedProgram,
    combos: &FxHashMap<u32, ProxyCombination>,
    cfg: &CodegenConfig,
    models: &CommModels,
) -> Result<GeneratedProgram, CodegenError> {
    CodegenConfig::new(cfg.scale)?;
    models.validate()?;
    let depths = rule_depths(&p.rules)?;
    let ranks = terminal_ranks(p);

    let mut max_req = 0u64;
    let mut max_comm = 0u64;
    let mut max_vol = 0u64;
    for ev in p.table.events() {
        if let Event::Comm(c) = ev {
            max_req = max_req.max(c.req.map_or(0, |r| r + 1));
            for h in [c.comm, c.newcomm].into_iter().flatten() {
                max_comm = max_comm.max(h + 1);
            }
            max_vol = max_vol.max(c.volume.unwrap_or(0));
        }
    }

    let mut src = String::new();
    src.push_str("/* Generated by proxysynth. */\n");
    src.push_str(PRELUDE);
    let _ = writeln!(src, "\n#define PROXY_WORLD {}", p.world_size);
    let _ = writeln!(src, "#define PROXY_SLOT_BYTES {}ULL", max_vol.max(1));
    if max_req > 0 {
        let _ = writeln!(src, "static MPI_Request reqs[{max_req}];");
    }
    let _ = writeln!(src, "static MPI_Comm comms[{}];\n", max_comm.max(1));

    let mut comm_reports = Vec::new();
    let mut compute_reports = Vec::new();
    for (id, (key, ev)) in p.table.keys().iter().zip(p.table.events()).enumerate() {
        let id = id as u32;
        match ev {
            Event::Comm(c) => {
                check_peers(id, c, &ranks[id as usize], p.world_size)?;
                comm_reports.push(emit_comm(&mut src, id, key, c, cfg, models)?);
            }
            Event::Compute(_) => {
                let combo = combos.get(&id).ok_or(CodegenError::MissingCombination(id))?;
                emit_compute(&mut src, id, key, combo);
                compute_reports.push(ComputeReport {
                    terminal: id,
                    key: key.clone(),
                    target: combo.target.0,
                    counts: combo.counts,
                    relative_errors: combo.relative_errors,
                    max_relative_error: combo.max_relative_error(),
                });
            }
        }
    }

    let mut order: Vec<usize> = (0..p.rules.len()).collect();
    order.sort_by_key(|&r| (depths[r], r));
    for r in order {
        emit_rule(&mut src, r as u32, &p.rules[r]);
    }

    // Alltoall sends `count` bytes to every rank; receive buffers also hold
    // one slot per request.
    let slots = p.world_size.max(1) as u64;
    let buf_bytes = max_vol.max(1) * slots;
    let rbuf_bytes = max_vol.max(1) * (slots + max_req);
    src.push_str("int main(int argc, char **argv)\n{\n");
    src.push_str("    MPI_Init(&argc, &argv);\n");
    src.push_str("    MPI_Comm_rank(MPI_COMM_WORLD, &proxy_rank);\n");
    src.push_str("    MPI_Comm_size(MPI_COMM_WORLD, &proxy_size);\n");
    src.push_str("    if (proxy_size != PROXY_WORLD) {\n");
    src.push_str("        fprintf(stderr, \"this proxy app needs %d ranks, got %d\\n\", PROXY_WORLD, proxy_size);\n");
    src.push_str("        MPI_Abort(MPI_COMM_WORLD, 1);\n    }\n");
    src.push_str("    comms[0] = MPI_COMM_WORLD;\n");
    let _ = writeln!(src, "    sbuf = calloc({buf_bytes}u, 1);\n    rbuf = calloc({rbuf_bytes}u, 1);");
    src.push_str("    if (!sbuf || !rbuf) {\n        MPI_Abort(MPI_COMM_WORLD, 2);\n    }\n");
    let guards = emit_main_body(&mut src, &p.main, p.world_size)?;
    src.push_str("    free(sbuf);\n    free(rbuf);\n    MPI_Finalize();\n    return 0;\n}\n");

    let report = CodegenReport {
        scale: cfg.scale,
        world_size: p.world_size,
        terminals: p.table.len(),
        rules: p.rules.len(),
        functions: p.table.len() + p.rules.len() + 1,
        guards,
        comm: comm_reports,
        compute: compute_reports,
    };
    Ok(GeneratedProgram {
        source: src,
        report,
    })
}

/// Key=value lines summarizing a generation run.
pub fn format_report(r: &CodegenReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scale={}", r.scale);
    let _ = writeln!(out, "world_size={}", r.world_size);
    let _ = writeln!(out, "terminals={}", r.terminals);
    let _ = writeln!(out, "rules={}", r.rules);
    let _ = writeln!(out, "functions={}", r.functions);
    let _ = writeln!(out, "guards={}", r.guards);
    let _ = writeln!(out, "compute_terminals={}", r.compute.len());
    let _ = writeln!(out, "max_relative_error={:.6}", r.max_relative_error());
    for c in &r.compute {
        let counts: Vec<String> = c.counts.iter().map(|v| v.to_string()).collect();
        let errs: Vec<String> = c.relative_errors.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(
            out,
            "compute t{} counts={} relative_errors={}",
            c.terminal,
            counts.join(","),
            errs.join(",")
        );
    }
    for c in &r.comm {
        if let (Some(v), Some(sv), Some(ev)) = (c.volume, c.scaled_volume, c.emitted_volume) {
            let _ = writeln!(out, "comm t{} volume={v} scaled_volume={sv} emitted_volume={ev}", c.terminal);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::TerminalTable;
    use crate::merge::RankedSymbol;
    use crate::solver::MetricVector;

    fn program(events: &[Event], main: Vec<RankedSymbol>, rules: Vec<Rule>, world: u32) -> MergedProgram {
        let mut table = TerminalTable::new();
        for e in events {
            table.intern(e);
        }
        MergedProgram {
            table,
            rules,
            main,
            world_size: world,
        }
    }

    fn rs(id: u32, ranks: &str) -> RankedSymbol {
        RankedSymbol::new(Symbol::terminal(id, 1), ranks.parse().unwrap())
    }

    fn send(vol: u64, k: i64) -> Event {
        Event::Comm(CommEvent::send(vol, Peer::Relative(k), 0, 0))
    }

    fn gen(p: &MergedProgram, scale: f64) -> GeneratedProgram {
        generate_program(p, &FxHashMap::default(), &CodegenConfig::new(scale).unwrap(), &CommModels::default())
            .unwrap()
    }

    #[test]
    fn send_at_scale_one() {
        let p = program(&[send(1024, 1)], vec![rs(0, "0")], vec![], 2);
        let out = gen(&p, 1.0);
        assert!(out.source.contains("MPI_Send(sbuf, 1024, MPI_BYTE, proxy_rank + 1, 0, comms[0]);"));
        assert!(out.source.contains("PROXY_LOG(\"SEND vol=1024 peer=+1 tag=0 comm=0\");"));
    }

    #[test]
    fn overhead_only_compute() {
        let mut counts = [0; 11];
        counts[OVERHEAD_BLOCK] = 100;
        let combo = ProxyCombination {
            counts,
            target: MetricVector([0.0; 6]),
            residual: 0.0,
            relative_errors: [0.0; 6],
        };
        let mut s = String::new();
        emit_compute(&mut s, 3, "COMPUTE 1 1 0 0 0 0", &combo);
        assert_eq!(s.matches("BLOCK").count(), 1);
        assert!(s.contains("BLOCK11(100ULL);"));
    }

    #[test]
    fn looped_blocks_take_overhead_iterations() {
        let mut counts = [0; 11];
        counts[0] = 4;
        counts[6] = 6;
        counts[OVERHEAD_BLOCK] = 15;
        let combo = ProxyCombination {
            counts,
            target: MetricVector([0.0; 6]),
            residual: 0.0,
            relative_errors: [0.0; 6],
        };
        let mut s = String::new();
        emit_compute(&mut s, 0, "COMPUTE 1 1 0 0 0 0", &combo);
        assert!(s.contains("BLOCK1(4ULL);") && s.contains("BLOCK7(6ULL);") && s.contains("BLOCK11(5ULL);"));
    }

    #[test]
    fn scaled_volume_inverts_model() {
        let m = CommTimeModel {
            intercept: 2e-6,
            slope: 5e-10,
        };
        for v in [0u64, 10, 4096, 1 << 20, 1 << 30] {
            let vs = m.scaled_volume(v, 10.0);
            assert!(vs >= 0.0);
            if vs > 0.0 {
                let lhs = m.time(vs);
                let rhs = m.time(v as f64) / 10.0;
                assert!((lhs - rhs).abs() <= 1e-9 * rhs, "{v}: {lhs} vs {rhs}");
            } else {
                assert!(m.time(v as f64) / 10.0 <= m.intercept);
            }
        }
        assert_eq!(m.scaled_volume(77, 1.0), 77.0);
    }

    #[test]
    fn nonblocking_is_not_scaled() {
        let ev = Event::Comm(CommEvent::isend(1 << 20, Peer::Relative(1), 0, 0, 0));
        let wait = Event::Comm(CommEvent::wait(0));
        let p = program(&[ev, wait], vec![rs(0, "0"), rs(1, "0")], vec![], 2);
        let out = gen(&p, 10.0);
        assert!(out.source.contains("MPI_Isend(sbuf, 1048576, MPI_BYTE"));
        assert_eq!(out.report.comm[0].emitted_volume, Some(1 << 20));
    }

    #[test]
    fn fit_exact_line() {
        let samples: Vec<(f64, f64)> = [0.0, 1e3, 1e5, 1e6].iter().map(|&v| (v, 1e-6 + 1e-9 * v)).collect();
        let m = fit_comm_model(&samples).unwrap();
        assert!((m.slope - 1e-9).abs() < 1e-18);
        assert!((m.intercept - 1e-6).abs() < 1e-12);
        let two = fit_comm_model(&[(10.0, 3.0), (20.0, 5.0)]).unwrap();
        assert!((two.slope - 0.2).abs() < 1e-12 && (two.intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_clamps_and_rejects() {
        let m = fit_comm_model(&[(1.0, 5.0), (2.0, 4.0), (3.0, 3.0)]).unwrap();
        assert_eq!(m.slope, 0.0);
        assert!((m.intercept - 4.0).abs() < 1e-12);
        assert!(matches!(
            fit_comm_model(&[(5.0, 1.0), (5.0, 2.0)]),
            Err(CodegenError::DegenerateFit(_))
        ));
        assert!(fit_comm_model(&[(5.0, 1.0)]).is_err());
    }

    #[test]
    fn models_from_json() {
        let m = CommModels::from_json(r#"{"collective": {"intercept": 4e-6, "slope": 2e-9}}"#).unwrap();
        assert_eq!(m.default, CommTimeModel::DEFAULT);
        assert_eq!(m.for_func(Func::Allreduce).slope, 2e-9);
        assert_eq!(m.for_func(Func::Send), &CommTimeModel::DEFAULT);
        let m = CommModels::from_json(r#"{"samples": {"point_to_point": [[0, 1], [10, 2]]}}"#).unwrap();
        assert_eq!(m.for_func(Func::Recv), &CommTimeModel { intercept: 1.0, slope: 0.1 });
        assert!(CommModels::from_json(r#"{"default": {"intercept": 0, "slope": -1}}"#).is_err());
        assert!(CommModels::from_json("{").is_err());
        assert!(CommModels::from_json(r#"{"p2p": {"intercept": 0, "slope": 1}}"#).is_err());
    }

    #[test]
    fn full_rank_list_has_no_guard() {
        let b = Event::Comm(CommEvent::barrier(0));
        let p = program(&[b], vec![rs(0, "0-3")], vec![], 4);
        let out = gen(&p, 1.0);
        assert_eq!(out.report.guards, 0);
        assert!(!out.source.contains("if (proxy_rank"));
    }

    #[test]
    fn guards_follow_rank_lists() {
        let evs: Vec<Event> = (1..=4).map(|v| Event::Comm(CommEvent::allreduce(v, 0))).collect();
        let main = vec![rs(0, "0-1"), rs(1, "0"), rs(2, "1"), rs(3, "0-1")];
        assert_eq!(gen(&program(&evs, main.clone(), vec![], 2), 1.0).report.guards, 2);
        assert_eq!(gen(&program(&evs, main, vec![], 3), 1.0).report.guards, 4);

        let five = vec![rs(0, "0"), rs(1, "0"), rs(2, "0"), rs(3, "0"), rs(0, "0")];
        let out = gen(&program(&evs, five, vec![], 2), 1.0);
        assert_eq!(out.report.guards, 1);
        assert!(out.source.contains("    if (proxy_rank == 0) {\n        t0();\n        t1();\n        t2();\n        t3();\n        t0();\n    }\n"));
    }

    #[test]
    fn guard_expressions() {
        assert_eq!(guard_expr(&"0-3,5,7-9".parse().unwrap()), "proxy_rank <= 3 || proxy_rank == 5 || (proxy_rank >= 7 && proxy_rank <= 9)");
    }

    #[test]
    fn rules_become_loops() {
        let evs = [Event::Comm(CommEvent::barrier(0)), Event::Comm(CommEvent::allreduce(8, 0))];
        let rules = vec![
            Rule { body: vec![Symbol::terminal(0, 1), Symbol::terminal(1, 2)] },
            Rule { body: vec![Symbol::rule(0, 1_000_000)] },
        ];
        let main = vec![RankedSymbol::new(Symbol::rule(1, 1), "0".parse().unwrap())];
        let out = gen(&program(&evs, main, rules, 1), 1.0);
        assert!(out.source.contains("static void r0(void)\n{\n    t0();\n    { unsigned long long k_; for (k_ = 0; k_ < 2ULL; k_++) t1(); }\n}\n"));
        assert!(out.source.contains("k_ < 1000000ULL; k_++) r0(); }"));
        assert!(out.source.find("static void r0").unwrap() < out.source.find("static void r1").unwrap());
        assert_eq!(out.report.functions, 5);
    }

    #[test]
    fn errors() {
        let p = program(&[send(8, 1)], vec![rs(0, "0-1")], vec![], 2);
        let err = generate_program(&p, &FxHashMap::default(), &CodegenConfig::default(), &CommModels::default());
        assert_eq!(err.unwrap_err(), CodegenError::PeerOutOfRange { terminal: 0, rank: 1, peer: 2 });

        let c = Event::Compute(crate::trace::ComputeEvent::new([1, 1, 0, 0, 0, 0]));
        let p = program(&[c], vec![rs(0, "0")], vec![], 1);
        let err = generate_program(&p, &FxHashMap::default(), &CodegenConfig::default(), &CommModels::default());
        assert_eq!(err.unwrap_err(), CodegenError::MissingCombination(0));

        let p = program(&[send(8, 0)], vec![RankedSymbol::new(Symbol::terminal(0, 1), RankList::empty())], vec![], 1);
        let err = generate_program(&p, &FxHashMap::default(), &CodegenConfig::new(1.0).unwrap(), &CommModels::default());
        assert_eq!(err.unwrap_err(), CodegenError::EmptyRankList(0));

        assert_eq!(CodegenConfig::new(0.5), Err(CodegenError::BadScale(0.5)));
    }

    #[test]
    fn output_is_deterministic() {
        let p = program(&[send(8, 1), Event::Comm(CommEvent::recv(8, Peer::Relative(-1), Some(0), 0))], vec![rs(0, "0"), rs(1, "1")], vec![], 2);
        assert_eq!(gen(&p, 10.0), gen(&p, 10.0));
    }
}
