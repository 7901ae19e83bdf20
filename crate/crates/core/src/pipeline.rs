//! Stage drivers shared by the command-line tool and the tests.
//!
//! Compute clustering is global: one clusterer sees the ranks in order, so a
//! noisy compute span gets the same representative on every rank.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::canon::{canonicalize, CanonError, ClusterConfig, ComputeClusterer, TerminalTable};
use crate::codegen::{generate_program, CodegenConfig, CodegenError, CommModels, GeneratedProgram};
use crate::dump::{write_rank_dump, DumpError, RankDump};
use crate::grammar::SequiturBuilder;
use crate::merge::{merge_program, MergeError, MergedProgram, DEFAULT_SIMILARITY};
use crate::solver::{synthesize_compute_terminal, BlockMatrix, MetricVector, ProxyCombination, SolverError};
use crate::trace::{read_trace, serialized_len, Event, Trace, TraceError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("no trace files in {0}")]
    NoTraces(PathBuf),
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error("trace files must cover ranks 0..{world}; rank {missing} is missing")]
    MissingRank { world: u32, missing: u32 },
    #[error("rank {rank}: {source}")]
    Canon { rank: u32, source: CanonError },
    #[error("{path}: {source}")]
    Dump { path: PathBuf, source: DumpError },
    #[error("dumps disagree: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error("compute terminal t{terminal}: {source}")]
    Solver { terminal: u32, source: SolverError },
    #[error(transparent)]
    Codegen(#[from] CodegenError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub scale: f64,
    pub cluster_threshold: f64,
    pub merge_similarity: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scale: crate::codegen::DEFAULT_SCALE,
            cluster_threshold: ClusterConfig::DEFAULT_THRESHOLD,
            merge_similarity: DEFAULT_SIMILARITY,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        CodegenConfig::new(self.scale).map_err(|e| PipelineError::Config(e.to_string()))?;
        ClusterConfig::new(self.cluster_threshold).map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.merge_similarity) {
            return Err(PipelineError::Config(format!(
                "merge similarity must lie in [0, 1], got {}",
                self.merge_similarity
            )));
        }
        Ok(())
    }

    fn clusterer(&self) -> Result<ComputeClusterer, PipelineError> {
        let cfg = ClusterConfig::new(self.cluster_threshold).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(ComputeClusterer::new(cfg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankStats {
    pub rank: u32,
    pub events: u64,
    pub trace_bytes: u64,
    pub terminals: usize,
    pub rules: usize,
    pub grammar_size: usize,
    pub dump_bytes: u64,
}

impl RankStats {
    pub fn compression_ratio(&self) -> f64 {
        self.trace_bytes as f64 / self.dump_bytes.max(1) as f64
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Trace files `trace.<rank>.txt` in `dir`, indexed by rank.
pub fn find_trace_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut found: Vec<(u32, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let rank = name
            .strip_prefix("trace.")
            .and_then(|s| s.strip_suffix(".txt"))
            .and_then(|s| s.parse::<u32>().ok());
        if let Some(rank) = rank {
            found.push((rank, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(PipelineError::NoTraces(dir.to_path_buf()));
    }
    found.sort();
    let world = found.len() as u32;
    for (expect, (rank, _)) in found.iter().enumerate() {
        if *rank != expect as u32 {
            return Err(PipelineError::MissingRank {
                world,
                missing: expect as u32,
            });
        }
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn load_trace(path: &Path, rank: u32) -> Result<Trace, PipelineError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_trace(rank, BufReader::new(file)).map_err(|source| PipelineError::Trace {
        path: path.to_path_buf(),
        source,
    })
}

/// Canonicalizes, clusters, interns and compresses one raw trace.
///
/// Terminals are pushed into the grammar builder as they are interned, so no
/// id sequence is materialized.
pub fn compress_rank(
    raw: &Trace,
    world_size: u32,
    clusterer: &mut ComputeClusterer,
) -> Result<(RankDump, RankStats), PipelineError> {
    let mut canon = canonicalize(raw, world_size).map_err(|source| PipelineError::Canon {
        rank: raw.rank,
        source,
    })?;
    clusterer.apply(&mut canon);
    let mut table = TerminalTable::new();
    let mut builder = SequiturBuilder::new();
    for ev in &canon.events {
        builder.push(table.intern(ev));
    }
    let grammar = builder.finish();
    let dump = RankDump {
        rank: raw.rank,
        world_size,
        table,
        grammar,
    };
    let stats = RankStats {
        rank: raw.rank,
        events: raw.len() as u64,
        trace_bytes: serialized_len(raw),
        terminals: dump.table.len(),
        rules: dump.grammar.rules.len(),
        grammar_size: dump.grammar.size(),
        dump_bytes: write_rank_dump(&dump).len() as u64,
    };
    Ok((dump, stats))
}

/// Compresses every trace, clustering compute events across ranks in rank
/// order. `traces[r]` must be rank `r`.
pub fn compress_traces(
    traces: &[Trace],
    cfg: &PipelineConfig,
) -> Result<Vec<(RankDump, RankStats)>, PipelineError> {
    cfg.validate()?;
    let world = traces.len() as u32;
    let mut clusterer = cfg.clusterer()?;
    traces
        .iter()
        .map(|t| compress_rank(t, world, &mut clusterer))
        .collect()
}

/// Like [`compress_traces`] but reads each file only when its turn comes.
pub fn compress_dir(dir: &Path, cfg: &PipelineConfig) -> Result<Vec<(RankDump, RankStats)>, PipelineError> {
    cfg.validate()?;
    let files = find_trace_files(dir)?;
    let world = files.len() as u32;
    let mut clusterer = cfg.clusterer()?;
    let mut out = Vec::with_capacity(files.len());
    for (rank, path) in files.iter().enumerate() {
        let raw = load_trace(path, rank as u32)?;
        out.push(compress_rank(&raw, world, &mut clusterer)?);
    }
    Ok(out)
}

/// Merges per-rank dumps. They must describe ranks `0..P` of one world of
/// size `P`, in any order.
pub fn merge_dumps(dumps: &[RankDump], similarity: f64) -> Result<MergedProgram, PipelineError> {
    let world = dumps.len() as u32;
    let mut by_rank: Vec<Option<&RankDump>> = vec![None; dumps.len()];
    for d in dumps {
        if d.world_size != world {
            return Err(PipelineError::Inconsistent(format!(
                "rank {} claims world size {}, but {} dumps were given",
                d.rank, d.world_size, world
            )));
        }
        let slot = by_rank
            .get_mut(d.rank as usize)
            .ok_or_else(|| PipelineError::Inconsistent(format!("rank {} is outside the world", d.rank)))?;
        if slot.is_some() {
            return Err(PipelineError::Inconsistent(format!("rank {} appears twice", d.rank)));
        }
        *slot = Some(d);
    }
    let per_rank: Vec<_> = by_rank
        .into_iter()
        .map(|d| {
            let d = d.expect("every slot filled: no duplicates and no gaps");
            (d.table.clone(), d.grammar.clone())
        })
        .collect();
    Ok(merge_program(&per_rank, similarity)?)
}

/// Solves every compute terminal of `p` for its target divided by `scale`.
pub fn solve_compute_terminals(
    p: &MergedProgram,
    b: &BlockMatrix,
    scale: f64,
) -> Result<FxHashMap<u32, ProxyCombination>, PipelineError> {
    let mut combos = FxHashMap::default();
    for (id, ev) in p.table.events().iter().enumerate() {
        if let Event::Compute(c) = ev {
            let id = id as u32;
            let combo = synthesize_compute_terminal(&MetricVector::from(c), b, scale)
                .map_err(|source| PipelineError::Solver { terminal: id, source })?;
            combos.insert(id, combo);
        }
    }
    Ok(combos)
}

pub fn synthesize(
    p: &MergedProgram,
    b: &BlockMatrix,
    cfg: &PipelineConfig,
    models: &CommModels,
) -> Result<GeneratedProgram, PipelineError> {
    cfg.validate()?;
    let combos = solve_compute_terminals(p, b, cfg.scale)?;
    Ok(generate_program(p, &combos, &CodegenConfig::new(cfg.scale)?, models)?)
}

pub struct PipelineOutput {
    pub stats: Vec<RankStats>,
    pub merged: MergedProgram,
    pub program: GeneratedProgram,
}

/// Trace directory to C source.
pub fn run_pipeline(
    dir: &Path,
    b: &BlockMatrix,
    cfg: &PipelineConfig,
    models: &CommModels,
) -> Result<PipelineOutput, PipelineError> {
    let compressed = compress_dir(dir, cfg)?;
    let (dumps, stats): (Vec<_>, Vec<_>) = compressed.into_iter().unzip();
    let merged = merge_dumps(&dumps, cfg.merge_similarity)?;
    let program = synthesize(&merged, b, cfg, models)?;
    Ok(PipelineOutput { stats, merged, program })
}
