use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use proxysynth::canon::ClusterConfig;
use proxysynth::codegen::{format_report, CodegenReport, CommModels, DEFAULT_SCALE};
use proxysynth::dump::{parse_program, parse_rank_dump, write_program, write_rank_dump, RankDump};
use proxysynth::merge::DEFAULT_SIMILARITY;
use proxysynth::pipeline::{self, PipelineConfig, PipelineError, RankStats};
use proxysynth::solver::BlockMatrix;
use proxysynth::synth::{generate_rank, SynthSpec};
use proxysynth::trace::{serialize_trace, trace_file_name};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

/// Compress MPI traces into grammars and turn them into C proxy apps.
#[derive(Parser)]
#[command(name = "proxysynth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic per-rank traces from a JSON spec.
    GenTrace {
        /// Generator spec (JSON).
        spec: PathBuf,
        /// Output directory for trace.<rank>.txt and spec.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress each rank's trace into a grammar dump.
    Compress {
        /// Directory holding trace.<rank>.txt files.
        traces: PathBuf,
        /// Output directory for dump.<rank>.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ClusterConfig::DEFAULT_THRESHOLD)]
        cluster_threshold: f64,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Merge per-rank dumps into one program.
    Merge {
        /// Dump files, or one directory holding dump.<rank>.txt files.
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SIMILARITY)]
        merge_similarity: f64,
    },
    /// Generate C source from a merged program.
    Synthesize {
        merged: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Traces to C source in one go.
    Pipeline {
        traces: PathBuf,
        #[arg(long, default_value_t = ClusterConfig::DEFAULT_THRESHOLD)]
        cluster_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_SIMILARITY)]
        merge_similarity: f64,
        /// Also write per-rank dumps and the merged program here.
        #[arg(long)]
        keep_dumps: Option<PathBuf>,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Block matrix file (6 rows of 11 per-repetition costs).
    #[arg(long)]
    block_matrix: PathBuf,
    /// Output C file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    scale: f64,
    /// Communication time models (JSON). Defaults to 1 us latency, 1 GB/s.
    #[arg(long)]
    comm_model: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Print the report as JSON instead of key=value lines.
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Usage(e.into()),
            _ => Failure::Data(e.into()),
        }
    }
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Data)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(Failure::Data)?;
    }
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Data)
}

fn dump_file_name(rank: u32) -> String {
    format!("dump.{rank}.txt")
}

fn stats_report(stats: &[RankStats], json: bool) -> String {
    let trace: u64 = stats.iter().map(|s| s.trace_bytes).sum();
    let dump: u64 = stats.iter().map(|s| s.dump_bytes).sum();
    let ratio = trace as f64 / dump.max(1) as f64;
    if json {
        let v = serde_json::json!({
            "ranks": stats,
            "trace_bytes": trace,
            "dump_bytes": dump,
            "compression_ratio": ratio,
        });
        return format!("{v:#}\n");
    }
    let mut out = String::new();
    for s in stats {
        let _ = writeln!(
            out,
            "rank={} events={} trace_bytes={} terminals={} rules={} grammar_size={} dump_bytes={} compression_ratio={:.2}",
            s.rank,
            s.events,
            s.trace_bytes,
            s.terminals,
            s.rules,
            s.grammar_size,
            s.dump_bytes,
            s.compression_ratio()
        );
    }
    let _ = writeln!(out, "total_trace_bytes={trace}");
    let _ = writeln!(out, "total_dump_bytes={dump}");
    let _ = writeln!(out, "compression_ratio={ratio:.2}");
    out
}

fn codegen_report(r: &CodegenReport, json: bool) -> String {
    if json {
        let mut v = serde_json::to_value(r).expect("report serializes");
        v["max_relative_error"] = r.max_relative_error().into();
        format!("{v:#}\n")
    } else {
        format_report(r)
    }
}

fn load_models(path: Option<&Path>) -> Result<CommModels, Failure> {
    match path {
        None => Ok(CommModels::default()),
        Some(p) => CommModels::from_json(&read(p)?)
            .with_context(|| format!("{}", p.display()))
            .map_err(Failure::Data),
    }
}

fn load_block_matrix(path: &Path) -> Result<BlockMatrix, Failure> {
    read(path)?
        .parse::<BlockMatrix>()
        .with_context(|| format!("{}", path.display()))
        .map_err(Failure::Data)
}

fn write_dumps(dir: &Path, dumps: &[RankDump]) -> Result<(), Failure> {
    for d in dumps {
        write(&dir.join(dump_file_name(d.rank)), &write_rank_dump(d))?;
    }
    Ok(())
}

fn dump_paths(args: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    if let [dir] = args {
        if dir.is_dir() {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .with_context(|| format!("cannot list {}", dir.display()))
                .map_err(Failure::Data)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("dump.") && n.ends_with(".txt"))
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(data(anyhow!("no dump files in {}", dir.display())));
            }
            return Ok(paths);
        }
    }
    Ok(args.to_vec())
}

fn synth_config(synth: &SynthArgs, cluster_threshold: f64, merge_similarity: f64) -> Result<PipelineConfig, Failure> {
    let cfg = PipelineConfig {
        scale: synth.scale,
        cluster_threshold,
        merge_similarity,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::GenTrace { spec, out } => {
            let spec = SynthSpec::from_json(&read(&spec)?)
                .with_context(|| format!("{}", spec.display()))
                .map_err(Failure::Data)?;
            let mut events = 0;
            for rank in 0..spec.world_size {
                let t = generate_rank(&spec, rank).map_err(data)?;
                events += t.len();
                write(&out.join(trace_file_name(rank)), &serialize_trace(&t))?;
            }
            write(&out.join("spec.json"), &(spec.to_json() + "\n"))?;
            Ok(format!("ranks={}\nevents={events}\n", spec.world_size))
        }
        Command::Compress {
            traces,
            out,
            cluster_threshold,
            report,
        } => {
            let cfg = PipelineConfig {
                cluster_threshold,
                ..Default::default()
            };
            let (dumps, stats): (Vec<_>, Vec<_>) = pipeline::compress_dir(&traces, &cfg)?.into_iter().unzip();
            write_dumps(&out, &dumps)?;
            Ok(stats_report(&stats, report.json))
        }
        Command::Merge {
            dumps,
            out,
            merge_similarity,
        } => {
            let cfg = PipelineConfig {
                merge_similarity,
                ..Default::default()
            };
            cfg.validate()?;
            let mut parsed = Vec::new();
            for path in dump_paths(&dumps)? {
                let d = parse_rank_dump(&read(&path)?)
                    .with_context(|| format!("{}", path.display()))
                    .map_err(Failure::Data)?;
                parsed.push(d);
            }
            let merged = pipeline::merge_dumps(&parsed, merge_similarity)?;
            write(&out, &write_program(&merged))?;
            Ok(format!(
                "world_size={}\nterminals={}\nrules={}\nmain_symbols={}\nsize={}\n",
                merged.world_size,
                merged.table.len(),
                merged.rules.len(),
                merged.main.len(),
                merged.size()
            ))
        }
        Command::Synthesize { merged, synth, report } => {
            let cfg = synth_config(&synth, ClusterConfig::DEFAULT_THRESHOLD, DEFAULT_SIMILARITY)?;
            let b = load_block_matrix(&synth.block_matrix)?;
            let models = load_models(synth.comm_model.as_deref())?;
            let program = parse_program(&read(&merged)?)
                .with_context(|| format!("{}", merged.display()))
                .map_err(Failure::Data)?;
            let generated = pipeline::synthesize(&program, &b, &cfg, &models)?;
            write(&synth.out, &generated.source)?;
            Ok(codegen_report(&generated.report, report.json))
        }
        Command::Pipeline {
            traces,
            cluster_threshold,
            merge_similarity,
            keep_dumps,
            synth,
            report,
        } => {
            let cfg = synth_config(&synth, cluster_threshold, merge_similarity)?;
            let b = load_block_matrix(&synth.block_matrix)?;
            let models = load_models(synth.comm_model.as_deref())?;
            let (dumps, stats): (Vec<_>, Vec<_>) = pipeline::compress_dir(&traces, &cfg)?.into_iter().unzip();
            let merged = pipeline::merge_dumps(&dumps, cfg.merge_similarity)?;
            if let Some(dir) = &keep_dumps {
                write_dumps(dir, &dumps)?;
                write(&dir.join("merged.txt"), &write_program(&merged))?;
            }
            let generated = pipeline::synthesize(&merged, &b, &cfg, &models)?;
            write(&synth.out, &generated.source)?;
            if report.json {
                let mut v: serde_json::Value = serde_json::from_str(&stats_report(&stats, true)).map_err(|e| Failure::Internal(e.into()))?;
                v["codegen"] = serde_json::from_str(&codegen_report(&generated.report, true))
                    .map_err(|e| Failure::Internal(e.into()))?;
                Ok(format!("{v:#}\n"))
            } else {
                Ok(stats_report(&stats, false) + &format!("merged_size={}\n", merged.size())
                    + &codegen_report(&generated.report, false))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(report)) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Ok(Err(Failure::Usage(e))) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Ok(Err(Failure::Data(e))) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
        Ok(Err(Failure::Internal(e))) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(EXIT_INTERNAL)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
