#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use proxysynth::canon::{canonicalize, ClusterConfig, ComputeClusterer};
use proxysynth::codegen::{CommModels, GeneratedProgram};
use proxysynth::dump::RankDump;
use proxysynth::merge::MergedProgram;
use proxysynth::pipeline::{compress_traces, merge_dumps, synthesize, PipelineConfig};
use proxysynth::solver::BlockMatrix;
use proxysynth::trace::{serialize_trace, Trace};

pub fn fixture_matrix() -> BlockMatrix {
    include_str!("../../fixtures/block_matrix.txt").parse().unwrap()
}

/// The shim header directory, whether this module is compiled into the
/// core crate's tests or the command-line crate's.
pub fn shim_dir() -> PathBuf {
    let here = Path::new(env!("CARGO_MANIFEST_DIR"));
    let local = here.join("shim");
    if local.is_dir() {
        local
    } else {
        here.join("../core/shim")
    }
}

pub fn compiler() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

/// Compiles `source` with the shim header. Returns the executable path or
/// the compiler's diagnostics.
pub fn compile(source: &str, dir: &Path) -> Result<PathBuf, String> {
    let c = dir.join("proxy.c");
    let exe = dir.join("proxy");
    std::fs::write(&c, source).unwrap();
    let out = Command::new(compiler())
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-O0", "-I"])
        .arg(shim_dir())
        .arg(&c)
        .arg("-o")
        .arg(&exe)
        .output()
        .map_err(|e| format!("cannot run {}: {e}", compiler()))?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(exe)
}

/// Runs one rank of a shim-linked proxy and returns the logged keys.
pub fn replay(exe: &Path, rank: u32, world: u32) -> Vec<String> {
    let out = Command::new(exe)
        .env("PROXY_SHIM_RANK", rank.to_string())
        .env("PROXY_SHIM_SIZE", world.to_string())
        .output()
        .unwrap();
    assert!(out.status.success(), "rank {rank} exited with {:?}", out.status);
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.strip_prefix("T ").expect("only log lines on stdout").to_string())
        .collect()
}

/// Canonical event lines per rank, clustering compute events across ranks in
/// rank order.
pub fn canonical_lines(traces: &[Trace], threshold: f64) -> Vec<Vec<String>> {
    let mut clusterer = ComputeClusterer::new(ClusterConfig::new(threshold).unwrap());
    let world = traces.len() as u32;
    traces
        .iter()
        .map(|t| {
            let mut c = canonicalize(t, world).unwrap();
            clusterer.apply(&mut c);
            serialize_trace(&c).lines().map(str::to_string).collect()
        })
        .collect()
}

pub struct Built {
    pub dumps: Vec<RankDump>,
    pub merged: MergedProgram,
    pub program: GeneratedProgram,
}

pub fn build(traces: &[Trace], cfg: &PipelineConfig) -> Built {
    let dumps: Vec<RankDump> = compress_traces(traces, cfg).unwrap().into_iter().map(|(d, _)| d).collect();
    let merged = merge_dumps(&dumps, cfg.merge_similarity).unwrap();
    let program = synthesize(&merged, &fixture_matrix(), cfg, &CommModels::default()).unwrap();
    Built { dumps, merged, program }
}

/// Removes comments and string/char literals so braces and names inside
/// them are not counted.
fn strip_c(source: &str) -> String {
    let b = source.as_bytes();
    let mut out = String::with_capacity(b.len());
    let mut i = 0;
    while i < b.len() {
        if b[i..].starts_with(b"/*") {
            let end = source[i + 2..].find("*/").map_or(b.len(), |e| i + 2 + e + 2);
            i = end;
            out.push(' ');
        } else if b[i..].starts_with(b"//") {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if b[i] == b'"' || b[i] == b'\'' {
            let q = b[i];
            i += 1;
            while i < b.len() && b[i] != q {
                if b[i] == b'\\' {
                    i += 1;
                }
                i += 1;
            }
            i += 1;
            out.push_str("\"\"");
        } else {
            out.push(b[i] as char);
            i += 1;
        }
    }
    out
}

fn called_names(body: &str) -> Vec<String> {
    let b = body.as_bytes();
    let mut names = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let boundary = i == 0 || !(b[i - 1].is_ascii_alphanumeric() || b[i - 1] == b'_');
        if boundary && (b[i] == b't' || b[i] == b'r') {
            let mut j = i + 1;
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 && body[j..].starts_with("()") {
                names.push(body[i..j].to_string());
                i = j;
                continue;
            }
        }
        i += 1;
    }
    names
}

/// Checks brace balance, that exactly `expected_functions` functions are
/// defined (terminals, rules and `main`), that every call targets a defined
/// function, and that the call graph has no cycle.
pub fn validate_structure(source: &str, expected_functions: usize) -> Result<(), String> {
    let code = strip_c(source);
    let mut depth = 0i64;
    for (n, ch) in code.chars().enumerate() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth < 0 {
                    return Err(format!("unbalanced `}}` at byte {n}"));
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(format!("{depth} unclosed braces"));
    }

    let mut bodies: HashMap<String, String> = HashMap::new();
    let lines: Vec<&str> = code.lines().collect();
    let mut k = 0;
    while k < lines.len() {
        let line = lines[k].trim_end();
        let name = if let Some(rest) = line.strip_prefix("static void ") {
            rest.strip_suffix("(void)").map(str::to_string)
        } else if line.starts_with("int main(") {
            Some("main".to_string())
        } else {
            None
        };
        if let Some(name) = name {
            let mut body = String::new();
            let mut d = 0i64;
            let mut opened = false;
            k += 1;
            while k < lines.len() {
                for ch in lines[k].chars() {
                    match ch {
                        '{' => {
                            d += 1;
                            opened = true;
                        }
                        '}' => d -= 1,
                        _ => {}
                    }
                }
                body.push_str(lines[k]);
                body.push('\n');
                if opened && d == 0 {
                    break;
                }
                k += 1;
            }
            if bodies.insert(name.clone(), body).is_some() {
                return Err(format!("{name} defined twice"));
            }
        }
        k += 1;
    }
    if bodies.len() != expected_functions {
        return Err(format!("{} functions defined, expected {expected_functions}", bodies.len()));
    }
    if !bodies.contains_key("main") {
        return Err("no main".into());
    }

    let graph: HashMap<&str, Vec<String>> = bodies.iter().map(|(k, b)| (k.as_str(), called_names(b))).collect();
    for (f, callees) in &graph {
        for c in callees {
            if !graph.contains_key(c.as_str()) {
                return Err(format!("{f} calls undefined {c}"));
            }
        }
    }
    // Iterative DFS with colors.
    let mut done: HashSet<&str> = HashSet::new();
    for &root in graph.keys() {
        if done.contains(root) {
            continue;
        }
        let mut on_path: HashSet<&str> = HashSet::new();
        let mut stack: Vec<(&str, usize)> = vec![(root, 0)];
        on_path.insert(root);
        while let Some((node, idx)) = stack.pop() {
            let callees = &graph[node];
            if idx < callees.len() {
                stack.push((node, idx + 1));
                let next = callees[idx].as_str();
                if on_path.contains(next) {
                    return Err(format!("call cycle through {next}"));
                }
                if !done.contains(next) {
                    on_path.insert(next);
                    stack.push((next, 0));
                }
            } else {
                on_path.remove(node);
                done.insert(node);
            }
        }
    }
    Ok(())
}
