//! Text form of per-rank grammars and merged programs.
//!
//! ```text
//! rank 2
//! world 4
//! t0 = SEND vol=64 peer=+1 tag=0 comm=0
//! t1 = COMPUTE 1000 800 300 10 120 4
//! S -> R0^100 t1
//! R0 -> t0 t1^2
//! ```
//!
//! Table lines come first, then the main rule `S`, then rules in index
//! order. Merged programs omit `rank` and suffix every main-rule symbol with
//! the ranks that execute it, e.g. `t3^2@{0-3,5}`.

use std::fmt::Write;

use thiserror::Error;

use crate::canon::{CanonError, TerminalTable};
use crate::grammar::{rule_depths, Grammar, GrammarError, Rule, Symbol, SymbolId};
use crate::merge::{MergedProgram, RankedSymbol};
use crate::ranklist::RankList;

#[derive(Debug, Error, PartialEq)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Table(#[from] CanonError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("{0}")]
    Invalid(String),
}

/// One rank's compressed trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDump {
    pub rank: u32,
    pub world_size: u32,
    pub table: TerminalTable,
    pub grammar: Grammar,
}

fn write_table(out: &mut String, table: &TerminalTable) {
    for (id, key) in table.keys().iter().enumerate() {
        let _ = writeln!(out, "t{id} = {key}");
    }
}

fn write_body<'a>(out: &mut String, head: &str, body: impl Iterator<Item = String> + 'a) {
    out.push_str(head);
    out.push_str(" ->");
    for sym in body {
        out.push(' ');
        out.push_str(&sym);
    }
    out.push('\n');
}

fn write_rules(out: &mut String, rules: &[Rule]) {
    for (k, rule) in rules.iter().enumerate() {
        write_body(out, &format!("R{k}"), rule.body.iter().map(|s| s.to_string()));
    }
}

pub fn write_rank_dump(dump: &RankDump) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rank {}", dump.rank);
    let _ = writeln!(out, "world {}", dump.world_size);
    write_table(&mut out, &dump.table);
    write_body(&mut out, "S", dump.grammar.main.iter().map(|s| s.to_string()));
    write_rules(&mut out, &dump.grammar.rules);
    out
}

pub fn write_program(p: &MergedProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "world {}", p.world_size);
    write_table(&mut out, &p.table);
    write_body(
        &mut out,
        "S",
        p.main.iter().map(|s| format!("{}@{{{}}}", s.sym, s.ranks)),
    );
    write_rules(&mut out, &p.rules);
    out
}

struct Parsed {
    rank: Option<u32>,
    world: Option<u32>,
    keys: Vec<String>,
    main: Option<Vec<RankedToken>>,
    rules: Vec<Vec<RankedToken>>,
}

struct RankedToken {
    sym: Symbol,
    ranks: Option<RankList>,
}

fn parse_symbol(tok: &str) -> Result<RankedToken, String> {
    let (head, ranks) = match tok.split_once('@') {
        Some((h, r)) => {
            let inner = r
                .strip_prefix('{')
                .and_then(|r| r.strip_suffix('}'))
                .ok_or_else(|| format!("rank list must be braced in `{tok}`"))?;
            let list: RankList = inner.parse()?;
            if list.is_empty() {
                return Err(format!("empty rank list in `{tok}`"));
            }
            (h, Some(list))
        }
        None => (tok, None),
    };
    let (name, exp) = match head.split_once('^') {
        Some((n, e)) => {
            let exp: u64 = e.parse().map_err(|_| format!("bad exponent in `{tok}`"))?;
            if exp == 0 {
                return Err(format!("zero exponent in `{tok}`"));
            }
            (n, exp)
        }
        None => (head, 1),
    };
    let id = if let Some(n) = name.strip_prefix('t') {
        SymbolId::Terminal(n.parse().map_err(|_| format!("bad terminal `{name}`"))?)
    } else if let Some(n) = name.strip_prefix('R') {
        SymbolId::Rule(n.parse().map_err(|_| format!("bad rule `{name}`"))?)
    } else {
        return Err(format!("unknown symbol `{name}`"));
    };
    Ok(RankedToken {
        sym: Symbol { id, exp },
        ranks,
    })
}

fn parse_lines(text: &str) -> Result<Parsed, DumpError> {
    let mut p = Parsed {
        rank: None,
        world: None,
        keys: Vec::new(),
        main: None,
        rules: Vec::new(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: String| DumpError::Parse { line: line_no, msg };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(v) = line.strip_prefix("rank ") {
            p.rank = Some(v.trim().parse().map_err(|_| err(format!("bad rank `{v}`")))?);
        } else if let Some(v) = line.strip_prefix("world ") {
            p.world = Some(v.trim().parse().map_err(|_| err(format!("bad world size `{v}`")))?);
        } else if let Some((lhs, rhs)) = line.split_once(" = ") {
            let id: usize = lhs
                .strip_prefix('t')
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| err(format!("bad table entry `{lhs}`")))?;
            if id != p.keys.len() {
                return Err(err(format!("expected t{}, found t{id}", p.keys.len())));
            }
            if p.main.is_some() {
                return Err(err("table entries must precede rules".into()));
            }
            p.keys.push(rhs.to_string());
        } else if let Some((lhs, rhs)) = line.split_once("->") {
            let lhs = lhs.trim();
            let body = rhs
                .split_whitespace()
                .map(parse_symbol)
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            if lhs == "S" {
                if p.main.is_some() {
                    return Err(err("main rule defined twice".into()));
                }
                p.main = Some(body);
            } else {
                let k: usize = lhs
                    .strip_prefix('R')
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| err(format!("bad rule name `{lhs}`")))?;
                if p.main.is_none() {
                    return Err(err("the main rule must come first".into()));
                }
                if k != p.rules.len() {
                    return Err(err(format!("expected R{}, found R{k}", p.rules.len())));
                }
                p.rules.push(body);
            }
        } else {
            return Err(err(format!("unrecognized line `{line}`")));
        }
    }
    Ok(p)
}

fn check_refs(table: &TerminalTable, rules: &[Rule], syms: &[Symbol]) -> Result<(), DumpError> {
    for s in syms.iter().chain(rules.iter().flat_map(|r| &r.body)) {
        match s.id {
            SymbolId::Terminal(t) if t as usize >= table.len() => {
                return Err(DumpError::Invalid(format!("t{t} is not in the table")));
            }
            SymbolId::Rule(r) if r as usize >= rules.len() => {
                return Err(DumpError::Invalid(format!("R{r} is not defined")));
            }
            _ => {}
        }
    }
    rule_depths(rules)?;
    Ok(())
}

fn plain_rules(rules: Vec<Vec<RankedToken>>) -> Result<Vec<Rule>, DumpError> {
    rules
        .into_iter()
        .enumerate()
        .map(|(k, body)| {
            if body.iter().any(|t| t.ranks.is_some()) {
                return Err(DumpError::Invalid(format!("R{k} carries rank lists")));
            }
            Ok(Rule {
                body: body.into_iter().map(|t| t.sym).collect(),
            })
        })
        .collect()
}

pub fn parse_rank_dump(text: &str) -> Result<RankDump, DumpError> {
    let p = parse_lines(text)?;
    let rank = p.rank.ok_or_else(|| DumpError::Invalid("missing `rank` line".into()))?;
    let world_size = p.world.ok_or_else(|| DumpError::Invalid("missing `world` line".into()))?;
    if rank >= world_size {
        return Err(DumpError::Invalid(format!("rank {rank} outside world of {world_size}")));
    }
    let main = p.main.ok_or_else(|| DumpError::Invalid("missing main rule".into()))?;
    if main.iter().any(|t| t.ranks.is_some()) {
        return Err(DumpError::Invalid("per-rank dumps carry no rank lists".into()));
    }
    let table = TerminalTable::from_keys(&p.keys)?;
    let grammar = Grammar {
        main: main.into_iter().map(|t| t.sym).collect(),
        rules: plain_rules(p.rules)?,
    };
    check_refs(&table, &grammar.rules, &grammar.main)?;
    Ok(RankDump {
        rank,
        world_size,
        table,
        grammar,
    })
}

pub fn parse_program(text: &str) -> Result<MergedProgram, DumpError> {
    let p = parse_lines(text)?;
    if p.rank.is_some() {
        return Err(DumpError::Invalid("this is a per-rank dump, not a merged program".into()));
    }
    let world_size = p.world.ok_or_else(|| DumpError::Invalid("missing `world` line".into()))?;
    let main_tokens = p.main.ok_or_else(|| DumpError::Invalid("missing main rule".into()))?;
    let mut main = Vec::with_capacity(main_tokens.len());
    for tok in main_tokens {
        let ranks = tok
            .ranks
            .ok_or_else(|| DumpError::Invalid(format!("{} has no rank list", tok.sym)))?;
        if let Some(&(_, hi)) = ranks.intervals().last() {
            if hi >= world_size {
                return Err(DumpError::Invalid(format!(
                    "rank {hi} outside world of {world_size}"
                )));
            }
        }
        main.push(RankedSymbol::new(tok.sym, ranks));
    }
    let table = TerminalTable::from_keys(&p.keys)?;
    let rules = plain_rules(p.rules)?;
    let syms: Vec<Symbol> = main.iter().map(|s| s.sym).collect();
    check_refs(&table, &rules, &syms)?;
    Ok(MergedProgram {
        table,
        rules,
        main,
        world_size,
    })
}
