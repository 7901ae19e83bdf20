//! Cross-rank merging of terminal tables and grammars.
//!
//! Ranks of an SPMD program produce near-identical grammars. Merging proceeds
//! in three steps: terminal tables are unioned with a pairwise tree
//! reduction, identical non-terminals are deduplicated shallowest first, and
//! main rules are clustered by edit distance and merged along their longest
//! common subsequence. Every symbol of the merged main rule carries the list
//! of ranks that execute it.

pub mod lcs;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::canon::TerminalTable;
use crate::grammar::{expand_symbol, rule_depths, Grammar, GrammarError, Rule, Symbol, SymbolId};
use crate::ranklist::RankList;

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("similarity threshold must lie in [0, 1], got {0}")]
    BadSimilarity(f64),
    #[error("nothing to merge")]
    NoRanks,
    #[error("rank {rank}: terminal t{terminal} is not in its table")]
    UnknownTerminal { rank: u32, terminal: u32 },
    #[error("rank {0} is outside the world")]
    RankOutOfRange(u32),
}

pub const DEFAULT_SIMILARITY: f64 = 0.9;

/// The union of all ranks' terminal tables plus, per rank, the map from
/// local to global terminal id.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTable {
    pub table: TerminalTable,
    pub remaps: Vec<Vec<u32>>,
    /// Reduction rounds used, `ceil(log2 P)`.
    pub rounds: u32,
}

/// Unions `tables` pairwise, round by round, like a reduction tree over
/// ranks. Global ids follow first appearance scanning ranks in order.
pub fn merge_terminal_tables(tables: &[TerminalTable]) -> GlobalTable {
    let mut level: Vec<TerminalTable> = tables.to_vec();
    let mut rounds = 0;
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let mut merged = pair[0].clone();
                if let Some(right) = pair.get(1) {
                    merged.absorb(right);
                }
                merged
            })
            .collect();
        rounds += 1;
    }
    let table = level.pop().unwrap_or_default();
    let remaps = tables
        .iter()
        .map(|t| {
            t.keys()
                .iter()
                .map(|k| table.id_of(k).expect("every key reaches the root"))
                .collect()
        })
        .collect();
    GlobalTable {
        table,
        remaps,
        rounds,
    }
}

/// Rules of all ranks with identical non-terminals merged.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedRules {
    /// Global rules, ordered by depth so callees precede callers.
    pub rules: Vec<Rule>,
    /// Per rank, local rule id to global rule id.
    pub remaps: Vec<Vec<u32>>,
    /// Per rank, the main rule over global ids.
    pub mains: Vec<Vec<Symbol>>,
}

/// Deduplicates non-terminals across ranks.
///
/// Rules are visited by ascending depth, then rank, then local id. A rule's
/// body is rewritten to global ids (its children are shallower, so they are
/// already mapped) and merged with any earlier rule whose body is identical,
/// exponents included.
pub fn merge_nonterminals(
    grammars: &[Grammar],
    global: &GlobalTable,
) -> Result<MergedRules, MergeError> {
    let mut order = Vec::new();
    for (rank, g) in grammars.iter().enumerate() {
        let depths = g.depths()?;
        order.extend(depths.into_iter().enumerate().map(|(r, d)| (d, rank, r)));
    }
    order.sort_unstable();

    let mut remaps: Vec<Vec<u32>> = grammars.iter().map(|g| vec![u32::MAX; g.rules.len()]).collect();
    let map_symbol = |remaps: &[Vec<u32>], rank: usize, sym: &Symbol| -> Result<Symbol, MergeError> {
        let id = match sym.id {
            SymbolId::Terminal(t) => SymbolId::Terminal(
                *global.remaps[rank]
                    .get(t as usize)
                    .ok_or(MergeError::UnknownTerminal {
                        rank: rank as u32,
                        terminal: t,
                    })?,
            ),
            SymbolId::Rule(r) => SymbolId::Rule(remaps[rank][r as usize]),
        };
        Ok(Symbol { id, exp: sym.exp })
    };

    let mut rules = Vec::new();
    let mut by_body: FxHashMap<Vec<Symbol>, u32> = FxHashMap::default();
    for (_, rank, local) in order {
        let body = grammars[rank].rules[local]
            .body
            .iter()
            .map(|s| map_symbol(&remaps, rank, s))
            .collect::<Result<Vec<_>, _>>()?;
        let id = *by_body.entry(body).or_insert_with_key(|body| {
            rules.push(Rule { body: body.clone() });
            (rules.len() - 1) as u32
        });
        remaps[rank][local] = id;
    }

    let mains = grammars
        .iter()
        .enumerate()
        .map(|(rank, g)| g.main.iter().map(|s| map_symbol(&remaps, rank, s)).collect())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MergedRules {
        rules,
        remaps,
        mains,
    })
}

/// `levenshtein(a, b) / max(|a|, |b|)`, 0 for two empty rules.
pub fn normalized_edit_distance(a: &[Symbol], b: &[Symbol]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    lcs::levenshtein(a, b) as f64 / longest as f64
}

fn check_similarity(similarity: f64) -> Result<(), MergeError> {
    if !(0.0..=1.0).contains(&similarity) {
        return Err(MergeError::BadSimilarity(similarity));
    }
    Ok(())
}

/// Groups ranks whose main rules are similar.
///
/// Each rule joins the first group whose founding rule is within normalized
/// edit distance `1 - similarity`, otherwise it founds a new group.
pub fn cluster_main_rules(
    mains: &[Vec<Symbol>],
    similarity: f64,
) -> Result<Vec<Vec<u32>>, MergeError> {
    check_similarity(similarity)?;
    let max_distance = 1.0 - similarity;
    let mut groups: Vec<(usize, Vec<u32>)> = Vec::new();
    for (rank, main) in mains.iter().enumerate() {
        let joined = groups.iter_mut().find(|(founder, _)| {
            let exemplar = &mains[*founder];
            let longest = exemplar.len().max(main.len());
            if longest == 0 {
                return true;
            }
            // Largest integer distance that still satisfies the threshold.
            let bound = (max_distance * longest as f64 + 1e-9).floor() as usize;
            exemplar == main || lcs::levenshtein_within(exemplar, main, bound).is_some()
        });
        match joined {
            Some((_, members)) => members.push(rank as u32),
            None => groups.push((rank, vec![rank as u32])),
        }
    }
    Ok(groups.into_iter().map(|(_, members)| members).collect())
}

/// A main-rule symbol together with the ranks that execute it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RankedSymbol {
    pub sym: Symbol,
    pub ranks: RankList,
}

impl RankedSymbol {
    pub fn new(sym: Symbol, ranks: RankList) -> Self {
        RankedSymbol { sym, ranks }
    }
}

/// Attaches the singleton rank list `{rank}` to every symbol of a main rule.
pub fn ranked_main(main: &[Symbol], rank: u32) -> Vec<RankedSymbol> {
    main.iter()
        .map(|&s| RankedSymbol::new(s, RankList::single(rank)))
        .collect()
}

/// Merges two main rules along their longest common subsequence.
///
/// Symbols match when id and exponent agree. Matched symbols appear once with
/// the union of both rank lists. Unmatched symbols keep their relative order;
/// within each gap between matches, `a`'s leftovers precede `b`'s.
pub fn lcs_merge_mains(a: &[RankedSymbol], b: &[RankedSymbol]) -> Vec<RankedSymbol> {
    let ta: Vec<Symbol> = a.iter().map(|s| s.sym).collect();
    let tb: Vec<Symbol> = b.iter().map(|s| s.sym).collect();
    let pairs = lcs::lcs_pairs(&ta, &tb);

    let mut out = Vec::with_capacity(a.len() + b.len() - pairs.len());
    let (mut i, mut j) = (0, 0);
    for (mi, mj) in pairs {
        out.extend_from_slice(&a[i..mi]);
        out.extend_from_slice(&b[j..mj]);
        out.push(RankedSymbol::new(a[mi].sym, a[mi].ranks.union(&b[mj].ranks)));
        i = mi + 1;
        j = mj + 1;
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// The merged grammar of all ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedProgram {
    pub table: TerminalTable,
    pub rules: Vec<Rule>,
    pub main: Vec<RankedSymbol>,
    pub world_size: u32,
}

impl MergedProgram {
    /// The main rule as seen by `rank`.
    pub fn filter(&self, rank: u32) -> Vec<Symbol> {
        self.main
            .iter()
            .filter(|s| s.ranks.contains(rank))
            .map(|s| s.sym)
            .collect()
    }

    /// The terminal sequence `rank` executes.
    pub fn expand_rank(&self, rank: u32) -> Result<Vec<u32>, MergeError> {
        if rank >= self.world_size {
            return Err(MergeError::RankOutOfRange(rank));
        }
        rule_depths(&self.rules)?;
        let mut out = Vec::new();
        for sym in self.filter(rank) {
            expand_symbol(&self.rules, sym, &mut out);
        }
        Ok(out)
    }

    /// Symbol count of all rule bodies plus the main rule.
    pub fn size(&self) -> usize {
        self.main.len() + self.rules.iter().map(|r| r.body.len()).sum::<usize>()
    }

    /// The program restricted to one rank, as a plain grammar.
    pub fn grammar_for_rank(&self, rank: u32) -> Grammar {
        Grammar {
            main: self.filter(rank),
            rules: self.rules.clone(),
        }
    }
}

/// Merges per-rank tables and grammars into one program.
///
/// Main rules are clustered by similarity; each group is merged by a left
/// fold in rank order, and group results are concatenated in the order their
/// founding ranks appear.
pub fn merge_program(
    per_rank: &[(TerminalTable, Grammar)],
    similarity: f64,
) -> Result<MergedProgram, MergeError> {
    check_similarity(similarity)?;
    if per_rank.is_empty() {
        return Err(MergeError::NoRanks);
    }
    let tables: Vec<TerminalTable> = per_rank.iter().map(|(t, _)| t.clone()).collect();
    let grammars: Vec<Grammar> = per_rank.iter().map(|(_, g)| g.clone()).collect();
    let global = merge_terminal_tables(&tables);
    let merged = merge_nonterminals(&grammars, &global)?;
    let groups = cluster_main_rules(&merged.mains, similarity)?;

    let mut main = Vec::new();
    for group in groups {
        let mut acc: Vec<RankedSymbol> = Vec::new();
        for rank in group {
            let next = ranked_main(&merged.mains[rank as usize], rank);
            acc = if acc.is_empty() {
                next
            } else {
                lcs_merge_mains(&acc, &next)
            };
        }
        main.extend(acc);
    }

    Ok(MergedProgram {
        table: global.table,
        rules: merged.rules,
        main,
        world_size: per_rank.len() as u32,
    })
}
