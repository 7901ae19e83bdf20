//! Run-length Sequitur: online inference of a context-free grammar from a
//! terminal-id stream.
//!
//! Three properties hold after every append:
//!
//! 1. every adjacent pair `(a^i, b^j)` occurs at most once in the grammar;
//! 2. every rule other than the main rule is used at least twice, counting
//!    a reference `R^k` as `k` uses;
//! 3. no rule body contains two adjacent symbols with the same id; such
//!    neighbours are folded into one symbol whose exponent is the sum.
//!
//! Digrams are compared on ids *and* exponents, so `(a^2, b)` and `(a^3, b)`
//! are different pairs.

use std::fmt;

use rustc_hash::FxHashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("rule R{0} is part of a reference cycle")]
    Cycle(u32),
    #[error("unknown rule R{0}")]
    UnknownRule(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymbolId {
    Terminal(u32),
    Rule(u32),
}

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolId::Terminal(t) => write!(f, "t{t}"),
            SymbolId::Rule(r) => write!(f, "R{r}"),
        }
    }
}

/// A grammar symbol with its run-length exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol {
    pub id: SymbolId,
    pub exp: u64,
}

impl Symbol {
    pub fn terminal(t: u32, exp: u64) -> Self {
        Symbol {
            id: SymbolId::Terminal(t),
            exp,
        }
    }

    pub fn rule(r: u32, exp: u64) -> Self {
        Symbol {
            id: SymbolId::Rule(r),
            exp,
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp == 1 {
            write!(f, "{}", self.id)
        } else {
            write!(f, "{}^{}", self.id, self.exp)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Rule {
    pub body: Vec<Symbol>,
}

/// A finished grammar. `SymbolId::Rule(k)` refers to `rules[k]`; rules are
/// numbered in creation order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Grammar {
    pub main: Vec<Symbol>,
    pub rules: Vec<Rule>,
}

impl Grammar {
    /// Builds the grammar of `seq` with run folding enabled.
    pub fn from_sequence(seq: &[u32]) -> Self {
        let mut b = SequiturBuilder::new();
        b.extend(seq.iter().copied());
        b.finish()
    }

    /// Total number of symbols across all rule bodies, main included.
    pub fn size(&self) -> usize {
        self.main.len() + self.rules.iter().map(|r| r.body.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.main.is_empty()
    }

    /// Height of each rule's derivation tree; terminals sit at depth 0.
    pub fn depths(&self) -> Result<Vec<usize>, GrammarError> {
        rule_depths(&self.rules)
    }

    pub fn rule_depth(&self, rule: u32) -> Result<usize, GrammarError> {
        if rule as usize >= self.rules.len() {
            return Err(GrammarError::UnknownRule(rule));
        }
        Ok(self.depths()?[rule as usize])
    }

    pub fn main_depth(&self) -> Result<usize, GrammarError> {
        let depths = self.depths()?;
        Ok(1 + self
            .main
            .iter()
            .map(|s| symbol_depth(s, &depths))
            .max()
            .unwrap_or(0))
    }

    /// Expands the main rule back into the terminal sequence.
    pub fn expand(&self) -> Result<Vec<u32>, GrammarError> {
        self.depths()?;
        let mut out = Vec::new();
        for sym in &self.main {
            expand_symbol(&self.rules, *sym, &mut out);
        }
        Ok(out)
    }

    /// Lists violations of the three grammar properties. Empty when the
    /// grammar is well formed.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen: FxHashMap<(Symbol, Symbol), String> = FxHashMap::default();
        let mut uses = vec![0u64; self.rules.len()];
        let bodies = std::iter::once(("S".to_string(), &self.main)).chain(
            self.rules
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("R{i}"), &r.body)),
        );
        for (name, body) in bodies {
            for (pos, pair) in body.windows(2).enumerate() {
                if pair[0].id == pair[1].id {
                    problems.push(format!("{name}[{pos}]: adjacent equal symbols {}", pair[0].id));
                }
                let here = format!("{name}[{pos}]");
                if let Some(prev) = seen.insert((pair[0], pair[1]), here.clone()) {
                    problems.push(format!(
                        "digram {} {} at {prev} and {here}",
                        pair[0], pair[1]
                    ));
                }
            }
            for sym in body {
                if sym.exp == 0 {
                    problems.push(format!("{name}: zero exponent on {}", sym.id));
                }
                if let SymbolId::Rule(r) = sym.id {
                    match uses.get_mut(r as usize) {
                        Some(u) => *u += sym.exp,
                        None => problems.push(format!("{name}: unknown rule R{r}")),
                    }
                }
            }
        }
        for (r, &u) in uses.iter().enumerate() {
            if u < 2 {
                problems.push(format!("R{r} used {u} time(s)"));
            }
        }
        problems
    }
}

pub(crate) fn symbol_depth(sym: &Symbol, depths: &[usize]) -> usize {
    match sym.id {
        SymbolId::Terminal(_) => 0,
        SymbolId::Rule(r) => depths[r as usize],
    }
}

/// Depth of every rule, or the first rule found on a cycle.
pub(crate) fn rule_depths(rules: &[Rule]) -> Result<Vec<usize>, GrammarError> {
    const UNVISITED: usize = usize::MAX;
    const ACTIVE: usize = usize::MAX - 1;
    let mut depth = vec![UNVISITED; rules.len()];
    for root in 0..rules.len() {
        if depth[root] != UNVISITED {
            continue;
        }
        // (rule, next body position)
        let mut stack = vec![(root, 0usize)];
        depth[root] = ACTIVE;
        while let Some(&mut (r, ref mut pos)) = stack.last_mut() {
            let body = &rules[r].body;
            if *pos < body.len() {
                let sym = body[*pos];
                *pos += 1;
                if let SymbolId::Rule(child) = sym.id {
                    let child = child as usize;
                    if child >= rules.len() {
                        return Err(GrammarError::UnknownRule(child as u32));
                    }
                    match depth[child] {
                        ACTIVE => return Err(GrammarError::Cycle(child as u32)),
                        UNVISITED => {
                            depth[child] = ACTIVE;
                            stack.push((child, 0));
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let d = 1 + body
                .iter()
                .map(|s| match s.id {
                    SymbolId::Terminal(_) => 0,
                    SymbolId::Rule(c) => depth[c as usize],
                })
                .max()
                .unwrap_or(0);
            depth[r] = d;
            stack.pop();
        }
    }
    Ok(depth)
}

/// Appends the expansion of `sym` to `out`. The rules must be acyclic.
pub(crate) fn expand_symbol(rules: &[Rule], sym: Symbol, out: &mut Vec<u32>) {
    let root = match sym.id {
        SymbolId::Terminal(t) => {
            out.extend(std::iter::repeat_n(t, sym.exp as usize));
            return;
        }
        SymbolId::Rule(r) => r,
    };
    // (rule, position in body, repetitions left)
    let mut stack: Vec<(u32, usize, u64)> = vec![(root, 0, sym.exp)];
    while let Some(top) = stack.last_mut() {
        let body = &rules[top.0 as usize].body;
        if top.1 == body.len() {
            top.2 -= 1;
            if top.2 == 0 {
                stack.pop();
            } else {
                top.1 = 0;
            }
            continue;
        }
        let s = body[top.1];
        top.1 += 1;
        match s.id {
            SymbolId::Terminal(t) => out.extend(std::iter::repeat_n(t, s.exp as usize)),
            SymbolId::Rule(q) => stack.push((q, 0, s.exp)),
        }
    }
}

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Guard(u32),
    Term(u32),
    Rule(u32),
}

impl Slot {
    fn code(self) -> u64 {
        match self {
            Slot::Term(t) => (t as u64) << 1,
            Slot::Rule(r) => ((r as u64) << 1) | 1,
            Slot::Guard(_) => unreachable!("guards never form digrams"),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    slot: Slot,
    exp: u64,
    prev: u32,
    next: u32,
    alive: bool,
}

#[derive(Debug, Clone)]
struct RuleSlot {
    guard: u32,
    /// Sum of exponents over all references.
    uses: u64,
    alive: bool,
}

type DigramKey = (u64, u64, u64, u64);

/// Incremental grammar builder.
///
/// Rule bodies are circular doubly linked lists of arena nodes closed by a
/// guard node. Any edit pushes the nodes whose right-hand digram changed onto
/// a worklist, which is drained before the next append.
#[derive(Debug, Clone)]
pub struct SequiturBuilder {
    nodes: Vec<Node>,
    free: Vec<u32>,
    rules: Vec<RuleSlot>,
    digrams: FxHashMap<DigramKey, u32>,
    pending: Vec<u32>,
    fold_runs: bool,
    len: u64,
}

impl Default for SequiturBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl SequiturBuilder {
    pub fn new() -> Self {
        let mut b = SequiturBuilder {
            nodes: Vec::new(),
            free: Vec::new(),
            rules: Vec::new(),
            digrams: FxHashMap::default(),
            pending: Vec::new(),
            fold_runs: true,
            len: 0,
        };
        b.new_rule();
        b
    }

    /// Classic Sequitur without run-length folding. Grammars for periodic
    /// input then grow logarithmically instead of staying constant.
    pub fn without_run_folding() -> Self {
        SequiturBuilder {
            fold_runs: false,
            ..Self::new()
        }
    }

    /// Number of terminals appended so far.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, terminal: u32) {
        let guard = self.rules[0].guard;
        let last = self.nodes[guard as usize].prev;
        let n = self.alloc(Slot::Term(terminal), 1);
        self.link(last, n);
        self.link(n, guard);
        self.len += 1;
        self.pending.push(last);
        self.drain();
    }

    pub fn extend<I: IntoIterator<Item = u32>>(&mut self, terminals: I) {
        for t in terminals {
            self.push(t);
        }
    }

    pub fn finish(self) -> Grammar {
        self.snapshot()
    }

    /// The grammar for the input seen so far.
    pub fn snapshot(&self) -> Grammar {
        let mut dense = vec![NIL; self.rules.len()];
        let mut next_id = 0;
        for (r, slot) in self.rules.iter().enumerate().skip(1) {
            if slot.alive {
                dense[r] = next_id;
                next_id += 1;
            }
        }
        let body_of = |r: usize| -> Vec<Symbol> {
            let guard = self.rules[r].guard;
            let mut out = Vec::new();
            let mut n = self.nodes[guard as usize].next;
            while n != guard {
                let node = &self.nodes[n as usize];
                let id = match node.slot {
                    Slot::Term(t) => SymbolId::Terminal(t),
                    Slot::Rule(q) => SymbolId::Rule(dense[q as usize]),
                    Slot::Guard(_) => unreachable!(),
                };
                out.push(Symbol { id, exp: node.exp });
                n = node.next;
            }
            out
        };
        Grammar {
            main: body_of(0),
            rules: (1..self.rules.len())
                .filter(|&r| self.rules[r].alive)
                .map(|r| Rule { body: body_of(r) })
                .collect(),
        }
    }

    fn alloc(&mut self, slot: Slot, exp: u64) -> u32 {
        let node = Node {
            slot,
            exp,
            prev: NIL,
            next: NIL,
            alive: true,
        };
        if let Some(n) = self.free.pop() {
            self.nodes[n as usize] = node;
            n
        } else {
            self.nodes.push(node);
            (self.nodes.len() - 1) as u32
        }
    }

    fn release(&mut self, n: u32) {
        self.nodes[n as usize].alive = false;
        self.free.push(n);
    }

    fn new_rule(&mut self) -> u32 {
        let r = self.rules.len() as u32;
        let g = self.alloc(Slot::Guard(r), 1);
        self.link(g, g);
        self.rules.push(RuleSlot {
            guard: g,
            uses: 0,
            alive: true,
        });
        r
    }

    fn link(&mut self, a: u32, b: u32) {
        self.nodes[a as usize].next = b;
        self.nodes[b as usize].prev = a;
    }

    fn next(&self, n: u32) -> u32 {
        self.nodes[n as usize].next
    }

    fn prev(&self, n: u32) -> u32 {
        self.nodes[n as usize].prev
    }

    fn is_guard(&self, n: u32) -> bool {
        matches!(self.nodes[n as usize].slot, Slot::Guard(_))
    }

    fn key(&self, n: u32) -> Option<DigramKey> {
        let a = &self.nodes[n as usize];
        if matches!(a.slot, Slot::Guard(_)) {
            return None;
        }
        let b = &self.nodes[a.next as usize];
        if matches!(b.slot, Slot::Guard(_)) {
            return None;
        }
        Some((a.slot.code(), a.exp, b.slot.code(), b.exp))
    }

    /// Drops the index entry for the digram starting at `n` if it points at `n`.
    fn unindex(&mut self, n: u32) {
        if let Some(k) = self.key(n) {
            if self.digrams.get(&k) == Some(&n) {
                self.digrams.remove(&k);
            }
        }
    }

    fn add_use(&mut self, slot: Slot, exp: u64) {
        if let Slot::Rule(r) = slot {
            self.rules[r as usize].uses += exp;
        }
    }

    fn drop_use(&mut self, slot: Slot, exp: u64) {
        if let Slot::Rule(r) = slot {
            self.rules[r as usize].uses -= exp;
        }
    }

    fn drain(&mut self) {
        while let Some(n) = self.pending.pop() {
            self.check(n);
        }
    }

    fn check(&mut self, n: u32) {
        if !self.nodes[n as usize].alive || self.is_guard(n) {
            return;
        }
        let m = self.next(n);
        if self.is_guard(m) {
            return;
        }
        if self.fold_runs && self.nodes[n as usize].slot == self.nodes[m as usize].slot {
            let p = self.prev(n);
            self.unindex(p);
            self.unindex(n);
            self.unindex(m);
            let after = self.next(m);
            self.nodes[n as usize].exp += self.nodes[m as usize].exp;
            self.link(n, after);
            self.release(m);
            self.pending.push(n);
            self.pending.push(p);
            return;
        }
        let k = self.key(n).expect("non-guard pair");
        match self.digrams.get(&k).copied() {
            None => {
                self.digrams.insert(k, n);
            }
            Some(o) if o == n => {}
            Some(o) => {
                if !self.nodes[o as usize].alive || self.key(o) != Some(k) {
                    self.digrams.insert(k, n);
                    return;
                }
                // Overlapping occurrences (`aaa`) only arise without folding.
                if self.next(o) == n || self.next(n) == o {
                    return;
                }
                self.match_digram(n, o);
            }
        }
    }

    /// The rule whose entire body is the digram starting at `n`.
    fn whole_body(&self, n: u32) -> Option<u32> {
        let p = self.prev(n);
        let after = self.next(self.next(n));
        match (self.nodes[p as usize].slot, self.is_guard(after)) {
            (Slot::Guard(r), true) if r != 0 => Some(r),
            _ => None,
        }
    }

    fn match_digram(&mut self, n: u32, o: u32) {
        let rule = if let Some(r) = self.whole_body(o) {
            self.substitute(n, r);
            r
        } else if let Some(r) = self.whole_body(n) {
            self.substitute(o, r);
            r
        } else {
            let r = self.new_rule();
            let guard = self.rules[r as usize].guard;
            let (sa, ea) = (self.nodes[o as usize].slot, self.nodes[o as usize].exp);
            let o2 = self.next(o);
            let (sb, eb) = (self.nodes[o2 as usize].slot, self.nodes[o2 as usize].exp);
            let a = self.alloc(sa, ea);
            let b = self.alloc(sb, eb);
            self.link(guard, a);
            self.link(a, b);
            self.link(b, guard);
            self.add_use(sa, ea);
            self.add_use(sb, eb);
            self.substitute(o, r);
            self.substitute(n, r);
            let k = self.key(a).expect("two-symbol body");
            self.digrams.insert(k, a);
            r
        };

        // A substitution can leave a rule referenced once, and that single
        // reference is always inside the body of `rule`.
        let guard = self.rules[rule as usize].guard;
        let mut s = self.next(guard);
        while s != guard {
            let after = self.next(s);
            if let Slot::Rule(q) = self.nodes[s as usize].slot {
                if self.rules[q as usize].uses == 1 {
                    self.inline(s);
                }
            }
            s = after;
        }
    }

    /// Replaces the digram starting at `s` with a reference to `rule`.
    fn substitute(&mut self, s: u32, rule: u32) {
        let q = self.next(s);
        let p = self.prev(s);
        let after = self.next(q);
        self.unindex(p);
        self.unindex(s);
        self.unindex(q);
        let (ss, es) = (self.nodes[s as usize].slot, self.nodes[s as usize].exp);
        let (sq, eq) = (self.nodes[q as usize].slot, self.nodes[q as usize].exp);
        self.drop_use(ss, es);
        self.drop_use(sq, eq);
        self.release(s);
        self.release(q);
        let n = self.alloc(Slot::Rule(rule), 1);
        self.add_use(Slot::Rule(rule), 1);
        self.link(p, n);
        self.link(n, after);
        self.pending.push(n);
        self.pending.push(p);
    }

    /// Splices the body of the rule referenced by `s` in place of `s` and
    /// deletes the rule.
    fn inline(&mut self, s: u32) {
        let Slot::Rule(q) = self.nodes[s as usize].slot else {
            unreachable!("inline on a non-rule symbol");
        };
        debug_assert_eq!(self.nodes[s as usize].exp, 1);
        let p = self.prev(s);
        let after = self.next(s);
        self.unindex(p);
        self.unindex(s);
        let guard = self.rules[q as usize].guard;
        let first = self.next(guard);
        let last = self.prev(guard);
        self.link(p, first);
        self.link(last, after);
        self.release(s);
        self.release(guard);
        let slot = &mut self.rules[q as usize];
        slot.alive = false;
        slot.uses = 0;
        self.pending.push(last);
        self.pending.push(p);
    }
}
