//! Search for code-block combinations that reproduce a compute event's
//! hardware metrics.
//!
//! Block `j` repeated `x_j` times contributes `B[:, j] * x_j` to the metric
//! vector. Given a target `t` we minimize the weighted relative error
//!
//! ```text
//! f(x) = sum_i (b_i . x - t_i)^2 / max(t_i, 1)^2
//! ```
//!
//! subject to `x >= 0` and `x_11 >= x_1 + ... + x_9`: the loops that repeat
//! blocks 1-9 cost one iteration of the loop-overhead block 11 each.
//!
//! The continuous problem is solved with accelerated projected gradient over
//! the feasible polyhedron, then polished with an active-set NNLS solve in the
//! coordinates `(x_1..x_10, s)` where `s = x_11 - sum(x_1..x_9)`, in which the
//! feasible set is the non-negative orthant. The result is rounded by
//! enumerating floor/ceil choices and a unit-step local search.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::trace::{ComputeEvent, METRIC_COUNT, METRIC_NAMES};

pub const BLOCK_COUNT: usize = 11;
/// Blocks 1-9 run inside counted loops.
pub const LOOPED_BLOCKS: usize = 9;
/// Index of block 11, the loop-overhead carrier.
pub const OVERHEAD_BLOCK: usize = 10;

/// Most fractional coordinates enumerated exhaustively when rounding.
const MAX_ROUNDING_COORDS: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("{0} contains a non-finite value")]
    NonFinite(&'static str),
    #[error("target metric {metric} is negative ({value})")]
    NegativeTarget { metric: &'static str, value: f64 },
    #[error("block matrix entry ({row}, {col}) is invalid: {msg}")]
    BadEntry { row: usize, col: usize, msg: String },
    #[error("block matrix line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scaling factor must be a finite number >= 1, got {0}")]
    BadScale(f64),
}

/// Per-repetition metric cost of each code block; rows follow the metric
/// order INS, CYC, LST, L1_DCM, BR_CN, MSP.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    rows: [[f64; BLOCK_COUNT]; METRIC_COUNT],
}

impl BlockMatrix {
    pub fn new(rows: [[f64; BLOCK_COUNT]; METRIC_COUNT]) -> Result<Self, SolverError> {
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(SolverError::BadEntry {
                        row: i,
                        col: j,
                        msg: format!("{v} is not a finite non-negative number"),
                    });
                }
                if i == 1 && v <= 0.0 {
                    return Err(SolverError::BadEntry {
                        row: i,
                        col: j,
                        msg: "every block must cost cycles".into(),
                    });
                }
            }
        }
        Ok(BlockMatrix { rows })
    }

    pub fn get(&self, metric: usize, block: usize) -> f64 {
        self.rows[metric][block]
    }

    pub fn rows(&self) -> &[[f64; BLOCK_COUNT]; METRIC_COUNT] {
        &self.rows
    }

    /// `B x`.
    pub fn apply(&self, x: &[f64; BLOCK_COUNT]) -> [f64; METRIC_COUNT] {
        self.rows
            .map(|row| row.iter().zip(x).map(|(b, x)| b * x).sum())
    }

    pub fn apply_counts(&self, x: &[u64; BLOCK_COUNT]) -> [f64; METRIC_COUNT] {
        self.apply(&x.map(|v| v as f64))
    }
}

impl FromStr for BlockMatrix {
    type Err = SolverError;

    /// Six lines of eleven whitespace-separated numbers; `#` starts a comment.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut rows = [[0.0; BLOCK_COUNT]; METRIC_COUNT];
        let mut filled = 0;
        for (idx, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| SolverError::Parse {
                line: idx + 1,
                msg,
            };
            if filled == METRIC_COUNT {
                return Err(perr("more than 6 rows".into()));
            }
            let values = line
                .split_whitespace()
                .map(|tok| tok.parse::<f64>().map_err(|_| perr(format!("bad number `{tok}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != BLOCK_COUNT {
                return Err(perr(format!("expected 11 values, got {}", values.len())));
            }
            rows[filled].copy_from_slice(&values);
            filled += 1;
        }
        if filled != METRIC_COUNT {
            return Err(SolverError::Parse {
                line: s.lines().count(),
                msg: format!("expected 6 rows, got {filled}"),
            });
        }
        BlockMatrix::new(rows)
    }
}

impl fmt::Display for BlockMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, row) in METRIC_NAMES.iter().zip(&self.rows) {
            writeln!(f, "# {name}")?;
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Target metrics of one compute event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricVector(pub [f64; METRIC_COUNT]);

impl MetricVector {
    pub fn validate(&self) -> Result<(), SolverError> {
        for (name, &v) in METRIC_NAMES.iter().zip(&self.0) {
            if !v.is_finite() {
                return Err(SolverError::NonFinite("target"));
            }
            if v < 0.0 {
                return Err(SolverError::NegativeTarget {
                    metric: name,
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn scaled_down(&self, scale: f64) -> MetricVector {
        MetricVector(self.0.map(|v| v / scale))
    }
}

impl From<&ComputeEvent> for MetricVector {
    fn from(c: &ComputeEvent) -> Self {
        MetricVector(c.metrics.map(|v| v as f64))
    }
}

/// An integer block combination and how well it matches its target.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyCombination {
    pub counts: [u64; BLOCK_COUNT],
    pub target: MetricVector,
    /// Objective value at `counts`.
    pub residual: f64,
    /// `|b_i . x - t_i| / max(t_i, 1)` per metric.
    pub relative_errors: [f64; METRIC_COUNT],
}

impl ProxyCombination {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }

    /// Iterations of block 11 not already spent by the loops of blocks 1-9.
    pub fn spare_overhead(&self) -> u64 {
        let looped: u64 = self.counts[..LOOPED_BLOCKS].iter().sum();
        self.counts[OVERHEAD_BLOCK] - looped
    }
}

/// Which blocks may be used. Fixed blocks stay at zero.
pub type BlockMask = [bool; BLOCK_COUNT];

pub const ALL_BLOCKS: BlockMask = [true; BLOCK_COUNT];

fn denominators(t: &MetricVector) -> [f64; METRIC_COUNT] {
    t.0.map(|v| v.max(1.0))
}

pub fn objective(b: &BlockMatrix, t: &MetricVector, x: &[f64; BLOCK_COUNT]) -> f64 {
    let bx = b.apply(x);
    bx.iter()
        .zip(&t.0)
        .zip(denominators(t))
        .map(|((p, q), d)| ((p - q) / d).powi(2))
        .sum()
}

pub fn relative_errors(
    b: &BlockMatrix,
    t: &MetricVector,
    x: &[f64; BLOCK_COUNT],
) -> [f64; METRIC_COUNT] {
    let bx = b.apply(x);
    let d = denominators(t);
    std::array::from_fn(|i| (bx[i] - t.0[i]).abs() / d[i])
}

/// True when `x` is non-negative, zero outside `mask` and satisfies the
/// loop-overhead coupling.
pub fn is_feasible(x: &[f64; BLOCK_COUNT], mask: &BlockMask) -> bool {
    let looped: f64 = x[..LOOPED_BLOCKS].iter().sum();
    x.iter().zip(mask).all(|(&v, &m)| v >= 0.0 && (m || v == 0.0))
        && x[OVERHEAD_BLOCK] >= looped * (1.0 - 1e-12)
}

/// Euclidean projection onto `{x >= 0, x_11 >= sum(x_1..x_9)}` with the
/// blocks outside `mask` pinned at zero.
pub fn project_feasible(z: &[f64; BLOCK_COUNT], mask: &BlockMask) -> [f64; BLOCK_COUNT] {
    let mut y = [0.0; BLOCK_COUNT];
    for j in 0..BLOCK_COUNT {
        if mask[j] {
            y[j] = z[j].max(0.0);
        }
    }
    if !mask[OVERHEAD_BLOCK] {
        y[..LOOPED_BLOCKS].fill(0.0);
        return y;
    }
    let looped: Vec<f64> = (0..LOOPED_BLOCKS).filter(|&j| mask[j]).map(|j| z[j]).collect();
    let zo = z[OVERHEAD_BLOCK];
    let sum_pos: f64 = looped.iter().map(|v| v.max(0.0)).sum();
    if y[OVERHEAD_BLOCK] >= sum_pos {
        return y;
    }
    // With multiplier mu > 0 the coupling is tight:
    // y_j = max(z_j - mu, 0), y_11 = max(z_11 + mu, 0), and
    // g(mu) = sum_j max(z_j - mu, 0) - max(z_11 + mu, 0) = 0.
    // g is piecewise linear and decreasing; walk its breakpoints.
    let g = |mu: f64| -> f64 {
        looped.iter().map(|v| (v - mu).max(0.0)).sum::<f64>() - (zo + mu).max(0.0)
    };
    let mut breaks: Vec<f64> = looped.iter().copied().chain([-zo]).filter(|&v| v > 0.0).collect();
    breaks.sort_by(f64::total_cmp);
    let mut lo = 0.0;
    let mut g_lo = g(lo);
    let mut mu = lo;
    for bp in breaks {
        let g_bp = g(bp);
        if g_bp <= 0.0 {
            mu = lo + g_lo * (bp - lo) / (g_lo - g_bp);
            break;
        }
        lo = bp;
        g_lo = g_bp;
        mu = bp;
    }
    for j in 0..LOOPED_BLOCKS {
        if mask[j] {
            y[j] = (z[j] - mu).max(0.0);
        }
    }
    y[OVERHEAD_BLOCK] = (zo + mu).max(0.0);
    // Absorb rounding so the result is feasible bit for bit.
    let looped_sum: f64 = y[..LOOPED_BLOCKS].iter().sum();
    y[OVERHEAD_BLOCK] = y[OVERHEAD_BLOCK].max(looped_sum);
    y
}

/// Weighted system `A = diag(1/d) B`, `c = t / d`.
struct Weighted {
    a: [[f64; BLOCK_COUNT]; METRIC_COUNT],
    c: [f64; METRIC_COUNT],
}

impl Weighted {
    fn new(b: &BlockMatrix, t: &MetricVector) -> Self {
        let d = denominators(t);
        Weighted {
            a: std::array::from_fn(|i| b.rows[i].map(|v| v / d[i])),
            c: std::array::from_fn(|i| t.0[i] / d[i]),
        }
    }

    fn residual(&self, x: &[f64; BLOCK_COUNT]) -> [f64; METRIC_COUNT] {
        std::array::from_fn(|i| {
            self.a[i].iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.c[i]
        })
    }

    /// `grad f = 2 A^T (A x - c)`.
    fn gradient(&self, x: &[f64; BLOCK_COUNT]) -> [f64; BLOCK_COUNT] {
        let r = self.residual(x);
        std::array::from_fn(|j| 2.0 * (0..METRIC_COUNT).map(|i| self.a[i][j] * r[i]).sum::<f64>())
    }

    fn column_norm(&self, j: usize) -> f64 {
        (0..METRIC_COUNT).map(|i| self.a[i][j].powi(2)).sum::<f64>().sqrt()
    }

    fn c_norm(&self) -> f64 {
        self.c.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_inputs(b: &BlockMatrix, t: &MetricVector) -> Result<(), SolverError> {
    if b.rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("block matrix"));
    }
    t.validate()
}

/// Minimizes the weighted relative error over the feasible set.
pub fn solve_qp(b: &BlockMatrix, t: &MetricVector) -> Result<[f64; BLOCK_COUNT], SolverError> {
    solve_qp_masked(b, t, &ALL_BLOCKS)
}

/// [`solve_qp`] restricted to the blocks in `mask`.
pub fn solve_qp_masked(
    b: &BlockMatrix,
    t: &MetricVector,
    mask: &BlockMask,
) -> Result<[f64; BLOCK_COUNT], SolverError> {
    check_inputs(b, t)?;
    let w = Weighted::new(b, t);
    let warm = projected_gradient(&w, mask, 150);
    Ok(active_set_polish(&w, mask, &warm))
}

/// FISTA with gradient-based restarts. Step `1/L` with
/// `L = 2 ||A||_F^2 >= 2 lambda_max(A^T A)`.
fn projected_gradient(w: &Weighted, mask: &BlockMask, iterations: usize) -> [f64; BLOCK_COUNT] {
    let lipschitz = 2.0 * w.a.iter().flatten().map(|v| v * v).sum::<f64>();
    let mut x = [0.0; BLOCK_COUNT];
    if lipschitz == 0.0 {
        return x;
    }
    let mut y = x;
    let mut momentum = 1.0f64;
    for _ in 0..iterations {
        let g = w.gradient(&y);
        let step: [f64; BLOCK_COUNT] = std::array::from_fn(|j| y[j] - g[j] / lipschitz);
        let next = project_feasible(&step, mask);
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let delta: [f64; BLOCK_COUNT] = std::array::from_fn(|j| next[j] - x[j]);
        let restart = (0..BLOCK_COUNT).map(|j| (y[j] - next[j]) * delta[j]).sum::<f64>() > 0.0;
        let scale = x.iter().chain(&next).fold(0.0f64, |m, v| m.max(v.abs()));
        let moved = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if restart {
            momentum = 1.0;
            y = next;
        } else {
            let beta = (momentum - 1.0) / next_momentum;
            y = std::array::from_fn(|j| next[j] + beta * delta[j]);
            momentum = next_momentum;
        }
        x = next;
        if moved <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    x
}

/// Columns of the problem in `(x_1..x_10, s)` coordinates:
/// block `j <= 9` becomes `A_j + A_11`, block 10 stays, `s` is `A_11`.
fn substituted_columns(w: &Weighted, mask: &BlockMask) -> (Vec<[f64; METRIC_COUNT]>, Vec<bool>) {
    let col = |j: usize| -> [f64; METRIC_COUNT] { std::array::from_fn(|i| w.a[i][j]) };
    let overhead = col(OVERHEAD_BLOCK);
    let mut cols = Vec::with_capacity(BLOCK_COUNT);
    let mut usable = Vec::with_capacity(BLOCK_COUNT);
    for j in 0..BLOCK_COUNT {
        let c = col(j);
        if j < LOOPED_BLOCKS {
            cols.push(std::array::from_fn(|i| c[i] + overhead[i]));
            usable.push(mask[j] && mask[OVERHEAD_BLOCK]);
        } else {
            cols.push(c);
            usable.push(mask[j]);
        }
    }
    (cols, usable)
}

fn to_substituted(x: &[f64; BLOCK_COUNT]) -> [f64; BLOCK_COUNT] {
    let mut y = *x;
    let looped: f64 = x[..LOOPED_BLOCKS].iter().sum();
    y[OVERHEAD_BLOCK] = (x[OVERHEAD_BLOCK] - looped).max(0.0);
    y
}

fn from_substituted(y: &[f64; BLOCK_COUNT]) -> [f64; BLOCK_COUNT] {
    let mut x = *y;
    x[OVERHEAD_BLOCK] = y[OVERHEAD_BLOCK] + y[..LOOPED_BLOCKS].iter().sum::<f64>();
    x
}

/// Least squares on the passive columns; minimum-norm if rank deficient.
fn passive_least_squares(
    cols: &[[f64; METRIC_COUNT]],
    c: &[f64; METRIC_COUNT],
    passive: &[usize],
) -> Vec<f64> {
    let a = DMatrix::from_fn(METRIC_COUNT, passive.len(), |i, k| cols[passive[k]][i]);
    let rhs = DVector::from_column_slice(c);
    a.svd(true, true)
        .solve(&rhs, 1e-13)
        .map(|z| z.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; passive.len()])
}

/// Greedily keeps the columns of `candidates` that are linearly independent
/// of the ones already kept.
fn independent_subset(cols: &[[f64; METRIC_COUNT]], candidates: &[usize]) -> Vec<usize> {
    let mut basis: Vec<[f64; METRIC_COUNT]> = Vec::new();
    let mut kept = Vec::new();
    for &j in candidates {
        let mut v = cols[j];
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= dot * qi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 * norm0 {
            basis.push(v.map(|x| x / norm));
            kept.push(j);
        }
    }
    kept
}

/// Lawson-Hanson NNLS in substituted coordinates, warm-started from the
/// support of `warm` when that support gives a strictly positive solution.
fn active_set_polish(
    w: &Weighted,
    mask: &BlockMask,
    warm: &[f64; BLOCK_COUNT],
) -> [f64; BLOCK_COUNT] {
    let (cols, usable) = substituted_columns(w, mask);
    let c = w.c;
    let a_norm = cols.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-12 * a_norm * w.c_norm().max(1.0);

    let mut y = [0.0; BLOCK_COUNT];
    let mut passive: Vec<usize> = Vec::new();

    let warm_y = to_substituted(warm);
    let top = warm_y.iter().copied().fold(0.0, f64::max);
    let support: Vec<usize> = (0..BLOCK_COUNT)
        .filter(|&j| usable[j] && warm_y[j] > 1e-9 * top)
        .collect();
    let start = independent_subset(&cols, &support);
    if !start.is_empty() {
        let z = passive_least_squares(&cols, &c, &start);
        if z.iter().all(|&v| v > 0.0) {
            for (&j, &v) in start.iter().zip(&z) {
                y[j] = v;
            }
            passive = start;
        }
    }

    let residual = |y: &[f64; BLOCK_COUNT]| -> [f64; METRIC_COUNT] {
        std::array::from_fn(|i| c[i] - (0..BLOCK_COUNT).map(|j| cols[j][i] * y[j]).sum::<f64>())
    };

    for _ in 0..(3 * BLOCK_COUNT * BLOCK_COUNT) {
        let r = residual(&y);
        let dual: Vec<f64> = (0..BLOCK_COUNT)
            .map(|j| (0..METRIC_COUNT).map(|i| cols[j][i] * r[i]).sum())
            .collect();
        let entering = (0..BLOCK_COUNT)
            .filter(|&j| usable[j] && !passive.contains(&j) && dual[j] > tol)
            .max_by(|&p, &q| dual[p].total_cmp(&dual[q]).then(q.cmp(&p)));
        let Some(entering) = entering else {
            break;
        };
        passive.push(entering);
        passive.sort_unstable();

        loop {
            let z = passive_least_squares(&cols, &c, &passive);
            if z.iter().all(|&v| v > 0.0) {
                y = [0.0; BLOCK_COUNT];
                for (&j, &v) in passive.iter().zip(&z) {
                    y[j] = v;
                }
                break;
            }
            // Step toward z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            for (&j, &v) in passive.iter().zip(&z) {
                if v <= 0.0 {
                    alpha = alpha.min(y[j] / (y[j] - v));
                }
            }
            for (&j, &v) in passive.iter().zip(&z) {
                y[j] += alpha * (v - y[j]);
            }
            let before = passive.len();
            passive.retain(|&j| y[j] > 1e-15 * top.max(1e-300) && y[j] > 0.0);
            for j in 0..BLOCK_COUNT {
                if !passive.contains(&j) {
                    y[j] = 0.0;
                }
            }
            if passive.is_empty() || passive.len() == before {
                // Degenerate step; drop the most negative coordinate.
                if let Some((k, _)) = passive
                    .iter()
                    .zip(&z)
                    .enumerate()
                    .min_by(|a, b| a.1 .1.total_cmp(b.1 .1))
                {
                    let j = passive.remove(k);
                    y[j] = 0.0;
                }
                if passive.is_empty() {
                    break;
                }
            }
        }
    }
    from_substituted(&y)
}

/// Scale-free KKT violation of `x` for the masked problem.
///
/// Each coordinate's violation is divided by `2 ||A_j|| max(||c||, 1)`, the
/// largest gradient component a unit residual can produce, so the value is
/// invariant under rescaling `t`.
pub fn kkt_residual(b: &BlockMatrix, t: &MetricVector, x: &[f64; BLOCK_COUNT], mask: &BlockMask) -> f64 {
    let w = Weighted::new(b, t);
    let g = w.gradient(x);
    let looped: f64 = x[..LOOPED_BLOCKS].iter().sum();
    let slack = x[OVERHEAD_BLOCK] - looped;
    let tight = mask[OVERHEAD_BLOCK] && slack <= 1e-9 * x[OVERHEAD_BLOCK].max(1e-300);

    // Coupling multiplier: stationarity gives g_j = -mu for looped blocks in
    // use and g_11 = mu when block 11 is in use.
    let mu = if tight {
        let mut estimates: Vec<f64> = (0..LOOPED_BLOCKS)
            .filter(|&j| mask[j] && x[j] > 0.0)
            .map(|j| -g[j])
            .collect();
        if x[OVERHEAD_BLOCK] > 0.0 {
            estimates.push(g[OVERHEAD_BLOCK]);
        }
        if estimates.is_empty() {
            (0..LOOPED_BLOCKS)
                .filter(|&j| mask[j])
                .map(|j| -g[j])
                .fold(0.0, f64::max)
        } else {
            (estimates.iter().sum::<f64>() / estimates.len() as f64).max(0.0)
        }
    } else {
        0.0
    };

    let scale = 2.0 * w.c_norm().max(1.0);
    let mut worst = 0.0f64;
    for j in 0..BLOCK_COUNT {
        if !mask[j] {
            continue;
        }
        let norm = w.column_norm(j);
        if norm == 0.0 {
            continue;
        }
        let lambda = if j < LOOPED_BLOCKS {
            g[j] + mu
        } else if j == OVERHEAD_BLOCK {
            g[j] - mu
        } else {
            g[j]
        };
        let violation = if x[j] > 0.0 { lambda.abs() } else { (-lambda).max(0.0) };
        worst = worst.max(violation / (norm * scale));
    }
    worst
}

/// Evaluates an integer point after raising block 11 to cover the loops.
fn repaired(x: &mut [u64; BLOCK_COUNT], mask: &BlockMask) {
    let looped: u64 = x[..LOOPED_BLOCKS].iter().sum();
    if mask[OVERHEAD_BLOCK] {
        x[OVERHEAD_BLOCK] = x[OVERHEAD_BLOCK].max(looped);
    }
}

/// Moves coordinate `k` to the best integer on its line, holding the others.
fn best_on_line(
    b: &BlockMatrix,
    t: &MetricVector,
    d: &[f64; METRIC_COUNT],
    x: &mut [u64; BLOCK_COUNT],
    k: usize,
    mask: &BlockMask,
) {
    let bx = b.apply_counts(x);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..METRIC_COUNT {
        let a = b.rows[i][k] / d[i];
        num += a * (t.0[i] - bx[i]) / d[i];
        den += a * a;
    }
    if den == 0.0 {
        return;
    }
    let looped: u64 = x[..LOOPED_BLOCKS].iter().sum();
    let lo = if k == OVERHEAD_BLOCK && mask[OVERHEAD_BLOCK] {
        looped as f64
    } else {
        0.0
    };
    let target = (x[k] as f64 + num / den).max(lo);
    let mut best = (f64::INFINITY, x[k]);
    for v in [target.floor(), target.ceil()] {
        let mut cand = *x;
        cand[k] = v.max(0.0) as u64;
        repaired(&mut cand, mask);
        let f = integer_objective(b, t, &cand);
        if f < best.0 {
            best = (f, cand[k]);
        }
    }
    x[k] = best.1;
}

fn integer_objective(b: &BlockMatrix, t: &MetricVector, x: &[u64; BLOCK_COUNT]) -> f64 {
    objective(b, t, &x.map(|v| v as f64))
}

/// Rounds a continuous solution to a feasible integer combination.
pub fn round_combination(b: &BlockMatrix, t: &MetricVector, x: &[f64; BLOCK_COUNT]) -> ProxyCombination {
    round_combination_masked(b, t, x, &ALL_BLOCKS)
}

/// Enumerates floor/ceil for coordinates with a fractional part in
/// (0.01, 0.99) (at most 12, largest fractions first), rounds the rest to
/// nearest, repairs the coupling by raising block 11, then improves the best
/// candidate until no move lowers the objective. A move either re-fits one
/// coordinate to its best integer value, or steps one coordinate by one and
/// optionally re-fits a second.
pub fn round_combination_masked(
    b: &BlockMatrix,
    t: &MetricVector,
    x: &[f64; BLOCK_COUNT],
    mask: &BlockMask,
) -> ProxyCombination {
    let mut base = [0u64; BLOCK_COUNT];
    let mut ambiguous: Vec<(usize, f64)> = Vec::new();
    for j in 0..BLOCK_COUNT {
        if !mask[j] {
            continue;
        }
        let v = x[j].max(0.0);
        let frac = v - v.floor();
        base[j] = v.round() as u64;
        if frac > 0.01 && frac < 0.99 {
            ambiguous.push((j, frac));
        }
    }
    ambiguous.sort_by(|p, q| q.1.total_cmp(&p.1).then(p.0.cmp(&q.0)));
    ambiguous.truncate(MAX_ROUNDING_COORDS);

    let mut best = base;
    repaired(&mut best, mask);
    let mut best_f = integer_objective(b, t, &best);
    for bits in 0u32..(1 << ambiguous.len()) {
        let mut cand = base;
        for (k, &(j, _)) in ambiguous.iter().enumerate() {
            let v = x[j].max(0.0);
            cand[j] = if bits & (1 << k) != 0 { v.ceil() } else { v.floor() } as u64;
        }
        repaired(&mut cand, mask);
        let f = integer_objective(b, t, &cand);
        if f < best_f {
            best_f = f;
            best = cand;
        }
    }

    let free: Vec<usize> = (0..BLOCK_COUNT).filter(|&j| mask[j]).collect();
    let mut moves: Vec<(usize, i64, Option<usize>)> = Vec::new();
    for &j in &free {
        moves.push((j, 0, None));
        for d in [1, -1] {
            moves.push((j, d, None));
            for &k in &free {
                if k != j {
                    moves.push((j, d, Some(k)));
                }
            }
        }
    }
    let d = denominators(t);
    for _ in 0..10_000 {
        let mut improved = false;
        for &(j, step, refit) in &moves {
            let mut cand = best;
            match cand[j].checked_add_signed(step) {
                Some(v) => cand[j] = v,
                None => continue,
            }
            // A zero step re-fits `j` itself.
            let line = if step == 0 { Some(j) } else { refit };
            if let Some(k) = line {
                best_on_line(b, t, &d, &mut cand, k, mask);
            }
            repaired(&mut cand, mask);
            let f = integer_objective(b, t, &cand);
            if f < best_f * (1.0 - 1e-12) {
                best_f = f;
                best = cand;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }

    let xf = best.map(|v| v as f64);
    ProxyCombination {
        counts: best,
        target: *t,
        residual: best_f,
        relative_errors: relative_errors(b, t, &xf),
    }
}

/// Solves for `t / scale` and rounds.
pub fn synthesize_compute_terminal(
    t: &MetricVector,
    b: &BlockMatrix,
    scale: f64,
) -> Result<ProxyCombination, SolverError> {
    if !scale.is_finite() || scale < 1.0 {
        return Err(SolverError::BadScale(scale));
    }
    let target = t.scaled_down(scale);
    let x = solve_qp(b, &target)?;
    Ok(round_combination(b, &target, &x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> BlockMatrix {
        include_str!("../fixtures/block_matrix.txt").parse().unwrap()
    }

    #[test]
    fn fixture_parses_and_satisfies_invariants() {
        let b = fixture();
        for j in 0..BLOCK_COUNT {
            assert!(b.get(1, j) > 0.0);
            assert!(b.get(0, j) >= b.get(4, j), "INS >= BR_CN for block {}", j + 1);
            assert!(b.get(4, j) >= b.get(5, j), "BR_CN >= MSP for block {}", j + 1);
            assert!(b.get(2, j) >= b.get(3, j), "LST >= L1_DCM for block {}", j + 1);
        }
        let again: BlockMatrix = b.to_string().parse().unwrap();
        assert_eq!(again, b);
    }

    #[test]
    fn block_matrix_parse_errors() {
        assert!(matches!("1 2 3".parse::<BlockMatrix>(), Err(SolverError::Parse { line: 1, .. })));
        let zero_cycles = "1 1 1 1 1 1 1 1 1 1 1\n".to_string()
            + "0 1 1 1 1 1 1 1 1 1 1\n"
            + &"1 1 1 1 1 1 1 1 1 1 1\n".repeat(4);
        assert!(matches!(
            zero_cycles.parse::<BlockMatrix>(),
            Err(SolverError::BadEntry { row: 1, col: 0, .. })
        ));
    }

    #[test]
    fn projection_is_feasible_and_idempotent() {
        let z = [3.0, -1.0, 2.0, 0.5, 0.0, 1.0, 4.0, 0.0, 0.0, 2.0, 1.0];
        let y = project_feasible(&z, &ALL_BLOCKS);
        assert!(is_feasible(&y, &ALL_BLOCKS));
        let looped: f64 = y[..LOOPED_BLOCKS].iter().sum();
        assert!((y[OVERHEAD_BLOCK] - looped).abs() < 1e-12);
        assert_eq!(project_feasible(&y, &ALL_BLOCKS), y);
    }

    #[test]
    fn projection_matches_variational_inequality() {
        // For a convex set, (z - P z) . (v - P z) <= 0 for every feasible v.
        let mut state = 7u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 10.0 - 5.0
        };
        for _ in 0..200 {
            let z: [f64; BLOCK_COUNT] = std::array::from_fn(|_| rnd());
            let p = project_feasible(&z, &ALL_BLOCKS);
            assert!(is_feasible(&p, &ALL_BLOCKS));
            for _ in 0..20 {
                let v = project_feasible(&std::array::from_fn(|_| rnd()), &ALL_BLOCKS);
                let ip: f64 = (0..BLOCK_COUNT).map(|j| (z[j] - p[j]) * (v[j] - p[j])).sum();
                assert!(ip <= 1e-9, "{ip}");
            }
        }
    }

    #[test]
    fn integral_input_is_unchanged_by_rounding() {
        let b = fixture();
        let x = [3.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 5.0, 6.0];
        let t = MetricVector(b.apply(&x));
        let c = round_combination(&b, &t, &x);
        assert_eq!(c.counts, [3, 0, 1, 0, 0, 2, 0, 0, 0, 5, 6]);
        assert!(c.residual < 1e-20);
    }

    #[test]
    fn rounding_repairs_coupling() {
        let b = fixture();
        let x = [5.3, 5.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.6];
        let t = MetricVector(b.apply(&x));
        let c = round_combination(&b, &t, &x);
        let looped: u64 = c.counts[..LOOPED_BLOCKS].iter().sum();
        assert!(c.counts[OVERHEAD_BLOCK] >= looped);
    }

    #[test]
    fn overhead_only_target() {
        let b = fixture();
        let mut x = [0.0; BLOCK_COUNT];
        x[OVERHEAD_BLOCK] = 100.0;
        let t = MetricVector(b.apply(&x));
        let c = synthesize_compute_terminal(&t, &b, 1.0).unwrap();
        assert_eq!(c.counts, [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 100]);
        assert_eq!(c.spare_overhead(), 100);
    }

    #[test]
    fn bad_inputs() {
        let b = fixture();
        let t = MetricVector([1.0, f64::NAN, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(solve_qp(&b, &t), Err(SolverError::NonFinite("target")));
        let t = MetricVector([1.0, -2.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(solve_qp(&b, &t), Err(SolverError::NegativeTarget { .. })));
        let t = MetricVector([1.0; 6]);
        assert_eq!(
            synthesize_compute_terminal(&t, &b, 0.5),
            Err(SolverError::BadScale(0.5))
        );
    }

    #[test]
    fn zero_target_gives_zero_combination() {
        let b = fixture();
        let t = MetricVector([0.0; METRIC_COUNT]);
        let c = synthesize_compute_terminal(&t, &b, 1.0).unwrap();
        assert_eq!(c.counts, [0; BLOCK_COUNT]);
    }
}
