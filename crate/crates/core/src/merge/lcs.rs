//! Sequence alignment primitives used when merging main rules.

/// Matched index pairs of a longest common subsequence of `a` and `b`,
/// in increasing order.
///
/// Common prefixes and suffixes are stripped first; the middle is solved
/// with Hirschberg's divide and conquer, which needs linear space and
/// quadratic time.
pub fn lcs_pairs<T: Eq>(a: &[T], b: &[T]) -> Vec<(usize, usize)> {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..]
        .iter()
        .rev()
        .zip(b[prefix..].iter().rev())
        .take_while(|(x, y)| x == y)
        .count();

    let mut out: Vec<(usize, usize)> = (0..prefix).map(|i| (i, i)).collect();
    hirschberg(
        &a[prefix..a.len() - suffix],
        &b[prefix..b.len() - suffix],
        prefix,
        prefix,
        &mut out,
    );
    let (sa, sb) = (a.len() - suffix, b.len() - suffix);
    out.extend((0..suffix).map(|k| (sa + k, sb + k)));
    out
}

fn hirschberg<T: Eq>(a: &[T], b: &[T], a_off: usize, b_off: usize, out: &mut Vec<(usize, usize)>) {
    if a.is_empty() || b.is_empty() {
        return;
    }
    if a.len() == 1 {
        if let Some(j) = b.iter().position(|y| *y == a[0]) {
            out.push((a_off, b_off + j));
        }
        return;
    }
    if b.len() == 1 {
        if let Some(i) = a.iter().position(|x| *x == b[0]) {
            out.push((a_off + i, b_off));
        }
        return;
    }
    let mid = a.len() / 2;
    let forward = lcs_row(a[..mid].iter(), b.iter(), b.len());
    let backward = lcs_row(a[mid..].iter().rev(), b.iter().rev(), b.len());
    let split = (0..=b.len())
        .max_by_key(|&j| (forward[j] + backward[b.len() - j], std::cmp::Reverse(j)))
        .unwrap_or(0);
    hirschberg(&a[..mid], &b[..split], a_off, b_off, out);
    hirschberg(&a[mid..], &b[split..], a_off + mid, b_off + split, out);
}

/// Last row of the LCS length table: `row[j]` = LCS length of `a` and the
/// first `j` items of `b`.
fn lcs_row<'a, T: Eq + 'a>(
    a: impl Iterator<Item = &'a T>,
    b: impl Iterator<Item = &'a T> + Clone,
    b_len: usize,
) -> Vec<usize> {
    let mut row = vec![0usize; b_len + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.clone().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row
}

/// Levenshtein distance with unit costs.
pub fn levenshtein<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(x != y)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// Levenshtein distance if it is at most `bound`, computed on a diagonal
/// band of width `2 * bound + 1`.
pub fn levenshtein_within<T: Eq>(a: &[T], b: &[T], bound: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > bound {
        return None;
    }
    let inf = usize::MAX / 2;
    let n = b.len();
    let mut prev = vec![inf; n + 1];
    let mut cur = vec![inf; n + 1];
    for (j, slot) in prev.iter_mut().enumerate().take(bound.min(n) + 1) {
        *slot = j;
    }
    for i in 1..=a.len() {
        let lo = i.saturating_sub(bound);
        let hi = (i + bound).min(n);
        if lo > 0 {
            cur[lo - 1] = inf;
        }
        if lo == 0 {
            cur[0] = i;
        }
        let mut best = if lo == 0 { i } else { inf };
        for j in lo.max(1)..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = prev[j] + 1;
            let ins = cur[j - 1] + 1;
            cur[j] = sub.min(del).min(ins);
            best = best.min(cur[j]);
        }
        if hi < n {
            cur[hi + 1] = inf;
        }
        if best > bound {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[n];
    (d <= bound).then_some(d)
}
