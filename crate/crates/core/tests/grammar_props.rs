use proptest::prelude::*;
use proxysynth::grammar::{Grammar, SequiturBuilder, Symbol};

fn sequence(max_len: usize, max_alpha: u32) -> impl Strategy<Value = Vec<u32>> {
    (1..=max_alpha).prop_flat_map(move |alpha| prop::collection::vec(0..alpha, 0..max_len))
}

/// Sequences with nested repetition, closer to real traces than uniform noise.
fn looped_sequence() -> impl Strategy<Value = Vec<u32>> {
    let block = prop::collection::vec((0u32..6, 1usize..5), 1..5);
    prop::collection::vec((block, 1usize..20), 1..6).prop_map(|phases| {
        let mut out = Vec::new();
        for (body, reps) in phases {
            for _ in 0..reps {
                for &(sym, run) in &body {
                    out.extend(std::iter::repeat_n(sym, run));
                }
            }
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn invariants_hold_after_every_append(seq in sequence(120, 5)) {
        let mut b = SequiturBuilder::new();
        for (i, &t) in seq.iter().enumerate() {
            b.push(t);
            let g = b.snapshot();
            let problems = g.audit();
            prop_assert!(problems.is_empty(), "after {} appends of {:?}: {:?}", i + 1, &seq[..=i], problems);
            prop_assert_eq!(g.expand().unwrap(), seq[..=i].to_vec());
        }
    }

    #[test]
    fn lossless_on_loops(seq in looped_sequence()) {
        let g = Grammar::from_sequence(&seq);
        prop_assert!(g.audit().is_empty(), "{:?}", g.audit());
        prop_assert_eq!(g.expand().unwrap(), seq);
    }

    #[test]
    fn lossless_without_folding(seq in sequence(300, 4)) {
        let mut b = SequiturBuilder::without_run_folding();
        b.extend(seq.iter().copied());
        prop_assert_eq!(b.finish().expand().unwrap(), seq);
    }

    #[test]
    fn append_is_incremental(seq in sequence(200, 8), x in 0u32..8) {
        let mut b = SequiturBuilder::new();
        b.extend(seq.iter().copied());
        b.push(x);
        let mut full = seq.clone();
        full.push(x);
        prop_assert_eq!(b.finish(), Grammar::from_sequence(&full));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lossless_on_long_random_input(seq in (1u32..=64, 0usize..=100_000).prop_flat_map(|(alpha, len)| prop::collection::vec(0..alpha, len))) {
        let g = Grammar::from_sequence(&seq);
        prop_assert!(g.audit().is_empty());
        prop_assert_eq!(g.expand().unwrap(), seq);
    }
}

#[test]
fn runs_are_constant_size() {
    for k in 4..=20 {
        let n = 1u64 << k;
        let mut b = SequiturBuilder::new();
        b.extend(std::iter::repeat_n(9, n as usize));
        let g = b.finish();
        assert_eq!(g.size(), 1, "n = {n}");
        assert_eq!(g.main, vec![Symbol::terminal(9, n)]);
    }
}

#[test]
fn unfolded_runs_grow_logarithmically() {
    let sizes: Vec<usize> = (4..=12)
        .map(|k| {
            let mut b = SequiturBuilder::without_run_folding();
            b.extend(std::iter::repeat_n(0, 1 << k));
            b.finish().size()
        })
        .collect();
    // Each doubling adds one rule of two symbols.
    for w in sizes.windows(2) {
        assert_eq!(w[1], w[0] + 2, "{sizes:?}");
    }
}
