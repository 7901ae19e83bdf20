use std::fmt;
use std::str::FromStr;

/// A set of ranks stored as sorted, disjoint, non-adjacent inclusive
/// intervals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RankList {
    intervals: Vec<(u32, u32)>,
}

impl RankList {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(rank: u32) -> Self {
        RankList {
            intervals: vec![(rank, rank)],
        }
    }

    pub fn range(lo: u32, hi: u32) -> Self {
        assert!(lo <= hi, "empty range {lo}..={hi}");
        RankList {
            intervals: vec![(lo, hi)],
        }
    }

    /// All ranks `0..world_size`.
    pub fn full(world_size: u32) -> Self {
        if world_size == 0 {
            Self::empty()
        } else {
            Self::range(0, world_size - 1)
        }
    }

    pub fn from_intervals(mut intervals: Vec<(u32, u32)>) -> Self {
        intervals.retain(|&(lo, hi)| lo <= hi);
        intervals.sort_unstable();
        let mut out: Vec<(u32, u32)> = Vec::with_capacity(intervals.len());
        for (lo, hi) in intervals {
            match out.last_mut() {
                Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        RankList { intervals: out }
    }

    pub fn intervals(&self) -> &[(u32, u32)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn len(&self) -> u64 {
        self.intervals
            .iter()
            .map(|&(lo, hi)| (hi - lo) as u64 + 1)
            .sum()
    }

    pub fn contains(&self, rank: u32) -> bool {
        let idx = self.intervals.partition_point(|&(_, hi)| hi < rank);
        self.intervals
            .get(idx)
            .is_some_and(|&(lo, hi)| lo <= rank && rank <= hi)
    }

    pub fn union(&self, other: &RankList) -> RankList {
        let mut all = self.intervals.clone();
        all.extend_from_slice(&other.intervals);
        Self::from_intervals(all)
    }

    pub fn is_full(&self, world_size: u32) -> bool {
        world_size > 0 && self.intervals == [(0, world_size - 1)]
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.intervals.iter().flat_map(|&(lo, hi)| lo..=hi)
    }
}

impl FromIterator<u32> for RankList {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        Self::from_intervals(iter.into_iter().map(|r| (r, r)).collect())
    }
}

/// Written as `0-3,5,7-9`.
impl fmt::Display for RankList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &(lo, hi)) in self.intervals.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            if lo == hi {
                write!(f, "{lo}")?;
            } else {
                write!(f, "{lo}-{hi}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for RankList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut intervals = Vec::new();
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let parse = |v: &str| {
                v.parse::<u32>()
                    .map_err(|_| format!("bad rank `{v}` in `{s}`"))
            };
            let (lo, hi) = match part.split_once('-') {
                Some((lo, hi)) => (parse(lo)?, parse(hi)?),
                None => {
                    let r = parse(part)?;
                    (r, r)
                }
            };
            if lo > hi {
                return Err(format!("descending interval `{part}`"));
            }
            intervals.push((lo, hi));
        }
        Ok(Self::from_intervals(intervals))
    }
}
