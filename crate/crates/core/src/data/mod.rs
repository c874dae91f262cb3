//! Rating-log ingestion, implicit conversion, per-user splitting and
//! negative sampling.

mod cache;
mod parse;
mod split;

use std::collections::HashMap;

use serde::Serialize;

pub use cache::{decode_split, encode_split, is_split_cache, load_split, save_split, CACHE_MAGIC};
pub use parse::{parse_amazon_csv, parse_amazon_str, parse_movielens, parse_movielens_str, DataFormat, ParseReport};
pub(crate) use split::mix_seed;
pub use split::{sample_negatives, split_721, split_counts, SplitDataset, UserSplit, MIN_EVAL_INTERACTIONS};

/// Bijective raw-id ↔ dense-index map. Indices follow first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    index: HashMap<String, u32>,
    raw: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    /// Dense index for `raw`, allocating the next free one if unseen.
    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw.len() as u32;
        self.index.insert(raw.to_owned(), i);
        self.raw.push(raw.to_owned());
        i
    }

    pub fn get(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, index: u32) -> Option<&str> {
        self.raw.get(index as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub timestamp: i64,
}

/// Parsed ratings with their id vocabularies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionLog {
    pub records: Vec<Record>,
    pub users: Vocab,
    pub items: Vocab,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LogStats {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    /// Percentage of the user×item matrix that is observed.
    pub density_pct: f64,
}

impl InteractionLog {
    pub fn push(&mut self, user: &str, item: &str, rating: f64, timestamp: i64) {
        let user = self.users.intern(user);
        let item = self.items.intern(item);
        self.records.push(Record {
            user,
            item,
            rating,
            timestamp,
        });
    }

    pub fn stats(&self) -> LogStats {
        let (u, i, n) = (self.users.len(), self.items.len(), self.records.len());
        let density_pct = if u == 0 || i == 0 {
            0.0
        } else {
            100.0 * n as f64 / (u as f64 * i as f64)
        };
        LogStats {
            users: u,
            items: i,
            ratings: n,
            density_pct,
        }
    }

    /// Rebuilds the log from a subset of records with compact vocabularies,
    /// preserving record order.
    fn rebuilt(&self, keep: impl Fn(&Record) -> bool) -> InteractionLog {
        let mut out = InteractionLog::default();
        for r in self.records.iter().filter(|r| keep(r)) {
            out.push(
                self.users.raw(r.user).expect("user in vocab"),
                self.items.raw(r.item).expect("item in vocab"),
                r.rating,
                r.timestamp,
            );
        }
        out
    }

    /// Keeps only the first `n` users in vocabulary order.
    pub fn restrict_users(&self, n: usize) -> InteractionLog {
        if n >= self.users.len() {
            return self.clone();
        }
        self.rebuilt(|r| (r.user as usize) < n)
    }

    /// Drops ratings below `threshold`.
    pub fn filter_min_rating(&self, threshold: f64) -> InteractionLog {
        self.rebuilt(|r| r.rating >= threshold)
    }

    /// Iterated k-core filter: repeatedly removes users with fewer than
    /// `min_user` ratings and items with fewer than `min_item` ratings until
    /// both conditions hold everywhere.
    pub fn k_core(&self, min_user: usize, min_item: usize) -> InteractionLog {
        let mut alive = vec![true; self.records.len()];
        loop {
            let mut uc = vec![0usize; self.users.len()];
            let mut ic = vec![0usize; self.items.len()];
            for (r, _) in self.records.iter().zip(&alive).filter(|(_, &a)| a) {
                uc[r.user as usize] += 1;
                ic[r.item as usize] += 1;
            }
            let mut changed = false;
            for (r, a) in self.records.iter().zip(alive.iter_mut()) {
                if *a && (uc[r.user as usize] < min_user || ic[r.item as usize] < min_item) {
                    *a = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut out = InteractionLog::default();
        for (r, _) in self.records.iter().zip(&alive).filter(|(_, &a)| a) {
            out.push(
                self.users.raw(r.user).expect("user in vocab"),
                self.items.raw(r.item).expect("item in vocab"),
                r.rating,
                r.timestamp,
            );
        }
        out
    }
}

/// Implicit positives: one entry per distinct (user, item) pair with the
/// earliest timestamp seen for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Positives {
    pub num_users: usize,
    pub num_items: usize,
    /// Per user, `(item, first timestamp)` sorted by timestamp then item.
    pub by_user: Vec<Vec<(u32, i64)>>,
}

impl Positives {
    pub fn len(&self) -> usize {
        self.by_user.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every rated pair becomes a positive regardless of its rating; duplicates
/// collapse onto the earliest timestamp.
pub fn to_implicit(log: &InteractionLog) -> Positives {
    let mut first: Vec<HashMap<u32, i64>> = vec![HashMap::new(); log.users.len()];
    for r in &log.records {
        first[r.user as usize]
            .entry(r.item)
            .and_modify(|t| *t = (*t).min(r.timestamp))
            .or_insert(r.timestamp);
    }
    let by_user = first
        .into_iter()
        .map(|m| {
            let mut v: Vec<(u32, i64)> = m.into_iter().collect();
            v.sort_by_key(|&(i, t)| (t, i));
            v
        })
        .collect();
    Positives {
        num_users: log.users.len(),
        num_items: log.items.len(),
        by_user,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_round_trip() {
        let mut v = Vocab::new();
        for raw in ["b", "a", "b", "c"] {
            v.intern(raw);
        }
        assert_eq!(v.len(), 3);
        for raw in ["a", "b", "c"] {
            assert_eq!(v.raw(v.get(raw).unwrap()), Some(raw));
        }
        assert_eq!(v.get("b"), Some(0));
    }

    #[test]
    fn implicit_collapses_duplicates_and_ignores_ratings() {
        let mut log = InteractionLog::default();
        log.push("u", "x", 1.0, 50);
        log.push("u", "y", 5.0, 10);
        log.push("u", "x", 4.0, 20);
        let pos = to_implicit(&log);
        assert_eq!(pos.len(), 2);
        assert_eq!(pos.by_user[0], vec![(1, 10), (0, 20)]);
    }

    #[test]
    fn k_core_is_iterated() {
        let mut log = InteractionLog::default();
        // u0 rates i0,i1; u1 rates i0,i1; u2 rates only i2 → dropped, then i2 empty.
        for (u, i) in [("u0", "i0"), ("u0", "i1"), ("u1", "i0"), ("u1", "i1"), ("u2", "i2"), ("u2", "i0")] {
            log.push(u, i, 3.0, 0);
        }
        let core = log.k_core(2, 2);
        assert_eq!(core.stats().users, 2);
        assert_eq!(core.stats().items, 2);
        assert_eq!(core.records.len(), 4);
    }

    #[test]
    fn density_is_ratings_over_cells() {
        let mut log = InteractionLog::default();
        log.push("a", "x", 1.0, 0);
        log.push("b", "y", 1.0, 0);
        let s = log.stats();
        assert!((s.density_pct - 50.0).abs() < 1e-12);
    }

    #[test]
    fn restrict_users_compacts_items() {
        let mut log = InteractionLog::default();
        log.push("a", "x", 1.0, 0);
        log.push("b", "y", 1.0, 0);
        log.push("a", "z", 1.0, 0);
        let r = log.restrict_users(1);
        assert_eq!(r.users.len(), 1);
        assert_eq!(r.items.len(), 2);
    }
}
