use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Positives;
use crate::error::{Error, Result};

/// Users with fewer positives than this go entirely to train.
pub const MIN_EVAL_INTERACTIONS: usize = 3;

// Keeps split shuffles independent of negative-sampling streams.
const SPLIT_STREAM: u64 = 0x5EED_5B17;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
    train_sorted: Vec<u32>,
    known_sorted: Vec<u32>,
}

impl UserSplit {
    pub fn new(train: Vec<u32>, val: Vec<u32>, test: Vec<u32>) -> Self {
        let mut train_sorted = train.clone();
        train_sorted.sort_unstable();
        let mut known_sorted: Vec<u32> = train.iter().chain(&val).chain(&test).copied().collect();
        known_sorted.sort_unstable();
        UserSplit {
            train,
            val,
            test,
            train_sorted,
            known_sorted,
        }
    }

    /// Users whose validation and test sets are non-empty take part in
    /// evaluation.
    pub fn is_evaluable(&self) -> bool {
        !self.val.is_empty() && !self.test.is_empty()
    }

    pub fn in_train(&self, item: u32) -> bool {
        self.train_sorted.binary_search(&item).is_ok()
    }

    /// Any of train, validation or test.
    pub fn is_positive(&self, item: u32) -> bool {
        self.known_sorted.binary_search(&item).is_ok()
    }

    pub fn len(&self) -> usize {
        self.known_sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known_sorted.is_empty()
    }
}

/// Per-user train/validation/test positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    users: Vec<UserSplit>,
    num_items: usize,
    seed: u64,
}

impl SplitDataset {
    pub fn from_users(users: Vec<UserSplit>, num_items: usize, seed: u64) -> Result<Self> {
        for (u, s) in users.iter().enumerate() {
            if let Some(&bad) = s.known_sorted.iter().find(|&&i| i as usize >= num_items) {
                return Err(Error::Data(format!("user {u} has item {bad} outside {num_items} items")));
            }
            if s.known_sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Data(format!("user {u} has overlapping or duplicate positives")));
            }
        }
        Ok(SplitDataset { users, num_items, seed })
    }

    pub fn users(&self) -> &[UserSplit] {
        &self.users
    }

    pub fn user(&self, u: usize) -> &UserSplit {
        &self.users[u]
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_train(&self) -> usize {
        self.users.iter().map(|u| u.train.len()).sum()
    }

    /// Keeps the first `n` users; the item space is unchanged.
    pub fn truncate_users(&self, n: usize) -> SplitDataset {
        SplitDataset {
            users: self.users.iter().take(n).cloned().collect(),
            num_items: self.num_items,
            seed: self.seed,
        }
    }

    pub fn evaluable_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.users.iter().enumerate().filter(|(_, s)| s.is_evaluable()).map(|(u, _)| u)
    }
}

/// `(train, val, test)` sizes for a user with `n` positives.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    if n < MIN_EVAL_INTERACTIONS {
        return (n, 0, 0);
    }
    let test = ((0.1 * n as f64).round() as usize).max(1);
    let val = ((0.2 * n as f64).round() as usize).max(1);
    (n - test - val, val, test)
}

pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 folded over the parts
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Shuffles each user's positives with a per-user seeded RNG, then carves
/// off test, then validation, leaving the rest for training.
pub fn split_721(positives: &Positives, seed: u64) -> SplitDataset {
    let users = positives
        .by_user
        .iter()
        .enumerate()
        .map(|(u, items)| {
            let mut items: Vec<u32> = items.iter().map(|&(i, _)| i).collect();
            let (_, v, t) = split_counts(items.len());
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, u as u64, SPLIT_STREAM]));
            items.shuffle(&mut rng);
            let test = items[..t].to_vec();
            let val = items[t..t + v].to_vec();
            let train = items[t + v..].to_vec();
            UserSplit::new(train, val, test)
        })
        .collect();
    SplitDataset {
        users,
        num_items: positives.num_items,
        seed,
    }
}

/// `count` items drawn uniformly with replacement from the items `user` has
/// no training positive for. The draw depends only on `(seed, user, step)`.
pub fn sample_negatives(split: &SplitDataset, user: usize, count: usize, seed: u64, step: u64) -> Result<Vec<u32>> {
    if count == 0 {
        return Err(Error::invalid("sample_negatives", "count must be at least 1"));
    }
    let s = split
        .users
        .get(user)
        .ok_or(Error::IdOutOfRange {
            kind: "user",
            id: user,
            size: split.num_users(),
        })?;
    let n = split.num_items;
    let positives = s.train_sorted.len();
    if positives >= n {
        return Err(Error::Data(format!("user {user} has interacted with all {n} items")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, user as u64, step]));
    let mut out = Vec::with_capacity(count);
    if positives * 2 <= n {
        while out.len() < count {
            let i = rng.random_range(0..n as u32);
            if !s.in_train(i) {
                out.push(i);
            }
        }
    } else {
        let allowed: Vec<u32> = (0..n as u32).filter(|&i| !s.in_train(i)).collect();
        for _ in 0..count {
            out.push(allowed[rng.random_range(0..allowed.len())]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positives(counts: &[usize], num_items: usize) -> Positives {
        Positives {
            num_users: counts.len(),
            num_items,
            by_user: counts
                .iter()
                .map(|&n| (0..n as u32).map(|i| (i, i as i64)).collect())
                .collect(),
        }
    }

    #[test]
    fn counts_follow_rounding_rule() {
        assert_eq!(split_counts(10), (7, 2, 1));
        assert_eq!(split_counts(3), (1, 1, 1));
        assert_eq!(split_counts(2), (2, 0, 0));
        assert_eq!(split_counts(0), (0, 0, 0));
    }

    #[test]
    fn small_users_are_train_only() {
        let split = split_721(&positives(&[2, 10], 20), 1);
        assert_eq!(split.user(0).train.len(), 2);
        assert!(!split.user(0).is_evaluable());
        assert!(split.user(1).is_evaluable());
        assert_eq!(split.evaluable_users().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn split_is_reproducible() {
        let p = positives(&[30, 12, 5], 40);
        assert_eq!(split_721(&p, 9), split_721(&p, 9));
        assert_ne!(split_721(&p, 9).user(0).train, split_721(&p, 10).user(0).train);
    }

    #[test]
    fn only_one_negative_left() {
        let p = positives(&[4], 5);
        let mut split = split_721(&p, 0);
        split.users[0] = UserSplit::new(vec![0, 1, 2, 3], vec![], vec![]);
        let draws = sample_negatives(&split, 0, 50, 3, 0).unwrap();
        assert!(draws.iter().all(|&i| i == 4));
    }

    #[test]
    fn saturated_user_is_rejected() {
        let mut split = split_721(&positives(&[3], 3), 0);
        split.users[0] = UserSplit::new(vec![0, 1, 2], vec![], vec![]);
        assert!(sample_negatives(&split, 0, 1, 0, 0).is_err());
    }

    #[test]
    fn negatives_are_deterministic_and_exclude_train() {
        let split = split_721(&positives(&[20], 100), 4);
        let a = sample_negatives(&split, 0, 200, 7, 3).unwrap();
        assert_eq!(a, sample_negatives(&split, 0, 200, 7, 3).unwrap());
        assert_ne!(a, sample_negatives(&split, 0, 200, 7, 4).unwrap());
        assert!(a.iter().all(|&i| !split.user(0).in_train(i)));
    }
}
