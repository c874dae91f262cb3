mod common;

use std::collections::HashSet;

use ctncf::data::{
    decode_split, encode_split, parse_amazon_str, parse_movielens_str, sample_negatives, split_721, split_counts,
    to_implicit, InteractionLog, Positives, SplitDataset, UserSplit, Vocab, MIN_EVAL_INTERACTIONS,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn positives_from_counts(counts: &[usize], num_items: usize, seed: u64) -> Positives {
    let mut r = common::rng(seed);
    let by_user = counts
        .iter()
        .map(|&n| {
            let mut items: Vec<u32> = (0..num_items as u32).collect();
            items.shuffle(&mut r);
            items[..n].iter().enumerate().map(|(t, &i)| (i, t as i64)).collect()
        })
        .collect();
    Positives {
        num_users: counts.len(),
        num_items,
        by_user,
    }
}

fn expected_counts(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    // round half away from zero, floored at one
    let r = |x: f64| (x + 0.5).floor() as usize;
    let test = r(0.1 * n as f64).max(1);
    let val = r(0.2 * n as f64).max(1);
    (n - test - val, val, test)
}

fn check_user(split: &UserSplit, original: &[(u32, i64)]) {
    let n = original.len();
    let (tr, va, te) = expected_counts(n);
    assert_eq!((split.train.len(), split.val.len(), split.test.len()), (tr, va, te), "n = {n}");
    let all: Vec<u32> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
    let set: HashSet<u32> = all.iter().copied().collect();
    assert_eq!(set.len(), all.len(), "parts overlap");
    let orig: HashSet<u32> = original.iter().map(|&(i, _)| i).collect();
    assert_eq!(set, orig, "coverage");
    assert_eq!(split.is_evaluable(), n >= MIN_EVAL_INTERACTIONS);
}

#[test]
fn split_protocol_over_ten_thousand_users() {
    let mut r = common::rng(77);
    let counts: Vec<usize> = (0..10_000).map(|_| r.random_range(0..60)).collect();
    let pos = positives_from_counts(&counts, 80, 1);
    let split = split_721(&pos, 123);
    assert_eq!(split.num_users(), 10_000);
    for (u, s) in split.users().iter().enumerate() {
        check_user(s, &pos.by_user[u]);
    }
}

#[test]
fn split_counts_match_direct_formula() {
    for n in 0..500 {
        assert_eq!(split_counts(n), expected_counts(n));
    }
    assert_eq!(split_counts(10), (7, 2, 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_properties(counts in prop::collection::vec(0usize..40, 1..60), seed in any::<u64>()) {
        let pos = positives_from_counts(&counts, 40, seed);
        let split = split_721(&pos, seed);
        for (u, s) in split.users().iter().enumerate() {
            check_user(s, &pos.by_user[u]);
        }
        prop_assert_eq!(split_721(&pos, seed), split);
    }

    #[test]
    fn vocab_round_trips(raw in prop::collection::vec("[a-z0-9]{1,6}", 0..50)) {
        let mut v = Vocab::new();
        let ids: Vec<u32> = raw.iter().map(|s| v.intern(s)).collect();
        for (s, &i) in raw.iter().zip(&ids) {
            prop_assert_eq!(v.raw(i), Some(s.as_str()));
            prop_assert_eq!(v.get(s), Some(i));
        }
        let distinct: HashSet<&String> = raw.iter().collect();
        prop_assert_eq!(v.len(), distinct.len());
    }

    #[test]
    fn implicit_ignores_rating_values(
        pairs in prop::collection::vec((0u8..8, 0u8..8, 1u8..=5, 0i64..100), 1..80),
        perm_seed in any::<u64>(),
    ) {
        let build = |ratings: &[u8]| {
            let mut log = InteractionLog::default();
            for (&(u, i, _, t), &r) in pairs.iter().zip(ratings) {
                log.push(&u.to_string(), &i.to_string(), r as f64, t);
            }
            to_implicit(&log)
        };
        let original: Vec<u8> = pairs.iter().map(|p| p.2).collect();
        let mut shuffled = original.clone();
        shuffled.shuffle(&mut common::rng(perm_seed));
        prop_assert_eq!(build(&original), build(&shuffled));
    }
}

#[test]
fn duplicate_pairs_keep_first_timestamp() {
    let (log, _) = parse_movielens_str("1::5::3::300\n1::5::4::100\n1::6::1::200\n").unwrap();
    let pos = to_implicit(&log);
    assert_eq!(pos.len(), 2);
    assert_eq!(pos.by_user[0], vec![(0, 100), (1, 200)]);
}

#[test]
fn out_of_range_ratings_are_malformed() {
    let text: String = (0..300).map(|i| format!("{i},b,{}.0,1\n", 1 + i % 5)).collect::<String>() + "x,y,7,1\n";
    let (_, rep) = parse_amazon_str(&text).unwrap();
    assert_eq!(rep.malformed, 1);
    assert_eq!(rep.records, 300);
}

#[test]
fn negatives_are_uniform_over_non_train_items() {
    let num_items = 50;
    let train: Vec<u32> = (0..10).collect();
    let split = SplitDataset::from_users(vec![UserSplit::new(train, vec![20], vec![30])], num_items, 0).unwrap();
    let draws = sample_negatives(&split, 0, 100_000, 9, 0).unwrap();
    let mut counts = vec![0usize; num_items];
    for &i in &draws {
        counts[i as usize] += 1;
    }
    assert!(counts[..10].iter().all(|&c| c == 0));
    // validation and test items stay eligible
    let (n, k) = (draws.len() as f64, 40.0);
    let (mean, sd) = (n / k, (n * (1.0 / k) * (1.0 - 1.0 / k)).sqrt());
    for &c in &counts[10..] {
        assert!((c as f64 - mean).abs() <= 3.0 * sd + 1e-9, "count {c} vs {mean} ± {}", 3.0 * sd);
    }
}

#[test]
fn dense_user_falls_back_to_enumeration() {
    let train: Vec<u32> = (0..45).collect();
    let split = SplitDataset::from_users(vec![UserSplit::new(train, vec![], vec![])], 50, 0).unwrap();
    let draws = sample_negatives(&split, 0, 5_000, 1, 2).unwrap();
    let seen: HashSet<u32> = draws.iter().copied().collect();
    assert_eq!(seen, (45..50).collect());
}

#[test]
fn cache_round_trip_and_corruption() {
    let pos = positives_from_counts(&[5, 0, 12, 2, 30], 40, 3);
    let split = split_721(&pos, 8);
    let bytes = encode_split(&split);
    assert_eq!(decode_split(&bytes).unwrap(), split);
    assert!(decode_split(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_split(&extra).is_err());
    let mut bad = bytes;
    bad[0] = b'X';
    assert!(decode_split(&bad).is_err());
}

#[test]
fn overlapping_parts_are_rejected() {
    let users = vec![UserSplit::new(vec![1, 2], vec![2], vec![3])];
    assert!(SplitDataset::from_users(users, 5, 0).is_err());
    let users = vec![UserSplit::new(vec![1, 9], vec![], vec![])];
    assert!(SplitDataset::from_users(users, 5, 0).is_err());
}
