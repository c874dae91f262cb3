//! Top-k ranking and the Recall@n / NDCG@n metrics.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SplitDataset, UserSplit};
use crate::error::{Error, Result};
use crate::recommender::Scorer;

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

/// Which items a user's held-out positives are ranked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CandidateMode {
    /// Every item the user has no other known positive for.
    Full,
    /// The held-out positives plus this many sampled non-positives.
    Sampled(usize),
}

impl fmt::Display for CandidateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateMode::Full => f.write_str("full"),
            CandidateMode::Sampled(n) => write!(f, "sampled:{n}"),
        }
    }
}

impl From<CandidateMode> for String {
    fn from(m: CandidateMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for CandidateMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for CandidateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(CandidateMode::Full);
        }
        s.strip_prefix("sampled:")
            .and_then(|n| n.parse().ok())
            .filter(|&n: &usize| n > 0)
            .map(CandidateMode::Sampled)
            .ok_or_else(|| Error::Config(format!("bad candidate mode {s:?} (expected full|sampled:N)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalTarget {
    /// Training positives, for fit diagnostics.
    Train,
    Validation,
    Test,
}

impl EvalTarget {
    pub fn relevant(self, s: &UserSplit) -> &[u32] {
        match self {
            EvalTarget::Train => &s.train,
            EvalTarget::Validation => &s.val,
            EvalTarget::Test => &s.test,
        }
    }

    fn stream(self) -> u64 {
        match self {
            EvalTarget::Train => 0xCA4D_0000,
            EvalTarget::Validation => 0xCA4D_0001,
            EvalTarget::Test => 0xCA4D_0002,
        }
    }
}

/// Items in descending score order; equal scores fall back to ascending
/// item index. NaN scores sort last.
pub fn rank_by_scores(items: &[u32], scores: &[f64]) -> Vec<u32> {
    let mut order: Vec<(u32, f64)> = items
        .iter()
        .zip(scores)
        .map(|(&i, &s)| (i, if s.is_nan() { f64::NEG_INFINITY } else { s }))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(i, _)| i).collect()
}

/// Ranks `candidates` for `user` by the scorer.
pub fn rank_items<S: Scorer + ?Sized>(scorer: &S, user: usize, candidates: &[u32]) -> Result<Vec<u32>> {
    if candidates.is_empty() {
        return Err(Error::invalid("rank_items", "empty candidate set"));
    }
    let idx: Vec<usize> = candidates.iter().map(|&i| i as usize).collect();
    let scores = scorer.score_items(user, &idx)?;
    Ok(rank_by_scores(candidates, &scores))
}

// Zero-based positions of relevant items in the top `n`; `rel` is sorted.
fn hits(ranking: &[u32], rel: &[u32], n: usize) -> Vec<usize> {
    ranking
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| rel.binary_search(i).is_ok())
        .map(|(r, _)| r)
        .collect()
}

/// `|top-n ∩ relevant| / |relevant|`; `None` when nothing is relevant.
pub fn recall_at_n(ranking: &[u32], relevant: &[u32], n: usize) -> Option<f64> {
    let mut rel = relevant.to_vec();
    rel.sort_unstable();
    rel.dedup();
    if rel.is_empty() || n == 0 {
        return None;
    }
    let h = hits(ranking, &rel, n).len();
    Some(h as f64 / rel.len() as f64)
}

/// Binary-relevance NDCG with gain `1 / log2(rank + 1)` (ranks from 1).
pub fn ndcg_at_n(ranking: &[u32], relevant: &[u32], n: usize) -> Option<f64> {
    let mut rel = relevant.to_vec();
    rel.sort_unstable();
    rel.dedup();
    if rel.is_empty() || n == 0 {
        return None;
    }
    let dcg: f64 = hits(ranking, &rel, n).into_iter().map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    let idcg: f64 = (1..=n.min(rel.len())).map(|r| 1.0 / ((r + 1) as f64).log2()).sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users_evaluated: usize,
    pub users_skipped: usize,
    pub candidate_mode: CandidateMode,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.recall[p])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.ndcg[p])
    }

    /// Per-metric arithmetic mean over runs; seeds are concatenated.
    pub fn mean(runs: &[EvalReport]) -> Result<EvalReport> {
        let first = runs.first().ok_or_else(|| Error::invalid("mean", "no runs"))?;
        if runs.iter().any(|r| r.ks != first.ks || r.candidate_mode != first.candidate_mode) {
            return Err(Error::invalid("mean", "runs use different k or candidate settings"));
        }
        let n = runs.len() as f64;
        let avg = |f: fn(&EvalReport) -> &Vec<f64>| -> Vec<f64> {
            (0..first.ks.len())
                .map(|j| runs.iter().map(|r| f(r)[j]).sum::<f64>() / n)
                .collect()
        };
        Ok(EvalReport {
            ks: first.ks.clone(),
            recall: avg(|r| &r.recall),
            ndcg: avg(|r| &r.ndcg),
            users_evaluated: first.users_evaluated,
            users_skipped: first.users_skipped,
            candidate_mode: first.candidate_mode,
            seeds: runs.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        })
    }
}

/// Candidate items for ranking `user`'s `target` positives: the targets plus
/// items that are not positives of the user in any part of the split.
pub fn candidates_for(split: &SplitDataset, user: usize, target: EvalTarget, mode: CandidateMode) -> Vec<u32> {
    let s = split.user(user);
    let relevant = target.relevant(s);
    match mode {
        CandidateMode::Full => {
            let mut c: Vec<u32> = (0..split.num_items() as u32).filter(|&i| !s.is_positive(i)).collect();
            c.extend_from_slice(relevant);
            c.sort_unstable();
            c
        }
        CandidateMode::Sampled(n) => {
            let pool: Vec<u32> = (0..split.num_items() as u32).filter(|&i| !s.is_positive(i)).collect();
            // seeded by the split alone so every model sees the same candidates
            let mut rng = ChaCha8Rng::seed_from_u64(crate::data::mix_seed(&[split.seed(), user as u64, target.stream()]));
            let take = n.min(pool.len());
            let mut c: Vec<u32> = index::sample(&mut rng, pool.len(), take).into_iter().map(|j| pool[j]).collect();
            c.extend_from_slice(relevant);
            c.sort_unstable();
            c
        }
    }
}

/// Averages Recall@k and NDCG@k over users with equal weight. Users whose
/// target set is empty are skipped and counted.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    split: &SplitDataset,
    ks: &[usize],
    mode: CandidateMode,
    target: EvalTarget,
) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::invalid("evaluate", format!("bad cutoffs {ks:?}")));
    }
    let max_k = *ks.iter().max().unwrap();
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    let (mut evaluated, mut skipped) = (0usize, 0usize);
    for user in 0..split.num_users() {
        let relevant = target.relevant(split.user(user));
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        let candidates = candidates_for(split, user, target, mode);
        let ranking = rank_items(scorer, user, &candidates)?;
        let top = &ranking[..ranking.len().min(max_k)];
        for (j, &k) in ks.iter().enumerate() {
            recall[j] += recall_at_n(top, relevant, k).unwrap_or(0.0);
            ndcg[j] += ndcg_at_n(top, relevant, k).unwrap_or(0.0);
        }
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::Data("no evaluable users".into()));
    }
    let n = evaluated as f64;
    Ok(EvalReport {
        ks: ks.to_vec(),
        recall: recall.into_iter().map(|v| v / n).collect(),
        ndcg: ndcg.into_iter().map(|v| v / n).collect(),
        users_evaluated: evaluated,
        users_skipped: skipped,
        candidate_mode: mode,
        seeds: Vec::new(),
    })
}

/// One line of the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub dataset: String,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub runs: usize,
    pub seed_list: String,
}

pub fn report_rows(model: &str, dataset: &str, report: &EvalReport, runs: usize) -> Vec<ReportRow> {
    let seed_list = report.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    report
        .ks
        .iter()
        .enumerate()
        .map(|(j, &k)| ReportRow {
            model: model.to_owned(),
            dataset: dataset.to_owned(),
            k,
            recall: report.recall[j],
            ndcg: report.ndcg[j],
            runs,
            seed_list: seed_list.clone(),
        })
        .collect()
}

/// Writes `model,dataset,k,recall,ndcg,runs,seed_list`.
pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Fixed-width text table of a report.
pub fn format_table(model: &str, dataset: &str, report: &EvalReport) -> String {
    let mut s = format!(
        "{model} on {dataset} ({} users, candidates {})\n{:>4}  {:>8}  {:>8}\n",
        report.users_evaluated, report.candidate_mode, "k", "recall", "ndcg"
    );
    for (j, k) in report.ks.iter().enumerate() {
        s.push_str(&format!("{k:>4}  {:>8.4}  {:>8.4}\n", report.recall[j], report.ndcg[j]));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_order_and_ties() {
        assert_eq!(rank_by_scores(&[0, 1, 2], &[0.9, 0.1, 0.5]), vec![0, 2, 1]);
        assert_eq!(rank_by_scores(&[4, 2, 9, 0], &[0.3; 4]), vec![0, 2, 4, 9]);
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_n(&[3, 1, 2], &[1, 3], 3), Some(1.0));
        assert_eq!(recall_at_n(&[1, 5, 6], &[1, 2], 3), Some(0.5));
        assert_eq!(recall_at_n(&[1], &[], 3), None);
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_n(&[7, 1, 2], &[7], 10), Some(1.0));
        let v = ndcg_at_n(&[1, 7, 2], &[7], 10).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.63093).abs() < 1e-5);
        assert_eq!(ndcg_at_n(&[1, 2, 3], &[9], 3), Some(0.0));
    }

    #[test]
    fn candidate_mode_parsing() {
        assert_eq!("full".parse::<CandidateMode>().unwrap(), CandidateMode::Full);
        assert_eq!("sampled:100".parse::<CandidateMode>().unwrap(), CandidateMode::Sampled(100));
        assert!("sampled:0".parse::<CandidateMode>().is_err());
        assert!("some".parse::<CandidateMode>().is_err());
        assert_eq!(CandidateMode::Sampled(7).to_string(), "sampled:7");
    }

    #[test]
    fn mean_of_reports() {
        let r = |v: f64, s: u64| EvalReport {
            ks: vec![5],
            recall: vec![v],
            ndcg: vec![v / 2.0],
            users_evaluated: 3,
            users_skipped: 0,
            candidate_mode: CandidateMode::Full,
            seeds: vec![s],
        };
        let m = EvalReport::mean(&[r(0.1, 1), r(0.2, 2), r(0.6, 3)]).unwrap();
        assert!((m.recall[0] - 0.3).abs() < 1e-15);
        assert_eq!(m.seeds, vec![1, 2, 3]);
    }
}
