//! Loss, Adam, L2 regularization, the epoch loop with early stopping,
//! checkpoints and the multi-seed driver.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::baselines::Popularity;
use crate::data::{mix_seed, sample_negatives, SplitDataset};
use crate::error::{Error, Result};
use crate::kernels;
use crate::metrics::{evaluate, CandidateMode, EvalReport, EvalTarget};
use crate::params::{ParamStore, RegGroup};
use crate::recommender::{AnyModel, ModelConfig, ModelKind, Trainable};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const NEGATIVE_STREAM: u64 = 0x4E47_0001;
const SHUFFLE_STREAM: u64 = 0x5348_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2_mf: f64,
    pub l2_cnn: f64,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Candidate set for the per-epoch validation NDCG@10.
    pub val_candidates: CandidateMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            l2_mf: 0.0,
            l2_cnn: 0.01,
            negatives_per_positive: 4,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            val_candidates: CandidateMode::Full,
        }
    }
}

impl TrainConfig {
    /// `lr` may be zero to freeze the weights; everything else must be positive.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(self.l2_mf >= 0.0 && self.l2_cnn >= 0.0) {
            return bad("l2 coefficients must be non-negative");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        Ok(())
    }
}

/// Pointwise log loss with the score clamped away from 0 and 1.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    kernels::bce(score, label)
}

fn l2_coeff(group: RegGroup, l2_mf: f64, l2_cnn: f64) -> f64 {
    match group {
        RegGroup::Mf => l2_mf,
        RegGroup::Cnn => l2_cnn,
        RegGroup::Free => 0.0,
    }
}

/// `l2_mf·‖MF embeddings‖² + l2_cnn·‖CNN branch‖²`.
pub fn l2_penalty(params: &ParamStore, l2_mf: f64, l2_cnn: f64) -> f64 {
    params
        .iter()
        .map(|(_, p)| {
            let c = l2_coeff(p.group, l2_mf, l2_cnn);
            if c == 0.0 {
                0.0
            } else {
                c * p.tensor.sum_squares()
            }
        })
        .sum()
}

/// Adds the gradient of [`l2_penalty`] into `grads`.
pub fn add_l2_grads(params: &ParamStore, grads: &mut [Option<Vec<f64>>], l2_mf: f64, l2_cnn: f64) {
    for ((_, p), g) in params.iter().zip(grads.iter_mut()) {
        let c = l2_coeff(p.group, l2_mf, l2_cnn);
        if c == 0.0 {
            continue;
        }
        let g = g.get_or_insert_with(|| vec![0.0; p.tensor.len()]);
        for (gi, &x) in g.iter_mut().zip(p.tensor.data()) {
            *gi += 2.0 * c * x;
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    active: Vec<bool>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Adam {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            v: zeros.clone(),
            m: zeros,
            active: vec![false; params.len()],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. `None` gradients count as zero.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![self.m.len()],
                rhs: vec![grads.len()],
            });
        }
        for ((_, p), g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.tensor.len() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        lhs: p.tensor.shape().to_vec(),
                        rhs: vec![g.len()],
                    });
                }
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (j, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if g.is_none() && !self.active[j] {
                continue;
            }
            self.active[j] = true;
            let (m, v) = (&mut self.m[j], &mut self.v[j]);
            let data = p.tensor.data_mut();
            for k in 0..data.len() {
                let gk = g.as_ref().map_or(0.0, |g| g[k]);
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One `(user, item, label)` training pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub user: usize,
    pub item: usize,
    pub label: f64,
}

/// The shuffled positives and freshly drawn negatives for `epoch` (from 1).
pub fn epoch_examples(split: &SplitDataset, config: &TrainConfig, epoch: usize) -> Result<Vec<Example>> {
    let neg_seed = mix_seed(&[config.seed, NEGATIVE_STREAM]);
    let mut out = Vec::with_capacity(split.num_train() * (1 + config.negatives_per_positive));
    for (u, s) in split.users().iter().enumerate() {
        if s.train.is_empty() {
            continue;
        }
        let negs = sample_negatives(split, u, s.train.len() * config.negatives_per_positive, neg_seed, epoch as u64)?;
        out.extend(s.train.iter().map(|&i| Example {
            user: u,
            item: i as usize,
            label: 1.0,
        }));
        out.extend(negs.into_iter().map(|i| Example {
            user: u,
            item: i as usize,
            label: 0.0,
        }));
    }
    if out.is_empty() {
        return Err(Error::Data("split has no training positives".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, epoch as u64, SHUFFLE_STREAM]));
    out.shuffle(&mut rng);
    Ok(out)
}

fn batch_loss<'p>(model: &dyn Trainable, tape: &mut Tape<'p>, batch: &[Example]) -> Result<Var> {
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let z = model.logit(tape, ex.user, ex.item)?;
        let s = tape.sigmoid(z);
        losses.push(tape.bce(s, ex.label));
    }
    tape.mean_of(&losses)
}

/// Mean BCE over `examples` without updating anything.
pub fn mean_bce(model: &dyn Trainable, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("mean_bce", "no examples"));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(256) {
        let mut tape = Tape::new(model.params());
        let loss = batch_loss(model, &mut tape, chunk)?;
        total += tape.scalar(loss) * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean BCE over the epoch's examples, regularizer excluded.
    pub loss: f64,
    pub val_ndcg10: f64,
    pub elapsed_s: f64,
}

/// Appends rows to a `epoch,loss,val_ndcg10,elapsed_s` CSV, writing the
/// header only when the file is new or empty.
pub fn append_log_csv(path: impl AsRef<Path>, rows: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AnyModel,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub epochs_run: usize,
}

pub fn train(config: &ModelConfig, split: &SplitDataset, tc: &TrainConfig) -> Result<TrainOutcome> {
    train_logged(config, split, tc, &mut |_| Ok(()))
}

/// Trains from a fresh model seeded by `tc.seed` and returns the parameters
/// of the epoch with the highest validation NDCG@10. `on_epoch` sees each
/// log row as soon as it is produced.
pub fn train_logged(
    config: &ModelConfig,
    split: &SplitDataset,
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    let start = Instant::now();
    if config.kind == ModelKind::Popularity {
        let model = AnyModel::Popularity(Popularity::fit(split));
        let ndcg = evaluate(&model, split, &[10], tc.val_candidates, EvalTarget::Validation)?.ndcg[0];
        let row = EpochLog {
            epoch: 0,
            loss: 0.0,
            val_ndcg10: ndcg,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row)?;
        let checkpoint = Checkpoint::capture(config, &model, tc.seed, 0, ndcg);
        return Ok(TrainOutcome {
            model,
            checkpoint,
            log: vec![row],
            epochs_run: 0,
        });
    }

    let model = AnyModel::build(config, split.num_users(), split.num_items(), tc.seed)?;
    fit_model(config, model, split, tc, on_epoch)
}

/// The epoch loop of [`train_logged`] starting from an existing model.
pub fn fit_model(
    config: &ModelConfig,
    mut model: AnyModel,
    split: &SplitDataset,
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if model.trainable().is_none() {
        return Err(Error::Config(format!("{} has no trainable parameters", model.kind())));
    }
    let start = Instant::now();
    let mut adam = Adam::new(model.params(), tc.lr);
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=tc.max_epochs {
        let examples = epoch_examples(split, tc, epoch)?;
        let mut total = 0.0;
        for (b, batch) in examples.chunks(tc.batch_size).enumerate() {
            let net = model.trainable().expect("trainable kind");
            let mut tape = Tape::new(net.params());
            let loss = batch_loss(net, &mut tape, batch)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += value * batch.len() as f64;
            tape.backward(loss)?;
            let mut grads = tape.take_param_grads();
            drop(tape);
            add_l2_grads(model.params(), &mut grads, tc.l2_mf, tc.l2_cnn);
            adam.step(model.params_mut(), &grads)?;
        }
        epochs_run = epoch;
        let ndcg = evaluate(&model, split, &[10], tc.val_candidates, EvalTarget::Validation)?.ndcg[0];
        let row = EpochLog {
            epoch,
            loss: total / examples.len() as f64,
            val_ndcg10: ndcg,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row)?;
        log.push(row);
        if best.as_ref().is_none_or(|b| ndcg > b.1) {
            best = Some((epoch, ndcg, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break;
            }
        }
    }
    let (best_epoch, best_ndcg, params) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    let checkpoint = Checkpoint::capture(config, &model, tc.seed, best_epoch, best_ndcg);
    Ok(TrainOutcome {
        model,
        checkpoint,
        log,
        epochs_run,
    })
}

/// Test-set results of several independently seeded runs.
#[derive(Debug, Clone)]
pub struct SeedRuns {
    pub mean: EvalReport,
    pub runs: Vec<EvalReport>,
    pub checkpoints: Vec<Checkpoint>,
    /// Attention evaluations summed over every run's training and testing.
    pub attention_calls: u64,
}

/// Trains and test-evaluates once per seed (concurrently) and averages.
pub fn run_seeds(
    config: &ModelConfig,
    split: &SplitDataset,
    tc: &TrainConfig,
    seeds: &[u64],
    ks: &[usize],
    mode: CandidateMode,
) -> Result<SeedRuns> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds".into()));
    }
    let results: Vec<Result<(EvalReport, Checkpoint, u64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let tc = TrainConfig { seed, ..tc.clone() };
                    let out = train(config, split, &tc)?;
                    let mut report = evaluate(&out.model, split, ks, mode, EvalTarget::Test)?;
                    report.seeds = vec![seed];
                    Ok((report, out.checkpoint, out.model.attention_calls()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut runs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut attention_calls = 0;
    for r in results {
        let (report, ck, calls) = r?;
        runs.push(report);
        checkpoints.push(ck);
        attention_calls += calls;
    }
    Ok(SeedRuns {
        mean: EvalReport::mean(&runs)?,
        runs,
        checkpoints,
        attention_calls,
    })
}

/// Seeds `seed`, `seed + 1`, `seed + 2`.
pub fn run_thrice(
    config: &ModelConfig,
    split: &SplitDataset,
    tc: &TrainConfig,
    seed: u64,
    ks: &[usize],
    mode: CandidateMode,
) -> Result<SeedRuns> {
    run_seeds(config, split, tc, &[seed, seed.wrapping_add(1), seed.wrapping_add(2)], ks, mode)
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTNCFCK1";
const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub num_users: usize,
    pub num_items: usize,
    pub seed: u64,
    pub epoch: usize,
    pub best_val_ndcg10: f64,
    pub params: ParamStore,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} too large")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

impl Checkpoint {
    pub fn capture(config: &ModelConfig, model: &AnyModel, seed: u64, epoch: usize, best_val_ndcg10: f64) -> Self {
        use crate::recommender::Scorer;
        Checkpoint {
            config: config.clone(),
            num_users: model.num_users(),
            num_items: model.num_items(),
            seed,
            epoch,
            best_val_ndcg10,
            params: model.params().clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.config.kind.tag());
        put_bytes(&mut out, serde_json::to_string(&self.config)?.as_bytes());
        for v in [self.num_users as u64, self.num_items as u64, self.seed, self.epoch as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.best_val_ndcg10.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (_, p) in self.params.iter() {
            put_bytes(&mut out, p.name.as_bytes());
            out.push(p.group.tag());
            out.push(p.is_embedding as u8);
            out.extend_from_slice(&(p.tensor.rank() as u64).to_le_bytes());
            for &d in p.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in p.tensor.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let tag = r.u8()?;
        let kind = ModelKind::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown model tag {tag}")))?;
        let config: ModelConfig = serde_json::from_slice(r.bytes()?)?;
        if config.kind != kind {
            return Err(Error::Checkpoint("model tag disagrees with config".into()));
        }
        let (num_users, num_items) = (r.len()?, r.len()?);
        let seed = r.u64()?;
        let epoch = r.len()?;
        let best_val_ndcg10 = r.f64()?;
        let count = r.len()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::Checkpoint("non-utf8 name".into()))?;
            let gtag = r.u8()?;
            let group = RegGroup::from_tag(gtag).ok_or_else(|| Error::Checkpoint(format!("unknown group {gtag}")))?;
            let is_embedding = r.u8()? != 0;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::Checkpoint(format!("shape {shape:?} overflows")))?;
            if n.checked_mul(8).is_none_or(|b| b > bytes.len()) {
                return Err(Error::Checkpoint(format!("parameter {name} larger than file")));
            }
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if is_embedding {
                params.add_embedding(name, tensor, group);
            } else {
                params.add(name, tensor, group);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            num_users,
            num_items,
            seed,
            epoch,
            best_val_ndcg10,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Rebuilds the model and installs the stored parameters.
    pub fn into_model(self) -> Result<AnyModel> {
        let mut model = AnyModel::build(&self.config, self.num_users, self.num_items, self.seed)?;
        if !model.params().same_layout(&self.params) {
            return Err(Error::Checkpoint("parameter layout does not match the model".into()));
        }
        *model.params_mut() = self.params;
        if let AnyModel::Popularity(p) = &mut model {
            p.sync_counts();
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(1.0, 1.0) < 1e-11);
        assert!(bce_loss(0.0, 1.0).is_finite());
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        for tc in [
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { negatives_per_positive: 0, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
        ] {
            assert!(tc.validate().is_err());
        }
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("mf", Tensor::vector(vec![1.0, -2.0]), RegGroup::Mf);
        s.add("cnn", Tensor::vector(vec![3.0]), RegGroup::Cnn);
        s.add("free", Tensor::vector(vec![5.0]), RegGroup::Free);
        s
    }

    #[test]
    fn l2_by_group() {
        let s = store();
        assert_eq!(l2_penalty(&s, 0.0, 0.01), 0.09);
        assert_eq!(l2_penalty(&s, 1.0, 0.0), 5.0);
        let mut g = vec![None, None, None];
        add_l2_grads(&s, &mut g, 0.5, 0.0);
        assert_eq!(g[0], Some(vec![1.0, -2.0]));
        assert!(g[1].is_none() && g[2].is_none());
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut s = store();
        let mut adam = Adam::new(&s, 0.001);
        adam.step(&mut s, &[Some(vec![0.3, -7.0]), None, Some(vec![0.0])]).unwrap();
        let mf = s.get(s.find("mf").unwrap()).data().to_vec();
        assert!((mf[0] - (1.0 - 0.001)).abs() < 1e-9);
        assert!((mf[1] - (-2.0 + 0.001)).abs() < 1e-9);
        assert_eq!(s.get(s.find("cnn").unwrap()).data(), &[3.0]);
        assert_eq!(s.get(s.find("free").unwrap()).data(), &[5.0]);
    }

    #[test]
    fn adam_rejects_bad_shapes() {
        let mut s = store();
        let mut adam = Adam::new(&s, 0.001);
        assert!(adam.step(&mut s, &[Some(vec![1.0]), None, None]).is_err());
        assert!(adam.step(&mut s, &[None, None]).is_err());
    }
}
