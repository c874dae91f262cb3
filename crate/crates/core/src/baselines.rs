//! Comparison models: MLP, GMF, NCF (GMF ⊕ MLP) and item popularity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{linear, EMBED_INIT};
use crate::params::{kaiming_tensor, uniform_tensor, ParamId, ParamStore, RegGroup};
use crate::recommender::{Scorer, Trainable};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// GMF embedding size (also the GMF half of NCF).
    pub gmf_dim: usize,
    /// Per-side embedding size feeding the MLP tower.
    pub mlp_embed_dim: usize,
    /// Hidden widths of the MLP tower.
    pub mlp_layers: Vec<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            gmf_dim: 4,
            mlp_embed_dim: 16,
            mlp_layers: vec![64, 32, 16],
        }
    }
}

impl BaselineConfig {
    fn validate(&self) -> Result<()> {
        if self.gmf_dim == 0 || self.mlp_embed_dim == 0 || self.mlp_layers.contains(&0) {
            return Err(Error::Config("baseline widths must be positive".into()));
        }
        if self.mlp_layers.is_empty() {
            return Err(Error::Config("MLP tower needs at least one layer".into()));
        }
        Ok(())
    }
}

fn check_ids(num_users: usize, num_items: usize, user: usize, item: usize) -> Result<()> {
    if user >= num_users {
        return Err(Error::IdOutOfRange {
            kind: "user",
            id: user,
            size: num_users,
        });
    }
    if item >= num_items {
        return Err(Error::IdOutOfRange {
            kind: "item",
            id: item,
            size: num_items,
        });
    }
    Ok(())
}

fn sigmoid_score(m: &dyn Trainable, user: usize, item: usize) -> Result<f64> {
    let mut tape = Tape::new(m.params());
    let z = m.logit(&mut tape, user, item)?;
    let s = tape.sigmoid(z);
    Ok(tape.scalar(s))
}

fn concat_vectors(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    let rows: Vec<Var> = parts
        .iter()
        .map(|&p| {
            let n = tape.value(p).len();
            tape.reshape(p, &[1, n])
        })
        .collect::<Result<_>>()?;
    let cat = tape.concat_cols(&rows)?;
    let n = tape.value(cat).len();
    tape.reshape(cat, &[n])
}

#[derive(Debug, Clone)]
struct Tower {
    layers: Vec<(ParamId, ParamId)>,
}

impl Tower {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, widths: &[usize]) -> Self {
        let mut fan_in = input;
        let layers = widths
            .iter()
            .enumerate()
            .map(|(l, &w)| {
                let wid = store.add(format!("{prefix}.w{l}"), kaiming_tensor(rng, &[fan_in, w], fan_in), RegGroup::Free);
                let bid = store.add(format!("{prefix}.b{l}"), Tensor::zeros(&[w]), RegGroup::Free);
                fan_in = w;
                (wid, bid)
            })
            .collect();
        Tower { layers }
    }

    fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        for &(w, b) in &self.layers {
            let (wv, bv) = (tape.param(w), tape.param(b));
            let h = linear(tape, x, wv, bv)?;
            x = tape.relu(h);
        }
        Ok(x)
    }
}

/// `concat(p_u, q_i)` → ReLU tower → linear → sigmoid.
#[derive(Debug, Clone)]
pub struct Mlp {
    num_users: usize,
    num_items: usize,
    params: ParamStore,
    p: ParamId,
    q: ParamId,
    tower: Tower,
    head_w: ParamId,
    head_b: ParamId,
}

impl Mlp {
    pub fn new(config: &BaselineConfig, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let e = config.mlp_embed_dim;
        let p = s.add_embedding("mlp.P", uniform_tensor(&mut rng, &[num_users, e], EMBED_INIT), RegGroup::Free);
        let q = s.add_embedding("mlp.Q", uniform_tensor(&mut rng, &[num_items, e], EMBED_INIT), RegGroup::Free);
        let tower = Tower::new(&mut s, &mut rng, "mlp.tower", 2 * e, &config.mlp_layers);
        let last = *config.mlp_layers.last().unwrap();
        let head_w = s.add("head_w", kaiming_tensor(&mut rng, &[last, 1], last), RegGroup::Free);
        let head_b = s.add("head_b", Tensor::zeros(&[1]), RegGroup::Free);
        Ok(Mlp {
            num_users,
            num_items,
            params: s,
            p,
            q,
            tower,
            head_w,
            head_b,
        })
    }

    fn hidden(&self, tape: &mut Tape, user: usize, item: usize) -> Result<Var> {
        check_ids(self.num_users, self.num_items, user, item)?;
        let pu = tape.gather(self.p, user)?;
        let qi = tape.gather(self.q, item)?;
        let x = concat_vectors(tape, &[pu, qi])?;
        self.tower.forward(tape, x)
    }
}

impl Scorer for Mlp {
    fn num_users(&self) -> usize {
        self.num_users
    }
    fn num_items(&self) -> usize {
        self.num_items
    }
    fn score(&self, user: usize, item: usize) -> Result<f64> {
        sigmoid_score(self, user, item)
    }
}

impl Trainable for Mlp {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
    fn logit(&self, tape: &mut Tape, user: usize, item: usize) -> Result<Var> {
        let h = self.hidden(tape, user, item)?;
        let (w, b) = (tape.param(self.head_w), tape.param(self.head_b));
        linear(tape, h, w, b)
    }
}

/// Generalized matrix factorization: `p_u ⊙ q_i` → linear → sigmoid.
#[derive(Debug, Clone)]
pub struct Gmf {
    num_users: usize,
    num_items: usize,
    params: ParamStore,
    p: ParamId,
    q: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl Gmf {
    pub fn new(config: &BaselineConfig, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = config.gmf_dim;
        let p = s.add_embedding("gmf.P", uniform_tensor(&mut rng, &[num_users, d], EMBED_INIT), RegGroup::Mf);
        let q = s.add_embedding("gmf.Q", uniform_tensor(&mut rng, &[num_items, d], EMBED_INIT), RegGroup::Mf);
        let head_w = s.add("head_w", kaiming_tensor(&mut rng, &[d, 1], d), RegGroup::Free);
        let head_b = s.add("head_b", Tensor::zeros(&[1]), RegGroup::Free);
        Ok(Gmf {
            num_users,
            num_items,
            params: s,
            p,
            q,
            head_w,
            head_b,
        })
    }

    pub fn user_table(&self) -> ParamId {
        self.p
    }

    pub fn item_table(&self) -> ParamId {
        self.q
    }

    pub fn head_weight(&self) -> ParamId {
        self.head_w
    }
}

impl Scorer for Gmf {
    fn num_users(&self) -> usize {
        self.num_users
    }
    fn num_items(&self) -> usize {
        self.num_items
    }
    fn score(&self, user: usize, item: usize) -> Result<f64> {
        sigmoid_score(self, user, item)
    }
}

impl Trainable for Gmf {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
    fn logit(&self, tape: &mut Tape, user: usize, item: usize) -> Result<Var> {
        check_ids(self.num_users, self.num_items, user, item)?;
        let pu = tape.gather(self.p, user)?;
        let qi = tape.gather(self.q, item)?;
        let g = tape.mul(pu, qi)?;
        let (w, b) = (tape.param(self.head_w), tape.param(self.head_b));
        linear(tape, g, w, b)
    }
}

/// NeuMF-style fusion: `concat(p ⊙ q, MLP last hidden)` → linear → sigmoid.
/// The GMF and MLP halves keep separate embedding tables.
#[derive(Debug, Clone)]
pub struct Ncf {
    num_users: usize,
    num_items: usize,
    params: ParamStore,
    gmf_p: ParamId,
    gmf_q: ParamId,
    mlp_p: ParamId,
    mlp_q: ParamId,
    tower: Tower,
    head_w: ParamId,
    head_b: ParamId,
}

impl Ncf {
    pub fn new(config: &BaselineConfig, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (d, e) = (config.gmf_dim, config.mlp_embed_dim);
        let gmf_p = s.add_embedding("gmf.P", uniform_tensor(&mut rng, &[num_users, d], EMBED_INIT), RegGroup::Mf);
        let gmf_q = s.add_embedding("gmf.Q", uniform_tensor(&mut rng, &[num_items, d], EMBED_INIT), RegGroup::Mf);
        let mlp_p = s.add_embedding("mlp.P", uniform_tensor(&mut rng, &[num_users, e], EMBED_INIT), RegGroup::Free);
        let mlp_q = s.add_embedding("mlp.Q", uniform_tensor(&mut rng, &[num_items, e], EMBED_INIT), RegGroup::Free);
        let tower = Tower::new(&mut s, &mut rng, "mlp.tower", 2 * e, &config.mlp_layers);
        let fan_in = d + config.mlp_layers.last().unwrap();
        let head_w = s.add("head_w", kaiming_tensor(&mut rng, &[fan_in, 1], fan_in), RegGroup::Free);
        let head_b = s.add("head_b", Tensor::zeros(&[1]), RegGroup::Free);
        Ok(Ncf {
            num_users,
            num_items,
            params: s,
            gmf_p,
            gmf_q,
            mlp_p,
            mlp_q,
            tower,
            head_w,
            head_b,
        })
    }

    pub fn gmf_tables(&self) -> (ParamId, ParamId) {
        (self.gmf_p, self.gmf_q)
    }

    pub fn head_weight(&self) -> ParamId {
        self.head_w
    }
}

impl Scorer for Ncf {
    fn num_users(&self) -> usize {
        self.num_users
    }
    fn num_items(&self) -> usize {
        self.num_items
    }
    fn score(&self, user: usize, item: usize) -> Result<f64> {
        sigmoid_score(self, user, item)
    }
}

impl Trainable for Ncf {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
    fn logit(&self, tape: &mut Tape, user: usize, item: usize) -> Result<Var> {
        check_ids(self.num_users, self.num_items, user, item)?;
        let gp = tape.gather(self.gmf_p, user)?;
        let gq = tape.gather(self.gmf_q, item)?;
        let gmf = tape.mul(gp, gq)?;
        let mp = tape.gather(self.mlp_p, user)?;
        let mq = tape.gather(self.mlp_q, item)?;
        let x = concat_vectors(tape, &[mp, mq])?;
        let h = self.tower.forward(tape, x)?;
        let fused = concat_vectors(tape, &[gmf, h])?;
        let (w, b) = (tape.param(self.head_w), tape.param(self.head_b));
        linear(tape, fused, w, b)
    }
}

/// Train-split interaction count of `item`; 0 for unseen items.
pub fn popularity_score(train_counts: &[u64], item: usize) -> f64 {
    train_counts.get(item).copied().unwrap_or(0) as f64
}

/// Scores every item by how often it appears among training positives.
#[derive(Debug, Clone)]
pub struct Popularity {
    num_users: usize,
    num_items: usize,
    params: ParamStore,
    counts: Vec<u64>,
}

impl Popularity {
    pub fn zeros(num_users: usize, num_items: usize) -> Self {
        let mut params = ParamStore::new();
        params.add("item_counts", Tensor::zeros(&[num_items.max(1)]), RegGroup::Free);
        Popularity {
            num_users,
            num_items,
            params,
            counts: vec![0; num_items],
        }
    }

    /// Counts training positives only.
    pub fn fit(split: &SplitDataset) -> Self {
        let mut counts = vec![0u64; split.num_items()];
        for u in split.users() {
            for &i in &u.train {
                counts[i as usize] += 1;
            }
        }
        Self::from_counts(split.num_users(), counts)
    }

    pub fn from_counts(num_users: usize, counts: Vec<u64>) -> Self {
        let mut p = Popularity::zeros(num_users, counts.len());
        let data: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        if !data.is_empty() {
            p.params
                .get_mut(ParamId(0))
                .data_mut()
                .copy_from_slice(&data);
        }
        p.counts = counts;
        p
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access to the stored counts; [`Popularity::sync_counts`] must
    /// run after writes.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn sync_counts(&mut self) {
        self.counts = self.params.get(ParamId(0)).data()[..self.num_items]
            .iter()
            .map(|&c| c.max(0.0) as u64)
            .collect();
    }
}

impl Scorer for Popularity {
    fn num_users(&self) -> usize {
        self.num_users
    }
    fn num_items(&self) -> usize {
        self.num_items
    }
    fn score(&self, user: usize, item: usize) -> Result<f64> {
        check_ids(self.num_users, self.num_items, user, item)?;
        Ok(popularity_score(&self.counts, item))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_all(store: &mut ParamStore) {
        for p in store.iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_params_score_half() {
        let cfg = BaselineConfig::default();
        let mut mlp = Mlp::new(&cfg, 3, 3, 1).unwrap();
        zero_all(mlp.params_mut());
        assert_eq!(mlp.score(0, 1).unwrap(), 0.5);
        let mut ncf = Ncf::new(&cfg, 3, 3, 1).unwrap();
        zero_all(ncf.params_mut());
        assert_eq!(ncf.score(2, 2).unwrap(), 0.5);
        let mut gmf = Gmf::new(&cfg, 3, 3, 1).unwrap();
        zero_all(gmf.params_mut());
        assert_eq!(gmf.score(1, 0).unwrap(), 0.5);
    }

    #[test]
    fn random_scores_in_open_interval() {
        let cfg = BaselineConfig::default();
        let mlp = Mlp::new(&cfg, 4, 5, 3).unwrap();
        let ncf = Ncf::new(&cfg, 4, 5, 3).unwrap();
        for u in 0..4 {
            for i in 0..5 {
                for s in [mlp.score(u, i).unwrap(), ncf.score(u, i).unwrap()] {
                    assert!(s > 0.0 && s < 1.0);
                }
            }
        }
    }

    #[test]
    fn gmf_identity_head_analytic() {
        let cfg = BaselineConfig {
            gmf_dim: 1,
            ..BaselineConfig::default()
        };
        let w = 0.3;
        let mut gmf = Gmf::new(&cfg, 1, 1, 0).unwrap();
        let (p, q, h) = (gmf.user_table(), gmf.item_table(), gmf.head_weight());
        gmf.params_mut().get_mut(p).data_mut()[0] = 2.0;
        gmf.params_mut().get_mut(q).data_mut()[0] = 3.0;
        gmf.params_mut().get_mut(h).data_mut()[0] = w;
        let expect = 1.0 / (1.0 + (-6.0f64 * w).exp());
        assert!((gmf.score(0, 0).unwrap() - expect).abs() < 1e-15);

        // Same through NCF with the MLP half of the head switched off.
        let mut ncf = Ncf::new(&cfg, 1, 1, 0).unwrap();
        let (gp, gq) = ncf.gmf_tables();
        let hw = ncf.head_weight();
        ncf.params_mut().get_mut(gp).data_mut()[0] = 2.0;
        ncf.params_mut().get_mut(gq).data_mut()[0] = 3.0;
        let head = ncf.params_mut().get_mut(hw).data_mut();
        head.iter_mut().for_each(|v| *v = 0.0);
        head[0] = w;
        assert!((ncf.score(0, 0).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn ids_are_checked() {
        let cfg = BaselineConfig::default();
        assert!(Mlp::new(&cfg, 2, 2, 0).unwrap().score(2, 0).is_err());
        assert!(Ncf::new(&cfg, 2, 2, 0).unwrap().score(0, 5).is_err());
        assert!(Popularity::zeros(2, 2).score(0, 2).is_err());
    }

    #[test]
    fn popularity_counts() {
        let counts = vec![10, 3, 0];
        assert!(popularity_score(&counts, 0) > popularity_score(&counts, 1));
        assert_eq!(popularity_score(&counts, 2), 0.0);
        assert_eq!(popularity_score(&counts, 7), 0.0);
    }
}
