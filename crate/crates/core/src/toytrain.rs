//! A categorical model over a pruned-tree leaf alphabet, trained by full-batch
//! gradient descent on cross-entropy (bits), and the resistance / rebound
//! experiments built on it.
//!
//! Two parameterizations share one interface. `Flat` holds one logit per
//! leaf. `Tree` holds, at every internal prefix, logits over the available
//! next moves (EOS, 0, 1), so a leaf's probability is the product of the
//! conditionals on its path. Both represent every distribution over the
//! alphabet; they differ in how a gradient step spreads over leaves that
//! share a prefix.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::io::Write;

use rand::Rng;
use rand::distr::Distribution;
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::token_tree::{LeafKind, LeafSampler, LeafSymbol, PrunedTree, Response, WeightedDataset, bits_to_string, build_tree, prune};

/// Probability floor used by `loss` and `kl_to_tree`.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    #[default]
    Flat,
    Tree,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Opt {
    Leaf(usize),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct TreeNode {
    options: Vec<Opt>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Flat(Vec<f64>),
    Tree(Vec<TreeNode>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    alphabet: Vec<LeafSymbol>,
    capacity_d: usize,
    params: Params,
}

/// All `2^d` CONT leaves at depth `d`.
pub fn cont_alphabet(d: usize) -> Vec<LeafSymbol> {
    (0..1usize << d)
        .map(|i| {
            let bits: Vec<u8> = (0..d).rev().map(|b| ((i >> b) & 1) as u8).collect();
            LeafSymbol::cont(bits_to_string(&bits))
        })
        .collect()
}

/// Every leaf a depth-`d` pruned tree can have: EOS at each prefix shorter
/// than `d`, CONT at each prefix of length `d`.
pub fn complete_alphabet(d: usize) -> Vec<LeafSymbol> {
    let mut out = cont_alphabet(d);
    for len in 0..d {
        out.extend(cont_alphabet(len).into_iter().map(|s| LeafSymbol::eos(s.prefix)));
    }
    out.sort();
    out
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn build_tree_params(alphabet: &[LeafSymbol]) -> Vec<TreeNode> {
    // Option keys per node: 0 = EOS, 1 = bit 0, 2 = bit 1.
    let mut moves: BTreeMap<String, BTreeMap<u8, Option<usize>>> = BTreeMap::new();
    for (i, s) in alphabet.iter().enumerate() {
        let (node, key) = match s.kind {
            LeafKind::Eos => (s.prefix.clone(), 0u8),
            LeafKind::Continuation => {
                let (head, last) = s.prefix.split_at(s.prefix.len() - 1);
                (head.to_string(), if last == "0" { 1 } else { 2 })
            }
        };
        moves.entry(node.clone()).or_default().insert(key, Some(i));
        let mut child = node;
        while !child.is_empty() {
            let (head, last) = child.split_at(child.len() - 1);
            let key = if last == "0" { 1 } else { 2 };
            moves.entry(head.to_string()).or_default().insert(key, None);
            child = head.to_string();
        }
    }
    let index: BTreeMap<&String, usize> = moves.keys().enumerate().map(|(i, k)| (k, i)).collect();
    moves
        .iter()
        .map(|(prefix, opts)| {
            let options: Vec<Opt> = opts
                .iter()
                .map(|(&key, leaf)| match leaf {
                    Some(i) => Opt::Leaf(*i),
                    None => {
                        let child = format!("{prefix}{}", if key == 1 { '0' } else { '1' });
                        Opt::Node(index[&child])
                    }
                })
                .collect();
            TreeNode { logits: vec![0.0; options.len()], options }
        })
        .collect()
}

impl ToyModel {
    /// Zero-logit model over `alphabet` (sorted into canonical order).
    pub fn new(mut alphabet: Vec<LeafSymbol>, capacity_d: usize, param: Parameterization) -> Result<Self> {
        alphabet.sort();
        alphabet.dedup();
        if alphabet.is_empty() {
            return Err(Error::invalid("model alphabet is empty"));
        }
        for s in &alphabet {
            let ok = match s.kind {
                LeafKind::Eos => s.prefix.len() < capacity_d,
                LeafKind::Continuation => s.prefix.len() == capacity_d,
            };
            if !ok {
                return Err(Error::invalid(format!("leaf {s} does not fit capacity {capacity_d}")));
            }
        }
        let params = match param {
            Parameterization::Flat => Params::Flat(vec![0.0; alphabet.len()]),
            Parameterization::Tree => Params::Tree(build_tree_params(&alphabet)),
        };
        Ok(ToyModel { alphabet, capacity_d, params })
    }

    pub fn alphabet(&self) -> &[LeafSymbol] {
        &self.alphabet
    }

    pub fn capacity_d(&self) -> usize {
        self.capacity_d
    }

    pub fn parameterization(&self) -> Parameterization {
        match self.params {
            Params::Flat(_) => Parameterization::Flat,
            Params::Tree(_) => Parameterization::Tree,
        }
    }

    /// All trainable logits as one vector.
    pub fn params(&self) -> Vec<f64> {
        match &self.params {
            Params::Flat(z) => z.clone(),
            Params::Tree(nodes) => nodes.iter().flat_map(|n| n.logits.iter().copied()).collect(),
        }
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.params().len() {
            return Err(Error::invalid("parameter vector has the wrong length"));
        }
        match &mut self.params {
            Params::Flat(z) => z.copy_from_slice(theta),
            Params::Tree(nodes) => {
                let mut it = theta.iter();
                for n in nodes {
                    for z in &mut n.logits {
                        *z = *it.next().expect("length checked");
                    }
                }
            }
        }
        Ok(())
    }

    /// Leaf distribution in alphabet order.
    pub fn probs(&self) -> Vec<f64> {
        match &self.params {
            Params::Flat(z) => softmax(z),
            Params::Tree(nodes) => {
                let mut p = vec![0.0; self.alphabet.len()];
                let mut reach = vec![0.0; nodes.len()];
                reach[0] = 1.0;
                for (u, n) in nodes.iter().enumerate() {
                    for (opt, pi) in n.options.iter().zip(softmax(&n.logits)) {
                        match *opt {
                            Opt::Leaf(i) => p[i] = reach[u] * pi,
                            Opt::Node(c) => reach[c] = reach[u] * pi,
                        }
                    }
                }
                p
            }
        }
    }

    /// Cross-entropy `−Σ q log2 p` without any floor.
    pub fn cross_entropy(&self, target: &[f64]) -> f64 {
        -self.probs().iter().zip(target).filter(|(_, q)| **q > 0.0).map(|(p, q)| q * p.log2()).sum::<f64>()
    }

    /// Gradient of `cross_entropy(target)` with respect to `params()`.
    pub fn gradient(&self, target: &[f64]) -> Vec<f64> {
        match &self.params {
            Params::Flat(z) => softmax(z).iter().zip(target).map(|(p, q)| (p - q) / LN_2).collect(),
            Params::Tree(nodes) => {
                // Target mass through each node, accumulated child-first.
                let mut mass = vec![0.0; nodes.len()];
                for (u, n) in nodes.iter().enumerate().rev() {
                    mass[u] = n
                        .options
                        .iter()
                        .map(|o| match *o {
                            Opt::Leaf(i) => target[i],
                            Opt::Node(c) => mass[c],
                        })
                        .sum();
                }
                let mut g = Vec::new();
                for (u, n) in nodes.iter().enumerate() {
                    for (opt, pi) in n.options.iter().zip(softmax(&n.logits)) {
                        let qb = match *opt {
                            Opt::Leaf(i) => target[i],
                            Opt::Node(c) => mass[c],
                        };
                        g.push((mass[u] * pi - qb) / LN_2);
                    }
                }
                g
            }
        }
    }

    fn step(&mut self, target: &[f64], lr: f64) {
        let g = self.gradient(target);
        let theta: Vec<f64> = self.params().iter().zip(&g).map(|(t, gi)| t - lr * gi).collect();
        self.set_params(&theta).expect("same length");
    }

    /// Full-batch descent on a target distribution; returns the loss before
    /// the first step and after every step.
    pub fn train_on(&mut self, target: &[f64], lr: f64, steps: usize) -> Result<Vec<f64>> {
        if target.len() != self.alphabet.len() {
            return Err(Error::invalid("target length differs from the alphabet"));
        }
        let mut trace = Vec::with_capacity(steps + 1);
        trace.push(self.cross_entropy(target));
        for s in 1..=steps {
            self.step(target, lr);
            let l = self.cross_entropy(target);
            if !l.is_finite() || self.params().iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged(s));
            }
            trace.push(l);
        }
        Ok(trace)
    }

    /// Maps a tree at this model's capacity onto the alphabet.
    pub fn target_from_tree(&self, t: &PrunedTree) -> Result<Vec<f64>> {
        if t.depth() != self.capacity_d {
            return Err(Error::DepthMismatch { expected: self.capacity_d, found: t.depth() });
        }
        let mut q = vec![0.0; self.alphabet.len()];
        for (s, &p) in t.leaves().iter().zip(t.probs()) {
            let i = self.alphabet.binary_search(s).map_err(|_| Error::SupportMismatch(s.to_string()))?;
            q[i] = p;
        }
        Ok(q)
    }

    /// Empirical leaf distribution of a dataset pruned to this capacity.
    pub fn target_from_dataset(&self, ds: &WeightedDataset) -> Result<Vec<f64>> {
        self.target_from_tree(&prune(&build_tree(ds)?, self.capacity_d)?)
    }

    /// The model's distribution as a pruned tree.
    pub fn to_tree(&self) -> Result<PrunedTree> {
        PrunedTree::from_weights(self.capacity_d, self.alphabet.iter().cloned().zip(self.probs()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Batch {
    Full,
    #[serde(untagged)]
    Size(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch: Batch,
    pub seed: u64,
}

impl TrainConfig {
    pub fn full_batch(learning_rate: f64, steps: usize) -> Self {
        TrainConfig { learning_rate, steps, batch: Batch::Full, seed: 0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.batch == Batch::Size(0) {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Trains a copy of `model` on `dataset`. The loss trace is measured on the
/// whole dataset, also when steps use sampled minibatches.
pub fn train(model: &ToyModel, dataset: &WeightedDataset, cfg: &TrainConfig) -> Result<(ToyModel, Vec<f64>)> {
    cfg.validate()?;
    let target = model.target_from_dataset(dataset)?;
    let mut m = model.clone();
    match cfg.batch {
        Batch::Full => {
            let trace = m.train_on(&target, cfg.learning_rate, cfg.steps)?;
            Ok((m, trace))
        }
        Batch::Size(b) => {
            let tree = m.to_tree_like(&target)?;
            let sampler = LeafSampler::new(&tree)?;
            let mut r = rng::substream(cfg.seed, tag::TOY_TRAIN, 0);
            let mut trace = vec![m.cross_entropy(&target)];
            for s in 1..=cfg.steps {
                let mut batch = vec![0.0; target.len()];
                for _ in 0..b {
                    let leaf = &tree.leaves()[sampler.sample_leaf(&mut r)];
                    batch[m.alphabet.binary_search(leaf).expect("subset")] += 1.0 / b as f64;
                }
                m.step(&batch, cfg.learning_rate);
                let l = m.cross_entropy(&target);
                if !l.is_finite() {
                    return Err(Error::TrainingDiverged(s));
                }
                trace.push(l);
            }
            Ok((m, trace))
        }
    }
}

impl ToyModel {
    fn to_tree_like(&self, q: &[f64]) -> Result<PrunedTree> {
        PrunedTree::from_weights(self.capacity_d, self.alphabet.iter().cloned().zip(q.iter().copied()).collect())
    }
}

/// A floored measurement: the value and how many entries hit the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measured {
    pub bits: f64,
    pub floored: usize,
}

fn floor_renormalize(p: &[f64]) -> (Vec<f64>, usize) {
    let floored = p.iter().filter(|&&v| v < PROB_FLOOR).count();
    let f: Vec<f64> = p.iter().map(|&v| v.max(PROB_FLOOR)).collect();
    let s: f64 = f.iter().sum();
    (f.into_iter().map(|v| v / s).collect(), floored)
}

/// Cross-entropy of the dataset under the model, in bits.
pub fn loss(model: &ToyModel, dataset: &WeightedDataset) -> Result<Measured> {
    let q = model.target_from_dataset(dataset)?;
    Ok(loss_on(model, &q))
}

pub fn loss_on(model: &ToyModel, target: &[f64]) -> Measured {
    let (p, floored) = floor_renormalize(&model.probs());
    let bits = -p.iter().zip(target).filter(|(_, q)| **q > 0.0).map(|(p, q)| q * p.log2()).sum::<f64>();
    Measured { bits, floored }
}

/// `KL(model ‖ t)` in bits over the model's alphabet, with `t` floored.
pub fn kl_to_tree(model: &ToyModel, t: &PrunedTree) -> Result<Measured> {
    let (q, floored) = floor_renormalize(&model.target_from_tree(t)?);
    let bits = model.probs().iter().zip(&q).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / q).log2()).sum::<f64>();
    Ok(Measured { bits: bits.max(0.0), floored })
}

/// `n` iid responses from the model, aggregated per leaf in canonical order.
pub fn generate_dataset<R: Rng + ?Sized>(model: &ToyModel, n: usize, rng: &mut R) -> Result<WeightedDataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let tree = model.to_tree()?;
    let sampler = LeafSampler::new(&tree)?;
    let mut counts = vec![0u64; tree.leaf_count()];
    for _ in 0..n {
        counts[sampler.sample_leaf(rng)] += 1;
    }
    let mut ds = WeightedDataset::new();
    for (s, c) in tree.leaves().iter().zip(counts) {
        if c > 0 {
            ds.push(Response::parse(&s.prefix)?, c)?;
        }
    }
    Ok(ds)
}

/// Model mass on a set of leaves.
pub fn positive_score(model: &ToyModel, positive: &[LeafSymbol]) -> Result<f64> {
    if positive.is_empty() {
        return Err(Error::invalid("positive leaf set is empty"));
    }
    let p = model.probs();
    let mut score = 0.0;
    for s in positive {
        let i = model.alphabet.binary_search(s).map_err(|_| Error::OutOfModel(s.to_string()))?;
        score += p[i];
    }
    Ok(score.min(1.0))
}

/// `Σ p(leaf)·w(leaf)` with per-leaf positive fractions `w ∈ [0, 1]`. Used
/// when the model's leaves are coarser than the class patterns.
pub fn weighted_positive_score(model: &ToyModel, weights: &[f64]) -> f64 {
    model.probs().iter().zip(weights).map(|(p, w)| p * w).sum::<f64>().clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Toy worlds

/// Full-length binary strings with Zipf masses. `dist` holds probabilities
/// over all `2^L` strings in index order.
#[derive(Debug, Clone, PartialEq)]
struct World {
    len: usize,
}

impl World {
    fn new(len: usize) -> Result<Self> {
        if len == 0 || len > 16 {
            return Err(Error::Spec(format!("response_len must be in 1..=16 (got {len})")));
        }
        Ok(World { len })
    }

    fn size(&self) -> usize {
        1 << self.len
    }

    fn string(&self, i: usize) -> String {
        let bits: Vec<u8> = (0..self.len).rev().map(|b| ((i >> b) & 1) as u8).collect();
        bits_to_string(&bits)
    }

    /// Aggregates a full-length distribution onto depth-`d` prefixes, in the
    /// order of `cont_alphabet(d)`.
    fn at_capacity(&self, dist: &[f64], d: usize) -> Vec<f64> {
        let group = 1 << (self.len - d);
        dist.chunks(group).map(|c| c.iter().sum()).collect()
    }
}

fn zipf(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-s)).collect()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn matches(pattern: &str, s: &str) -> bool {
    pattern.len() == s.len() && pattern.bytes().zip(s.bytes()).all(|(p, c)| p == b'*' || p == c)
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 { 0.0 } else { cov / (vx * vy).sqrt() }
}

pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    spearman(xs, ys)
}

// ---------------------------------------------------------------------------
// Resistance

/// Pre-training covers one half of the response space, SFT the other half
/// (split by a seeded permutation), each with Zipf masses. The SFT dataset
/// is cut into three equal slices, producing checkpoints θ1..θ3.
///
/// `seed` fixes the world; replicate `j` draws its SFT dataset and its
/// generated datasets from substreams of the same seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResistanceSpec {
    pub response_len: usize,
    pub capacity_d: usize,
    pub parameterization: Parameterization,
    pub zipf_exponent: f64,
    /// SFT data drawn from the pre-training distribution (symmetry check).
    pub sft_matches_pretrain: bool,
    pub pretrain_steps: usize,
    pub sft_size: usize,
    pub sft_steps_per_slice: usize,
    pub align_steps: usize,
    pub learning_rate: f64,
    pub n_generate: usize,
    pub replicates: u64,
    pub seed: u64,
}

impl Default for ResistanceSpec {
    fn default() -> Self {
        ResistanceSpec {
            response_len: 5,
            capacity_d: 5,
            parameterization: Parameterization::Flat,
            zipf_exponent: 0.5,
            sft_matches_pretrain: false,
            pretrain_steps: 5000,
            sft_size: 3000,
            sft_steps_per_slice: 10,
            align_steps: 10,
            learning_rate: 0.5,
            n_generate: 2000,
            replicates: 5,
            seed: 0,
        }
    }
}

impl ResistanceSpec {
    fn validate(&self) -> Result<()> {
        World::new(self.response_len)?;
        if self.capacity_d == 0 || self.capacity_d > self.response_len {
            return Err(Error::Spec("capacity_d must be in 1..=response_len".into()));
        }
        if self.sft_size < 3 || self.n_generate == 0 || self.replicates == 0 {
            return Err(Error::Spec("sft_size >= 3, n_generate >= 1 and replicates >= 1 are required".into()));
        }
        if self.pretrain_steps == 0 || self.sft_steps_per_slice == 0 || self.align_steps == 0 {
            return Err(Error::Spec("step budgets must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.zipf_exponent >= 0.0) {
            return Err(Error::Spec("learning_rate must be positive and zipf_exponent non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResistanceRow {
    pub from: usize,
    pub to: usize,
    /// Replicate index.
    pub seed: u64,
    pub forward_loss: f64,
    pub inverse_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResistanceReport {
    pub rows: Vec<ResistanceRow>,
}

impl ResistanceReport {
    pub fn inverse_wins(&self) -> usize {
        self.rows.iter().filter(|r| r.inverse_loss < r.forward_loss).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["pair", "seed", "forward_loss", "inverse_loss"])?;
        for r in &self.rows {
            out.write_record([format!("{}-{}", r.from, r.to), r.seed.to_string(), r.forward_loss.to_string(), r.inverse_loss.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub const RESISTANCE_PAIRS: [(usize, usize); 3] = [(1, 2), (2, 3), (1, 3)];

// Substream layout under tag::TOY_TRAIN: replicate j owns indices
// 8j+1 (SFT draws) and 8j+2..=8j+5 (data generated by θ0..θ3).
fn replicate_stream(seed: u64, replicate: u64, slot: u64) -> rand_chacha::ChaCha8Rng {
    rng::substream(seed, tag::TOY_TRAIN, 8 * replicate + 1 + slot)
}

/// Pre-training and SFT distributions over all full-length responses.
fn resistance_world(spec: &ResistanceSpec) -> Result<(World, Vec<f64>, Vec<f64>)> {
    let world = World::new(spec.response_len)?;
    let v = world.size();
    let mut perm: Vec<usize> = (0..v).collect();
    perm.shuffle(&mut rng::substream(spec.seed, tag::TOY_DATA, 0));
    let (a, b) = perm.split_at(v / 2);
    let w = zipf(v / 2, spec.zipf_exponent);
    let mut p0 = vec![0.0; v];
    let mut ps = vec![0.0; v];
    for (r, &i) in a.iter().enumerate() {
        p0[i] = w[r];
    }
    for (r, &i) in b.iter().enumerate() {
        ps[i] = w[r];
    }
    let p0 = normalized(p0);
    let ps = if spec.sft_matches_pretrain { p0.clone() } else { normalized(ps) };
    Ok((world, p0, ps))
}

/// The checkpoints θ0..θ3 for one replicate.
pub fn resistance_checkpoints(spec: &ResistanceSpec, replicate: u64) -> Result<Vec<ToyModel>> {
    spec.validate()?;
    let (world, p0, ps) = resistance_world(spec)?;
    let d = spec.capacity_d;
    let mut m0 = ToyModel::new(cont_alphabet(d), d, spec.parameterization)?;
    m0.train_on(&world.at_capacity(&p0, d), spec.learning_rate, spec.pretrain_steps)?;

    let sft = WeightedIndex::new(&ps).map_err(|e| Error::Spec(e.to_string()))?;
    let mut r = replicate_stream(spec.seed, replicate, 0);
    let draws: Vec<usize> = (0..spec.sft_size).map(|_| sft.sample(&mut r)).collect();
    let third = spec.sft_size / 3;
    let mut checkpoints = vec![m0];
    for slice in draws.chunks(third).take(3) {
        let mut full = vec![0.0; world.size()];
        for &i in slice {
            full[i] += 1.0 / slice.len() as f64;
        }
        let mut m = checkpoints.last().expect("non-empty").clone();
        m.train_on(&world.at_capacity(&full, d), spec.learning_rate, spec.sft_steps_per_slice)?;
        checkpoints.push(m);
    }
    Ok(checkpoints)
}

/// Trains `start` on responses generated by checkpoint `source`; returns the
/// final loss on those responses. The generated data depends only on the
/// replicate and the source index, so a pair and its mirror share datasets.
fn align_to(checkpoints: &[ToyModel], start: usize, source: usize, spec: &ResistanceSpec, replicate: u64) -> Result<f64> {
    let mut r = replicate_stream(spec.seed, replicate, 1 + source as u64);
    let data = generate_dataset(&checkpoints[source], spec.n_generate, &mut r)?;
    let mut m = checkpoints[start].clone();
    let target = m.target_from_dataset(&data)?;
    m.train_on(&target, spec.learning_rate, spec.align_steps)?;
    Ok(loss_on(&m, &target).bits)
}

/// Forward (θk trained on data of θl) and inverse (θl trained on data of
/// θk) alignment for one pair, with equal budgets.
pub fn resistance_pair(checkpoints: &[ToyModel], k: usize, l: usize, spec: &ResistanceSpec, replicate: u64) -> Result<(f64, f64)> {
    if k.max(l) >= checkpoints.len() {
        return Err(Error::invalid("checkpoint index out of range"));
    }
    let forward = align_to(checkpoints, k, l, spec, replicate)?;
    let inverse = align_to(checkpoints, l, k, spec, replicate)?;
    Ok((forward, inverse))
}

pub fn resistance_experiment(spec: &ResistanceSpec) -> Result<ResistanceReport> {
    spec.validate()?;
    let per_seed: Vec<Vec<ResistanceRow>> = (0..spec.replicates)
        .into_par_iter()
        .map(|seed| {
            let cps = resistance_checkpoints(spec, seed)?;
            RESISTANCE_PAIRS
                .iter()
                .map(|&(k, l)| {
                    let (forward_loss, inverse_loss) = resistance_pair(&cps, k, l, spec, seed)?;
                    Ok(ResistanceRow { from: k, to: l, seed, forward_loss, inverse_loss })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(ResistanceReport { rows: per_seed.into_iter().flatten().collect() })
}

// ---------------------------------------------------------------------------
// Rebound

/// Membership rule for a response class over full-length responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRule {
    /// Any of these `0/1/*` patterns, each exactly `response_len` long.
    Patterns(Vec<String>),
    MinOnes(u32),
    MaxOnes(u32),
}

impl ClassRule {
    fn validate(&self, len: usize) -> Result<()> {
        match self {
            ClassRule::Patterns(ps) => {
                if ps.is_empty() {
                    return Err(Error::Spec("pattern list is empty".into()));
                }
                for p in ps {
                    if p.len() != len || p.bytes().any(|c| !matches!(c, b'0' | b'1' | b'*')) {
                        return Err(Error::Spec(format!("pattern `{p}` must be {len} chars of 0/1/*")));
                    }
                }
                Ok(())
            }
            ClassRule::MinOnes(_) | ClassRule::MaxOnes(_) => Ok(()),
        }
    }

    pub fn contains(&self, s: &str) -> bool {
        let ones = s.bytes().filter(|&c| c == b'1').count() as u32;
        match self {
            ClassRule::Patterns(ps) => ps.iter().any(|p| matches(p, s)),
            ClassRule::MinOnes(n) => ones >= *n,
            ClassRule::MaxOnes(n) => ones <= *n,
        }
    }
}

/// Class fractions of the pre-training mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassMass {
    pub positive: f64,
    pub negative: f64,
}

impl Default for ClassMass {
    fn default() -> Self {
        Self { positive: 0.2, negative: 0.8 }
    }
}

/// Pre-train on a class mixture, align on positive data, then fine-tune on
/// negative data while tracking the positive score.
///
/// Sample counts become step counts: a phase on `n` samples runs
/// `round(n · steps_per_sample)` full-batch steps on that class's
/// distribution, i.e. a fixed number of epochs at a fixed batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReboundSpec {
    pub response_len: usize,
    pub capacity_d: usize,
    pub parameterization: Parameterization,
    pub seed: u64,
    pub zipf_exponent: f64,
    pub positive: ClassRule,
    pub negative: ClassRule,
    pub class_mass: ClassMass,
    /// Pre-training volume, in full-batch steps on the mixture.
    pub pretrain_volume: usize,
    pub n_pos_grid: Vec<u64>,
    pub n_neg_grid: Vec<u64>,
    pub align_steps_per_sample: f64,
    pub negative_steps_per_sample: f64,
    pub learning_rate: f64,
    /// Allowed distance of every final score from the baseline final score.
    pub band: f64,
    /// Independent worlds; reported scores are their mean.
    pub replicates: u64,
}

impl Default for ReboundSpec {
    fn default() -> Self {
        ReboundSpec {
            response_len: 6,
            capacity_d: 6,
            parameterization: Parameterization::Tree,
            seed: 0,
            zipf_exponent: 0.8,
            positive: ClassRule::MinOnes(5),
            negative: ClassRule::MaxOnes(4),
            class_mass: ClassMass::default(),
            pretrain_volume: 1000,
            n_pos_grid: vec![100, 200, 500, 1000],
            n_neg_grid: vec![0, 10, 20, 50, 100, 200, 500, 1000],
            align_steps_per_sample: 0.01,
            negative_steps_per_sample: 0.1,
            learning_rate: 0.5,
            band: 0.05,
            replicates: 5,
        }
    }
}

struct ReboundWorld {
    p0: Vec<f64>,
    pos: Vec<f64>,
    neg: Vec<f64>,
    /// P(positive | leaf) under the pre-training mixture, per model leaf.
    score_weights: Vec<f64>,
}

impl ReboundSpec {
    fn validate(&self) -> Result<()> {
        World::new(self.response_len)?;
        if self.capacity_d == 0 || self.capacity_d > self.response_len {
            return Err(Error::Spec("capacity_d must be in 1..=response_len".into()));
        }
        self.positive.validate(self.response_len)?;
        self.negative.validate(self.response_len)?;
        let cm = self.class_mass;
        if !(cm.positive > 0.0 && cm.negative > 0.0 && cm.positive + cm.negative <= 1.0) {
            return Err(Error::Spec("class masses must be positive and sum to at most 1".into()));
        }
        if self.n_pos_grid.is_empty() || self.n_neg_grid.len() < 2 {
            return Err(Error::Spec("need a non-empty n_pos grid and at least two n_neg checkpoints".into()));
        }
        if self.n_neg_grid.windows(2).any(|w| w[1] <= w[0]) || self.n_pos_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Spec("grids must be strictly ascending".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.align_steps_per_sample >= 0.0) || !(self.negative_steps_per_sample >= 0.0) {
            return Err(Error::Spec("learning rate and step rates must be non-negative (lr > 0)".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Spec("replicates must be at least 1".into()));
        }
        if !(self.band >= 0.0) {
            return Err(Error::Spec("band must be non-negative".into()));
        }
        Ok(())
    }

    fn world(&self, replicate: u64) -> Result<ReboundWorld> {
        self.validate()?;
        let world = World::new(self.response_len)?;
        let v = world.size();
        let mut w = zipf(v, self.zipf_exponent);
        w.shuffle(&mut rng::substream(self.seed, tag::TOY_DATA, replicate));
        let class: Vec<u8> = (0..v)
            .map(|i| {
                let s = world.string(i);
                let pos = self.positive.contains(&s);
                let neg = self.negative.contains(&s);
                match (pos, neg) {
                    (true, true) => Err(Error::Spec(format!("response {s} is both positive and negative"))),
                    (true, false) => Ok(1),
                    (false, true) => Ok(2),
                    _ => Ok(0),
                }
            })
            .collect::<Result<_>>()?;
        for (c, name) in [(1, "positive"), (2, "negative")] {
            if !class.contains(&c) {
                return Err(Error::Spec(format!("{name} class matches no response")));
            }
        }
        let restrict = |c: u8| normalized((0..v).map(|i| if class[i] == c { w[i] } else { 0.0 }).collect());
        let pos = restrict(1);
        let neg = restrict(2);
        let neutral_mass = 1.0 - self.class_mass.positive - self.class_mass.negative;
        let has_neutral = class.contains(&0);
        if neutral_mass > 0.0 && !has_neutral {
            return Err(Error::Spec("class masses leave room for neutral responses but none exist".into()));
        }
        let neutral = if has_neutral { restrict(0) } else { vec![0.0; v] };
        let p0: Vec<f64> = (0..v)
            .map(|i| self.class_mass.positive * pos[i] + self.class_mass.negative * neg[i] + neutral_mass * neutral[i])
            .collect();
        let d = self.capacity_d;
        let p0_pos: Vec<f64> = (0..v).map(|i| if class[i] == 1 { p0[i] } else { 0.0 }).collect();
        let score_weights = world
            .at_capacity(&p0_pos, d)
            .iter()
            .zip(world.at_capacity(&p0, d))
            .map(|(a, b)| if b > 0.0 { a / b } else { 0.0 })
            .collect();
        Ok(ReboundWorld { p0: world.at_capacity(&p0, d), pos: world.at_capacity(&pos, d), neg: world.at_capacity(&neg, d), score_weights })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReboundReport {
    /// Positive-data volumes, starting with the unaligned baseline `0`.
    pub n_pos: Vec<u64>,
    pub n_neg: Vec<u64>,
    /// `scores[i][j]`: score after aligning on `n_pos[i]` and fine-tuning
    /// through `n_neg[j]`.
    pub scores: Vec<Vec<f64>>,
}

impl ReboundReport {
    /// Score drop between the first two negative checkpoints, per row.
    pub fn early_drops(&self) -> Vec<f64> {
        self.scores.iter().map(|r| r[0] - r[1]).collect()
    }

    /// Mean early drop over the aligned rows (`n_pos > 0`).
    pub fn early_slope(&self) -> f64 {
        let drops: Vec<f64> = self.n_pos.iter().zip(self.early_drops()).filter(|(n, _)| **n > 0).map(|(_, d)| d).collect();
        drops.iter().sum::<f64>() / drops.len() as f64
    }

    /// Spearman correlation between `n_pos` and the early drop.
    pub fn slope_correlation(&self) -> f64 {
        let xs: Vec<f64> = self.n_pos.iter().map(|&n| n as f64).collect();
        spearman(&xs, &self.early_drops())
    }

    pub fn initial_scores_ordered(&self) -> bool {
        self.scores.windows(2).all(|w| w[1][0] > w[0][0])
    }

    /// Largest distance of a final score from the baseline's final score.
    pub fn final_spread(&self) -> f64 {
        let base = *self.scores[0].last().expect("non-empty");
        self.scores.iter().map(|r| (r.last().expect("non-empty") - base).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["n_pos", "n_neg", "score"])?;
        for (np, row) in self.n_pos.iter().zip(&self.scores) {
            for (nn, s) in self.n_neg.iter().zip(row) {
                out.write_record([np.to_string(), nn.to_string(), s.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn steps_for(n: u64, rate: f64) -> usize {
    (n as f64 * rate).round() as usize
}

pub fn rebound_experiment(spec: &ReboundSpec) -> Result<ReboundReport> {
    spec.validate()?;
    let mut n_pos = spec.n_pos_grid.clone();
    if n_pos[0] != 0 {
        n_pos.insert(0, 0);
    }
    let per_world = (0..spec.replicates)
        .into_par_iter()
        .map(|j| rebound_world_scores(spec, j, &n_pos))
        .collect::<Result<Vec<_>>>()?;
    let r = per_world.len() as f64;
    let scores = (0..n_pos.len())
        .map(|i| (0..spec.n_neg_grid.len()).map(|c| per_world.iter().map(|m| m[i][c]).sum::<f64>() / r).collect())
        .collect();
    Ok(ReboundReport { n_pos, n_neg: spec.n_neg_grid.clone(), scores })
}

fn rebound_world_scores(spec: &ReboundSpec, replicate: u64, n_pos: &[u64]) -> Result<Vec<Vec<f64>>> {
    let world = spec.world(replicate)?;
    let d = spec.capacity_d;
    let mut m0 = ToyModel::new(cont_alphabet(d), d, spec.parameterization)?;
    m0.train_on(&world.p0, spec.learning_rate, spec.pretrain_volume)?;
    n_pos
        .iter()
        .map(|&np| {
            let mut m = m0.clone();
            m.train_on(&world.pos, spec.learning_rate, steps_for(np, spec.align_steps_per_sample))?;
            let mut row = Vec::with_capacity(spec.n_neg_grid.len());
            let mut done = 0;
            for &nn in &spec.n_neg_grid {
                let total = steps_for(nn, spec.negative_steps_per_sample);
                m.train_on(&world.neg, spec.learning_rate, total - done)?;
                done = total;
                row.push(weighted_positive_score(&m, &world.score_weights));
            }
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    CapacityD,
    PretrainVolume,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorPoint {
    pub value: u64,
    pub early_slope: f64,
    pub report: ReboundReport,
}

/// Reruns the rebound experiment per knob value with everything else fixed.
pub fn factor_sweep(spec: &ReboundSpec, knob: Knob, values: &[u64]) -> Result<Vec<FactorPoint>> {
    if values.is_empty() {
        return Err(Error::Spec("knob grid is empty".into()));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Spec("knob grid must be strictly ascending".into()));
    }
    values
        .par_iter()
        .map(|&value| {
            let mut s = spec.clone();
            match knob {
                Knob::CapacityD => s.capacity_d = value as usize,
                Knob::PretrainVolume => s.pretrain_volume = value as usize,
            }
            let report = rebound_experiment(&s)?;
            Ok(FactorPoint { value, early_slope: report.early_slope(), report })
        })
        .collect()
}

pub fn write_factor_csv<W: Write>(w: W, knob: Knob, points: &[FactorPoint]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let name = match knob {
        Knob::CapacityD => "capacity_d",
        Knob::PretrainVolume => "pretrain_volume",
    };
    out.write_record([name, "early_slope", "n_pos", "n_neg", "score"])?;
    for p in points {
        for (np, row) in p.report.n_pos.iter().zip(&p.report.scores) {
            for (nn, s) in p.report.n_neg.iter().zip(row) {
                out.write_record([p.value.to_string(), p.early_slope.to_string(), np.to_string(), nn.to_string(), s.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabets() {
        assert_eq!(cont_alphabet(2).len(), 4);
        let c = complete_alphabet(2);
        assert_eq!(c.len(), 4 + 2 + 1);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tree_model_starts_uniform_on_balanced_alphabet() {
        let m = ToyModel::new(cont_alphabet(3), 3, Parameterization::Tree).unwrap();
        assert!(m.probs().iter().all(|&p| (p - 0.125).abs() < 1e-15));
        let m = ToyModel::new(complete_alphabet(2), 2, Parameterization::Tree).unwrap();
        assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn point_mass_kl_is_two_bits() {
        let mut m = ToyModel::new(cont_alphabet(2), 2, Parameterization::Flat).unwrap();
        m.set_params(&[0.0, -1e4, -1e4, -1e4]).unwrap();
        let uniform = PrunedTree::from_weights(2, cont_alphabet(2).into_iter().map(|s| (s, 1.0)).collect()).unwrap();
        let kl = kl_to_tree(&m, &uniform).unwrap();
        assert!((kl.bits - 2.0).abs() < 1e-9);
        let same = kl_to_tree(&ToyModel::new(cont_alphabet(2), 2, Parameterization::Flat).unwrap(), &uniform).unwrap();
        assert!(same.bits.abs() < 1e-12);
    }

    #[test]
    fn generate_from_point_mass() {
        let mut m = ToyModel::new(cont_alphabet(2), 2, Parameterization::Flat).unwrap();
        m.set_params(&[-1e4, -1e4, 0.0, -1e4]).unwrap();
        let ds = generate_dataset(&m, 50, &mut rng::seeded(0)).unwrap();
        assert_eq!(ds.entries(), &[(Response::parse("10").unwrap(), 50)]);
    }

    #[test]
    fn scores() {
        let m = ToyModel::new(cont_alphabet(2), 2, Parameterization::Flat).unwrap();
        let half = &cont_alphabet(2)[..2];
        assert!((positive_score(&m, half).unwrap() - 0.5).abs() < 1e-15);
        assert!(positive_score(&m, &[]).is_err());
    }

    #[test]
    fn overlapping_classes_rejected() {
        let spec = ReboundSpec { negative: ClassRule::Patterns(vec!["*****1".into()]), ..ReboundSpec::default() };
        assert!(matches!(rebound_experiment(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[2.0, 4.0, 9.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
    }
}
