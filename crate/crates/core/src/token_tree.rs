//! Binary token trees: construction from weighted datasets, pruning to a
//! fixed depth, mixing, and distribution queries over the pruned leaves.
//!
//! Counts stay integral until a probability is requested, so pruned trees
//! built from datasets carry exact rational leaf probabilities alongside the
//! `f64` view used by every numeric routine.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rand::distr::Distribution;
use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` for float-backed trees.
pub const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Response {
    pub tokens: Vec<u8>,
    pub terminated: bool,
}

impl Response {
    pub fn new(tokens: Vec<u8>) -> Result<Self> {
        if let Some(&t) = tokens.iter().find(|&&t| t > 1) {
            return Err(Error::InvalidToken(char::from_digit(t as u32, 10).unwrap_or('?')));
        }
        Ok(Response { tokens, terminated: true })
    }

    pub fn unterminated(tokens: Vec<u8>) -> Result<Self> {
        let mut r = Response::new(tokens)?;
        r.terminated = false;
        Ok(r)
    }

    pub fn empty() -> Self {
        Response { tokens: Vec::new(), terminated: true }
    }

    /// Parses a string of `'0'`/`'1'` characters into a terminated response.
    pub fn parse(s: &str) -> Result<Self> {
        let tokens = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::InvalidToken(other)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Response { tokens, terminated: true })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bits(&self) -> String {
        bits_to_string(&self.tokens)
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bits())?;
        if !self.terminated {
            f.write_str("...")?;
        }
        Ok(())
    }
}

pub(crate) fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 0 { '0' } else { '1' }).collect()
}

/// Multiset of responses with positive integer multiplicities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WeightedDataset {
    entries: Vec<(Response, u64)>,
}

impl WeightedDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (Response, u64)>) -> Result<Self> {
        let mut ds = Self::new();
        for (r, c) in entries {
            ds.push(r, c)?;
        }
        Ok(ds)
    }

    /// Convenience constructor from `("0101", count)` pairs.
    pub fn from_strs(entries: &[(&str, u64)]) -> Result<Self> {
        let mut ds = Self::new();
        for &(s, c) in entries {
            ds.push(Response::parse(s)?, c)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, response: Response, count: u64) -> Result<()> {
        if count == 0 {
            return Err(Error::invalid("dataset counts must be positive"));
        }
        self.entries.push((response, count));
        Ok(())
    }

    pub fn entries(&self) -> &[(Response, u64)] {
        &self.entries
    }

    /// Total multiplicity `|D|`.
    pub fn size(&self) -> u64 {
        self.entries.iter().map(|(_, c)| *c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Multiset union `A ⊎ B`.
    pub fn union(&self, other: &WeightedDataset) -> WeightedDataset {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().cloned());
        WeightedDataset { entries }
    }

    /// Parses the dataset text format: one response per line, optional
    /// ` x<count>` suffix, `#` comments, `-` for the empty response.
    pub fn parse(text: &str) -> Result<Self> {
        let mut ds = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
            let mut parts = line.split_whitespace();
            let body = parts.next().unwrap_or("");
            let count = match parts.next() {
                None => 1,
                Some(suffix) => {
                    let digits = suffix
                        .strip_prefix('x')
                        .ok_or_else(|| parse_err(format!("expected x<count>, got `{suffix}`")))?;
                    digits
                        .parse::<u64>()
                        .map_err(|e| parse_err(format!("bad count `{digits}`: {e}")))?
                }
            };
            if let Some(extra) = parts.next() {
                return Err(parse_err(format!("unexpected trailing `{extra}`")));
            }
            if count == 0 {
                return Err(parse_err("count must be positive".into()));
            }
            let response = if body == "-" { Response::empty() } else { Response::parse(body)? };
            ds.entries.push((response, count));
        }
        Ok(ds)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (r, c) in &self.entries {
            let body = if r.is_empty() { "-".to_string() } else { r.bits() };
            if *c == 1 {
                out.push_str(&format!("{body}\n"));
            } else {
                out.push_str(&format!("{body} x{c}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct NodeCounts {
    subtree: u64,
    eos: u64,
}

/// Weighted binary trie. Node weights are stored as integer counts over the
/// dataset size, so every weight is an exact rational.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTree {
    total: u64,
    nodes: BTreeMap<String, NodeCounts>,
}

pub fn build_tree(dataset: &WeightedDataset) -> Result<TokenTree> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut nodes: BTreeMap<String, NodeCounts> = BTreeMap::new();
    let mut total: u64 = 0;
    for (r, c) in dataset.entries() {
        if !r.terminated {
            return Err(Error::Unterminated(r.to_string()));
        }
        total = total.checked_add(*c).ok_or_else(|| Error::invalid("dataset size overflows u64"))?;
        let bits = r.bits();
        for len in 0..=bits.len() {
            let node = nodes.entry(bits[..len].to_string()).or_default();
            node.subtree += c;
        }
        nodes.get_mut(&bits).expect("inserted above").eos += c;
    }
    Ok(TokenTree { total, nodes })
}

impl TokenTree {
    /// Dataset size the weights are normalised by.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn weight_exact(&self, prefix: &str) -> BigRational {
        let n = self.nodes.get(prefix).map_or(0, |n| n.subtree);
        BigRational::new(BigInt::from(n), BigInt::from(self.total))
    }

    pub fn eos_weight_exact(&self, prefix: &str) -> BigRational {
        let n = self.nodes.get(prefix).map_or(0, |n| n.eos);
        BigRational::new(BigInt::from(n), BigInt::from(self.total))
    }

    pub fn weight(&self, prefix: &str) -> f64 {
        self.nodes.get(prefix).map_or(0.0, |n| n.subtree as f64 / self.total as f64)
    }

    pub fn eos_weight(&self, prefix: &str) -> f64 {
        self.nodes.get(prefix).map_or(0.0, |n| n.eos as f64 / self.total as f64)
    }

    /// Prefixes of every node with positive weight, in lexicographic order.
    pub fn prefixes(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn max_len(&self) -> usize {
        self.nodes.keys().map(String::len).max().unwrap_or(0)
    }

    /// Checks `weight = eos + weight(child0) + weight(child1)` at every node.
    pub fn is_conserved(&self) -> bool {
        self.nodes.iter().all(|(p, n)| {
            let child = |b: char| self.nodes.get(&format!("{p}{b}")).map_or(0, |c| c.subtree);
            n.subtree == n.eos + child('0') + child('1')
        }) && self.nodes.get("").map(|n| n.subtree) == Some(self.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LeafKind {
    #[serde(rename = "EOS")]
    Eos,
    #[serde(rename = "CONT")]
    Continuation,
}

impl LeafKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LeafKind::Eos => "EOS",
            LeafKind::Continuation => "CONT",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "EOS" => Ok(LeafKind::Eos),
            "CONT" => Ok(LeafKind::Continuation),
            other => Err(Error::invalid(format!("unknown leaf kind `{other}`"))),
        }
    }
}

/// A Huffman alphabet symbol. Ordering is lexicographic on `(prefix, kind)`
/// with EOS before CONT, which is the canonical leaf order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeafSymbol {
    pub prefix: String,
    pub kind: LeafKind,
}

impl LeafSymbol {
    pub fn eos(prefix: impl Into<String>) -> Self {
        LeafSymbol { prefix: prefix.into(), kind: LeafKind::Eos }
    }

    pub fn cont(prefix: impl Into<String>) -> Self {
        LeafSymbol { prefix: prefix.into(), kind: LeafKind::Continuation }
    }
}

impl fmt::Display for LeafSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind.as_str(), self.prefix)
    }
}

/// Top `d` layers of a token tree, as a probability vector over leaf symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedTree {
    depth: usize,
    leaves: Vec<LeafSymbol>,
    probs: Vec<f64>,
    exact: Option<Vec<BigRational>>,
}

pub fn prune(tree: &TokenTree, d: usize) -> Result<PrunedTree> {
    if d == 0 {
        return Err(Error::invalid("prune depth must be at least 1"));
    }
    let mut leaves = Vec::new();
    let mut counts = Vec::new();
    for (prefix, n) in &tree.nodes {
        if prefix.len() < d && n.eos > 0 {
            leaves.push(LeafSymbol::eos(prefix.clone()));
            counts.push(n.eos);
        } else if prefix.len() == d && n.subtree > 0 {
            leaves.push(LeafSymbol::cont(prefix.clone()));
            counts.push(n.subtree);
        }
    }
    // BTreeMap iteration is already in prefix order and each prefix yields at
    // most one leaf, so `leaves` is canonical.
    let total = BigInt::from(tree.total);
    let exact: Vec<BigRational> = counts
        .iter()
        .map(|&c| BigRational::new(BigInt::from(c), total.clone()))
        .collect();
    PrunedTree::from_exact(d, leaves, exact)
}

impl PrunedTree {
    /// Builds a tree from exact probabilities. Zero entries are dropped; the
    /// rest must sum to exactly one.
    pub fn from_exact(depth: usize, leaves: Vec<LeafSymbol>, probs: Vec<BigRational>) -> Result<Self> {
        if leaves.len() != probs.len() {
            return Err(Error::invalid("leaves and probabilities differ in length"));
        }
        let mut pairs: Vec<(LeafSymbol, BigRational)> =
            leaves.into_iter().zip(probs).filter(|(_, p)| !p.is_zero()).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let sum: BigRational = pairs.iter().map(|(_, p)| p.clone()).sum();
        if sum != BigRational::from_integer(1.into()) {
            return Err(Error::invalid(format!("leaf probabilities sum to {sum}, not 1")));
        }
        if pairs.iter().any(|(_, p)| p < &BigRational::zero()) {
            return Err(Error::invalid("negative leaf probability"));
        }
        let (leaves, exact): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        validate_leaves(depth, &leaves)?;
        let probs = exact.iter().map(|p| p.to_f64().expect("finite rational")).collect();
        Ok(PrunedTree { depth, leaves, probs, exact: Some(exact) })
    }

    /// Builds a tree from non-negative weights, normalising them. Zero
    /// weights are dropped.
    pub fn from_weights(depth: usize, weighted: Vec<(LeafSymbol, f64)>) -> Result<Self> {
        if let Some((s, w)) = weighted.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!("bad weight {w} for {s}")));
        }
        let mut pairs: Vec<(LeafSymbol, f64)> = weighted.into_iter().filter(|(_, w)| *w > 0.0).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let total: f64 = pairs.iter().map(|(_, w)| w).sum();
        let (leaves, probs): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(s, w)| (s, w / total)).unzip();
        validate_leaves(depth, &leaves)?;
        Ok(PrunedTree { depth, leaves, probs, exact: None })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leaves(&self) -> &[LeafSymbol] {
        &self.leaves
    }

    /// Leaf count `M`.
    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Exact probabilities, present when the tree was built from counts.
    pub fn exact_probs(&self) -> Option<&[BigRational]> {
        self.exact.as_deref()
    }

    pub fn index_of(&self, symbol: &LeafSymbol) -> Option<usize> {
        self.leaves.binary_search(symbol).ok()
    }

    pub fn prob_of(&self, symbol: &LeafSymbol) -> f64 {
        self.index_of(symbol).map_or(0.0, |i| self.probs[i])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["prefix", "kind", "prob"])?;
        for (s, p) in self.leaves.iter().zip(&self.probs) {
            out.write_record([s.prefix.as_str(), s.kind.as_str(), &format!("{p:e}")])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a `prefix,kind,prob` dump. Probabilities are renormalised.
    pub fn read_csv<R: BufRead>(r: R, depth: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut weighted = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::invalid("tree csv rows need prefix,kind,prob"));
            }
            if let Some(c) = rec[0].chars().find(|c| *c != '0' && *c != '1') {
                return Err(Error::InvalidToken(c));
            }
            let p: f64 = rec[2].parse().map_err(|e| Error::invalid(format!("bad prob `{}`: {e}", &rec[2])))?;
            weighted.push((LeafSymbol { prefix: rec[0].to_string(), kind: LeafKind::parse(&rec[1])? }, p));
        }
        let sum: f64 = weighted.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("tree csv probabilities sum to {sum}")));
        }
        Self::from_weights(depth, weighted)
    }
}

fn validate_leaves(depth: usize, leaves: &[LeafSymbol]) -> Result<()> {
    if depth == 0 {
        return Err(Error::invalid("tree depth must be at least 1"));
    }
    if leaves.is_empty() {
        return Err(Error::invalid("pruned tree needs at least one leaf"));
    }
    for w in leaves.windows(2) {
        if w[0] == w[1] {
            return Err(Error::invalid(format!("duplicate leaf {}", w[0])));
        }
    }
    for s in leaves {
        let ok = match s.kind {
            LeafKind::Eos => s.prefix.len() < depth,
            LeafKind::Continuation => s.prefix.len() == depth,
        };
        if !ok {
            return Err(Error::invalid(format!("leaf {s} is not valid at depth {depth}")));
        }
    }
    Ok(())
}

fn check_same_depth<'a>(trees: impl IntoIterator<Item = &'a PrunedTree>) -> Result<usize> {
    let mut depth = None;
    for t in trees {
        match depth {
            None => depth = Some(t.depth),
            Some(d) if d != t.depth => return Err(Error::DepthMismatch { expected: d, found: t.depth }),
            _ => {}
        }
    }
    depth.ok_or_else(|| Error::invalid("mix needs at least one component"))
}

/// Size-weighted mixture. Exact whenever every component is exact.
pub fn mix(components: &[(&PrunedTree, u64)]) -> Result<PrunedTree> {
    let depth = check_same_depth(components.iter().map(|(t, _)| *t))?;
    if components.iter().any(|(_, n)| *n == 0) {
        return Err(Error::invalid("mix sizes must be positive"));
    }
    if components.iter().all(|(t, _)| t.exact.is_some()) {
        let total = BigInt::from(components.iter().map(|(_, n)| u128::from(*n)).sum::<u128>());
        let mut acc: BTreeMap<&LeafSymbol, BigRational> = BTreeMap::new();
        for (t, n) in components {
            let n = BigInt::from(*n);
            for (s, p) in t.leaves.iter().zip(t.exact.as_ref().expect("checked")) {
                let term = p * &n;
                acc.entry(s).and_modify(|a| *a += &term).or_insert(term);
            }
        }
        let (leaves, probs): (Vec<_>, Vec<_>) =
            acc.into_iter().map(|(s, a)| (s.clone(), a / total.clone())).unzip();
        PrunedTree::from_exact(depth, leaves, probs)
    } else {
        let weighted: Vec<(&PrunedTree, f64)> = components.iter().map(|(t, n)| (*t, *n as f64)).collect();
        mix_weighted(&weighted)
    }
}

/// Mixture with real-valued sizes (e.g. `k/3`). Zero-size components are
/// ignored; the result is float-backed.
pub fn mix_weighted(components: &[(&PrunedTree, f64)]) -> Result<PrunedTree> {
    let depth = check_same_depth(components.iter().map(|(t, _)| *t))?;
    if components.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("mix sizes must be finite and non-negative"));
    }
    let total: f64 = components.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::invalid("mix needs positive total size"));
    }
    let mut acc: BTreeMap<&LeafSymbol, f64> = BTreeMap::new();
    for (t, w) in components.iter().filter(|(_, w)| *w > 0.0) {
        for (s, p) in t.leaves.iter().zip(&t.probs) {
            *acc.entry(s).or_insert(0.0) += w * p;
        }
    }
    let weighted = acc.into_iter().map(|(s, a)| (s.clone(), a / total)).collect();
    PrunedTree::from_weights(depth, weighted)
}

pub fn leaf_distribution(t: &PrunedTree) -> &[f64] {
    t.probs()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledResponse {
    pub response: Response,
    pub segments: usize,
    /// The segment budget ran out on a CONT symbol and the response was cut.
    pub truncated: bool,
}

/// Draws leaf symbols iid until an EOS symbol or `max_segments` draws.
pub fn sample_response<R: Rng + ?Sized>(t: &PrunedTree, rng: &mut R, max_segments: usize) -> Result<SampledResponse> {
    let sampler = LeafSampler::new(t)?;
    sampler.sample(rng, max_segments)
}

/// Reusable sampler; avoids rebuilding the alias table per draw.
pub struct LeafSampler<'a> {
    tree: &'a PrunedTree,
    index: WeightedIndex<f64>,
}

impl<'a> LeafSampler<'a> {
    pub fn new(tree: &'a PrunedTree) -> Result<Self> {
        let index = WeightedIndex::new(tree.probs()).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(LeafSampler { tree, index })
    }

    pub fn sample_leaf<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, max_segments: usize) -> Result<SampledResponse> {
        if max_segments == 0 {
            return Err(Error::invalid("max_segments must be at least 1"));
        }
        let mut tokens = Vec::new();
        for seg in 1..=max_segments {
            let s = &self.tree.leaves[self.index.sample(rng)];
            tokens.extend(s.prefix.bytes().map(|b| b - b'0'));
            if s.kind == LeafKind::Eos {
                return Ok(SampledResponse { response: Response { tokens, terminated: true }, segments: seg, truncated: false });
            }
        }
        Ok(SampledResponse { response: Response { tokens, terminated: true }, segments: max_segments, truncated: true })
    }
}

pub fn entropy(t: &PrunedTree) -> f64 {
    -t.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
}

/// Aligns `data` onto `model`'s alphabet. Fails if a data leaf is missing
/// from the model.
pub(crate) fn align(data: &PrunedTree, model: &PrunedTree) -> Result<Vec<(f64, f64)>> {
    if data.depth != model.depth {
        return Err(Error::DepthMismatch { expected: model.depth, found: data.depth });
    }
    data.leaves
        .iter()
        .zip(&data.probs)
        .map(|(s, &p)| match model.index_of(s) {
            Some(j) => Ok((p, model.probs[j])),
            None => Err(Error::SupportMismatch(s.to_string())),
        })
        .collect()
}

pub fn cross_entropy(data: &PrunedTree, model: &PrunedTree) -> Result<f64> {
    Ok(-align(data, model)?.iter().map(|&(p, q)| p * q.log2()).sum::<f64>())
}

pub fn kl(data: &PrunedTree, model: &PrunedTree) -> Result<f64> {
    Ok(align(data, model)?.iter().map(|&(p, q)| p * (p / q).log2()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(entries: &[(&str, u64)], d: usize) -> PrunedTree {
        prune(&build_tree(&WeightedDataset::from_strs(entries).unwrap()).unwrap(), d).unwrap()
    }

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn build_small_examples() {
        let t = build_tree(&WeightedDataset::from_strs(&[("0", 1), ("1", 1)]).unwrap()).unwrap();
        assert_eq!(t.eos_weight("0"), 0.5);
        assert_eq!(t.eos_weight("1"), 0.5);
        assert_eq!(t.weight_exact(""), q(1, 1));

        let t = build_tree(&WeightedDataset::from_strs(&[("0", 3), ("10", 1)]).unwrap()).unwrap();
        assert_eq!(t.eos_weight_exact("0"), q(3, 4));
        assert_eq!(t.eos_weight_exact("10"), q(1, 4));
        assert_eq!(t.weight_exact("1"), q(1, 4));
        assert!(t.is_conserved());
    }

    #[test]
    fn build_errors() {
        assert!(matches!(build_tree(&WeightedDataset::new()), Err(Error::EmptyDataset)));
        assert!(matches!(Response::parse("012"), Err(Error::InvalidToken('2'))));
        let ds = WeightedDataset::from_entries([(Response::unterminated(vec![0]).unwrap(), 1)]).unwrap();
        assert!(matches!(build_tree(&ds), Err(Error::Unterminated(_))));
    }

    #[test]
    fn prune_aggregates_residual_mass() {
        // A response ending at depth d is a CONT leaf, not an EOS leaf.
        let t = tree(&[("0", 2), ("10", 1), ("11", 1)], 1);
        assert_eq!(t.leaves(), &[LeafSymbol::cont("0"), LeafSymbol::cont("1")]);
        assert_eq!(t.probs(), &[0.5, 0.5]);
        let t = tree(&[("0", 2), ("10", 1), ("11", 1)], 2);
        assert_eq!(t.leaves(), &[LeafSymbol::eos("0"), LeafSymbol::cont("10"), LeafSymbol::cont("11")]);
    }

    #[test]
    fn prune_uniform_depth_two_gives_cont_leaves() {
        let t = tree(&[("00", 1), ("01", 1), ("10", 1), ("11", 1)], 2);
        assert!(t.leaves().iter().all(|s| s.kind == LeafKind::Continuation));
        assert_eq!(t.probs(), &[0.25; 4]);
    }

    #[test]
    fn deep_prune_is_identity_on_frequencies() {
        let t = tree(&[("0", 3), ("10", 1), ("", 4)], 3);
        assert_eq!(t.leaves(), &[LeafSymbol::eos(""), LeafSymbol::eos("0"), LeafSymbol::eos("10")]);
        assert_eq!(t.exact_probs().unwrap(), &[q(1, 2), q(3, 8), q(1, 8)]);
    }

    #[test]
    fn mix_examples() {
        let a = tree(&[("0", 1)], 1);
        let b = tree(&[("1", 1)], 1);
        let m = mix(&[(&a, 3), (&b, 1)]).unwrap();
        assert_eq!(m.exact_probs().unwrap(), &[q(3, 4), q(1, 4)]);
        let same = mix(&[(&m, 5), (&m, 2)]).unwrap();
        assert_eq!(same, m);
        let deeper = tree(&[("0", 1)], 2);
        assert!(matches!(mix(&[(&a, 1), (&deeper, 1)]), Err(Error::DepthMismatch { .. })));
    }

    #[test]
    fn entropy_and_cross_entropy() {
        let t = tree(&[("0", 2), ("10", 1), ("11", 1)], 2);
        assert!((entropy(&t) - 1.5).abs() < 1e-15);
        let skew = tree(&[("0", 3), ("1", 1)], 1);
        assert!((entropy(&skew) - 0.811_278_124_459_132_9).abs() < 1e-15);
        let point = tree(&[("0", 1)], 1);
        let half = tree(&[("0", 1), ("1", 1)], 1);
        assert_eq!(cross_entropy(&point, &half).unwrap(), 1.0);
        assert_eq!(kl(&point, &half).unwrap(), 1.0);
        assert!(matches!(cross_entropy(&half, &point), Err(Error::SupportMismatch(_))));
    }

    #[test]
    fn dataset_text_round_trip() {
        let text = "# comment\n0101 x3\n1\n\n- x2  # empty\n";
        let ds = WeightedDataset::parse(text).unwrap();
        assert_eq!(ds.size(), 6);
        assert_eq!(WeightedDataset::parse(&ds.to_text()).unwrap(), ds);
        assert!(matches!(WeightedDataset::parse("01 3"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(WeightedDataset::parse("0a"), Err(Error::InvalidToken('a'))));
    }

    #[test]
    fn csv_round_trip() {
        let t = tree(&[("0", 3), ("10", 1), ("11", 2)], 2);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = PrunedTree::read_csv(&buf[..], 2).unwrap();
        assert_eq!(back.leaves(), t.leaves());
        for (a, b) in back.probs().iter().zip(t.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sampling_single_leaf() {
        let t = tree(&[("0", 1)], 2);
        let mut rng = crate::rng::seeded(1);
        for _ in 0..10 {
            let s = sample_response(&t, &mut rng, 4).unwrap();
            assert_eq!(s.response.bits(), "0");
            assert!(!s.truncated);
        }
        assert!(sample_response(&t, &mut rng, 0).is_err());
    }

    #[test]
    fn sampling_truncates_on_budget() {
        let t = tree(&[("00", 1)], 1);
        let mut rng = crate::rng::seeded(1);
        let s = sample_response(&t, &mut rng, 3).unwrap();
        assert!(s.truncated);
        assert_eq!(s.response.bits(), "000");
    }
}
