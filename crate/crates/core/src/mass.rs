//! Leaf mass distributions: `X = M·p` over a pruned tree's leaves, the
//! unit-mean Pareto law, and synthetic trees drawn from it.

use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token_tree::{LeafSymbol, PrunedTree, bits_to_string, cross_entropy};

/// Pareto law with unit mean: scale `c = (α−1)/α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPareto", into = "RawPareto")]
pub struct ParetoSpec {
    alpha: f64,
    dist: rand_distr::Pareto<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPareto {
    alpha: f64,
}

impl TryFrom<RawPareto> for ParetoSpec {
    type Error = Error;
    fn try_from(raw: RawPareto) -> Result<Self> {
        ParetoSpec::unit_mean(raw.alpha)
    }
}

impl From<ParetoSpec> for RawPareto {
    fn from(p: ParetoSpec) -> Self {
        RawPareto { alpha: p.alpha }
    }
}

impl ParetoSpec {
    pub fn unit_mean(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("pareto shape must be finite and > 1 (got {alpha})")));
        }
        let c = (alpha - 1.0) / alpha;
        let dist = rand_distr::Pareto::new(c, alpha).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(ParetoSpec { alpha, dist })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c(&self) -> f64 {
        (self.alpha - 1.0) / self.alpha
    }

    /// `c²α / ((α−1)²(α−2))`, finite only for `α > 2`.
    pub fn variance(&self) -> Option<f64> {
        let a = self.alpha;
        (a > 2.0).then(|| self.c().powi(2) * a / ((a - 1.0).powi(2) * (a - 2.0)))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < self.c() { 0.0 } else { 1.0 - (self.c() / x).powf(self.alpha) }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng)
    }
}

/// Law of a leaf mass. `Degenerate` is the point mass `X ≡ 1`, kept for
/// exact-zero checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassLaw {
    Pareto(ParetoSpec),
    Degenerate,
}

impl MassLaw {
    pub fn pareto(alpha: f64) -> Result<Self> {
        Ok(MassLaw::Pareto(ParetoSpec::unit_mean(alpha)?))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MassLaw::Pareto(p) => p.sample(rng),
            MassLaw::Degenerate => 1.0,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            MassLaw::Pareto(p) => Some(p.alpha()),
            MassLaw::Degenerate => None,
        }
    }

    /// Finite variance, so standard errors are meaningful.
    pub fn has_variance(&self) -> bool {
        match self {
            MassLaw::Pareto(p) => p.variance().is_some(),
            MassLaw::Degenerate => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassSource {
    TreeDerived { m: usize },
    ParetoSampled { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassSampleSet {
    pub values: Vec<f64>,
    pub source: MassSource,
    exact: Option<Vec<BigRational>>,
}

impl MassSampleSet {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Exact mean for sets derived from count-backed trees.
    pub fn exact_mean(&self) -> Option<BigRational> {
        let v = self.exact.as_ref()?;
        let sum: BigRational = v.iter().cloned().sum();
        Some(sum / BigRational::from_integer(BigInt::from(v.len())))
    }

    pub fn exact_values(&self) -> Option<&[BigRational]> {
        self.exact.as_deref()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["index", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            out.write_record([i.to_string(), format!("{v:e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn pareto_sample<R: Rng + ?Sized>(spec: &ParetoSpec, rng: &mut R, n: usize) -> Result<MassSampleSet> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let values = (0..n).map(|_| spec.sample(rng)).collect();
    Ok(MassSampleSet { values, source: MassSource::ParetoSampled { alpha: spec.alpha() }, exact: None })
}

/// `M·p_i` for every leaf, in canonical order.
pub fn mass_samples(t: &PrunedTree) -> MassSampleSet {
    let m = t.leaf_count();
    let values = t.probs().iter().map(|p| m as f64 * p).collect();
    let exact = t.exact_probs().map(|ps| {
        let mq = BigRational::from_integer(BigInt::from(m));
        ps.iter().map(|p| p * &mq).collect()
    });
    MassSampleSet { values, source: MassSource::TreeDerived { m }, exact }
}

/// `CE(data, model) − (E[−X_data log2 X_model] + log2 M)`, the average taken
/// uniformly over the model's `M` leaves. Zero up to rounding.
pub fn lemma_residual(data: &PrunedTree, model: &PrunedTree) -> Result<f64> {
    let ce = cross_entropy(data, model)?;
    let m = model.leaf_count() as f64;
    let mut acc = 0.0;
    for (s, &q) in model.leaves().iter().zip(model.probs()) {
        let xd = m * data.prob_of(s);
        if xd > 0.0 {
            acc -= xd * (m * q).log2();
        }
    }
    Ok(ce - (acc / m + m.log2()))
}

/// `M` CONT leaves at depth `ceil(log2 M)`, prefixes the binary leaf index,
/// probabilities proportional to iid draws from `law`.
pub fn synth_tree<R: Rng + ?Sized>(m: usize, law: &MassLaw, rng: &mut R) -> Result<PrunedTree> {
    if m < 2 {
        return Err(Error::invalid("synthetic trees need at least 2 leaves"));
    }
    let d = (usize::BITS - (m - 1).leading_zeros()) as usize;
    let weighted = (0..m)
        .map(|i| {
            let bits: Vec<u8> = (0..d).rev().map(|b| ((i >> b) & 1) as u8).collect();
            (LeafSymbol::cont(bits_to_string(&bits)), law.sample(rng))
        })
        .collect();
    PrunedTree::from_weights(d, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token_tree::{WeightedDataset, build_tree, prune};

    #[test]
    fn unit_mean_scale() {
        assert_eq!(ParetoSpec::unit_mean(2.0).unwrap().c(), 0.5);
        assert!((ParetoSpec::unit_mean(3.0).unwrap().c() - 2.0 / 3.0).abs() < 1e-16);
        assert!(ParetoSpec::unit_mean(1.0).is_err());
        assert!(ParetoSpec::unit_mean(f64::NAN).is_err());
        assert!((ParetoSpec::unit_mean(3.0).unwrap().variance().unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(ParetoSpec::unit_mean(2.0).unwrap().variance().is_none());
    }

    #[test]
    fn spec_json_stores_alpha_only() {
        let p = ParetoSpec::unit_mean(3.0).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"alpha":3.0}"#);
        let back: ParetoSpec = serde_json::from_str(r#"{"alpha":3.0}"#).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<ParetoSpec>(r#"{"alpha":0.5}"#).is_err());
        assert!(serde_json::from_str::<ParetoSpec>(r#"{"alpha":3,"c":1}"#).is_err());
    }

    #[test]
    fn samples_respect_support() {
        let p = ParetoSpec::unit_mean(2.5).unwrap();
        let s = pareto_sample(&p, &mut crate::rng::seeded(4), 10_000).unwrap();
        assert!(s.values.iter().all(|&x| x >= p.c()));
    }

    #[test]
    fn tree_masses() {
        let t = prune(&build_tree(&WeightedDataset::from_strs(&[("0", 3), ("1", 1)]).unwrap()).unwrap(), 1).unwrap();
        let m = mass_samples(&t);
        assert_eq!(m.values, vec![1.5, 0.5]);
        assert_eq!(m.exact_mean().unwrap(), BigRational::from_integer(1.into()));
        let r = lemma_residual(&t, &t).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn synth_tree_shape() {
        let law = MassLaw::pareto(3.0).unwrap();
        let a = synth_tree(5, &law, &mut crate::rng::seeded(2)).unwrap();
        let b = synth_tree(5, &law, &mut crate::rng::seeded(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.depth(), 3);
        assert_eq!(a.leaf_count(), 5);
        assert_eq!(a.leaves()[4], LeafSymbol::cont("100"));
        assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(synth_tree(2, &law, &mut crate::rng::seeded(2)).unwrap().depth(), 1);
        let flat = synth_tree(8, &MassLaw::Degenerate, &mut crate::rng::seeded(0)).unwrap();
        assert!(flat.probs().iter().all(|&p| p == 0.125));
    }
}
