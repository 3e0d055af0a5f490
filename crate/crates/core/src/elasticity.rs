//! Normalized compression rates of the pre-training and alignment components
//! under a three-way pre-training split plus alignment and perturbation data,
//! their derivatives in the perturbation ratio `l`, and the finite-tree cross
//! check.
//!
//! With iid unit-mean masses `(X1, X2, X3)` the mixture leaf mass is
//!
//! ```text
//! X_D = (k/3·(X1+X2+X3) + X2 + l·X3) / (k+1+l)
//! ```
//!
//! and the two rates are `γ_p = E[−Σ/3 · log2 X_D]`, `γ_a = E[−X2 · log2 X_D]`.
//!
//! Two estimators are offered. `Plain` averages the integrand directly.
//! `Symmetrized` averages each triple over all six orderings of its
//! coordinates; the expectation is unchanged because the triple is
//! exchangeable, but the `O(1/k)` fluctuation that otherwise buries the
//! `O(1/k²)` pre-training derivative cancels exactly.

use std::f64::consts::LN_2;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{normalized_rate, normalized_rate_terms};
use crate::error::{Error, Result};
use crate::mass::{MassLaw, synth_tree};
use crate::mc::{self, Estimate};
use crate::rng::{self, tag};
use crate::token_tree::{PrunedTree, mix_weighted};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "p")]
    Pretrain,
    #[serde(rename = "a")]
    Alignment,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Plain,
    #[default]
    Symmetrized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityConfig {
    pub k: f64,
    pub l_grid: Vec<f64>,
    pub law: MassLaw,
    pub n_samples: u64,
    pub seed: u64,
    pub h: f64,
    pub estimator: Estimator,
}

impl ElasticityConfig {
    pub fn new(k: f64, l_grid: Vec<f64>, law: MassLaw, n_samples: u64, seed: u64, h: f64) -> Result<Self> {
        let cfg = ElasticityConfig { k, l_grid, law, n_samples, seed, h, estimator: Estimator::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_k(&self, k: f64) -> Result<Self> {
        let cfg = ElasticityConfig { k, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_estimator(mut self, estimator: Estimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 2.0) || !self.k.is_finite() {
            return Err(Error::invalid(format!("k must be finite and >= 2 (got {})", self.k)));
        }
        if self.l_grid.is_empty() {
            return Err(Error::invalid("l_grid is empty"));
        }
        if self.l_grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("l_grid values must be finite and >= 0"));
        }
        if self.l_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("l_grid must be strictly ascending"));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::invalid(format!("h must be positive (got {})", self.h)));
        }
        if let Some(spacing) = self.l_grid.windows(2).map(|w| w[1] - w[0]).reduce(f64::min) {
            if self.h > spacing * (1.0 + 1e-12) {
                return Err(Error::invalid(format!("h = {} exceeds the l_grid spacing {spacing}", self.h)));
            }
        }
        if !self.law.has_variance() {
            return Err(Error::invalid("standard errors need a mass law with finite variance (alpha > 2)"));
        }
        if self.n_samples < 2 {
            return Err(Error::invalid("n_samples must be at least 2"));
        }
        Ok(())
    }
}

/// Ordered `(role of X2, role of X3)` coordinate pairs.
const ALL_PAIRS: [(usize, usize); 6] = [(1, 2), (2, 1), (0, 1), (1, 0), (0, 2), (2, 0)];
const PLAIN_PAIR: [(usize, usize); 1] = [(1, 2)];

fn pairs(e: Estimator) -> &'static [(usize, usize)] {
    match e {
        Estimator::Plain => &PLAIN_PAIR,
        Estimator::Symmetrized => &ALL_PAIRS,
    }
}

#[derive(Clone, Copy)]
struct Kernel {
    k: f64,
    estimator: Estimator,
}

impl Kernel {
    /// Per-sample `(γ_p, γ_a)` integrands at `l`, in bits. The numerator is
    /// grouped as `(k·Σ/3 + X2) + l·X3` so that `X ≡ 1` reproduces the
    /// normalizer bit for bit and yields exact zeros.
    fn gamma(&self, x: &[f64; 3], l: f64) -> (f64, f64) {
        let w = (x[0] + x[1] + x[2]) / 3.0;
        let base = self.k * w;
        let ln_den = ((self.k + 1.0) + l).ln();
        let ps = pairs(self.estimator);
        let (mut sp, mut sa) = (0.0, 0.0);
        for &(i, j) in ps {
            let ln_xd = ((base + x[i]) + l * x[j]).ln() - ln_den;
            sp += ln_xd;
            sa += x[i] * ln_xd;
        }
        let n = ps.len() as f64;
        (-w * sp / n / LN_2, -sa / n / LN_2)
    }

    /// Per-sample central differences `(γ_p(l+h) − γ_p(l−h))/(2h)` and the
    /// same for `γ_a`, formed with `ln_1p` so no large logs cancel.
    fn gamma_fd(&self, x: &[f64; 3], l: f64, h: f64) -> (f64, f64) {
        let w = (x[0] + x[1] + x[2]) / 3.0;
        let base = self.k * w;
        let two_h = 2.0 * h;
        let den = (two_h / ((self.k + 1.0) + (l - h))).ln_1p();
        let ps = pairs(self.estimator);
        let (mut sp, mut sa) = (0.0, 0.0);
        for &(i, j) in ps {
            let t = (two_h * x[j] / ((base + x[i]) + (l - h) * x[j])).ln_1p() - den;
            sp += t;
            sa += x[i] * t;
        }
        let n = ps.len() as f64;
        (-w * sp / n / two_h / LN_2, -sa / n / two_h / LN_2)
    }
}

pub fn gamma_component_mc(cfg: &ElasticityConfig, component: Component, l: f64) -> Result<Estimate> {
    cfg.validate()?;
    let kern = Kernel { k: cfg.k, estimator: cfg.estimator };
    let est = mc::triples(&cfg.law, cfg.seed, cfg.n_samples, 1, |x, out| {
        let (p, a) = kern.gamma(x, l);
        out[0] = match component {
            Component::Pretrain => p,
            Component::Alignment => a,
        };
    });
    Ok(est[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub l: f64,
    pub gamma_p: f64,
    pub gamma_p_se: f64,
    pub gamma_a: f64,
    pub gamma_a_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub k: f64,
    pub alpha: Option<f64>,
    pub n_samples: u64,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    pub wall_time_secs: f64,
}

pub const SWEEP_HEADER: [&str; 9] = ["k", "alpha", "l", "gamma_p", "gamma_p_se", "gamma_a", "gamma_a_se", "n_samples", "seed"];

pub(crate) fn alpha_field(alpha: Option<f64>) -> String {
    alpha.map_or_else(|| "degenerate".to_string(), |a| a.to_string())
}

impl SweepResult {
    pub fn csv_records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    self.k.to_string(),
                    alpha_field(self.alpha),
                    r.l.to_string(),
                    r.gamma_p.to_string(),
                    r.gamma_p_se.to_string(),
                    r.gamma_a.to_string(),
                    r.gamma_a_se.to_string(),
                    self.n_samples.to_string(),
                    self.seed.to_string(),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_sweeps_csv(w, std::slice::from_ref(self))
    }
}

/// Writes several sweeps (e.g. one per `k`) into one CSV. Wall time is kept
/// out of the file so reruns are byte-identical.
pub fn write_sweeps_csv<W: Write>(w: W, sweeps: &[SweepResult]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for s in sweeps {
        for rec in s.csv_records() {
            out.write_record(rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Both components at every grid point, on one shared set of triples.
pub fn sweep(cfg: &ElasticityConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let start = Instant::now();
    let kern = Kernel { k: cfg.k, estimator: cfg.estimator };
    let grid = cfg.l_grid.clone();
    let est = mc::triples(&cfg.law, cfg.seed, cfg.n_samples, 2 * grid.len(), |x, out| {
        for (i, &l) in grid.iter().enumerate() {
            let (p, a) = kern.gamma(x, l);
            out[2 * i] = p;
            out[2 * i + 1] = a;
        }
    });
    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &l)| SweepRow {
            l,
            gamma_p: est[2 * i].mean,
            gamma_p_se: est[2 * i].se,
            gamma_a: est[2 * i + 1].mean,
            gamma_a_se: est[2 * i + 1].se,
        })
        .collect();
    Ok(SweepResult {
        k: cfg.k,
        alpha: cfg.law.alpha(),
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        rows,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DerivativeMethod {
    #[serde(rename = "FD")]
    Fd,
    #[serde(rename = "CLOSED_FORM_LIMIT")]
    ClosedFormLimit,
    #[serde(rename = "LEADING_ORDER")]
    LeadingOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: DerivativeMethod,
}

impl DerivativeEstimate {
    pub fn ci_excludes_zero(&self, z: f64) -> bool {
        self.value.abs() > z * self.std_error
    }
}

/// Central difference of a deterministic function. Standard error is 0.
pub fn derivative_fd_fn<F: Fn(f64) -> f64>(f: F, l: f64, h: f64) -> Result<DerivativeEstimate> {
    if !(h > 0.0) {
        return Err(Error::invalid("h must be positive"));
    }
    Ok(DerivativeEstimate { value: (f(l + h) - f(l - h)) / (2.0 * h), std_error: 0.0, method: DerivativeMethod::Fd })
}

fn check_fd_point(cfg: &ElasticityConfig, l: f64) -> Result<()> {
    // X_D stays positive for every triple iff l > −k/3.
    if !l.is_finite() || l - cfg.h <= -cfg.k / 3.0 {
        return Err(Error::invalid(format!("l − h = {} leaves the domain l > −k/3", l - cfg.h)));
    }
    Ok(())
}

/// Paired central differences of both components at each `l`, step `cfg.h`.
pub fn derivatives(cfg: &ElasticityConfig, ls: &[f64]) -> Result<Vec<(DerivativeEstimate, DerivativeEstimate)>> {
    cfg.validate()?;
    for &l in ls {
        check_fd_point(cfg, l)?;
    }
    let kern = Kernel { k: cfg.k, estimator: cfg.estimator };
    let h = cfg.h;
    let est = mc::triples(&cfg.law, cfg.seed, cfg.n_samples, 2 * ls.len(), |x, out| {
        for (i, &l) in ls.iter().enumerate() {
            let (p, a) = kern.gamma_fd(x, l, h);
            out[2 * i] = p;
            out[2 * i + 1] = a;
        }
    });
    let fd = |e: &Estimate| DerivativeEstimate { value: e.mean, std_error: e.se, method: DerivativeMethod::Fd };
    Ok((0..ls.len()).map(|i| (fd(&est[2 * i]), fd(&est[2 * i + 1]))).collect())
}

/// `dγ/dl` of one component at `l`, in bits, by paired central difference.
pub fn derivative_fd(cfg: &ElasticityConfig, component: Component, l: f64) -> Result<DerivativeEstimate> {
    let (p, a) = derivatives(cfg, &[l])?[0];
    Ok(match component {
        Component::Pretrain => p,
        Component::Alignment => a,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Limit {
    S1,
    S2,
}

/// Closed-form `l → 0` limits of `dS1/dl` and `dS2/dl` (natural log), where
/// `γ_p = −S1/ln 2` and `γ_a = −S2/ln 2`:
///
/// ```text
/// dS1/dl ≈ E[X1]/(k(k+1)) − (3/k²)·E[X2X3/ΣX]
/// dS2/dl ≈ (3/k)·E[X2X3/ΣX] − 1/(k+1)
/// ```
///
/// These are truncated expansions in `1/k`; the first is accurate to
/// `O(1/k³)`, the second only to `O(1/k²)`. Integrands are symmetrized.
pub fn ds_limit(k: f64, law: &MassLaw, n_samples: u64, seed: u64, which: Limit) -> Result<DerivativeEstimate> {
    if !(k > 0.0) {
        return Err(Error::invalid("k must be positive"));
    }
    let est = mc::triples(law, seed, n_samples, 1, |x, out| {
        let s = x[0] + x[1] + x[2];
        let e2 = x[0] * x[1] + x[0] * x[2] + x[1] * x[2];
        out[0] = match which {
            Limit::S1 => (s / 3.0) / (k * (k + 1.0)) - e2 / (k * k * s),
            Limit::S2 => e2 / (k * s) - 1.0 / (k + 1.0),
        };
    })[0];
    Ok(DerivativeEstimate { value: est.mean, std_error: est.se, method: DerivativeMethod::ClosedFormLimit })
}

/// `dγ/dl` in bits implied by a `dS/dl` estimate in nats.
pub fn gamma_prime_from_ds(ds: &DerivativeEstimate) -> DerivativeEstimate {
    DerivativeEstimate { value: -ds.value / LN_2, std_error: ds.std_error / LN_2, method: ds.method }
}

/// `q = E[Xi·Xj/(X1+X2+X3)]` for the coordinate pair `(i, j)`.
pub fn leading_order_oracle_pair(law: &MassLaw, n_samples: u64, seed: u64, pair: (usize, usize)) -> Result<Estimate> {
    let (i, j) = pair;
    if i == j || i > 2 || j > 2 {
        return Err(Error::invalid("pair must name two distinct coordinates in 0..3"));
    }
    Ok(mc::triples(law, seed, n_samples, 1, |x, out| out[0] = x[i] * x[j] / (x[0] + x[1] + x[2]))[0])
}

/// `q = E[X2·X3/(X1+X2+X3)]`; `q < 1/3` unless the law is degenerate.
pub fn leading_order_oracle(law: &MassLaw, n_samples: u64) -> Result<Estimate> {
    leading_order_oracle_pair(law, n_samples, 0, (1, 2))
}

/// Leading-order `γ_a′(0) ≈ 3/((k+1)·ln 2)·(1/3 − q)`, in bits.
pub fn gamma_a_prime_leading(k: f64, q: &Estimate) -> DerivativeEstimate {
    let scale = 3.0 / ((k + 1.0) * LN_2);
    DerivativeEstimate { value: scale * (1.0 / 3.0 - q.mean), std_error: scale * q.se, method: DerivativeMethod::LeadingOrder }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "INCONCLUSIVE")]
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }

    /// Sign law `γ_p′ < 0 < γ_a′` judged at 99%. An interval containing
    /// zero gives `Inconclusive`.
    pub fn from_derivatives(dp: &DerivativeEstimate, da: &DerivativeEstimate) -> Verdict {
        if !dp.ci_excludes_zero(Z99) || !da.ci_excludes_zero(Z99) {
            Verdict::Inconclusive
        } else if dp.value < 0.0 && da.value > 0.0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportRow {
    pub k: f64,
    pub dgp_dl: DerivativeEstimate,
    pub dga_dl: DerivativeEstimate,
    pub r: f64,
    pub elastic_p: f64,
    pub elastic_a: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: [&str; 7] = ["k", "dgp_dl", "dga_dl", "R", "elastic_p", "elastic_a", "verdict"];

impl InvariantReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.k.to_string(),
                r.dgp_dl.value.to_string(),
                r.dga_dl.value.to_string(),
                r.r.to_string(),
                r.elastic_p.to_string(),
                r.elastic_a.to_string(),
                r.verdict.as_str().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Least-squares slopes of `ln|γ_p′|` and `ln|γ_a′|` against `ln k`.
    pub fn order_slopes(&self) -> (f64, f64) {
        let ks: Vec<f64> = self.rows.iter().map(|r| r.k).collect();
        let p: Vec<f64> = self.rows.iter().map(|r| r.dgp_dl.value).collect();
        let a: Vec<f64> = self.rows.iter().map(|r| r.dga_dl.value).collect();
        (loglog_slope(&ks, &p), loglog_slope(&ks, &a))
    }
}

pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// `R(k) = |γ_a′/(−k·γ_p′) − 1|`.
pub fn ratio(k: f64, dgp: f64, dga: f64) -> f64 {
    (dga / (-k * dgp) - 1.0).abs()
}

/// Paired derivatives of both components over one `l` grid at one `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTable {
    pub k: f64,
    pub alpha: Option<f64>,
    pub n_samples: u64,
    pub seed: u64,
    pub h: f64,
    pub l_grid: Vec<f64>,
    pub values: Vec<(DerivativeEstimate, DerivativeEstimate)>,
}

pub const DERIVATIVE_HEADER: [&str; 10] = ["k", "alpha", "l", "dgp_dl", "dgp_dl_se", "dga_dl", "dga_dl_se", "h", "n_samples", "seed"];

impl DerivativeTable {
    pub fn compute(cfg: &ElasticityConfig) -> Result<Self> {
        let values = derivatives(cfg, &cfg.l_grid)?;
        Ok(DerivativeTable {
            k: cfg.k,
            alpha: cfg.law.alpha(),
            n_samples: cfg.n_samples,
            seed: cfg.seed,
            h: cfg.h,
            l_grid: cfg.l_grid.clone(),
            values,
        })
    }

    /// `R(k)` and the sign verdict at the first grid point; elastic products
    /// `k·|Δγ_p|` and `|Δγ_a|`, with `Δγ` the trapezoid integral of the
    /// derivative over the grid (sizes in units of `|D_a|`).
    pub fn report_row(&self) -> ReportRow {
        let (dgp, dga) = self.values[0];
        let ps: Vec<f64> = self.values.iter().map(|(p, _)| p.value).collect();
        let as_: Vec<f64> = self.values.iter().map(|(_, a)| a.value).collect();
        ReportRow {
            k: self.k,
            dgp_dl: dgp,
            dga_dl: dga,
            r: ratio(self.k, dgp.value, dga.value),
            elastic_p: self.k * trapezoid(&self.l_grid, &ps).abs(),
            elastic_a: trapezoid(&self.l_grid, &as_).abs(),
            verdict: Verdict::from_derivatives(&dgp, &dga),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_derivative_tables(w, std::slice::from_ref(self))
    }

    fn records(&self) -> Vec<[String; 10]> {
        self.l_grid
            .iter()
            .zip(&self.values)
            .map(|(l, (p, a))| {
                [
                    self.k.to_string(),
                    alpha_field(self.alpha),
                    l.to_string(),
                    p.value.to_string(),
                    p.std_error.to_string(),
                    a.value.to_string(),
                    a.std_error.to_string(),
                    self.h.to_string(),
                    self.n_samples.to_string(),
                    self.seed.to_string(),
                ]
            })
            .collect()
    }
}

pub fn write_derivative_tables<W: Write>(w: W, tables: &[DerivativeTable]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(DERIVATIVE_HEADER)?;
    for t in tables {
        for rec in t.records() {
            out.write_record(rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads tables written by `write_derivative_tables`. Consecutive rows with
/// the same `k` form one table.
pub fn read_derivative_tables<R: std::io::Read>(r: R) -> Result<Vec<DerivativeTable>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(DERIVATIVE_HEADER) {
        return Err(Error::Parse { line: 1, msg: format!("expected header {}", DERIVATIVE_HEADER.join(",")) });
    }
    let mut tables: Vec<DerivativeTable> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != DERIVATIVE_HEADER.len() {
            return Err(Error::Parse { line, msg: "wrong number of fields".into() });
        }
        let num = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("{}: {e}", DERIVATIVE_HEADER[j]) })
        };
        let int = |j: usize| -> Result<u64> {
            rec[j].parse::<u64>().map_err(|e| Error::Parse { line, msg: format!("{}: {e}", DERIVATIVE_HEADER[j]) })
        };
        let alpha = if &rec[1] == "degenerate" { None } else { Some(num(1)?) };
        let fd = |v: f64, se: f64| DerivativeEstimate { value: v, std_error: se, method: DerivativeMethod::Fd };
        let (k, l, h, n, seed) = (num(0)?, num(2)?, num(7)?, int(8)?, int(9)?);
        if tables.last().is_none_or(|t| t.k != k) {
            tables.push(DerivativeTable { k, alpha, n_samples: n, seed, h, l_grid: vec![], values: vec![] });
        }
        let t = tables.last_mut().expect("pushed");
        if t.alpha != alpha || t.h != h || t.n_samples != n || t.seed != seed {
            return Err(Error::Parse { line, msg: "rows of one k disagree on alpha, h, n_samples or seed".into() });
        }
        if t.l_grid.last().is_some_and(|&prev| l <= prev) {
            return Err(Error::Parse { line, msg: "l must ascend within a table".into() });
        }
        t.l_grid.push(l);
        t.values.push((fd(num(3)?, num(4)?), fd(num(5)?, num(6)?)));
    }
    Ok(tables)
}

impl InvariantReport {
    /// One row per table, sorted by `k`.
    pub fn from_tables(tables: &[DerivativeTable]) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::invalid("no derivative tables"));
        }
        let mut rows: Vec<ReportRow> = tables.iter().map(DerivativeTable::report_row).collect();
        rows.sort_by(|a, b| a.k.total_cmp(&b.k));
        if rows.windows(2).any(|w| w[0].k == w[1].k) {
            return Err(Error::invalid("duplicate k among derivative tables"));
        }
        Ok(InvariantReport { rows })
    }
}

/// Derivative tables and report rows for each `k` in `k_list`.
pub fn ratio_tables(k_list: &[f64], cfg: &ElasticityConfig) -> Result<Vec<DerivativeTable>> {
    if k_list.is_empty() {
        return Err(Error::invalid("k_list is empty"));
    }
    if k_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("k_list must be strictly ascending"));
    }
    if k_list[0] < 10.0 {
        return Err(Error::invalid("ratio report needs every k >= 10"));
    }
    k_list.iter().map(|&k| DerivativeTable::compute(&cfg.with_k(k)?)).collect()
}

pub fn ratio_report(k_list: &[f64], cfg: &ElasticityConfig) -> Result<InvariantReport> {
    InvariantReport::from_tables(&ratio_tables(k_list, cfg)?)
}

/// Finite-tree version of the sweep: three synthetic component trees over
/// the same `M` leaves, alignment data distributed as the second and
/// perturbation data as the third, mixed with sizes `(k/3, k/3, k/3, 1, l)`.
/// Rates are exact sums over leaves; standard errors treat the `M` leaf
/// terms as iid.
pub fn empirical_sweep(m: usize, cfg: &ElasticityConfig) -> Result<SweepResult> {
    if m < 100 {
        return Err(Error::invalid("empirical sweep needs M >= 100"));
    }
    cfg.validate()?;
    let start = Instant::now();
    let trees: Vec<PrunedTree> = (0..3)
        .map(|i| synth_tree(m, &cfg.law, &mut rng::substream(cfg.seed, tag::SYNTH_TREE, i)))
        .collect::<Result<_>>()?;
    let (d1, d2, d3) = (&trees[0], &trees[1], &trees[2]);
    let data_p = mix_weighted(&[(d1, 1.0), (d2, 1.0), (d3, 1.0)])?;
    let k3 = cfg.k / 3.0;
    let rows = cfg
        .l_grid
        .par_iter()
        .map(|&l| {
            let model = mix_weighted(&[(d1, k3), (d2, k3), (d3, k3), (d2, 1.0), (d3, l)])?;
            let (gp, sp) = rate_with_se(&data_p, &model)?;
            let (ga, sa) = rate_with_se(d2, &model)?;
            Ok(SweepRow { l, gamma_p: gp, gamma_p_se: sp, gamma_a: ga, gamma_a_se: sa })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        k: cfg.k,
        alpha: cfg.law.alpha(),
        n_samples: m as u64,
        seed: cfg.seed,
        rows,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn rate_with_se(data: &PrunedTree, model: &PrunedTree) -> Result<(f64, f64)> {
    let rate = normalized_rate(data, model)?;
    let terms = normalized_rate_terms(data, model)?;
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((rate, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(law: MassLaw, k: f64, n: u64) -> ElasticityConfig {
        ElasticityConfig::new(k, vec![0.0, 0.01, 0.02], law, n, 7, 0.005).unwrap()
    }

    #[test]
    fn config_validation() {
        let law = MassLaw::pareto(3.0).unwrap();
        assert!(ElasticityConfig::new(1.0, vec![0.0], law, 10, 0, 0.1).is_err());
        assert!(ElasticityConfig::new(10.0, vec![-0.1], law, 10, 0, 0.1).is_err());
        assert!(ElasticityConfig::new(10.0, vec![0.0, 0.01], law, 10, 0, 0.02).is_err());
        assert!(ElasticityConfig::new(10.0, vec![0.02, 0.01], law, 10, 0, 0.001).is_err());
        assert!(ElasticityConfig::new(10.0, vec![0.0], MassLaw::pareto(2.0).unwrap(), 10, 0, 0.1).is_err());
        assert!(ElasticityConfig::new(10.0, vec![0.0, 0.01], law, 10, 0, 0.01).is_ok());
    }

    #[test]
    fn degenerate_law_gives_exact_zeros() {
        for est in [Estimator::Plain, Estimator::Symmetrized] {
            let c = cfg(MassLaw::Degenerate, 100.0, 1000).with_estimator(est);
            let s = sweep(&c).unwrap();
            assert!(s.rows.iter().all(|r| r.gamma_p == 0.0 && r.gamma_a == 0.0));
            for (p, a) in derivatives(&c, &[0.0, 0.01]).unwrap() {
                assert_eq!((p.value, a.value, p.std_error), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn fd_of_linear_function() {
        let d = derivative_fd_fn(|l| 2.0 * l, 0.5, 0.25).unwrap();
        assert_eq!(d.value, 2.0);
        assert_eq!(d.std_error, 0.0);
        assert!(derivative_fd_fn(|l| l, 0.0, 0.0).is_err());
    }

    #[test]
    fn estimators_agree_in_expectation() {
        let law = MassLaw::pareto(3.0).unwrap();
        let plain = gamma_component_mc(&cfg(law, 20.0, 400_000).with_estimator(Estimator::Plain), Component::Alignment, 0.01).unwrap();
        let sym = gamma_component_mc(&cfg(law, 20.0, 400_000), Component::Alignment, 0.01).unwrap();
        let se = (plain.se.powi(2) + sym.se.powi(2)).sqrt();
        assert!((plain.mean - sym.mean).abs() < 4.0 * se, "{plain:?} vs {sym:?}");
    }

    #[test]
    fn fd_matches_difference_of_sweep_values() {
        let law = MassLaw::pareto(3.0).unwrap();
        let c = cfg(law, 30.0, 50_000);
        let d = derivative_fd(&c, Component::Alignment, 0.01).unwrap();
        let lo = sweep(&ElasticityConfig { l_grid: vec![0.005, 0.015], ..c.clone() }).unwrap();
        let direct = (lo.rows[1].gamma_a - lo.rows[0].gamma_a) / 0.01;
        assert!((d.value - direct).abs() < 1e-9 * direct.abs().max(1e-12), "{} vs {direct}", d.value);
    }

    #[test]
    fn degenerate_closed_forms() {
        for k in [10.0, 100.0, 1000.0] {
            let s1 = ds_limit(k, &MassLaw::Degenerate, 10, 0, Limit::S1).unwrap();
            let s2 = ds_limit(k, &MassLaw::Degenerate, 10, 0, Limit::S2).unwrap();
            let want1 = -1.0 / (k * k * (k + 1.0));
            let want2 = 1.0 / (k * (k + 1.0));
            assert!((s1.value - want1).abs() <= 1e-9 * want1.abs());
            assert!((s2.value - want2).abs() <= 1e-9 * want2.abs());
        }
        let q = leading_order_oracle(&MassLaw::Degenerate, 10).unwrap();
        assert_eq!(q.mean, 1.0 / 3.0);
    }

    #[test]
    fn trapezoid_and_slope() {
        assert_eq!(trapezoid(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]), 2.0);
        let xs = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 / (x * x)).collect();
        assert!((loglog_slope(&xs, &ys) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_report_is_inconclusive() {
        let c = cfg(MassLaw::Degenerate, 10.0, 100);
        let rep = ratio_report(&[10.0, 100.0], &c).unwrap();
        assert!(rep.rows.iter().all(|r| r.verdict == Verdict::Inconclusive));
    }

    #[test]
    fn uniform_components_give_zero_rates() {
        let c = cfg(MassLaw::Degenerate, 50.0, 10);
        let s = empirical_sweep(128, &c).unwrap();
        for r in &s.rows {
            assert!(r.gamma_p.abs() < 1e-12 && r.gamma_a.abs() < 1e-12, "{r:?}");
        }
    }
}
