//! Chunked Monte-Carlo over iid mass triples.
//!
//! The sample index space is cut into fixed chunks. Chunk `i` draws from its
//! own substream and keeps its own running moments; chunks are merged in
//! index order. The result depends only on `(seed, n)`, never on how many
//! threads ran the chunks.

use rayon::prelude::*;
use serde::Serialize;

use crate::mass::MassLaw;
use crate::rng::{self, tag};

pub const CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

impl Estimate {
    /// Half-width `z·se` interval excludes zero.
    pub fn excludes_zero(&self, z: f64) -> bool {
        self.mean.abs() > z * self.se
    }
}

/// Running mean and centred second moment (Welford), mergeable with Chan's
/// pairwise update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64 / n as f64);
        self.n = n;
    }

    pub fn estimate(&self) -> Estimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        Estimate { mean: self.mean, se: (var / self.n as f64).sqrt(), n: self.n }
    }
}

/// Estimates `n_out` expectations at once. `f` maps a triple to the
/// per-sample values of every output; all outputs share the same triples.
pub fn triples<F>(law: &MassLaw, seed: u64, n: u64, n_out: usize, f: F) -> Vec<Estimate>
where
    F: Fn(&[f64; 3], &mut [f64]) + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<Moments>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::substream(seed, tag::MC_TRIPLES, c);
            let len = CHUNK.min(n - c * CHUNK);
            let mut acc = vec![Moments::default(); n_out];
            let mut buf = vec![0.0; n_out];
            for _ in 0..len {
                let x = [law.sample(&mut r), law.sample(&mut r), law.sample(&mut r)];
                f(&x, &mut buf);
                for (a, &v) in acc.iter_mut().zip(&buf) {
                    a.push(v);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::default(); n_out];
    for chunk in &per_chunk {
        for (t, m) in total.iter_mut().zip(chunk) {
            t.merge(m);
        }
    }
    total.iter().map(Moments::estimate).collect()
}
