//! All-pairs cosine similarity over gene aggregates without materializing the
//! matrix.
//!
//! Pairs are produced tile by tile (`tile × tile` blocks of the upper
//! triangle, one dgemm per block). Quantiles are found by repeated scans: a
//! histogram over `[-1, 1]` locates the bin holding each target order
//! statistic, and a second scan collects that bin's values for an exact
//! selection. A bin too large to collect is re-histogrammed over its own
//! value range.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GeneAggregateSet;
use crate::error::{Error, Result};
use crate::linalg::matmul_abt;
use crate::stats::unit;

pub const DEFAULT_TILE: usize = 256;
pub const HISTOGRAM_BINS: usize = 4096;
/// Largest bin whose values are collected for exact selection.
const COLLECT_LIMIT: u64 = 1 << 23;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low_pct: f64,
    pub high_pct: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub n_pairs: u64,
}

/// One block of the similarity matrix.
pub struct SimilarityTile<'a> {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    values: &'a [f64],
    diagonal: bool,
}

impl SimilarityTile<'_> {
    /// Similarity of genes `row0 + r` and `col0 + c`.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// The tile's unordered pairs `(i, j, s)` with global indices and `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let start = if self.diagonal { r + 1 } else { 0 };
            (start..self.cols).map(move |c| (self.row0 + r, self.col0 + c, self.get(r, c)))
        })
    }

    fn for_each_value(&self, mut f: impl FnMut(f64)) {
        for r in 0..self.rows {
            let start = if self.diagonal { r + 1 } else { 0 };
            for &v in &self.values[r * self.cols + start..(r + 1) * self.cols] {
                f(v);
            }
        }
    }
}

/// Lazily evaluated upper triangle of the cosine-similarity matrix.
pub struct PairwiseSimilarities {
    n: usize,
    dim: usize,
    units: Vec<f64>,
    tile: usize,
}

pub fn pairwise_similarity_matrix(aggregates: &GeneAggregateSet) -> Result<PairwiseSimilarities> {
    PairwiseSimilarities::new(aggregates)
}

impl PairwiseSimilarities {
    pub fn new(aggregates: &GeneAggregateSet) -> Result<Self> {
        let n = aggregates.len();
        if n < 2 {
            return Err(Error::invalid(format!("pairwise similarity needs at least 2 genes, got {n}")));
        }
        let dim = aggregates.dim();
        let mut units = Vec::with_capacity(n * dim);
        for i in 0..n {
            units.extend(unit(aggregates.vector(i))?);
        }
        Ok(Self {
            n,
            dim,
            units,
            tile: DEFAULT_TILE,
        })
    }

    pub fn with_tile(mut self, tile: usize) -> Self {
        self.tile = tile.max(1);
        self
    }

    pub fn n_genes(&self) -> usize {
        self.n
    }

    pub fn n_pairs(&self) -> u64 {
        let n = self.n as u64;
        n * (n - 1) / 2
    }

    fn blocks(&self) -> Vec<(usize, usize)> {
        let nb = self.n.div_ceil(self.tile);
        (0..nb).flat_map(|bi| (bi..nb).map(move |bj| (bi, bj))).collect()
    }

    fn compute<'a>(&self, (bi, bj): (usize, usize), buf: &'a mut Vec<f64>) -> SimilarityTile<'a> {
        let (row0, col0) = (bi * self.tile, bj * self.tile);
        let rows = self.tile.min(self.n - row0);
        let cols = self.tile.min(self.n - col0);
        let a = &self.units[row0 * self.dim..(row0 + rows) * self.dim];
        let b = &self.units[col0 * self.dim..(col0 + cols) * self.dim];
        *buf = matmul_abt(a, rows, self.dim, b, cols);
        for v in buf.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
        SimilarityTile {
            row0,
            col0,
            rows,
            cols,
            values: buf,
            diagonal: bi == bj,
        }
    }

    /// Visits every unordered pair once, tile by tile, on the calling thread.
    pub fn for_each_pair(&self, mut f: impl FnMut(usize, usize, f64)) {
        let mut buf = Vec::new();
        for block in self.blocks() {
            let tile = self.compute(block, &mut buf);
            for (i, j, s) in tile.pairs() {
                f(i, j, s);
            }
        }
    }

    /// Parallel fold over tiles. `merge` must be order-insensitive for the
    /// result to be independent of scheduling.
    pub fn fold_tiles<S, I, F, M>(&self, init: I, visit: F, merge: M) -> S
    where
        S: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, &SimilarityTile<'_>) + Sync + Send,
        M: Fn(S, S) -> S + Sync + Send,
    {
        self.blocks()
            .into_par_iter()
            .fold(
                || (init(), Vec::new()),
                |(mut s, mut buf), block| {
                    let tile = self.compute(block, &mut buf);
                    visit(&mut s, &tile);
                    (s, buf)
                },
            )
            .map(|(s, _)| s)
            .reduce(&init, &merge)
    }

    /// Quantile thresholds of all pair similarities plus the kernel's values
    /// for the requested `probes` (pairs of gene indices, any order).
    pub fn scan(&self, low_pct: f64, high_pct: f64, probes: &[(usize, usize)]) -> Result<(Thresholds, Vec<f64>)> {
        if !(0.0..=1.0).contains(&low_pct) || !(0.0..=1.0).contains(&high_pct) || low_pct > high_pct {
            return Err(Error::invalid(format!(
                "percentiles must satisfy 0 <= low ({low_pct}) <= high ({high_pct}) <= 1"
            )));
        }
        let n_pairs = self.n_pairs();
        let positions = [low_pct, high_pct].map(|p| (n_pairs - 1) as f64 * p);
        let mut ranks: Vec<u64> = positions
            .iter()
            .flat_map(|&h| [h.floor() as u64, (h.floor() as u64 + 1).min(n_pairs - 1)])
            .collect();
        ranks.sort_unstable();
        ranks.dedup();

        let mut probe_index: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.n];
        for (k, &(a, b)) in probes.iter().enumerate() {
            if a >= self.n || b >= self.n || a == b {
                return Err(Error::invalid(format!("bad probe pair ({a}, {b})")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            probe_index[i].push((j, k));
        }
        for v in probe_index.iter_mut() {
            v.sort_unstable();
        }

        let mut searches: Vec<RankSearch> = ranks.iter().map(|&r| RankSearch::new(r)).collect();
        let mut probe_values = vec![f64::NAN; probes.len()];
        let mut first = true;
        while searches.iter().any(|s| s.value.is_none()) {
            let windows = Windows::from_searches(&searches);
            let want_probes = first && !probes.is_empty();
            let (acc, found) = self.fold_tiles(
                || (windows.empty_acc(), Vec::new()),
                |(acc, found), tile| {
                    tile.for_each_value(|v| windows.add(acc, v));
                    if want_probes {
                        for r in 0..tile.rows {
                            let i = tile.row0 + r;
                            let lo = tile.col0.max(i + 1);
                            let hi = tile.col0 + tile.cols;
                            let list = &probe_index[i];
                            let start = list.partition_point(|&(j, _)| j < lo);
                            for &(j, k) in list[start..].iter().take_while(|&&(j, _)| j < hi) {
                                found.push((k, tile.get(r, j - tile.col0)));
                            }
                        }
                    }
                },
                |(a, mut fa), (b, fb)| {
                    fa.extend(fb);
                    (windows.merge(a, b), fa)
                },
            );
            for (k, v) in found {
                probe_values[k] = v;
            }
            windows.resolve(acc, &mut searches, COLLECT_LIMIT);
            first = false;
        }

        let value_at = |rank: u64| searches.iter().find(|s| s.rank == rank).and_then(|s| s.value).unwrap();
        let interp = |h: f64| {
            let lo = h.floor() as u64;
            let hi = (lo + 1).min(n_pairs - 1);
            let (a, b) = (value_at(lo), value_at(hi));
            a + (h - lo as f64) * (b - a)
        };
        Ok((
            Thresholds {
                low_pct,
                high_pct,
                t_low: interp(positions[0]),
                t_high: interp(positions[1]),
                n_pairs,
            },
            probe_values,
        ))
    }

    pub fn thresholds(&self, low_pct: f64, high_pct: f64) -> Result<Thresholds> {
        self.scan(low_pct, high_pct, &[]).map(|(t, _)| t)
    }
}

/// Search state for one order statistic (0-based `rank`).
#[derive(Debug, Clone)]
struct RankSearch {
    rank: u64,
    lo: f64,
    hi: f64,
    /// Number of values strictly below `lo`.
    below: u64,
    collect: bool,
    value: Option<f64>,
}

impl RankSearch {
    fn new(rank: u64) -> Self {
        Self {
            rank,
            lo: -1.0,
            hi: 1.0,
            below: 0,
            collect: false,
            value: None,
        }
    }
}

/// Distinct value windows scanned in one pass.
struct Windows {
    spans: Vec<(f64, f64, bool)>,
    /// Per unresolved search, its window.
    owner: Vec<(usize, usize)>,
}

#[derive(Clone)]
enum WindowAcc {
    Hist {
        counts: Vec<u64>,
        mins: Vec<f64>,
        maxs: Vec<f64>,
    },
    Values(Vec<f64>),
}

impl Windows {
    fn from_searches(searches: &[RankSearch]) -> Self {
        let mut spans: Vec<(f64, f64, bool)> = Vec::new();
        let mut owner = Vec::new();
        for (s_idx, s) in searches.iter().enumerate() {
            if s.value.is_some() {
                continue;
            }
            let key = (s.lo, s.hi, s.collect);
            let w = match spans.iter().position(|&k| k == key) {
                Some(w) => w,
                None => {
                    spans.push(key);
                    spans.len() - 1
                }
            };
            owner.push((s_idx, w));
        }
        Self { spans, owner }
    }

    fn empty_acc(&self) -> Vec<WindowAcc> {
        self.spans
            .iter()
            .map(|&(_, _, collect)| {
                if collect {
                    WindowAcc::Values(Vec::new())
                } else {
                    WindowAcc::Hist {
                        counts: vec![0; HISTOGRAM_BINS],
                        mins: vec![f64::INFINITY; HISTOGRAM_BINS],
                        maxs: vec![f64::NEG_INFINITY; HISTOGRAM_BINS],
                    }
                }
            })
            .collect()
    }

    #[inline]
    fn add(&self, acc: &mut [WindowAcc], v: f64) {
        for (&(lo, hi, _), a) in self.spans.iter().zip(acc.iter_mut()) {
            if v < lo || v > hi {
                continue;
            }
            match a {
                WindowAcc::Values(vals) => vals.push(v),
                WindowAcc::Hist { counts, mins, maxs } => {
                    let b = (((v - lo) / (hi - lo)) * HISTOGRAM_BINS as f64) as usize;
                    let b = b.min(HISTOGRAM_BINS - 1);
                    counts[b] += 1;
                    if v < mins[b] {
                        mins[b] = v;
                    }
                    if v > maxs[b] {
                        maxs[b] = v;
                    }
                }
            }
        }
    }

    fn merge(&self, mut a: Vec<WindowAcc>, b: Vec<WindowAcc>) -> Vec<WindowAcc> {
        for (x, y) in a.iter_mut().zip(b) {
            match (x, y) {
                (WindowAcc::Values(xv), WindowAcc::Values(yv)) => xv.extend(yv),
                (
                    WindowAcc::Hist { counts, mins, maxs },
                    WindowAcc::Hist {
                        counts: c2,
                        mins: m2,
                        maxs: x2,
                    },
                ) => {
                    for b in 0..HISTOGRAM_BINS {
                        counts[b] += c2[b];
                        mins[b] = mins[b].min(m2[b]);
                        maxs[b] = maxs[b].max(x2[b]);
                    }
                }
                _ => unreachable!("window kinds are fixed per pass"),
            }
        }
        a
    }

    fn resolve(&self, mut acc: Vec<WindowAcc>, searches: &mut [RankSearch], collect_limit: u64) {
        for a in acc.iter_mut() {
            if let WindowAcc::Values(v) = a {
                v.sort_unstable_by(f64::total_cmp);
            }
        }
        for &(s_idx, w) in &self.owner {
            let s = &mut searches[s_idx];
            let target = s.rank - s.below;
            match &acc[w] {
                WindowAcc::Values(v) => s.value = Some(v[target as usize]),
                WindowAcc::Hist { counts, mins, maxs } => {
                    let mut cum = 0u64;
                    let b = (0..HISTOGRAM_BINS)
                        .find(|&b| {
                            cum += counts[b];
                            cum > target
                        })
                        .expect("rank within window");
                    let count = counts[b];
                    s.below += cum - count;
                    if mins[b] == maxs[b] {
                        s.value = Some(mins[b]);
                    } else {
                        s.lo = mins[b];
                        s.hi = maxs[b];
                        s.collect = count <= collect_limit || !(HISTOGRAM_BINS as f64 / (s.hi - s.lo)).is_finite();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};
    use std::collections::BTreeMap;

    pub(crate) fn random_set(n: usize, d: usize, seed: u64) -> GeneAggregateSet {
        let mut rng = crate::rng::substream(seed, &["sim-test"]);
        let m: BTreeMap<String, Vec<f64>> = (0..n)
            .map(|i| {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                (format!("g{i:04}"), unit(&v).unwrap())
            })
            .collect();
        GeneAggregateSet::new(d, m).unwrap()
    }
}
