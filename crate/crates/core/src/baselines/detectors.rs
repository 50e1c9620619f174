//! Classical anomaly detectors: local outlier factor and isolation forest.

use rand::seq::index::sample;
use rand::Rng;

use crate::embedding::{EmbeddingMatrix, SeededRng};
use crate::error::{ForteError, Result};
use crate::neighborhood::euclidean;
use crate::par;

/// LOF values above this count as flagged outliers.
pub const LOF_FLAG_THRESHOLD: f64 = 1.5;
/// Isolation-forest scores above this count as flagged outliers.
pub const IF_FLAG_THRESHOLD: f64 = 0.6;

/// Floor on the mean reachability distance, so points with `k` exact
/// duplicates keep a finite local reachability density.
const REACH_FLOOR: f64 = 1e-10;

/// The `k` nearest rows of `refs` to `q` as (distance, index), ties broken
/// by index. `skip` excludes one row (the query itself when it is a ref).
fn nearest(q: &[f32], refs: &EmbeddingMatrix, k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = refs
        .iter_rows()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, r)| (euclidean(q, r), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    d.select_nth_unstable_by(k - 1, cmp);
    d.truncate(k);
    d.sort_by(cmp);
    d
}

fn lrd(neigh: &[(f64, usize)], k_dist: &[f64]) -> f64 {
    let reach: f64 = neigh.iter().map(|&(d, o)| d.max(k_dist[o])).sum();
    1.0 / (reach / neigh.len() as f64).max(REACH_FLOOR)
}

/// Local outlier factor of each query row relative to `refs`, using exactly
/// `k` neighbors per point.
pub fn lof_scores(refs: &EmbeddingMatrix, query: &EmbeddingMatrix, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k >= refs.n() {
        return Err(ForteError::InvalidK {
            k,
            reason: format!("LOF needs 1 <= k < {} reference rows", refs.n()),
        });
    }
    if refs.d() != query.d() {
        return Err(ForteError::DimensionMismatch {
            expected: refs.d(),
            found: query.d(),
        });
    }
    let ref_neigh = par::map_range(refs.n(), |i| nearest(refs.row(i), refs, k, Some(i)));
    let k_dist: Vec<f64> = ref_neigh.iter().map(|nb| nb[k - 1].0).collect();
    let ref_lrd: Vec<f64> = ref_neigh.iter().map(|nb| lrd(nb, &k_dist)).collect();
    Ok(par::map_range(query.n(), |i| {
        let nb = nearest(query.row(i), refs, k, None);
        let own = lrd(&nb, &k_dist);
        nb.iter().map(|&(_, o)| ref_lrd[o]).sum::<f64>() / (k as f64 * own)
    }))
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + 0.577_215_664_901_532_9) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { size: usize },
    Split { feature: usize, value: f32, left: Box<Node>, right: Box<Node> },
}

fn build(x: &EmbeddingMatrix, rows: &mut [usize], depth: usize, limit: usize, rng: &mut SeededRng) -> Node {
    if depth >= limit || rows.len() <= 1 {
        return Node::Leaf { size: rows.len() };
    }
    let ranges: Vec<(usize, f32, f32)> = (0..x.d())
        .filter_map(|j| {
            let (lo, hi) = rows.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &r| {
                let v = x.row(r)[j];
                (lo.min(v), hi.max(v))
            });
            (hi > lo).then_some((j, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return Node::Leaf { size: rows.len() };
    }
    let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let value = {
        let v = lo + rng.random::<f32>() * (hi - lo);
        // guard against rounding onto the upper end, which would leave one side empty
        if v >= hi { lo } else { v }
    };
    let mut split = 0;
    for i in 0..rows.len() {
        if x.row(rows[i])[feature] <= value {
            rows.swap(i, split);
            split += 1;
        }
    }
    let (l, r) = rows.split_at_mut(split);
    Node::Split {
        feature,
        value,
        left: Box::new(build(x, l, depth + 1, limit, rng)),
        right: Box::new(build(x, r, depth + 1, limit, rng)),
    }
}

fn path_length(node: &Node, q: &[f32]) -> f64 {
    let mut node = node;
    let mut depth = 0.0;
    loop {
        match node {
            Node::Leaf { size } => return depth + average_path_length(*size),
            Node::Split { feature, value, left, right } => {
                node = if q[*feature] <= *value { left } else { right };
                depth += 1.0;
            }
        }
    }
}

/// Isolation-forest anomaly scores `2^(−E[h(x)] / c(ψ))`, in (0, 1). Tree
/// `t` draws from RNG substream `t` of `seed`, so results do not depend on
/// the order in which trees are built.
pub fn isolation_forest_scores(
    refs: &EmbeddingMatrix,
    query: &EmbeddingMatrix,
    n_trees: usize,
    subsample: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if refs.n() < 2 {
        return Err(ForteError::param("isolation forest needs at least 2 reference rows"));
    }
    if n_trees == 0 || subsample < 2 {
        return Err(ForteError::param("isolation forest needs n_trees >= 1 and subsample >= 2"));
    }
    if refs.d() != query.d() {
        return Err(ForteError::DimensionMismatch {
            expected: refs.d(),
            found: query.d(),
        });
    }
    let psi = subsample.min(refs.n());
    let limit = (psi as f64).log2().ceil() as usize;
    let trees = par::map_range(n_trees, |t| {
        let mut rng = SeededRng::substream(seed, t as u64);
        let mut rows = sample(&mut rng, refs.n(), psi).into_vec();
        build(refs, &mut rows, 0, limit, &mut rng)
    });
    let c = average_path_length(psi);
    Ok(par::map_range(query.n(), |i| {
        let q = query.row(i);
        let mean_h = trees.iter().map(|t| path_length(t, q)).sum::<f64>() / n_trees as f64;
        2f64.powf(-mean_h / c)
    }))
}
