//! CART regression tree with squared-error splits.
//!
//! For 0/1 targets the squared-error decrease is half the Gini decrease, so
//! the same builder grows classification trees for the forest (leaf value =
//! malware fraction) and residual trees for boosting.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    /// Non-constant features to examine per node; `None` means all.
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

/// Features with at most this many distinct values are histogrammed.
const MAX_BINS: usize = 1024;

/// Design matrix recoded as per-feature ranks of distinct values, so node
/// statistics come from one pass over the members instead of a sort per
/// feature. Splits are identical to the sorting path: candidate thresholds
/// are still midpoints between adjacent distinct values.
pub struct BinnedDesign {
    d: usize,
    /// Row-major codes for every row of `x`.
    codes: Vec<u16>,
    /// Sorted distinct values per feature; `None` when there are too many.
    edges: Vec<Option<Vec<f64>>>,
    offset: Vec<usize>,
    total_bins: usize,
}

impl BinnedDesign {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let mut edges = Vec::with_capacity(d);
        let mut offset = Vec::with_capacity(d);
        let mut total_bins = 0;
        let mut codes = vec![0u16; x.len() * d];
        for f in 0..d {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            offset.push(total_bins);
            if vals.len() <= MAX_BINS {
                for (r, row) in x.iter().enumerate() {
                    let c = vals
                        .binary_search_by(|v| v.total_cmp(&row[f]))
                        .expect("value present");
                    codes[r * d + f] = c as u16;
                }
                total_bins += vals.len();
                edges.push(Some(vals));
            } else {
                edges.push(None);
            }
        }
        Self {
            d,
            codes,
            edges,
            offset,
            total_bins,
        }
    }
}

/// A run of equal feature values inside a node: (value, target sum, count).
type Run = (f64, f64, usize);

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl RegressionTree {
    /// Grow a tree on the rows listed in `rows` (repeats allowed, as in a
    /// bootstrap draw). Returns the tree and, for each entry of `rows`, the
    /// index of the leaf it landed in.
    pub fn fit<R: Rng>(
        x: &[Vec<f64>],
        y: &[f64],
        rows: &[usize],
        params: TreeParams,
        rng: &mut R,
    ) -> (Self, Vec<usize>) {
        Self::grow(x, y, rows, params, rng, None)
    }

    /// As [`RegressionTree::fit`], reading node statistics from a binned
    /// copy of `x` instead of sorting per node. Grows the same tree.
    pub fn fit_binned<R: Rng>(
        x: &[Vec<f64>],
        y: &[f64],
        rows: &[usize],
        params: TreeParams,
        rng: &mut R,
        binned: &BinnedDesign,
    ) -> (Self, Vec<usize>) {
        Self::grow(x, y, rows, params, rng, Some(binned))
    }

    fn grow<R: Rng>(
        x: &[Vec<f64>],
        y: &[f64],
        rows: &[usize],
        params: TreeParams,
        rng: &mut R,
        binned: Option<&BinnedDesign>,
    ) -> (Self, Vec<usize>) {
        let d = x.first().map_or(0, Vec::len);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut leaf_of = vec![0; rows.len()];
        let mut stack = vec![Pending {
            node: 0,
            start: 0,
            end: rows.len(),
            depth: 0,
        }];
        let mut features: Vec<usize> = (0..d).collect();
        let mut buf: Vec<Run> = Vec::new();
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        let bins = binned.map_or(0, |bd| bd.total_bins);
        let mut hist_sum = vec![0.0; bins];
        let mut hist_cnt = vec![0usize; bins];

        while let Some(p) = stack.pop() {
            let members = &order[p.start..p.end];
            let n = members.len();
            let sum: f64 = members.iter().map(|&k| y[rows[k]]).sum();
            let mean = if n > 0 { sum / n as f64 } else { 0.0 };
            let first = members.first().map(|&k| y[rows[k]]);
            let pure = members.iter().all(|&k| Some(y[rows[k]]) == first);
            let depth_ok = params.max_depth.is_none_or(|m| p.depth < m);

            let split = if !pure && depth_ok && n >= params.min_samples_split.max(2) {
                features.shuffle(rng);
                // All-feature searches histogram every feature in one pass over
                // the members; subsampled searches histogram lazily per feature.
                let eager = params.max_features.is_none();
                if let Some(bd) = binned {
                    hist_sum.iter_mut().for_each(|v| *v = 0.0);
                    hist_cnt.iter_mut().for_each(|v| *v = 0);
                    if eager {
                        for &k in members {
                            let r = rows[k];
                            let codes = &bd.codes[r * bd.d..(r + 1) * bd.d];
                            for (f, &c) in codes.iter().enumerate() {
                                if bd.edges[f].is_some() {
                                    let b = bd.offset[f] + c as usize;
                                    hist_sum[b] += y[r];
                                    hist_cnt[b] += 1;
                                }
                            }
                        }
                    }
                }
                let fill = |f: usize, runs: &mut Vec<Run>| {
                    runs.clear();
                    if let Some((bd, edges)) =
                        binned.and_then(|bd| bd.edges[f].as_ref().map(|e| (bd, e)))
                    {
                        let o = bd.offset[f];
                        if !eager {
                            for &k in members {
                                let r = rows[k];
                                let b = o + bd.codes[r * bd.d + f] as usize;
                                hist_sum[b] += y[r];
                                hist_cnt[b] += 1;
                            }
                        }
                        for (b, &v) in edges.iter().enumerate() {
                            if hist_cnt[o + b] > 0 {
                                runs.push((v, hist_sum[o + b], hist_cnt[o + b]));
                                if !eager {
                                    hist_sum[o + b] = 0.0;
                                    hist_cnt[o + b] = 0;
                                }
                            }
                        }
                        return;
                    }
                    pairs.clear();
                    pairs.extend(members.iter().map(|&k| (x[rows[k]][f], y[rows[k]])));
                    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
                    for &(v, t) in pairs.iter() {
                        match runs.last_mut() {
                            Some(last) if last.0 == v => {
                                last.1 += t;
                                last.2 += 1;
                            }
                            _ => runs.push((v, t, 1)),
                        }
                    }
                };
                best_split(n, &features, params.max_features, sum, &mut buf, fill)
            } else {
                None
            };

            match split {
                None => {
                    nodes[p.node] = Node::Leaf { value: mean };
                    for &k in members {
                        leaf_of[k] = p.node;
                    }
                }
                Some(s) => {
                    let slice = &mut order[p.start..p.end];
                    let mut mid = 0;
                    for i in 0..slice.len() {
                        if x[rows[slice[i]]][s.feature] <= s.threshold {
                            slice.swap(i, mid);
                            mid += 1;
                        }
                    }
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[p.node] = Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left,
                        right,
                    };
                    stack.push(Pending {
                        node: right,
                        start: p.start + mid,
                        end: p.end,
                        depth: p.depth + 1,
                    });
                    stack.push(Pending {
                        node: left,
                        start: p.start,
                        end: p.start + mid,
                        depth: p.depth + 1,
                    });
                }
            }
        }
        (Self { nodes }, leaf_of)
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => *value,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    /// Overwrite the value stored at leaf `i`.
    pub fn set_leaf_value(&mut self, i: usize, v: f64) {
        if let Node::Leaf { value } = &mut self.nodes[i] {
            *value = v;
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// `fill(f, runs)` writes the node's runs of feature `f` in ascending value.
fn best_split(
    n: usize,
    features: &[usize],
    max_features: Option<usize>,
    total: f64,
    runs: &mut Vec<Run>,
    mut fill: impl FnMut(usize, &mut Vec<Run>),
) -> Option<BestSplit> {
    let budget = max_features.unwrap_or(features.len());
    let mut visited = 0;
    let mut best: Option<BestSplit> = None;
    for &f in features {
        if visited >= budget {
            break;
        }
        fill(f, runs);
        if runs.len() < 2 {
            // Constant in this node; does not count against the budget.
            continue;
        }
        visited += 1;
        let mut left_sum = 0.0;
        let mut left_n = 0;
        for i in 0..runs.len() - 1 {
            left_sum += runs[i].1;
            left_n += runs[i].2;
            let nl = left_n as f64;
            let nr = (n - left_n) as f64;
            let right_sum = total - left_sum;
            // Maximizing this is equivalent to minimizing the children's SSE.
            let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
            if best.as_ref().is_none_or(|b| score > b.score) {
                let (lo, hi) = (runs[i].0, runs[i + 1].0);
                let mut threshold = 0.5 * (lo + hi);
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}
