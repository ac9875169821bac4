//! Bagged regression trees on histogram-binned features.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Rng};
use crate::{Error, Result};

const MAX_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means ⌈p/3⌉.
    pub max_features: Option<usize>,
    /// Fit each tree on a bootstrap resample of the rows.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 8,
            min_leaf: 5,
            max_features: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 || self.max_features == Some(0) {
            return Err(Error::invalid(
                "forest needs at least one tree, min_leaf >= 1 and max_features >= 1",
            ));
        }
        Ok(())
    }

    fn features_per_split(&self, p: usize) -> usize {
        self.max_features.unwrap_or(p.div_ceil(3)).clamp(1, p.max(1))
    }
}

/// Split nodes send `x[feature] <= threshold` to `left` and the rest to
/// `left + 1`. A leaf points at itself with an infinite threshold, so a
/// descent can run a fixed number of steps without checking for leaves.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    threshold: f64,
    feature: u32,
    left: u32,
}

impl Node {
    fn leaf(slot: usize) -> Self {
        Self {
            threshold: f64::INFINITY,
            feature: 0,
            left: slot as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
    // prediction for leaves, indexed like `nodes`
    values: Vec<f64>,
    depth: usize,
}

// rows descended together, to overlap their memory latency
const BLOCK: usize = 8;

impl Tree {
    fn is_leaf(&self, i: usize) -> bool {
        self.nodes[i].left as usize == i
    }

    fn leaf_of(&self, row: &[f64]) -> usize {
        let mut i = 0;
        while !self.is_leaf(i) {
            let n = self.nodes[i];
            i = n.left as usize + usize::from(row[n.feature as usize] > n.threshold);
        }
        i
    }

    fn predict(&self, row: &[f64]) -> f64 {
        self.values[self.leaf_of(row)]
    }

    /// Add this tree's predictions for rows `start..start + BLOCK` to `out`.
    #[inline]
    fn accumulate_block(&self, x: &[f64], p: usize, start: usize, out: &mut [f64]) {
        let mut idx = [0usize; BLOCK];
        for _ in 0..self.depth {
            for (k, i) in idx.iter_mut().enumerate() {
                let n = self.nodes[*i];
                let v = x[(start + k) * p + n.feature as usize];
                *i = n.left as usize + usize::from(v > n.threshold);
            }
        }
        for (o, &i) in out.iter_mut().zip(&idx) {
            *o += self.values[i];
        }
    }

    fn leaves(&self) -> usize {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.trees.iter().map(Tree::leaves).sum()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    /// Predictions for `n` rows of a row-major matrix with the training
    /// column count. Equal to `predict_row` on each row.
    pub fn predict(&self, x: &[f64], n: usize) -> Vec<f64> {
        let p = self.n_features;
        let mut out = vec![0.0; n];
        let full = n / BLOCK * BLOCK;
        for tree in &self.trees {
            for start in (0..full).step_by(BLOCK) {
                tree.accumulate_block(x, p, start, &mut out[start..start + BLOCK]);
            }
            for (i, o) in out.iter_mut().enumerate().skip(full) {
                *o += tree.predict(&x[i * p..(i + 1) * p]);
            }
        }
        let k = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }
}

/// Features quantized to at most 64 bins; bin `b` of feature `f` holds values
/// in `(cuts[f][b-1], cuts[f][b]]`.
struct Binned {
    n: usize,
    p: usize,
    cuts: Vec<Vec<f64>>,
    // column-major
    bins: Vec<u8>,
    // row-major copy for gathering several features per row
    rows: Vec<u8>,
}

impl Binned {
    fn new(x: &[f64], n: usize, p: usize) -> Self {
        let mut cuts = Vec::with_capacity(p);
        let mut bins = vec![0u8; n * p];
        for f in 0..p {
            let mut vals: Vec<f64> = (0..n).map(|i| x[i * p + f]).collect();
            vals.sort_by(f64::total_cmp);
            let mut uniq = vals.clone();
            uniq.dedup();
            let mut c: Vec<f64> = if uniq.len() <= MAX_BINS {
                uniq.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
            } else {
                (1..MAX_BINS)
                    .filter_map(|k| {
                        let idx = k * n / MAX_BINS;
                        let (a, b) = (vals[idx - 1], vals[idx]);
                        (a < b).then_some((a + b) / 2.0)
                    })
                    .collect()
            };
            c.dedup();
            for i in 0..n {
                let v = x[i * p + f];
                bins[f * n + i] = c.partition_point(|&cut| cut < v) as u8;
            }
            cuts.push(c);
        }
        let mut rows = vec![0u8; n * p];
        for f in 0..p {
            for i in 0..n {
                rows[i * p + f] = bins[f * n + i];
            }
        }
        Self {
            n,
            p,
            cuts,
            bins,
            rows,
        }
    }
}

struct Builder<'a> {
    data: &'a Binned,
    w: &'a [f64],
    // w * y per row
    wy: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
    features: Vec<usize>,
    nodes: Vec<Node>,
    values: Vec<f64>,
    depth: usize,
    // mtry histograms of (weight, weighted target) per bin
    hist: Vec<[f64; 2]>,
    rng: Rng,
}

/// Best split so far: (gain, feature, last bin of the left child).
type Best = Option<(f64, usize, usize)>;

struct NodeStats {
    wsum: f64,
    ysum: f64,
    base: f64,
    min_leaf: f64,
}

impl NodeStats {
    /// Consider splitting after a bin whose cumulative left totals are
    /// (`wl`, `sl`). Returns false once the right side is too small.
    #[inline]
    fn offer(&self, wl: f64, sl: f64, f: usize, b: usize, best: &mut Best) -> bool {
        let wr = self.wsum - wl;
        if wr < self.min_leaf {
            return false;
        }
        if wl >= self.min_leaf {
            let sr = self.ysum - sl;
            let gain = sl * sl / wl + sr * sr / wr - self.base;
            if best.is_none_or(|(g, _, _)| gain > g) {
                *best = Some((gain, f, b));
            }
        }
        true
    }
}

impl Builder<'_> {

    fn fill_histograms(&mut self, rows: &[u32]) {
        let k = self.mtry;
        self.hist.clear();
        self.hist.resize(k * MAX_BINS, [0.0; 2]);
        let chosen = &self.features[..k];
        let p = self.data.p;
        for &r in rows {
            let r = r as usize;
            let rb = &self.data.rows[r * p..(r + 1) * p];
            let (w, wy) = (self.w[r], self.wy[r]);
            for (j, &f) in chosen.iter().enumerate() {
                let h = &mut self.hist[j * MAX_BINS + rb[f] as usize];
                h[0] += w;
                h[1] += wy;
            }
        }
    }

    fn scan(&self, j: usize, st: &NodeStats, best: &mut Best) {
        let f = self.features[j];
        let nb = self.data.cuts[f].len() + 1;
        let hist = &self.hist[j * MAX_BINS..j * MAX_BINS + nb];
        let (mut wl, mut sl) = (0.0, 0.0);
        for (b, h) in hist[..nb - 1].iter().enumerate() {
            if h[0] == 0.0 {
                continue;
            }
            wl += h[0];
            sl += h[1];
            if !st.offer(wl, sl, f, b, best) {
                break;
            }
        }
    }

    /// Grow the subtree for `rows` into the already allocated `slot`.
    fn build(&mut self, rows: &mut [u32], depth: usize, slot: usize) {
        let (mut wsum, mut ysum) = (0.0, 0.0);
        for &r in rows.iter() {
            wsum += self.w[r as usize];
            ysum += self.wy[r as usize];
        }
        let mean = ysum / wsum;
        let min_leaf = self.params.min_leaf as f64;
        self.values[slot] = mean;
        if depth >= self.params.max_depth || wsum < 2.0 * min_leaf || self.features.is_empty() {
            return;
        }
        let st = NodeStats {
            wsum,
            ysum,
            base: ysum * ysum / wsum,
            min_leaf,
        };

        let mut best: Best = None;
        let p = self.features.len();
        for k in 0..self.mtry {
            let pick = self.rng.random_range(k..p);
            self.features.swap(k, pick);
        }
        self.fill_histograms(rows);
        for j in 0..self.mtry {
            self.scan(j, &st, &mut best);
        }
        let Some((gain, f, b)) = best else {
            return;
        };
        if !(gain > 1e-12 * (1.0 + st.base.abs())) {
            return;
        }

        let col = &self.data.bins[f * self.data.n..(f + 1) * self.data.n];
        let mut split = 0;
        for i in 0..rows.len() {
            if col[rows[i] as usize] as usize <= b {
                rows.swap(i, split);
                split += 1;
            }
        }
        let left = self.nodes.len();
        for c in [left, left + 1] {
            self.nodes.push(Node::leaf(c));
            self.values.push(0.0);
        }
        self.nodes[slot] = Node {
            threshold: self.data.cuts[f][b],
            feature: f as u32,
            left: left as u32,
        };
        self.depth = self.depth.max(depth + 1);
        let (left_rows, right_rows) = rows.split_at_mut(split);
        self.build(left_rows, depth + 1, left);
        self.build(right_rows, depth + 1, left + 1);
    }
}

/// Fit a regression forest to row-major `x` (n × p) and targets `y`.
/// Tree `t` draws from random stream `t` of `seed`.
pub fn fit_forest(x: &[f64], p: usize, y: &[f64], params: &ForestParams, seed: u64) -> Result<Forest> {
    params.validate()?;
    let n = y.len();
    if x.len() != n * p {
        return Err(Error::invalid("feature matrix does not match target length"));
    }
    if n < params.min_leaf || n == 0 {
        return Err(Error::invalid(format!(
            "forest needs at least min_leaf = {} rows, got {n}",
            params.min_leaf
        )));
    }
    if y.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(Error::invalid("forest inputs must be finite"));
    }
    let data = Binned::new(x, n, p);
    let mtry = params.features_per_split(p).min(p);
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut w = vec![0.0; n];
    let mut wy = vec![0.0; n];
    let mut rows: Vec<u32> = Vec::with_capacity(n);
    for t in 0..params.n_trees {
        let mut rng = stream(seed, t as u64);
        if params.bootstrap {
            w.iter_mut().for_each(|v| *v = 0.0);
            for _ in 0..n {
                w[rng.random_range(0..n)] += 1.0;
            }
        } else {
            w.iter_mut().for_each(|v| *v = 1.0);
        }
        for i in 0..n {
            wy[i] = w[i] * y[i];
        }
        rows.clear();
        rows.extend((0..n as u32).filter(|&i| w[i as usize] > 0.0));
        let features: Vec<usize> = (0..p).collect();
        let mut b = Builder {
            data: &data,
            w: &w,
            wy: &wy,
            params,
            mtry,
            features,
            nodes: vec![Node::leaf(0)],
            values: vec![0.0],
            depth: 0,
            hist: Vec::new(),
            rng,
        };
        b.build(&mut rows, 0, 0);
        trees.push(Tree {
            nodes: b.nodes,
            values: b.values,
            depth: b.depth,
        });
    }
    Ok(Forest { trees, n_features: p })
}
