//! From-scratch random-forest regression used as the Q-function approximator.
//!
//! CART-style regression trees with bootstrap sampling, per-node random
//! feature subsets, variance-minimizing splits at midpoints of consecutive
//! distinct values, and mean-target leaves. Everything is deterministic
//! given the seed: each tree owns its own generator derived from
//! (seed, tree index), so training order cannot perturb results.

use crate::seeding;
use crate::{Error, Result};
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Row-major training matrix plus targets.
#[derive(Debug, Clone)]
pub struct TrainSet {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    n_cols: usize,
}

impl TrainSet {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, n_cols: usize) -> Result<Self> {
        if targets.is_empty() || n_cols == 0 {
            return Err(Error::Config("training set must be non-empty".into()));
        }
        if inputs.len() != targets.len() * n_cols {
            return Err(Error::Config(format!(
                "input length {} does not match {} rows x {} cols",
                inputs.len(),
                targets.len(),
                n_cols
            )));
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "training input row {} col {} is {}",
                i / n_cols,
                i % n_cols,
                inputs[i]
            )));
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("training target {} is {}", i, targets[i])));
        }
        Ok(TrainSet { inputs, targets, n_cols })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Config("ragged training rows".into()));
        }
        let inputs = rows.iter().flatten().copied().collect();
        TrainSet::new(inputs, targets, n_cols)
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn value(&self, row: usize, col: usize) -> f64 {
        self.inputs[row * self.n_cols + col]
    }
}

/// Forest hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    /// `None` grows until purity or the leaf-size floor.
    pub max_depth: Option<usize>,
    /// `None` uses ceil(P / 3).
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 50,
            min_samples_leaf: 5,
            max_depth: Some(12),
            features_per_split: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    fn resolve_features(&self, n_cols: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| n_cols.div_ceil(3))
            .clamp(1, n_cols)
    }
}

const LEAF: u32 = u32::MAX;

/// Flat tree node. `feature == LEAF` marks a leaf whose value is `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = self.nodes[i];
            if n.feature == LEAF {
                return n.threshold;
            }
            i = if row[n.feature as usize] < n.threshold { n.left as usize } else { n.right as usize };
        }
    }
}

/// Trained ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    pub params: ForestParams,
    pub n_features: usize,
    pub seed: u64,
}

struct TreeBuilder<'a> {
    data: &'a TrainSet,
    /// Bootstrap multiplicity per row (all 1 without bootstrap).
    weights: &'a [u32],
    min_leaf: usize,
    max_depth: usize,
    n_feats: usize,
    nodes: Vec<Node>,
    /// Scratch: side flag per global row for the partition step.
    goes_left: Vec<bool>,
}

impl<'a> TreeBuilder<'a> {
    /// Build a subtree from per-feature row lists. Each list holds the node's
    /// rows ordered ascending by that feature's value (ties by row index);
    /// the lists are kept aligned by stable partitioning, so no per-node
    /// sorting is ever needed.
    fn build(&mut self, orders: Vec<Vec<u32>>, depth: usize, rng: &mut impl Rng) -> u32 {
        let rows = &orders[0];
        let n: u32 = rows.iter().map(|&i| self.weights[i as usize]).sum();
        let sum: f64 = rows
            .iter()
            .map(|&i| f64::from(self.weights[i as usize]) * self.data.targets[i as usize])
            .sum();
        let mean = sum / f64::from(n);
        let at_limit = depth >= self.max_depth || (n as usize) < 2 * self.min_leaf;
        let split = if at_limit { None } else { self.best_split(&orders, n, rng) };
        let Some((feature, threshold)) = split else {
            let id = self.nodes.len() as u32;
            self.nodes.push(Node { feature: LEAF, threshold: mean, left: 0, right: 0 });
            return id;
        };
        for &i in rows {
            self.goes_left[i as usize] = self.data.value(i as usize, feature as usize) < threshold;
        }
        let mut left_orders = Vec::with_capacity(orders.len());
        let mut right_orders = Vec::with_capacity(orders.len());
        for order in orders {
            let (l, r): (Vec<u32>, Vec<u32>) =
                order.into_iter().partition(|&i| self.goes_left[i as usize]);
            left_orders.push(l);
            right_orders.push(r);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { feature, threshold, left: 0, right: 0 });
        let left = self.build(left_orders, depth + 1, rng);
        let right = self.build(right_orders, depth + 1, rng);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    /// Best (feature, threshold) minimizing the weighted child SSE.
    ///
    /// Features are scanned in ascending index order and thresholds in
    /// ascending value order with strict improvement, so ties resolve to the
    /// lowest feature index and lowest threshold.
    fn best_split(&mut self, orders: &[Vec<u32>], n: u32, rng: &mut impl Rng) -> Option<(u32, f64)> {
        let n_rows = orders[0].len();
        let mut total_sum = 0.0;
        let mut total_sq = 0.0;
        for &i in &orders[0] {
            let w = f64::from(self.weights[i as usize]);
            let y = self.data.targets[i as usize];
            total_sum += w * y;
            total_sq += w * y * y;
        }
        let total_sse = total_sq - total_sum * total_sum / f64::from(n);
        if total_sse <= 1e-12 * (1.0 + total_sq.abs()) {
            return None; // target is (numerically) constant
        }
        let features = sample_features(self.data.n_cols(), self.n_feats, rng);
        let mut best: Option<(f64, u32, f64)> = None;
        for f in features {
            let order = &orders[f];
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            let mut n_left = 0u32;
            for k in 0..n_rows - 1 {
                let i = order[k] as usize;
                let w = f64::from(self.weights[i]);
                let y = self.data.targets[i];
                left_sum += w * y;
                left_sq += w * y * y;
                n_left += self.weights[i];
                let v = self.data.value(i, f);
                let v_next = self.data.value(order[k + 1] as usize, f);
                if v >= v_next
                    || (n_left as usize) < self.min_leaf
                    || ((n - n_left) as usize) < self.min_leaf
                {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / f64::from(n_left))
                    + (right_sq - right_sum * right_sum / f64::from(n - n_left));
                let improves = match best {
                    None => true,
                    Some((best_sse, _, _)) => sse < best_sse,
                };
                if improves {
                    // For adjacent floats the midpoint can round down to `v`
                    // itself, which would leave the left child empty; clamp
                    // the threshold into (v, v_next].
                    let mut th = 0.5 * (v + v_next);
                    if th <= v {
                        th = v_next;
                    }
                    best = Some((sse, f as u32, th));
                }
            }
        }
        best.map(|(_, f, th)| (f, th))
    }
}

/// `k` distinct feature indices in ascending order (partial Fisher-Yates).
fn sample_features(p: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if k >= p {
        return (0..p).collect();
    }
    let mut pool: Vec<usize> = (0..p).collect();
    for i in 0..k {
        let j = rng.gen_range(i..p);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

impl Forest {
    /// Train a forest. Deterministic given `seed`.
    pub fn fit(data: &TrainSet, params: ForestParams, seed: u64) -> Result<Self> {
        if params.n_trees == 0 || params.min_samples_leaf == 0 {
            return Err(Error::Config("n_trees and min_samples_leaf must be positive".into()));
        }
        if data.n_rows() < params.min_samples_leaf {
            return Err(Error::Config(format!(
                "need at least min_samples_leaf={} rows, got {}",
                params.min_samples_leaf,
                data.n_rows()
            )));
        }
        let n = data.n_rows();
        let n_feats = params.resolve_features(data.n_cols());
        let max_depth = params.max_depth.unwrap_or(usize::MAX);
        // One sort per feature for the whole forest; trees reuse these orders
        // by filtering to their bootstrap support and partitioning stably.
        let sorted: Vec<Vec<u32>> = (0..data.n_cols())
            .map(|f| {
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_by(|&a, &b| {
                    data.value(a as usize, f)
                        .partial_cmp(&data.value(b as usize, f))
                        .unwrap()
                        .then(a.cmp(&b))
                });
                order
            })
            .collect();
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = seeding::rng(seed, seeding::stream::FOREST, t as u64);
                let mut weights = vec![0u32; n];
                if params.bootstrap {
                    for _ in 0..n {
                        weights[rng.gen_range(0..n)] += 1;
                    }
                } else {
                    weights.fill(1);
                }
                let root_orders: Vec<Vec<u32>> = sorted
                    .iter()
                    .map(|order| {
                        order.iter().copied().filter(|&i| weights[i as usize] > 0).collect()
                    })
                    .collect();
                let mut builder = TreeBuilder {
                    data,
                    weights: &weights,
                    min_leaf: params.min_samples_leaf,
                    max_depth,
                    n_feats,
                    nodes: Vec::new(),
                    goes_left: vec![false; n],
                };
                builder.build(root_orders, 0, &mut rng);
                Tree { nodes: builder.nodes }
            })
            .collect();
        Ok(Forest { trees, params, n_features: data.n_cols(), seed })
    }

    /// Mean of per-tree leaf values.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::Config(format!(
                "feature width mismatch: expected {}, got {}",
                self.n_features,
                row.len()
            )));
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Maximize the forest prediction over an integer value of the last
    /// feature column in `[lo, hi]`, with the remaining columns fixed.
    ///
    /// Returns `(argmax, max)`; ties resolve to the smallest integer. The
    /// forest output is piecewise constant in the trailing column, so each
    /// tree contributes its reachable (interval, leaf) pieces to a
    /// difference array over the integer range, which is then swept once.
    pub fn max_over_trailing_int(&self, prefix: &[f64], lo: u32, hi: u32) -> Result<(u32, f64)> {
        if prefix.len() + 1 != self.n_features {
            return Err(Error::Config(format!(
                "feature width mismatch: expected {} state features, got {}",
                self.n_features - 1,
                prefix.len()
            )));
        }
        debug_assert!(lo <= hi);
        let action_col = (self.n_features - 1) as u32;
        let range = (hi - lo + 1) as usize;
        let mut diff = vec![0.0f64; range + 1];
        // Stack of (node, lo, hi) action-interval segments per tree.
        let mut stack: Vec<(u32, u32, u32)> = Vec::new();
        for tree in &self.trees {
            stack.push((0, lo, hi));
            while let Some((node, a, b)) = stack.pop() {
                let n = tree.nodes[node as usize];
                if n.feature == LEAF {
                    diff[(a - lo) as usize] += n.threshold;
                    diff[(b - lo + 1) as usize] -= n.threshold;
                } else if n.feature == action_col {
                    // Left subtree serves integers < threshold, i.e. <= cut.
                    let cut = if n.threshold == n.threshold.floor() {
                        n.threshold as i64 - 1
                    } else {
                        n.threshold.floor() as i64
                    };
                    if cut >= i64::from(a) {
                        stack.push((n.left, a, (cut.min(i64::from(b))) as u32));
                    }
                    if cut + 1 <= i64::from(b) {
                        stack.push((n.right, (cut + 1).max(i64::from(a)) as u32, b));
                    }
                } else if prefix[n.feature as usize] < n.threshold {
                    stack.push((n.left, a, b));
                } else {
                    stack.push((n.right, a, b));
                }
            }
        }
        let inv = 1.0 / self.trees.len() as f64;
        let mut acc = 0.0;
        let mut best_a = lo;
        let mut best_q = f64::NEG_INFINITY;
        for (k, d) in diff[..range].iter().enumerate() {
            acc += d;
            let q = acc * inv;
            if q > best_q {
                best_q = q;
                best_a = lo + k as u32;
            }
        }
        if !best_q.is_finite() {
            return Err(Error::Config(format!(
                "non-finite forest maximum over [{lo}, {hi}] at prefix {prefix:?}: diff {:?}",
                &diff[..range.min(8)]
            )));
        }
        Ok((best_a, best_q))
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    // --- flat binary serialization -------------------------------------
    //
    // Little-endian layout:
    //   magic "EVQF", version u32
    //   n_features u32, seed u64
    //   params: n_trees u32, min_samples_leaf u32, max_depth i64 (-1 = none),
    //           features_per_split i64 (-1 = auto), bootstrap u8
    //   per tree: n_nodes u32, then nodes as
    //           (feature u32, threshold f64 bits, left u32, right u32)
    // f64 values travel as raw bit patterns, so round trips are bit-exact.

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"EVQF")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.n_features as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.params.n_trees as u32).to_le_bytes())?;
        w.write_all(&(self.params.min_samples_leaf as u32).to_le_bytes())?;
        let md: i64 = self.params.max_depth.map_or(-1, |d| d as i64);
        w.write_all(&md.to_le_bytes())?;
        let fs: i64 = self.params.features_per_split.map_or(-1, |f| f as i64);
        w.write_all(&fs.to_le_bytes())?;
        w.write_all(&[u8::from(self.params.bootstrap)])?;
        for tree in &self.trees {
            w.write_all(&(tree.nodes.len() as u32).to_le_bytes())?;
            for n in &tree.nodes {
                w.write_all(&n.feature.to_le_bytes())?;
                w.write_all(&n.threshold.to_bits().to_le_bytes())?;
                w.write_all(&n.left.to_le_bytes())?;
                w.write_all(&n.right.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"EVQF" {
            return Err(Error::Parse("not a forest file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::Parse(format!("unsupported forest file version {version}")));
        }
        let n_features = read_u32(r)? as usize;
        let seed = read_u64(r)?;
        let n_trees = read_u32(r)? as usize;
        let min_samples_leaf = read_u32(r)? as usize;
        let md = read_i64(r)?;
        let fs = read_i64(r)?;
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        let params = ForestParams {
            n_trees,
            min_samples_leaf,
            max_depth: (md >= 0).then(|| md as usize),
            features_per_split: (fs >= 0).then(|| fs as usize),
            bootstrap: b[0] != 0,
        };
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = read_u32(r)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let feature = read_u32(r)?;
                let threshold = f64::from_bits(read_u64(r)?);
                let left = read_u32(r)?;
                let right = read_u32(r)?;
                if feature != LEAF
                    && (feature as usize >= n_features
                        || left as usize >= n_nodes
                        || right as usize >= n_nodes)
                {
                    return Err(Error::Parse("corrupt forest file (node out of range)".into()));
                }
                nodes.push(Node { feature, threshold, left, right });
            }
            if nodes.is_empty() {
                return Err(Error::Parse("corrupt forest file (empty tree)".into()));
            }
            trees.push(Tree { nodes });
        }
        Ok(Forest { trees, params, n_features, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Forest::read_from(&mut f)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_i64(r: &mut impl Read) -> Result<i64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(i64::from_le_bytes(b))
}
