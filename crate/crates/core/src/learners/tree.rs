//! CART regression trees and the three ensembles built from them.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::{self, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_leaf: 5,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Grows a tree on the rows listed in `rows` (duplicates allowed) by
    /// greedy SSE-minimizing splits.
    pub fn fit<R: Rng>(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        rows: Vec<usize>,
        params: &TreeParams,
        rng: &mut R,
    ) -> Tree {
        let mut b = Builder {
            x,
            y,
            params,
            nodes: Vec::new(),
            scratch: Vec::with_capacity(rows.len()),
        };
        b.grow(rows, 0, rng);
        Tree { nodes: b.nodes }
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64)>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn grow<R: Rng>(&mut self, rows: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let id = self.nodes.len();
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n;
        self.nodes.push(Node::Leaf(mean));

        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&rows, sum, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x[[i, best.feature]] <= best.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split<R: Rng>(&mut self, rows: &[usize], sum: f64, rng: &mut R) -> Option<BestSplit> {
        let d = self.x.ncols();
        let features: Vec<usize> = match self.params.max_features {
            Some(k) if k < d => {
                let mut f = sample(rng, d, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let n = rows.len();
        let min_leaf = self.params.min_leaf.max(1);
        let parent = sum * sum / n as f64;
        // Gains below this are rounding noise (e.g. a pure node).
        let floor = 1e-12 * parent.abs().max(1e-300);
        let mut best: Option<BestSplit> = None;

        for f in features {
            self.scratch.clear();
            self.scratch
                .extend(rows.iter().map(|&i| (self.x[[i, f]], self.y[i])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.scratch[pos].1;
                let n_left = pos + 1;
                let (a, b) = (self.scratch[pos].0, self.scratch[pos + 1].0);
                if n_left < min_leaf || n - n_left < min_leaf || a == b {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (n - n_left) as f64
                    - parent;
                if gain > floor && best.as_ref().is_none_or(|bs| gain > bs.gain) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum EnsembleKind {
    Bagging,
    RandomForest,
    Boosting,
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub tree: TreeParams,
    /// Resample rows with replacement for each bagging / forest tree.
    pub bootstrap: bool,
    pub boost_depth: usize,
    pub shrinkage: f64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            tree: TreeParams::default(),
            bootstrap: true,
            boost_depth: 3,
            shrinkage: 0.05,
        }
    }
}

/// A fitted sequence of trees. Tree `t` depends only on `(seed, t)` (or on
/// trees `< t` for boosting), so the first `k` trees of an ensemble grown to
/// any length equal an ensemble grown to length `k`.
#[derive(Debug, Clone)]
pub struct TreeEnsemble {
    pub kind: EnsembleKind,
    pub init: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        kind: EnsembleKind,
        ntree: usize,
        seed: u64,
        opts: &EnsembleOptions,
    ) -> Result<Self> {
        if ntree == 0 {
            return Err(Error::invalid("ntree must be at least 1"));
        }
        let n = y.len();
        if n == 0 || x.nrows() != n {
            return Err(Error::invalid("tree ensemble needs a non-empty build set"));
        }
        let d = x.ncols();
        match kind {
            EnsembleKind::Bagging | EnsembleKind::RandomForest => {
                let params = TreeParams {
                    max_features: (kind == EnsembleKind::RandomForest).then(|| d.div_ceil(3)),
                    ..opts.tree
                };
                let trees = (0..ntree)
                    .into_par_iter()
                    .map(|t| {
                        let mut rng = seed::rng(derive_seed(seed, &[t as u64]));
                        let rows = if opts.bootstrap {
                            (0..n).map(|_| rng.random_range(0..n)).collect()
                        } else {
                            (0..n).collect()
                        };
                        Tree::fit(x, y, rows, &params, &mut rng)
                    })
                    .collect();
                Ok(Self {
                    kind,
                    init: 0.0,
                    shrinkage: 1.0,
                    trees,
                })
            }
            EnsembleKind::Boosting => {
                let params = TreeParams {
                    max_depth: opts.boost_depth,
                    max_features: None,
                    ..opts.tree
                };
                let init = y.iter().sum::<f64>() / n as f64;
                let mut fitted = vec![init; n];
                let mut residual = vec![0.0; n];
                let mut trees = Vec::with_capacity(ntree);
                // Boosting trees use every row and feature; the RNG is never consulted.
                let mut rng = seed::rng(seed);
                for _ in 0..ntree {
                    for i in 0..n {
                        residual[i] = y[i] - fitted[i];
                    }
                    let tree = Tree::fit(x, &residual, (0..n).collect(), &params, &mut rng);
                    for (i, f) in fitted.iter_mut().enumerate() {
                        *f += opts.shrinkage * tree.predict_row(x.row(i));
                    }
                    trees.push(tree);
                }
                Ok(Self {
                    kind,
                    init,
                    shrinkage: opts.shrinkage,
                    trees,
                })
            }
        }
    }

    /// Prediction of the ensemble truncated to its first `ntree` trees.
    pub fn predict_row(&self, x: ArrayView1<'_, f64>, ntree: usize) -> f64 {
        let trees = &self.trees[..ntree];
        match self.kind {
            EnsembleKind::Bagging | EnsembleKind::RandomForest => {
                let mut s = 0.0;
                for t in trees {
                    s += t.predict_row(x);
                }
                s / ntree as f64
            }
            EnsembleKind::Boosting => {
                let mut s = 0.0;
                for t in trees {
                    s += t.predict_row(x);
                }
                self.init + self.shrinkage * s
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn step_data() -> (Array2<f64>, Vec<f64>) {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| if j == 0 { i as f64 } else { (i % 3) as f64 });
        let y = (0..40).map(|i| if i < 20 { 1.0 } else { 5.0 }).collect();
        (x, y)
    }

    #[test]
    fn single_tree_without_bootstrap_is_piecewise_constant() {
        let (x, y) = step_data();
        let opts = EnsembleOptions {
            bootstrap: false,
            ..Default::default()
        };
        let e = TreeEnsemble::fit(x.view(), &y, EnsembleKind::Bagging, 1, 0, &opts).unwrap();
        assert_eq!(e.trees[0].n_leaves(), 2);
        assert_eq!(e.predict_row(array![3.0, 0.0].view(), 1), 1.0);
        assert_eq!(e.predict_row(array![30.0, 2.0].view(), 1), 5.0);
        assert_eq!(e.predict_row(array![19.4, 1.0].view(), 1), 1.0);
    }

    #[test]
    fn constant_response_everywhere() {
        let (x, _) = step_data();
        let y = vec![2.5; 40];
        for kind in [EnsembleKind::Bagging, EnsembleKind::RandomForest, EnsembleKind::Boosting] {
            let e = TreeEnsemble::fit(x.view(), &y, kind, 7, 3, &Default::default()).unwrap();
            for q in [array![-5.0, 0.0], array![17.0, 1.0], array![100.0, 9.0]] {
                assert!((e.predict_row(q.view(), 7) - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn boosting_two_stumps_by_hand() {
        // y = [0, 2]: mean 1, residuals [-1, 1]; a unit-shrinkage stump fits
        // them exactly, leaving zero residuals so the second stump is a 0 leaf.
        let x = array![[0.0], [1.0]];
        let y = [0.0, 2.0];
        let opts = EnsembleOptions {
            tree: TreeParams {
                min_leaf: 1,
                ..Default::default()
            },
            boost_depth: 1,
            shrinkage: 1.0,
            ..Default::default()
        };
        let e = TreeEnsemble::fit(x.view(), &y, EnsembleKind::Boosting, 2, 0, &opts).unwrap();
        assert_eq!(e.init, 1.0);
        assert_eq!(e.trees[0].n_leaves(), 2);
        assert_eq!(e.trees[0].predict_row(array![0.0].view()), -1.0);
        assert_eq!(e.trees[0].predict_row(array![1.0].view()), 1.0);
        assert_eq!(e.trees[1].n_leaves(), 1);
        assert_eq!(e.trees[1].predict_row(array![0.0].view()), 0.0);
        assert_eq!(e.predict_row(array![0.0].view(), 2), 0.0);
        assert_eq!(e.predict_row(array![1.0].view(), 2), 2.0);
        assert_eq!(e.predict_row(array![0.0].view(), 1), 0.0);
    }

    #[test]
    fn prefix_of_long_ensemble_equals_short_fit() {
        let (x, y) = step_data();
        for kind in [EnsembleKind::Bagging, EnsembleKind::RandomForest, EnsembleKind::Boosting] {
            let long = TreeEnsemble::fit(x.view(), &y, kind, 12, 9, &Default::default()).unwrap();
            let short = TreeEnsemble::fit(x.view(), &y, kind, 5, 9, &Default::default()).unwrap();
            for i in 0..40 {
                assert_eq!(long.predict_row(x.row(i), 5), short.predict_row(x.row(i), 5));
            }
        }
    }

    #[test]
    fn bagging_within_response_range() {
        let (x, y) = step_data();
        let e = TreeEnsemble::fit(x.view(), &y, EnsembleKind::RandomForest, 20, 1, &Default::default()).unwrap();
        for q in -10..60 {
            let p = e.predict_row(array![q as f64, 1.0].view(), 20);
            assert!((1.0..=5.0).contains(&p));
        }
    }

    #[test]
    fn respects_depth_and_leaf_limits() {
        let x = Array2::from_shape_fn((64, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..64).map(|i| (i * i) as f64).collect();
        let params = TreeParams {
            max_depth: 2,
            min_leaf: 5,
            max_features: None,
        };
        let t = Tree::fit(x.view(), &y, (0..64).collect(), &params, &mut seed::rng(0));
        assert!(t.n_leaves() <= 4);
        let params = TreeParams {
            max_depth: 30,
            min_leaf: 20,
            max_features: None,
        };
        let t = Tree::fit(x.view(), &y, (0..64).collect(), &params, &mut seed::rng(0));
        assert!(t.n_leaves() <= 3);
    }

    #[test]
    fn zero_trees_rejected() {
        let (x, y) = step_data();
        assert!(TreeEnsemble::fit(x.view(), &y, EnsembleKind::Bagging, 0, 0, &Default::default()).is_err());
    }
}
