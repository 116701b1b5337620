//! Gradient-boosted regression trees with squared-error loss.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RegressError;
use crate::scalar::Real;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each stage.
    pub subsample: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_stages: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
            subsample: 1.0,
        }
    }
}

impl TreeParams {
    pub(crate) fn validate(&self) -> Result<(), RegressError> {
        let bad = |msg: String| Err(RegressError::InvalidConfig(msg));
        if self.n_stages == 0 {
            return bad("boosted_trees needs at least one stage".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.max_depth == 0 {
            return bad("tree depth must be at least 1".into());
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!("subsample must lie in (0, 1], got {}", self.subsample));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node<T> {
    Leaf(T),
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    fn predict_row(&self, row: ArrayView1<'_, T>) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

/// Additive ensemble: `init + learning_rate * Σ tree(x)`.
#[derive(Debug, Clone)]
pub struct TreeEnsemble<T> {
    init: T,
    learning_rate: T,
    trees: Vec<Tree<T>>,
    stage_mse: Vec<f64>,
}

impl<T: Real> TreeEnsemble<T> {
    pub fn predict(&self, features: ArrayView2<'_, T>) -> Array1<T> {
        features
            .rows()
            .into_iter()
            .map(|row| {
                let s: T = self.trees.iter().map(|t| t.predict_row(row)).sum();
                self.init + self.learning_rate * s
            })
            .collect()
    }

    pub fn trees(&self) -> &[Tree<T>] {
        &self.trees
    }

    /// Training MSE after each stage; index 0 is the constant initial model.
    pub fn stage_training_mse(&self) -> &[f64] {
        &self.stage_mse
    }
}

struct Grower<'a, T> {
    x: ArrayView2<'a, T>,
    residual: &'a [T],
    params: &'a TreeParams,
    nodes: Vec<Node<T>>,
    goes_left: Vec<bool>,
}

struct BestSplit<T> {
    gain: T,
    feature: usize,
    threshold: T,
}

impl<T: Real> Grower<'_, T> {
    /// `sorted[f]` lists the node's rows ordered by feature `f`.
    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let rows = &sorted[0];
        let n = rows.len();
        let sum: T = rows.iter().map(|&i| self.residual[i]).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(sum / T::of_usize(n)));
        if depth >= self.params.max_depth || n < 2 * self.params.min_samples_leaf {
            return id;
        }
        let Some(best) = self.best_split(&sorted, sum) else {
            return id;
        };

        for &i in &sorted[best.feature] {
            self.goes_left[i] = self.x[[i, best.feature]] <= best.threshold;
        }
        let (left_sorted, right_sorted): (Vec<_>, Vec<_>) = sorted
            .into_iter()
            .map(|order| order.into_iter().partition::<Vec<usize>, _>(|&i| self.goes_left[i]))
            .unzip();
        let left = self.grow(left_sorted, depth + 1);
        let right = self.grow(right_sorted, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, sorted: &[Vec<usize>], total: T) -> Option<BestSplit<T>> {
        let n = sorted[0].len();
        let min_leaf = self.params.min_samples_leaf;
        let parent = total * total / T::of_usize(n);
        let mut best: Option<BestSplit<T>> = None;
        for (feature, order) in sorted.iter().enumerate() {
            let mut left_sum = T::zero();
            for k in 0..n - 1 {
                let i = order[k];
                left_sum = left_sum + self.residual[i];
                let here = self.x[[i, feature]];
                let next = self.x[[order[k + 1], feature]];
                if !(next > here) {
                    continue;
                }
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / T::of_usize(n_left)
                    + right_sum * right_sum / T::of_usize(n_right)
                    - parent;
                if gain > T::zero() && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = here + (next - here) / T::of(2.0);
                    let threshold = if mid < next { mid } else { here };
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

pub(crate) fn fit<T: Real>(
    params: &TreeParams,
    seed: u64,
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
) -> Result<(TreeEnsemble<T>, Array1<T>), RegressError> {
    let (m, d) = x.dim();
    let init = stats::mean(y);
    let lr = T::of(params.learning_rate);
    let mut current = Array1::from_elem(m, init);
    let mut residual: Vec<T> = y.iter().map(|&v| v - init).collect();
    let mut stage_mse = vec![stats::mse(current.view(), y).as_f64()];

    // Rows sorted by each feature, ties by row index.
    let presorted: Vec<Vec<usize>> = (0..d)
        .map(|f| {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                x[[a, f]]
                    .partial_cmp(&x[[b, f]])
                    .expect("finite features")
                    .then(a.cmp(&b))
            });
            order
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_stage = vec![true; m];
    let n_sub = ((params.subsample * m as f64).ceil() as usize).clamp(1, m);

    let mut trees = Vec::with_capacity(params.n_stages);
    for _ in 0..params.n_stages {
        let sorted = if n_sub < m {
            in_stage.iter_mut().for_each(|v| *v = false);
            for i in sample(&mut rng, m, n_sub) {
                in_stage[i] = true;
            }
            presorted
                .iter()
                .map(|o| o.iter().copied().filter(|&i| in_stage[i]).collect())
                .collect()
        } else {
            presorted.clone()
        };
        let mut grower = Grower {
            x,
            residual: &residual,
            params,
            nodes: Vec::new(),
            goes_left: vec![false; m],
        };
        grower.grow(sorted, 0);
        let tree = Tree { nodes: grower.nodes };
        for i in 0..m {
            let step = lr * tree.predict_row(x.row(i));
            current[i] = current[i] + step;
            residual[i] = y[i] - current[i];
        }
        stage_mse.push(stats::mse(current.view(), y).as_f64());
        trees.push(tree);
    }

    Ok((
        TreeEnsemble {
            init,
            learning_rate: lr,
            trees,
            stage_mse,
        },
        current,
    ))
}
