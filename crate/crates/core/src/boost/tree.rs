//! Least-squares regression trees with axis-aligned splits.

use serde::{Deserialize, Serialize};

use crate::cox::DesignMatrix;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode<T> {
    Leaf {
        value: T,
        n: usize,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

/// Nodes stored in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree<T> {
    pub nodes: Vec<TreeNode<T>>,
}

impl<T: Real> RegressionTree<T> {
    pub fn predict(&self, x: &[T]) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[TreeNode<T>], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (T, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value, n } => Some((*value, *n)),
            TreeNode::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_node: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    feature: usize,
    threshold: T,
    gain: T,
}

/// Greedy least-squares tree on `rows`, splitting only on `cols`. Thresholds
/// are midpoints between consecutive distinct values; ties in gain go to the
/// lowest feature index and then the lowest threshold.
pub fn fit_tree<T: Real>(
    features: &DesignMatrix<T>,
    z: &[T],
    rows: &[usize],
    cols: &[usize],
    params: TreeParams,
) -> RegressionTree<T> {
    assert!(!rows.is_empty(), "tree needs at least one row");
    let mut cols = cols.to_vec();
    cols.sort_unstable();
    let mut nodes = Vec::new();
    grow(features, z, rows.to_vec(), &cols, params, 0, &mut nodes);
    RegressionTree { nodes }
}

fn grow<T: Real>(
    features: &DesignMatrix<T>,
    z: &[T],
    rows: Vec<usize>,
    cols: &[usize],
    params: TreeParams,
    depth: usize,
    nodes: &mut Vec<TreeNode<T>>,
) -> usize {
    let at = nodes.len();
    let n = rows.len();
    let sum: T = rows.iter().map(|&i| z[i]).sum();
    let mean = sum / T::from_usize_lossy(n);
    nodes.push(TreeNode::Leaf { value: mean, n });

    if depth >= params.max_depth || n < 2 * params.min_node.max(1) {
        return at;
    }
    let Some(best) = best_split(features, z, &rows, cols, params.min_node.max(1), sum) else {
        return at;
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&i| features.row(i)[best.feature] <= best.threshold);
    let left = grow(features, z, left_rows, cols, params, depth + 1, nodes);
    let right = grow(features, z, right_rows, cols, params, depth + 1, nodes);
    nodes[at] = TreeNode::Split {
        feature: best.feature,
        threshold: best.threshold,
        left,
        right,
    };
    at
}

fn best_split<T: Real>(
    features: &DesignMatrix<T>,
    z: &[T],
    rows: &[usize],
    cols: &[usize],
    min_node: usize,
    total: T,
) -> Option<Candidate<T>> {
    let n = rows.len();
    let nf = T::from_usize_lossy(n);
    let base = total * total / nf;
    let sum_sq: T = rows.iter().map(|&i| z[i] * z[i]).sum();
    let floor = T::lit(64.0) * T::epsilon() * sum_sq.max(T::min_positive_value());
    let mut best: Option<Candidate<T>> = None;
    let mut sorted: Vec<(T, T)> = Vec::with_capacity(n);
    for &f in cols {
        sorted.clear();
        sorted.extend(rows.iter().map(|&i| (features.row(i)[f], z[i])));
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let mut left_sum = T::zero();
        for k in 1..n {
            left_sum += sorted[k - 1].1;
            if k < min_node || n - k < min_node {
                continue;
            }
            if sorted[k - 1].0 == sorted[k].0 {
                continue;
            }
            let nl = T::from_usize_lossy(k);
            let nr = nf - nl;
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - base;
            if gain > floor && best.is_none_or(|b| gain > b.gain) {
                best = Some(Candidate {
                    feature: f,
                    threshold: (sorted[k - 1].0 + sorted[k].0) / T::lit(2.0),
                    gain,
                });
            }
        }
    }
    best
}
