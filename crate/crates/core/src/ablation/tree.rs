use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEPTH_GRID: [usize; 4] = [5, 10, 15, 20];

/// Axis-aligned binary tree grown greedily by Gini impurity.
#[derive(Clone, Debug, PartialEq)]
pub enum DecisionTree {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<DecisionTree>,
        right: Box<DecisionTree>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Size-weighted Gini impurity of the two children.
    pub impurity: f64,
}

fn majority(counts: &[usize]) -> usize {
    (0..counts.len()).fold(0, |best, l| if counts[l] > counts[best] { l } else { best })
}

fn gini_weighted(sum_sq: f64, n: usize) -> f64 {
    // n * gini = n - sum(c^2)/n
    if n == 0 {
        0.0
    } else {
        n as f64 - sum_sq / n as f64
    }
}

/// Exhaustive search over features and midpoints between distinct sorted
/// values. Ties keep the earliest feature and the lowest threshold.
pub fn best_split(rows: &[Vec<f64>], labels: &[usize], idx: &[usize], num_labels: usize) -> Option<SplitChoice> {
    let n = idx.len();
    let d = rows.first()?.len();
    let mut total = vec![0usize; num_labels];
    for &i in idx {
        total[labels[i]] += 1;
    }
    let total_sq: f64 = total.iter().map(|&c| (c * c) as f64).sum();
    let mut best: Option<SplitChoice> = None;
    let mut sorted = idx.to_vec();
    let mut left = vec![0usize; num_labels];
    for f in 0..d {
        sorted.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]).then(a.cmp(&b)));
        left.iter_mut().for_each(|c| *c = 0);
        let (mut left_sq, mut right_sq) = (0.0, total_sq);
        for pos in 0..n - 1 {
            let l = labels[sorted[pos]];
            left_sq += (2 * left[l] + 1) as f64;
            right_sq -= (2 * (total[l] - left[l]) - 1) as f64;
            left[l] += 1;
            let (a, b) = (rows[sorted[pos]][f], rows[sorted[pos + 1]][f]);
            if a == b {
                continue;
            }
            let impurity = (gini_weighted(left_sq, pos + 1) + gini_weighted(right_sq, n - pos - 1)) / n as f64;
            if best.is_none_or(|s| impurity < s.impurity) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: a + (b - a) / 2.0,
                    impurity,
                });
            }
        }
    }
    best
}

fn grow(rows: &[Vec<f64>], labels: &[usize], idx: Vec<usize>, depth: usize, num_labels: usize) -> DecisionTree {
    let mut counts = vec![0usize; num_labels];
    for &i in &idx {
        counts[labels[i]] += 1;
    }
    let leaf = DecisionTree::Leaf(majority(&counts));
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if depth == 0 || pure {
        return leaf;
    }
    let Some(split) = best_split(rows, labels, &idx, num_labels) else {
        return leaf;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| rows[i][split.feature] <= split.threshold);
    DecisionTree::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(rows, labels, l, depth - 1, num_labels)),
        right: Box::new(grow(rows, labels, r, depth - 1, num_labels)),
    }
}

fn to_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let [n, _] = *t.dims() else {
        return Err(Error::shape(format!("expected [N, d], got {:?}", t.dims())));
    };
    Ok((0..n).map(|i| t.row(i).iter().map(|&v| v as f64).collect()).collect())
}

impl DecisionTree {
    pub fn fit(train: &Tensor, labels: &[usize], max_depth: usize) -> Result<Self> {
        if max_depth == 0 {
            return Err(Error::param("max_depth must be at least 1"));
        }
        let rows = to_rows(train)?;
        if rows.is_empty() {
            return Err(Error::param("cannot fit a tree on an empty training set"));
        }
        if labels.len() != rows.len() {
            return Err(Error::shape(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        let num_labels = labels.iter().max().unwrap() + 1;
        Ok(grow(&rows, labels, (0..rows.len()).collect(), max_depth, num_labels))
    }

    pub fn predict_one(&self, x: &[f32]) -> usize {
        let mut node = self;
        loop {
            match node {
                DecisionTree::Leaf(l) => return *l,
                DecisionTree::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if (x[*feature] as f64) <= *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn predict(&self, test: &Tensor) -> Vec<usize> {
        (0..test.dims()[0]).map(|i| self.predict_one(test.row(i))).collect()
    }

    pub fn depth(&self) -> usize {
        match self {
            DecisionTree::Leaf(_) => 0,
            DecisionTree::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

pub fn tree_classify(train: &Tensor, labels: &[usize], test: &Tensor, max_depth: usize) -> Result<Vec<usize>> {
    Ok(DecisionTree::fit(train, labels, max_depth)?.predict(test))
}
