use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const K_GRID: [usize; 5] = [5, 10, 50, 100, 1000];

fn check_tables(train: &Tensor, labels: &[usize], test: &Tensor) -> Result<usize> {
    let (n, d) = match train.dims() {
        [n, d] => (*n, *d),
        other => return Err(Error::shape(format!("train latents must be [N, d], got {other:?}"))),
    };
    if labels.len() != n {
        return Err(Error::shape(format!("{n} train rows but {} labels", labels.len())));
    }
    match test.dims() {
        [_, td] if *td == d => Ok(n),
        other => Err(Error::shape(format!("test latents must be [M, {d}], got {other:?}"))),
    }
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Majority vote over the `k` nearest train rows by Euclidean distance.
/// Equidistant neighbours are taken in row order; tied votes go to the
/// smallest label.
pub fn knn_classify(train: &Tensor, labels: &[usize], test: &Tensor, k: usize) -> Result<Vec<usize>> {
    let n = check_tables(train, labels, test)?;
    if k == 0 || k > n {
        return Err(Error::param(format!("k = {k} must be in [1, {n}]")));
    }
    let num_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut votes = vec![0usize; num_labels];
    let mut out = Vec::with_capacity(test.dims()[0]);
    for q in 0..test.dims()[0] {
        let query = test.row(q);
        order.clear();
        order.extend((0..n).map(|i| (squared_distance(query, train.row(i)), i)));
        if k < n {
            order.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        }
        votes.iter_mut().for_each(|v| *v = 0);
        for &(_, i) in &order[..k] {
            votes[labels[i]] += 1;
        }
        let best = (0..num_labels).fold(0, |best, l| if votes[l] > votes[best] { l } else { best });
        out.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k1_returns_identical_point_label() {
        let train = Tensor::from_vec(&[3, 2], vec![0.0, 0.0, 5.0, 5.0, -3.0, 1.0]).unwrap();
        let test = Tensor::from_vec(&[1, 2], vec![5.0, 5.0]).unwrap();
        assert_eq!(knn_classify(&train, &[2, 7, 1], &test, 1).unwrap(), vec![7]);
    }

    #[test]
    fn uniform_labels_win_for_any_k() {
        let train = Tensor::from_fn(&[10, 3], |i| (i as f32).sin());
        let test = Tensor::from_fn(&[4, 3], |i| (i as f32).cos());
        for k in 1..=10 {
            assert!(knn_classify(&train, &[4; 10], &test, k)
                .unwrap()
                .iter()
                .all(|&l| l == 4));
        }
    }

    #[test]
    fn vote_tie_goes_to_smaller_label() {
        let train = Tensor::from_vec(&[2, 1], vec![1.0, -1.0]).unwrap();
        let test = Tensor::from_vec(&[1, 1], vec![0.0]).unwrap();
        assert_eq!(knn_classify(&train, &[3, 1], &test, 2).unwrap(), vec![1]);
    }

    #[test]
    fn k_bounds() {
        let train = Tensor::zeros(&[3, 2]);
        let test = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            knn_classify(&train, &[0, 1, 2], &test, 4),
            Err(Error::Param(_))
        ));
        assert!(matches!(
            knn_classify(&train, &[0, 1, 2], &test, 0),
            Err(Error::Param(_))
        ));
        assert!(matches!(knn_classify(&train, &[0, 1], &test, 1), Err(Error::Shape(_))));
    }
}
