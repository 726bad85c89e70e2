use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 60;

/// Singular values (descending) and matching right singular vectors of a
/// column-major `n x d` matrix, by one-sided Jacobi rotations.
pub fn jacobi_svd(mut columns: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = columns.len();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for (a, b) in columns[p].iter().zip(&columns[q]) {
                    alpha += a * a;
                    beta += b * b;
                    gamma += a * b;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut columns, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = columns
        .iter()
        .enumerate()
        .map(|(j, col)| (col.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let sigma = order.iter().map(|(s, _)| *s).collect();
    let vectors = order.iter().map(|(_, j)| v[*j].clone()).collect();
    (sigma, vectors)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (a, b) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let pivot = (0..v.len()).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
    if v.get(pivot).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Two unit-length principal directions.
    pub components: [Vec<f64>; 2],
    /// Sample variances along each component.
    pub explained_variance: [f64; 2],
    pub explained_ratio: [f64; 2],
    pub points: Vec<[f64; 2]>,
}

pub fn pca_2d(data: &Tensor) -> Result<PcaProjection> {
    let [n, d] = *data.dims() else {
        return Err(Error::shape(format!("PCA expects [N, d], got {:?}", data.dims())));
    };
    if n < 3 {
        return Err(Error::param(format!("PCA needs at least 3 samples, got {n}")));
    }
    if d < 2 {
        return Err(Error::param("PCA to two components needs at least 2 features"));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data.row(i)[j] as f64).sum::<f64>() / n as f64)
        .collect();
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..n).map(|i| data.row(i)[j] as f64 - mean[j]).collect())
        .collect();
    let centered = columns.clone();
    let (sigma, mut vectors) = jacobi_svd(columns);
    let denom = (n - 1) as f64;
    let total: f64 = sigma.iter().map(|s| s * s / denom).sum();
    vectors.truncate(2);
    vectors.iter_mut().for_each(|v| fix_sign(v));
    let var = [sigma[0] * sigma[0] / denom, sigma[1] * sigma[1] / denom];
    let ratio = if total > 0.0 {
        [var[0] / total, var[1] / total]
    } else {
        [0.0, 0.0]
    };
    let points = (0..n)
        .map(|i| {
            let proj = |v: &[f64]| (0..d).map(|j| centered[j][i] * v[j]).sum::<f64>();
            [proj(&vectors[0]), proj(&vectors[1])]
        })
        .collect();
    let [c0, c1]: [Vec<f64>; 2] = vectors.try_into().expect("two components");
    Ok(PcaProjection {
        mean,
        components: [c0, c1],
        explained_variance: var,
        explained_ratio: ratio,
        points,
    })
}

/// Per-point labels for the scatter exports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointLabel {
    pub subject: String,
    pub token_id: usize,
}

impl PcaProjection {
    pub fn write_csv(&self, path: impl AsRef<Path>, labels: &[PointLabel]) -> Result<()> {
        if labels.len() != self.points.len() {
            return Err(Error::shape(format!(
                "{} labels for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        let mut out = String::from("subject,token_id,pc1,pc2\n");
        for (p, l) in self.points.iter().zip(labels) {
            writeln!(out, "{},{},{:.9},{:.9}", l.subject, l.token_id, p[0], p[1]).unwrap();
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Scatter plot with one hue per token.
    pub fn write_svg(&self, path: impl AsRef<Path>, labels: &[PointLabel], num_tokens: usize) -> Result<()> {
        if labels.len() != self.points.len() {
            return Err(Error::shape(format!(
                "{} labels for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        const SIZE: f64 = 480.0;
        const MARGIN: f64 = 30.0;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &self.points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let scale = |v: f64, a: usize| {
            let span = if hi[a] > lo[a] { hi[a] - lo[a] } else { 1.0 };
            MARGIN + (v - lo[a]) / span * (SIZE - 2.0 * MARGIN)
        };
        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            out,
            r#"<text x="{MARGIN}" y="18" font-family="sans-serif" font-size="12">PC1 {:.1}% / PC2 {:.1}%</text>"#,
            100.0 * self.explained_ratio[0],
            100.0 * self.explained_ratio[1]
        )
        .unwrap();
        for (p, l) in self.points.iter().zip(labels) {
            let hue = 360.0 * l.token_id as f64 / num_tokens.max(1) as f64;
            writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="hsl({hue:.0},70%,45%)" fill-opacity="0.7"/>"#,
                scale(p[0], 0),
                SIZE - scale(p[1], 1)
            )
            .unwrap();
        }
        out.push_str("</svg>\n");
        fs::write(path, out)?;
        Ok(())
    }
}
