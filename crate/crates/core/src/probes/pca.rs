use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `dims × N`, orthonormal rows.
    pub components: Array2<f64>,
    /// Variance captured by each component, non-increasing.
    pub variances: Vec<f64>,
    /// `samples × dims`.
    pub projected: Array2<f64>,
}

/// Projects rows of `x` onto the top `dims` principal components.
pub fn pca_project(x: ArrayView2<f64>, dims: usize) -> Result<Pca> {
    let (m, n) = x.dim();
    if dims == 0 || dims > n {
        return Err(Error::Argument(format!("cannot take {dims} components of {n}-dimensional data")));
    }
    if m < dims.max(2) {
        return Err(Error::Data(format!("PCA with {dims} components needs ≥ {} samples, got {m}", dims.max(2))));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (m - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if !(top > 1e-12) {
        return Err(Error::Rank("data has no variance to project".into()));
    }
    let mut components = Array2::zeros((dims, n));
    let mut variances = Vec::with_capacity(dims);
    for (d, &k) in order.iter().take(dims).enumerate() {
        let v = eig.eigenvectors.column(k);
        // sign convention: largest-magnitude entry positive
        let pivot = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).expect("n ≥ 1");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            components[[d, j]] = sign * v[j];
        }
        variances.push(eig.eigenvalues[k].max(0.0));
    }
    let projected = centered.dot(&components.t());
    Ok(Pca {
        mean,
        components,
        variances,
        projected,
    })
}

/// Mean pairwise Euclidean distance between per-class centroids of `points`.
pub fn centroid_separation(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if points.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} points for {} labels", points.nrows(), labels.len())));
    }
    let mut groups: BTreeMap<usize, (Array1<f64>, usize)> = BTreeMap::new();
    for (row, &y) in points.rows().into_iter().zip(labels) {
        let e = groups.entry(y).or_insert_with(|| (Array1::zeros(points.ncols()), 0));
        e.0 += &row;
        e.1 += 1;
    }
    let centroids: Vec<Array1<f64>> = groups.into_values().map(|(s, c)| s / c as f64).collect();
    if centroids.len() < 2 {
        return Err(Error::Data("centroid separation needs ≥ 2 classes".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            total += (&centroids[i] - &centroids[j]).mapv(|v| v * v).sum().sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_dimensional_data_keeps_distances() {
        let x = array![[0.0, 0.0], [3.0, 1.0], [-1.0, 2.0], [4.0, -2.0], [0.5, 0.5]];
        let p = pca_project(x.view(), 2).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let d0 = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt();
                let d1 = (&p.projected.row(i) - &p.projected.row(j)).mapv(|v| v * v).sum().sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
        let gram = p.components.dot(&p.components.t());
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-8);
            }
        }
        assert!(p.variances[0] >= p.variances[1]);
    }

    #[test]
    fn constant_data_is_rank_error() {
        let x = Array2::from_elem((4, 3), 2.5);
        assert!(matches!(pca_project(x.view(), 2), Err(Error::Rank(_))));
    }

    #[test]
    fn centroid_separation_of_two_points() {
        let x = array![[0.0, 0.0], [3.0, 4.0]];
        assert_eq!(centroid_separation(x.view(), &[0, 1]).unwrap(), 5.0);
    }
}
