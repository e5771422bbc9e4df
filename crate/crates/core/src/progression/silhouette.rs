use ndarray::ArrayView2;

use super::kmeans::sq_dist;
use crate::error::{Error, Result};

/// Mean silhouette coefficient with Euclidean distance. Points in singleton
/// clusters contribute 0.
pub fn silhouette(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::UndefinedSilhouette);
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn two_pairs() {
        let p = array![[0.0], [1.0], [10.0], [11.0]];
        let s = silhouette(p.view(), &[0, 0, 1, 1]).unwrap();
        let expected = (9.5 / 10.5 + 8.5 / 9.5) / 2.0;
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.8997).abs() < 1e-3);
    }

    #[test]
    fn coincident_clusters_score_one() {
        let p = array![[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]];
        assert_eq!(silhouette(p.view(), &[0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn single_cluster_is_undefined() {
        let p = array![[0.0], [1.0], [2.0]];
        let err = silhouette(p.view(), &[0, 0, 0]).unwrap_err();
        assert_eq!(err.code(), "undefined_silhouette");
    }

    #[test]
    fn singletons_contribute_zero() {
        let p = array![[0.0], [1.0], [10.0]];
        let s = silhouette(p.view(), &[0, 0, 1]).unwrap();
        // Points 0 and 1: a = 1, b = 10 and 9.
        let expected = ((10.0 - 1.0) / 10.0 + (9.0 - 1.0) / 9.0) / 3.0;
        assert!((s - expected).abs() < 1e-12);
    }
}
