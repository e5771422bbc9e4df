use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
/// Independent k-means++ restarts; the lowest-inertia run wins.
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// k × n_d.
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step of the winning run.
    pub inertia_trace: Vec<f64>,
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Number of pairwise-distinct rows.
pub fn distinct_rows(points: ArrayView2<f64>) -> usize {
    let mut reps: Vec<usize> = Vec::new();
    for i in 0..points.nrows() {
        if !reps.iter().any(|&r| points.row(r) == points.row(i)) {
            reps.push(i);
        }
    }
    reps.len()
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn inertia(points: ArrayView2<f64>, centroids: ArrayView2<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), centroids.row(l)))
        .sum()
}

fn check(points: ArrayView2<f64>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow("clustering input"));
    }
    let distinct = distinct_rows(points);
    if k > distinct {
        return Err(Error::DegenerateK { k, distinct });
    }
    Ok(())
}

/// Best of [`DEFAULT_RESTARTS`] seeded runs of [`kmeans_single`].
pub fn kmeans(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_restarts(points, k, seed, DEFAULT_RESTARTS)
}

pub fn kmeans_restarts(
    points: ArrayView2<f64>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeansResult> {
    check(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// One k-means++ initialization, Lloyd iterations, then Hartigan transfers.
pub fn kmeans_single(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    check(points, k)?;
    Ok(lloyd(points, k, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn plus_plus_init(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Guard against rounding leaving us on a zero-weight point.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centroids
}

fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut total = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let (best, d) = (0..centroids.nrows())
            .map(|c| (c, sq_dist(points.row(i), centroids.row(c))))
            .fold(
                (0, f64::INFINITY),
                |acc, x| if x.1 < acc.1 { x } else { acc },
            );
        if *label != best {
            *label = best;
            changed = true;
        }
        total += d;
    }
    (changed, total)
}

fn recompute_means(
    points: ArrayView2<f64>,
    centroids: &mut Array2<f64>,
    labels: &[usize],
) -> Vec<usize> {
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; centroids.nrows()];
    for (i, &l) in labels.iter().enumerate() {
        sums.row_mut(l).scaled_add(1.0, &points.row(i));
        counts[l] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            centroids.row_mut(c).assign(&(&sums.row(c) / n as f64));
        }
    }
    counts
}

/// Hartigan single-point transfers: moves a point to another cluster
/// whenever that strictly lowers the inertia, until no move helps. Escapes
/// Lloyd fixed points that are not local optima under transfers. Returns
/// whether anything moved.
fn hartigan_refine(
    points: ArrayView2<f64>,
    centroids: &mut Array2<f64>,
    labels: &mut [usize],
) -> bool {
    let mut counts = recompute_means(points, centroids, labels);
    let mut moved_any = false;
    for _ in 0..MAX_ITERATIONS {
        let mut moved = false;
        for i in 0..labels.len() {
            let a = labels[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let remove = na / (na - 1.0) * sq_dist(points.row(i), centroids.row(a));
            let best = (0..centroids.nrows())
                .filter(|&b| b != a)
                .map(|b| {
                    let nb = counts[b] as f64;
                    (
                        b,
                        nb / (nb + 1.0) * sq_dist(points.row(i), centroids.row(b)),
                    )
                })
                .fold(
                    (a, f64::INFINITY),
                    |acc, x| if x.1 < acc.1 { x } else { acc },
                );
            // Relative slack keeps rounding noise from cycling moves.
            if best.1 < remove * (1.0 - 1e-12) {
                labels[i] = best.0;
                counts = recompute_means(points, centroids, labels);
                moved = true;
            }
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    moved_any
}

fn lloyd(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let (n, d) = points.dim();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let (changed, total) = assign(points, &centroids, &mut labels);
        trace.push(total);
        iterations += 1;
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &points.row(i));
            counts[l] += 1;
        }
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                centroids
                    .row_mut(c)
                    .assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed onto the point farthest from its own centroid.
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .map(|i| (i, sq_dist(points.row(i), centroids.row(labels[i]))))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0;
                taken.push(far);
                centroids.row_mut(c).assign(&points.row(far));
            }
        }
    }
    if hartigan_refine(points, &mut centroids, &mut labels) {
        trace.push(inertia(points, centroids.view(), &labels));
    }
    let inertia = inertia(points, centroids.view(), &labels);
    KMeansResult {
        centroids,
        labels,
        inertia,
        iterations,
        inertia_trace: trace,
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn sorted_1d(c: &Array2<f64>) -> Vec<f64> {
        let mut v: Vec<f64> = c.column(0).to_vec();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn separated_duplicates() {
        let p = array![[0.0], [0.0], [10.0], [10.0]];
        let r = kmeans(p.view(), 2, 1).unwrap();
        assert_eq!(sorted_1d(&r.centroids), vec![0.0, 10.0]);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn two_pairs() {
        let p = array![[0.0], [1.0], [10.0], [11.0]];
        for seed in 0..20 {
            let r = kmeans_single(p.view(), 2, seed).unwrap();
            assert_eq!(sorted_1d(&r.centroids), vec![0.5, 10.5]);
        }
    }

    #[test]
    fn degenerate_k() {
        let p = array![[0.0], [1.0], [2.0], [2.0]];
        let err = kmeans(p.view(), 5, 0).unwrap_err();
        assert_eq!(err.code(), "degenerate_k");
        assert!(matches!(err, Error::DegenerateK { k: 5, distinct: 3 }));
    }

    #[test]
    fn same_seed_same_result() {
        let p = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        assert_eq!(
            kmeans(p.view(), 4, 9).unwrap(),
            kmeans(p.view(), 4, 9).unwrap()
        );
    }

    #[test]
    fn k_equals_distinct_points_is_exact() {
        let p = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let r = kmeans(p.view(), 3, 3).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #[test]
            fn inertia_never_increases(
                vals in proptest::collection::vec(-10.0f64..10.0, 20..60),
                k in 2usize..5,
                seed in 0u64..1000,
            ) {
                let n = vals.len() / 2;
                let p = Array2::from_shape_vec((n, 2), vals[..n * 2].to_vec()).unwrap();
                prop_assume!(distinct_rows(p.view()) >= k);
                let r = kmeans_single(p.view(), k, seed).unwrap();
                for w in r.inertia_trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-9);
                }
            }
        }
    }
}
