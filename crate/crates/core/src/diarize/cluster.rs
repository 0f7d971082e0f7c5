use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::cosine_score;
use crate::error::{Error, Result};

/// Pairwise cosine affinity with row-wise pruning.
///
/// Each row keeps its `ceil(keep * (N - 1))` largest off-diagonal entries
/// (plus anything tied with the smallest kept value); the rest become zero.
/// The result is symmetrised with an element-wise max and gets a unit
/// diagonal.
pub fn affinity(embeddings: &[DVector<f64>], keep: f64) -> Result<DMatrix<f64>> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::config("affinity pruning fraction must be in (0, 1]"));
    }
    let n = embeddings.len();
    let mut cos = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine_score(&embeddings[i], &embeddings[j])?;
            cos[(i, j)] = c;
            cos[(j, i)] = c;
        }
    }
    if n < 2 {
        return Ok(cos);
    }
    let kept = ((keep * (n - 1) as f64).ceil() as usize).clamp(1, n - 1);
    let mut pruned = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| cos[(i, j)]).collect();
        row.sort_by(|a, b| b.total_cmp(a));
        let cutoff = row[kept - 1];
        for j in (0..n).filter(|&j| j != i) {
            if cos[(i, j)] >= cutoff {
                pruned[(i, j)] = cos[(i, j)];
            }
        }
    }
    let mut out = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[(i, j)] = pruned[(i, j)].max(pruned[(j, i)]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    /// Known speaker count; `None` selects it from the eigengap.
    pub num_speakers: Option<usize>,
    pub max_speakers: usize,
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            num_speakers: None,
            max_speakers: 8,
            restarts: 10,
            max_iters: 300,
        }
    }
}

/// Eigenvalues ascending with matching eigenvector columns.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Unnormalised graph Laplacian `D - W`, with negative affinities treated as
/// absent edges.
pub fn laplacian(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { a[(i, j)].max(0.0) });
    let mut l = -&w;
    for i in 0..n {
        l[(i, i)] = w.row(i).sum();
    }
    l
}

/// Index `k` in `[1, max_k]` maximising `values[k] - values[k - 1]`.
pub fn eigengap(values: &[f64], max_k: usize) -> usize {
    let upper = max_k.min(values.len().saturating_sub(1));
    (1..=upper)
        .map(|k| (k, values[k] - values[k - 1]))
        .fold((1, f64::NEG_INFINITY), |best, (k, g)| if g > best.1 { (k, g) } else { best })
        .0
}

/// Spectral clustering of an affinity matrix.
///
/// Labels are numbered in order of first appearance.
pub fn spectral_cluster(a: &DMatrix<f64>, cfg: &ClusterConfig, seed: u64) -> Result<Vec<usize>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::input("affinity matrix must be square"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if cfg.max_speakers == 0 || cfg.restarts == 0 {
        return Err(Error::config("max_speakers and restarts must be positive"));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("affinity contains non-finite values"));
    }
    let isolated = (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] <= 0.0));
    if isolated {
        let k = n.min(cfg.max_speakers);
        return Ok((0..n).map(|i| i.min(k - 1)).collect());
    }
    let (values, vectors) = sorted_eigen(laplacian(a));
    let k = match cfg.num_speakers {
        Some(0) => return Err(Error::config("num_speakers must be positive")),
        Some(k) => k.min(n),
        None => eigengap(&values, cfg.max_speakers),
    };
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let points: Vec<DVector<f64>> = (0..n)
        .map(|i| DVector::from_fn(k, |c, _| vectors[(i, c)]))
        .collect();
    let labels = kmeans(&points, k, cfg.restarts, cfg.max_iters, seed);
    Ok(canonical_labels(&labels))
}

/// Renumbers labels by order of first occurrence.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_centers<R: Rng>(points: &[DVector<f64>], k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            d2.iter()
                .position(|&d| {
                    r -= d;
                    r < 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.gen_range(0..points.len())
        };
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn nearest(p: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, m)| (c, sq_dist(p, m)))
        .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b })
}

/// Lloyd's k-means with k-means++ seeding; the restart with the lowest
/// inertia wins.
pub fn kmeans(points: &[DVector<f64>], k: usize, restarts: usize, max_iters: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let mut centers = seed_centers(points, k, &mut rng);
        let mut labels = vec![usize::MAX; points.len()];
        for _ in 0..max_iters {
            let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
            if next == labels {
                break;
            }
            labels = next;
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&DVector<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
                if !members.is_empty() {
                    *center = members.iter().fold(DVector::zeros(center.len()), |a, p| a + *p) / members.len() as f64;
                }
            }
        }
        let inertia: f64 = points.iter().map(|p| nearest(p, &centers).1).sum();
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, labels));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    /// `per` unit-variance points around each of `k` centres placed on
    /// coordinate axes, every pair of centres `dist` apart.
    pub(crate) fn blobs(k: usize, per: usize, dim: usize, dist: f64, seed: u64) -> (Vec<DVector<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut randn = move || -> f64 { StandardNormal.sample(&mut rng) };
        let centers: Vec<DVector<f64>> = (0..k)
            .map(|c| DVector::from_fn(dim, |i, _| if i == c { dist / 2f64.sqrt() } else { 0.0 }))
            .collect();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, m) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(m + DVector::from_fn(dim, |_, _| randn()));
                truth.push(c);
            }
        }
        (pts, truth)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        canonical_labels(a) == canonical_labels(b)
    }

    #[test]
    fn single_item() {
        let a = affinity(&[DVector::from_column_slice(&[1.0, 2.0])], 0.3).unwrap();
        assert_eq!(a, DMatrix::identity(1, 1));
        assert_eq!(spectral_cluster(&a, &ClusterConfig::default(), 0).unwrap(), vec![0]);
        assert!(spectral_cluster(&DMatrix::zeros(0, 0), &ClusterConfig::default(), 0).unwrap().is_empty());
    }

    #[test]
    fn two_identical_one_orthogonal() {
        let e = [
            DVector::from_column_slice(&[1.0, 0.0]),
            DVector::from_column_slice(&[1.0, 0.0]),
            DVector::from_column_slice(&[0.0, 1.0]),
        ];
        let a = affinity(&e, 0.3).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(a, want);
    }

    #[test]
    fn affinity_shape_checks() {
        let (pts, _) = blobs(3, 20, 8, 2.0, 9);
        let a = affinity(&pts, 0.3).unwrap();
        for i in 0..a.nrows() {
            assert_eq!(a[(i, i)], 1.0);
            for j in 0..a.ncols() {
                assert_eq!(a[(i, j)], a[(j, i)]);
                assert!((-1.0..=1.0).contains(&a[(i, j)]));
            }
        }
    }

    #[test]
    fn identical_embeddings_form_one_cluster() {
        let e = vec![DVector::from_column_slice(&[0.3, -0.2, 0.9]); 12];
        let a = affinity(&e, 0.3).unwrap();
        assert_eq!(spectral_cluster(&a, &ClusterConfig::default(), 0).unwrap(), vec![0; 12]);
    }

    #[test]
    fn isolated_items_get_own_clusters_up_to_max() {
        let cfg = ClusterConfig {
            max_speakers: 3,
            ..Default::default()
        };
        let labels = spectral_cluster(&DMatrix::identity(5, 5), &cfg, 0).unwrap();
        assert_eq!(labels, vec![0, 1, 2, 2, 2]);
    }

    #[test]
    fn two_blobs_recovered_by_eigengap() {
        let (pts, truth) = blobs(2, 50, 16, 10.0, 1);
        let a = affinity(&pts, 0.3).unwrap();
        let labels = spectral_cluster(&a, &ClusterConfig::default(), 0).unwrap();
        assert!(same_partition(&labels, &truth));
    }

    #[test]
    fn known_count_recovers_planted_partitions() {
        for (k, seed) in [(2, 2), (3, 3), (4, 4)] {
            let (pts, truth) = blobs(k, 30, 16, 10.0, seed);
            let a = affinity(&pts, 0.3).unwrap();
            let cfg = ClusterConfig {
                num_speakers: Some(k),
                ..Default::default()
            };
            assert!(same_partition(&spectral_cluster(&a, &cfg, 7).unwrap(), &truth), "k = {k}");
            let auto = spectral_cluster(&a, &ClusterConfig::default(), 7).unwrap();
            assert!(same_partition(&auto, &truth), "eigengap k = {k}");
        }
    }

    #[test]
    fn eigengap_picks_largest_jump() {
        assert_eq!(eigengap(&[0.0, 0.0, 0.0, 5.0, 6.0], 4), 3);
        assert_eq!(eigengap(&[0.0, 4.0, 4.1], 8), 1);
        assert_eq!(eigengap(&[0.0], 8), 1);
    }

    #[test]
    fn kmeans_is_deterministic() {
        let (pts, _) = blobs(3, 10, 4, 1.0, 5);
        assert_eq!(kmeans(&pts, 3, 10, 100, 11), kmeans(&pts, 3, 10, 100, 11));
    }

    #[test]
    fn canonical_numbering() {
        assert_eq!(canonical_labels(&[5, 5, 2, 9, 2]), vec![0, 0, 1, 2, 1]);
    }
}
