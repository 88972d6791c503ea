//! Superpoint affinity graphs, graph Fourier bases and frequency-domain
//! pattern grouping for the global branch.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::cluster::kmeans;
use crate::error::{Error, Result};

/// Dense symmetric affinity matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    weights: Array2<f64>,
}

impl AffinityGraph {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n {
            return Err(Error::Shape(format!("affinity must be square, got {:?}", weights.dim())));
        }
        for i in 0..n {
            if weights[[i, i]] != 0.0 {
                return Err(Error::Data(format!("affinity diagonal entry {i} is non-zero")));
            }
            for j in 0..i {
                let w = weights[[i, j]];
                if !w.is_finite() || w < 0.0 || w != weights[[j, i]] {
                    return Err(Error::Data(format!("affinity entry ({i},{j}) is invalid or asymmetric")));
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }
}

/// `a_ij = exp(-|f_i - f_j|^2)` over the given rows.
pub fn build_affinity(f: ArrayView2<'_, f64>) -> Result<AffinityGraph> {
    let s = f.nrows();
    if s < 2 {
        return Err(Error::Config(format!("affinity graph needs at least 2 nodes, got {s}")));
    }
    let mut w = Array2::<f64>::zeros((s, s));
    for i in 0..s {
        for j in 0..i {
            let d2: f64 = f.row(i).iter().zip(f.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            let a = (-d2).exp();
            w[[i, j]] = a;
            w[[j, i]] = a;
        }
    }
    Ok(AffinityGraph { weights: w })
}

/// `L = D^{-1/2} (D - A) D^{-1/2}`.
pub fn normalized_laplacian(g: &AffinityGraph) -> Result<Array2<f64>> {
    let n = g.n();
    let degree = g.weights.sum_axis(Axis(1));
    if let Some(i) = degree.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::DegenerateGraph(format!("node {i} has zero degree")));
    }
    let inv_sqrt: Array1<f64> = degree.mapv(|d| 1.0 / d.sqrt());
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let lap = if i == j { degree[i] } else { 0.0 } - g.weights[[i, j]];
        lap * (inv_sqrt[i] * inv_sqrt[j])
    }))
}

/// Eigenvectors (columns of `vectors`) with ascending eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub vectors: Array2<f64>,
    pub values: Array1<f64>,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.values.len()
    }
}

/// Symmetric eigendecomposition. Each eigenvector's largest-magnitude entry
/// is made positive (first such entry on ties).
pub fn eigendecompose(l: ArrayView2<'_, f64>) -> Result<SpectralBasis> {
    let n = l.nrows();
    if l.ncols() != n || n == 0 {
        return Err(Error::Shape(format!("eigendecomposition needs a square matrix, got {:?}", l.dim())));
    }
    let scale = l.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (l[[i, j]] - l[[j, i]]).abs() > 1e-12 * scale {
                return Err(Error::Shape(format!("matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    let m = DMatrix::from_fn(n, n, |i, j| l[[i, j]]);
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[[i, col]] = sign * v[i];
        }
    }
    Ok(SpectralBasis { vectors, values })
}

/// `F_freq = U^T F`; row `s` is the response of pattern `u_s`.
pub fn graph_fourier(basis: &SpectralBasis, f: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if f.nrows() != basis.n() {
        return Err(Error::Shape(format!("basis has {} nodes but features have {} rows", basis.n(), f.nrows())));
    }
    Ok(basis.vectors.t().dot(&f))
}

/// Refined basis `V` (n x S') and the cluster of every original pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPatterns {
    pub v: Array2<f64>,
    pub cluster_of_pattern: Vec<usize>,
}

/// Clusters frequency rows with k-means and averages each cluster's
/// eigenvectors into one refined pattern. With `normalize_rows`, frequency
/// rows are scaled to unit length before clustering (zero rows are kept).
pub fn group_patterns(
    basis: &SpectralBasis,
    f_freq: ArrayView2<'_, f64>,
    s_prime: usize,
    seed: u64,
    normalize_rows: bool,
) -> Result<RefinedPatterns> {
    let n = basis.n();
    if f_freq.nrows() != n {
        return Err(Error::Shape(format!("{} frequency rows for a basis of {n} patterns", f_freq.nrows())));
    }
    let mut rows = f_freq.to_owned();
    if normalize_rows {
        for mut r in rows.outer_iter_mut() {
            let norm = r.dot(&r).sqrt();
            if norm > 0.0 {
                r /= norm;
            }
        }
    }
    let km = kmeans(rows.view(), s_prime, seed, 100)?;
    let mut v = Array2::<f64>::zeros((n, s_prime));
    let mut counts = vec![0usize; s_prime];
    for (pattern, &c) in km.assignments.iter().enumerate() {
        let mut col = v.column_mut(c);
        col += &basis.vectors.column(pattern);
        counts[c] += 1;
    }
    for (mut col, &c) in v.columns_mut().into_iter().zip(&counts) {
        if c > 0 {
            col /= c as f64;
        }
    }
    Ok(RefinedPatterns { v, cluster_of_pattern: km.assignments })
}

/// Row `i` of `V`: superpoint `i`'s loadings over the refined patterns.
pub fn global_superpoint_features(p: &RefinedPatterns) -> Array2<f64> {
    p.v.clone()
}

/// Scales each row to unit length; zero rows are left untouched.
pub fn l2_normalize_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut r in out.outer_iter_mut() {
        let norm = r.dot(&r).sqrt();
        if norm > 0.0 {
            r /= norm;
        }
    }
    out
}

/// Everything one global-branch pass produces.
#[derive(Debug, Clone)]
pub struct SpectralPass {
    pub basis: SpectralBasis,
    pub patterns: RefinedPatterns,
}

/// Affinity over L2-normalized superpoint features, Laplacian,
/// eigendecomposition, projection and pattern grouping.
pub fn spectral_pass(
    superpoint_features: ArrayView2<'_, f64>,
    s_prime: usize,
    seed: u64,
    normalize_freq: bool,
) -> Result<SpectralPass> {
    let f = l2_normalize_rows(superpoint_features);
    let graph = build_affinity(f.view())?;
    let lap = normalized_laplacian(&graph)?;
    let basis = eigendecompose(lap.view())?;
    let freq = graph_fourier(&basis, f.view())?;
    let s_prime = s_prime.min(basis.n());
    let patterns = group_patterns(&basis, freq.view(), s_prime, seed, normalize_freq)?;
    Ok(SpectralPass { basis, patterns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(n: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, c), |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn affinity_values() {
        let d = std::f64::consts::LN_2.sqrt();
        let f = array![[0.0, 0.0], [0.0, 0.0], [d, 0.0]];
        let g = build_affinity(f.view()).unwrap();
        assert_eq!(g.weights()[[0, 1]], 1.0);
        assert!((g.weights()[[0, 2]] - 0.5).abs() < 1e-15);
        assert_eq!(g.weights()[[2, 2]], 0.0);
        assert!(matches!(build_affinity(array![[1.0]].view()), Err(Error::Config(_))));
    }

    #[test]
    fn identical_rows_give_unit_affinity() {
        let g = build_affinity(Array2::from_elem((3, 4), 0.3).view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.weights()[[i, j]], if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn two_node_laplacian_is_weight_free() {
        for a in [0.01, 0.5, 1.0] {
            let g = AffinityGraph::new(array![[0.0, a], [a, 0.0]]).unwrap();
            let l = normalized_laplacian(&g).unwrap();
            for (x, y) in l.iter().zip(array![[1.0, -1.0], [-1.0, 1.0]].iter()) {
                assert!((x - y).abs() < 1e-15);
            }
            let b = eigendecompose(l.view()).unwrap();
            assert!(b.values[0].abs() < 1e-10 && (b.values[1] - 2.0).abs() < 1e-10);
            let h = std::f64::consts::FRAC_1_SQRT_2;
            assert!((b.vectors[[0, 0]] - h).abs() < 1e-12 && (b.vectors[[1, 0]] - h).abs() < 1e-12);
            // largest-magnitude entry is positive; with a tie the first one wins
            assert!((b.vectors[[0, 1]] - h).abs() < 1e-12 && (b.vectors[[1, 1]] + h).abs() < 1e-12);
        }
    }

    #[test]
    fn complete_graph_spectrum() {
        let g = AffinityGraph::new(array![[0.0, 0.7, 0.7], [0.7, 0.0, 0.7], [0.7, 0.7, 0.0]]).unwrap();
        let b = eigendecompose(normalized_laplacian(&g).unwrap().view()).unwrap();
        for (got, want) in b.values.iter().zip([0.0, 1.5, 1.5]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn isolated_node_is_degenerate() {
        let g = AffinityGraph::new(array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(normalized_laplacian(&g), Err(Error::DegenerateGraph(_))));
    }

    #[test]
    fn laplacian_symmetric_and_psd_on_random_graphs() {
        for seed in 0..10 {
            let f = random_features(12, 4, seed);
            let l = normalized_laplacian(&build_affinity(f.view()).unwrap()).unwrap();
            for i in 0..12 {
                for j in 0..12 {
                    assert_eq!(l[[i, j]], l[[j, i]]);
                }
            }
            let b = eigendecompose(l.view()).unwrap();
            assert!(b.values.iter().all(|&v| (-1e-10..=2.0 + 1e-10).contains(&v)));
            assert!(b.values[0].abs() < 1e-8);
        }
    }

    #[test]
    fn identity_matrix_reconstructs() {
        let b = eigendecompose(Array2::<f64>::eye(3).view()).unwrap();
        let recon = b.vectors.dot(&Array2::from_diag(&b.values)).dot(&b.vectors.t());
        assert!((recon - Array2::<f64>::eye(3)).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn random_symmetric_reconstruction() {
        let a = random_features(6, 6, 11);
        let s = &a + &a.t();
        let b = eigendecompose(s.view()).unwrap();
        let recon = b.vectors.dot(&Array2::from_diag(&b.values)).dot(&b.vectors.t());
        let err = (&recon - &s).mapv(|v| v * v).sum().sqrt();
        assert!(err <= 1e-8 * s.mapv(|v| v * v).sum().sqrt());
        assert!(b.values.windows(2).into_iter().all(|w| w[0] <= w[1]));
    }

    #[test]
    fn asymmetric_input_rejected() {
        assert!(matches!(eigendecompose(array![[1.0, 2.0], [0.0, 1.0]].view()), Err(Error::Shape(_))));
    }

    #[test]
    fn fourier_identity_and_parseval() {
        let f = random_features(5, 3, 2);
        let id = SpectralBasis { vectors: Array2::eye(5), values: Array1::zeros(5) };
        assert_eq!(graph_fourier(&id, f.view()).unwrap(), f);

        let l = normalized_laplacian(&build_affinity(f.view()).unwrap()).unwrap();
        let b = eigendecompose(l.view()).unwrap();
        let freq = graph_fourier(&b, f.view()).unwrap();
        let back = b.vectors.dot(&freq);
        assert!((&back - &f).iter().all(|d| d.abs() < 1e-8));
        let n1 = f.mapv(|v| v * v).sum().sqrt();
        let n2 = freq.mapv(|v| v * v).sum().sqrt();
        assert!((n1 - n2).abs() < 1e-8);
        assert!(matches!(graph_fourier(&b, f.slice(ndarray::s![..4, ..]).view()), Err(Error::Shape(_))));
    }

    #[test]
    fn grouping_all_patterns_is_a_column_permutation() {
        let f = random_features(6, 3, 4);
        let l = normalized_laplacian(&build_affinity(f.view()).unwrap()).unwrap();
        let b = eigendecompose(l.view()).unwrap();
        let freq = graph_fourier(&b, f.view()).unwrap();
        let p = group_patterns(&b, freq.view(), 6, 0, false).unwrap();
        let mut seen = p.cluster_of_pattern.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        for (pattern, &c) in p.cluster_of_pattern.iter().enumerate() {
            assert_eq!(p.v.column(c), b.vectors.column(pattern));
        }
        let one = group_patterns(&b, freq.view(), 1, 0, false).unwrap();
        let mean = b.vectors.mean_axis(Axis(1)).unwrap();
        assert!((&one.v.column(0) - &mean).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn grouping_duplicated_rows() {
        // patterns {0,2} share a frequency row, as do {1,3}
        let b = SpectralBasis {
            vectors: array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
            values: Array1::zeros(4),
        };
        let freq = array![[1.0, 0.0], [0.0, 5.0], [1.0, 0.0], [0.0, 5.0]];
        let p = group_patterns(&b, freq.view(), 2, 3, false).unwrap();
        assert_eq!(p.cluster_of_pattern[0], p.cluster_of_pattern[2]);
        assert_eq!(p.cluster_of_pattern[1], p.cluster_of_pattern[3]);
        let c0 = p.cluster_of_pattern[0];
        let c1 = p.cluster_of_pattern[1];
        assert_eq!(p.v.column(c0).to_vec(), vec![0.5, 0.0, 0.5, 0.0]);
        assert_eq!(p.v.column(c1).to_vec(), vec![0.0, 0.5, 0.0, 0.5]);
        assert_eq!(global_superpoint_features(&p).dim(), (4, 2));
    }

    #[test]
    fn fiedler_vector_splits_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = Array2::from_shape_fn((20, 3), |(r, c)| {
            let centre = if r < 10 { 0.0 } else { 3.0 };
            centre * (c == 0) as u8 as f64 + 0.1 * (rng.random::<f64>() - 0.5)
        });
        let b = eigendecompose(normalized_laplacian(&build_affinity(f.view()).unwrap()).unwrap().view()).unwrap();
        let signs: Vec<bool> = b.vectors.column(1).iter().map(|&v| v > 0.0).collect();
        assert!(signs[..10].iter().all(|&s| s == signs[0]));
        assert!(signs[10..].iter().all(|&s| s != signs[0]));
    }
}
