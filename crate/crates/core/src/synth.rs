//! Seeded synthetic data generators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix_from<R: Rng>(rng: &mut R, n: usize, d: usize) -> DMatrix<f64> {
    // fill row-major so the draw order matches the sample order
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

pub fn gaussian_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    gaussian_matrix_from(&mut rng(seed), n, d)
}

pub fn gaussian_vector(d: usize, seed: u64) -> DVector<f64> {
    let mut r = rng(seed);
    DVector::from_iterator(d, (0..d).map(|_| r.sample::<f64, _>(StandardNormal)))
}

/// Random `d x k` matrix with orthonormal columns (QR of a Gaussian draw).
pub fn random_orthonormal<R: Rng>(rng: &mut R, d: usize, k: usize) -> DMatrix<f64> {
    assert!(k <= d, "cannot draw {k} orthonormal columns in dimension {d}");
    let g = gaussian_matrix_from(rng, d, k);
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q.columns(0, k).into_owned();
    // sign-fix so the draw is unique given the Gaussian sample
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Zero-mean Gaussian samples whose covariance has the given eigenvalues along
/// a random orthonormal basis.
pub fn anisotropic_gaussian(n: usize, variances: &[f64], seed: u64) -> DMatrix<f64> {
    let d = variances.len();
    let mut r = rng(seed);
    let basis = random_orthonormal(&mut r, d, d);
    let mut z = gaussian_matrix_from(&mut r, n, d);
    for (j, var) in variances.iter().enumerate() {
        z.column_mut(j).scale_mut(var.sqrt());
    }
    z * basis.transpose()
}

/// Variances decaying as `1/i`, `i = 1..=d`.
pub fn harmonic_spectrum(d: usize) -> Vec<f64> {
    (1..=d).map(|i| 1.0 / i as f64).collect()
}

/// Two-cluster planar toy set: a wide Gaussian along the first axis and two
/// tight clusters at `+-0.3` along the second.
pub fn two_cluster_toy(n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let mut m = DMatrix::zeros(n, 2);
    for i in 0..n {
        let side = if i < n / 2 { 1.0 } else { -1.0 };
        let a: f64 = r.sample(StandardNormal);
        let b: f64 = r.sample(StandardNormal);
        m[(i, 0)] = a;
        m[(i, 1)] = 0.3 * side + 0.03 * b;
    }
    m
}

/// Labeled Gaussian clusters: `classes` random centers with unit spread,
/// samples assigned round-robin.
pub fn labeled_clusters(n: usize, d: usize, classes: usize, separation: f64, seed: u64) -> (DMatrix<f64>, Vec<i64>) {
    let mut r = rng(seed);
    let centers = gaussian_matrix_from(&mut r, classes, d) * separation;
    let noise = gaussian_matrix_from(&mut r, n, d);
    let mut x = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c as i64);
        for j in 0..d {
            x[(i, j)] = centers[(c, j)] + noise[(i, j)];
        }
    }
    (x, labels)
}
