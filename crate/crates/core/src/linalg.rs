//! Dense linear-algebra substrate: centering, the Gram eigensystem, PCA and
//! the regularized inverse `(X'X + n*nu*I)^-1` applied through the eigenbasis.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, ScqError};

/// Relative threshold below which Gram eigenvalues are clamped to zero.
pub const EIGEN_CLAMP_REL: f64 = 1e-8;

/// Tolerance used when validating projection matrices.
pub const PROJECTION_TOL: f64 = 1e-6;

/// An `n x d` sample matrix (one row per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    centered: bool,
    applied_scale: f64,
}

impl FeatureMatrix {
    /// Wraps raw data without centering it.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        validate_samples(&data)?;
        Ok(Self {
            data,
            centered: false,
            applied_scale: 1.0,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn applied_scale(&self) -> f64 {
        self.applied_scale
    }

    /// Returns `s * X`, accumulating `s` into the applied scale.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(ScqError::InvalidConfig(format!("scale must be positive and finite, got {s}")));
        }
        Ok(Self {
            data: &self.data * s,
            centered: self.centered,
            applied_scale: self.applied_scale * s,
        })
    }

    /// Right-multiplies by a `d x k` matrix, giving the `n x k` projection.
    pub fn project(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.data * v
    }

    /// `X' y` for an `n`-vector or `n x k` block.
    pub fn transpose_mul(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.data.tr_mul(y)
    }

    /// Largest column-mean magnitude relative to the centering tolerance.
    /// Returns true when every column mean is within `1e-9 * (abs-max + 1)`.
    pub fn satisfies_centering(&self) -> bool {
        let n = self.n() as f64;
        self.data.column_iter().all(|col| {
            let mean = col.sum() / n;
            mean.abs() <= 1e-9 * (col.amax() + 1.0)
        })
    }
}

fn validate_samples(data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(ScqError::InvalidData(format!(
            "matrix must be non-empty, got {}x{}",
            data.nrows(),
            data.ncols()
        )));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        // column-major storage
        let (r, c) = (pos % data.nrows(), pos / data.nrows());
        return Err(ScqError::InvalidData(format!("non-finite entry at row {r}, column {c}")));
    }
    Ok(())
}

/// Subtracts the column means. Returns the centered matrix and the mean.
pub fn zero_center(raw: &DMatrix<f64>) -> Result<(FeatureMatrix, DVector<f64>)> {
    validate_samples(raw)?;
    let n = raw.nrows() as f64;
    let mean = DVector::from_iterator(raw.ncols(), raw.column_iter().map(|c| c.sum() / n));
    let mut data = raw.clone();
    for (mut col, m) in data.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    Ok((
        FeatureMatrix {
            data,
            centered: true,
            applied_scale: 1.0,
        },
        mean,
    ))
}

/// Eigen-decomposition of the Gram matrix `X'X` with eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    n: usize,
}

impl EigenSystem {
    /// Decomposes a symmetric `d x d` Gram matrix built from `n` samples.
    pub fn from_gram(gram: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = gram.nrows();
        if d == 0 || gram.ncols() != d {
            return Err(ScqError::InvalidInput(format!(
                "Gram matrix must be square and non-empty, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if n == 0 {
            return Err(ScqError::InvalidInput("sample count must be positive".into()));
        }
        let eig = SymmetricEigen::try_new(gram, f64::EPSILON, 2000 * d.max(8))
            .ok_or_else(|| ScqError::NumericalFailure("symmetric eigendecomposition did not converge".into()))?;

        let mut order: Vec<usize> = (0..d).collect();
        // stable: ties keep the decomposition's order
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let floor = EIGEN_CLAMP_REL * max;
        let eigenvalues = DVector::from_iterator(
            d,
            order.iter().map(|&j| {
                let l = eig.eigenvalues[j];
                if l < floor {
                    0.0
                } else {
                    l
                }
            }),
        );
        let mut eigenvectors = DMatrix::zeros(d, d);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) || eigenvectors.iter().any(|v| !v.is_finite()) {
            return Err(ScqError::NumericalFailure("eigendecomposition produced non-finite values".into()));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
            n,
        })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// Open lower bound `-lambda_min / n` for the unit-norm multiplier.
    pub fn nu_lower_bound(&self) -> f64 {
        -self.min_eigenvalue() / self.n as f64
    }

    /// Eigenvalues in descending order.
    pub fn descending_eigenvalues(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.eigenvalues.iter().rev().cloned())
    }

    /// Coordinates of `y` in the eigenbasis, `U' y`.
    pub fn to_eigenbasis(&self, y: &DVector<f64>) -> DVector<f64> {
        self.eigenvectors.tr_mul(y)
    }

    /// Inverse of [`Self::to_eigenbasis`], `U w`.
    pub fn from_eigenbasis(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.eigenvectors * w
    }

    /// Diagonal of `(Lambda + n*nu*I)^-1`, failing when any entry would be singular.
    pub fn inverse_spectrum(&self, nu: f64) -> Result<DVector<f64>> {
        let shift = self.n as f64 * nu;
        let mut out = DVector::zeros(self.dim());
        for (o, &l) in out.iter_mut().zip(self.eigenvalues.iter()) {
            let denominator = l + shift;
            if !(denominator > 0.0) {
                return Err(ScqError::SingularRegularization { nu, denominator });
            }
            *o = 1.0 / denominator;
        }
        Ok(out)
    }

    /// `(X'X + n*nu*I)^-1 y` computed as `U diag(1/(lambda_j + n*nu)) U' y`.
    pub fn apply_regularized_inverse(&self, nu: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        let inv = self.inverse_spectrum(nu)?;
        let w = self.to_eigenbasis(y).component_mul(&inv);
        Ok(self.from_eigenbasis(&w))
    }

    /// Rebuilds `U diag(lambda) U'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues);
        scaled * self.eigenvectors.transpose()
    }
}

/// Eigen-decomposition of `X'X` for a (centered) feature matrix.
pub fn gram_eigendecomposition(x: &FeatureMatrix) -> Result<EigenSystem> {
    let gram = x.data.tr_mul(&x.data);
    EigenSystem::from_gram(symmetrize(gram), x.n())
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Leading principal axes of `X'X`.
#[derive(Debug, Clone)]
pub struct Pca {
    /// `d x k`, columns ordered by descending eigenvalue.
    pub projection: DMatrix<f64>,
    /// Gram eigenvalues of the kept axes, descending.
    pub eigvals_desc: DVector<f64>,
}

pub fn pca_fit(x: &FeatureMatrix, target_dim: usize) -> Result<Pca> {
    if target_dim == 0 || target_dim > x.d() {
        return Err(ScqError::InvalidConfig(format!(
            "PCA target dimension {target_dim} outside 1..={}",
            x.d()
        )));
    }
    let es = gram_eigendecomposition(x)?;
    Ok(pca_from_eigensystem(&es, target_dim))
}

pub(crate) fn pca_from_eigensystem(es: &EigenSystem, target_dim: usize) -> Pca {
    let d = es.dim();
    let mut projection = DMatrix::zeros(d, target_dim);
    for k in 0..target_dim {
        projection.set_column(k, &es.eigenvectors.column(d - 1 - k));
    }
    let eigvals_desc = DVector::from_iterator(target_dim, (0..target_dim).map(|k| es.eigenvalues[d - 1 - k]));
    Pca {
        projection,
        eigvals_desc,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    /// `V'V = I`
    Orthonormal,
    /// `V'V` diagonal with positive entries
    Orthogonal,
}

/// A `d x L` projection with a declared column structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    data: DMatrix<f64>,
    kind: ProjectionKind,
}

impl ProjectionMatrix {
    /// Validates the declared kind at [`PROJECTION_TOL`].
    pub fn new(data: DMatrix<f64>, kind: ProjectionKind) -> Result<Self> {
        let pm = Self { data, kind };
        pm.validate(PROJECTION_TOL).map_err(ScqError::InvalidData)?;
        Ok(pm)
    }

    pub(crate) fn new_unchecked(data: DMatrix<f64>, kind: ProjectionKind) -> Self {
        Self { data, kind }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.data.nrows()
    }

    pub fn bits(&self) -> usize {
        self.data.ncols()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.data.tr_mul(&self.data)
    }

    /// `max |V'V - I|` for orthonormal, `max |offdiag(V'V)|` for orthogonal.
    pub fn constraint_error(&self) -> f64 {
        let g = self.gram();
        let mut worst = 0.0_f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j {
                    match self.kind {
                        ProjectionKind::Orthonormal => 1.0,
                        ProjectionKind::Orthogonal => continue,
                    }
                } else {
                    0.0
                };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    pub fn validate(&self, tol: f64) -> std::result::Result<(), String> {
        if self.data.ncols() == 0 || self.data.nrows() == 0 {
            return Err("projection matrix is empty".into());
        }
        if self.data.ncols() > self.data.nrows() {
            return Err(format!(
                "projection has more columns ({}) than rows ({})",
                self.data.ncols(),
                self.data.nrows()
            ));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err("projection contains non-finite entries".into());
        }
        if self.kind == ProjectionKind::Orthogonal {
            if let Some(k) = self.data.column_iter().position(|c| c.norm_squared() <= 0.0) {
                return Err(format!("column {k} has zero norm"));
            }
        }
        let err = self.constraint_error();
        if err > tol {
            return Err(format!("{:?} constraint violated: error {err:e} > {tol:e}", self.kind));
        }
        Ok(())
    }
}
