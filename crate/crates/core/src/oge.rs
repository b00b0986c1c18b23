//! Orthogonal encoder: columns are pairwise orthogonal but free in norm, with a
//! ridge penalty `mu * sum ||v_i||^2`. Each column has a closed form once the
//! multipliers of the orthogonality constraints are known.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::dual::{solve_phi, ColumnSystem};
use crate::error::{Result, ScqError};
use crate::linalg::{gram_eigendecomposition, EigenSystem, FeatureMatrix, ProjectionKind, ProjectionMatrix};
use crate::synth;
use crate::train::{self, alternate, init_v, random_orthogonal_unit, ColumnSweep, LossTrace, TrainConfig};

const SUBSTITUTE_SEED: u64 = 0x009e_5eed;

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(ScqError::InvalidConfig(format!("mu must be positive, got {mu}")))
    }
}

/// The constraint system `A Phi = c` for the orthogonal encoder, grown one
/// row and column per accepted column. Works in eigen-coordinates, where
/// `Z = (X'X + n mu I)^-1` is diagonal.
#[derive(Debug, Clone)]
pub struct IncrementalSystem {
    n: f64,
    zinv: DVector<f64>,
    cols: Vec<DVector<f64>>,
    z_cols: Vec<DVector<f64>>,
    a: DMatrix<f64>,
}

impl IncrementalSystem {
    pub fn new(es: &EigenSystem, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        let n = es.n() as f64;
        Ok(Self {
            n,
            zinv: es.inverse_spectrum(mu)?,
            cols: Vec::new(),
            z_cols: Vec::new(),
            a: DMatrix::zeros(0, 0),
        })
    }

    /// Number of columns absorbed so far.
    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    /// Current `A = (n/2) [v_i' Z v_j]`.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Appends a column given in eigen-coordinates; only the new row and
    /// column of `A` are computed.
    pub(crate) fn push_eigen(&mut self, v: DVector<f64>) {
        let zv = v.component_mul(&self.zinv);
        let m = self.cols.len();
        let half_n = 0.5 * self.n;
        let mut a = self.a.clone().resize(m + 1, m + 1, 0.0);
        for (j, c) in self.cols.iter().enumerate() {
            let e = half_n * c.dot(&zv);
            a[(m, j)] = e;
            a[(j, m)] = e;
        }
        a[(m, m)] = half_n * v.dot(&zv);
        self.a = a;
        self.cols.push(v);
        self.z_cols.push(zv);
    }

    pub fn push(&mut self, es: &EigenSystem, v: &DVector<f64>) {
        self.push_eigen(es.to_eigenbasis(v));
    }

    /// `A` recomputed from all stored columns.
    pub fn rebuild(&self) -> DMatrix<f64> {
        let m = self.cols.len();
        let half_n = 0.5 * self.n;
        DMatrix::from_fn(m, m, |i, j| half_n * self.cols[i].dot(&self.z_cols[j]))
    }

    /// Constraint system for the next column, target in eigen-coordinates.
    pub(crate) fn system_for(&self, target: &DVector<f64>) -> ColumnSystem {
        let zt = target.component_mul(&self.zinv);
        let c = DVector::from_iterator(self.cols.len(), self.cols.iter().map(|v| v.dot(&zt)));
        ColumnSystem { a: self.a.clone(), c }
    }

    /// Next column in eigen-coordinates, with its multipliers.
    pub(crate) fn solve_eigen(&self, target: &DVector<f64>, column: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let phi = solve_phi(&self.system_for(target));
        let mut t = target.clone();
        let half_n = 0.5 * self.n;
        for (v, f) in self.cols.iter().zip(phi.iter()) {
            t.axpy(-half_n * f, v, 1.0);
        }
        let v = t.component_mul(&self.zinv);
        if v.iter().all(|x| *x == 0.0) || v.norm() <= f64::EPSILON * target.norm() {
            return Err(ScqError::DegenerateColumn { column });
        }
        Ok((v, phi))
    }
}

/// `v1 = (X'X + n mu I)^-1 X'b1`.
pub fn solve_v1_oge(es: &EigenSystem, xt_b1: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    check_mu(mu)?;
    if xt_b1.iter().all(|x| *x == 0.0) {
        return Err(ScqError::DegenerateColumn { column: 1 });
    }
    es.apply_regularized_inverse(mu, xt_b1)
}

/// Column `k` orthogonal to `prev_cols`. The cache is extended with any of
/// `prev_cols` it has not seen yet; earlier entries must match.
pub fn solve_vk_oge(
    es: &EigenSystem,
    xt_bk: &DVector<f64>,
    prev_cols: &[DVector<f64>],
    mu: f64,
    cache: &mut IncrementalSystem,
) -> Result<DVector<f64>> {
    check_mu(mu)?;
    if cache.len() > prev_cols.len() {
        return Err(ScqError::InvalidInput(format!(
            "cache holds {} columns but only {} previous columns were given",
            cache.len(),
            prev_cols.len()
        )));
    }
    for v in &prev_cols[cache.len()..] {
        cache.push(es, v);
    }
    let (v, _) = cache.solve_eigen(&es.to_eigenbasis(xt_bk), prev_cols.len() + 1)?;
    Ok(es.from_eigenbasis(&v))
}

struct OrthogonalSweep<'a> {
    es: &'a EigenSystem,
    mu: f64,
    rng: ChaCha8Rng,
    fallbacks: usize,
}

impl OrthogonalSweep<'_> {
    fn substitute(&mut self, dim: usize, prev: &[DVector<f64>]) -> DVector<f64> {
        self.fallbacks += 1;
        log::warn!("column {}: degenerate target; substituting a random orthogonal direction", prev.len() + 1);
        let units: Vec<DVector<f64>> = prev.iter().map(|p| p.normalize()).collect();
        let scale = if prev.is_empty() {
            1.0
        } else {
            prev.iter().map(|p| p.norm()).sum::<f64>() / prev.len() as f64
        };
        random_orthogonal_unit(&mut self.rng, dim, &units) * scale
    }
}

impl ColumnSweep for OrthogonalSweep<'_> {
    fn sweep(&mut self, xt_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let es = self.es;
        let targets = es.eigenvectors().tr_mul(xt_b);
        let mut cache = IncrementalSystem::new(es, self.mu)?;
        for k in 0..targets.ncols() {
            let target = targets.column(k).into_owned();
            let v = match cache.solve_eigen(&target, k + 1) {
                Ok((v, _)) => v,
                Err(ScqError::DegenerateColumn { .. }) => self.substitute(target.len(), &cache.cols),
                Err(e) => return Err(e),
            };
            cache.push_eigen(v);
        }
        let mut coords = DMatrix::zeros(es.dim(), cache.len());
        for (j, c) in cache.cols.iter().enumerate() {
            coords.set_column(j, c);
        }
        Ok(es.eigenvectors() * coords)
    }

    fn objective(&self, b: &DMatrix<f64>, u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
        train::loss_from_projection(b, u) + self.mu * v.norm_squared()
    }

    fn fallbacks(&self) -> usize {
        self.fallbacks
    }
}

/// Fits the orthogonal encoder on centered, scaled features. The trace holds
/// the penalized objective.
pub fn train_oge(x: &FeatureMatrix, cfg: &TrainConfig) -> Result<(ProjectionMatrix, LossTrace)> {
    cfg.validate(x.d())?;
    check_mu(cfg.mu)?;
    let es = gram_eigendecomposition(x)?;
    train_oge_with(x, &es, cfg)
}

/// As [`train_oge`], reusing a precomputed eigensystem of `X'X`.
pub fn train_oge_with(x: &FeatureMatrix, es: &EigenSystem, cfg: &TrainConfig) -> Result<(ProjectionMatrix, LossTrace)> {
    cfg.validate(x.d())?;
    check_mu(cfg.mu)?;
    if es.dim() != x.d() || es.n() != x.n() {
        return Err(ScqError::InvalidInput("eigensystem does not match the feature matrix".into()));
    }
    let init = init_v(x.d(), cfg.bits, cfg.seed)?.into_data();
    let mut sweeper = OrthogonalSweep {
        es,
        mu: cfg.mu,
        rng: synth::rng(cfg.seed ^ SUBSTITUTE_SEED),
        fallbacks: 0,
    };
    let (v, trace) = alternate(x, init, cfg, &mut sweeper, 1)?;
    log::debug!(
        "orthogonal encoder: {} iterations, final objective {:.6e}",
        trace.iterations(),
        trace.last()
    );
    let pm = ProjectionMatrix::new(v, ProjectionKind::Orthogonal)
        .map_err(|e| ScqError::NumericalFailure(format!("trained projection lost orthogonality: {e}")))?;
    Ok((pm, trace))
}
