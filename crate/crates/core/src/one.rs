//! Orthonormal encoder: learns a `d x L` matrix with `V'V = I` that jointly
//! compresses and quantizes, one column at a time under the unit-norm and
//! pairwise-orthogonality constraints.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::dual::{self, Spectrum};
use crate::error::{Result, ScqError};
use crate::itq::procrustes_rotation;
use crate::linalg::{gram_eigendecomposition, EigenSystem, FeatureMatrix, ProjectionKind, ProjectionMatrix};
use crate::synth;
use crate::train::{self, alternate, init_v, random_orthogonal_unit, ColumnSweep, LossTrace, TrainConfig};

/// Seed offset for the generator used to replace degenerate columns.
const SUBSTITUTE_SEED: u64 = 0x5_eed0_fc01;

struct OrthonormalSweep<'a> {
    es: &'a EigenSystem,
    cfg: &'a TrainConfig,
    rng: ChaCha8Rng,
    fallbacks: usize,
}

impl OrthonormalSweep<'_> {
    fn solve_column(&mut self, spec: &Spectrum<'_>, target: &DVector<f64>, prev: &[DVector<f64>]) -> Result<DVector<f64>> {
        let k = prev.len() + 1;
        let cfg = self.cfg;
        let attempt = if prev.is_empty() {
            dual::column_one_in_eigenbasis(spec, target, cfg.eps_b, k).map(|(v, _)| v)
        } else {
            match dual::column_k_in_eigenbasis(spec, target, prev, cfg.eps_b, cfg.eps_u, cfg.max_inner) {
                Ok((v, _)) => Ok(v),
                Err(ScqError::ConvergenceFailure { norm_error, last, .. }) if norm_error < 10.0 * cfg.eps_u => Ok(last),
                Err(ScqError::ConvergenceFailure { norm_error, .. }) => {
                    log::debug!("column {k}: alternation stalled (|v'v-1| = {norm_error:e}); solving on the complement");
                    self.fallbacks += 1;
                    dual::column_k_restricted_in_eigenbasis(spec, target, prev, cfg.eps_b)
                }
                Err(e) => Err(e),
            }
        };
        let mut v = match attempt {
            Ok(v) => v,
            Err(ScqError::DegenerateColumn { .. }) => {
                log::warn!("column {k}: X'b is zero; substituting a random orthogonal direction");
                self.fallbacks += 1;
                return Ok(random_orthogonal_unit(&mut self.rng, target.len(), prev));
            }
            Err(e) => return Err(e),
        };
        // project onto the feasible set: exact orthogonality, unit norm
        train::orthogonalize(&mut v, prev);
        let norm = v.norm();
        if !(norm > 1e-8) || !norm.is_finite() {
            self.fallbacks += 1;
            return Ok(random_orthogonal_unit(&mut self.rng, target.len(), prev));
        }
        Ok(v / norm)
    }
}

impl ColumnSweep for OrthonormalSweep<'_> {
    fn sweep(&mut self, xt_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let es = self.es;
        let spec = Spectrum::of(es);
        let targets = es.eigenvectors().tr_mul(xt_b);
        let mut prev: Vec<DVector<f64>> = Vec::with_capacity(targets.ncols());
        for k in 0..targets.ncols() {
            let target = targets.column(k).into_owned();
            let v = self.solve_column(&spec, &target, &prev)?;
            prev.push(v);
        }
        let mut coords = DMatrix::zeros(es.dim(), prev.len());
        for (j, p) in prev.iter().enumerate() {
            coords.set_column(j, p);
        }
        Ok(es.eigenvectors() * coords)
    }

    fn objective(&self, b: &DMatrix<f64>, u: &DMatrix<f64>, _v: &DMatrix<f64>) -> f64 {
        train::loss_from_projection(b, u)
    }

    fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Best rotation of `v` within its own span for the current codes.
    fn rescue(&mut self, x: &FeatureMatrix, b: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
        let r = procrustes_rotation(b, &x.project(v))?;
        Ok(Some(v * r))
    }
}

/// Fits the orthonormal encoder on centered, scaled features.
pub fn train_one(x: &FeatureMatrix, cfg: &TrainConfig) -> Result<(ProjectionMatrix, LossTrace)> {
    cfg.validate(x.d())?;
    let es = gram_eigendecomposition(x)?;
    train_one_with(x, &es, cfg)
}

/// As [`train_one`], reusing a precomputed eigensystem of `X'X`.
pub fn train_one_with(x: &FeatureMatrix, es: &EigenSystem, cfg: &TrainConfig) -> Result<(ProjectionMatrix, LossTrace)> {
    cfg.validate(x.d())?;
    if es.dim() != x.d() || es.n() != x.n() {
        return Err(ScqError::InvalidInput("eigensystem does not match the feature matrix".into()));
    }
    let init = init_v(x.d(), cfg.bits, cfg.seed)?.into_data();
    let mut sweeper = OrthonormalSweep {
        es,
        cfg,
        rng: synth::rng(cfg.seed ^ SUBSTITUTE_SEED),
        fallbacks: 0,
    };
    let (v, trace) = alternate(x, init, cfg, &mut sweeper, 1)?;
    log::debug!(
        "orthonormal encoder: {} iterations, final loss {:.6e}, {} column fallbacks",
        trace.iterations(),
        trace.last(),
        trace.column_fallbacks
    );
    let pm = ProjectionMatrix::new(v, ProjectionKind::Orthonormal)
        .map_err(|e| ScqError::NumericalFailure(format!("trained projection lost orthonormality: {e}")))?;
    Ok((pm, trace))
}
