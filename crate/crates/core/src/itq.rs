//! Iterative quantization baseline: PCA to `L` dimensions followed by
//! alternating sign codes and an `L x L` orthogonal Procrustes rotation.

use nalgebra::DMatrix;

use crate::codes::sign_codes;
use crate::error::{Result, ScqError};
use crate::linalg::{pca_fit, FeatureMatrix, ProjectionKind, ProjectionMatrix};
use crate::synth;
use crate::train::{loss_from_projection, LossTrace, StopReason};

pub const DEFAULT_ITQ_ITERS: usize = 50;

/// Orthogonal `R` minimizing `||B - PR||_F`: with `P'B = S W T'`, `R = S T'`.
pub fn procrustes_rotation(b: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.shape() != p.shape() {
        return Err(ScqError::InvalidInput(format!(
            "codes are {}x{} but projections are {}x{}",
            b.nrows(),
            b.ncols(),
            p.nrows(),
            p.ncols()
        )));
    }
    let m = p.tr_mul(b);
    if !m.iter().all(|x| x.is_finite()) {
        return Err(ScqError::NumericalFailure("non-finite cross-covariance in Procrustes step".into()));
    }
    let svd = m
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| ScqError::NumericalFailure("SVD did not converge in Procrustes step".into()))?;
    let (s, t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(ScqError::NumericalFailure("SVD factors missing in Procrustes step".into())),
    };
    Ok(s * t)
}

/// Fits ITQ on centered features. Returns the `d x L` projection (PCA basis
/// times rotation) and the loss after each rotation update.
pub fn train_itq(x: &FeatureMatrix, bits: usize, iters: usize, seed: u64) -> Result<(ProjectionMatrix, LossTrace)> {
    if bits == 0 || bits > x.d() {
        return Err(ScqError::InvalidConfig(format!("code length {bits} must be in 1..={}", x.d())));
    }
    if iters == 0 {
        return Err(ScqError::InvalidConfig("ITQ needs at least one iteration".into()));
    }
    let pca = pca_fit(x, bits)?;
    let p = x.project(&pca.projection);
    let mut r = synth::random_orthonormal(&mut synth::rng(seed), bits, bits);
    let mut values = Vec::with_capacity(iters);
    for _ in 0..iters {
        let u = &p * &r;
        let b = sign_codes(&u).to_matrix();
        r = procrustes_rotation(&b, &p)?;
        values.push(loss_from_projection(&b, &(&p * &r)));
    }
    let v = &pca.projection * r;
    let pm = ProjectionMatrix::new(v, ProjectionKind::Orthonormal)
        .map_err(|e| ScqError::NumericalFailure(format!("ITQ projection lost orthonormality: {e}")))?;
    let trace = LossTrace {
        values,
        stop_reason: StopReason::MaxIter,
        eigendecompositions: 1,
        column_fallbacks: 0,
    };
    Ok((pm, trace))
}
