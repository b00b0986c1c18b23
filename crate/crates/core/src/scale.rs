//! Input scale selection and the variance / quantization trade-off diagnostics.

use crate::codes::sign_codes;
use crate::error::{Result, ScqError};
use crate::linalg::{gram_eigendecomposition, EigenSystem, FeatureMatrix, ProjectionMatrix};
use crate::one::train_one;
use crate::train::{loss_from_projection, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSource {
    Formula,
    MaxVar,
    Override,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParams {
    pub s: f64,
    pub s_max_var: f64,
    pub source: ScaleSource,
}

/// `s = sqrt(L / sum of the top-L eigenvalues)`.
pub fn compute_scale(eigvals_desc: &[f64], bits: usize) -> Result<f64> {
    if bits == 0 || bits > eigvals_desc.len() {
        return Err(ScqError::InvalidConfig(format!(
            "code length {bits} must be in 1..={}",
            eigvals_desc.len()
        )));
    }
    let total: f64 = eigvals_desc[..bits].iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(ScqError::DegenerateSpectrum(total));
    }
    Ok((bits as f64 / total).sqrt())
}

/// Covariance eigenvalues (`X'X / n`), descending.
pub fn covariance_eigenvalues(es: &EigenSystem) -> Vec<f64> {
    let n = es.n().max(1) as f64;
    es.descending_eigenvalues().iter().map(|l| l / n).collect()
}

/// Scale from the covariance spectrum of centered features.
pub fn formula_scale(x: &FeatureMatrix, bits: usize) -> Result<f64> {
    let es = gram_eigendecomposition(x)?;
    compute_scale(&covariance_eigenvalues(&es), bits)
}

/// `1 / max_i ||x_i||`: the largest scale keeping every sample in the unit ball.
pub fn compute_s_max_var(x: &FeatureMatrix) -> Result<f64> {
    let max = x.data().row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(ScqError::DegenerateData("all feature rows are zero".into()));
    }
    Ok(1.0 / max)
}

/// Resolves the training scale: an explicit override wins, otherwise the formula.
pub fn select_scale(x: &FeatureMatrix, bits: usize, override_scale: Option<f64>) -> Result<ScaleParams> {
    let s_max_var = compute_s_max_var(x)?;
    match override_scale {
        Some(s) if s > 0.0 && s.is_finite() => Ok(ScaleParams {
            s,
            s_max_var,
            source: ScaleSource::Override,
        }),
        Some(s) => Err(ScqError::InvalidConfig(format!("scale must be positive, got {s}"))),
        None => Ok(ScaleParams {
            s: formula_scale(x, bits)?,
            s_max_var,
            source: ScaleSource::Formula,
        }),
    }
}

/// `||XV||_F^2 / sum of the top-L Gram eigenvalues of X`.
pub fn retained_variance_fraction(x: &FeatureMatrix, v: &ProjectionMatrix, eigvals_desc: &[f64], bits: usize) -> Result<f64> {
    if bits == 0 || bits > eigvals_desc.len() {
        return Err(ScqError::InvalidConfig(format!(
            "code length {bits} must be in 1..={}",
            eigvals_desc.len()
        )));
    }
    let total: f64 = eigvals_desc[..bits].iter().sum();
    if !(total > 0.0) {
        return Err(ScqError::DegenerateSpectrum(total));
    }
    Ok(x.project(v.data()).norm_squared() / total)
}

/// `|s * mean(|XV|) - 1|` for features already multiplied by `s`.
pub fn mean_abs_diagnostic(x_scaled: &FeatureMatrix, v: &ProjectionMatrix) -> f64 {
    let u = x_scaled.project(v.data());
    if u.is_empty() {
        return f64::NAN;
    }
    let mean = u.iter().map(|a| a.abs()).sum::<f64>() / u.len() as f64;
    (mean - 1.0).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub per_bit_loss: f64,
    pub retained_variance: f64,
    pub mean_abs_gap: f64,
    pub iterations: usize,
}

#[derive(Debug)]
pub struct SweepRow {
    pub s: f64,
    pub outcome: Result<SweepPoint>,
}

/// Default grid: 16 log-spaced values over `[s/8, 8s]`.
pub fn default_grid(s: f64) -> Vec<f64> {
    let (lo, hi) = ((s / 8.0).ln(), (8.0 * s).ln());
    (0..16).map(|i| (lo + (hi - lo) * i as f64 / 15.0).exp()).collect()
}

fn sweep_point(x: &FeatureMatrix, gram_desc: &[f64], s: f64, cfg: &TrainConfig) -> Result<SweepPoint> {
    let xs = x.scaled(s)?;
    let (v, trace) = train_one(&xs, cfg)?;
    let u = xs.project(v.data());
    let b = sign_codes(&u).to_matrix();
    let scaled_desc: Vec<f64> = gram_desc.iter().map(|l| l * s * s).collect();
    Ok(SweepPoint {
        per_bit_loss: loss_from_projection(&b, &u) / cfg.bits as f64,
        retained_variance: retained_variance_fraction(&xs, &v, &scaled_desc, cfg.bits)?,
        mean_abs_gap: mean_abs_diagnostic(&xs, &v),
        iterations: trace.iterations(),
    })
}

/// Trains the orthonormal encoder on `sX` for each grid value of `s` and
/// reports loss and variance diagnostics, rows in descending `s`. `x` must be
/// centered and unscaled. A failing point is recorded and the sweep continues.
pub fn sweep_scale(x: &FeatureMatrix, bits: usize, grid: &[f64], cfg: &TrainConfig) -> Result<Vec<SweepRow>> {
    if let Some(bad) = grid.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(ScqError::InvalidConfig(format!("scale grid values must be positive, got {bad}")));
    }
    let mut cfg = cfg.clone();
    cfg.bits = bits;
    cfg.validate(x.d())?;
    let es = gram_eigendecomposition(x)?;
    let gram_desc: Vec<f64> = es.descending_eigenvalues().iter().copied().collect();
    let mut scales = grid.to_vec();
    scales.sort_by(|a, b| b.total_cmp(a));
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = scales
            .iter()
            .map(|&s| {
                let (cfg, gram_desc) = (&cfg, &gram_desc);
                scope.spawn(move || SweepRow {
                    s,
                    outcome: sweep_point(x, gram_desc, s, cfg),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect::<Vec<_>>()
    });
    for row in &rows {
        if let Err(e) = &row.outcome {
            log::warn!("scale {:.6e}: {e}", row.s);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pca_fit, zero_center, ProjectionKind};
    use crate::synth;
    use nalgebra::DMatrix;

    #[test]
    fn formula_examples() {
        assert!((compute_scale(&[4.0, 1.0], 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((compute_scale(&[4.0, 1.0], 2).unwrap() - 0.632456).abs() < 1e-6);
        assert!((compute_scale(&[1.5, 0.5, 0.2], 2).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(compute_scale(&[0.0, 0.0], 2), Err(ScqError::DegenerateSpectrum(_))));
    }

    #[test]
    fn formula_is_scale_invariant() {
        let x = zero_center(&synth::gaussian_matrix(80, 6, 2)).unwrap().0;
        for c in [0.1, 3.0, 250.0] {
            let es = gram_eigendecomposition(&x.scaled(c).unwrap()).unwrap();
            let cov = covariance_eigenvalues(&es);
            let s = compute_scale(&cov, 3).unwrap();
            let top: f64 = cov[..3].iter().sum();
            assert!((s * (top / 3.0).sqrt() - 1.0).abs() < 1e-12);
            let s1 = formula_scale(&x, 3).unwrap();
            assert!((s * c - s1).abs() < 1e-9 * s1);
        }
    }

    #[test]
    fn max_var_examples() {
        let x = FeatureMatrix::new(DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.5, 0.0])).unwrap();
        assert!((compute_s_max_var(&x).unwrap() - 0.2).abs() < 1e-15);
        assert!((compute_s_max_var(&x.scaled(4.0).unwrap()).unwrap() - 0.05).abs() < 1e-15);
        let unit = FeatureMatrix::new(DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.0, -0.5])).unwrap();
        assert!(compute_s_max_var(&unit).unwrap() >= 1.0);
        let zero = FeatureMatrix::new(DMatrix::zeros(3, 2)).unwrap();
        assert!(matches!(compute_s_max_var(&zero), Err(ScqError::DegenerateData(_))));
    }

    #[test]
    fn retained_variance_examples() {
        let x = zero_center(&synth::anisotropic_gaussian(300, &synth::harmonic_spectrum(6), 3)).unwrap().0;
        let es = gram_eigendecomposition(&x).unwrap();
        let desc: Vec<f64> = es.descending_eigenvalues().iter().copied().collect();
        let top = pca_fit(&x, 2).unwrap();
        let v = ProjectionMatrix::new(top.projection, ProjectionKind::Orthonormal).unwrap();
        assert!((retained_variance_fraction(&x, &v, &desc, 2).unwrap() - 1.0).abs() < 1e-8);

        let bottom = es.eigenvectors().columns(0, 2).into_owned();
        let v = ProjectionMatrix::new(bottom, ProjectionKind::Orthonormal).unwrap();
        let want = (desc[4] + desc[5]) / (desc[0] + desc[1]);
        assert!((retained_variance_fraction(&x, &v, &desc, 2).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn select_scale_sources() {
        let x = zero_center(&synth::gaussian_matrix(50, 4, 1)).unwrap().0;
        assert_eq!(select_scale(&x, 2, None).unwrap().source, ScaleSource::Formula);
        let p = select_scale(&x, 2, Some(0.3)).unwrap();
        assert_eq!((p.s, p.source), (0.3, ScaleSource::Override));
        assert!(select_scale(&x, 2, Some(-1.0)).is_err());
    }

    #[test]
    fn default_grid_spans_factor_64() {
        let g = default_grid(2.0);
        assert_eq!(g.len(), 16);
        assert!((g[0] - 0.25).abs() < 1e-12 && (g[15] - 16.0).abs() < 1e-9);
    }

    #[test]
    fn sweep_rows_descend_and_single_point_matches_training() {
        let x = zero_center(&synth::gaussian_matrix(100, 6, 4)).unwrap().0;
        let cfg = TrainConfig::new(3).with_seed(7);
        let rows = sweep_scale(&x, 3, &[0.1, 1.0, 0.4], &cfg).unwrap();
        let s: Vec<f64> = rows.iter().map(|r| r.s).collect();
        assert_eq!(s, vec![1.0, 0.4, 0.1]);

        let single = sweep_scale(&x, 3, &[0.4], &cfg).unwrap();
        let point = single[0].outcome.as_ref().unwrap();
        let xs = x.scaled(0.4).unwrap();
        let (v, trace) = train_one(&xs, &cfg).unwrap();
        let u = xs.project(v.data());
        let loss = loss_from_projection(&sign_codes(&u).to_matrix(), &u) / 3.0;
        assert_eq!(point.per_bit_loss, loss);
        assert_eq!(point.iterations, trace.iterations());
        assert!(sweep_scale(&x, 3, &[0.0], &cfg).is_err());
    }
}
