//! End-to-end training: center, optional PCA pre-reduction, scale, fit, and
//! package the result as a [`HashModel`].

use nalgebra::DMatrix;

use crate::codes::{sign_codes, BinaryCodes};
use crate::error::{Result, ScqError};
use crate::itq::{train_itq, DEFAULT_ITQ_ITERS};
use crate::linalg::{pca_fit, zero_center, FeatureMatrix};
use crate::model::{HashModel, Hyperparams, Method};
use crate::oge::train_oge;
use crate::one::train_one;
use crate::scale::{compute_s_max_var, select_scale, ScaleParams, ScaleSource};
use crate::train::{LossTrace, TrainConfig};

pub const DEFAULT_PCA_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub train: TrainConfig,
    /// Features wider than this are PCA-reduced to it first.
    pub pca_dim: usize,
    pub pca: bool,
    pub itq_iters: usize,
}

impl PipelineConfig {
    pub fn new(method: Method, train: TrainConfig) -> Self {
        Self {
            method,
            train,
            pca_dim: DEFAULT_PCA_DIM,
            pca: true,
            itq_iters: DEFAULT_ITQ_ITERS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: LossTrace,
    pub scale: ScaleParams,
    /// Codes of the training rows under the final projection.
    pub codes: BinaryCodes,
    /// Dimension the encoder was trained in (after any PCA).
    pub train_dim: usize,
}

pub fn train_model(raw: &DMatrix<f64>, cfg: &PipelineConfig) -> Result<(HashModel, TrainReport)> {
    if cfg.pca_dim == 0 {
        return Err(ScqError::InvalidConfig("PCA dimension must be at least 1".into()));
    }
    let (centered, mean) = zero_center(raw)?;
    let (x, pca) = if cfg.pca && centered.d() > cfg.pca_dim {
        let p = pca_fit(&centered, cfg.pca_dim)?;
        let reduced = FeatureMatrix::new(centered.project(&p.projection))?;
        log::info!("reduced {} input dimensions to {}", centered.d(), cfg.pca_dim);
        (reduced, Some(p.projection))
    } else {
        (centered, None)
    };
    let bits = cfg.train.bits;
    cfg.train.validate(x.d())?;
    let scale = match cfg.method {
        Method::Itq => ScaleParams {
            s: cfg.train.scale_override.unwrap_or(1.0),
            s_max_var: compute_s_max_var(&x)?,
            source: if cfg.train.scale_override.is_some() {
                ScaleSource::Override
            } else {
                ScaleSource::Formula
            },
        },
        _ => select_scale(&x, bits, cfg.train.scale_override)?,
    };
    log::info!("scale s = {:.6e} ({:?}), s_max_var = {:.6e}", scale.s, scale.source, scale.s_max_var);
    let xs = x.scaled(scale.s)?;
    let (v, trace) = match cfg.method {
        Method::One => train_one(&xs, &cfg.train)?,
        Method::Oge => train_oge(&xs, &cfg.train)?,
        Method::Itq => train_itq(&xs, bits, cfg.itq_iters, cfg.train.seed)?,
    };
    let codes = sign_codes(&xs.project(v.data()));
    let t = &cfg.train;
    let hyper = Hyperparams {
        mu: t.mu,
        eps: t.eps,
        eps_b: t.eps_b,
        eps_u: t.eps_u,
        max_iter: if cfg.method == Method::Itq { cfg.itq_iters } else { t.max_iter },
        max_inner: t.max_inner,
        seed: t.seed,
    };
    let train_dim = x.d();
    let model = HashModel::new(cfg.method, mean, pca, scale.s, v, hyper)?;
    Ok((
        model,
        TrainReport {
            trace,
            scale,
            codes,
            train_dim,
        },
    ))
}
