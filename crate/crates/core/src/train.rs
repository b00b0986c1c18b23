//! Configuration, loss bookkeeping and the alternating B/V outer loop shared
//! by the two encoders.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::codes::{sign_codes, BinaryCodes};
use crate::dual::{DEFAULT_EPS_B, DEFAULT_EPS_U, DEFAULT_MAX_INNER};
use crate::error::{Result, ScqError};
use crate::linalg::{FeatureMatrix, ProjectionKind, ProjectionMatrix};
use crate::synth;

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_EPS: f64 = 1e-4;
pub const DEFAULT_MU: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Code length `L`.
    pub bits: usize,
    pub max_iter: usize,
    /// Outer tolerance on the relative loss reduction.
    pub eps: f64,
    /// Tolerance on the `nu` bisection.
    pub eps_b: f64,
    /// Tolerance on `|v'v - 1|` in the column alternation.
    pub eps_u: f64,
    /// Inner `(nu, phi)` iteration cap.
    pub max_inner: usize,
    /// Norm penalty of the orthogonal encoder.
    pub mu: f64,
    pub scale_override: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            max_iter: DEFAULT_MAX_ITER,
            eps: DEFAULT_EPS,
            eps_b: DEFAULT_EPS_B,
            eps_u: DEFAULT_EPS_U,
            max_inner: DEFAULT_MAX_INNER,
            mu: DEFAULT_MU,
            scale_override: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale_override = Some(scale);
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |msg: String| Err(ScqError::InvalidConfig(msg));
        if self.bits == 0 || self.bits > d {
            return bad(format!("code length {} must be in 1..={d}", self.bits));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if self.max_inner == 0 {
            return bad("max_inner must be at least 1".into());
        }
        for (name, v) in [("eps", self.eps), ("eps_b", self.eps_b), ("eps_u", self.eps_u)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be non-negative, got {}", self.mu));
        }
        if let Some(s) = self.scale_override {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("scale must be positive, got {s}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    /// Objective after each (B, V) update pair.
    pub values: Vec<f64>,
    pub stop_reason: StopReason,
    /// Eigendecompositions of `X'X` performed during the fit.
    pub eigendecompositions: usize,
    /// Columns that needed the restricted solve or a random substitute.
    pub column_fallbacks: usize,
}

impl LossTrace {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("trace records at least one iteration")
    }

    pub fn iterations(&self) -> usize {
        self.values.len()
    }

    /// Largest step-to-step increase (negative when strictly decreasing).
    pub fn max_increase(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `(1/n) ||B - XV||_F^2`.
pub fn quantization_loss(b: &BinaryCodes, x: &FeatureMatrix, v: &ProjectionMatrix) -> Result<f64> {
    if b.n() != x.n() || b.bits() != v.bits() || x.d() != v.d() {
        return Err(ScqError::InvalidInput(format!(
            "shape mismatch: codes {}x{}, features {}x{}, projection {}x{}",
            b.n(),
            b.bits(),
            x.n(),
            x.d(),
            v.d(),
            v.bits()
        )));
    }
    Ok(loss_from_projection(&b.to_matrix(), &x.project(v.data())))
}

pub(crate) fn loss_from_projection(b: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let n = b.nrows().max(1) as f64;
    b.iter().zip(u.iter()).map(|(bi, ui)| (bi - ui) * (bi - ui)).sum::<f64>() / n
}

/// Random `d x L` matrix with orthonormal columns, deterministic per seed.
pub fn init_v(d: usize, bits: usize, seed: u64) -> Result<ProjectionMatrix> {
    if bits == 0 || bits > d {
        return Err(ScqError::InvalidConfig(format!("code length {bits} must be in 1..={d}")));
    }
    let v = synth::random_orthonormal(&mut synth::rng(seed), d, bits);
    Ok(ProjectionMatrix::new_unchecked(v, ProjectionKind::Orthonormal))
}

/// Random unit vector orthogonal to the given unit vectors.
pub(crate) fn random_orthogonal_unit<R: Rng>(rng: &mut R, dim: usize, prev: &[DVector<f64>]) -> DVector<f64> {
    loop {
        let mut v = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        orthogonalize(&mut v, prev);
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

/// Removes the components along `prev` (assumed orthonormal), twice.
pub(crate) fn orthogonalize(v: &mut DVector<f64>, prev: &[DVector<f64>]) {
    for _ in 0..2 {
        for p in prev {
            let c = v.dot(p);
            v.axpy(-c, p, 1.0);
        }
    }
}

/// One V-step given `X'B`; returns the new `d x L` projection.
pub(crate) trait ColumnSweep {
    fn sweep(&mut self, xt_b: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// Objective for codes `b`, projections `u = XV` and `v`.
    fn objective(&self, b: &DMatrix<f64>, u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64;

    fn fallbacks(&self) -> usize;

    /// Alternative step tried when the sweep fails to improve on `v`.
    fn rescue(&mut self, _x: &FeatureMatrix, _b: &DMatrix<f64>, _v: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
        Ok(None)
    }
}

fn evaluate<S: ColumnSweep>(x: &FeatureMatrix, sweeper: &S, v: &DMatrix<f64>) -> f64 {
    let u = x.project(v);
    let b = sign_codes(&u).to_matrix();
    sweeper.objective(&b, &u, v)
}

/// Alternates `B = sign(XV)` with a column sweep until the relative loss
/// reduction drops below `eps`. Each recorded value is the objective of a V
/// together with its own sign codes. A sweep that does not improve it is
/// replaced by the sweeper's rescue step if that helps; otherwise the fit ends.
pub(crate) fn alternate<S: ColumnSweep>(
    x: &FeatureMatrix,
    init: DMatrix<f64>,
    cfg: &TrainConfig,
    sweeper: &mut S,
    eigendecompositions: usize,
) -> Result<(DMatrix<f64>, LossTrace)> {
    let mut v = init;
    let mut values: Vec<f64> = Vec::new();
    let mut stop_reason = StopReason::MaxIter;
    for t in 1..=cfg.max_iter {
        let u = x.project(&v);
        let b = sign_codes(&u).to_matrix();
        let xt_b = x.transpose_mul(&b);
        let candidate = sweeper.sweep(&xt_b)?;
        let q_old = sweeper.objective(&b, &u, &v);
        let q_new = evaluate(x, sweeper, &candidate);
        let mut accepted = q_new <= q_old;
        let q = if accepted {
            v = candidate;
            q_new
        } else {
            log::debug!("iteration {t}: sweep raised the objective ({q_old:e} -> {q_new:e})");
            match sweeper.rescue(x, &b, &v)? {
                Some(alt) => {
                    let q_alt = evaluate(x, sweeper, &alt);
                    if q_alt < q_old {
                        accepted = true;
                        v = alt;
                        q_alt
                    } else {
                        q_old
                    }
                }
                None => q_old,
            }
        };
        if !q.is_finite() {
            return Err(ScqError::NumericalFailure(format!("objective became non-finite at iteration {t}")));
        }
        let previous = values.last().copied();
        values.push(q);
        log::trace!("iteration {t}: objective {q:.10e}");
        if !accepted || q <= 0.0 {
            stop_reason = StopReason::Converged;
            break;
        }
        if let Some(prev) = previous {
            if (prev - q) / q < cfg.eps {
                stop_reason = StopReason::Converged;
                break;
            }
        }
    }
    let trace = LossTrace {
        values,
        stop_reason,
        eigendecompositions,
        column_fallbacks: sweeper.fallbacks(),
    };
    Ok((v, trace))
}
