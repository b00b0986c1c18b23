//! Lagrangian dual machinery for the unit-norm column problems.
//!
//! Column `k` minimizes `(1/n)||b_k - X v||^2` subject to `v'v = 1` and
//! `v'v_i = 0` for the earlier columns. For a fixed multiplier `nu` and
//! orthogonality multipliers `phi`, the minimizer is
//! `v = Z (X'b_k - (n/2) sum_i phi_i v_i)` with `Z = (X'X + n nu I)^-1`.
//!
//! Everything here works in the eigenbasis of `X'X`: `Z` is diagonal there,
//! so each dual-gradient evaluation is `O(d)` once the target is rotated.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ScqError};
use crate::linalg::EigenSystem;

pub const DEFAULT_EPS_B: f64 = 1e-4;
pub const DEFAULT_EPS_U: f64 = 1e-4;
pub const DEFAULT_MAX_INNER: usize = 10;

/// Relative pivot tolerance below which `A_k` is treated as singular.
pub const PHI_PIVOT_TOL: f64 = 1e-10;

const MAX_BRACKET_STEP: f64 = (1u64 << 60) as f64;
const MAX_BISECTIONS: usize = 400;

/// Multipliers of the column currently being solved.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub nu: f64,
    /// Length `k - 1`.
    pub phi: DVector<f64>,
    /// 1-based column index.
    pub k: usize,
    pub inner_iters: usize,
}

/// `A_k phi = c_k`, the stationarity system for the orthogonality multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSystem {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// Result of the `nu` bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuRoot {
    pub nu: f64,
    pub gradient: f64,
    /// The root lies at or below the guarded lower end of the bracket; the
    /// returned `nu` is that end and `||v|| <= 1` there.
    pub at_lower_guard: bool,
}

/// Ascending spectrum of `X'X` plus the sample count.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Spectrum<'a> {
    pub lambda: &'a [f64],
    pub n: f64,
}

impl<'a> Spectrum<'a> {
    pub fn of(es: &'a EigenSystem) -> Self {
        Self {
            lambda: es.eigenvalues().as_slice(),
            n: es.n() as f64,
        }
    }

    pub fn lower_bound(&self) -> f64 {
        -self.lambda[0] / self.n
    }

    pub fn guarded_lower(&self) -> f64 {
        let lmax = self.lambda[self.lambda.len() - 1];
        self.lower_bound() + f64::max(1e-12, 1e-9 * (lmax + 1.0) / self.n)
    }

    pub fn check(&self, nu: f64) -> Result<()> {
        let lower = self.lower_bound();
        if nu > lower && nu.is_finite() {
            Ok(())
        } else {
            Err(ScqError::OutOfBracket { nu, lower })
        }
    }

    /// `sum_j (w_j / (lambda_j + n nu))^2 - 1` for eigen-coordinates `w`.
    pub fn gradient(&self, w: &[f64], nu: f64) -> f64 {
        let shift = self.n * nu;
        let mut acc = 0.0;
        for (wj, lj) in w.iter().zip(self.lambda) {
            let q = wj / (lj + shift);
            acc += q * q;
        }
        acc - 1.0
    }

    /// `diag(1 / (lambda_j + n nu))`.
    pub fn inverse(&self, nu: f64) -> DVector<f64> {
        let shift = self.n * nu;
        DVector::from_iterator(self.lambda.len(), self.lambda.iter().map(|l| 1.0 / (l + shift)))
    }

    /// Upper end of the bracket: doubles the step from `lower + 1` until the
    /// gradient turns negative.
    pub fn upper_end(&self, w: &[f64], lower: f64) -> Result<f64> {
        let mut step = 1.0;
        loop {
            let hi = lower + step;
            if self.gradient(w, hi) < 0.0 {
                return Ok(hi);
            }
            step *= 2.0;
            if step > MAX_BRACKET_STEP {
                return Err(ScqError::NumericalFailure(format!(
                    "nu bracket expansion exceeded 2^60 (gradient still {:e})",
                    self.gradient(w, hi)
                )));
            }
        }
    }

    pub fn solve_nu(&self, w: &[f64], eps_b: f64, column: usize) -> Result<NuRoot> {
        if !(eps_b > 0.0) {
            return Err(ScqError::InvalidConfig(format!("eps_b must be positive, got {eps_b}")));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(ScqError::DegenerateColumn { column });
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(ScqError::NumericalFailure("non-finite dual target".into()));
        }
        let mut lo = self.guarded_lower();
        let g_lo = self.gradient(w, lo);
        if g_lo <= eps_b {
            return Ok(NuRoot {
                nu: lo,
                gradient: g_lo,
                at_lower_guard: true,
            });
        }
        let mut hi = self.upper_end(w, lo)?;
        let mut mid = hi;
        let mut g_mid = self.gradient(w, hi);
        for _ in 0..MAX_BISECTIONS {
            if g_mid.abs() <= eps_b {
                break;
            }
            mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            g_mid = self.gradient(w, mid);
            if g_mid > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(NuRoot {
            nu: mid,
            gradient: g_mid,
            at_lower_guard: false,
        })
    }
}

/// Gradient of the column-1 dual in `nu`: `||(X'X + n nu I)^-1 X'b||^2 - 1`.
pub fn dual_gradient_v1(es: &EigenSystem, xt_b: &DVector<f64>, nu: f64) -> Result<f64> {
    let spectrum = Spectrum::of(es);
    spectrum.check(nu)?;
    let w = es.to_eigenbasis(xt_b);
    Ok(spectrum.gradient(w.as_slice(), nu))
}

/// Guarded lower end and upper end of the `nu` bracket for a target.
pub fn nu_bracket(es: &EigenSystem, target: &DVector<f64>) -> Result<(f64, f64)> {
    let spectrum = Spectrum::of(es);
    let w = es.to_eigenbasis(target);
    let lo = spectrum.guarded_lower();
    Ok((lo, spectrum.upper_end(w.as_slice(), lo)?))
}

/// Bisection for the multiplier that puts `Z target` on the unit sphere.
pub fn solve_nu_detailed(es: &EigenSystem, target: &DVector<f64>, eps_b: f64) -> Result<NuRoot> {
    let w = es.to_eigenbasis(target);
    Spectrum::of(es).solve_nu(w.as_slice(), eps_b, 1)
}

pub fn solve_nu(es: &EigenSystem, target: &DVector<f64>, eps_b: f64) -> Result<f64> {
    solve_nu_detailed(es, target, eps_b).map(|r| r.nu)
}

/// Builds `A_k` and `c_k` from `k - 1` applications of `Z_k`.
pub fn build_column_system(
    es: &EigenSystem,
    nu: f64,
    prev_cols: &[DVector<f64>],
    xt_b: &DVector<f64>,
) -> Result<ColumnSystem> {
    let half_n = 0.5 * es.n() as f64;
    let z_cols = prev_cols
        .iter()
        .map(|v| es.apply_regularized_inverse(nu, v))
        .collect::<Result<Vec<_>>>()?;
    let m = prev_cols.len();
    let mut a = DMatrix::zeros(m, m);
    let mut c = DVector::zeros(m);
    for i in 0..m {
        c[i] = z_cols[i].dot(xt_b);
        for j in 0..=i {
            let aij = half_n * prev_cols[i].dot(&z_cols[j]);
            a[(i, j)] = aij;
            a[(j, i)] = aij;
        }
    }
    Ok(ColumnSystem { a, c })
}

/// Column system from eigen-coordinates of the previous columns.
pub(crate) fn column_system_in_eigenbasis(
    spectrum: &Spectrum<'_>,
    zinv: &DVector<f64>,
    prev: &[DVector<f64>],
    target: &DVector<f64>,
) -> ColumnSystem {
    let half_n = 0.5 * spectrum.n;
    let m = prev.len();
    let scaled: Vec<DVector<f64>> = prev.iter().map(|p| p.component_mul(zinv)).collect();
    let mut a = DMatrix::zeros(m, m);
    let mut c = DVector::zeros(m);
    for i in 0..m {
        c[i] = scaled[i].dot(target);
        for j in 0..=i {
            let aij = half_n * prev[i].dot(&scaled[j]);
            a[(i, j)] = aij;
            a[(j, i)] = aij;
        }
    }
    ColumnSystem { a, c }
}

/// `phi = A^-1 c`, via Cholesky, or the minimum-norm least-squares solution
/// when `A` is singular at [`PHI_PIVOT_TOL`].
pub fn solve_phi(sys: &ColumnSystem) -> DVector<f64> {
    let m = sys.c.len();
    if m == 0 {
        return DVector::zeros(0);
    }
    let scale = sys.a.diagonal().amax();
    if scale > 0.0 {
        if let Some(chol) = sys.a.clone().cholesky() {
            let l = chol.l_dirty();
            let min_pivot = (0..m).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot > PHI_PIVOT_TOL * scale {
                return chol.solve(&sys.c);
            }
        }
    }
    let svd = sys.a.clone().svd(true, true);
    let cutoff = PHI_PIVOT_TOL * svd.singular_values.amax().max(f64::MIN_POSITIVE);
    svd.solve(&sys.c, cutoff)
        .unwrap_or_else(|_| DVector::zeros(m))
}

/// Completes a short vector (`||v|| < 1`, from the hard case of the bracket)
/// to unit norm along an eigenvector of the smallest eigenvalue. Works in
/// eigen-coordinates, where those eigenvectors are unit axes.
fn complete_to_unit(spectrum: &Spectrum<'_>, v: &mut DVector<f64>) {
    let norm2 = v.norm_squared();
    if norm2 >= 1.0 {
        return;
    }
    let lmax = spectrum.lambda[spectrum.lambda.len() - 1];
    let tol = 1e-9 * (lmax + 1.0);
    let lmin = spectrum.lambda[0];
    let j = (0..spectrum.lambda.len())
        .take_while(|&j| spectrum.lambda[j] - lmin <= tol)
        .min_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
        .unwrap_or(0);
    let mut u = DVector::zeros(v.len());
    u[j] = 1.0;
    if norm2 > 0.0 {
        u.axpy(-v[j] / norm2, &v.clone(), 1.0);
    }
    let un = u.norm();
    if un > 0.0 {
        v.axpy((1.0 - norm2).sqrt() / un, &u, 1.0);
    }
}

/// Column 1 in eigen-coordinates: `v = target / (lambda + n nu)`.
pub(crate) fn column_one_in_eigenbasis(
    spectrum: &Spectrum<'_>,
    target: &DVector<f64>,
    eps_b: f64,
    column: usize,
) -> Result<(DVector<f64>, NuRoot)> {
    let root = spectrum.solve_nu(target.as_slice(), eps_b, column)?;
    let mut v = target.component_mul(&spectrum.inverse(root.nu));
    if root.at_lower_guard {
        complete_to_unit(spectrum, &mut v);
    }
    Ok((v, root))
}

/// First column: `v1 = (X'X + n nu1 I)^-1 X'b1` with `nu1` from the bisection.
pub fn solve_column_one(es: &EigenSystem, xt_b1: &DVector<f64>, eps_b: f64) -> Result<DVector<f64>> {
    let spectrum = Spectrum::of(es);
    let w = es.to_eigenbasis(xt_b1);
    let (v, _) = column_one_in_eigenbasis(&spectrum, &w, eps_b, 1)?;
    Ok(es.from_eigenbasis(&v))
}

fn deflate(target: &DVector<f64>, prev: &[DVector<f64>], phi: &DVector<f64>, half_n: f64) -> DVector<f64> {
    let mut t = target.clone();
    for (p, f) in prev.iter().zip(phi.iter()) {
        t.axpy(-half_n * f, p, 1.0);
    }
    t
}

/// The `(nu, phi)` alternation for column `k`, in eigen-coordinates.
pub(crate) fn column_k_in_eigenbasis(
    spectrum: &Spectrum<'_>,
    target: &DVector<f64>,
    prev: &[DVector<f64>],
    eps_b: f64,
    eps_u: f64,
    max_inner: usize,
) -> Result<(DVector<f64>, DualState)> {
    let k = prev.len() + 1;
    if max_inner == 0 {
        return Err(ScqError::InvalidConfig("max_inner must be at least 1".into()));
    }
    if !(eps_u > 0.0) {
        return Err(ScqError::InvalidConfig(format!("eps_u must be positive, got {eps_u}")));
    }
    let half_n = 0.5 * spectrum.n;
    let mut phi = DVector::zeros(k - 1);
    let mut v = DVector::zeros(target.len());
    let mut nu = spectrum.guarded_lower();
    let mut norm_error = f64::INFINITY;
    for it in 1..=max_inner {
        let effective = deflate(target, prev, &phi, half_n);
        nu = spectrum.solve_nu(effective.as_slice(), eps_b, k)?.nu;
        let zinv = spectrum.inverse(nu);
        phi = solve_phi(&column_system_in_eigenbasis(spectrum, &zinv, prev, target));
        v = deflate(target, prev, &phi, half_n).component_mul(&zinv);
        norm_error = (v.norm_squared() - 1.0).abs();
        if norm_error < eps_u {
            return Ok((
                v,
                DualState {
                    nu,
                    phi,
                    k,
                    inner_iters: it,
                },
            ));
        }
    }
    Err(ScqError::ConvergenceFailure {
        column: k,
        iterations: max_inner,
        norm_error,
        last: v,
        nu,
    })
}

/// Alternates `nu` bisection (with `phi` fixed) and `phi = A^-1 c` (with `nu`
/// fixed), starting from `phi = 0`, until `|v'v - 1| < eps_u`.
pub fn solve_column_k(
    es: &EigenSystem,
    xt_bk: &DVector<f64>,
    prev_cols: &[DVector<f64>],
    eps_b: f64,
    eps_u: f64,
    max_inner: usize,
) -> Result<(DVector<f64>, DualState)> {
    let spectrum = Spectrum::of(es);
    let target = es.to_eigenbasis(xt_bk);
    let prev: Vec<_> = prev_cols.iter().map(|v| es.to_eigenbasis(v)).collect();
    match column_k_in_eigenbasis(&spectrum, &target, &prev, eps_b, eps_u, max_inner) {
        Ok((v, state)) => Ok((es.from_eigenbasis(&v), state)),
        Err(ScqError::ConvergenceFailure {
            column,
            iterations,
            norm_error,
            last,
            nu,
        }) => Err(ScqError::ConvergenceFailure {
            column,
            iterations,
            norm_error,
            last: es.from_eigenbasis(&last),
            nu,
        }),
        Err(e) => Err(e),
    }
}

/// Orthonormal basis (columns) of the complement of `span(prev)`.
pub(crate) fn complement_basis(dim: usize, prev: &[DVector<f64>]) -> DMatrix<f64> {
    let m = prev.len();
    if m == 0 {
        return DMatrix::identity(dim, dim);
    }
    let mut stacked = DMatrix::zeros(dim, m + dim);
    for (j, p) in prev.iter().enumerate() {
        stacked.set_column(j, p);
    }
    stacked.view_mut((0, m), (dim, dim)).fill_with_identity();
    let q = stacked.qr().q();
    q.columns(m, dim - m).into_owned()
}

/// Exact column-`k` solve restricted to the orthogonal complement of the
/// previous columns, in eigen-coordinates. Unlike the alternation, its `nu`
/// bracket uses the smallest eigenvalue of `X'X` on that complement, so it
/// also covers optima below the full-space bound `-lambda_min / n`.
pub(crate) fn column_k_restricted_in_eigenbasis(
    spectrum: &Spectrum<'_>,
    target: &DVector<f64>,
    prev: &[DVector<f64>],
    eps_b: f64,
) -> Result<DVector<f64>> {
    let k = prev.len() + 1;
    let basis = complement_basis(target.len(), prev);
    let lambda = DVector::from_column_slice(spectrum.lambda);
    let weighted = DMatrix::from_fn(basis.nrows(), basis.ncols(), |i, j| basis[(i, j)] * lambda[i]);
    let mut restricted = basis.tr_mul(&weighted);
    restricted = (&restricted + restricted.transpose()) * 0.5;
    let es = EigenSystem::from_gram(restricted, spectrum.n as usize)?;
    let sub_target = basis.tr_mul(target);
    let w = es.to_eigenbasis(&sub_target);
    let (sub_v, _) = column_one_in_eigenbasis(&Spectrum::of(&es), &w, eps_b, k)?;
    Ok(&basis * es.from_eigenbasis(&sub_v))
}

/// Exact restricted solve in the original coordinates.
pub fn solve_column_restricted(
    es: &EigenSystem,
    xt_bk: &DVector<f64>,
    prev_cols: &[DVector<f64>],
    eps_b: f64,
) -> Result<DVector<f64>> {
    let spectrum = Spectrum::of(es);
    let target = es.to_eigenbasis(xt_bk);
    let prev: Vec<_> = prev_cols.iter().map(|v| es.to_eigenbasis(v)).collect();
    let v = column_k_restricted_in_eigenbasis(&spectrum, &target, &prev, eps_b)?;
    Ok(es.from_eigenbasis(&v))
}
