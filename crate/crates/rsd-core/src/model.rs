//! Covariance model and conditional residual machinery.
//!
//! For `X ~ N(theta, Sigma)` with known positive definite `Sigma`, the
//! step-down procedures rank active coordinates by standardized conditional
//! residuals. With an elimination history `H = (i_1, ..., i_{t-1})` and an
//! active coordinate `j`, the residual statistic is
//!
//! ```text
//! U_tj = (x_j - s_j' inv(Sigma_C) x_C) / sqrt(v_j),
//! v_j  = sigma_jj - s_j' inv(Sigma_C) s_j,
//! ```
//!
//! where `C` is the set of active coordinates other than `j` (everything
//! outside `H ∪ {j}`), `Sigma_C` the corresponding principal submatrix and
//! `s_j` the matching slice of column `j`. Equivalently, with `P` the
//! precision matrix of the active submatrix, `U_tj = (P x_A)_j / sqrt(P_jj)`
//! and `v_j = 1 / P_jj`.
//!
//! [`ActiveState`] maintains `P` across eliminations by rank-one downdates,
//! which costs `O(m^2)` per stage instead of a fresh `O(m^3)` inversion; the
//! direct formula stays available as an independent cross-check.
//!
//! Coordinates are 0-based throughout the library; stage numbers are 1-based.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on input covariance matrices.
const SYMMETRY_RTOL: f64 = 1e-12;

/// Factorization pivot ratio beyond which a model is flagged near-singular.
const PIVOT_RATIO_WARN: f64 = 1e12;

/// Tolerance for the `inv(Sigma) g_k = e_k` sanity check on shift directions.
const SHIFT_CHECK_TOL: f64 = 1e-8;

/// A known positive definite covariance matrix with cached factorization,
/// correlation standardization and per-coordinate variance scales.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    n: usize,
    sigma: DMatrix<f64>,
    corr: DMatrix<f64>,
    scales: Vec<f64>,
    chol_l: DMatrix<f64>,
    precision: DMatrix<f64>,
    pivot_ratio: f64,
}

impl CovarianceModel {
    /// Validates `sigma` (square, finite, symmetric, positive definite) and
    /// builds the model. Positive definiteness is decided by factorization
    /// success, not an eigenvalue computation.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 || sigma.ncols() != n {
            return Err(Error::BadDimension {
                expected: n.max(1),
                got: sigma.ncols(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                if !sigma[(i, j)].is_finite() {
                    return Err(Error::NonFiniteEntry { i, j });
                }
            }
        }
        let max_diag = (0..n).map(|i| sigma[(i, i)].abs()).fold(0.0, f64::max);
        let sym_tol = SYMMETRY_RTOL * max_diag.max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (sigma[(i, j)] - sigma[(j, i)]).abs();
                if gap > sym_tol {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
            }
        }

        let chol = nalgebra::Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
        let chol_l: DMatrix<f64> = chol.l();
        // Pivots of the factorization are the squared diagonal of L.
        let mut min_piv = f64::INFINITY;
        let mut max_piv = 0.0_f64;
        for i in 0..n {
            let d = chol_l[(i, i)];
            if d.is_nan() || d <= 0.0 {
                return Err(Error::NotPositiveDefinite);
            }
            let piv = d * d;
            min_piv = min_piv.min(piv);
            max_piv = max_piv.max(piv);
        }
        let pivot_ratio = max_piv / min_piv;

        let scales: Vec<f64> = (0..n).map(|i| sigma[(i, i)]).collect();
        let corr = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                sigma[(i, j)] / (scales[i] * scales[j]).sqrt()
            }
        });

        // Full precision, one column solve per coordinate, then symmetrized.
        let mut precision = DMatrix::zeros(n, n);
        for j in 0..n {
            let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            let y = chol_l
                .solve_lower_triangular(&e)
                .ok_or(Error::NotPositiveDefinite)?;
            let col = chol_l
                .tr_solve_lower_triangular(&y)
                .ok_or(Error::NotPositiveDefinite)?;
            precision.set_column(j, &col);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (precision[(i, j)] + precision[(j, i)]);
                precision[(i, j)] = avg;
                precision[(j, i)] = avg;
            }
        }

        Ok(Self {
            n,
            sigma,
            corr,
            scales,
            chol_l,
            precision,
            pivot_ratio,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Correlation matrix `Lambda = D^{-1/2} Sigma D^{-1/2}` with an exact
    /// unit diagonal.
    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    /// Diagonal of `Sigma` (the variance scales).
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Lower-triangular Cholesky factor of `Sigma`.
    pub fn chol_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// Cached `inv(Sigma)`.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Ratio of the largest to the smallest factorization pivot. A crude
    /// condition estimate for the near-singularity guard.
    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    /// True when the pivot ratio exceeds the guard threshold. Construction
    /// still succeeds; callers decide whether to surface a warning.
    pub fn near_singular(&self) -> bool {
        self.pivot_ratio > PIVOT_RATIO_WARN
    }

    /// Builds the companion model on the correlation scale.
    pub fn correlation_model(&self) -> Result<CovarianceModel> {
        CovarianceModel::new(self.corr.clone())
    }

    /// Solves `Sigma y = b` through the cached factorization.
    pub fn solve_sigma(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.len())?;
        let y = self
            .chol_l
            .solve_lower_triangular(b)
            .ok_or(Error::NotPositiveDefinite)?;
        self.chol_l
            .tr_solve_lower_triangular(&y)
            .ok_or(Error::NotPositiveDefinite)
    }

    /// `u_i = x_i / sqrt(sigma_ii)`: the observation on the correlation scale.
    pub fn standardize(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x.len())?;
        Ok(DVector::from_fn(self.n, |i, _| {
            x[i] / self.scales[i].sqrt()
        }))
    }

    /// Natural-parameter coordinates `y = inv(Sigma) x`. Moving the
    /// observation along shift column `g_k` moves `y_k` alone.
    pub fn y_coordinates(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.solve_sigma(x)
    }

    /// Shift direction for coordinate `k`: column `k` of `Sigma`, checked to
    /// satisfy `inv(Sigma) g = e_k`.
    pub fn shift_direction(&self, k: usize) -> Result<ShiftDirection> {
        self.check_index(k)?;
        let g: DVector<f64> = self.sigma.column(k).into_owned();
        let e = self.solve_sigma(&g)?;
        for i in 0..self.n {
            let want = if i == k { 1.0 } else { 0.0 };
            if (e[i] - want).abs() > SHIFT_CHECK_TOL {
                return Err(Error::NotPositiveDefinite);
            }
        }
        Ok(ShiftDirection { coordinate: k, g })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            Err(Error::BadDimension {
                expected: self.n,
                got: len,
            })
        } else {
            Ok(())
        }
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.n {
            Err(Error::BadIndex { index: k, n: self.n })
        } else {
            Ok(())
        }
    }
}

/// Builds a [`CovarianceModel`] from a row-major square matrix.
pub fn build_model(sigma: DMatrix<f64>) -> Result<CovarianceModel> {
    CovarianceModel::new(sigma)
}

/// Direction along which only one natural-parameter coordinate moves.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftDirection {
    pub coordinate: usize,
    pub g: DVector<f64>,
}

/// Ordered sequence of eliminated coordinates, pairwise distinct.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EliminationHistory {
    indices: Vec<usize>,
}

impl EliminationHistory {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates distinctness, range and length (`<= n - 1`).
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.len() + 1 > n {
            return Err(Error::BadDimension {
                expected: n - 1,
                got: indices.len(),
            });
        }
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::BadIndex { index: i, n });
            }
            if seen[i] {
                return Err(Error::IndexInHistory { index: i });
            }
            seen[i] = true;
        }
        Ok(Self { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.contains(&j)
    }

    fn push(&mut self, j: usize) {
        debug_assert!(!self.contains(j));
        self.indices.push(j);
    }
}

/// Conditional variance `v_j = sigma_jj - s_j' inv(Sigma_C) s_j` of
/// coordinate `j` given the active coordinates other than `j`. With an empty
/// conditioning set this degenerates to `sigma_jj`.
pub fn conditional_variance(
    model: &CovarianceModel,
    history: &EliminationHistory,
    j: usize,
) -> Result<f64> {
    let (cond, _) = conditioning_set(model, history, j)?;
    if cond.is_empty() {
        return Ok(model.sigma[(j, j)]);
    }
    let (sub_l, s_j) = factor_conditioning(model, &cond, j)?;
    let w = solve_spd(&sub_l, &s_j)?;
    Ok(model.sigma[(j, j)] - s_j.dot(&w))
}

/// Standardized conditional residual `U_tj` of coordinate `j` at `x`, given
/// the elimination history. Empty conditioning set returns
/// `x_j / sqrt(sigma_jj)`.
pub fn conditional_residual(
    model: &CovarianceModel,
    x: &DVector<f64>,
    history: &EliminationHistory,
    j: usize,
) -> Result<f64> {
    model.check_len(x.len())?;
    let (cond, _) = conditioning_set(model, history, j)?;
    if cond.is_empty() {
        return Ok(x[j] / model.sigma[(j, j)].sqrt());
    }
    let (sub_l, s_j) = factor_conditioning(model, &cond, j)?;
    let w = solve_spd(&sub_l, &s_j)?;
    let var = model.sigma[(j, j)] - s_j.dot(&w);
    let x_c = DVector::from_fn(cond.len(), |r, _| x[cond[r]]);
    Ok((x[j] - w.dot(&x_c)) / var.sqrt())
}

fn conditioning_set(
    model: &CovarianceModel,
    history: &EliminationHistory,
    j: usize,
) -> Result<(Vec<usize>, ())> {
    model.check_index(j)?;
    if history.contains(j) {
        return Err(Error::IndexInHistory { index: j });
    }
    for &h in history.as_slice() {
        if h >= model.n {
            return Err(Error::BadIndex {
                index: h,
                n: model.n,
            });
        }
    }
    let cond: Vec<usize> = (0..model.n)
        .filter(|&i| i != j && !history.contains(i))
        .collect();
    Ok((cond, ()))
}

/// Cholesky factor of `Sigma[cond, cond]` together with `Sigma[cond, j]`.
fn factor_conditioning(
    model: &CovarianceModel,
    cond: &[usize],
    j: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = cond.len();
    let sub = DMatrix::from_fn(m, m, |r, c| model.sigma[(cond[r], cond[c])]);
    let s_j = DVector::from_fn(m, |r, _| model.sigma[(cond[r], j)]);
    let chol = nalgebra::Cholesky::new(sub).ok_or(Error::NotPositiveDefinite)?;
    Ok((chol.l(), s_j))
}

fn solve_spd(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let y = l
        .solve_lower_triangular(b)
        .ok_or(Error::NotPositiveDefinite)?;
    l.tr_solve_lower_triangular(&y)
        .ok_or(Error::NotPositiveDefinite)
}

/// Surviving coordinate set at a stage plus the precision matrix of the
/// active submatrix, maintained functionally by rank-one downdates.
#[derive(Debug, Clone)]
pub struct ActiveState {
    n: usize,
    active: Vec<usize>,
    precision: DMatrix<f64>,
    history: EliminationHistory,
}

impl ActiveState {
    /// Full active set `{0..n}` with `P = inv(Sigma)`.
    pub fn full(model: &CovarianceModel) -> Result<Self> {
        Ok(Self {
            n: model.n,
            active: (0..model.n).collect(),
            precision: model.precision.clone(),
            history: EliminationHistory::empty(),
        })
    }

    /// State after eliminating `history` in order, built by downdating.
    pub fn with_history(model: &CovarianceModel, history: &EliminationHistory) -> Result<Self> {
        EliminationHistory::new(history.as_slice().to_vec(), model.n)?;
        let mut state = Self::full(model)?;
        for &k in history.as_slice() {
            state = state.downdate(k)?;
        }
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn history(&self) -> &EliminationHistory {
        &self.history
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Conditional variance of active coordinate `j`: `1 / P_jj`.
    pub fn conditional_variance_of(&self, j: usize) -> Result<f64> {
        let pos = self.position_of(j)?;
        Ok(1.0 / self.precision[(pos, pos)])
    }

    /// Residuals `(P x_A)_j / sqrt(P_jj)` for every active coordinate, in
    /// ascending coordinate order. Matches the direct conditional residual
    /// formula on the same history.
    pub fn residuals(&self, x: &DVector<f64>) -> Result<Vec<(usize, f64)>> {
        if x.len() != self.n {
            return Err(Error::InconsistentState {
                expected: self.n,
                got: x.len(),
            });
        }
        let m = self.active.len();
        let x_a = DVector::from_fn(m, |r, _| x[self.active[r]]);
        let v = &self.precision * x_a;
        Ok((0..m)
            .map(|r| (self.active[r], v[r] / self.precision[(r, r)].sqrt()))
            .collect())
    }

    /// Eliminates `k`, returning the shrunk state. The precision of the
    /// remaining block is `P_rest - p_k p_k' / P_kk`.
    pub fn downdate(&self, k: usize) -> Result<ActiveState> {
        let pos = self.position_of(k)?;
        if self.active.len() < 2 {
            return Err(Error::LastCoordinate);
        }
        let m = self.active.len();
        let keep: Vec<usize> = (0..m).filter(|&r| r != pos).collect();
        let pkk = self.precision[(pos, pos)];
        let precision = DMatrix::from_fn(m - 1, m - 1, |r, c| {
            let (i, j) = (keep[r], keep[c]);
            self.precision[(i, j)] - self.precision[(i, pos)] * self.precision[(pos, j)] / pkk
        });
        let active: Vec<usize> = keep.into_iter().map(|r| self.active[r]).collect();
        let mut history = self.history.clone();
        history.push(k);
        Ok(ActiveState {
            n: self.n,
            active,
            precision,
            history,
        })
    }

    /// Max-abs entry of `P * Sigma[A, A] - I`; the on-demand consistency
    /// check against the model.
    pub fn validate_against(&self, model: &CovarianceModel) -> f64 {
        let m = self.active.len();
        let sub = DMatrix::from_fn(m, m, |r, c| model.sigma[(self.active[r], self.active[c])]);
        let prod = &self.precision * sub;
        let mut err = 0.0_f64;
        for i in 0..m {
            for j in 0..m {
                let want = if i == j { 1.0 } else { 0.0 };
                err = err.max((prod[(i, j)] - want).abs());
            }
        }
        err
    }

    fn position_of(&self, j: usize) -> Result<usize> {
        self.active
            .iter()
            .position(|&a| a == j)
            .ok_or(Error::IndexNotActive { index: j })
    }
}

/// Fast-path residuals for every active coordinate; see
/// [`ActiveState::residuals`].
pub fn residuals_via_precision(state: &ActiveState, x: &DVector<f64>) -> Result<Vec<(usize, f64)>> {
    state.residuals(x)
}
