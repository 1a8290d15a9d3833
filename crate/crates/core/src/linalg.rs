//! Dense small-matrix kernels shared by every other module.
//!
//! Rank decisions follow one rule throughout: a singular value `σ` counts as
//! zero iff `σ <= max(rows, cols) * ε * σ_max`. Subspace bases returned here
//! are orthonormal.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_err, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Outcome of a numerical rank test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankDecision {
    pub tolerance: f64,
    pub numerical_rank: usize,
}

/// Default singular-value threshold for a `rows × cols` matrix.
pub fn default_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

pub(crate) fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn ensure_square(a: &Matrix, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(dim_err(what, "square matrix", format!("{}x{}", a.nrows(), a.ncols())))
    }
}

fn is_empty(a: &Matrix) -> bool {
    a.nrows() == 0 || a.ncols() == 0
}

/// Full SVD `A = U diag(s) Vᵀ` with `U` square `rows × rows`, `V` square
/// `cols × cols` and `s` nonincreasing.
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.s.first().cloned().unwrap_or(0.0)
    }

    pub fn default_tolerance(&self) -> f64 {
        default_tolerance(self.u.nrows(), self.v.nrows(), self.sigma_max())
    }

    /// Number of singular values strictly above `tol`.
    pub fn rank_above(&self, tol: f64) -> usize {
        self.s.iter().filter(|&&v| v > tol && v > 0.0).count()
    }
}

fn to_faer(a: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Full SVD backed by faer. nalgebra's bidiagonal SVD is avoided here: it
/// loses accuracy on exactly rank-deficient inputs, which are the normal
/// case for null-space and image computations.
pub fn svd(a: &Matrix) -> Result<Svd> {
    ensure_finite(a, "svd input")?;
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Ok(Svd {
            u: Matrix::identity(r, r),
            s: Vec::new(),
            v: Matrix::identity(c, c),
        });
    }
    let dec = to_faer(a)
        .svd()
        .map_err(|e| Error::InvalidInput(format!("svd did not converge: {e:?}")))?;
    let (fu, fs, fv) = (dec.U(), dec.S(), dec.V());
    let k = r.min(c);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| fs[j].total_cmp(&fs[i]));
    let s: Vec<f64> = order.iter().map(|&i| fs[i]).collect();
    // reorder the leading columns to follow the sorted singular values
    let perm = |j: usize| if j < k { order[j] } else { j };
    let u = Matrix::from_fn(r, r, |i, j| fu[(i, perm(j))]);
    let v = Matrix::from_fn(c, c, |i, j| fv[(i, perm(j))]);
    Ok(Svd { u, s, v })
}

fn singular_values(a: &Matrix) -> Vec<f64> {
    if is_empty(a) || !a.iter().all(|v| v.is_finite()) {
        return Vec::new();
    }
    let mut sv = to_faer(a).singular_values().unwrap_or_default();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Numerical rank of `a` under the default tolerance.
pub fn rank(a: &Matrix) -> RankDecision {
    let sv = singular_values(a);
    let smax = sv.first().cloned().unwrap_or(0.0);
    let tolerance = default_tolerance(a.nrows(), a.ncols(), smax);
    rank_decision(&sv, tolerance)
}

/// Numerical rank of `a` with an explicit absolute singular-value threshold.
pub fn rank_with_tol(a: &Matrix, tolerance: f64) -> RankDecision {
    rank_decision(&singular_values(a), tolerance)
}

fn rank_decision(sv: &[f64], tolerance: f64) -> RankDecision {
    let numerical_rank = sv.iter().filter(|&&s| s > tolerance && s > 0.0).count();
    RankDecision {
        tolerance,
        numerical_rank,
    }
}

/// Moore–Penrose pseudo-inverse via SVD.
pub fn pinv(a: &Matrix) -> Result<Matrix> {
    ensure_finite(a, "pinv input")?;
    if is_empty(a) {
        return Ok(Matrix::zeros(a.ncols(), a.nrows()));
    }
    let d = svd(a)?;
    let tol = d.default_tolerance();
    let mut out = Matrix::zeros(a.ncols(), a.nrows());
    for (k, &s) in d.s.iter().enumerate() {
        if s > tol && s > 0.0 {
            // out += v_k u_kᵀ / s
            out.ger(1.0 / s, &d.v.column(k), &d.u.column(k), 1.0);
        }
    }
    Ok(out)
}

/// Orthonormal basis of `Null(a)` under the default tolerance.
///
/// Returns a `cols × 0` matrix when the null space is trivial and the
/// identity when `a` is zero (or has no rows).
pub fn null_space_basis(a: &Matrix) -> Result<Matrix> {
    ensure_finite(a, "null space input")?;
    let d = svd(a)?;
    let tol = d.default_tolerance();
    Ok(null_from_svd(&d, tol))
}

/// Orthonormal basis of `Null(a)`, treating singular values `<= tol` as zero.
pub fn null_space_basis_tol(a: &Matrix, tol: f64) -> Result<Matrix> {
    let d = svd(a)?;
    Ok(null_from_svd(&d, tol))
}

fn null_from_svd(d: &Svd, tol: f64) -> Matrix {
    let n = d.v.nrows();
    let r = d.rank_above(tol);
    d.v.columns(r, n - r).into_owned()
}

/// Orthonormal basis of `Im(a)`; the column count equals the numerical rank.
pub fn orthonormal_image_basis(a: &Matrix) -> Result<Matrix> {
    ensure_finite(a, "image basis input")?;
    let d = svd(a)?;
    let r = d.rank_above(d.default_tolerance());
    Ok(d.u.columns(0, r).into_owned())
}

/// Returns `R` with `RᵀR = S⁻¹` (so `R S Rᵀ = I`) for symmetric positive
/// definite `S`. `R` is the inverse of the lower Cholesky factor of `S`.
pub fn cholesky_inverse_factor(s: &Matrix) -> Result<Matrix> {
    ensure_finite(s, "cholesky input")?;
    ensure_square(s, "cholesky input")?;
    let n = s.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let chol = Cholesky::new(symmetrize(s)).ok_or_else(|| Error::NotPositiveDefinite(format!("{n}x{n} covariance")))?;
    let l = chol.l();
    l.solve_lower_triangular(&Matrix::identity(n, n))
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{n}x{n} covariance (singular factor)")))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(s: &Matrix) -> Result<Matrix> {
    ensure_square(s, "spd inverse input")?;
    if s.nrows() == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let chol =
        Cholesky::new(symmetrize(s)).ok_or_else(|| Error::NotPositiveDefinite(format!("{0}x{0} matrix", s.nrows())))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

pub fn is_symmetric(a: &Matrix, tol: f64) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= tol * (1.0 + a.amax())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(a)).eigenvalues.iter().cloned().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(a: &Matrix) -> f64 {
    symmetric_eigenvalues(a).first().cloned().unwrap_or(0.0)
}

/// `A ⪰ B` up to `tol`: the smallest eigenvalue of `A − B` is at least `−tol`.
pub fn psd_geq(a: &Matrix, b: &Matrix, tol: f64) -> Result<bool> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(dim_err(
            "psd_geq",
            format!("{:?} square", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(min_eigenvalue(&(a - b)) >= -tol)
}

/// Tolerance used for PSD comparisons of two operands: `1e-9 · (1 + ‖·‖)`.
pub fn psd_tolerance(a: &Matrix, b: &Matrix) -> f64 {
    1e-9 * (1.0 + a.norm().max(b.norm()))
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// `I_t ⊗ a`.
pub fn identity_kron(t: usize, a: &Matrix) -> Matrix {
    let (r, c) = a.shape();
    let mut out = Matrix::zeros(t * r, t * c);
    for k in 0..t {
        out.view_mut((k * r, k * c), (r, c)).copy_from(a);
    }
    out
}

pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `e^{A}` by scaling and squaring with a Padé approximant.
pub fn matrix_exponential(a: &Matrix) -> Result<Matrix> {
    ensure_finite(a, "matrix exponential input")?;
    ensure_square(a, "matrix exponential input")?;
    if a.nrows() == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    Ok(a.exp())
}

/// `(e^{A·ts}, ∫₀^{ts} e^{Aτ} dτ)` from one exponential of the augmented
/// matrix `[[A, I], [0, 0]]·ts`. No inverse of `A` is needed.
pub fn exp_with_integral(a: &Matrix, ts: f64) -> Result<(Matrix, Matrix)> {
    ensure_finite(a, "exp_integral input")?;
    ensure_square(a, "exp_integral input")?;
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::InvalidInput(format!("sampling time must be positive, got {ts}")));
    }
    let n = a.nrows();
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    aug.view_mut((0, n), (n, n)).scale_mut(ts);
    let e = matrix_exponential(&aug)?;
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, n)).into_owned()))
}

/// `∫₀^{ts} e^{Aτ} dτ`.
pub fn exp_integral(a: &Matrix, ts: f64) -> Result<Matrix> {
    exp_with_integral(a, ts).map(|(_, g)| g)
}

/// Spectrum of the symmetric PSD pencil `(M1, M2)`.
///
/// The common null space `Null(M1) ∩ Null(M2)` is deflated first. Directions
/// with `M2 v = 0` but `M1 v ≠ 0` are infinite eigenvalues and are counted in
/// `infinite` rather than listed. Finite eigenvectors are normalized to
/// `vᵀ M2 v = 1`, so `vᵀ M1 v = μ`.
#[derive(Debug, Clone)]
pub struct PencilSpectrum {
    /// Finite generalized eigenvalues, ascending.
    pub finite: Vec<f64>,
    /// Column `k` pairs with `finite[k]`.
    pub vectors: Matrix,
    pub infinite: usize,
    /// Directions spanning the infinite part, normalized to `vᵀ M1 v = 1`.
    pub infinite_vectors: Matrix,
}

impl PencilSpectrum {
    pub fn mu_min(&self) -> f64 {
        self.finite.first().cloned().unwrap_or(f64::NAN)
    }

    /// Largest eigenvalue; `+∞` when the pencil has infinite eigenvalues.
    pub fn mu_max(&self) -> f64 {
        if self.infinite > 0 {
            f64::INFINITY
        } else {
            self.finite.last().cloned().unwrap_or(f64::NAN)
        }
    }

    pub fn mu_max_finite(&self) -> f64 {
        self.finite.last().cloned().unwrap_or(f64::NAN)
    }
}

/// Finite generalized eigenvalues of the PSD pencil `(M1, M2)`, ascending.
pub fn generalized_eigenvalues(m1: &Matrix, m2: &Matrix) -> Result<Vec<f64>> {
    generalized_eigen(m1, m2).map(|s| s.finite)
}

/// Full pencil solve for symmetric PSD `M1`, `M2`.
pub fn generalized_eigen(m1: &Matrix, m2: &Matrix) -> Result<PencilSpectrum> {
    ensure_finite(m1, "pencil M1")?;
    ensure_finite(m2, "pencil M2")?;
    ensure_square(m1, "pencil M1")?;
    if m1.shape() != m2.shape() {
        return Err(dim_err(
            "pencil",
            format!("{:?}", m1.shape()),
            format!("{:?}", m2.shape()),
        ));
    }
    // One cut-off for both: truncating each at its own scale can keep a
    // rounding-level direction in one matrix that the other dropped.
    let n = m1.nrows();
    let scale = symmetric_eigenvalues(m1)
        .into_iter()
        .chain(symmetric_eigenvalues(m2))
        .fold(0.0, f64::max);
    let tol = n as f64 * f64::EPSILON * scale;
    // entries known to ~ε·scale resolve factor directions only down to √tol
    pencil_from_factors_tol(&psd_factor_tol(m1, tol), &psd_factor_tol(m2, tol), Some(tol.sqrt()))
}

/// Factor `G` with `GᵀG = P` for symmetric PSD `P`; eigenvalues at or below
/// `n·ε·λ_max` (and negative rounding noise) are dropped, so `G` has full row
/// rank equal to the numerical rank of `P`.
pub fn psd_factor(p: &Matrix) -> Matrix {
    let lmax = symmetric_eigenvalues(p).into_iter().fold(0.0, f64::max);
    psd_factor_tol(p, p.nrows() as f64 * f64::EPSILON * lmax)
}

/// [`psd_factor`] with an explicit eigenvalue cut-off.
pub fn psd_factor_tol(p: &Matrix, tol: f64) -> Matrix {
    let n = p.nrows();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(p));
    let keep: Vec<usize> = (0..n)
        .filter(|&k| eig.eigenvalues[k] > tol && eig.eigenvalues[k] > 0.0)
        .collect();
    let mut g = Matrix::zeros(keep.len(), n);
    for (row, &k) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[k].sqrt();
        g.set_row(row, &(eig.eigenvectors.column(k).transpose() * scale));
    }
    g
}

/// Pencil `(G1ᵀG1, G2ᵀG2)` solved from its factors. Ranks are decided on the
/// factors with the SVD rule, which is far sharper than thresholding the
/// eigenvalues of the products.
pub fn pencil_from_factors(g1: &Matrix, g2: &Matrix) -> Result<PencilSpectrum> {
    pencil_from_factors_tol(g1, g2, None)
}

/// [`pencil_from_factors`] with an explicit singular-value cut-off for the
/// rank decisions; `None` uses the default SVD rule.
pub fn pencil_from_factors_tol(g1: &Matrix, g2: &Matrix, tol: Option<f64>) -> Result<PencilSpectrum> {
    ensure_finite(g1, "pencil factor G1")?;
    ensure_finite(g2, "pencil factor G2")?;
    if g1.ncols() != g2.ncols() {
        return Err(dim_err("pencil factors", g1.ncols(), g2.ncols()));
    }
    let n = g1.ncols();
    let mut stacked = Matrix::zeros(g1.nrows() + g2.nrows(), n);
    stacked.rows_mut(0, g1.nrows()).copy_from(g1);
    stacked.rows_mut(g1.nrows(), g2.nrows()).copy_from(g2);

    // W = V_r Σ_r⁻¹ whitens G1ᵀG1 + G2ᵀG2 on its range.
    let d = svd(&stacked)?;
    // Factors of nested forms usually differ by roundoff only, and a
    // machine-precision cut lets that difference through as a spurious
    // direction, so the default cut sits at √ε of the joint scale.
    let tol = tol.unwrap_or_else(|| f64::EPSILON.sqrt() * d.sigma_max());
    let rank2 = rank_with_tol(g2, tol).numerical_rank;
    if rank2 == 0 {
        return Err(Error::EmptyPencil);
    }
    let r = d.rank_above(tol);
    let mut w = Matrix::zeros(n, r);
    for k in 0..r {
        w.set_column(k, &(d.v.column(k) / d.s[k]));
    }
    let h1 = g1 * &w;
    let h2 = g2 * &w;
    let c1 = symmetrize(&(h1.transpose() * &h1));
    let eig = SymmetricEigen::new(c1);

    // θ = yᵀC1y ∈ [0,1]; the `r − rank2` largest belong to the infinite part.
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let infinite = r.saturating_sub(rank2);
    let finite_count = r - infinite;

    let mut pairs: Vec<(f64, Vector)> = order[..finite_count]
        .iter()
        .map(|&k| {
            let y = eig.eigenvectors.column(k).into_owned();
            let a = (&h1 * &y).norm_squared();
            let b = (&h2 * &y).norm_squared();
            let v = &w * &y / b.sqrt();
            (a / b, v)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut vectors = Matrix::zeros(n, finite_count);
    for (col, (_, v)) in pairs.iter().enumerate() {
        vectors.set_column(col, v);
    }
    let mut infinite_vectors = Matrix::zeros(n, infinite);
    for (col, &k) in order[finite_count..].iter().enumerate() {
        let y = eig.eigenvectors.column(k).into_owned();
        let a = (&h1 * &y).norm_squared();
        infinite_vectors.set_column(col, &(&w * &y / a.sqrt()));
    }
    Ok(PencilSpectrum {
        finite: pairs.into_iter().map(|(mu, _)| mu).collect(),
        vectors,
        infinite,
        infinite_vectors,
    })
}
