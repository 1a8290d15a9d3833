//! Measurement-limiting privacy mechanisms `ỹ = S·y + r̃` and the error
//! covariance based privacy ordering between them.

use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    identity_kron, is_symmetric, min_eigenvalue, pinv, psd_tolerance, rank, spd_inverse, symmetrize, Matrix, Vector,
};

/// Shares `S·y(k)` plus white Gaussian noise with covariance `sigma_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyMechanism {
    pub s: Matrix,
    pub sigma_r: Matrix,
}

impl PrivacyMechanism {
    /// Validates that `s` has full row rank and `sigma_r` is symmetric PSD.
    /// A selection with zero rows (nothing shared) is allowed.
    pub fn new(s: Matrix, sigma_r: Matrix) -> Result<Self> {
        let m = s.nrows();
        if sigma_r.shape() != (m, m) {
            return Err(dim_err(
                "mechanism noise covariance",
                format!("{m}x{m}"),
                format!("{:?}", sigma_r.shape()),
            ));
        }
        if !s.iter().chain(sigma_r.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("mechanism has non-finite entries".into()));
        }
        if m > 0 && rank(&s).numerical_rank != m {
            return Err(Error::InvalidInput(format!(
                "selection matrix ({m} rows) is not full row rank"
            )));
        }
        if m > 0 {
            if !is_symmetric(&sigma_r, 1e-12) {
                return Err(Error::InvalidInput(
                    "mechanism noise covariance is not symmetric".into(),
                ));
            }
            if min_eigenvalue(&sigma_r) < -1e-12 * (1.0 + sigma_r.norm()) {
                return Err(Error::InvalidInput("mechanism noise covariance is not PSD".into()));
            }
        }
        Ok(Self {
            s,
            sigma_r: symmetrize(&sigma_r),
        })
    }

    /// `S = I`, no added noise.
    pub fn full_sharing(p: usize) -> Self {
        Self {
            s: Matrix::identity(p, p),
            sigma_r: Matrix::zeros(p, p),
        }
    }

    /// Shares nothing.
    pub fn silent(p: usize) -> Self {
        Self {
            s: Matrix::zeros(0, p),
            sigma_r: Matrix::zeros(0, 0),
        }
    }

    /// Shares the measurement components listed in `rows` with isotropic
    /// added noise of variance `noise_var`.
    pub fn select(p: usize, rows: &[usize], noise_var: f64) -> Result<Self> {
        let mut s = Matrix::zeros(rows.len(), p);
        for (r, &k) in rows.iter().enumerate() {
            if k >= p {
                return Err(Error::InvalidInput(format!(
                    "selected component {k} out of range for {p} outputs"
                )));
            }
            s[(r, k)] = 1.0;
        }
        Self::new(s, Matrix::identity(rows.len(), rows.len()) * noise_var)
    }

    pub fn output_dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn shared_dim(&self) -> usize {
        self.s.nrows()
    }

    /// Further limits the shared stream: `ỹ₂ = S·ỹ + n`, `n ~ N(0, Σ_n)`.
    pub fn post_process(&self, s: &Matrix, sigma_n: &Matrix) -> Result<Self> {
        if s.ncols() != self.shared_dim() {
            return Err(dim_err("post-processing selection", self.shared_dim(), s.ncols()));
        }
        Self::new(s * &self.s, s * &self.sigma_r * s.transpose() + sigma_n)
    }

    /// Per-step covariance of the shared noise `S Σ_v Sᵀ + Σ_r`.
    pub fn shared_noise_cov(&self, sigma_v: &Matrix) -> Result<Matrix> {
        if sigma_v.shape() != (self.output_dim(), self.output_dim()) {
            return Err(dim_err(
                "measurement noise covariance",
                format!("{0}x{0}", self.output_dim()),
                format!("{:?}", sigma_v.shape()),
            ));
        }
        Ok(symmetrize(&(&self.s * sigma_v * self.s.transpose() + &self.sigma_r)))
    }
}

/// What an adversary can learn about one subsystem's stacked states from
/// its shared stream over a horizon.
#[derive(Debug, Clone)]
pub struct PrivacyAssessment {
    /// `I_T ⊗ S C`.
    pub h: Matrix,
    /// `I_T ⊗ (S Σ_v Sᵀ + Σ_r)`.
    pub sigma_r: Matrix,
    pub sigma_r_inv: Matrix,
    /// `Hᵀ Σ_r⁻¹ H`.
    pub h_tilde: Matrix,
    /// Projector onto the estimable state subspace.
    pub projector: Matrix,
    /// Error covariance of the projected estimate, `H̃⁺`.
    pub sigma_e: Matrix,
    pub rank_s: usize,
    pub horizon: usize,
}

pub fn assess(mechanism: &PrivacyMechanism, c: &Matrix, sigma_v: &Matrix, horizon: usize) -> Result<PrivacyAssessment> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    if c.nrows() != mechanism.output_dim() {
        return Err(dim_err("output matrix rows", mechanism.output_dim(), c.nrows()));
    }
    let per_step = mechanism.shared_noise_cov(sigma_v)?;
    let per_step_inv = spd_inverse(&per_step)?;
    let sc = &mechanism.s * c;
    let h = identity_kron(horizon, &sc);
    let sigma_r = identity_kron(horizon, &per_step);
    let sigma_r_inv = identity_kron(horizon, &per_step_inv);
    let h_tilde = symmetrize(&(h.transpose() * &sigma_r_inv * &h));
    let sigma_e = symmetrize(&pinv(&h_tilde)?);
    let projector = symmetrize(&(&sigma_e * &h_tilde));
    Ok(PrivacyAssessment {
        h,
        sigma_r,
        sigma_r_inv,
        h_tilde,
        projector,
        sigma_e,
        rank_s: mechanism.shared_dim(),
        horizon,
    })
}

/// Minimum-norm weighted least-squares state estimate `H̃⁺ Hᵀ Σ_r⁻¹ ỹ` from
/// the stacked shared stream.
pub fn ml_state_estimate(shared: &Vector, assessment: &PrivacyAssessment) -> Result<Vector> {
    if shared.len() != assessment.h.nrows() {
        return Err(dim_err("stacked shared stream", assessment.h.nrows(), shared.len()));
    }
    Ok(&assessment.sigma_e * assessment.h.transpose() * &assessment.sigma_r_inv * shared)
}

/// Why a mechanism failed to be more private than another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderingFailure {
    /// The candidate shares a direction the reference does not.
    SubspaceNotNested,
    /// The projected error covariance comparison fails; carries the most
    /// negative eigenvalue of the difference.
    CovarianceNotDominated { min_eigenvalue: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderingVerdict {
    MorePrivate,
    NotMorePrivate(OrderingFailure),
    /// Neither shared subspace contains the other; the ordering is not
    /// defined for such pairs.
    Incomparable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingCertificate {
    pub verdict: OrderingVerdict,
    /// `Im(S₂ᵀ) ⊆ Im(S₁ᵀ)`.
    pub subspace_nested: bool,
    /// Smallest eigenvalue of `Σ_e⁽²⁾ − P⁽²⁾Σ_e⁽¹⁾P⁽²⁾` when the subspaces nest.
    pub min_eigenvalue: Option<f64>,
    pub tolerance: f64,
}

impl OrderingCertificate {
    pub fn holds(&self) -> bool {
        self.verdict == OrderingVerdict::MorePrivate
    }
}

/// `Im(aᵀ) ⊆ Im(bᵀ)` for row-selection matrices with the same column count.
pub fn row_space_contained(a: &Matrix, b: &Matrix) -> bool {
    if a.nrows() == 0 {
        return true;
    }
    let mut stacked = Matrix::zeros(a.nrows() + b.nrows(), a.ncols());
    stacked.rows_mut(0, b.nrows()).copy_from(b);
    stacked.rows_mut(b.nrows(), a.nrows()).copy_from(a);
    rank(&stacked).numerical_rank == rank(b).numerical_rank
}

/// Is `m2` more private than `m1` for the subsystem with output matrix `c`
/// and measurement noise `sigma_v` over `horizon` steps?
///
/// `tol` overrides the default PSD tolerance `1e-9·(1 + ‖operands‖)`.
pub fn is_more_private(
    m2: &PrivacyMechanism,
    m1: &PrivacyMechanism,
    c: &Matrix,
    sigma_v: &Matrix,
    horizon: usize,
    tol: Option<f64>,
) -> Result<OrderingCertificate> {
    if m1.output_dim() != m2.output_dim() {
        return Err(dim_err("mechanism output dimension", m1.output_dim(), m2.output_dim()));
    }
    let nested = row_space_contained(&m2.s, &m1.s);
    if !nested {
        let reverse = row_space_contained(&m1.s, &m2.s);
        return Ok(OrderingCertificate {
            verdict: if reverse {
                OrderingVerdict::NotMorePrivate(OrderingFailure::SubspaceNotNested)
            } else {
                OrderingVerdict::Incomparable
            },
            subspace_nested: false,
            min_eigenvalue: None,
            tolerance: tol.unwrap_or(0.0),
        });
    }
    let a1 = assess(m1, c, sigma_v, horizon)?;
    let a2 = assess(m2, c, sigma_v, horizon)?;
    let projected = &a2.projector * &a1.sigma_e * &a2.projector;
    let tolerance = tol.unwrap_or_else(|| psd_tolerance(&a2.sigma_e, &projected));
    let gap = min_eigenvalue(&(&a2.sigma_e - &projected));
    let verdict = if gap >= -tolerance {
        OrderingVerdict::MorePrivate
    } else {
        OrderingVerdict::NotMorePrivate(OrderingFailure::CovarianceNotDominated { min_eigenvalue: gap })
    };
    Ok(OrderingCertificate {
        verdict,
        subspace_nested: true,
        min_eigenvalue: Some(gap),
        tolerance,
    })
}

/// Noise-domination test `Σ_r⁽²⁾ ⪰ P Σ_r⁽¹⁾ Pᵀ` with `P = S₂S₁⁺`. Returns
/// false when the shared subspaces do not nest.
pub fn check_sufficient_condition(m1: &PrivacyMechanism, m2: &PrivacyMechanism) -> Result<bool> {
    if m1.output_dim() != m2.output_dim() {
        return Err(dim_err("mechanism output dimension", m1.output_dim(), m2.output_dim()));
    }
    if !row_space_contained(&m2.s, &m1.s) {
        return Ok(false);
    }
    if m2.shared_dim() == 0 {
        return Ok(true);
    }
    let p = &m2.s * pinv(&m1.s)?;
    let mapped = &p * &m1.sigma_r * p.transpose();
    let tol = psd_tolerance(&m2.sigma_r, &mapped);
    Ok(min_eigenvalue(&(&m2.sigma_r - &mapped)) >= -tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&Vector::from_row_slice(v))
    }

    fn example_pair(alpha: f64) -> (PrivacyMechanism, PrivacyMechanism) {
        let m1 = PrivacyMechanism::new(Matrix::identity(2, 2), Matrix::identity(2, 2)).unwrap();
        let m2 = PrivacyMechanism::new(Matrix::from_row_slice(1, 2, &[1.0, 0.0]), diag(&[alpha])).unwrap();
        (m1, m2)
    }

    #[test]
    fn two_state_example_covariances() {
        let i2 = Matrix::identity(2, 2);
        for &alpha in &[0.0, 0.5, 1.0, 2.0] {
            let (m1, m2) = example_pair(alpha);
            let a1 = assess(&m1, &i2, &i2, 1).unwrap();
            let a2 = assess(&m2, &i2, &i2, 1).unwrap();
            assert!((&a1.sigma_e - &i2 * 2.0).amax() < 1e-12);
            assert!((&a2.sigma_e - diag(&[1.0 + alpha, 0.0])).amax() < 1e-12);
            assert!((&a2.projector - diag(&[1.0, 0.0])).amax() < 1e-12);
        }
    }

    #[test]
    fn two_state_example_ordering() {
        let i2 = Matrix::identity(2, 2);
        for &(alpha, want) in &[(0.5, false), (1.0, true), (2.0, true)] {
            let (m1, m2) = example_pair(alpha);
            let cert = is_more_private(&m2, &m1, &i2, &i2, 1, None).unwrap();
            assert_eq!(cert.holds(), want, "alpha = {alpha}");
            if !want {
                assert!(matches!(
                    cert.verdict,
                    OrderingVerdict::NotMorePrivate(OrderingFailure::CovarianceNotDominated { .. })
                ));
            }
        }
        let (m1, _) = example_pair(1.0);
        assert!(is_more_private(&m1, &m1, &i2, &i2, 1, None).unwrap().holds());
    }

    #[test]
    fn estimate_examples() {
        let i2 = Matrix::identity(2, 2);
        let (m1, _) = example_pair(1.0);
        let a1 = assess(&m1, &i2, &i2, 1).unwrap();
        let y = Vector::from_row_slice(&[0.3, -1.2]);
        assert!((ml_state_estimate(&y, &a1).unwrap() - &y).amax() < 1e-14);
        assert_eq!(ml_state_estimate(&Vector::zeros(2), &a1).unwrap().amax(), 0.0);
    }

    #[test]
    fn plain_noise_floor() {
        let a = assess(
            &PrivacyMechanism::full_sharing(3),
            &Matrix::identity(3, 3),
            &Matrix::identity(3, 3),
            2,
        )
        .unwrap();
        assert!((a.sigma_e - Matrix::identity(6, 6)).amax() < 1e-14);
    }

    #[test]
    fn silent_mechanism_reveals_nothing() {
        let a = assess(
            &PrivacyMechanism::silent(2),
            &Matrix::identity(2, 2),
            &Matrix::identity(2, 2),
            2,
        )
        .unwrap();
        assert_eq!(a.h.nrows(), 0);
        assert_eq!(a.projector.amax(), 0.0);
        let (m1, _) = example_pair(1.0);
        let i2 = Matrix::identity(2, 2);
        assert!(is_more_private(&PrivacyMechanism::silent(2), &m1, &i2, &i2, 1, None)
            .unwrap()
            .holds());
    }

    #[test]
    fn incomparable_when_subspaces_cross() {
        let i2 = Matrix::identity(2, 2);
        let a = PrivacyMechanism::select(2, &[0], 1.0).unwrap();
        let b = PrivacyMechanism::select(2, &[1], 1.0).unwrap();
        let cert = is_more_private(&a, &b, &i2, &i2, 1, None).unwrap();
        assert_eq!(cert.verdict, OrderingVerdict::Incomparable);
        let full = PrivacyMechanism::full_sharing(2);
        let cert = is_more_private(&full, &a, &i2, &i2, 1, None).unwrap();
        assert_eq!(
            cert.verdict,
            OrderingVerdict::NotMorePrivate(OrderingFailure::SubspaceNotNested)
        );
    }

    #[test]
    fn rejects_rank_deficient_selection() {
        let s = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert!(PrivacyMechanism::new(s, Matrix::zeros(2, 2)).is_err());
    }

    fn random_mechanism(rng: &mut ChaCha8Rng, p: usize) -> PrivacyMechanism {
        let m = rng.random_range(1..=p);
        let s = Matrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
        let g = Matrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        PrivacyMechanism::new(s, &g * g.transpose() * rng.random_range(0.0..2.0)).unwrap()
    }

    #[test]
    fn post_processing_always_more_private() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let p = rng.random_range(1..6);
            let n = rng.random_range(1..5);
            let t = rng.random_range(1..4);
            let c = Matrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
            let gv = Matrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            let sigma_v = &gv * gv.transpose() + Matrix::identity(p, p) * 0.2;
            let m1 = random_mechanism(&mut rng, p);
            let k = rng.random_range(1..=m1.shared_dim());
            let s = Matrix::from_fn(k, m1.shared_dim(), |_, _| rng.random_range(-1.0..1.0));
            let gn = Matrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let m2 = m1
                .post_process(&s, &(&gn * gn.transpose() * rng.random_range(0.0..1.0)))
                .unwrap();
            assert!(check_sufficient_condition(&m1, &m2).unwrap());
            assert!(is_more_private(&m2, &m1, &c, &sigma_v, t, None).unwrap().holds());
        }
    }

    #[test]
    fn estimate_matches_normal_equations_on_full_rank_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let n = rng.random_range(1..4);
            let p = n + rng.random_range(0..3);
            let c = Matrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
            let m = PrivacyMechanism::full_sharing(p);
            let gv = Matrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            let sigma_v = &gv * gv.transpose() + Matrix::identity(p, p) * 0.3;
            let a = assess(&m, &c, &sigma_v, 1).unwrap();
            let y = Vector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
            // brute-force: solve (CᵀΣ⁻¹C) x = CᵀΣ⁻¹y by LU
            let w = sigma_v.clone().try_inverse().unwrap();
            let normal = c.transpose() * &w * &c;
            let rhs = c.transpose() * &w * &y;
            let want = normal.lu().solve(&rhs).unwrap();
            let got = ml_state_estimate(&y, &a).unwrap();
            assert!((&got - &want).amax() < 1e-8 * (1.0 + want.amax()), "{got} {want}");
        }
    }
}
