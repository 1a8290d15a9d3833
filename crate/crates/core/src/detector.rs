//! Local batch attack detector: stacks a subsystem's own outputs and the
//! limited streams it receives, removes the unknown interconnection
//! component, and runs a chi-square GLRT on what remains.

use crate::chi2::{chi2_quantile, detection_probability, DetectionCurvePoint};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    block_diag, cholesky_inverse_factor, default_tolerance, identity_kron, null_space_basis, null_space_basis_tol,
    pinv, rank_with_tol, spd_inverse, svd, symmetrize, Matrix, Vector,
};
use crate::privacy::PrivacyMechanism;
use crate::system::{stack, InterconnectedSystem, Trajectory};

/// Lower block-Toeplitz map with blocks `C A^{r−c} Z` for `r ≥ c`.
pub fn structural(z: &Matrix, c: &Matrix, a: &Matrix, horizon: usize) -> Result<Matrix> {
    if a.nrows() != a.ncols() || c.ncols() != a.nrows() || z.nrows() != a.nrows() {
        return Err(dim_err(
            "structural map",
            format!("C p×{0}, A {0}×{0}, Z {0}×m", a.nrows()),
            format!("C {:?}, A {:?}, Z {:?}", c.shape(), a.shape(), z.shape()),
        ));
    }
    let (p, m) = (c.nrows(), z.ncols());
    let mut blocks = Vec::with_capacity(horizon);
    let mut power = Matrix::identity(a.nrows(), a.nrows());
    for _ in 0..horizon {
        blocks.push(c * &power * z);
        power = a * power;
    }
    let mut f = Matrix::zeros(p * horizon, m * horizon);
    for r in 0..horizon {
        for col in 0..=r {
            f.view_mut((r * p, col * m), (p, m)).copy_from(&blocks[r - col]);
        }
    }
    Ok(f)
}

/// Stacked measurement model seen by one detector over a horizon.
#[derive(Debug, Clone)]
pub struct BatchModel {
    pub horizon: usize,
    pub detector: usize,
    /// Interconnection map `F(B)`.
    pub f_x: Matrix,
    /// `F(I)`, acting on the stacked state-level attack.
    pub f_a: Matrix,
    pub f_w: Matrix,
    /// `[C A; C A²; …; C Aᵀ]`.
    pub o: Matrix,
    /// `I_T ⊗ S₋ C₋`.
    pub h: Matrix,
    pub sigma_vl: Matrix,
    pub sigma_vr: Matrix,
    pub sigma_vr_inv: Matrix,
}

impl BatchModel {
    pub fn local_state_dim(&self) -> usize {
        self.f_a.ncols() / self.horizon
    }
}

/// Builds the stacked model for subsystem `detector`. `mechanisms` has one
/// entry per subsystem; the detector's own entry is ignored.
pub fn batch_model(
    system: &InterconnectedSystem,
    mechanisms: &[PrivacyMechanism],
    detector: usize,
    horizon: usize,
) -> Result<BatchModel> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    if detector >= system.len() {
        return Err(Error::InvalidInput(format!("detector index {detector} out of range")));
    }
    if mechanisms.len() != system.len() {
        return Err(dim_err("mechanism count", system.len(), mechanisms.len()));
    }
    let me = system.subsystem(detector);
    let n1 = me.state_dim();
    let f_x = structural(&me.b, &me.c, &me.a, horizon)?;
    let f_a = structural(&Matrix::identity(n1, n1), &me.c, &me.a, horizon)?;
    let f_w = f_a.clone();
    let p1 = me.output_dim();
    let mut o = Matrix::zeros(p1 * horizon, n1);
    let mut power = me.a.clone();
    for k in 0..horizon {
        o.view_mut((k * p1, 0), (p1, n1)).copy_from(&(&me.c * &power));
        power = &me.a * power;
    }
    let sigma_vl = symmetrize(
        &(&o * &me.sigma_x0 * o.transpose()
            + &f_w * identity_kron(horizon, &me.sigma_w) * f_w.transpose()
            + identity_kron(horizon, &me.sigma_v)),
    );

    let mut sc = Vec::new();
    let mut shared_cov = Vec::new();
    for (j, m) in mechanisms.iter().enumerate() {
        if j == detector {
            continue;
        }
        let s = system.subsystem(j);
        if m.output_dim() != s.output_dim() {
            return Err(dim_err(
                &format!("selection columns of subsystem {j}"),
                s.output_dim(),
                m.output_dim(),
            ));
        }
        sc.push(&m.s * &s.c);
        shared_cov.push(m.shared_noise_cov(&s.sigma_v)?);
    }
    let h = identity_kron(horizon, &block_diag(&sc));
    let per_step = block_diag(&shared_cov);
    let per_step_inv =
        spd_inverse(&per_step).map_err(|_| Error::NotPositiveDefinite("shared-stream noise covariance".into()))?;
    Ok(BatchModel {
        horizon,
        detector,
        f_x,
        f_a,
        f_w,
        o,
        h,
        sigma_vl,
        sigma_vr: identity_kron(horizon, &per_step),
        sigma_vr_inv: identity_kron(horizon, &per_step_inv),
    })
}

/// Stacked outputs: `y_l` holds the detector's outputs for `k = 1..T`,
/// `y_r` the received streams for `k = 0..T−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub y_l: Vector,
    pub y_r: Vector,
}

/// Collects the measurements of one batch from a trajectory and the shared
/// streams produced by [`crate::system::apply_privacy`].
pub fn collect(trajectory: &Trajectory, shared: &[Vec<Vector>], detector: usize) -> Result<Measurements> {
    let t = trajectory.horizon;
    let y_l = trajectory.local_outputs(detector);
    let mut per_step = Vec::with_capacity(t);
    for k in 0..t {
        let parts: Vec<Vector> = shared
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != detector)
            .map(|(j, s)| {
                s.get(k)
                    .cloned()
                    .ok_or_else(|| dim_err(&format!("shared stream length of subsystem {j}"), t, s.len()))
            })
            .collect::<Result<_>>()?;
        per_step.push(stack(&parts));
    }
    Ok(Measurements {
        y_l,
        y_r: stack(&per_step),
    })
}

/// Model plus one batch of data.
#[derive(Debug, Clone)]
pub struct AggregatedBatch {
    pub model: BatchModel,
    pub measurements: Measurements,
}

pub fn aggregate(
    system: &InterconnectedSystem,
    trajectory: &Trajectory,
    shared: &[Vec<Vector>],
    mechanisms: &[PrivacyMechanism],
    detector: usize,
) -> Result<AggregatedBatch> {
    let model = batch_model(system, mechanisms, detector, trajectory.horizon)?;
    let measurements = collect(trajectory, shared, detector)?;
    if measurements.y_r.len() != model.h.nrows() {
        return Err(dim_err(
            "stacked shared measurements",
            model.h.nrows(),
            measurements.y_r.len(),
        ));
    }
    Ok(AggregatedBatch { model, measurements })
}

/// Everything needed to process a batch and test it.
#[derive(Debug, Clone)]
pub struct DetectionSetup {
    /// Orthonormal basis of the left null space of the unestimable
    /// interconnection map.
    pub m: Matrix,
    pub h_tilde: Matrix,
    pub h_tilde_pinv: Matrix,
    pub sigma_vp: Matrix,
    /// `RᵀR = Σ_vP⁻¹`.
    pub r: Matrix,
    /// `Mᵀ F_a`.
    pub m_fa: Matrix,
    /// Orthonormal basis of `Im(R Mᵀ F_a)`.
    pub u: Matrix,
    pub q: usize,
    /// `Uᵀ R Mᵀ F_a`, a full-row-rank factor of `Λ`.
    pub lambda_factor: Matrix,
    /// `F_aᵀ M Σ_vP⁻¹ Mᵀ F_a`.
    pub lambda: Matrix,
    /// `Uᵀ R`: the statistic is `‖Uᵀ R z‖²`.
    pub test_matrix: Matrix,
    /// `Mᵀ F_x H̃⁺ Hᵀ Σ_vR⁻¹`, the known-input correction applied to `y_r`.
    pub shared_gain: Matrix,
}

impl DetectionSetup {
    pub fn processed_dim(&self) -> usize {
        self.m.ncols()
    }

    /// Same setup with the elimination basis replaced by `M W` for an
    /// invertible `W`.
    pub fn with_basis_change(&self, model: &BatchModel, w: &Matrix) -> Result<Self> {
        build_setup_with_basis(model, &self.m * w, self.h_tilde.clone(), self.h_tilde_pinv.clone())
    }
}

/// `H̃`, `M`, `Σ_vP`, `R`, `q`, `Λ` for a batch model.
pub fn build_setup(model: &BatchModel) -> Result<DetectionSetup> {
    let h_tilde = symmetrize(&(model.h.transpose() * &model.sigma_vr_inv * &model.h));
    let h_tilde_pinv = symmetrize(&pinv(&h_tilde)?);
    // I − H̃⁺H̃ projects onto Null(H); use an orthonormal basis of it directly.
    let null_h = null_space_basis(&model.h)?;
    let unknown = &model.f_x * &null_h;
    let fx_scale = svd(&model.f_x)?.sigma_max();
    let tol = default_tolerance(unknown.nrows(), unknown.ncols(), fx_scale);
    let m = if unknown.ncols() == 0 {
        Matrix::identity(model.f_x.nrows(), model.f_x.nrows())
    } else {
        null_space_basis_tol(&unknown.transpose(), tol)?
    };
    build_setup_with_basis(model, m, h_tilde, h_tilde_pinv)
}

fn build_setup_with_basis(
    model: &BatchModel,
    m: Matrix,
    h_tilde: Matrix,
    h_tilde_pinv: Matrix,
) -> Result<DetectionSetup> {
    if m.ncols() == 0 {
        return Err(Error::DegenerateSetup);
    }
    let mt = m.transpose();
    let mfx = &mt * &model.f_x;
    let sigma_vp = symmetrize(&(&mt * &model.sigma_vl * &m + &mfx * &h_tilde_pinv * mfx.transpose()));
    let r = cholesky_inverse_factor(&sigma_vp)?;
    let m_fa = &mt * &model.f_a;
    let rm = &r * &m_fa;
    // Rank is judged against the scale of the unprojected maps so that
    // round-off left by the elimination does not count as signal.
    let scale = svd(&model.f_a)?.sigma_max() * svd(&m)?.sigma_max();
    let q = rank_with_tol(&m_fa, default_tolerance(m_fa.nrows(), m_fa.ncols(), scale)).numerical_rank;
    let u = svd(&rm)?.u.columns(0, q).into_owned();
    let lambda_factor = u.transpose() * &rm;
    let lambda = symmetrize(&(rm.transpose() * &rm));
    let test_matrix = u.transpose() * &r;
    let shared_gain = &mfx * &h_tilde_pinv * model.h.transpose() * &model.sigma_vr_inv;
    Ok(DetectionSetup {
        m,
        h_tilde,
        h_tilde_pinv,
        sigma_vp,
        r,
        m_fa,
        u,
        q,
        lambda_factor,
        lambda,
        test_matrix,
        shared_gain,
    })
}

/// Whether every attack direction lies in the interconnection subspace the
/// shared streams cannot resolve, in which case elimination removes it.
pub fn undetectable(b_attack: &Matrix, b: &Matrix, s_minus: &Matrix, c_minus: &Matrix) -> Result<bool> {
    let sc = s_minus * c_minus;
    if sc.ncols() != b.ncols() {
        return Err(dim_err("shared map columns", b.ncols(), sc.ncols()));
    }
    if b_attack.nrows() != b.nrows() {
        return Err(dim_err("attack input rows", b.nrows(), b_attack.nrows()));
    }
    let n = b.ncols();
    let resolved = if sc.nrows() == 0 {
        Matrix::zeros(n, n)
    } else {
        pinv(&sc)? * &sc
    };
    let hidden = b * (Matrix::identity(n, n) - resolved);
    let mut joint = Matrix::zeros(b.nrows(), hidden.ncols() + b_attack.ncols());
    joint.columns_mut(0, hidden.ncols()).copy_from(&hidden);
    joint.columns_mut(hidden.ncols(), b_attack.ncols()).copy_from(b_attack);
    let d = svd(&joint)?;
    let tol = d.default_tolerance();
    Ok(d.rank_above(tol) == rank_with_tol(&hidden, tol).numerical_rank)
}

/// Processed measurements `z = Mᵀ y_l − Mᵀ F_x H̃⁺ Hᵀ Σ_vR⁻¹ y_r`.
pub fn process(measurements: &Measurements, setup: &DetectionSetup) -> Result<Vector> {
    if measurements.y_l.len() != setup.m.nrows() {
        return Err(dim_err(
            "stacked local measurements",
            setup.m.nrows(),
            measurements.y_l.len(),
        ));
    }
    if measurements.y_r.len() != setup.shared_gain.ncols() {
        return Err(dim_err(
            "stacked shared measurements",
            setup.shared_gain.ncols(),
            measurements.y_r.len(),
        ));
    }
    Ok(setup.m.transpose() * &measurements.y_l - &setup.shared_gain * &measurements.y_r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    NoAttack,
    Attack,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub p_false_alarm: f64,
}

/// Statistic `‖Uᵀ R z‖²` only.
pub fn statistic(z: &Vector, setup: &DetectionSetup) -> Result<f64> {
    if z.len() != setup.processed_dim() {
        return Err(dim_err("processed measurements", setup.processed_dim(), z.len()));
    }
    Ok((&setup.test_matrix * z).norm_squared())
}

/// GLRT at false-alarm level `p_false_alarm`.
pub fn glrt(z: &Vector, setup: &DetectionSetup, p_false_alarm: f64) -> Result<TestResult> {
    if setup.q == 0 {
        return Err(Error::NoTestPossible);
    }
    let statistic = statistic(z, setup)?;
    let threshold = chi2_quantile(setup.q, p_false_alarm)?;
    Ok(TestResult {
        statistic,
        threshold,
        decision: if statistic > threshold {
            Decision::Attack
        } else {
            Decision::NoAttack
        },
        p_false_alarm,
    })
}

/// `(q, aᵀΛa)` for a stacked state-level attack `a`.
pub fn detection_parameters(setup: &DetectionSetup, attack: &Vector) -> Result<(usize, f64)> {
    if attack.len() != setup.lambda_factor.ncols() {
        return Err(dim_err("stacked attack", setup.lambda_factor.ncols(), attack.len()));
    }
    Ok((setup.q, (&setup.lambda_factor * attack).norm_squared()))
}

/// Analytic detection probability of a stacked attack.
pub fn analytic_detection(setup: &DetectionSetup, attack: &Vector, p_false_alarm: f64) -> Result<DetectionCurvePoint> {
    let (q, lambda) = detection_parameters(setup, attack)?;
    if q == 0 {
        return Err(Error::NoTestPossible);
    }
    detection_probability(q, lambda, p_false_alarm)
}
