//! Detection performance under two mechanism sets, admissible SNR regions,
//! noise sweeps with fixed selections, and optimal noise design.

use rayon::prelude::*;

use crate::chi2::{detection_probability, DetectionCurvePoint};
use crate::detector::{batch_model, build_setup, BatchModel, DetectionSetup};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    block_diag, generalized_eigen, identity_kron, pencil_from_factors, pinv, rank, symmetrize, Matrix, PencilSpectrum,
    Vector,
};
use crate::privacy::{is_more_private, row_space_contained, PrivacyMechanism};
use crate::system::InterconnectedSystem;

/// SNR below which an attack is treated as invisible to the second setup.
pub const INVISIBLE_SNR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The more private set detects no better.
    TradeOff,
    /// The more private set detects strictly better.
    CounterTradeOff,
}

/// `a` beats `b` strictly. Near saturation the miss probabilities decide.
pub fn detects_better(a: &DetectionCurvePoint, b: &DetectionCurvePoint) -> bool {
    if a.p_detect > 0.5 && b.p_detect > 0.5 {
        a.p_miss < b.p_miss
    } else {
        a.p_detect > b.p_detect
    }
}

#[derive(Debug, Clone)]
pub struct AttackRecord {
    pub lambda1: f64,
    pub lambda2: f64,
    pub pd1: DetectionCurvePoint,
    pub pd2: DetectionCurvePoint,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct TradeoffReport {
    pub q1: usize,
    pub q2: usize,
    pub lambda1: Matrix,
    pub lambda2: Matrix,
    /// Pencil `(Λ1, Λ2)`.
    pub spectrum: PencilSpectrum,
    pub mu_min: f64,
    /// `+∞` when some attack is seen by the first setup only.
    pub mu_max: f64,
    /// Attacks with `λ2 ≥ INVISIBLE_SNR`.
    pub records: Vec<AttackRecord>,
    /// Attacks the second setup cannot see, reported apart from the bounds.
    pub invisible: Vec<AttackRecord>,
    /// Subsystems whose second mechanism is not more private than the first.
    pub ordering_violations: Vec<usize>,
}

/// Both detection setups for one system and two mechanism sets.
#[derive(Debug, Clone)]
pub struct SetupPair {
    pub model1: BatchModel,
    pub setup1: DetectionSetup,
    pub model2: BatchModel,
    pub setup2: DetectionSetup,
    pub spectrum: PencilSpectrum,
}

pub fn setup_pair(
    system: &InterconnectedSystem,
    mechs1: &[PrivacyMechanism],
    mechs2: &[PrivacyMechanism],
    detector: usize,
    horizon: usize,
) -> Result<SetupPair> {
    let model1 = batch_model(system, mechs1, detector, horizon)?;
    let model2 = batch_model(system, mechs2, detector, horizon)?;
    let setup1 = build_setup(&model1)?;
    let setup2 = build_setup(&model2)?;
    let spectrum = pencil_from_factors(&setup1.lambda_factor, &setup2.lambda_factor)?;
    Ok(SetupPair {
        model1,
        setup1,
        model2,
        setup2,
        spectrum,
    })
}

/// Subsystems `j ≠ detector` where `mechs2[j]` is not more private than `mechs1[j]`.
pub fn ordering_violations(
    system: &InterconnectedSystem,
    mechs1: &[PrivacyMechanism],
    mechs2: &[PrivacyMechanism],
    detector: usize,
    horizon: usize,
) -> Result<Vec<usize>> {
    let mut bad = Vec::new();
    for j in 0..system.len() {
        if j == detector {
            continue;
        }
        let s = system.subsystem(j);
        if !is_more_private(&mechs2[j], &mechs1[j], &s.c, &s.sigma_v, horizon, None)?.holds() {
            bad.push(j);
        }
    }
    Ok(bad)
}

fn record(q1: usize, q2: usize, lambda1: f64, lambda2: f64, pfa: f64) -> Result<AttackRecord> {
    let pd1 = detection_probability(q1, lambda1, pfa)?;
    let pd2 = detection_probability(q2, lambda2, pfa)?;
    Ok(AttackRecord {
        lambda1,
        lambda2,
        pd1,
        pd2,
        verdict: if detects_better(&pd2, &pd1) {
            Verdict::CounterTradeOff
        } else {
            Verdict::TradeOff
        },
    })
}

/// Compares detection of each stacked attack under `mechs1` and the more
/// private `mechs2`.
#[allow(clippy::too_many_arguments)]
pub fn compare_mechanism_sets(
    system: &InterconnectedSystem,
    mechs1: &[PrivacyMechanism],
    mechs2: &[PrivacyMechanism],
    detector: usize,
    horizon: usize,
    p_false_alarm: f64,
    attacks: &[Vector],
) -> Result<TradeoffReport> {
    let pair = setup_pair(system, mechs1, mechs2, detector, horizon)?;
    let violations = ordering_violations(system, mechs1, mechs2, detector, horizon)?;
    let (s1, s2) = (&pair.setup1, &pair.setup2);
    if s1.q == 0 || s2.q == 0 {
        return Err(Error::NoTestPossible);
    }
    let dim = s1.lambda_factor.ncols();
    if let Some(bad) = attacks.iter().find(|a| a.len() != dim) {
        return Err(dim_err("stacked attack", dim, bad.len()));
    }
    let all: Vec<AttackRecord> = attacks
        .par_iter()
        .map(|a| {
            let l1 = (&s1.lambda_factor * a).norm_squared();
            let l2 = (&s2.lambda_factor * a).norm_squared();
            record(s1.q, s2.q, l1, l2, p_false_alarm)
        })
        .collect::<Result<_>>()?;
    let (records, invisible) = all.into_iter().partition(|r| r.lambda2 >= INVISIBLE_SNR);
    Ok(TradeoffReport {
        q1: s1.q,
        q2: s2.q,
        lambda1: s1.lambda.clone(),
        lambda2: s2.lambda.clone(),
        mu_min: pair.spectrum.mu_min(),
        mu_max: pair.spectrum.mu_max(),
        spectrum: pair.spectrum,
        records,
        invisible,
        ordering_violations: violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Better {
    First,
    Second,
    Tie,
}

/// One `(λ2, λ1)` grid point.
#[derive(Debug, Clone, Copy)]
pub struct RegionCell {
    /// SNR under the second (more private) set.
    pub x: f64,
    /// SNR under the first set.
    pub y: f64,
    pub admissible: bool,
    pub pd1: f64,
    pub pd2: f64,
    pub better: Better,
}

/// `x·μ_min ≤ y ≤ x·μ_max` up to a relative tolerance.
pub fn is_admissible(spectrum: &PencilSpectrum, x: f64, y: f64) -> bool {
    let tol = 1e-9 * (1.0 + x.abs() + y.abs());
    let lo = x * spectrum.mu_min();
    if y < lo - tol * (1.0 + spectrum.mu_min()) {
        return false;
    }
    let hi = spectrum.mu_max();
    hi.is_infinite() || y <= x * hi + tol * (1.0 + hi)
}

/// Classifies a grid of `(λ2, λ1)` pairs by admissibility and by which set
/// detects better at level `p_false_alarm`.
pub fn admissible_region(
    lambda1: &Matrix,
    lambda2: &Matrix,
    q1: usize,
    q2: usize,
    xs: &[f64],
    ys: &[f64],
    p_false_alarm: f64,
) -> Result<Vec<RegionCell>> {
    let spectrum = generalized_eigen(lambda1, lambda2)?;
    region_from_spectrum(&spectrum, q1, q2, xs, ys, p_false_alarm)
}

pub fn region_from_spectrum(
    spectrum: &PencilSpectrum,
    q1: usize,
    q2: usize,
    xs: &[f64],
    ys: &[f64],
    p_false_alarm: f64,
) -> Result<Vec<RegionCell>> {
    let points: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    points
        .par_iter()
        .map(|&(x, y)| {
            let p1 = detection_probability(q1, y, p_false_alarm)?;
            let p2 = detection_probability(q2, x, p_false_alarm)?;
            let better = if detects_better(&p1, &p2) {
                Better::First
            } else if detects_better(&p2, &p1) {
                Better::Second
            } else {
                Better::Tie
            };
            Ok(RegionCell {
                x,
                y,
                admissible: is_admissible(spectrum, x, y),
                pd1: p1.p_detect,
                pd2: p2.p_detect,
                better,
            })
        })
        .collect()
}

/// Attack direction (stacked, state level) attaining `λ1 = μ_min·λ2`,
/// scaled so that `λ2 = 1`.
pub fn least_ratio_attack(spectrum: &PencilSpectrum) -> Option<Vector> {
    (spectrum.vectors.ncols() > 0).then(|| spectrum.vectors.column(0).into_owned())
}

/// Scans `scale² ` multiples of the least-ratio direction for an attack the
/// more private set detects strictly better. Returns `(λ2, record)` of the
/// first hit.
pub fn find_counter_tradeoff(
    pair: &SetupPair,
    p_false_alarm: f64,
    lambda2_grid: &[f64],
) -> Result<Option<AttackRecord>> {
    let Some(v) = least_ratio_attack(&pair.spectrum) else {
        return Ok(None);
    };
    for &l2 in lambda2_grid {
        let a = &v * l2.sqrt();
        let r = record(
            pair.setup1.q,
            pair.setup2.q,
            (&pair.setup1.lambda_factor * &a).norm_squared(),
            (&pair.setup2.lambda_factor * &a).norm_squared(),
            p_false_alarm,
        )?;
        if r.verdict == Verdict::CounterTradeOff {
            return Ok(Some(r));
        }
    }
    Ok(None)
}

/// Detection along a sequence of mechanism sets with identical selections.
#[derive(Debug, Clone)]
pub struct NoiseCurve {
    pub q: usize,
    pub points: Vec<(f64, DetectionCurvePoint)>,
    /// No later point detects strictly better than an earlier one.
    pub nonincreasing: bool,
    /// Every later point detects strictly worse.
    pub strictly_decreasing: bool,
}

/// Detection probability of `attack` for each labelled mechanism set. All
/// sets must share their selection subspaces with the first one.
pub fn strict_tradeoff_curve(
    system: &InterconnectedSystem,
    sets: &[(f64, Vec<PrivacyMechanism>)],
    detector: usize,
    horizon: usize,
    attack: &Vector,
    p_false_alarm: f64,
) -> Result<NoiseCurve> {
    let Some((_, first)) = sets.first() else {
        return Err(Error::InvalidInput("no mechanism sets given".into()));
    };
    for (_, set) in sets {
        for (j, (m, m0)) in set.iter().zip(first).enumerate() {
            if j == detector {
                continue;
            }
            if !(row_space_contained(&m.s, &m0.s) && row_space_contained(&m0.s, &m.s)) {
                return Err(Error::Precondition(format!(
                    "selection subspace of subsystem {j} differs"
                )));
            }
        }
    }
    let evaluated: Vec<(usize, f64, DetectionCurvePoint)> = sets
        .par_iter()
        .map(|(label, set)| {
            let setup = build_setup(&batch_model(system, set, detector, horizon)?)?;
            if setup.q == 0 {
                return Err(Error::NoTestPossible);
            }
            let lambda = (&setup.lambda_factor * attack).norm_squared();
            Ok((setup.q, *label, detection_probability(setup.q, lambda, p_false_alarm)?))
        })
        .collect::<Result<_>>()?;
    let q = evaluated[0].0;
    if evaluated.iter().any(|e| e.0 != q) {
        return Err(Error::Precondition("test dimension changed across noise levels".into()));
    }
    let points: Vec<(f64, DetectionCurvePoint)> = evaluated.into_iter().map(|(_, l, p)| (l, p)).collect();
    let nonincreasing = points.windows(2).all(|w| !detects_better(&w[1].1, &w[0].1));
    let strictly_decreasing = points.windows(2).all(|w| detects_better(&w[0].1, &w[1].1));
    Ok(NoiseCurve {
        q,
        points,
        nonincreasing,
        strictly_decreasing,
    })
}

/// Sweeps isotropic added noise `Σ_r = base + σ²I` on every shared stream.
pub fn noise_sweep(
    system: &InterconnectedSystem,
    base: &[PrivacyMechanism],
    detector: usize,
    horizon: usize,
    sigmas: &[f64],
    attack: &Vector,
    p_false_alarm: f64,
) -> Result<NoiseCurve> {
    let sets = sigmas
        .iter()
        .map(|&s| {
            let set = base
                .iter()
                .map(|m| {
                    let k = m.shared_dim();
                    PrivacyMechanism::new(m.s.clone(), &m.sigma_r + Matrix::identity(k, k) * (s * s))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((s, set))
        })
        .collect::<Result<Vec<_>>>()?;
    strict_tradeoff_curve(system, &sets, detector, horizon, attack, p_false_alarm)
}

/// Desired privacy level of one sharing subsystem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyTarget {
    /// Lower bound on the trace of the error covariance; converted with
    /// `ε = max((level − g)/T, 0)`.
    ErrorTrace(f64),
    /// Lower bound on `Tr(G Σ)` directly.
    Reduced(f64),
}

#[derive(Debug, Clone)]
pub struct NoiseDesignBlock {
    pub subsystem: usize,
    /// Diagonal block of `L` belonging to this subsystem.
    pub l: Matrix,
    pub g: Matrix,
    pub g_offset: f64,
    pub epsilon: f64,
    pub target: PrivacyTarget,
}

/// `min Σ_j Tr(L_jj Σ_j) + l` s.t. `Tr(G_j Σ_j) ≥ ε_j`, `Σ_j ⪰ 0`.
#[derive(Debug, Clone)]
pub struct NoiseDesignProblem {
    pub horizon: usize,
    pub detector: usize,
    pub l: Matrix,
    pub l_offset: f64,
    pub d: Matrix,
    pub k: Matrix,
    pub blocks: Vec<NoiseDesignBlock>,
}

impl NoiseDesignProblem {
    /// `l + Tr(L Σ)` for block-diagonal `Σ` assembled from `covs`.
    pub fn objective(&self, covs: &[Matrix]) -> Result<f64> {
        let sigma = block_diag(covs);
        if sigma.shape() != self.l.shape() {
            return Err(dim_err(
                "noise covariances",
                format!("{:?}", self.l.shape()),
                format!("{:?}", sigma.shape()),
            ));
        }
        Ok(self.l_offset + (&self.l * sigma).trace())
    }

    /// Same problem with new targets.
    pub fn with_targets(&self, targets: &[PrivacyTarget]) -> Result<Self> {
        if targets.len() != self.blocks.len() {
            return Err(dim_err("privacy targets", self.blocks.len(), targets.len()));
        }
        let mut out = self.clone();
        for (b, &t) in out.blocks.iter_mut().zip(targets) {
            b.target = t;
            b.epsilon = reduce_target(t, b.g_offset, self.horizon)?;
        }
        Ok(out)
    }
}

fn reduce_target(t: PrivacyTarget, g_offset: f64, horizon: usize) -> Result<f64> {
    let eps = match t {
        PrivacyTarget::ErrorTrace(level) => ((level - g_offset) / horizon as f64).max(0.0),
        PrivacyTarget::Reduced(e) => e,
    };
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "privacy target must be finite and nonnegative, got {eps}"
        )));
    }
    Ok(eps)
}

fn require_full_row_rank(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() > 0 && rank(m).numerical_rank < m.nrows() {
        return Err(Error::Unsupported(format!("{what} is not full row rank")));
    }
    Ok(())
}

/// Builds the noise-design problem for `detector` with the selections of
/// `mechanisms` (their noise covariances are the design variables and are
/// ignored). `targets` lists one entry per sharing subsystem in index order.
pub fn build_noise_design(
    system: &InterconnectedSystem,
    mechanisms: &[PrivacyMechanism],
    detector: usize,
    horizon: usize,
    targets: &[PrivacyTarget],
) -> Result<NoiseDesignProblem> {
    if targets.len() + 1 != system.len() {
        return Err(dim_err("privacy targets", system.len() - 1, targets.len()));
    }
    for (i, s) in system.subsystems().iter().enumerate() {
        require_full_row_rank(&s.c, &format!("output matrix of subsystem {i}"))?;
        if i != detector {
            require_full_row_rank(&(&mechanisms[i].s * &s.c), &format!("shared map of subsystem {i}"))?;
        }
    }
    let noiseless: Vec<PrivacyMechanism> = mechanisms
        .iter()
        .map(|m| PrivacyMechanism {
            s: m.s.clone(),
            sigma_r: Matrix::zeros(m.shared_dim(), m.shared_dim()),
        })
        .collect();
    let model = batch_model(system, &noiseless, detector, horizon)?;
    let setup = build_setup(&model)?;
    let m1 = &setup.m_fa;
    require_full_row_rank(m1, "projected attack map")?;
    let m1_pinv = pinv(m1)?;
    let proj = &m1_pinv * m1;
    let n1 = system.subsystem(detector).state_dim();
    let mut d = Matrix::zeros(n1, n1);
    for k in 0..horizon {
        d += proj.view((k * n1, k * n1), (n1, n1));
    }
    let d = symmetrize(&d);

    let mut sc = Vec::new();
    let mut s_blocks = Vec::new();
    let mut v_blocks = Vec::new();
    for (j, m) in mechanisms.iter().enumerate() {
        if j == detector {
            continue;
        }
        let s = system.subsystem(j);
        sc.push(&m.s * &s.c);
        s_blocks.push(m.s.clone());
        v_blocks.push(s.sigma_v.clone());
    }
    let sc_all = block_diag(&sc);
    let s_all = block_diag(&s_blocks);
    let k = &system.subsystem(detector).b * pinv(&sc_all)?;
    let l = symmetrize(&(k.transpose() * &d * &k));
    let shared_v = &k * &s_all * block_diag(&v_blocks) * s_all.transpose() * k.transpose();
    let l_offset = (&m1_pinv * setup.m.transpose() * &model.sigma_vl * &setup.m * m1_pinv.transpose()).trace()
        + (&proj * identity_kron(horizon, &shared_v)).trace();

    let mut blocks = Vec::new();
    let mut offset = 0;
    let mut t_iter = targets.iter();
    for (j, m) in mechanisms.iter().enumerate() {
        if j == detector {
            continue;
        }
        let s = system.subsystem(j);
        let dim = m.shared_dim();
        let sc_j = &m.s * &s.c;
        let sc_pinv = pinv(&sc_j)?;
        let h_pinv = identity_kron(horizon, &sc_pinv);
        let g_offset =
            (&h_pinv * identity_kron(horizon, &(&m.s * &s.sigma_v * m.s.transpose())) * h_pinv.transpose()).trace();
        let target = *t_iter.next().expect("target count checked");
        blocks.push(NoiseDesignBlock {
            subsystem: j,
            l: l.view((offset, offset), (dim, dim)).into_owned(),
            g: symmetrize(&(sc_pinv.transpose() * &sc_pinv)),
            g_offset,
            epsilon: reduce_target(target, g_offset, horizon)?,
            target,
        });
        offset += dim;
    }
    Ok(NoiseDesignProblem {
        horizon,
        detector,
        l,
        l_offset,
        d,
        k,
        blocks,
    })
}

#[derive(Debug, Clone)]
pub struct NoiseDesignSolution {
    /// `(subsystem, Σ_r)` per sharing subsystem.
    pub covariances: Vec<(usize, Matrix)>,
    pub block_costs: Vec<f64>,
    /// Objective value including the constant offset.
    pub cost: f64,
}

/// `min Tr(L Σ)` s.t. `Tr(G Σ) ≥ ε`, `Σ ⪰ 0`. The optimum is rank one along
/// the generalized eigenvector of `(L, G)` with the smallest eigenvalue.
pub fn solve_block(l: &Matrix, g: &Matrix, epsilon: f64, subsystem: usize) -> Result<(Matrix, f64)> {
    let n = l.nrows();
    if g.shape() != (n, n) || !l.is_square() {
        return Err(dim_err(
            "noise design block",
            format!("{n}x{n}"),
            format!("{:?}", g.shape()),
        ));
    }
    if epsilon == 0.0 {
        return Ok((Matrix::zeros(n, n), 0.0));
    }
    let spectrum = match generalized_eigen(l, g) {
        Ok(s) => s,
        Err(Error::EmptyPencil) => return Err(Error::Infeasible { subsystem, epsilon }),
        Err(e) => return Err(e),
    };
    let v = spectrum.vectors.column(0).into_owned();
    let mu = spectrum.mu_min().max(0.0);
    // vᵀGv = 1 by normalization
    let gv = (v.transpose() * g * &v)[(0, 0)];
    let sigma = &v * v.transpose() * (epsilon / gv);
    Ok((symmetrize(&sigma), epsilon * mu))
}

pub fn solve_noise_design(problem: &NoiseDesignProblem) -> Result<NoiseDesignSolution> {
    let mut covariances = Vec::new();
    let mut block_costs = Vec::new();
    for b in &problem.blocks {
        let (sigma, cost) = solve_block(&b.l, &b.g, b.epsilon, b.subsystem)?;
        covariances.push((b.subsystem, sigma));
        block_costs.push(cost);
    }
    let cost = problem.l_offset + block_costs.iter().sum::<f64>();
    Ok(NoiseDesignSolution {
        covariances,
        block_costs,
        cost,
    })
}
