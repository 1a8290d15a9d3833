//! Shared oracles for the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use secpriv::chi2::detection_probability;
use secpriv::detector::{batch_model, build_setup};
use secpriv::linalg::{block_diag, generalized_eigen, min_eigenvalue, pinv, spd_inverse, Matrix, Vector};
use secpriv::montecarlo;
use secpriv::privacy::{assess, PrivacyMechanism};
use secpriv::scenarios::{random_instance, RandomInstance, RandomSpec};
use secpriv::system::AttackSignal;
use secpriv::tradeoff::{build_noise_design, solve_block, PrivacyTarget};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// PSD of random rank in `0..=n`.
pub fn psd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let k = rng.random_range(0..=n);
    let g = uniform(rng, n, k);
    &g * g.transpose()
}

pub fn pd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let g = uniform(rng, n, n);
    &g * g.transpose() + Matrix::identity(n, n) * 0.1
}

fn quad(m: &Matrix, x: &Vector) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Failures out of `trials` for one randomized property.
#[derive(Debug, Clone, Copy)]
pub struct Tally {
    pub trials: usize,
    pub failures: usize,
}

impl Tally {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn tally(trials: usize, seed: u64, check: impl Fn(&mut ChaCha8Rng) -> bool + Sync) -> Tally {
    let failures = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut r = rng(seed.wrapping_mul(1_000_003).wrapping_add(t as u64));
            !check(&mut r)
        })
        .count();
    Tally { trials, failures }
}

/// Weighted least squares: the closed-form minimizer beats random
/// perturbations, is invariant along the null space and attains the stated
/// optimal cost.
pub fn wls_optimality(trials: usize, seed: u64) -> Tally {
    tally(trials, seed, |r| {
        let m = r.random_range(1..7);
        let n = r.random_range(1..7);
        let k = r.random_range(1..=m.min(n));
        // rank k with well-conditioned factors; the expanded cost formula
        // cancels to cond·ε and a near-singular draw says nothing about the lemma
        let h = (uniform(r, m, k) + Matrix::identity(m, k) * 2.0) * (uniform(r, k, n) + Matrix::identity(k, n) * 2.0);
        let sigma = pd(r, m);
        let si = spd_inverse(&sigma).unwrap();
        let y = gaussian(r, m);
        let ht = h.transpose() * &si * &h;
        let htp = pinv(&ht).unwrap();
        let x = &htp * h.transpose() * &si * &y;
        let cost = |z: &Vector| quad(&si, &(&y - &h * z));
        let best = cost(&x);
        let formula = quad(&(&si - &si * &h * &htp * h.transpose() * &si), &y);
        if !rel_close(best, formula, 1e-8) {
            return false;
        }
        let d = gaussian(r, n);
        let shifted = &x + (Matrix::identity(n, n) - &htp * &ht) * d;
        if !rel_close(cost(&shifted), best, 1e-8) {
            return false;
        }
        (0..50).all(|_| {
            let delta = gaussian(r, n) * 10f64.powf(r.random_range(-4.0..1.0));
            cost(&(&x + delta)) >= best - 1e-8 * (1.0 + best)
        })
    })
}

/// `[[A, B], [Bᵀ, D]]⁻¹ ⪰ diag((A + M)⁻¹, 0)`.
pub fn block_inverse_bound(trials: usize, seed: u64) -> Tally {
    tally(trials, seed, |r| {
        let a = r.random_range(1..5);
        let d = r.random_range(1..5);
        let full = pd(r, a + d);
        let m = psd(r, a);
        let inv = spd_inverse(&full).unwrap();
        let am = spd_inverse(&(full.view((0, 0), (a, a)) + &m)).unwrap();
        let lower = block_diag(&[am, Matrix::zeros(d, d)]);
        min_eigenvalue(&(&inv - lower)) >= -1e-8 * (1.0 + inv.amax())
    })
}

/// `Σ⁻¹ ⪰ S (SᵀΣS + Σ_a)⁻¹ Sᵀ` for full-column-rank `S`.
pub fn inverse_ordering(trials: usize, seed: u64) -> Tally {
    tally(trials, seed, |r| {
        let n = r.random_range(1..7);
        let m = r.random_range(1..=n);
        let sigma = pd(r, n);
        let s = uniform(r, n, m) + Matrix::identity(n, m) * 2.0;
        let sa = psd(r, m);
        let lhs = spd_inverse(&sigma).unwrap();
        let rhs = &s * spd_inverse(&(s.transpose() * &sigma * &s + sa)).unwrap() * s.transpose();
        min_eigenvalue(&(&lhs - rhs)) >= -1e-8 * (1.0 + lhs.amax())
    })
}

/// Constrained quadratic extrema equal the pencil extrema, on random
/// feasible points and at the eigenvectors.
pub fn pencil_extrema(trials: usize, seed: u64) -> Tally {
    tally(trials, seed, |r| {
        let n = r.random_range(1..6);
        let m2 = psd(r, n);
        let m1 = &m2 + psd(r, n);
        let lambda = r.random_range(0.1..10.0);
        let Ok(spec) = generalized_eigen(&m1, &m2) else {
            // M2 = 0: the constraint set is empty
            return m2.amax() == 0.0;
        };
        let (lo, hi) = (spec.mu_min(), spec.mu_max());
        if lo < 1.0 - 1e-8 {
            return false;
        }
        let samples_ok = (0..100).all(|_| {
            let x = gaussian(r, n);
            let c = quad(&m2, &x);
            if c <= 1e-12 * (1.0 + x.norm_squared()) {
                return true;
            }
            let x = x * (lambda / c).sqrt();
            let j = quad(&m1, &x);
            j >= lambda * lo - 1e-8 * (1.0 + j) && (hi.is_infinite() || j <= lambda * hi + 1e-8 * (1.0 + j))
        });
        let k = spec.vectors.ncols();
        let attained = |col: usize, mu: f64| {
            let v = spec.vectors.column(col).into_owned() * lambda.sqrt();
            rel_close(quad(&m2, &v), lambda, 1e-8) && rel_close(quad(&m1, &v), lambda * mu, 1e-8)
        };
        samples_ok && attained(0, lo) && (spec.infinite > 0 || attained(k - 1, hi))
    })
}

/// `(HᵀΣ⁻¹H)⁺ = H⁺ Σ H⁺ᵀ` for full-row-rank `H`.
pub fn pinv_identity(trials: usize, seed: u64) -> Tally {
    tally(trials, seed, |r| {
        let m = r.random_range(1..6);
        let n = r.random_range(m..8);
        let h = uniform(r, m, n) + Matrix::identity(m, n) * 2.0;
        let sigma = pd(r, m);
        let lhs = pinv(&(h.transpose() * spd_inverse(&sigma).unwrap() * &h)).unwrap();
        let hp = pinv(&h).unwrap();
        let rhs = &hp * &sigma * hp.transpose();
        (&lhs - &rhs).amax() <= 1e-8 * (1.0 + rhs.amax())
    })
}

/// Euclidean projection of `v` onto `{x ≥ 0, Σx = total}`.
fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        acc += x;
        let t = (acc - total) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Iterative reference for `min Tr(LΣ)` s.t. `Tr(GΣ) = ε`, `Σ ⪰ 0` with
/// `G ≻ 0`: projected gradient over `{X ⪰ 0, Tr X = ε}` after
/// `X = G^{1/2} Σ G^{1/2}`. Returns the cost.
pub fn projected_gradient_cost(l: &Matrix, g: &Matrix, eps: f64, iterations: usize) -> f64 {
    let n = l.nrows();
    let eig = SymmetricEigen::new(g.clone());
    let inv_sqrt = &eig.eigenvectors
        * Matrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()))
        * eig.eigenvectors.transpose();
    let c = &inv_sqrt * l * &inv_sqrt;
    let c = (&c + c.transpose()) * 0.5;
    let step = 1.0 / c.norm().max(1e-300);
    let mut x = Matrix::identity(n, n) * (eps / n as f64);
    for _ in 0..iterations {
        let y = &x - &c * step;
        let e = SymmetricEigen::new((&y + y.transpose()) * 0.5);
        let p = project_simplex(e.eigenvalues.as_slice(), eps);
        x = &e.eigenvectors * Matrix::from_diagonal(&Vector::from_vec(p)) * e.eigenvectors.transpose();
    }
    (&c * x).trace()
}

/// Worst relative gap between the analytic block optimum and the iterative
/// reference over random problems.
pub fn noise_block_vs_oracle(problems: usize, seed: u64) -> f64 {
    (0..problems)
        .into_par_iter()
        .map(|t| {
            let mut r = rng(seed + t as u64);
            let n = r.random_range(1..6);
            // positive definite L keeps the optimum away from zero
            let l = pd(&mut r, n);
            let g = pd(&mut r, n);
            let eps = r.random_range(0.1..10.0);
            let (_, analytic) = solve_block(&l, &g, eps, 0).unwrap();
            let oracle = projected_gradient_cost(&l, &g, eps, 20_000);
            (analytic - oracle).abs() / analytic.abs().max(oracle.abs()).max(1e-12)
        })
        .reduce(|| 0.0, f64::max)
}

/// Random instance whose output maps all have full row rank, as the noise
/// design requires.
pub fn design_instance(r: &mut ChaCha8Rng) -> RandomInstance {
    let spec = RandomSpec::default();
    loop {
        let inst = random_instance(r, &spec).unwrap();
        let ok = (1..inst.system.len()).all(|j| {
            let sc = &inst.base[j].s * &inst.system.subsystem(j).c;
            secpriv::linalg::rank(&sc).numerical_rank == sc.nrows()
        });
        if ok {
            return inst;
        }
    }
}

/// Worst relative residuals of the two trace identities behind the noise
/// design: `(detection, privacy)`.
pub fn noise_design_identities(instances: usize, draws: usize, seed: u64) -> (f64, f64) {
    let mut worst = (0.0f64, 0.0f64);
    let mut r = rng(seed);
    for _ in 0..instances {
        let inst = design_instance(&mut r);
        let sys = &inst.system;
        let horizon = 3;
        let targets = vec![PrivacyTarget::Reduced(0.0); sys.len() - 1];
        let problem = build_noise_design(sys, &inst.base, 0, horizon, &targets).unwrap();
        for _ in 0..draws {
            let covs: Vec<Matrix> = (1..sys.len())
                .map(|j| psd(&mut r, inst.base[j].shared_dim()) * 2.0)
                .collect();
            let mechs: Vec<PrivacyMechanism> = inst
                .base
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    let sigma_r = if j == 0 { m.sigma_r.clone() } else { covs[j - 1].clone() };
                    PrivacyMechanism::new(m.s.clone(), sigma_r).unwrap()
                })
                .collect();
            let setup = build_setup(&batch_model(sys, &mechs, 0, horizon).unwrap()).unwrap();
            let direct = pinv(&setup.lambda).unwrap().trace();
            let via = problem.objective(&covs).unwrap();
            worst.0 = worst.0.max((direct - via).abs() / direct.abs());
            for (b, cov) in problem.blocks.iter().zip(&covs) {
                let s = sys.subsystem(b.subsystem);
                let e = assess(&mechs[b.subsystem], &s.c, &s.sigma_v, horizon)
                    .unwrap()
                    .sigma_e
                    .trace();
                let via = b.g_offset + horizon as f64 * (&b.g * cov).trace();
                worst.1 = worst.1.max((e - via).abs() / e.abs());
            }
        }
    }
    worst
}

/// Dimension and SNR relations between two nested mechanism sets, summed over
/// random instances.
#[derive(Debug, Clone, Copy, Default)]
pub struct NestingSummary {
    pub instances: usize,
    pub attacks: usize,
    pub invisible: usize,
    pub q_violations: usize,
    pub lambda_violations: usize,
    /// Instances where the private set loses test dimensions.
    pub q_drops: usize,
    /// Instances where some direction loses SNR (`μ_max > 1`).
    pub snr_drops: usize,
}

pub fn nesting_relations(instances: usize, attacks: usize, seed: u64, tol: f64) -> NestingSummary {
    let spec = RandomSpec::default();
    let mut r = rng(seed);
    let drawn: Vec<RandomInstance> = (0..instances)
        .map(|_| random_instance(&mut r, &spec).unwrap())
        .collect();
    drawn
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut r = rng(seed ^ (0xA5A5 + i as u64));
            let pair = secpriv::tradeoff::setup_pair(&inst.system, &inst.base, &inst.private, 0, spec.horizon).unwrap();
            let (g1, g2) = (&pair.setup1.lambda_factor, &pair.setup2.lambda_factor);
            let (lo, hi) = (pair.spectrum.mu_min(), pair.spectrum.mu_max());
            let mut s = NestingSummary {
                instances: 1,
                q_violations: usize::from(pair.setup1.q < pair.setup2.q),
                q_drops: usize::from(pair.setup1.q > pair.setup2.q),
                snr_drops: usize::from(hi > 1.0 + 1e-6),
                ..Default::default()
            };
            for _ in 0..attacks {
                let a = gaussian(&mut r, g1.ncols()) * 10f64.powf(r.random_range(-2.0..2.0));
                let l1 = (g1 * &a).norm_squared();
                let l2 = (g2 * &a).norm_squared();
                s.attacks += 1;
                if l2 < secpriv::tradeoff::INVISIBLE_SNR {
                    s.invisible += 1;
                    continue;
                }
                let t = tol * (l1 + l2 * lo);
                let ok = l2 * hi >= l1 - t && l1 >= l2 * lo - t && l2 * lo >= l2 - t;
                s.lambda_violations += usize::from(!ok);
            }
            s
        })
        .reduce(NestingSummary::default, |a, b| NestingSummary {
            instances: a.instances + b.instances,
            attacks: a.attacks + b.attacks,
            invisible: a.invisible + b.invisible,
            q_violations: a.q_violations + b.q_violations,
            lambda_violations: a.lambda_violations + b.lambda_violations,
            q_drops: a.q_drops + b.q_drops,
            snr_drops: a.snr_drops + b.snr_drops,
        })
}

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub q: usize,
    pub expected: f64,
    pub empirical: f64,
    pub trials: usize,
}

/// Empirical false-alarm rates on random instances under no attack.
pub fn size_calibration(systems: usize, trials: usize, seed: u64, pfa: f64) -> (Vec<CalibrationRun>, Duration) {
    let start = Instant::now();
    let mut r = rng(seed);
    let runs = (0..systems)
        .map(|i| {
            let inst = random_instance(&mut r, &RandomSpec::default()).unwrap();
            let run =
                montecarlo::run(&inst.system, &inst.base, 0, 3, None, trials, seed + 100 + i as u64, pfa).unwrap();
            CalibrationRun {
                q: run.setup.q,
                expected: pfa,
                empirical: run.estimate.rate,
                trials,
            }
        })
        .collect();
    (runs, start.elapsed())
}

/// Empirical detection rate under a fixed attack against the analytic value.
pub fn power_calibration(trials: usize, seed: u64, pfa: f64) -> CalibrationRun {
    let mut r = rng(seed);
    let inst = random_instance(&mut r, &RandomSpec::default()).unwrap();
    let det = inst.system.subsystem(0);
    let setup = build_setup(&batch_model(&inst.system, &inst.base, 0, 3).unwrap()).unwrap();
    let direction = gaussian(&mut r, det.attack_dim());
    let signal = AttackSignal::constant(0, direction.clone(), 3);
    let unit = (&setup.lambda_factor * signal.stacked_state_attack(&det.b_attack)).norm_squared();
    // scale to a mid-range detection probability
    let scale = (6.0 / unit).sqrt();
    let signal = AttackSignal::constant(0, direction * scale, 3);
    let lambda = (&setup.lambda_factor * signal.stacked_state_attack(&det.b_attack)).norm_squared();
    let expected = detection_probability(setup.q, lambda, pfa).unwrap().p_detect;
    let run = montecarlo::run(&inst.system, &inst.base, 0, 3, Some(&signal), trials, seed + 1, pfa).unwrap();
    CalibrationRun {
        q: setup.q,
        expected,
        empirical: run.estimate.rate,
        trials,
    }
}
