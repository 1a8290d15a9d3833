//! Central and noncentral chi-square tails, quantiles and the detection
//! probability map `P_D(q, λ, P_F)`.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Poisson mass left out of the noncentral series.
const SERIES_MASS_TOL: f64 = 1e-14;

/// One point of a detection curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionCurvePoint {
    pub q: usize,
    pub lambda: f64,
    pub p_false_alarm: f64,
    pub threshold: f64,
    pub p_detect: f64,
    /// `1 − p_detect`, computed directly so that it stays accurate when
    /// `p_detect` rounds to one.
    pub p_miss: f64,
}

fn check_dof(q: usize) -> Result<()> {
    if q == 0 {
        Err(Error::InvalidInput(
            "chi-square degrees of freedom must be positive".into(),
        ))
    } else {
        Ok(())
    }
}

fn check_x(x: f64) -> Result<()> {
    if x >= 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "chi-square argument must be nonnegative, got {x}"
        )))
    }
}

/// `P(χ²_q > x)`.
pub fn chi2_tail(q: usize, x: f64) -> Result<f64> {
    check_dof(q)?;
    check_x(x)?;
    Ok(tail_unchecked(q as f64, x))
}

/// `P(χ²_q ≤ x)`.
pub fn chi2_cdf(q: usize, x: f64) -> Result<f64> {
    check_dof(q)?;
    check_x(x)?;
    Ok(cdf_unchecked(q as f64, x))
}

fn tail_unchecked(q: f64, x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(q / 2.0, x / 2.0)
    }
}

fn cdf_unchecked(q: f64, x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(q / 2.0, x / 2.0)
    }
}

fn density(q: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = q / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// `x` with `P(χ²_q > x) = p`.
pub fn chi2_quantile(q: usize, p: f64) -> Result<f64> {
    check_dof(q)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!(
            "tail probability must lie in (0,1), got {p}"
        )));
    }
    let qf = q as f64;
    // Work on whichever side of the distribution keeps the target away from 1.
    let resid = |x: f64| {
        if p <= 0.5 {
            tail_unchecked(qf, x) - p
        } else {
            (1.0 - p) - cdf_unchecked(qf, x)
        }
    };
    let mut lo = 0.0;
    let mut hi = qf + 10.0 * (2.0 * qf).sqrt() + 50.0;
    while resid(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if resid(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    // Newton polish; both residual forms have derivative −density.
    for _ in 0..3 {
        let f = density(qf, x);
        if f <= 0.0 || !f.is_finite() {
            break;
        }
        let next = x + resid(x) / f;
        if next.is_nan() || next <= 0.0 || resid(next).abs() >= resid(x).abs() {
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Result of a truncated Poisson-mixture evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SeriesEval {
    pub tail: f64,
    pub cdf: f64,
    pub terms: usize,
}

/// `P(χ²_q(λ) > x)` from the Poisson mixture of central tails.
pub fn noncentral_chi2_tail(q: usize, lambda: f64, x: f64) -> Result<f64> {
    let s = noncentral_chi2_series(q, lambda, x, 0)?;
    Ok(if s.tail < 0.5 { s.tail } else { 1.0 - s.cdf })
}

/// `P(χ²_q(λ) ≤ x)`.
pub fn noncentral_chi2_cdf(q: usize, lambda: f64, x: f64) -> Result<f64> {
    let s = noncentral_chi2_series(q, lambda, x, 0)?;
    Ok(if s.cdf < 0.5 { s.cdf } else { 1.0 - s.tail })
}

/// Evaluates the mixture `Σ_j Pois(j; λ/2)·Q_{q+2j}(x)` (and the matching
/// CDF sum) using at least `min_terms` terms. Summation starts at the
/// Poisson mode and grows outward until the omitted mass on each side is
/// below `1e-14`.
pub fn noncentral_chi2_series(q: usize, lambda: f64, x: f64, min_terms: usize) -> Result<SeriesEval> {
    check_dof(q)?;
    check_x(x)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noncentrality must be finite and nonnegative, got {lambda}"
        )));
    }
    let qf = q as f64;
    if lambda == 0.0 {
        return Ok(SeriesEval {
            tail: tail_unchecked(qf, x),
            cdf: cdf_unchecked(qf, x),
            terms: 1,
        });
    }
    let mu = lambda / 2.0;
    let mode = mu.floor();
    let w_mode = (-mu + mode * mu.ln() - ln_gamma(mode + 1.0)).exp();
    let mode = mode as usize;

    let mut tail = 0.0;
    let mut cdf = 0.0;
    let mut add = |j: usize, w: f64| {
        let dof = qf + 2.0 * j as f64;
        tail += w * tail_unchecked(dof, x);
        cdf += w * cdf_unchecked(dof, x);
    };

    add(mode, w_mode);
    let mut terms = 1;

    // upward: w_{j+1} = w_j·μ/(j+1); remaining mass ≤ w_{j+1}/(1 − μ/(j+2))
    let mut j = mode;
    let mut w = w_mode;
    loop {
        let next = w * mu / (j + 1) as f64;
        let ratio = mu / (j + 2) as f64;
        let bound = if ratio < 1.0 {
            next / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        if bound < SERIES_MASS_TOL && terms >= min_terms {
            break;
        }
        j += 1;
        w = next;
        add(j, w);
        terms += 1;
        if w == 0.0 && j > mode + 10 && terms >= min_terms {
            break;
        }
    }

    // downward: w_{j−1} = w_j·j/μ; remaining mass ≤ w_{j−1}/(1 − (j−1)/μ)
    let mut j = mode;
    let mut w = w_mode;
    while j > 0 {
        let next = w * j as f64 / mu;
        let ratio = (j - 1) as f64 / mu;
        let bound = next / (1.0 - ratio);
        if bound < SERIES_MASS_TOL {
            break;
        }
        j -= 1;
        w = next;
        add(j, w);
        terms += 1;
    }

    Ok(SeriesEval {
        tail: tail.clamp(0.0, 1.0),
        cdf: cdf.clamp(0.0, 1.0),
        terms,
    })
}

/// Threshold `τ = Q_q⁻¹(P_F)` and `P_D = Q_q(τ; λ)`.
pub fn detection_probability(q: usize, lambda: f64, p_false_alarm: f64) -> Result<DetectionCurvePoint> {
    let threshold = chi2_quantile(q, p_false_alarm)?;
    let (p_detect, p_miss) = if lambda == 0.0 {
        (p_false_alarm, 1.0 - p_false_alarm)
    } else {
        let s = noncentral_chi2_series(q, lambda, threshold, 0)?;
        if s.tail < 0.5 {
            (s.tail, 1.0 - s.tail)
        } else {
            (1.0 - s.cdf, s.cdf)
        }
    };
    Ok(DetectionCurvePoint {
        q,
        lambda,
        p_false_alarm,
        threshold,
        p_detect,
        p_miss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Γ(q/2) for integer q by the half-integer recurrence.
    fn gamma_half(q: usize) -> f64 {
        let mut g = if q.is_multiple_of(2) {
            1.0
        } else {
            std::f64::consts::PI.sqrt()
        };
        let mut k = if q.is_multiple_of(2) { 1.0 } else { 0.5 };
        while k < q as f64 / 2.0 - 1e-9 {
            g *= k;
            k += 1.0;
        }
        g
    }

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, depth)
    }

    /// Tail by integrating the density after `x = u²` (removes the q = 1 pole).
    fn tail_oracle(q: usize, x: f64) -> f64 {
        let c = 1.0 / (2f64.powf(q as f64 / 2.0) * gamma_half(q));
        let f = move |u: f64| 2.0 * c * u.powi(q as i32 - 1) * (-u * u / 2.0).exp();
        let a = x.sqrt();
        (0..240)
            .map(|k| simpson(&f, a + 0.25 * k as f64, a + 0.25 * (k + 1) as f64, 1e-16, 40))
            .sum()
    }

    #[test]
    fn tail_examples() {
        for q in 1..10 {
            assert_eq!(chi2_tail(q, 0.0).unwrap(), 1.0);
        }
        assert!((chi2_tail(2, 5.991464547).unwrap() - 0.05).abs() < 1e-10);
        assert!((chi2_tail(1, 3.8414588).unwrap() - 0.05).abs() < 1e-7);
        assert!(matches!(chi2_tail(0, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn tail_matches_integration_oracle() {
        for &q in &[1, 2, 3, 5, 12, 18, 30] {
            for &x in &[0.1, 1.0, 3.8414588, 10.0, 28.87, 50.0] {
                let got = chi2_tail(q, x).unwrap();
                let want = tail_oracle(q, x);
                assert!((got - want).abs() < 1e-11, "q={q} x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn quantile_examples_and_round_trip() {
        let x = chi2_quantile(2, 0.05).unwrap();
        assert!((x + 2.0 * 0.05f64.ln()).abs() < 1e-10);
        let x18 = chi2_quantile(18, 0.05).unwrap();
        assert!((tail_oracle(18, x18) - 0.05).abs() < 1e-10);
        assert!(chi2_quantile(3, 0.0).is_err());
        assert!(chi2_quantile(3, 1.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let q = rng.random_range(1..60);
            let p: f64 = rng.random_range(1e-6..0.999999);
            let x = chi2_quantile(q, p).unwrap();
            assert!((chi2_tail(q, x).unwrap() - p).abs() < 1e-10, "q={q} p={p}");
        }
    }

    #[test]
    fn noncentral_reductions() {
        for q in 1..6 {
            for &x in &[0.5, 2.0, 9.0] {
                assert_eq!(noncentral_chi2_tail(q, 0.0, x).unwrap(), chi2_tail(q, x).unwrap());
            }
            assert_eq!(noncentral_chi2_tail(q, 7.0, 0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn noncentral_q2_closed_form_check() {
        // For q = 2 the tail is the Marcum Q-function; check against an
        // integral of the noncentral density written with Bessel series.
        let (lambda, x): (f64, f64) = (5.0, 5.9915);
        let bessel_i0 = |z: f64| {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..200 {
                term *= (z / 2.0) * (z / 2.0) / (k as f64 * k as f64);
                sum += term;
            }
            sum
        };
        let dens = |t: f64| 0.5 * (-(t + lambda) / 2.0).exp() * bessel_i0((lambda * t).sqrt());
        let want = 1.0 - simpson(&dens, 0.0, x, 1e-14, 50);
        let got = noncentral_chi2_tail(2, lambda, x).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn noncentral_monte_carlo_spot_check() {
        let (lambda, x) = (5.0f64, 5.9915);
        let m = [lambda.sqrt(), 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let a: f64 = rng.sample::<f64, _>(StandardNormal) + m[0];
            let b: f64 = rng.sample::<f64, _>(StandardNormal) + m[1];
            if a * a + b * b > x {
                hits += 1;
            }
        }
        let p = noncentral_chi2_tail(2, lambda, x).unwrap();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn doubling_series_depth_is_stable() {
        for &q in &[1, 5, 18] {
            for &lambda in &[0.5, 5.0, 80.0, 400.0] {
                for &x in &[1.0, 11.07, 40.0] {
                    let base = noncentral_chi2_series(q, lambda, x, 0).unwrap();
                    let deeper = noncentral_chi2_series(q, lambda, x, 2 * base.terms).unwrap();
                    assert!((base.tail - deeper.tail).abs() < 1e-12);
                    assert!((base.cdf - deeper.cdf).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn detection_probability_basics() {
        for q in 1..10 {
            let p = detection_probability(q, 0.0, 0.05).unwrap();
            assert_eq!(p.p_detect, 0.05);
        }
        let p = detection_probability(4, 1e4, 0.05).unwrap();
        assert!(p.p_detect > 0.999);
        // monotone in λ for q = 5
        let mut last = 0.0;
        for k in 0..=80 {
            let p = detection_probability(5, k as f64, 0.05).unwrap().p_detect;
            assert!(p >= last);
            last = p;
        }
        // strictly decreasing in q at fixed λ
        let mut last = 1.0;
        for q in 1..=20 {
            let p = detection_probability(q, 10.0, 0.05).unwrap().p_detect;
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn miss_probability_resolves_saturated_detection() {
        let a = detection_probability(1, 80.0, 0.05).unwrap();
        let b = detection_probability(2, 80.0, 0.05).unwrap();
        assert!(a.p_miss < b.p_miss);
        assert!(a.p_miss > 0.0);
    }
}
