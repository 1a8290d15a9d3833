//! Repeated simulation of one detector to estimate false-alarm and
//! detection rates empirically.

use rayon::prelude::*;

use crate::chi2::chi2_quantile;
use crate::detector::{batch_model, build_setup, collect, process, statistic, DetectionSetup};
use crate::error::{Error, Result};
use crate::privacy::PrivacyMechanism;
use crate::system::{apply_privacy, simulate, AttackSignal, InterconnectedSystem};

/// Seed of trial `t` derived from a run seed.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial as u64)
}

/// Test statistics of `trials` independent batches, in trial order.
#[allow(clippy::too_many_arguments)]
pub fn statistics(
    system: &InterconnectedSystem,
    mechanisms: &[PrivacyMechanism],
    setup: &DetectionSetup,
    detector: usize,
    horizon: usize,
    attack: Option<&AttackSignal>,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t);
            let traj = simulate(system, attack, horizon, s)?;
            let shared = apply_privacy(&traj, mechanisms, detector, s)?;
            let z = process(&collect(&traj, &shared, detector)?, setup)?;
            statistic(&z, setup)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub trials: usize,
    pub alarms: usize,
    pub rate: f64,
    /// Binomial standard error at the estimated rate.
    pub std_error: f64,
}

impl RateEstimate {
    pub fn from_statistics(stats: &[f64], threshold: f64) -> Self {
        let trials = stats.len();
        let alarms = stats.iter().filter(|&&s| s > threshold).count();
        let rate = alarms as f64 / trials.max(1) as f64;
        Self {
            trials,
            alarms,
            rate,
            std_error: (rate * (1.0 - rate) / trials.max(1) as f64).sqrt(),
        }
    }

    /// `rate ± k·σ` with `σ` evaluated at the reference probability `p`.
    pub fn within(&self, p: f64, k: f64) -> bool {
        (self.rate - p).abs() <= k * (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub setup: DetectionSetup,
    pub threshold: f64,
    pub statistics: Vec<f64>,
    pub estimate: RateEstimate,
}

/// Builds the detector and runs `trials` batches at level `p_false_alarm`.
#[allow(clippy::too_many_arguments)]
pub fn run(
    system: &InterconnectedSystem,
    mechanisms: &[PrivacyMechanism],
    detector: usize,
    horizon: usize,
    attack: Option<&AttackSignal>,
    trials: usize,
    seed: u64,
    p_false_alarm: f64,
) -> Result<MonteCarloRun> {
    if trials == 0 {
        return Err(Error::InvalidInput("at least one trial is required".into()));
    }
    let setup = build_setup(&batch_model(system, mechanisms, detector, horizon)?)?;
    if setup.q == 0 {
        return Err(Error::NoTestPossible);
    }
    let threshold = chi2_quantile(setup.q, p_false_alarm)?;
    let statistics = statistics(system, mechanisms, &setup, detector, horizon, attack, trials, seed)?;
    let estimate = RateEstimate::from_statistics(&statistics, threshold);
    Ok(MonteCarloRun {
        setup,
        threshold,
        statistics,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_counts_strict_exceedances() {
        let e = RateEstimate::from_statistics(&[0.5, 1.0, 1.5, 2.0], 1.0);
        assert_eq!(e.alarms, 2);
        assert_eq!(e.rate, 0.5);
        assert!(e.within(0.5, 0.0));
    }

    #[test]
    fn seeds_differ_per_trial() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|t| trial_seed(7, t)).collect();
        assert_eq!(s.len(), 1000);
    }
}
