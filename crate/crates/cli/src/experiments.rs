//! One function per experiment, each producing a single table.

use secpriv::chi2::detection_probability;
use secpriv::detector::{
    analytic_detection, batch_model, build_setup, collect, glrt, process, Decision, DetectionSetup,
};
use secpriv::linalg::Vector;
use secpriv::montecarlo::{self, RateEstimate};
use secpriv::privacy::{
    assess, check_sufficient_condition, is_more_private, OrderingFailure, OrderingVerdict, PrivacyMechanism,
};
use secpriv::system::{apply_privacy, simulate, AttackSignal};
use secpriv::tradeoff::{
    build_noise_design, find_counter_tradeoff, noise_sweep, region_from_spectrum, setup_pair, solve_noise_design,
    Better, PrivacyTarget,
};

use crate::config::{Experiment, ExperimentConfig};
use crate::output::{num, Table};
use crate::CliError;

const CI_Z: f64 = 1.96;

pub fn run(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let mut table = match cfg.experiment {
        Experiment::PdSurface => pd_surface(cfg)?,
        Experiment::Detect => detect(cfg)?,
        Experiment::MonteCarlo => monte_carlo(cfg)?,
        Experiment::PrivacyCompare => privacy_compare(cfg)?,
        Experiment::TradeoffMap => tradeoff_map(cfg)?,
        Experiment::NoiseSweep => sweep(cfg)?,
        Experiment::NoiseDesign => noise_design(cfg)?,
        Experiment::PowerGridDemo => demo(cfg)?,
    };
    let mut meta = vec![
        ("experiment".to_string(), cfg.experiment.name().to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("T".to_string(), cfg.horizon.to_string()),
        ("P_F".to_string(), num(cfg.p_false_alarm)),
    ];
    if cfg.scenario.is_some() {
        meta.push(("source".to_string(), cfg.source.name().to_string()));
        meta.push(("system_seed".to_string(), cfg.system_seed.to_string()));
    }
    meta.append(&mut table.meta);
    table.meta = meta;
    Ok(table)
}

fn attack(cfg: &ExperimentConfig) -> (AttackSignal, Vector) {
    let sc = cfg.scenario();
    let local = sc.system.subsystem(sc.detector);
    let signal = AttackSignal::constant(
        sc.detector,
        Vector::from_element(local.attack_dim(), cfg.magnitude),
        cfg.horizon,
    );
    let stacked = signal.stacked_state_attack(&local.b_attack);
    (signal, stacked)
}

fn setup_for(cfg: &ExperimentConfig, set: &[PrivacyMechanism]) -> Result<DetectionSetup, CliError> {
    let sc = cfg.scenario();
    Ok(build_setup(&batch_model(&sc.system, set, sc.detector, cfg.horizon)?)?)
}

/// Wilson score interval.
fn wilson(e: &RateEstimate) -> (f64, f64) {
    let n = e.trials as f64;
    let z2 = CI_Z * CI_Z;
    let denom = 1.0 + z2 / n;
    let center = (e.rate + z2 / (2.0 * n)) / denom;
    let half = CI_Z * (e.rate * (1.0 - e.rate) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn pd_surface(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let mut t = Table::new(&["q", "lambda", "threshold", "p_detect", "p_miss"]);
    for q in 1..=cfg.q_max {
        for &lambda in &cfg.lambdas {
            let p = detection_probability(q, lambda, cfg.p_false_alarm)?;
            t.push(vec![
                q.to_string(),
                num(lambda),
                num(p.threshold),
                num(p.p_detect),
                num(p.p_miss),
            ]);
        }
    }
    Ok(t)
}

fn detect(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let sc = cfg.scenario();
    let (signal, stacked) = attack(cfg);
    let attacked = cfg.magnitude != 0.0;
    let traj = simulate(&sc.system, attacked.then_some(&signal), cfg.horizon, cfg.seed)?;
    let mut t = Table::new(&[
        "set",
        "q",
        "statistic",
        "threshold",
        "decision",
        "lambda",
        "analytic_p_detect",
    ]);
    t.meta("attack_magnitude", num(cfg.magnitude));
    for (k, set) in sc.sets.iter().enumerate() {
        let setup = setup_for(cfg, set)?;
        if setup.q == 0 {
            t.push(vec![
                k.to_string(),
                "0".into(),
                String::new(),
                String::new(),
                "no-test".into(),
                String::new(),
                String::new(),
            ]);
            continue;
        }
        let shared = apply_privacy(&traj, set, sc.detector, cfg.seed)?;
        let z = process(&collect(&traj, &shared, sc.detector)?, &setup)?;
        let res = glrt(&z, &setup, cfg.p_false_alarm)?;
        let pd = analytic_detection(&setup, &stacked, cfg.p_false_alarm)?;
        t.push(vec![
            k.to_string(),
            setup.q.to_string(),
            num(res.statistic),
            num(res.threshold),
            match res.decision {
                Decision::Attack => "attack",
                Decision::NoAttack => "no-attack",
            }
            .into(),
            num(pd.lambda),
            num(pd.p_detect),
        ]);
    }
    Ok(t)
}

fn monte_carlo(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let sc = cfg.scenario();
    let (signal, stacked) = attack(cfg);
    let mut t = Table::new(&[
        "set",
        "hypothesis",
        "q",
        "lambda",
        "analytic",
        "trials",
        "alarms",
        "rate",
        "std_error",
        "ci_low",
        "ci_high",
    ]);
    t.meta("attack_magnitude", num(cfg.magnitude));
    t.meta("ci", "wilson95");
    for (k, set) in sc.sets.iter().enumerate() {
        let setup = setup_for(cfg, set)?;
        if setup.q == 0 {
            let mut row = vec![k.to_string(), "-".into(), "0".into()];
            row.resize(t.header.len(), String::new());
            t.push(row);
            continue;
        }
        let pd = analytic_detection(&setup, &stacked, cfg.p_false_alarm)?;
        for (hyp, sig, lambda, analytic) in [
            ("H0", None, 0.0, cfg.p_false_alarm),
            ("H1", Some(&signal), pd.lambda, pd.p_detect),
        ] {
            let run = montecarlo::run(
                &sc.system,
                set,
                sc.detector,
                cfg.horizon,
                sig,
                cfg.trials,
                cfg.seed,
                cfg.p_false_alarm,
            )?;
            let e = run.estimate;
            let (lo, hi) = wilson(&e);
            t.push(vec![
                k.to_string(),
                hyp.into(),
                setup.q.to_string(),
                num(lambda),
                num(analytic),
                e.trials.to_string(),
                e.alarms.to_string(),
                num(e.rate),
                num(e.std_error),
                num(lo),
                num(hi),
            ]);
        }
    }
    Ok(t)
}

fn verdict_name(v: OrderingVerdict) -> &'static str {
    match v {
        OrderingVerdict::MorePrivate => "more-private",
        OrderingVerdict::NotMorePrivate(OrderingFailure::SubspaceNotNested) => "not-nested",
        OrderingVerdict::NotMorePrivate(OrderingFailure::CovarianceNotDominated { .. }) => "not-dominated",
        OrderingVerdict::Incomparable => "incomparable",
    }
}

fn privacy_compare(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let sc = cfg.scenario();
    let mut t = Table::new(&[
        "subsystem",
        "first_set",
        "second_set",
        "shared_first",
        "shared_second",
        "trace_first",
        "trace_second",
        "verdict",
        "min_eigenvalue",
        "noise_condition",
    ]);
    for k in 1..sc.sets.len() {
        for j in (0..sc.system.len()).filter(|&j| j != sc.detector) {
            let s = sc.system.subsystem(j);
            let (m1, m2) = (&sc.sets[k - 1][j], &sc.sets[k][j]);
            let a1 = assess(m1, &s.c, &s.sigma_v, cfg.horizon)?;
            let a2 = assess(m2, &s.c, &s.sigma_v, cfg.horizon)?;
            let cert = is_more_private(m2, m1, &s.c, &s.sigma_v, cfg.horizon, None)?;
            t.push(vec![
                j.to_string(),
                (k - 1).to_string(),
                k.to_string(),
                m1.shared_dim().to_string(),
                m2.shared_dim().to_string(),
                num(a1.sigma_e.trace()),
                num(a2.sigma_e.trace()),
                verdict_name(cert.verdict).into(),
                cert.min_eigenvalue.map(num).unwrap_or_default(),
                check_sufficient_condition(m1, m2)?.to_string(),
            ]);
        }
    }
    Ok(t)
}

fn tradeoff_map(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let sc = cfg.scenario();
    let [first, second] = cfg.compare;
    let pair = setup_pair(&sc.system, &sc.sets[first], &sc.sets[second], sc.detector, cfg.horizon)?;
    let (q1, q2) = (pair.setup1.q, pair.setup2.q);
    if q1 == 0 || q2 == 0 {
        return Err(secpriv::Error::NoTestPossible.into());
    }
    let cells = region_from_spectrum(&pair.spectrum, q1, q2, &cfg.snr, &cfg.snr, cfg.p_false_alarm)?;
    let counter = find_counter_tradeoff(&pair, cfg.p_false_alarm, &cfg.snr)?;
    let mut t = Table::new(&[
        "lambda_second",
        "lambda_first",
        "admissible",
        "pd_first",
        "pd_second",
        "better",
    ]);
    t.meta("first_set", first);
    t.meta("second_set", second);
    t.meta("q_first", q1);
    t.meta("q_second", q2);
    t.meta("mu_min", num(pair.spectrum.mu_min()));
    t.meta("mu_max", num(pair.spectrum.mu_max()));
    t.meta(
        "counter_tradeoff",
        counter.map_or("none".to_string(), |r| format!("lambda_second:{}", num(r.lambda2))),
    );
    for c in cells {
        t.push(vec![
            num(c.x),
            num(c.y),
            c.admissible.to_string(),
            num(c.pd1),
            num(c.pd2),
            match c.better {
                Better::First => "first",
                Better::Second => "second",
                Better::Tie => "tie",
            }
            .into(),
        ]);
    }
    Ok(t)
}

fn sweep(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let sc = cfg.scenario();
    let (_, stacked) = attack(cfg);
    let base = &sc.sets[cfg.compare[0]];
    let curve = noise_sweep(
        &sc.system,
        base,
        sc.detector,
        cfg.horizon,
        &cfg.sigmas,
        &stacked,
        cfg.p_false_alarm,
    )?;
    let mut t = Table::new(&["sigma", "q", "lambda", "threshold", "p_detect", "p_miss"]);
    t.meta("base_set", cfg.compare[0]);
    t.meta("attack_magnitude", num(cfg.magnitude));
    t.meta("strictly_decreasing", curve.strictly_decreasing);
    for (sigma, p) in &curve.points {
        t.push(vec![
            num(*sigma),
            p.q.to_string(),
            num(p.lambda),
            num(p.threshold),
            num(p.p_detect),
            num(p.p_miss),
        ]);
    }
    Ok(t)
}

fn noise_design(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let sc = cfg.scenario();
    let base = &sc.sets[cfg.compare[0]];
    let sharing = sc.system.len() - 1;
    let problem = build_noise_design(
        &sc.system,
        base,
        sc.detector,
        cfg.horizon,
        &vec![PrivacyTarget::Reduced(0.0); sharing],
    )?;
    let mut t = Table::new(&["target", "subsystem", "epsilon", "block_cost", "cost", "covariance"]);
    t.meta("base_set", cfg.compare[0]);
    t.meta("detection_offset", num(problem.l_offset));
    for &level in &cfg.targets {
        let p = problem.with_targets(&vec![PrivacyTarget::ErrorTrace(level); sharing])?;
        let sol = solve_noise_design(&p)?;
        for ((b, (j, cov)), block_cost) in p.blocks.iter().zip(&sol.covariances).zip(&sol.block_costs) {
            // row-major, space separated
            let flat: Vec<String> = (0..cov.nrows())
                .flat_map(|r| (0..cov.ncols()).map(move |c| (r, c)))
                .map(|(r, c)| num(cov[(r, c)]))
                .collect();
            t.push(vec![
                num(level),
                j.to_string(),
                num(b.epsilon),
                num(*block_cost),
                num(sol.cost),
                flat.join(" "),
            ]);
        }
    }
    Ok(t)
}

fn demo(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let sc = cfg.scenario();
    let (signal, stacked) = attack(cfg);
    let mut t = Table::new(&[
        "set",
        "shared_dims",
        "more_private_than_previous",
        "q",
        "lambda",
        "analytic_p_detect",
        "empirical_p_detect",
        "empirical_p_false_alarm",
    ]);
    t.meta("attack_magnitude", num(cfg.magnitude));
    t.meta("trials", cfg.trials);
    for (k, set) in sc.sets.iter().enumerate() {
        let dims: Vec<String> = (0..sc.system.len())
            .filter(|&j| j != sc.detector)
            .map(|j| set[j].shared_dim().to_string())
            .collect();
        let ordered = if k == 0 {
            String::new()
        } else {
            let mut all = true;
            for j in (0..sc.system.len()).filter(|&j| j != sc.detector) {
                let s = sc.system.subsystem(j);
                all &= is_more_private(&set[j], &sc.sets[k - 1][j], &s.c, &s.sigma_v, cfg.horizon, None)?.holds();
            }
            all.to_string()
        };
        let setup = setup_for(cfg, set)?;
        let mut row = vec![k.to_string(), dims.join(" "), ordered, setup.q.to_string()];
        if setup.q > 0 {
            let pd = analytic_detection(&setup, &stacked, cfg.p_false_alarm)?;
            let h1 = montecarlo::run(
                &sc.system,
                set,
                sc.detector,
                cfg.horizon,
                Some(&signal),
                cfg.trials,
                cfg.seed,
                cfg.p_false_alarm,
            )?;
            let h0 = montecarlo::run(
                &sc.system,
                set,
                sc.detector,
                cfg.horizon,
                None,
                cfg.trials,
                cfg.seed,
                cfg.p_false_alarm,
            )?;
            row.extend([
                num(pd.lambda),
                num(pd.p_detect),
                num(h1.estimate.rate),
                num(h0.estimate.rate),
            ]);
        } else {
            row.resize(t.header.len(), String::new());
        }
        t.push(row);
    }
    Ok(t)
}
