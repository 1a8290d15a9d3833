//! Run configuration: a TOML file merged with command-line overrides.

use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use secpriv::linalg::Matrix;
use secpriv::powergrid::{self, demo_scenario};
use secpriv::privacy::PrivacyMechanism;
use secpriv::scenarios::{coupled_pair, random_instance, RandomSpec};
use secpriv::system::{InterconnectedSystem, SubsystemModel};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    PdSurface,
    Detect,
    MonteCarlo,
    PrivacyCompare,
    TradeoffMap,
    NoiseSweep,
    NoiseDesign,
    PowerGridDemo,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::PdSurface,
        Experiment::Detect,
        Experiment::MonteCarlo,
        Experiment::PrivacyCompare,
        Experiment::TradeoffMap,
        Experiment::NoiseSweep,
        Experiment::NoiseDesign,
        Experiment::PowerGridDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::PdSurface => "pd-surface",
            Experiment::Detect => "detect",
            Experiment::MonteCarlo => "montecarlo",
            Experiment::PrivacyCompare => "privacy-compare",
            Experiment::TradeoffMap => "tradeoff-map",
            Experiment::NoiseSweep => "noise-sweep",
            Experiment::NoiseDesign => "noise-design",
            Experiment::PowerGridDemo => "powergrid-demo",
        }
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
            CliError::Usage(format!(
                "unknown experiment `{s}` (expected one of: {})",
                names.join(", ")
            ))
        })
    }
}

/// Raw file contents. Every field is optional; flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub p_false_alarm: Option<f64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default, rename = "subsystem")]
    pub subsystems: Vec<SubsystemSection>,
    #[serde(default, rename = "mechanism_set")]
    pub mechanism_sets: Vec<MechanismSetSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// `builtin:powergrid`, `builtin:coupled-pair`, `random` or `inline`.
    pub source: Option<String>,
    /// Seed of the system draw (reactances or random instance).
    pub seed: Option<u64>,
    pub detector: Option<usize>,
    /// Mechanism-set indices compared by the two-set experiments.
    pub compare: Option<[usize; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// Constant value of every attack input over the horizon.
    pub magnitude: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub q_max: Option<usize>,
    pub lambdas: Option<Vec<f64>>,
    pub sigmas: Option<Vec<f64>>,
    /// Error-trace privacy levels for the noise design.
    pub targets: Option<Vec<f64>>,
    /// SNR axis of the trade-off map.
    pub snr: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub b_attack: Vec<Vec<f64>>,
    pub sigma_w: Vec<Vec<f64>>,
    pub sigma_v: Vec<Vec<f64>>,
    pub sigma_x0: Vec<Vec<f64>>,
}

/// One mechanism per subsystem: shared output rows and added noise variance.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSetSection {
    pub rows: Vec<Vec<usize>>,
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    PowerGrid,
    CoupledPair,
    Random,
    Inline,
}

impl SourceKind {
    pub fn name(self) -> &'static str {
        match self {
            SourceKind::PowerGrid => "builtin:powergrid",
            SourceKind::CoupledPair => "builtin:coupled-pair",
            SourceKind::Random => "random",
            SourceKind::Inline => "inline",
        }
    }
}

impl FromStr for SourceKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        [
            SourceKind::PowerGrid,
            SourceKind::CoupledPair,
            SourceKind::Random,
            SourceKind::Inline,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| CliError::Usage(format!("unknown system source `{s}`")))
    }
}

/// Command-line values that override the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub p_false_alarm: Option<f64>,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A system with its mechanism sets, ordered from least to most private.
pub struct Scenario {
    pub system: InterconnectedSystem,
    pub sets: Vec<Vec<PrivacyMechanism>>,
    pub detector: usize,
}

pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub horizon: usize,
    pub p_false_alarm: f64,
    pub trials: usize,
    pub out: Option<PathBuf>,
    pub source: SourceKind,
    pub system_seed: u64,
    pub compare: [usize; 2],
    pub magnitude: f64,
    pub q_max: usize,
    pub lambdas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub targets: Vec<f64>,
    pub snr: Vec<f64>,
    pub scenario: Option<Scenario>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, CliError> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Usage(format!("{what}: rows have different lengths")));
    }
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (n - 1) as f64))
        .collect()
}

fn inline_scenario(file: &FileConfig, detector: usize) -> Result<Scenario, CliError> {
    if file.subsystems.is_empty() {
        return Err(CliError::Usage("inline source needs [[subsystem]] tables".into()));
    }
    let subs = file
        .subsystems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let m = |rows: &[Vec<f64>], name: &str| matrix(rows, &format!("subsystem {i} {name}"));
            Ok(SubsystemModel {
                a: m(&s.a, "a")?,
                b: m(&s.b, "b")?,
                c: m(&s.c, "c")?,
                b_attack: m(&s.b_attack, "b_attack")?,
                sigma_w: m(&s.sigma_w, "sigma_w")?,
                sigma_v: m(&s.sigma_v, "sigma_v")?,
                sigma_x0: m(&s.sigma_x0, "sigma_x0")?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let system = InterconnectedSystem::new(subs).map_err(|e| CliError::Usage(e.to_string()))?;
    let sets = if file.mechanism_sets.is_empty() {
        vec![system
            .subsystems()
            .iter()
            .map(|s| PrivacyMechanism::full_sharing(s.output_dim()))
            .collect()]
    } else {
        file.mechanism_sets
            .iter()
            .map(|set| {
                if set.rows.len() != system.len() || set.noise.len() != system.len() {
                    return Err(CliError::Usage("mechanism_set needs one entry per subsystem".into()));
                }
                system
                    .subsystems()
                    .iter()
                    .zip(set.rows.iter().zip(&set.noise))
                    .map(|(s, (rows, &var))| {
                        PrivacyMechanism::select(s.output_dim(), rows, var).map_err(|e| CliError::Usage(e.to_string()))
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?
    };
    Ok(Scenario { system, sets, detector })
}

fn scenario(file: &FileConfig, source: SourceKind, system_seed: u64, horizon: usize) -> Result<Scenario, CliError> {
    let usage = |e: secpriv::Error| CliError::Usage(e.to_string());
    let detector = file.system.detector.unwrap_or(0);
    let sc = match source {
        SourceKind::PowerGrid => {
            let p = demo_scenario(system_seed).map_err(usage)?;
            Scenario {
                system: p.system,
                sets: p.cases.to_vec(),
                detector: p.detector,
            }
        }
        SourceKind::CoupledPair => {
            let (system, full) = coupled_pair(0).map_err(usage)?;
            let (_, hidden) = coupled_pair(1).map_err(usage)?;
            let mut everything = full.clone();
            everything[1] = PrivacyMechanism::full_sharing(2);
            Scenario {
                system,
                sets: vec![everything, full, hidden],
                detector: 0,
            }
        }
        SourceKind::Random => {
            let spec = RandomSpec {
                horizon,
                ..RandomSpec::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(system_seed);
            let inst = random_instance(&mut rng, &spec).map_err(usage)?;
            Scenario {
                system: inst.system,
                sets: vec![inst.base, inst.private],
                detector: 0,
            }
        }
        SourceKind::Inline => inline_scenario(file, detector)?,
    };
    if sc.detector >= sc.system.len() {
        return Err(CliError::Usage(format!("detector {} out of range", sc.detector)));
    }
    Ok(sc)
}

impl ExperimentConfig {
    pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Self, CliError> {
        let name = flags.experiment.or(file.experiment.clone()).ok_or_else(|| {
            CliError::Usage("no experiment given (use --experiment or `experiment` in the config)".into())
        })?;
        let experiment: Experiment = name.parse()?;
        let source: SourceKind = file.system.source.as_deref().unwrap_or("builtin:powergrid").parse()?;
        let horizon = flags.horizon.or(file.horizon).unwrap_or(powergrid::HORIZON);
        let trials = flags.trials.or(file.trials).unwrap_or(1000);
        let p_false_alarm = flags
            .p_false_alarm
            .or(file.p_false_alarm)
            .unwrap_or(powergrid::P_FALSE_ALARM);
        if horizon == 0 {
            return Err(CliError::Usage("horizon must be at least 1".into()));
        }
        if trials == 0 {
            return Err(CliError::Usage("trials must be at least 1".into()));
        }
        if !(p_false_alarm > 0.0 && p_false_alarm < 1.0) {
            return Err(CliError::Usage(format!(
                "false-alarm level must lie in (0, 1), got {p_false_alarm}"
            )));
        }
        let system_seed = file.system.seed.unwrap_or(0);
        let magnitude = file.attack.magnitude.unwrap_or(match source {
            SourceKind::PowerGrid => powergrid::ATTACK_MAGNITUDE,
            _ => 1.0,
        });
        let q_max = file.sweep.q_max.unwrap_or(20);
        if q_max == 0 {
            return Err(CliError::Usage("q_max must be at least 1".into()));
        }
        let scenario = match experiment {
            Experiment::PdSurface => None,
            _ => Some(scenario(&file, source, system_seed, horizon)?),
        };
        let sets = scenario.as_ref().map_or(0, |s| s.sets.len());
        let compare = file.system.compare.unwrap_or([0, sets.saturating_sub(1)]);
        if scenario.is_some() && compare.iter().any(|&k| k >= sets) {
            return Err(CliError::Usage(format!(
                "compare indices {compare:?} out of range for {sets} mechanism sets"
            )));
        }
        Ok(Self {
            experiment,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            horizon,
            p_false_alarm,
            trials,
            out: flags.out.or(file.out),
            source,
            system_seed,
            compare,
            magnitude,
            q_max,
            lambdas: file.sweep.lambdas.unwrap_or_else(|| vec![0.0, 1.0, 5.0, 20.0, 80.0]),
            sigmas: file.sweep.sigmas.unwrap_or_else(|| vec![0.0, 0.5, 1.0, 2.0, 4.0]),
            targets: file
                .sweep
                .targets
                .unwrap_or_else(|| (0..=20).map(|k| 20.0 * k as f64).collect()),
            snr: file.sweep.snr.unwrap_or_else(|| log_grid(-2.0, 2.0, 41)),
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
            .as_ref()
            .expect("scenario resolved for system experiments")
    }
}

pub fn parse_file(text: &str) -> Result<FileConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Usage(format!("malformed config: {e}")))
}
