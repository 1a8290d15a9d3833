//! Ten-generator reduced model of the IEEE 39-bus system: linearized swing
//! dynamics, subsystem partition, sampling, and three sharing cases for a
//! detector on the first subsystem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{exp_with_integral, Matrix, Vector};
use crate::privacy::PrivacyMechanism;
use crate::system::{InterconnectedSystem, LocalParts};

const GENERATOR_TABLE: &str = include_str!("../data/ieee39_generators.txt");

pub const SAMPLING_TIME: f64 = 0.1;
pub const HORIZON: usize = 3;
pub const P_FALSE_ALARM: f64 = 0.05;
pub const DAMPING: f64 = 10.0;
pub const INERTIA: [f64; 10] = [70.0, 10.0, 40.0, 30.0, 70.0, 30.0, 90.0, 80.0, 40.0, 50.0];
/// Zero-based generators whose mechanical power input is attacked.
pub const ATTACKED: [usize; 3] = [0, 3, 7];
/// Per-step attack on the first subsystem's generator.
pub const ATTACK_MAGNITUDE: f64 = 2500.0;
/// Standard deviation of the raw reactance draw.
pub const REACTANCE_STD: f64 = 0.1;
pub const REACTANCE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    pub inertia: f64,
    pub damping: f64,
    /// Internal voltage magnitude.
    pub voltage: f64,
    /// Equilibrium rotor angle in radians.
    pub angle: f64,
    pub mechanical_power: f64,
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inertia > 0.0 && self.damping > 0.0 && self.voltage > 0.0) {
            return Err(Error::InvalidInput(format!(
                "generator parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub generators: Vec<GeneratorParams>,
    /// Line reactances; `f64::INFINITY` marks no line. Diagonal must be infinite.
    pub reactances: Matrix,
    /// Zero-based generator groups, one per subsystem.
    pub partition: Vec<Vec<usize>>,
    pub sampling_time: f64,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for g in &self.generators {
            g.validate()?;
        }
        if self.reactances.shape() != (n, n) {
            return Err(dim_err(
                "reactance matrix",
                format!("{n}x{n}"),
                format!("{:?}", self.reactances.shape()),
            ));
        }
        for i in 0..n {
            if self.reactances[(i, i)].is_finite() {
                return Err(Error::InvalidInput(format!(
                    "generator {i} has a finite self reactance"
                )));
            }
            for j in 0..n {
                let x = self.reactances[(i, j)];
                if i != j && (x.is_nan() || x <= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "reactance ({i},{j}) must be positive, got {x}"
                    )));
                }
                if x != self.reactances[(j, i)] {
                    return Err(Error::InvalidInput("reactance matrix is not symmetric".into()));
                }
            }
        }
        let mut seen = vec![false; n];
        for &g in self.partition.iter().flatten() {
            if g >= n || seen[g] {
                return Err(Error::InvalidInput(format!(
                    "partition lists generator {g} twice or out of range"
                )));
            }
            seen[g] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("partition does not cover every generator".into()));
        }
        if self.sampling_time.is_nan() || self.sampling_time <= 0.0 {
            return Err(Error::InvalidInput("sampling time must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the shipped generator table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceGenerator {
    pub bus: usize,
    pub voltage: f64,
    pub angle_deg: f64,
    pub power_mw: f64,
}

pub fn reference_generators() -> Result<Vec<ReferenceGenerator>> {
    GENERATOR_TABLE
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::InvalidInput(format!("malformed generator row: {line}"));
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(ReferenceGenerator {
                bus: f[0].parse().map_err(|_| bad())?,
                voltage: num(f[1])?,
                angle_deg: num(f[2])?,
                power_mw: num(f[3])?,
            })
        })
        .collect()
}

/// Fully connected reactances `|N(0, REACTANCE_STD²)|` floored at
/// `REACTANCE_FLOOR`.
pub fn random_reactances(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, REACTANCE_STD).expect("positive std");
    let mut x = Matrix::from_element(n, n, f64::INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            let v = normal.sample(rng).abs().max(REACTANCE_FLOOR);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
    x
}

/// Linearized coupling `L_ij = −E_iE_j cos(θ_i − θ_j)/X_ij`, zero row sums.
pub fn laplacian(spec: &GridSpec) -> Result<Matrix> {
    spec.validate()?;
    let n = spec.len();
    let g = &spec.generators;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let x = spec.reactances[(i, j)];
                l[(i, j)] = if x.is_infinite() {
                    0.0
                } else {
                    -g[i].voltage * g[j].voltage * (g[i].angle - g[j].angle).cos() / x
                };
            }
        }
        l[(i, i)] = -l.row(i).sum();
    }
    Ok(l)
}

/// `Π` with `x = Π x̃`, where `x̃ = [θ; ω]` and `x` lists `(θ_g, ω_g)` pairs
/// subsystem by subsystem.
pub fn state_permutation(partition: &[Vec<usize>], n: usize) -> Matrix {
    let mut p = Matrix::zeros(2 * n, 2 * n);
    let mut row = 0;
    for &g in partition.iter().flatten() {
        p[(row, g)] = 1.0;
        p[(row + 1, n + g)] = 1.0;
        row += 2;
    }
    p
}

#[derive(Debug, Clone)]
pub struct ContinuousModel {
    /// Permuted state matrix `Π Ã_c Πᵀ`.
    pub a: Matrix,
    /// Permuted attack input `Π B̃ᵃ_c`, one column per attacked generator.
    pub b_attack: Matrix,
    pub permutation: Matrix,
}

pub fn build_continuous(spec: &GridSpec, attacked: &[usize]) -> Result<ContinuousModel> {
    let l = laplacian(spec)?;
    let n = spec.len();
    let mut a = Matrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    let mut b = Matrix::zeros(2 * n, attacked.len());
    for (i, g) in spec.generators.iter().enumerate() {
        for j in 0..n {
            a[(n + i, j)] = -l[(i, j)] / g.inertia;
        }
        a[(n + i, n + i)] = -g.damping / g.inertia;
    }
    for (c, &g) in attacked.iter().enumerate() {
        if g >= n {
            return Err(Error::InvalidInput(format!("attacked generator {g} out of range")));
        }
        b[(n + g, c)] = 1.0 / spec.generators[g].inertia;
    }
    let p = state_permutation(&spec.partition, n);
    Ok(ContinuousModel {
        a: &p * a * p.transpose(),
        b_attack: &p * b,
        permutation: p,
    })
}

/// Zero-order-hold sampling: `(e^{A_c T_s}, ∫₀^{T_s} e^{A_c τ}dτ · Bᵃ_c)`.
pub fn discretize(a_c: &Matrix, b_c: &Matrix, ts: f64) -> Result<(Matrix, Matrix)> {
    if b_c.nrows() != a_c.nrows() {
        return Err(dim_err("attack input rows", a_c.nrows(), b_c.nrows()));
    }
    let (a, integral) = exp_with_integral(a_c, ts)?;
    Ok((a, integral * b_c))
}

/// Generators from the shipped table with the fixed inertia and damping.
pub fn reference_spec(reactances: Matrix) -> Result<GridSpec> {
    let generators = reference_generators()?
        .iter()
        .zip(INERTIA)
        .map(|(r, m)| GeneratorParams {
            inertia: m,
            damping: DAMPING,
            voltage: r.voltage,
            angle: r.angle_deg.to_radians(),
            mechanical_power: r.power_mw / 100.0,
        })
        .collect::<Vec<_>>();
    if generators.len() != INERTIA.len() {
        return Err(dim_err("generator table rows", INERTIA.len(), generators.len()));
    }
    let spec = GridSpec {
        generators,
        reactances,
        partition: vec![vec![0, 1, 2], vec![3, 4, 5, 6], vec![7, 8, 9]],
        sampling_time: SAMPLING_TIME,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone)]
pub struct PowerGridScenario {
    pub seed: u64,
    pub spec: GridSpec,
    pub system: InterconnectedSystem,
    /// Full sharing, then two progressively more private sets. Entry 0 of
    /// each set belongs to the detector and is not used.
    pub cases: [Vec<PrivacyMechanism>; 3],
    pub detector: usize,
    pub horizon: usize,
    pub p_false_alarm: f64,
}

impl PowerGridScenario {
    /// Stacked state-level attack for a constant input on the detector's
    /// generator.
    pub fn constant_attack(&self, magnitude: f64) -> Vector {
        let b = &self.system.subsystem(self.detector).b_attack;
        let step = b * Vector::from_element(b.ncols(), magnitude);
        Vector::from_fn(step.len() * self.horizon, |i, _| step[i % step.len()])
    }

    /// Full selection on every shared stream with added noise `σ²I`.
    pub fn noise_only(&self, sigma: f64) -> Result<Vec<PrivacyMechanism>> {
        self.system
            .subsystems()
            .iter()
            .map(|s| {
                let p = s.output_dim();
                PrivacyMechanism::select(p, &(0..p).collect::<Vec<_>>(), sigma * sigma)
            })
            .collect()
    }
}

/// The demonstration setup with reactances drawn from `seed`.
pub fn demo_scenario(seed: u64) -> Result<PowerGridScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = reference_spec(random_reactances(INERTIA.len(), &mut rng))?;
    let cont = build_continuous(&spec, &ATTACKED)?;
    let (a, b_attack) = discretize(&cont.a, &cont.b_attack, spec.sampling_time)?;
    let dims: Vec<usize> = spec.partition.iter().map(|g| 2 * g.len()).collect();
    let measurement_var = [1.0, 0.5, 1.0];
    let mut off = 0;
    let parts = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let cols: Vec<usize> = ATTACKED
                .iter()
                .enumerate()
                .filter(|(_, g)| spec.partition[i].contains(g))
                .map(|(c, _)| c)
                .collect();
            let b = b_attack.view((off, 0), (d, b_attack.ncols())).select_columns(&cols);
            off += d;
            LocalParts {
                c: Matrix::identity(d, d),
                b_attack: b,
                sigma_w: Matrix::identity(d, d) * 0.5,
                sigma_v: Matrix::identity(d, d) * measurement_var[i],
                sigma_x0: Matrix::identity(d, d),
            }
        })
        .collect();
    let system = InterconnectedSystem::from_global(&a, &dims, parts)?;
    let all = |p: usize| (0..p).collect::<Vec<_>>();
    let (p1, p2, p3) = (dims[0], dims[1], dims[2]);
    let cases = [
        vec![
            PrivacyMechanism::full_sharing(p1),
            PrivacyMechanism::full_sharing(p2),
            PrivacyMechanism::full_sharing(p3),
        ],
        vec![
            PrivacyMechanism::full_sharing(p1),
            PrivacyMechanism::full_sharing(p2),
            PrivacyMechanism::select(p3, &all(4), 1.0)?,
        ],
        vec![
            PrivacyMechanism::full_sharing(p1),
            PrivacyMechanism::select(p2, &all(6), 1.0)?,
            PrivacyMechanism::select(p3, &all(4), 1.0)?,
        ],
    ];
    Ok(PowerGridScenario {
        seed,
        spec,
        system,
        cases,
        detector: 0,
        horizon: HORIZON,
        p_false_alarm: P_FALSE_ALARM,
    })
}
