//! Interconnected discrete-time LTI subsystems and seeded simulation of
//! (possibly attacked) trajectories.

use nalgebra::{Cholesky, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{ensure_finite, is_symmetric, min_eigenvalue, symmetrize, Matrix, Vector};
use crate::privacy::PrivacyMechanism;

/// One subsystem `x(k+1) = A x(k) + B x₋(k) + Bᵃ ã(k) + w(k)`,
/// `y(k) = C x(k) + v(k)`, where `x₋` stacks the states of every other
/// subsystem in index order.
#[derive(Debug, Clone)]
pub struct SubsystemModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub b_attack: Matrix,
    pub sigma_w: Matrix,
    pub sigma_v: Matrix,
    pub sigma_x0: Matrix,
}

fn check_cov(m: &Matrix, dim: usize, what: &str, definite: bool) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(dim_err(what, format!("{dim}x{dim}"), format!("{:?}", m.shape())));
    }
    ensure_finite(m, what)?;
    if dim == 0 {
        return Ok(());
    }
    if !is_symmetric(m, 1e-10) {
        return Err(Error::InvalidInput(format!("{what} is not symmetric")));
    }
    let lmin = min_eigenvalue(m);
    if definite && lmin <= 0.0 {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    if lmin < -1e-12 * (1.0 + m.norm()) {
        return Err(Error::InvalidInput(format!("{what} is not PSD")));
    }
    Ok(())
}

impl SubsystemModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn attack_dim(&self) -> usize {
        self.b_attack.ncols()
    }

    /// Checks shapes and covariance definiteness (`Σ_w`, `Σ_v` PD,
    /// `Σ_x0` PSD). The interconnection width is checked by the system.
    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if !self.a.is_square() {
            return Err(dim_err("state matrix", "square", format!("{:?}", self.a.shape())));
        }
        for (m, what) in [
            (&self.a, "A"),
            (&self.b, "B"),
            (&self.c, "C"),
            (&self.b_attack, "attack input"),
        ] {
            ensure_finite(m, what)?;
        }
        if self.b.nrows() != n {
            return Err(dim_err("interconnection matrix rows", n, self.b.nrows()));
        }
        if self.c.ncols() != n {
            return Err(dim_err("output matrix columns", n, self.c.ncols()));
        }
        if self.b_attack.nrows() != n {
            return Err(dim_err("attack input rows", n, self.b_attack.nrows()));
        }
        check_cov(&self.sigma_w, n, "process noise covariance", true)?;
        check_cov(&self.sigma_v, self.output_dim(), "measurement noise covariance", true)?;
        check_cov(&self.sigma_x0, n, "initial state covariance", false)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InterconnectedSystem {
    subsystems: Vec<SubsystemModel>,
    offsets: Vec<usize>,
    n: usize,
}

impl InterconnectedSystem {
    pub fn new(subsystems: Vec<SubsystemModel>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::InvalidInput("system needs at least one subsystem".into()));
        }
        let mut offsets = Vec::with_capacity(subsystems.len());
        let mut n = 0;
        for s in &subsystems {
            s.validate()?;
            offsets.push(n);
            n += s.state_dim();
        }
        for (i, s) in subsystems.iter().enumerate() {
            if s.b.ncols() != n - s.state_dim() {
                return Err(dim_err(
                    &format!("interconnection matrix columns of subsystem {i}"),
                    n - s.state_dim(),
                    s.b.ncols(),
                ));
            }
        }
        Ok(Self { subsystems, offsets, n })
    }

    /// Splits a global state matrix into subsystem blocks: `A_i` is the
    /// diagonal block and `B_i` the remaining columns of the row block.
    /// `parts[i]` supplies `(C_i, Bᵃ_i, Σ_w, Σ_v, Σ_x0)`.
    pub fn from_global(a: &Matrix, dims: &[usize], parts: Vec<LocalParts>) -> Result<Self> {
        let n: usize = dims.iter().sum();
        if a.shape() != (n, n) {
            return Err(dim_err(
                "global state matrix",
                format!("{n}x{n}"),
                format!("{:?}", a.shape()),
            ));
        }
        if parts.len() != dims.len() {
            return Err(dim_err("subsystem parts", dims.len(), parts.len()));
        }
        let mut offsets = Vec::new();
        let mut acc = 0;
        for &d in dims {
            offsets.push(acc);
            acc += d;
        }
        let subsystems = parts
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let (off, d) = (offsets[i], dims[i]);
                let rows = a.rows(off, d);
                let mut b = Matrix::zeros(d, n - d);
                let mut col = 0;
                for j in 0..n {
                    if j < off || j >= off + d {
                        b.set_column(col, &rows.column(j));
                        col += 1;
                    }
                }
                SubsystemModel {
                    a: rows.columns(off, d).into_owned(),
                    b,
                    c: p.c,
                    b_attack: p.b_attack,
                    sigma_w: p.sigma_w,
                    sigma_v: p.sigma_v,
                    sigma_x0: p.sigma_x0,
                }
            })
            .collect();
        Self::new(subsystems)
    }

    pub fn subsystems(&self) -> &[SubsystemModel] {
        &self.subsystems
    }

    pub fn subsystem(&self, i: usize) -> &SubsystemModel {
        &self.subsystems[i]
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// Offset of subsystem `i` in the global state.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Global state matrix assembled from the subsystem blocks.
    pub fn global_a(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n, self.n);
        for (i, s) in self.subsystems.iter().enumerate() {
            let (off, d) = (self.offsets[i], s.state_dim());
            a.view_mut((off, off), (d, d)).copy_from(&s.a);
            let mut col = 0;
            for j in 0..self.n {
                if j < off || j >= off + d {
                    a.view_mut((off, j), (d, 1)).copy_from(&s.b.column(col));
                    col += 1;
                }
            }
        }
        a
    }

    /// `x₋ᵢ`: the states of all subsystems except `i`, stacked in order.
    pub fn others(&self, i: usize, states: &[Vector]) -> Vector {
        let parts: Vec<&Vector> = states
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, x)| x)
            .collect();
        let len = parts.iter().map(|x| x.len()).sum();
        let mut out = Vector::zeros(len);
        let mut at = 0;
        for x in parts {
            out.rows_mut(at, x.len()).copy_from(x);
            at += x.len();
        }
        out
    }
}

/// Per-subsystem data for [`InterconnectedSystem::from_global`].
#[derive(Debug, Clone)]
pub struct LocalParts {
    pub c: Matrix,
    pub b_attack: Matrix,
    pub sigma_w: Matrix,
    pub sigma_v: Matrix,
    pub sigma_x0: Matrix,
}

/// Attack inputs `ã(0..T−1)` on one subsystem.
#[derive(Debug, Clone)]
pub struct AttackSignal {
    pub target: usize,
    pub values: Vec<Vector>,
}

impl AttackSignal {
    pub fn constant(target: usize, value: Vector, horizon: usize) -> Self {
        Self {
            target,
            values: vec![value; horizon],
        }
    }

    /// `value` at `k = 0`, zero afterwards.
    pub fn impulse(target: usize, value: Vector, horizon: usize) -> Self {
        let zero = Vector::zeros(value.len());
        let mut values = vec![zero; horizon];
        if horizon > 0 {
            values[0] = value;
        }
        Self { target, values }
    }

    /// Stacked state-level attack `a = (I_T ⊗ Bᵃ) ã`.
    pub fn stacked_state_attack(&self, b_attack: &Matrix) -> Vector {
        let n = b_attack.nrows();
        let mut out = Vector::zeros(n * self.values.len());
        for (k, v) in self.values.iter().enumerate() {
            out.rows_mut(k * n, n).copy_from(&(b_attack * v));
        }
        out
    }
}

/// States for `k = 0..T` and noisy outputs for `k = 0..T` of every
/// subsystem.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub horizon: usize,
    pub seed: u64,
    /// `states[i][k]`.
    pub states: Vec<Vec<Vector>>,
    /// `outputs[i][k]`.
    pub outputs: Vec<Vec<Vector>>,
}

impl Trajectory {
    /// `[y_i(1); …; y_i(T)]`.
    pub fn local_outputs(&self, i: usize) -> Vector {
        stack(&self.outputs[i][1..=self.horizon])
    }
}

pub(crate) fn stack(parts: &[Vector]) -> Vector {
    let len = parts.iter().map(|v| v.len()).sum();
    let mut out = Vector::zeros(len);
    let mut at = 0;
    for v in parts {
        out.rows_mut(at, v.len()).copy_from(v);
        at += v.len();
    }
    out
}

/// Draws `N(0, Σ)` samples from a fixed square-root factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: Matrix,
}

impl GaussianSampler {
    /// Cholesky factor when `Σ ≻ 0`, otherwise an eigenvalue square root with
    /// eigenvalues down to `−1e-12` clipped to zero.
    pub fn new(cov: &Matrix) -> Result<Self> {
        let n = cov.nrows();
        if !cov.is_square() {
            return Err(dim_err("covariance", "square", format!("{:?}", cov.shape())));
        }
        ensure_finite(cov, "covariance")?;
        if n == 0 {
            return Ok(Self {
                factor: Matrix::zeros(0, 0),
            });
        }
        let sym = symmetrize(cov);
        if let Some(ch) = Cholesky::new(sym.clone()) {
            return Ok(Self { factor: ch.l() });
        }
        let eig = SymmetricEigen::new(sym);
        let mut factor = eig.eigenvectors.clone();
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l < -1e-12 {
                return Err(Error::InvalidInput(format!("covariance has negative eigenvalue {l}")));
            }
            let mut col = factor.column_mut(k);
            col *= l.max(0.0).sqrt();
        }
        Ok(Self { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vector {
        let z = Vector::from_fn(self.factor.ncols(), |_, _| StandardNormal.sample(rng));
        &self.factor * z
    }
}

/// Noise kinds, each with its own random stream per subsystem.
#[derive(Debug, Clone, Copy)]
pub(crate) enum NoiseKind {
    InitialState = 0,
    Process = 1,
    Measurement = 2,
    Privacy = 3,
}

pub(crate) fn noise_stream(seed: u64, subsystem: usize, kind: NoiseKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((subsystem as u64) * 8 + kind as u64);
    rng
}

/// Simulates `horizon` steps. Every (subsystem, noise kind) pair draws from
/// its own stream, so adding or changing the attack leaves all noise draws
/// untouched.
pub fn simulate(
    system: &InterconnectedSystem,
    attack: Option<&AttackSignal>,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    if let Some(att) = attack {
        if att.target >= system.len() {
            return Err(Error::InvalidInput(format!(
                "attack target {} out of range",
                att.target
            )));
        }
        let r = system.subsystem(att.target).attack_dim();
        if att.values.len() != horizon {
            return Err(dim_err("attack length", horizon, att.values.len()));
        }
        if let Some(bad) = att.values.iter().find(|v| v.len() != r) {
            return Err(dim_err("attack input dimension", r, bad.len()));
        }
    }
    let subs = system.subsystems();
    let samplers = subs
        .iter()
        .map(|s| {
            Ok((
                GaussianSampler::new(&s.sigma_x0)?,
                GaussianSampler::new(&s.sigma_w)?,
                GaussianSampler::new(&s.sigma_v)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rngs: Vec<[ChaCha8Rng; 3]> = (0..subs.len())
        .map(|i| {
            [
                noise_stream(seed, i, NoiseKind::InitialState),
                noise_stream(seed, i, NoiseKind::Process),
                noise_stream(seed, i, NoiseKind::Measurement),
            ]
        })
        .collect();

    let mut states: Vec<Vec<Vector>> = (0..subs.len())
        .map(|i| vec![samplers[i].0.sample(&mut rngs[i][0])])
        .collect();
    for k in 0..horizon {
        let current: Vec<Vector> = states.iter().map(|s| s[k].clone()).collect();
        for (i, s) in subs.iter().enumerate() {
            let mut next =
                &s.a * &current[i] + &s.b * system.others(i, &current) + samplers[i].1.sample(&mut rngs[i][1]);
            if let Some(att) = attack.filter(|a| a.target == i) {
                next += &s.b_attack * &att.values[k];
            }
            states[i].push(next);
        }
    }
    let outputs = subs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            states[i]
                .iter()
                .map(|x| &s.c * x + samplers[i].2.sample(&mut rngs[i][2]))
                .collect()
        })
        .collect();
    Ok(Trajectory {
        horizon,
        seed,
        states,
        outputs,
    })
}

/// Shared streams `ỹ_j(k) = S_j y_j(k) + r̃_j(k)` for `k = 0..T−1`.
///
/// `mechanisms` has one entry per subsystem; the entry at `detector` is
/// ignored and its returned stream is empty.
pub fn apply_privacy(
    trajectory: &Trajectory,
    mechanisms: &[PrivacyMechanism],
    detector: usize,
    seed: u64,
) -> Result<Vec<Vec<Vector>>> {
    if mechanisms.len() != trajectory.outputs.len() {
        return Err(dim_err("mechanism count", trajectory.outputs.len(), mechanisms.len()));
    }
    mechanisms
        .iter()
        .enumerate()
        .map(|(j, m)| {
            if j == detector {
                return Ok(Vec::new());
            }
            let p = trajectory.outputs[j][0].len();
            if m.output_dim() != p {
                return Err(dim_err(
                    &format!("selection columns of subsystem {j}"),
                    p,
                    m.output_dim(),
                ));
            }
            let sampler = GaussianSampler::new(&m.sigma_r)?;
            let mut rng = noise_stream(seed, j, NoiseKind::Privacy);
            Ok(trajectory.outputs[j][..trajectory.horizon]
                .iter()
                .map(|y| &m.s * y + sampler.sample(&mut rng))
                .collect())
        })
        .collect()
}
