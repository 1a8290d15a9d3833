//! Random interconnected systems with nested mechanism pairs, for property
//! checks and Monte Carlo calibration runs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::detector::{batch_model, build_setup};
use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};
use crate::privacy::PrivacyMechanism;
use crate::system::{InterconnectedSystem, LocalParts, SubsystemModel};

#[derive(Debug, Clone)]
pub struct RandomSpec {
    pub subsystems: usize,
    pub min_state: usize,
    pub max_state: usize,
    pub horizon: usize,
    /// Spectral norm the global state matrix is scaled to.
    pub spectral_norm: f64,
    /// Rank of each interconnection block.
    pub coupling_rank: usize,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            subsystems: 3,
            min_state: 2,
            max_state: 4,
            horizon: 3,
            spectral_norm: 0.9,
            coupling_rank: 1,
        }
    }
}

/// A system, a baseline mechanism set and a post-processed (more private)
/// one. The detector is subsystem 0.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub system: InterconnectedSystem,
    pub base: Vec<PrivacyMechanism>,
    pub private: Vec<PrivacyMechanism>,
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let g = uniform(rng, n, n);
    &g * g.transpose() * 0.5 + Matrix::identity(n, n) * floor
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let k = rng.random_range(0..=n);
    let g = uniform(rng, n, k);
    &g * g.transpose()
}

fn random_mechanism(rng: &mut ChaCha8Rng, p: usize) -> Result<PrivacyMechanism> {
    let m = rng.random_range(1..=p);
    let s = if rng.random_bool(0.5) {
        // coordinate selection
        let mut rows: Vec<usize> = (0..p).collect();
        for i in 0..m {
            let j = rng.random_range(i..p);
            rows.swap(i, j);
        }
        rows.truncate(m);
        rows.sort_unstable();
        let mut s = Matrix::zeros(m, p);
        for (r, &k) in rows.iter().enumerate() {
            s[(r, k)] = 1.0;
        }
        s
    } else {
        uniform(rng, m, p)
    };
    let sigma_r = if rng.random_bool(0.3) {
        Matrix::zeros(m, m)
    } else {
        random_psd(rng, m)
    };
    PrivacyMechanism::new(s, sigma_r)
}

fn post_processed(rng: &mut ChaCha8Rng, base: &PrivacyMechanism) -> Result<PrivacyMechanism> {
    let m = base.shared_dim();
    let k = rng.random_range(1..=m);
    let s = if k == m && rng.random_bool(0.3) {
        Matrix::identity(m, m)
    } else {
        uniform(rng, k, m)
    };
    let sigma_n = random_psd(rng, k) * rng.random_range(0.0..2.0);
    base.post_process(&s, &sigma_n)
}

fn draw(rng: &mut ChaCha8Rng, spec: &RandomSpec) -> Result<RandomInstance> {
    let dims: Vec<usize> = (0..spec.subsystems)
        .map(|_| rng.random_range(spec.min_state..=spec.max_state))
        .collect();
    let n: usize = dims.iter().sum();
    let parts: Vec<LocalParts> = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let p = if i == 0 { d } else { rng.random_range(1..=d) };
            let r = rng.random_range(1..=d);
            LocalParts {
                c: if i == 0 {
                    Matrix::identity(d, d) + uniform(rng, d, d) * 0.3
                } else {
                    uniform(rng, p, d)
                },
                b_attack: if i == 0 {
                    uniform(rng, d, r)
                } else {
                    Matrix::zeros(d, 1)
                },
                sigma_w: random_pd(rng, d, 0.1),
                sigma_v: random_pd(rng, p, 0.2),
                sigma_x0: random_psd(rng, d),
            }
        })
        .collect();
    let outputs: Vec<usize> = parts.iter().map(|p| p.c.nrows()).collect();
    let mut base = vec![PrivacyMechanism::full_sharing(outputs[0])];
    let mut private = vec![PrivacyMechanism::full_sharing(outputs[0])];
    for &p in &outputs[1..] {
        let m = random_mechanism(rng, p)?;
        private.push(post_processed(rng, &m)?);
        base.push(m);
    }

    let mut a = Matrix::zeros(n, n);
    let mut off = 0;
    for &d in &dims {
        a.view_mut((off, off), (d, d)).copy_from(&uniform(rng, d, d));
        off += d;
    }
    // Low-rank couplings. What the sharing subsystems drive is either generic
    // (the detector must eliminate it), visible to the baseline streams only,
    // or visible to both sets of streams.
    let kind = rng.random_range(0..3);
    let mut right = Matrix::zeros(spec.coupling_rank, n);
    let mut off = 0;
    for (j, &d) in dims.iter().enumerate() {
        let block = if j == 0 {
            uniform(rng, spec.coupling_rank, d)
        } else {
            let seen = match kind {
                0 => None,
                1 => Some(&base[j]),
                _ => Some(&private[j]),
            };
            match seen {
                Some(m) => {
                    let sc = &m.s * &parts[j].c;
                    uniform(rng, spec.coupling_rank, sc.nrows()) * sc
                }
                None => uniform(rng, spec.coupling_rank, d),
            }
        };
        right.view_mut((0, off), (spec.coupling_rank, d)).copy_from(&block);
        off += d;
    }
    let mut off = 0;
    for &d in &dims {
        let mut coupling = uniform(rng, d, spec.coupling_rank) * &right;
        coupling.view_mut((0, off), (d, d)).fill(0.0);
        let mut rows = a.rows_mut(off, d);
        rows += coupling;
        off += d;
    }
    let norm = svd(&a)?.sigma_max();
    if norm > 0.0 {
        a *= spec.spectral_norm / norm;
    }
    let system = InterconnectedSystem::from_global(&a, &dims, parts)?;
    Ok(RandomInstance { system, base, private })
}

/// Draws instances until both mechanism sets give subsystem 0 a usable
/// test (nonempty elimination basis, `q ≥ 1`).
pub fn random_instance(rng: &mut ChaCha8Rng, spec: &RandomSpec) -> Result<RandomInstance> {
    for _ in 0..200 {
        let inst = draw(rng, spec)?;
        let usable = |mechs: &[PrivacyMechanism]| {
            batch_model(&inst.system, mechs, 0, spec.horizon)
                .and_then(|m| build_setup(&m))
                .map(|s| s.q > 0)
                .unwrap_or(false)
        };
        if usable(&inst.base) && usable(&inst.private) {
            return Ok(inst);
        }
    }
    Err(Error::Unsupported("could not draw a detectable random instance".into()))
}

/// Three-state detector driven by the two states of a neighbour that shares
/// only output coordinate `shared_row` (0 or 1), noise free. The attack
/// enters the detector's first state.
pub fn coupled_pair(shared_row: usize) -> Result<(InterconnectedSystem, Vec<PrivacyMechanism>)> {
    let detector = SubsystemModel {
        a: Matrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 0.0, 1.0, -1.0, 1.0, 1.0, 1.0]),
        b: Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        c: Matrix::identity(3, 3),
        b_attack: Matrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]),
        sigma_w: Matrix::identity(3, 3),
        sigma_v: Matrix::identity(3, 3),
        sigma_x0: Matrix::identity(3, 3),
    };
    let neighbour = SubsystemModel {
        a: Matrix::identity(2, 2) * 0.5,
        b: Matrix::zeros(2, 3),
        c: Matrix::identity(2, 2),
        b_attack: Matrix::zeros(2, 1),
        sigma_w: Matrix::identity(2, 2),
        sigma_v: Matrix::identity(2, 2),
        sigma_x0: Matrix::identity(2, 2),
    };
    let system = InterconnectedSystem::new(vec![detector, neighbour])?;
    let mechs = vec![
        PrivacyMechanism::full_sharing(3),
        PrivacyMechanism::select(2, &[shared_row], 0.0)?,
    ];
    Ok((system, mechs))
}
