//! Brownian driving paths and spatial noise mode shapes.
//!
//! Increments are drawn from a counter-based generator keyed by
//! `(seed, mode, step)`, so every increment is a pure function of those three
//! values: sampling order, path count, and worker scheduling cannot change
//! the numbers. Each increment is N(0, dt); cumulative paths start at 0.

use crate::error::{Error, Result};
use crate::grid::{ScalarField, SpaceTimeGrid};
use ndarray::Array2;

/// splitmix64 finalizer; good enough diffusion for Monte Carlo use.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One 64-bit word from the `(seed, stream, counter)` substream.
#[inline]
fn counter_word(seed: u64, stream: u64, counter: u64) -> u64 {
    let s = mix64(seed ^ mix64(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    mix64(s ^ counter.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Uniform in (0, 1), strictly excluding both endpoints.
#[inline]
fn uniform_open(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Standard normal via Box-Muller; one draw per `(seed, stream, counter)`.
#[inline]
pub(crate) fn counter_normal(seed: u64, stream: u64, counter: u64) -> f64 {
    let u1 = uniform_open(counter_word(seed, stream, 2 * counter));
    let u2 = uniform_open(counter_word(seed, stream, 2 * counter + 1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Derives the seed for path `k` of an ensemble from a base seed.
pub fn path_seed(base_seed: u64, k: usize) -> u64 {
    mix64(base_seed ^ mix64((k as u64).wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Sampled Brownian paths for every noise mode on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPaths {
    pub seed: u64,
    pub n_modes: usize,
    pub nt: usize,
    pub dt: f64,
    /// `increments[[i, k]]` is `B_i(t_{k+1}) - B_i(t_k)`, distributed N(0, dt).
    pub increments: Array2<f64>,
    /// `cumulative[[i, k]]` is `B_i(t_k)`; column 0 is zero.
    pub cumulative: Array2<f64>,
}

impl BrownianPaths {
    fn from_increments(seed: u64, nt: usize, dt: f64, increments: Array2<f64>) -> Self {
        let n_modes = increments.nrows();
        let mut cumulative = Array2::zeros((n_modes, nt + 1));
        for i in 0..n_modes {
            let mut b = 0.0;
            for k in 0..nt {
                b += increments[[i, k]];
                cumulative[[i, k + 1]] = b;
            }
        }
        Self { seed, n_modes, nt, dt, increments, cumulative }
    }

    /// Merges `factor` consecutive increments, producing the same underlying
    /// path sampled on a grid that is `factor` times coarser in time.
    /// Used to compare solvers across time-step halvings on one path.
    pub fn coarsen(&self, factor: usize) -> BrownianPaths {
        assert!(factor >= 1, "coarsen factor must be at least 1");
        assert_eq!(
            self.nt % factor,
            0,
            "coarsen: nt = {} not divisible by factor {}",
            self.nt,
            factor
        );
        let nt = self.nt / factor;
        let mut inc = Array2::zeros((self.n_modes, nt));
        for i in 0..self.n_modes {
            for k in 0..nt {
                let mut s = 0.0;
                for f in 0..factor {
                    s += self.increments[[i, k * factor + f]];
                }
                inc[[i, k]] = s;
            }
        }
        Self::from_increments(self.seed, nt, self.dt * factor as f64, inc)
    }
}

/// Samples `n_modes` independent Brownian paths over the grid's time axis.
/// Identical `(seed, n_modes, grid)` always reproduces identical bits.
pub fn sample_brownian(seed: u64, n_modes: usize, grid: &SpaceTimeGrid) -> BrownianPaths {
    assert!(n_modes >= 1, "need at least one noise mode");
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut increments = Array2::zeros((n_modes, grid.nt));
    for i in 0..n_modes {
        for k in 0..grid.nt {
            increments[[i, k]] = sqrt_dt * counter_normal(seed, i as u64, k as u64);
        }
    }
    BrownianPaths::from_increments(seed, grid.nt, dt, increments)
}

/// Spatial mode shapes multiplying the noise in each equation.
/// `h1[i]` scales `dB_i` in the first equation, `h2[i]` in the second.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModes {
    pub h1: Vec<ScalarField>,
    pub h2: Vec<ScalarField>,
}

impl NoiseModes {
    pub fn n_modes(&self) -> usize {
        self.h1.len()
    }

    /// All-zero modes (noise off).
    pub fn zero(n_modes: usize, grid: &SpaceTimeGrid) -> Self {
        let z: Vec<ScalarField> = (0..n_modes).map(|_| ScalarField::zeros(grid)).collect();
        Self { h1: z.clone(), h2: z }
    }
}

/// Product-sine modes `amplitude * sin((i+1) pi x / lx) * sin(pi y / ly)`,
/// identical for both equations. Boundary nodes are set to exactly zero.
pub fn default_modes(n_modes: usize, amplitude: f64, grid: &SpaceTimeGrid) -> NoiseModes {
    assert!(n_modes >= 1, "need at least one noise mode");
    let mut h = Vec::with_capacity(n_modes);
    for m in 0..n_modes {
        let kx = (m + 1) as f64 * std::f64::consts::PI / grid.lx;
        let ky = std::f64::consts::PI / grid.ly;
        let mut field = ScalarField::from_fn(grid, |x, y| amplitude * (kx * x).sin() * (ky * y).sin());
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                if grid.is_boundary(i, j) {
                    field.values[[i, j]] = 0.0;
                }
            }
        }
        h.push(field);
    }
    NoiseModes { h1: h.clone(), h2: h }
}

/// Checks that every mode is finite, matches the grid, and vanishes on the
/// boundary to within `1e-12`. Errors name the offending mode and node.
pub fn validate_modes(modes: &NoiseModes, grid: &SpaceTimeGrid) -> Result<()> {
    if modes.h1.len() != modes.h2.len() {
        return Err(Error::Validation(format!(
            "noise modes: h1 has {} modes but h2 has {}",
            modes.h1.len(),
            modes.h2.len()
        )));
    }
    if modes.h1.is_empty() {
        return Err(Error::Validation("noise modes: need at least one mode".into()));
    }
    for (eq, set) in [("h1", &modes.h1), ("h2", &modes.h2)] {
        for (m, field) in set.iter().enumerate() {
            if !field.matches(grid) {
                return Err(Error::Validation(format!(
                    "noise mode {eq}[{m}]: field is {}x{}, grid is {}x{}",
                    field.nx(),
                    field.ny(),
                    grid.nx,
                    grid.ny
                )));
            }
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    let v = field.values[[i, j]];
                    if !v.is_finite() {
                        return Err(Error::Validation(format!(
                            "noise mode {eq}[{m}] is not finite at node ({i},{j})"
                        )));
                    }
                    if grid.is_boundary(i, j) && v.abs() > 1e-12 {
                        return Err(Error::Validation(format!(
                            "noise mode {eq}[{m}] does not vanish at boundary node ({i},{j}): {v}"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}
